//! Batch verification over a manifest of instances and budget fractions.
//!
//! Manifest format, with paths relative to the manifest file:
//!
//! ```json
//! {"instances": [{"id": "g0", "model": "m.json", "graph": "g0.json", "spec": "p.json"}],
//!  "deltas": [1, 5, 10]}
//! ```
//!
//! For every delta the spec's global budget is replaced by `ceil(δ/100 · |E|)`.
//! Without deltas the spec is used as is. One JSON line per run is appended to
//! the output as soon as the run finishes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::bnb::{verify, SearchConfig, Status};
use crate::bounds::Strategy;
use crate::error::{Error, Result};
use crate::io::{load_graph, load_model, read_json, SpecFile};

/// Thread count for batch runs, from `GNNCERT_THREADS` (default 1).
pub const THREADS_VAR: &str = "GNNCERT_THREADS";

pub fn threads_from_env() -> usize {
    std::env::var(THREADS_VAR)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or(1)
}

/// Shifted geometric mean `(∏(t_i + s))^{1/n} - s`, evaluated in the log
/// domain.
pub fn sgm(times: &[f64], shift: f64) -> Result<f64> {
    if times.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(shift > 0.0) || !shift.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "shift must be positive, got {shift}"
        )));
    }
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0) || !t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "time {t} is not a nonnegative number"
        )));
    }
    // exact when every time is equal, which covers a single run
    if times.iter().all(|t| *t == times[0]) {
        return Ok(times[0]);
    }
    let mean_log = times.iter().map(|t| (t + shift).ln()).sum::<f64>() / times.len() as f64;
    Ok((mean_log.exp() - shift).max(0.0))
}

/// Global budget for a fraction `delta` (in percent) of the edges.
pub fn budget_from_fraction(delta: f64, num_edges: usize) -> usize {
    (delta / 100.0 * num_edges as f64).ceil() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub model: PathBuf,
    pub graph: PathBuf,
    pub spec: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub instances: Vec<ManifestEntry>,
    #[serde(default)]
    pub deltas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub instance_id: String,
    pub budget_fraction: Option<f64>,
    pub global_budget: Option<usize>,
    /// `None` when the run failed; see `error`.
    pub status: Option<String>,
    pub time_seconds: f64,
    pub nodes_explored: usize,
    pub strategy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSummary {
    pub count: usize,
    pub avg_time: f64,
    pub sgm_time: f64,
}

impl TimeSummary {
    pub fn of(times: &[f64]) -> Self {
        let count = times.len();
        if count == 0 {
            return Self {
                count,
                avg_time: 0.0,
                sgm_time: 0.0,
            };
        }
        Self {
            count,
            avg_time: times.iter().sum::<f64>() / count as f64,
            sgm_time: sgm(times, 10.0).unwrap_or(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    /// Runs that produced a status.
    pub count: usize,
    pub avg_time: f64,
    pub sgm_time: f64,
    /// Runs that ended robust or non-robust.
    pub solved_count: usize,
    pub failures: usize,
    pub robust: TimeSummary,
}

impl BenchSummary {
    pub fn from_records(records: &[BenchRecord]) -> Self {
        let ok: Vec<&BenchRecord> = records.iter().filter(|r| r.status.is_some()).collect();
        let times: Vec<f64> = ok.iter().map(|r| r.time_seconds).collect();
        let status_is = |r: &&&BenchRecord, s: Status| r.status.as_deref() == Some(s.name());
        let robust: Vec<f64> = ok
            .iter()
            .filter(|r| status_is(r, Status::Robust))
            .map(|r| r.time_seconds)
            .collect();
        let all = TimeSummary::of(&times);
        Self {
            count: all.count,
            avg_time: all.avg_time,
            sgm_time: all.sgm_time,
            solved_count: ok
                .iter()
                .filter(|r| status_is(r, Status::Robust) || status_is(r, Status::NonRobust))
                .count(),
            failures: records.len() - ok.len(),
            robust: TimeSummary::of(&robust),
        }
    }
}

struct Job<'a> {
    entry: &'a ManifestEntry,
    delta: Option<f64>,
}

fn run_job(dir: &Path, job: &Job<'_>, config: &SearchConfig) -> Result<BenchRecord> {
    let model = load_model(dir.join(&job.entry.model))?;
    let instance = load_graph(dir.join(&job.entry.graph))?;
    let mut spec = read_json::<SpecFile>(dir.join(&job.entry.spec))?.build(&instance)?;
    if let Some(d) = job.delta {
        spec.global_budget = budget_from_fraction(d, instance.num_edges());
    }
    let verdict = verify(&model, &instance, &spec, config)?;
    Ok(BenchRecord {
        instance_id: job.entry.id.clone(),
        budget_fraction: job.delta,
        global_budget: Some(spec.global_budget),
        status: Some(verdict.status.name().to_string()),
        time_seconds: verdict.stats.time_seconds,
        nodes_explored: verdict.stats.nodes_explored,
        strategy: verdict.stats.strategy.name().to_string(),
        error: None,
    })
}

fn failure(job: &Job<'_>, strategy: Strategy, e: &Error) -> BenchRecord {
    BenchRecord {
        instance_id: job.entry.id.clone(),
        budget_fraction: job.delta,
        global_budget: None,
        status: None,
        time_seconds: 0.0,
        nodes_explored: 0,
        strategy: strategy.name().to_string(),
        error: Some(e.to_string()),
    }
}

/// Runs every instance at every delta on `threads` workers. Records are
/// streamed to `out` in completion order and returned in manifest order.
/// Per-run errors become failure records.
pub fn bench(
    manifest_path: impl AsRef<Path>,
    config: &SearchConfig,
    threads: usize,
    out: impl AsRef<Path>,
) -> Result<(BenchSummary, Vec<BenchRecord>)> {
    let manifest_path = manifest_path.as_ref();
    let manifest: Manifest = read_json(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let deltas: Vec<Option<f64>> = if manifest.deltas.is_empty() {
        vec![None]
    } else {
        manifest.deltas.iter().map(|&d| Some(d)).collect()
    };
    let jobs: Vec<Job<'_>> = manifest
        .instances
        .iter()
        .flat_map(|entry| deltas.iter().map(move |&delta| Job { entry, delta }))
        .collect();

    let writer = Mutex::new(BufWriter::new(File::create(out)?));
    let results: Mutex<Vec<Option<BenchRecord>>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    let io_error: Mutex<Option<std::io::Error>> = Mutex::new(None);

    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(job) = jobs.get(i) else { break };
        let record =
            run_job(dir, job, config).unwrap_or_else(|e| failure(job, config.strategy, &e));
        let line = serde_json::to_string(&record).expect("records serialize");
        {
            let mut w = writer.lock().expect("writer lock");
            if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                io_error.lock().expect("error lock").get_or_insert(e);
            }
        }
        results.lock().expect("results lock")[i] = Some(record);
    };
    std::thread::scope(|s| {
        for _ in 1..threads.max(1) {
            s.spawn(worker);
        }
        worker();
    });
    if let Some(e) = io_error.into_inner().expect("error lock") {
        return Err(e.into());
    }
    let records: Vec<BenchRecord> = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect();
    Ok((BenchSummary::from_records(&records), records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgm_basics() {
        assert_eq!(sgm(&[0.0, 0.0], 10.0).unwrap(), 0.0);
        assert!((sgm(&[3.5], 1.0).unwrap() - 3.5).abs() < 1e-12);
        assert!(matches!(sgm(&[], 10.0), Err(Error::EmptyInput)));
        assert!(sgm(&[-1.0], 10.0).is_err());
        assert!(sgm(&[1.0], 0.0).is_err());
    }

    #[test]
    fn budget_rounds_up() {
        assert_eq!(budget_from_fraction(1.0, 19), 1);
        assert_eq!(budget_from_fraction(10.0, 19), 2);
        assert_eq!(budget_from_fraction(10.0, 20), 2);
        assert_eq!(budget_from_fraction(5.0, 0), 0);
    }

    #[test]
    fn summary_counts() {
        let rec = |status: Option<&str>, t: f64| BenchRecord {
            instance_id: "x".into(),
            budget_fraction: None,
            global_budget: Some(1),
            status: status.map(String::from),
            time_seconds: t,
            nodes_explored: 1,
            strategy: "abt".into(),
            error: None,
        };
        let s = BenchSummary::from_records(&[
            rec(Some("robust"), 10.0),
            rec(Some("nonrobust"), 40.0),
            rec(Some("timeout"), 1.0),
            rec(None, 0.0),
        ]);
        assert_eq!((s.count, s.solved_count, s.failures), (3, 2, 1));
        assert_eq!(s.robust.count, 1);
        assert!((s.avg_time - 17.0).abs() < 1e-12);
    }
}
