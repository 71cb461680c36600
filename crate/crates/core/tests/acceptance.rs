//! Acceptance checks, one line per criterion. Run with
//! `cargo test --test acceptance`; exits nonzero if any check fails.

mod common;

use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{
    agrees_with, escape, naive_admissible, naive_admissible_set, naive_margin, naive_trace,
    oracle_min_margin, parse_lp, random_fixing_chain, Propagator, TOL,
};
use gnncert::bench::sgm;
use gnncert::mip::{check_feasible, encode, forward_assignment, to_lp_string};
use gnncert::synth::{
    path_fixture, random_case, random_cases, star_tree_case, Case, RandomConfig, StarTreeConfig,
};
use gnncert::{verify, BoundsEngine, Error, SearchConfig, Status, Strategy};

const STRATEGIES: [Strategy; 3] = [Strategy::Basic, Strategy::Sbt, Strategy::Abt];

const SUITE_SEED: u64 = 7;
const SUITE_SIZE: usize = 200;
const SUITE_BUDGET: Duration = Duration::from_secs(120);
/// Slack above the minimum margin allowed for a certified bound.
const CERTIFIED_SLACK: f64 = 1e-7;
const SOUNDNESS_CASES: usize = 100;
const EXACTNESS_CASES: u64 = 150;
const MIP_CASES: usize = 60;
const MIP_FEASIBILITY_TOL: f64 = 1e-7;
const MIP_MARGIN_TOL: f64 = 1e-9;
const MIP_OPTIMUM_TOL: f64 = 1e-6;
const SPEEDUP_RATIO: f64 = 0.8;
const STAR_CASES: usize = 20;
const STAR_SEED: u64 = 3;
const STAR_LIMIT: Duration = Duration::from_secs(1);
const SGM_TOL: f64 = 1e-9;

type Check = Result<String, String>;

fn search_config(strategy: Strategy) -> SearchConfig {
    SearchConfig {
        attack_restarts: 0,
        ..SearchConfig::default().with_strategy(strategy)
    }
}

/// Node counts of the robust instances, per strategy.
struct SuiteRun {
    nodes: [Vec<usize>; 3],
}

fn oracle_equivalence(cases: &[Case]) -> (Check, SuiteRun) {
    let start = Instant::now();
    let mut nodes: [Vec<usize>; 3] = Default::default();
    let mut failures = Vec::new();
    let (mut robust, mut nonrobust) = (0, 0);
    for (i, case) in cases.iter().enumerate() {
        let (oracle, _) = oracle_min_margin(case);
        let expected = if oracle >= 0.0 {
            Status::Robust
        } else {
            Status::NonRobust
        };
        match expected {
            Status::Robust => robust += 1,
            _ => nonrobust += 1,
        }
        for (k, s) in STRATEGIES.into_iter().enumerate() {
            let v = match verify(&case.model, &case.instance, &case.spec, &search_config(s)) {
                Ok(v) => v,
                Err(e) => {
                    failures.push(format!("#{i} {}: {e}", s.name()));
                    continue;
                }
            };
            let ok = v.status == expected
                && match v.status {
                    Status::NonRobust => v.witness.as_ref().is_some_and(|w| {
                        naive_admissible(w, &case.instance.adjacency, &case.spec)
                            && naive_margin(&case.model, &case.instance, w) < 0.0
                    }),
                    Status::Robust => v
                        .certified_bound
                        .is_some_and(|b| (0.0..=oracle + CERTIFIED_SLACK).contains(&b)),
                    Status::Timeout => false,
                };
            if !ok {
                failures.push(format!(
                    "#{i} {}: {:?} vs minimum {oracle}",
                    s.name(),
                    v.status
                ));
            }
            if expected == Status::Robust {
                nodes[k].push(v.stats.nodes_explored);
            }
        }
    }
    let elapsed = start.elapsed();
    let check = if !failures.is_empty() {
        Err(format!(
            "{} disagreements, first: {}",
            failures.len(),
            failures[0]
        ))
    } else if elapsed > SUITE_BUDGET {
        Err(format!(
            "took {:.1}s, budget {}s",
            elapsed.as_secs_f64(),
            SUITE_BUDGET.as_secs()
        ))
    } else {
        Ok(format!(
            "{} instances ({robust} robust, {nonrobust} non-robust) x 3 strategies in {:.1}s",
            cases.len(),
            elapsed.as_secs_f64()
        ))
    };
    (check, SuiteRun { nodes })
}

fn bound_soundness() -> Check {
    let cfg = RandomConfig {
        max_nodes: 5,
        ..RandomConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut checked, mut tables) = (0usize, 0usize);
    for i in 0..SOUNDNESS_CASES {
        let case = random_case(&mut rng, &cfg);
        let engine = BoundsEngine::new(&case.model, &case.instance, &case.spec)
            .map_err(|e| e.to_string())?;
        let basic = engine.root(Strategy::Basic);
        let sbt = engine.root(Strategy::Sbt);
        if !sbt.is_within(&basic, TOL) {
            return Err(format!("#{i}: sbt not inside basic"));
        }
        let all = naive_admissible_set(&case.instance.adjacency, &case.spec);
        let chain = random_fixing_chain(&case, &mut rng, &all);
        let mut outer = sbt.clone();
        let mut levels = vec![(None, basic), (None, sbt)];
        for f in chain {
            let abt = engine.abt(&f).map_err(|e| e.to_string())?;
            if !abt.is_within(&outer, TOL) {
                return Err(format!("#{i}: abt under {f:?} not inside its parent"));
            }
            outer = abt.clone();
            levels.push((Some(f), abt));
        }
        for a in &all {
            let tr = naive_trace(&case.model, &case.instance, a);
            let m = tr.logits[case.instance.label_true] - tr.logits[case.instance.label_attack];
            for (f, table) in &levels {
                if f.as_ref().is_some_and(|f| !agrees_with(a, f)) {
                    continue;
                }
                tables += 1;
                if let Some(what) = escape(table, &tr, m) {
                    return Err(format!("#{i}: {what} escapes {:?}", table.strategy));
                }
            }
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} forward passes inside {tables} tables, nested chains hold"
    ))
}

fn sbt_exactness() -> Check {
    let cfg = RandomConfig {
        max_nodes: 6,
        min_global_budget: 1,
        min_local_budget: 1,
        ..RandomConfig::default()
    };
    let mut worst: f64 = 0.0;
    for seed in 0..EXACTNESS_CASES {
        let mut case = random_case(&mut ChaCha8Rng::seed_from_u64(seed), &cfg);
        let q = case.spec.global_budget;
        for b in &mut case.spec.local_budgets {
            *b = (*b).min(q);
        }
        let engine = BoundsEngine::new(&case.model, &case.instance, &case.spec)
            .map_err(|e| e.to_string())?;
        let pre = &engine.root(Strategy::Sbt).mp[0].pre;
        let traces: Vec<_> = naive_admissible_set(&case.instance.adjacency, &case.spec)
            .iter()
            .map(|a| naive_trace(&case.model, &case.instance, a))
            .collect();
        for v in 0..pre.rows() {
            for f in 0..pre.cols() {
                let values = traces.iter().map(|t| t.pre[0][v][f]);
                let lo = values.clone().fold(f64::INFINITY, f64::min);
                let hi = values.fold(f64::NEG_INFINITY, f64::max);
                let b = pre.get(v, f);
                worst = worst.max((b.lo - lo).abs()).max((b.hi - hi).abs());
            }
        }
    }
    if worst <= TOL {
        Ok(format!(
            "{EXACTNESS_CASES} instances, max deviation {worst:.1e}"
        ))
    } else {
        Err(format!("max deviation {worst:e} above {TOL:e}"))
    }
}

fn mip_lift() -> Check {
    let cfg = RandomConfig {
        max_nodes: 5,
        ..RandomConfig::default()
    };
    let small = RandomConfig {
        max_nodes: 4,
        max_width: 2,
        ..RandomConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut points = 0;
    for i in 0..MIP_CASES {
        let case = random_case(&mut rng, &cfg);
        let table = BoundsEngine::new(&case.model, &case.instance, &case.spec)
            .map_err(|e| e.to_string())?
            .root(Strategy::Sbt);
        let mip =
            encode(&case.model, &case.instance, &case.spec, &table).map_err(|e| e.to_string())?;
        for a in naive_admissible_set(&case.instance.adjacency, &case.spec) {
            let point = forward_assignment(&mip, &case.model, &case.instance, &a)
                .map_err(|e| e.to_string())?;
            if !check_feasible(&mip, &point, MIP_FEASIBILITY_TOL).map_err(|e| e.to_string())? {
                return Err(format!("#{i}: lifted point infeasible"));
            }
            let objective = mip.objective_value(&point).map_err(|e| e.to_string())?;
            let margin = naive_margin(&case.model, &case.instance, &a);
            if (objective - margin).abs() > MIP_MARGIN_TOL {
                return Err(format!("#{i}: objective {objective} vs margin {margin}"));
            }
            points += 1;
        }
    }
    let mut optima = 0;
    for i in 0..MIP_CASES {
        let case = random_case(&mut rng, &small);
        let table = BoundsEngine::new(&case.model, &case.instance, &case.spec)
            .map_err(|e| e.to_string())?
            .root(Strategy::Sbt);
        let mip =
            encode(&case.model, &case.instance, &case.spec, &table).map_err(|e| e.to_string())?;
        let lp = parse_lp(&to_lp_string(&mip));
        let best = Propagator::new(&lp)
            .minimum()
            .ok_or(format!("#{i}: MIP infeasible"))?;
        let (oracle, _) = oracle_min_margin(&case);
        if (best - oracle).abs() > MIP_OPTIMUM_TOL {
            return Err(format!("#{i}: optimum {best} vs minimum {oracle}"));
        }
        optima += 1;
    }
    Ok(format!(
        "{points} lifted points feasible, {optima} optima match enumeration"
    ))
}

fn median(values: &[usize]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

fn speedup(run: &SuiteRun) -> Check {
    let [basic, sbt, abt] = [0, 1, 2].map(|k| median(&run.nodes[k]));
    let line = format!(
        "median nodes over {} robust instances: basic {basic}, sbt {sbt}, abt {abt}",
        run.nodes[0].len()
    );
    if sbt <= SPEEDUP_RATIO * basic && abt <= sbt {
        Ok(line)
    } else {
        Err(line)
    }
}

fn star_trees() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(STAR_SEED);
    let cfg = StarTreeConfig::default();
    let mut slowest = (Duration::ZERO, 0, "");
    for i in 0..STAR_CASES {
        let case = star_tree_case(&mut rng, &cfg);
        for s in STRATEGIES {
            let start = Instant::now();
            let v = verify(
                &case.model,
                &case.instance,
                &case.spec,
                &SearchConfig::default().with_strategy(s),
            )
            .map_err(|e| e.to_string())?;
            let took = start.elapsed();
            if v.status == Status::Timeout {
                return Err(format!("#{i} {}: timeout", s.name()));
            }
            if took > slowest.0 {
                slowest = (took, i, s.name());
            }
        }
    }
    let line = format!(
        "{STAR_CASES} instances x 3 strategies, slowest #{} {} at {:.3}s",
        slowest.1,
        slowest.2,
        slowest.0.as_secs_f64()
    );
    if slowest.0 < STAR_LIMIT {
        Ok(line)
    } else {
        Err(line)
    }
}

fn sgm_unit() -> Check {
    let pair = sgm(&[10.0, 40.0], 10.0).map_err(|e| e.to_string())?;
    let expected = 1000f64.sqrt() - 10.0;
    if (pair - expected).abs() > SGM_TOL {
        return Err(format!("sgm([10, 40], 10) = {pair}, expected {expected}"));
    }
    for t in [0.0, 0.37, 12.5, 3600.0] {
        let one = sgm(&[t], 10.0).map_err(|e| e.to_string())?;
        if (one - t).abs() > SGM_TOL {
            return Err(format!("sgm([{t}]) = {one}"));
        }
    }
    if !matches!(sgm(&[], 10.0), Err(Error::EmptyInput)) {
        return Err("empty input accepted".into());
    }
    Ok(format!(
        "sgm([10, 40], 10) = {pair:.12}, singletons exact, empty input rejected"
    ))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/path");
    let mut reports = Vec::new();
    for i in 0..2 {
        let path = dir.path().join(format!("report{i}.json"));
        let status = Command::new(env!("CARGO_BIN_EXE_gnncert"))
            .arg("verify")
            .arg("--model")
            .arg(data.join("model.json"))
            .arg("--graph")
            .arg(data.join("graph.json"))
            .arg("--spec")
            .arg(data.join("spec.json"))
            .args(["--seed", "5", "--omit-timing", "--report"])
            .arg(&path)
            .status()
            .map_err(|e| e.to_string())?;
        if status.code() != Some(1) {
            return Err(format!("verify exited with {status}"));
        }
        reports.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    if reports[0] != reports[1] {
        return Err("verify reports differ".into());
    }
    let case = path_fixture();
    let golden_path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/path_sbt.lp");
    let golden = std::fs::read_to_string(&golden_path).map_err(|e| e.to_string())?;
    for _ in 0..2 {
        let table = BoundsEngine::new(&case.model, &case.instance, &case.spec)
            .map_err(|e| e.to_string())?
            .root(Strategy::Sbt);
        let mip =
            encode(&case.model, &case.instance, &case.spec, &table).map_err(|e| e.to_string())?;
        if to_lp_string(&mip) != golden {
            return Err("LP text differs from the golden file".into());
        }
    }
    Ok(format!(
        "2 verify reports identical ({} bytes), LP matches golden file",
        reports[0].len()
    ))
}

fn main() -> ExitCode {
    let cases = random_cases(SUITE_SEED, SUITE_SIZE, &RandomConfig::oracle_suite());
    let (equivalence, run) = oracle_equivalence(&cases);
    let results: Vec<(&str, Check)> = vec![
        ("oracle equivalence", equivalence),
        ("bound soundness and dominance", bound_soundness()),
        ("layer-1 sbt exactness", sbt_exactness()),
        ("MIP lift correctness", mip_lift()),
        ("strategy speedup", speedup(&run)),
        ("remove-only star trees", star_trees()),
        ("sgm", sgm_unit()),
        ("determinism", determinism()),
    ];
    let mut failed = 0;
    for (name, result) in &results {
        match result {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
