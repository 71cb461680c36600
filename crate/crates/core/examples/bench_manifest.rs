//! Writes a small manifest of random instances to a temporary directory and
//! runs the batch driver over it at three budget fractions.
//!
//! ```text
//! GNNCERT_THREADS=4 cargo run --release --example bench_manifest
//! ```

use gnncert::bench::{bench, threads_from_env, Manifest, ManifestEntry};
use gnncert::io::{write_json, GraphFile, ModelFile, SpecFile};
use gnncert::synth::{random_cases, RandomConfig};
use gnncert::SearchConfig;

fn main() -> gnncert::Result<()> {
    let dir = std::env::temp_dir().join(format!("gnncert-bench-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let cfg = RandomConfig {
        graph_task_probability: 1.0,
        ..RandomConfig::oracle_suite()
    };
    let mut instances = Vec::new();
    for (i, case) in random_cases(5, 12, &cfg).iter().enumerate() {
        let id = format!("g{i}");
        let files = [
            format!("{id}_model.json"),
            format!("{id}_graph.json"),
            format!("{id}_spec.json"),
        ];
        write_json(dir.join(&files[0]), &ModelFile::from_model(&case.model))?;
        write_json(
            dir.join(&files[1]),
            &GraphFile::from_instance(&case.instance),
        )?;
        write_json(dir.join(&files[2]), &SpecFile::from_spec(&case.spec))?;
        let [model, graph, spec] = files.map(Into::into);
        instances.push(ManifestEntry {
            id,
            model,
            graph,
            spec,
        });
    }
    let manifest = Manifest {
        instances,
        deltas: vec![10.0, 30.0, 60.0],
    };
    let manifest_path = dir.join("manifest.json");
    write_json(&manifest_path, &manifest)?;

    let threads = threads_from_env();
    let (summary, records) = bench(
        &manifest_path,
        &SearchConfig::default(),
        threads,
        dir.join("runs.jsonl"),
    )?;
    for r in &records {
        println!(
            "{:>4} δ={:>4}% Q={:<2} {:<9} {:>4} nodes",
            r.instance_id,
            r.budget_fraction.unwrap_or(0.0),
            r.global_budget.unwrap_or(0),
            r.status.as_deref().unwrap_or("failed"),
            r.nodes_explored
        );
    }
    println!(
        "{} runs on {threads} threads: {} solved, avg {:.4}s, sgm {:.4}s",
        summary.count, summary.solved_count, summary.avg_time, summary.sgm_time
    );
    println!("records in {}", dir.join("runs.jsonl").display());
    Ok(())
}
