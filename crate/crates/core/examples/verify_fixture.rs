//! Loads the three-node path fixture from JSON and decides robustness with
//! each bound strategy.
//!
//! ```text
//! cargo run --example verify_fixture -- [data dir]
//! ```

use std::path::PathBuf;

use gnncert::io::{load_graph, load_model, load_spec};
use gnncert::{verify, SearchConfig, Status, Strategy};

fn main() -> gnncert::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/path"));
    let model = load_model(dir.join("model.json"))?;
    let graph = load_graph(dir.join("graph.json"))?;

    for spec_file in ["spec.json", "spec_q0.json"] {
        let spec = load_spec(dir.join(spec_file), &graph)?;
        println!(
            "{spec_file}: Q = {}, q = {:?}",
            spec.global_budget, spec.local_budgets
        );
        for s in [Strategy::Basic, Strategy::Sbt, Strategy::Abt] {
            let v = verify(
                &model,
                &graph,
                &spec,
                &SearchConfig::default().with_strategy(s),
            )?;
            let detail = match v.status {
                Status::NonRobust => format!(
                    "witness edges {:?}",
                    v.witness.map(|w| w.edges()).unwrap_or_default()
                ),
                _ => format!("certified margin >= {:?}", v.certified_bound),
            };
            println!(
                "  {:>5}: {:<9} after {} nodes, {detail}",
                s.name(),
                v.status.name(),
                v.stats.nodes_explored
            );
        }
    }
    Ok(())
}
