//! Cuts the neighborhood a two-layer model can see out of a larger graph
//! and verifies the target node on the smaller graph. Only valid for
//! remove-only perturbations, where that neighborhood can only shrink.
//!
//! ```text
//! cargo run --release --example khop_extract -- [seed]
//! ```

use gnncert::perturbation::extract_khop;
use gnncert::synth::{random_case, RandomConfig};
use gnncert::{verify, SearchConfig, Target};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gnncert::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(4);
    let cfg = RandomConfig {
        min_nodes: 12,
        max_nodes: 14,
        min_mp_layers: 2,
        edge_probability: 0.12,
        graph_task_probability: 0.0,
        remove_only_probability: 1.0,
        min_global_budget: 1,
        min_local_budget: 1,
        ..RandomConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..5 {
        let case = random_case(&mut rng, &cfg);
        let Target::Node(t) = case.instance.target else {
            unreachable!()
        };
        let hops = case.model.num_mp_layers();
        let cut = extract_khop(&case.instance, case.spec.mode, t, hops)?;
        let sub_spec = cut.restrict_spec(&case.spec);
        let config = SearchConfig::default();
        let full = verify(&case.model, &case.instance, &case.spec, &config)?;
        let part = verify(&case.model, &cut.graph, &sub_spec, &config)?;
        println!(
            "target {t}: {} -> {} nodes, {} -> {} edges; full {} ({} nodes), cut {} ({} nodes)",
            case.instance.n(),
            cut.graph.n(),
            case.instance.num_edges(),
            cut.graph.num_edges(),
            full.status.name(),
            full.stats.nodes_explored,
            part.status.name(),
            part.stats.nodes_explored
        );
    }
    Ok(())
}
