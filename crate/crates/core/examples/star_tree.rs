//! Node classification under remove-only attacks: 2-hop trees around a
//! target node with 32 hidden units, `Q = 10` and `q_v = 5`.
//!
//! ```text
//! cargo run --release --example star_tree -- [count] [seed]
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gnncert::synth::{star_tree_case, StarTreeConfig};
use gnncert::{verify, SearchConfig, Strategy};

fn main() -> gnncert::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = StarTreeConfig::default();
    for i in 0..count {
        let case = star_tree_case(&mut rng, &cfg);
        let mut line = format!(
            "#{i:<3} n={:<3} edges={:<3}",
            case.instance.n(),
            case.instance.num_edges()
        );
        for s in [Strategy::Basic, Strategy::Sbt, Strategy::Abt] {
            let v = verify(
                &case.model,
                &case.instance,
                &case.spec,
                &SearchConfig::default().with_strategy(s),
            )?;
            line += &format!(
                "  {}: {:<9} {:>6} nodes {:>8.4}s",
                s.name(),
                v.status.name(),
                v.stats.nodes_explored,
                v.stats.time_seconds
            );
        }
        println!("{line}");
    }
    Ok(())
}
