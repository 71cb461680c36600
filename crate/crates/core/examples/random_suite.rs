//! Runs the three bound strategies on a seeded batch of small random
//! instances, checks every verdict against exhaustive enumeration and
//! compares search effort on the robust ones.
//!
//! ```text
//! cargo run --release --example random_suite -- [count] [seed]
//! ```

use std::time::Instant;

use gnncert::bnb::brute_force_verdict;
use gnncert::synth::{random_cases, RandomConfig};
use gnncert::{verify, SearchConfig, Status, Strategy};

fn median(mut xs: Vec<usize>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_unstable();
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m] as f64
    } else {
        (xs[m - 1] + xs[m]) as f64 / 2.0
    }
}

fn main() -> gnncert::Result<()> {
    let mut args = std::env::args().skip(1);
    let count = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let cases = random_cases(seed, count, &RandomConfig::oracle_suite());

    let strategies = [Strategy::Basic, Strategy::Sbt, Strategy::Abt];
    let mut robust_nodes = vec![Vec::new(); strategies.len()];
    let mut mismatches = 0;
    let mut robust = 0;
    let start = Instant::now();
    for case in &cases {
        let (min_margin, _) =
            brute_force_verdict(&case.model, &case.instance, &case.spec, 1 << 20)?;
        let expected = if min_margin >= 0.0 {
            Status::Robust
        } else {
            Status::NonRobust
        };
        if expected == Status::Robust {
            robust += 1;
        }
        for (i, &s) in strategies.iter().enumerate() {
            // no attack heuristic, so the tree alone has to decide
            let config = SearchConfig {
                attack_restarts: 0,
                ..SearchConfig::default().with_strategy(s)
            };
            let v = verify(&case.model, &case.instance, &case.spec, &config)?;
            if v.status != expected {
                mismatches += 1;
            }
            if expected == Status::Robust {
                robust_nodes[i].push(v.stats.nodes_explored);
            }
        }
    }
    println!(
        "{count} instances, {robust} robust, {mismatches} mismatches, {:.2?}",
        start.elapsed()
    );
    for (s, nodes) in strategies.iter().zip(robust_nodes) {
        let total: usize = nodes.iter().sum();
        println!(
            "{:>5}: median nodes {:>5.1}, total {total}",
            s.name(),
            median(nodes)
        );
    }
    Ok(())
}
