//! Compares the greedy attack with exhaustive enumeration on random
//! instances: how often does the attack find a violation that exists?
//!
//! ```text
//! cargo run --release --example attack_and_oracle -- [count] [seed]
//! ```

use gnncert::bnb::{attack_search, brute_force_verdict};
use gnncert::synth::{random_cases, RandomConfig};

fn main() -> gnncert::Result<()> {
    let mut args = std::env::args().skip(1);
    let count = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);

    let mut vulnerable = 0;
    let mut found = [0usize; 3];
    let restarts = [1, 3, 10];
    for case in random_cases(seed, count, &RandomConfig::oracle_suite()) {
        let (min_margin, _) =
            brute_force_verdict(&case.model, &case.instance, &case.spec, 1 << 20)?;
        if min_margin >= 0.0 {
            continue;
        }
        vulnerable += 1;
        for (k, &r) in restarts.iter().enumerate() {
            if attack_search(&case.model, &case.instance, &case.spec, r, seed)?.is_some() {
                found[k] += 1;
            }
        }
    }
    println!("{count} instances, {vulnerable} with a successful perturbation");
    for (r, f) in restarts.iter().zip(found) {
        println!(
            "  {r:>2} restarts: attack finds {f} ({:.0}%)",
            100.0 * f as f64 / vulnerable.max(1) as f64
        );
    }
    Ok(())
}
