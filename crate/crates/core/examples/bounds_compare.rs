//! Prints the root bounds of the three strategies side by side, then shows
//! how the adaptive bounds tighten once some edges are fixed.
//!
//! ```text
//! cargo run --example bounds_compare
//! ```

use gnncert::synth::path_fixture;
use gnncert::{BoundsEngine, Fixings, Strategy};

fn main() -> gnncert::Result<()> {
    let case = path_fixture();
    let engine = BoundsEngine::new(&case.model, &case.instance, &case.spec)?;
    let tables = [Strategy::Basic, Strategy::Sbt, Strategy::Abt].map(|s| engine.root(s));

    println!("layer-1 preactivations");
    for v in 0..case.instance.n() {
        let cells: Vec<String> = tables
            .iter()
            .map(|t| {
                let b = t.mp[0].pre.get(v, 0);
                format!("{}: [{:5.2}, {:5.2}]", t.strategy.name(), b.lo, b.hi)
            })
            .collect();
        println!("  node {v}  {}", cells.join("   "));
    }
    for t in &tables {
        println!(
            "margin under {:>5}: [{:.2}, {:.2}]",
            t.strategy.name(),
            t.margin.lo,
            t.margin.hi
        );
    }

    // keep {0, 1}, then also forbid {0, 2}
    let mode = case.spec.mode;
    let keep = Fixings::new().with(mode, 0, 1, true);
    let both = keep.clone().with(mode, 0, 2, false);
    for (label, f) in [("keep {0,1}", &keep), ("keep {0,1}, no {0,2}", &both)] {
        let t = engine.abt(f)?;
        println!(
            "abt, {label}: margin [{:.2}, {:.2}]",
            t.margin.lo, t.margin.hi
        );
    }
    Ok(())
}
