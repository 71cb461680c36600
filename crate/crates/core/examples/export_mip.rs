//! Writes the big-M encoding of the path fixture in LP format and lists
//! how many rows of each kind it has.
//!
//! ```text
//! cargo run --example export_mip -- [out.lp]
//! ```

use gnncert::mip::{encode_with, write_lp, EncodeOptions};
use gnncert::synth::path_fixture;
use gnncert::{BoundsEngine, Strategy};

fn main() -> gnncert::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "path_fixture.lp".into());
    let case = path_fixture();
    let table = BoundsEngine::new(&case.model, &case.instance, &case.spec)?.root(Strategy::Sbt);

    for merge_symmetric in [false, true] {
        let options = EncodeOptions {
            merge_symmetric,
            ..EncodeOptions::default()
        };
        let mip = encode_with(&case.model, &case.instance, &case.spec, &table, options)?;
        let binaries = mip.variables.iter().filter(|v| v.binary).count();
        println!(
            "merge_symmetric={merge_symmetric}: {} variables ({binaries} binary), {} rows",
            mip.variables.len(),
            mip.constraints.len()
        );
        for tag in [
            "sym",
            "aux",
            "layer",
            "relu",
            "budget_local",
            "budget_global",
        ] {
            println!("  {tag:>13}: {}", mip.count_rows(tag));
        }
        if !merge_symmetric {
            write_lp(&mip, &out)?;
            println!("  written to {out}");
        }
    }
    Ok(())
}
