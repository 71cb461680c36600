use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use gnncert::bench::{bench, threads_from_env};
use gnncert::bnb::{
    attack_search, brute_force_verdict, verify_portfolio, Branching, NodeSelection,
};
use gnncert::io::{
    load_graph, load_model, load_spec, write_json, BoundsReport, ReportConfig, VerifyReport,
};
use gnncert::mip::{encode_with, write_lp, EncodeOptions};
use gnncert::{
    verify, BoundsEngine, GraphInstance, MpnnModel, PerturbationSpec, SearchConfig, Status,
    Strategy,
};

#[derive(Parser)]
#[command(
    name = "gnncert",
    version,
    about = "Complete robustness verification for message-passing GNNs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide robustness by branch-and-bound.
    Verify {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Run sbt and abt side by side and keep the first answer.
        #[arg(long)]
        portfolio: bool,
        /// Write 0 as the time so reports are byte-comparable.
        #[arg(long)]
        omit_timing: bool,
    },
    /// Print root bounds for every layer, node and feature.
    Bounds {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value = "sbt")]
        strategy: StrategyArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the big-M MIP in LP format.
    ExportMip {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value = "sbt")]
        strategy: MipStrategyArg,
        #[arg(long)]
        out: PathBuf,
        /// One variable per undirected pair instead of symmetry rows.
        #[arg(long)]
        merge_symmetric: bool,
        /// Keep the big-M rows of stable ReLU units.
        #[arg(long)]
        keep_stable: bool,
    },
    /// Greedy search for a successful perturbation.
    Attack {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value_t = 5)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exhaustive minimum margin for small instances.
    Oracle {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value_t = 1_000_000)]
        cap: usize,
    },
    /// Verify every instance of a manifest; threads from GNNCERT_THREADS.
    Bench {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        search: SearchArgs,
        /// JSONL records, one line per run.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Inputs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    spec: PathBuf,
}

impl Inputs {
    fn load(&self) -> gnncert::Result<(MpnnModel, GraphInstance, PerturbationSpec)> {
        let model = load_model(&self.model)?;
        let graph = load_graph(&self.graph)?;
        let spec = load_spec(&self.spec, &graph)?;
        Ok((model, graph, spec))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Basic,
    Sbt,
    Abt,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Basic => Strategy::Basic,
            StrategyArg::Sbt => Strategy::Sbt,
            StrategyArg::Abt => Strategy::Abt,
        }
    }
}

// the MIP only takes root-valid bounds
#[derive(Clone, Copy, ValueEnum)]
enum MipStrategyArg {
    Basic,
    Sbt,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, default_value = "abt")]
    strategy: StrategyArg,
    /// Seconds.
    #[arg(long, default_value_t = 7200.0)]
    time_limit: f64,
    #[arg(long, default_value_t = 10_000_000)]
    node_limit: usize,
    #[arg(long, default_value = "max-impact")]
    branching: BranchingArg,
    #[arg(long, default_value = "best-bound")]
    node_selection: SelectionArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    attack_restarts: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchingArg {
    MaxImpact,
    InputOrder,
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectionArg {
    BestBound,
    DepthFirst,
}

impl SearchArgs {
    fn config(&self) -> SearchConfig {
        SearchConfig {
            strategy: self.strategy.into(),
            time_limit: Duration::from_secs_f64(self.time_limit.max(0.0)),
            node_limit: self.node_limit,
            branching: match self.branching {
                BranchingArg::MaxImpact => Branching::MaxImpact,
                BranchingArg::InputOrder => Branching::InputOrder,
            },
            node_selection: match self.node_selection {
                SelectionArg::BestBound => NodeSelection::BestBound,
                SelectionArg::DepthFirst => NodeSelection::DepthFirst,
            },
            seed: self.seed,
            attack_restarts: self.attack_restarts,
        }
    }
}

fn print<T: Serialize>(value: &T) -> gnncert::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // a closed pipe (`| head`) is not an error
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn exit_for(status: Status) -> u8 {
    match status {
        Status::Robust => 0,
        Status::NonRobust => 1,
        Status::Timeout => 2,
    }
}

fn run(cli: Cli) -> gnncert::Result<u8> {
    match cli.command {
        Command::Verify {
            inputs,
            search,
            report,
            portfolio,
            omit_timing,
        } => {
            let (model, graph, spec) = inputs.load()?;
            let config = search.config();
            let verdict = if portfolio {
                verify_portfolio(&model, &graph, &spec, &config)?
            } else {
                verify(&model, &graph, &spec, &config)?
            };
            let mut out = VerifyReport::new(&verdict, ReportConfig::new(&config, portfolio));
            if omit_timing {
                out.time_seconds = 0.0;
            }
            match report {
                Some(path) => write_json(path, &out)?,
                None => print(&out)?,
            }
            Ok(exit_for(verdict.status))
        }
        Command::Bounds {
            inputs,
            strategy,
            out,
        } => {
            let (model, graph, spec) = inputs.load()?;
            let table = BoundsEngine::new(&model, &graph, &spec)?.root(strategy.into());
            let report = BoundsReport::new(&table);
            match out {
                Some(path) => write_json(path, &report)?,
                None => print(&report)?,
            }
            Ok(0)
        }
        Command::ExportMip {
            inputs,
            strategy,
            out,
            merge_symmetric,
            keep_stable,
        } => {
            let (model, graph, spec) = inputs.load()?;
            let strategy = match strategy {
                MipStrategyArg::Basic => Strategy::Basic,
                MipStrategyArg::Sbt => Strategy::Sbt,
            };
            let table = BoundsEngine::new(&model, &graph, &spec)?.root(strategy);
            let options = EncodeOptions {
                merge_symmetric,
                eliminate_stable: !keep_stable,
            };
            let mip = encode_with(&model, &graph, &spec, &table, options)?;
            write_lp(&mip, &out)?;
            eprintln!(
                "wrote {} variables and {} constraints to {}",
                mip.variables.len(),
                mip.constraints.len(),
                out.display()
            );
            Ok(0)
        }
        Command::Attack {
            inputs,
            restarts,
            seed,
        } => {
            let (model, graph, spec) = inputs.load()?;
            let found = attack_search(&model, &graph, &spec, restarts, seed)?;
            let margin = match &found {
                Some(adj) => Some(model.margin(
                    &graph.features,
                    adj,
                    graph.label_true,
                    graph.label_attack,
                    graph.target,
                )?),
                None => None,
            };
            print(&json!({
                "found": found.is_some(),
                "margin": margin,
                "witness_edges": found.map(|a| a.edges()).unwrap_or_default(),
            }))?;
            Ok(if margin.is_some() { 1 } else { 0 })
        }
        Command::Oracle { inputs, cap } => {
            let (model, graph, spec) = inputs.load()?;
            let (m, adj) = brute_force_verdict(&model, &graph, &spec, cap)?;
            let status = if m >= 0.0 {
                Status::Robust
            } else {
                Status::NonRobust
            };
            print(&json!({
                "status": status,
                "min_margin": m,
                "minimizer_edges": adj.edges(),
            }))?;
            Ok(exit_for(status))
        }
        Command::Bench {
            manifest,
            search,
            out,
            summary,
        } => {
            let (s, _) = bench(&manifest, &search.config(), threads_from_env(), &out)?;
            match summary {
                Some(path) => write_json(path, &s)?,
                None => print(&s)?,
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
