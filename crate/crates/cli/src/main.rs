use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use costa_cli::{cmd_bias_audit, cmd_eval, cmd_sketch_bench, cmd_train, CliError, Overrides, RunConfig};
use costa_core::bias::BiasVariant;
use costa_core::sketch::SketchMethod;
use costa_core::train::RunMode;

#[derive(Parser)]
#[command(name = "costa", version, about = "Covariance-preserving feature augmentation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Graph file; a synthetic graph is generated when neither this nor the
    /// config names one.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
}

#[derive(Args, Default)]
struct TrainFlags {
    #[arg(long, value_parser = parse_mode)]
    mode: Option<RunMode>,
    #[arg(long, value_parser = parse_method)]
    sketch_method: Option<SketchMethod>,
    /// Sketch rows as a fraction of the node count.
    #[arg(long)]
    ratio: Option<f64>,
    /// Nonzero fraction 1/s of the sparse projection.
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train an encoder and probe its embeddings.
    Train(TrainFlags),
    /// Measure augmentation bias under frozen weights.
    BiasAudit {
        /// Augmented samples per node.
        #[arg(long)]
        samples: Option<usize>,
        /// Comma-separated variants, e.g. gnn_ea,fa_noise.
        #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
        variants: Option<Vec<BiasVariant>>,
    },
    /// Covariance-error sweep over sketch methods.
    SketchBench,
    /// Probe the embeddings of a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<RunMode, String> {
    s.parse().map_err(|e: costa_core::Error| e.to_string())
}

fn parse_method(s: &str) -> Result<SketchMethod, String> {
    s.parse()
}

fn parse_variant(s: &str) -> Result<BiasVariant, String> {
    s.trim().parse().map_err(|e: costa_core::Error| e.to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let base = match &cli.common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let mut o = Overrides {
        seed: cli.common.seed,
        out: cli.common.out.clone(),
        threads: cli.common.threads,
        dataset: cli.common.dataset.clone(),
        ..Default::default()
    };
    match &cli.command {
        Command::Train(f) => {
            o.mode = f.mode;
            o.sketch_method = f.sketch_method;
            o.ratio = f.ratio;
            o.density = f.density;
            o.epochs = f.epochs;
        }
        Command::BiasAudit { samples, variants } => {
            o.samples = *samples;
            o.variants = variants.clone();
        }
        Command::SketchBench | Command::Eval { .. } => {}
    }
    let cfg = base.resolve(&o)?;
    match &cli.command {
        Command::Train(_) => {
            let r = cmd_train(&cfg)?;
            println!(
                "{}: probe accuracy {:.4} ± {:.4} over {} seeds; outputs in {}",
                cfg.mode,
                r.probe.mean_test_acc,
                r.probe.std_test_acc,
                r.probe.seeds,
                cfg.out.display()
            );
        }
        Command::BiasAudit { .. } => {
            let r = cmd_bias_audit(&cfg)?;
            for s in &r.summaries {
                println!("{:<10} median bias {:.6}  mean {:.6}", s.variant.name(), s.median, s.mean);
            }
        }
        Command::SketchBench => {
            let r = cmd_sketch_bench(&cfg)?;
            println!("{} cells written to {}", r.rows.len(), cfg.out.display());
        }
        Command::Eval { checkpoint } => {
            let r = cmd_eval(&cfg, checkpoint)?;
            println!("probe accuracy {:.4} ± {:.4} over {} seeds", r.probe.mean_test_acc, r.probe.std_test_acc, r.probe.seeds);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("costa: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
