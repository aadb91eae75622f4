use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use specmatch_core::encoder::EncoderParams;
use specmatch_core::loss::AdjacencyMode;
use specmatch_core::runner::{run_fig3, sweep, DatasetSpec, SweepParam, SweepRow, TrainConfig, Trainer};
use specmatch_core::verify::{analytic_suite, ensemble_suite, summarize, BoundReport, HarnessConfig};
use specmatch_core::{graph, Dataset};

#[derive(Parser)]
#[command(name = "specmatch", version, about = "Graph contrastive learning with spectral graph matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured SBM dataset as dataset.json.
    Gen(Common),
    /// Train an encoder; writes runlog.csv, checkpoint.json and config.json.
    Train(TrainArgs),
    /// Train with beta = 0 and with --beta; writes fig3.csv and fig3.svg.
    Fig3(Common),
    /// One training run per value; writes sweep.csv.
    Sweep(SweepArgs),
    /// Run the bound checks; writes reports.json.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Adjacency {
    Binary,
    Soft,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON file mirroring the training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Similarity percentile.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Diffusion scale used by the bound checks.
    #[arg(long = "t-d")]
    t_d: Option<f64>,
    #[arg(long, value_enum)]
    adjacency: Option<Adjacency>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Train on a dataset file instead of the configured dataset.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// p, beta or lr.
    #[arg(long)]
    param: SweepParam,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Encoder checkpoint for the ensemble checks; a freshly initialized
    /// encoder is used when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Number of augmentation ensembles.
    #[arg(long)]
    ensembles: Option<usize>,
    /// Draws per ensemble.
    #[arg(long)]
    draws: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => TrainConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            if let DatasetSpec::Sbm(sbm) = &mut cfg.dataset {
                sbm.seed = seed;
            }
        }
        if let Some(beta) = self.beta {
            cfg.loss.beta = beta;
        }
        if let Some(p) = self.p {
            cfg.loss.percentile = p;
        }
        if let Some(tau) = self.tau {
            cfg.loss.tau = tau;
        }
        if let Some(a) = self.adjacency {
            cfg.loss.adjacency = match a {
                Adjacency::Binary => AdjacencyMode::Binary,
                Adjacency::Soft => AdjacencyMode::Soft,
            };
        }
        if let Some(epochs) = self.epochs {
            cfg.epochs = epochs;
        }
        if let Some(path) = &self.dataset {
            cfg.dataset = DatasetSpec::File { path: path.clone() };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn gen(args: &Common) -> Result<()> {
    let cfg = args.config()?;
    let DatasetSpec::Sbm(sbm) = &cfg.dataset else {
        bail!("gen needs an sbm dataset spec");
    };
    let data = graph::generate_sbm(sbm)?;
    let path = args.out_dir()?.join("dataset.json");
    data.save(&path)?;
    println!("wrote {} graphs to {}", data.len(), path.display());
    Ok(())
}

fn train(args: &Common) -> Result<()> {
    let cfg = args.config()?;
    let out = args.out_dir()?;
    write(out.join("config.json"), cfg.to_json())?;
    let mut trainer = Trainer::new(cfg)?;
    let mut result = Ok(());
    while !trainer.is_done() {
        match trainer.run_epoch(&mut ()) {
            Ok(r) => println!(
                "epoch {:>3}  loss {:.5}  loss_c {:.5}  loss_g {:.5}  align {:.4}  unif {:.4}{}",
                r.epoch,
                r.loss_total,
                r.loss_c,
                r.loss_g,
                r.align,
                r.unif,
                r.probe_acc.map(|p| format!("  probe {p:.4}")).unwrap_or_default()
            ),
            Err(e) => {
                result = Err(e);
                break;
            }
        }
    }
    // The checkpoint holds the last good parameters even after divergence.
    trainer.params().save(out.join("checkpoint.json"))?;
    trainer.log().save_csv(out.join("runlog.csv"))?;
    result?;
    println!("wrote runlog.csv and checkpoint.json to {}", out.display());
    Ok(())
}

fn fig3(args: &Common) -> Result<()> {
    let cfg = args.config()?;
    let beta = args.beta.unwrap_or(0.5);
    let out = args.out_dir()?;
    let result = run_fig3(&cfg, beta)?;
    write(out.join("fig3.csv"), result.to_csv())?;
    write(out.join("fig3.svg"), result.to_svg())?;
    result.base.log.save_csv(out.join("runlog_beta0.csv"))?;
    result.reg.log.save_csv(out.join("runlog.csv"))?;
    println!("{}", result.summary());
    println!("wrote fig3.csv and fig3.svg to {}", out.display());
    Ok(())
}

fn run_sweep(args: &SweepArgs) -> Result<()> {
    let cfg = args.common.config()?;
    let rows = sweep(args.param, &args.values, &cfg)?;
    let csv = SweepRow::csv(&rows);
    write(args.common.out_dir()?.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn verify(args: &VerifyArgs) -> Result<bool> {
    let train_cfg = args.common.config()?;
    let mut harness = HarnessConfig {
        seed: train_cfg.seed,
        percentile: train_cfg.loss.percentile,
        ..HarnessConfig::default()
    };
    if let Some(tau) = args.common.tau {
        harness.taus = vec![tau];
    }
    if let Some(t_d) = args.common.t_d {
        harness.t_d = t_d;
        harness.duhamel_t_d = vec![t_d];
    }
    if let Some(n) = args.ensembles {
        harness.ensembles = n;
    }
    if let Some(m) = args.draws {
        harness.draws = m;
    }
    harness.t_unif = train_cfg.metrics.t_unif;

    let data: Dataset = train_cfg.dataset.load()?;
    let params = match &args.checkpoint {
        Some(path) => EncoderParams::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => EncoderParams::init(train_cfg.model.dims(data.feature_dim()), train_cfg.seed)?,
    };
    let mut reports = analytic_suite(&harness)?;
    if harness.ensembles > 0 {
        let policy = train_cfg.augment_policy()?;
        reports.extend(ensemble_suite(&harness, data.graphs(), &policy, &params)?);
    }
    write(
        args.common.out_dir()?.join("reports.json"),
        serde_json::to_string_pretty(&reports)?,
    )?;
    print_table(&reports);
    Ok(reports.iter().all(|r| !r.failed()))
}

fn print_table(reports: &[BoundReport]) {
    println!("{:<24} {:>6} {:>6} {:>8} {:>14}", "check", "count", "failed", "skipped", "min slack");
    for s in summarize(reports) {
        println!(
            "{:<24} {:>6} {:>6} {:>8} {:>14.6e}",
            s.name, s.count, s.failed, s.skipped, s.min_slack
        );
    }
    for r in reports.iter().filter(|r| r.failed()) {
        println!("FAIL {r}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Gen(a) => gen(a).map(|_| true),
        Command::Train(a) => train(&a.common).map(|_| true),
        Command::Fig3(a) => fig3(a).map(|_| true),
        Command::Sweep(a) => run_sweep(a).map(|_| true),
        Command::Verify(a) => verify(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
