use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelKind};
use super::config::RunConfig;
use crate::data::{load_csv, load_factors, normalize, synth_generate, write_csv, write_factors, NormStats, SeriesDataset};
use crate::elbo::{evaluate_terms, DecompositionTerms, IndividualTrainer, ObjectiveMode};
use crate::group::{AdaptTrainer, GroupModel};
use crate::metrics::{evaluate, traverse, EvalConfig};
use crate::nets::{SequenceVae, VaeModel};
use crate::{Error, Result};

const PRECEDENCE: &str = "Settings are resolved as flags > config file > built-in defaults.";

#[derive(Parser, Debug)]
#[command(name = "dts", version, about = "Disentangled time-series representation learning", after_help = PRECEDENCE)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic factor-controlled dataset.
    Generate(GenerateArgs),
    /// Train a single-latent model.
    Train(TrainArgs),
    /// Adversarial group-segment adaptation from a labeled source to an unlabeled target.
    Adapt(AdaptArgs),
    /// Export latent traversals of seed windows.
    Traverse(TraverseArgs),
    /// Write a metrics report.
    Eval(EvalArgs),
    /// Write the full-dataset KL decomposition.
    Decompose(DecomposeArgs),
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    clip: Option<f64>,
    /// vanilla | beta | dts
    #[arg(long)]
    mode: Option<ObjectiveMode>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    latent: Option<usize>,
    /// Comma-separated segment sizes, e.g. 6,6.
    #[arg(long, value_delimiter = ',')]
    segments: Option<Vec<usize>>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "w-cls")]
    w_cls: Option<f64>,
    #[arg(long = "eval-every")]
    eval_every: Option<usize>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        self.apply(&mut cfg);
        Ok(cfg)
    }

    fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        t.epochs = self.epochs.unwrap_or(t.epochs);
        t.seed = self.seed.unwrap_or(t.seed);
        t.lr = self.lr.unwrap_or(t.lr);
        t.batch = self.batch.unwrap_or(t.batch);
        t.clip = self.clip.unwrap_or(t.clip);
        t.lambda = self.lambda.unwrap_or(t.lambda);
        t.w_cls = self.w_cls.unwrap_or(t.w_cls);
        t.eval_every = self.eval_every.unwrap_or(t.eval_every);
        let o = &mut cfg.objective;
        o.mode = self.mode.unwrap_or(o.mode);
        o.alpha = self.alpha.unwrap_or(o.alpha);
        o.beta = self.beta.unwrap_or(o.beta);
        let m = &mut cfg.model;
        if let Some(latent) = self.latent {
            m.latent = latent;
        }
        if self.segments.is_some() {
            m.segments = self.segments.clone();
        }
        m.hidden = self.hidden.unwrap_or(m.hidden);
    }
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Dataset CSV to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Factors CSV to write.
    #[arg(long = "factors-out")]
    factors_out: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    domains: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from this checkpoint for `--epochs` more epochs.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AdaptArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Labeled source dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Unlabeled target dataset.
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Train the source-only baseline instead.
    #[arg(long = "source-only")]
    source_only: bool,
}

#[derive(Args, Debug)]
struct TraverseArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Seed windows (dataset CSV).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, allow_hyphen_values = true, default_value_t = -4.0)]
    lo: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 4.0)]
    hi: f64,
    #[arg(long, default_value_t = 9)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    factors: Option<PathBuf>,
    /// Report JSON to write.
    #[arg(long)]
    out: PathBuf,
    /// Expected model layout; must agree with the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Expected segment sizes; must agree with the checkpoint.
    #[arg(long, value_delimiter = ',')]
    segments: Option<Vec<usize>>,
    #[arg(long, default_value_t = 8)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// An error with the process exit code it maps to.
struct Failure {
    error: Error,
    code: i32,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = exit_code(&error);
        Failure { error, code }
    }
}

/// 2 for numeric failures and damaged or mismatched checkpoints, 1 for
/// every other user-facing error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric { .. } | Error::Divergence { .. } | Error::Integrity(_) => 2,
        _ => 1,
    }
}

fn checkpoint(path: &Path) -> std::result::Result<Checkpoint, Failure> {
    load_checkpoint(path).map_err(|error| {
        let code = match error {
            Error::Io { .. } => 1,
            _ => 2,
        };
        Failure { error, code }
    })
}

fn required(value: Option<PathBuf>, fallback: &Option<PathBuf>, field: &str) -> Result<PathBuf> {
    value.or_else(|| fallback.clone()).ok_or_else(|| Error::Config {
        field: field.into(),
        message: "no path given by flag or config".into(),
    })
}

/// One machine-parseable progress line.
pub fn progress_line(epoch: usize, loss: f64, t: &DecompositionTerms) -> String {
    format!(
        "epoch={epoch} loss={loss:.6} mi={:.6} tc={:.6} dim_kl={:.6} recon={:.6}",
        t.index_code_mi, t.total_correlation, t.dimension_kl, t.recon_loglik
    )
}

/// Parses `argv` (program name first) and runs the subcommand, returning
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Adapt(a) => adapt(a),
        Command::Traverse(a) => run_traverse(a),
        Command::Eval(a) => run_eval(a),
        Command::Decompose(a) => decompose(a),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.error);
            f.code
        }
    }
}

type CliResult = std::result::Result<(), Failure>;

fn generate(a: GenerateArgs) -> CliResult {
    let cfg = a.overrides.resolve()?;
    cfg.validate()?;
    let out = required(a.out, &cfg.paths.data, "paths.data")?;
    let factors_out = a.factors_out.or(cfg.paths.factors.clone());
    let mut spec = cfg.synth_spec();
    spec.samples_per_domain = a.samples.unwrap_or(spec.samples_per_domain);
    spec.domains = a.domains.unwrap_or(spec.domains);
    spec.noise_std = a.noise.unwrap_or(spec.noise_std);
    if let Some(seed) = a.overrides.seed {
        spec.seed = seed;
    }
    let ds = synth_generate(&spec)?;
    write_csv(&out, &ds)?;
    if let Some(path) = factors_out {
        write_factors(&path, &ds)?;
    }
    println!("wrote {} windows to {}", ds.len(), out.display());
    Ok(())
}

fn load_normalized(path: &Path, cfg: &RunConfig, stats: Option<&NormStats>) -> Result<(SeriesDataset, NormStats)> {
    let ds = load_csv(path, &cfg.schema)?;
    normalize(&ds, stats)
}

fn train(a: TrainArgs) -> CliResult {
    let flags = a.overrides.resolve()?;
    let resumed = match &a.resume {
        Some(p) => {
            let ckpt = checkpoint(p)?;
            ckpt.expect_kind(ModelKind::Individual)?;
            Some(ckpt)
        }
        None => None,
    };
    let mut cfg = match &resumed {
        Some(c) => c.config.clone(),
        None => flags.clone(),
    };
    cfg.train.epochs = a.overrides.epochs.unwrap_or(if resumed.is_some() { flags.train.epochs } else { cfg.train.epochs });
    cfg.validate()?;
    let data_path = required(a.data, &flags.paths.data, "paths.data")?;
    let out = required(a.out, &flags.paths.output, "paths.output")?;
    let (data, stats) = load_normalized(&data_path, &cfg, resumed.as_ref().and_then(|c| c.norm_stats.as_ref()))?;
    let mut trainer = match &resumed {
        Some(c) => c.individual_trainer(data.len())?,
        None => IndividualTrainer::new(
            VaeModel::new(cfg.model_config()?, cfg.train.seed),
            cfg.objective(data.len())?,
            cfg.train_config(),
        )?,
    };
    for _ in 0..cfg.train.epochs {
        match trainer.run(&data, 1) {
            Ok(logs) => {
                for l in logs {
                    println!(
                        "{}",
                        progress_line(l.epoch, l.full_loss.unwrap_or(l.loss), l.full.as_ref().unwrap_or(&l.minibatch))
                    );
                }
            }
            Err(e) => {
                save_checkpoint(&Checkpoint::from_individual(&trainer, &cfg, Some(stats)), &out)?;
                eprintln!("training aborted; last good state saved to {}", out.display());
                return Err(e.into());
            }
        }
    }
    save_checkpoint(&Checkpoint::from_individual(&trainer, &cfg, Some(stats)), &out)?;
    Ok(())
}

fn adapt(a: AdaptArgs) -> CliResult {
    let flags = a.overrides.resolve()?;
    let resumed = match &a.resume {
        Some(p) => {
            let ckpt = checkpoint(p)?;
            ckpt.expect_kind(ModelKind::Group)?;
            Some(ckpt)
        }
        None => None,
    };
    let mut cfg = match &resumed {
        Some(c) => c.config.clone(),
        None => flags.clone(),
    };
    cfg.train.epochs = a.overrides.epochs.unwrap_or(if resumed.is_some() { flags.train.epochs } else { cfg.train.epochs });
    cfg.validate()?;
    let sizes = cfg.model.segment_sizes();
    if sizes.len() != 2 || sizes[0] != sizes[1] {
        return Err(Error::Config {
            field: "model.segments".into(),
            message: format!("adaptation needs two equal segments, got {sizes:?}"),
        }
        .into());
    }
    let source_path = required(a.data, &flags.paths.data, "paths.data")?;
    let target_path = required(a.target, &flags.paths.target, "paths.target")?;
    let out = required(a.out, &flags.paths.output, "paths.output")?;
    let (source, stats) = load_normalized(&source_path, &cfg, resumed.as_ref().and_then(|c| c.norm_stats.as_ref()))?;
    let (target, _) = load_normalized(&target_path, &cfg, Some(&stats))?;
    let rows = if a.source_only { source.len() } else { source.len() + target.len() };
    let mut trainer = match &resumed {
        Some(c) => c.adapt_trainer(rows, a.source_only)?,
        None => {
            let model = GroupModel::new(cfg.model_config()?, source.num_classes().max(2), cfg.train.seed)?;
            AdaptTrainer::new(model, cfg.adapt_config(rows, a.source_only)?)?
        }
    };
    for _ in 0..cfg.train.epochs {
        match trainer.run(&source, &target, 1) {
            Ok(logs) => {
                for l in logs {
                    println!("{}", progress_line(l.epoch, l.loss, l.full.as_ref().unwrap_or(&l.minibatch)));
                }
            }
            Err(e) => {
                save_checkpoint(&Checkpoint::from_group(&trainer, &cfg, Some(stats)), &out)?;
                eprintln!("adaptation aborted; last good state saved to {}", out.display());
                return Err(e.into());
            }
        }
    }
    save_checkpoint(&Checkpoint::from_group(&trainer, &cfg, Some(stats)), &out)?;
    Ok(())
}

enum Loaded {
    Individual(VaeModel<f64>),
    Group(GroupModel<f64>),
}

impl Loaded {
    fn from(ckpt: &Checkpoint) -> Result<Self> {
        Ok(match ckpt.kind {
            ModelKind::Individual => Loaded::Individual(ckpt.vae_model()?),
            ModelKind::Group => Loaded::Group(ckpt.group_model()?),
        })
    }

    fn vae(&self) -> &dyn SequenceVae<f64> {
        match self {
            Loaded::Individual(m) => m,
            Loaded::Group(m) => m,
        }
    }
}

fn model_data(ckpt: &Checkpoint, path: &Path) -> Result<SeriesDataset> {
    let ds = load_csv(path, &ckpt.config.schema)?;
    Ok(match &ckpt.norm_stats {
        Some(s) => normalize(&ds, Some(s))?.0,
        None => ds,
    })
}

fn run_traverse(a: TraverseArgs) -> CliResult {
    let ckpt = checkpoint(&a.ckpt)?;
    let model = Loaded::from(&ckpt)?;
    let seeds = model_data(&ckpt, &a.input)?;
    let set = traverse(model.vae(), &seeds, a.lo, a.hi, a.steps)?;
    set.write_csv(&a.out)?;
    println!("wrote {} traversal series to {}", set.len(), a.out.display());
    Ok(())
}

fn run_eval(a: EvalArgs) -> CliResult {
    let ckpt = checkpoint(&a.ckpt)?;
    let mut expected = match &a.config {
        Some(p) => Some(RunConfig::load(p)?.model),
        None => None,
    };
    if let Some(segments) = &a.segments {
        let mut m = expected.unwrap_or_else(|| ckpt.config.model.clone());
        m.latent = segments.iter().sum();
        m.segments = Some(segments.clone());
        expected = Some(m);
    }
    if let Some(m) = expected {
        let (have, want) = (ckpt.config.model.segment_sizes(), m.segment_sizes());
        if have != want || ckpt.config.model.hidden != m.hidden {
            return Err(Error::Integrity(format!(
                "checkpoint has segments {have:?} (hidden {}), requested segments {want:?} (hidden {})",
                ckpt.config.model.hidden, m.hidden
            ))
            .into());
        }
    }
    let model = Loaded::from(&ckpt)?;
    let mut data = model_data(&ckpt, &a.data)?;
    if let Some(path) = &a.factors {
        data = load_factors(path, ckpt.config.schema.k, data)?;
    }
    let cfg = EvalConfig {
        samples: a.samples,
        seed: a.seed,
        ..EvalConfig::default()
    };
    let echo = serde_json::to_value(&ckpt.config).map_err(|e| Error::Integrity(e.to_string()))?;
    let mut report = evaluate(model.vae(), &data, &cfg, echo)?;
    if let Loaded::Group(m) = &model {
        if let Some(acc) = m.class_accuracy(&data)? {
            report.accuracies.insert("class_head".into(), acc);
        }
    }
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Integrity(e.to_string()))?;
    std::fs::write(&a.out, text).map_err(|e| Error::io(&a.out, e))?;
    Ok(())
}

fn decompose(a: DecomposeArgs) -> CliResult {
    let ckpt = checkpoint(&a.ckpt)?;
    let model = Loaded::from(&ckpt)?;
    let data = model_data(&ckpt, &a.data)?;
    let objective = ckpt.config.objective(data.len())?;
    let (terms, loss) = evaluate_terms(model.vae(), &data.tensor()?, &objective, a.samples, a.seed)?;
    let doc = serde_json::json!({
        "mi": terms.index_code_mi,
        "tc": terms.total_correlation,
        "dim_kl": terms.dimension_kl,
        "recon_loglik": terms.recon_loglik,
        "kl": terms.kl(),
        "loss": loss,
    });
    std::fs::write(&a.out, doc.to_string()).map_err(|e| Error::io(&a.out, e))?;
    println!("{}", progress_line(ckpt.epoch, loss, &terms));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["dts", "frobnicate"]), 1);
        assert_eq!(run(["dts", "train", "--bogus"]), 1);
        assert_eq!(run(["dts", "--help"]), 0);
    }

    #[test]
    fn missing_config_exits_one() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("c.json");
        let code = run([
            "dts",
            "train",
            "--config",
            dir.path().join("missing.json").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
        assert!(!out.exists());
    }

    #[test]
    fn progress_line_schema() {
        let line = progress_line(3, 1.5, &DecompositionTerms::default());
        let keys: Vec<&str> = line.split(' ').map(|kv| kv.split('=').next().unwrap()).collect();
        assert_eq!(keys, ["epoch", "loss", "mi", "tc", "dim_kl", "recon"]);
    }
}
