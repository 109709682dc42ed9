use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mergelab::eval::{secs_curve, smoothness_of};
use mergelab::experiment::{
    build_bases, check_gates, content_csv, content_sweep, intensity_eval, run_experiment,
    seed_role, Recipe,
};
use mergelab::{
    merge_pair, merge_soup, Checkpoint, Error, IntTensorPolicy, KeyMismatch, MergePolicy, SweepSpec,
};
use rayon::prelude::*;

/// Stdout writes that tolerate a closed pipe.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn flag(flag: &str, e: Error) -> Self {
        CliError::Usage(format!("{}: {flag}: {e}", e.kind()))
    }

    fn at(path: &Path, e: Error) -> Self {
        CliError::Data(format!("{}: {}: {e}", e.kind(), path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(format!("{}: {e}", e.kind()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "mergelab",
    version,
    about = "Weight-space interpolation of checkpoints"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Print metadata, fingerprints and per-tensor summaries
    Inspect { path: PathBuf },
    /// Interpolate two checkpoints at one alpha
    Merge {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        alpha: f64,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long)]
        extrapolate: bool,
        #[arg(short = 'o')]
        output: PathBuf,
    },
    /// Uniform average of one or more checkpoints
    Soup {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = IntTensorArg::RequireEqual)]
        int_tensor: IntTensorArg,
        #[arg(short = 'o')]
        output: PathBuf,
    },
    /// Write one merged checkpoint per alpha into a directory
    Sweep {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        sweep: SweepArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(short = 'o')]
        output: PathBuf,
    },
    /// Pretrain and fine-tune the two toy bases
    TrainToy {
        #[command(flatten)]
        run: RunArgs,
        #[arg(short = 'o')]
        output: PathBuf,
    },
    /// Embedding similarity of merged models to both bases
    EvalSecs {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        sweep: SweepArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Content error rate of merged models
    EvalWer {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        sweep: SweepArgs,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Simulated intensity ranking over five merge levels
    EvalIntensity {
        neutral: PathBuf,
        emotive: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Full experiment: train, sweep, evaluate, write CSVs
    Demo {
        #[command(flatten)]
        run: RunArgs,
        #[arg(short = 'o', default_value = "demo_out")]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum KeyPolicyArg {
    Strict,
    Intersect,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum IntTensorArg {
    RequireEqual,
    TakeFirst,
}

impl From<IntTensorArg> for IntTensorPolicy {
    fn from(v: IntTensorArg) -> Self {
        match v {
            IntTensorArg::RequireEqual => IntTensorPolicy::RequireEqual,
            IntTensorArg::TakeFirst => IntTensorPolicy::TakeFirst,
        }
    }
}

#[derive(Args)]
pub struct PolicyArgs {
    #[arg(long, value_enum, default_value_t = KeyPolicyArg::Strict)]
    policy: KeyPolicyArg,
    #[arg(long, value_enum, default_value_t = IntTensorArg::RequireEqual)]
    int_tensor: IntTensorArg,
}

impl PolicyArgs {
    fn to_policy(&self, alpha: f64, extrapolate: bool) -> MergePolicy {
        MergePolicy {
            alpha,
            extrapolate,
            key_mismatch: match self.policy {
                KeyPolicyArg::Strict => KeyMismatch::Strict,
                KeyPolicyArg::Intersect => KeyMismatch::Intersect,
            },
            int_tensor: self.int_tensor.into(),
        }
    }
}

#[derive(Args)]
pub struct SweepArgs {
    /// Even spacing; 1/steps must be an integer
    #[arg(long, conflicts_with = "alphas")]
    steps: Option<f64>,
    /// Explicit increasing list from 0 to 1
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
}

impl SweepArgs {
    fn spec(&self, default_step: f64) -> CliResult<SweepSpec> {
        match (&self.alphas, self.steps) {
            (Some(list), _) => {
                SweepSpec::from_alphas(list.clone()).map_err(|e| CliError::flag("--alphas", e))
            }
            (None, step) => SweepSpec::by_step(step.unwrap_or(default_step))
                .map_err(|e| CliError::flag("--steps", e)),
        }
    }
}

#[derive(Args)]
pub struct RunArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Recipe file of `key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
}

impl RunArgs {
    fn recipe(&self) -> CliResult<Recipe> {
        match &self.config {
            None => Ok(Recipe::default()),
            Some(path) => Recipe::from_config_file(path).map_err(|e| CliError::at(path, e)),
        }
    }
}

fn load(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path).map_err(|e| CliError::at(path, e))
}

fn save(cp: &Checkpoint, path: &Path) -> CliResult {
    cp.save(path).map_err(|e| CliError::at(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| CliError::at(path, e.into()))
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| CliError::at(path, e.into()))
}

/// Writes `text` to `csv` if given, otherwise to stdout.
fn emit_csv(csv: Option<&Path>, text: &str) -> CliResult {
    match csv {
        Some(path) => write_text(path, text),
        None => {
            use std::io::Write as _;
            let _ = std::io::stdout().lock().write_all(text.as_bytes());
            Ok(())
        }
    }
}

pub fn sweep_file_name(alpha: f64) -> String {
    format!("alpha_{alpha:.6}.ckpt")
}

pub fn execute(command: Command) -> CliResult {
    match command {
        Command::Inspect { path } => inspect(&path),
        Command::Merge {
            a,
            b,
            alpha,
            policy,
            extrapolate,
            output,
        } => {
            let policy = policy.to_policy(alpha, extrapolate);
            if let Err(e) = policy.validate() {
                return Err(match e {
                    Error::AlphaOutOfRange(a) => CliError::usage(format!(
                        "AlphaOutOfRange: --alpha {a} is outside [0, 1]; pass --extrapolate to allow it"
                    )),
                    e => CliError::flag("--alpha", e),
                });
            }
            let (a, b) = (load(&a)?, load(&b)?);
            let merged = merge_pair(&a, &b, &policy)?;
            save(&merged, &output)?;
            out!("wrote {} (alpha {alpha})", output.display());
            Ok(())
        }
        Command::Soup {
            inputs,
            int_tensor,
            output,
        } => {
            let models = inputs
                .iter()
                .map(|p| load(p))
                .collect::<CliResult<Vec<_>>>()?;
            let soup = merge_soup(&models, int_tensor.into())?;
            save(&soup, &output)?;
            out!("wrote {} ({} models)", output.display(), models.len());
            Ok(())
        }
        Command::Sweep {
            a,
            b,
            sweep,
            policy,
            output,
        } => {
            let spec = sweep.spec(0.1)?;
            let (a, b) = (load(&a)?, load(&b)?);
            let base = policy.to_policy(0.0, false);
            let merged: Vec<Checkpoint> = spec
                .alphas()
                .par_iter()
                .map(|&alpha| merge_pair(&a, &b, &base.with_alpha(alpha)))
                .collect::<mergelab::Result<_>>()?;
            create_dir(&output)?;
            for (alpha, cp) in spec.alphas().iter().zip(&merged) {
                let path = output.join(sweep_file_name(*alpha));
                save(cp, &path)?;
                out!("{}", path.display());
            }
            Ok(())
        }
        Command::TrainToy { run, output } => {
            let recipe = run.recipe()?;
            let bases = build_bases(&recipe, run.seed)?;
            create_dir(&output)?;
            save(&bases.pretrained, &output.join("pretrained.ckpt"))?;
            save(&bases.base_a, &output.join("base_a.ckpt"))?;
            save(&bases.base_b, &output.join("base_b.ckpt"))?;
            out!(
                "train mse: pretrain {:.6}, base_a {:.6}, base_b {:.6}",
                bases.pretrain_mse,
                bases.base_a_mse,
                bases.base_b_mse
            );
            let gates = check_gates(&recipe, &bases, &recipe.eval_dataset(run.seed)?)?;
            out!(
                "gates: pitch {:.4} vs {:.4} (need gap >= {:.4}), base error {:.4} / {:.4}",
                gates.pitch_a,
                gates.pitch_b,
                gates.required_pitch_gap,
                gates.error_rate_a,
                gates.error_rate_b
            );
            if !gates.passed() {
                return Err(Error::GateFailed(format!(
                    "bases written to {} do not meet the separation/content gates",
                    output.display()
                ))
                .into());
            }
            Ok(())
        }
        Command::EvalSecs {
            a,
            b,
            sweep,
            run,
            csv,
        } => {
            let recipe = run.recipe()?;
            let spec = sweep.spec(recipe.secs_step)?;
            let (a, b) = (load(&a)?, load(&b)?);
            let sentences = recipe.eval_dataset(run.seed)?.sentences();
            let report = secs_curve(&a, &b, &spec, &sentences, &recipe.merge_policy())?;
            emit_csv(csv.as_deref(), &report.curve.to_csv())?;
            let s = report.smoothness;
            eprintln!(
                "smoothness: max_violation {:.6}, max_jump {:.6}",
                s.max_violation, s.max_jump
            );
            Ok(())
        }
        Command::EvalWer {
            a,
            b,
            sweep,
            run,
            csv,
        } => {
            let recipe = run.recipe()?;
            let spec = sweep.spec(recipe.secs_step)?;
            let (a, b) = (load(&a)?, load(&b)?);
            let eval = recipe.eval_dataset(run.seed)?;
            let points = content_sweep(&recipe, &a, &b, &spec, &eval)?;
            emit_csv(csv.as_deref(), &content_csv(&points))?;
            let rates: Vec<f64> = points.iter().map(|p| p.error_rate).collect();
            let s = smoothness_of(&rates)?;
            eprintln!("error rate max jump {:.6}", s.max_jump);
            Ok(())
        }
        Command::EvalIntensity {
            neutral,
            emotive,
            run,
            csv,
        } => {
            let recipe = run.recipe()?;
            let (n, e) = (load(&neutral)?, load(&emotive)?);
            let sentences = recipe.eval_dataset(run.seed)?.sentences();
            let (noiseless, noisy) = intensity_eval(
                &recipe,
                &n,
                &e,
                &sentences,
                run.seed.wrapping_add(seed_role::RATER_NOISE),
            )?;
            emit_csv(csv.as_deref(), &noisy.table.to_csv())?;
            eprintln!(
                "estimates {:?}, sigma {:.6}, noiseless increasing: {}",
                noiseless.estimates,
                noisy.table.sigma,
                noiseless.table.strictly_increasing()
            );
            Ok(())
        }
        Command::Demo { run, output } => {
            let recipe = run.recipe()?;
            let report = run_experiment(&recipe, run.seed)?;
            create_dir(&output)?;
            write_text(&output.join("secs_curve.csv"), &report.secs_csv())?;
            write_text(&output.join("content_error.csv"), &report.content_csv())?;
            write_text(&output.join("intensity_rank.csv"), &report.intensity_csv())?;
            out!("{}", report.summary().trim_end());
            out!("csv written to {}", output.display());
            Ok(())
        }
    }
}

fn inspect(path: &Path) -> CliResult {
    let cp = load(path)?;
    out!("file: {}", path.display());
    out!("arch_fingerprint: {}", cp.arch_fingerprint());
    out!("content_digest: {}", cp.content_digest());
    out!("metadata:");
    for (k, v) in cp
        .metadata()
        .iter()
        .filter(|(k, _)| k.as_str() != "arch_fingerprint")
    {
        out!("  {k} = {v}");
    }
    out!("tensors: {}", cp.len());
    for (name, t) in cp.tensors() {
        let summary = match t.to_i64_vec() {
            Some(v) if v.len() <= 8 => format!("values {v:?}"),
            Some(_) => String::new(),
            None => {
                let v = t.to_f64_vec();
                if v.is_empty() {
                    String::new()
                } else {
                    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
                    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mean = v.iter().sum::<f64>() / v.len() as f64;
                    format!("min {min:.6} max {max:.6} mean {mean:.6}")
                }
            }
        };
        out!("  {name}  {}  {:?}  {}", t.dtype(), t.shape(), summary);
    }
    Ok(())
}
