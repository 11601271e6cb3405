use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use earlystop::simulation::build_config;
use earlystop::{ExperimentConfig, Kernel, Preset, SignalSpec, StoppingRule};

use crate::CliError;

pub const DEFAULT_SIZES: [usize; 5] = [200, 400, 600, 800, 1000];
pub const DEFAULT_SEED: u64 = 1;
pub const SEED_ENV: &str = "EARLYSTOP_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "earlystop",
    version,
    about = "Early stopping for kernel spectral filter regression"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Simulate,
    Sweep,
    Deviation,
    Check,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one Monte Carlo experiment and summarize each stopping rule.
    Simulate(Flags),
    /// Run the experiment across a list of sample sizes.
    Sweep(Flags),
    /// Estimate deviation probabilities of the stopping times.
    Deviation(Flags),
    /// Run the invariant and property checks.
    Check(Flags),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetChoice {
    InnerSobolev,
    InnerGaussian,
    OuterSobolev,
    Custom,
}

impl PresetChoice {
    fn preset(self) -> Option<Preset> {
        match self {
            PresetChoice::InnerSobolev => Some(Preset::InnerSobolev),
            PresetChoice::InnerGaussian => Some(Preset::InnerGaussian),
            PresetChoice::OuterSobolev => Some(Preset::OuterSobolev),
            PresetChoice::Custom => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalChoice {
    Inner,
    Outer,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    #[arg(long, value_enum)]
    pub preset: Option<PresetChoice>,
    /// Sample size.
    #[arg(long)]
    pub n: Option<usize>,
    /// Comma-separated sample sizes for `sweep`.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Monte Carlo replications.
    #[arg(long)]
    pub reps: Option<u64>,
    /// Base seed; falls back to $EARLYSTOP_SEED, then 1.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Landweber step size.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub sigma_sq: Option<f64>,
    /// Iteration budget, also the emergency stop of DP, balancing and oracle.
    #[arg(long)]
    pub t_max: Option<u64>,
    /// Emergency stop and smoothing horizon of the smoothed rules.
    #[arg(long)]
    pub sdp_stop: Option<u64>,
    /// Comma-separated stopping rules; an empty string selects none.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub rules: Option<Vec<String>>,
    /// Comma-separated thresholds y for `deviation`.
    #[arg(long, value_delimiter = ',')]
    pub ys: Option<Vec<f64>>,
    /// Comma-separated time thresholds t for `deviation`.
    #[arg(long, value_delimiter = ',')]
    pub ts: Option<Vec<f64>>,
    /// Kernel of the custom preset: sobolev or gaussian.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Gaussian kernel bandwidth.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Regression function of the custom preset.
    #[arg(long, value_enum)]
    pub signal: Option<SignalChoice>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Worker threads for the replications.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Flat JSON file of defaults; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the expanded experiment configuration instead of running it.
    #[arg(long)]
    pub dry_run: bool,
}

/// Keys accepted in a `--config` file; names match the long flags with
/// dashes replaced by underscores.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    preset: Option<PresetChoice>,
    n: Option<usize>,
    sizes: Option<Vec<usize>>,
    reps: Option<u64>,
    seed: Option<u64>,
    eta: Option<f64>,
    sigma_sq: Option<f64>,
    t_max: Option<u64>,
    sdp_stop: Option<u64>,
    rules: Option<Vec<String>>,
    ys: Option<Vec<f64>>,
    ts: Option<Vec<f64>>,
    kernel: Option<String>,
    bandwidth: Option<f64>,
    signal: Option<SignalChoice>,
    out: Option<PathBuf>,
    format: Option<Format>,
    jobs: Option<usize>,
}

fn read_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

/// Fully merged settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub command: CommandKind,
    pub preset: PresetChoice,
    pub n: Option<usize>,
    pub sizes: Vec<usize>,
    pub reps: Option<u64>,
    pub seed: u64,
    pub eta: Option<f64>,
    pub sigma_sq: Option<f64>,
    pub t_max: Option<u64>,
    pub sdp_stop: Option<u64>,
    pub rules: Option<Vec<StoppingRule>>,
    pub ys: Vec<f64>,
    pub ts: Vec<f64>,
    pub kernel: Option<Kernel>,
    pub signal: Option<SignalChoice>,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub jobs: usize,
    pub dry_run: bool,
}

pub fn parse_config<I, T>(argv: I) -> Result<CliConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(CliError::Clap)?;
    let (command, flags) = match cli.command {
        Command::Simulate(f) => (CommandKind::Simulate, f),
        Command::Sweep(f) => (CommandKind::Sweep, f),
        Command::Deviation(f) => (CommandKind::Deviation, f),
        Command::Check(f) => (CommandKind::Check, f),
    };
    let file = match &flags.config {
        Some(path) => read_file_config(path)?,
        None => FileConfig::default(),
    };
    merge(command, flags, file, std::env::var(SEED_ENV).ok())
}

fn merge(
    command: CommandKind,
    f: Flags,
    c: FileConfig,
    env_seed: Option<String>,
) -> Result<CliConfig, CliError> {
    let seed = match f.seed.or(c.seed) {
        Some(s) => s,
        None => match env_seed {
            Some(s) => s
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV}={s:?} is not a valid seed")))?,
            None => DEFAULT_SEED,
        },
    };
    let rules = f
        .rules
        .or(c.rules)
        .map(|names| {
            names
                .iter()
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<StoppingRule>()
                        .map_err(|e| CliError::Usage(e.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .transpose()?;
    let bandwidth = f.bandwidth.or(c.bandwidth);
    let kernel = match f.kernel.or(c.kernel) {
        Some(name) => {
            Some(Kernel::from_name(&name, bandwidth).map_err(|e| CliError::Usage(e.to_string()))?)
        }
        None => match bandwidth {
            Some(w) => Some(Kernel::gaussian(w).map_err(|e| CliError::Usage(e.to_string()))?),
            None => None,
        },
    };

    let cfg = CliConfig {
        command,
        preset: f.preset.or(c.preset).unwrap_or(PresetChoice::InnerSobolev),
        n: f.n.or(c.n),
        sizes: f
            .sizes
            .or(c.sizes)
            .unwrap_or_else(|| DEFAULT_SIZES.to_vec()),
        reps: f.reps.or(c.reps),
        seed,
        eta: f.eta.or(c.eta),
        sigma_sq: f.sigma_sq.or(c.sigma_sq),
        t_max: f.t_max.or(c.t_max),
        sdp_stop: f.sdp_stop.or(c.sdp_stop),
        rules,
        ys: f.ys.or(c.ys).unwrap_or_default(),
        ts: f.ts.or(c.ts).unwrap_or_default(),
        kernel,
        signal: f.signal.or(c.signal),
        out: f.out.or(c.out),
        format: f.format.or(c.format).unwrap_or(Format::Csv),
        jobs: f.jobs.or(c.jobs).unwrap_or(1),
        dry_run: f.dry_run,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl CliConfig {
    fn validate(&self) -> Result<(), CliError> {
        let usage = |m: &str| Err(CliError::Usage(m.to_string()));
        if self.preset == PresetChoice::Custom
            && self.n.is_none()
            && self.command != CommandKind::Sweep
        {
            return usage("--n is required with --preset custom");
        }
        if self.preset != PresetChoice::Custom && (self.kernel.is_some() || self.signal.is_some()) {
            return usage("--kernel, --bandwidth and --signal only apply to --preset custom");
        }
        if self.command == CommandKind::Sweep && self.sizes.is_empty() {
            return usage("--sizes must list at least one sample size");
        }
        if self.jobs == 0 {
            return usage("--jobs must be at least 1");
        }
        if self.reps == Some(0) {
            return usage("--reps must be at least 1");
        }
        if self.t_max == Some(0) || self.sdp_stop == Some(0) {
            return usage("emergency stops must be at least 1");
        }
        Ok(())
    }

    /// Expands the preset at sample size `n` and applies the overrides.
    pub fn experiment(&self, n: usize) -> ExperimentConfig {
        let (base, kernel, signal) = match self.preset.preset() {
            Some(p) => (p, p.kernel(), p.signal()),
            None => {
                let signal = match self.signal {
                    Some(SignalChoice::Outer) => SignalSpec::OuterPiecewise,
                    _ => SignalSpec::InnerSine,
                };
                let base = match self.signal {
                    Some(SignalChoice::Outer) => Preset::OuterSobolev,
                    _ => Preset::InnerSobolev,
                };
                (base, self.kernel.unwrap_or(Kernel::Sobolev), signal)
            }
        };
        let t_max = self.t_max.unwrap_or_else(|| base.t_max(n));
        let sdp_stop = self.sdp_stop.unwrap_or_else(|| base.sdp_emergency_stop(n));
        let rules = self.rules.clone().unwrap_or_else(|| base.default_rules());
        let mut cfg = build_config(
            n,
            kernel,
            self.eta.unwrap_or_else(|| base.eta()),
            signal,
            self.sigma_sq.unwrap_or(Preset::SIGMA_SQ),
            t_max,
            sdp_stop as f64,
            &rules,
        );
        cfg.replications = self.reps.unwrap_or(Preset::DEFAULT_REPLICATIONS);
        cfg.seed = self.seed;
        cfg.jobs = self.jobs;
        cfg
    }

    /// Sample sizes the command runs at.
    pub fn sample_sizes(&self) -> Vec<usize> {
        match self.command {
            CommandKind::Sweep => self.sizes.clone(),
            _ => vec![self.n.unwrap_or(Preset::DEFAULT_N)],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use earlystop::stopping::SearchMode;

    fn parse(args: &[&str]) -> Result<CliConfig, CliError> {
        let cli = Cli::try_parse_from(std::iter::once("earlystop").chain(args.iter().copied()))
            .map_err(CliError::Clap)?;
        let Command::Simulate(flags) = cli.command else {
            panic!("expected simulate")
        };
        merge(CommandKind::Simulate, flags, FileConfig::default(), None)
    }

    #[test]
    fn inner_sobolev_expansion() {
        let cli = parse(&[
            "simulate",
            "--preset",
            "inner-sobolev",
            "--n",
            "200",
            "--reps",
            "50",
            "--seed",
            "7",
        ])
        .unwrap();
        let cfg = cli.experiment(200);
        assert_eq!(
            cfg.regularizer,
            earlystop::Regularizer::Landweber { eta: 2.4 }
        );
        assert_eq!(cfg.sigma_sq, 1.0);
        assert_eq!(cfg.t_max, 500);
        assert_eq!(cfg.replications, 50);
        assert_eq!(cfg.seed, 7);
        let sdp = cfg.rule(StoppingRule::Sdp).unwrap().config;
        assert_eq!(sdp.emergency_stop, 57.0);
        assert_eq!(sdp.smoothing_horizon, Some(57.0));
        let dp = cfg.rule(StoppingRule::Dp).unwrap().config;
        assert_eq!(dp.emergency_stop, 500.0);
        assert!(matches!(dp.mode, SearchMode::IntegerGrid { max_iter: 500 }));
    }

    #[test]
    fn outer_expansion() {
        let cfg = parse(&["simulate", "--preset", "outer-sobolev", "--n", "400"])
            .unwrap()
            .experiment(400);
        assert_eq!(
            cfg.rule(StoppingRule::Dp).unwrap().config.emergency_stop,
            500.0
        );
        let want = (2.0 * 400.0 / 400f64.ln()).ceil();
        assert_eq!(want, 134.0);
        assert_eq!(
            cfg.rule(StoppingRule::Sdp).unwrap().config.emergency_stop,
            want
        );
    }

    #[test]
    fn custom_requires_n() {
        assert!(matches!(
            parse(&["simulate", "--preset", "custom"]),
            Err(CliError::Usage(_))
        ));
        let cfg = parse(&[
            "simulate", "--preset", "custom", "--n", "30", "--kernel", "gaussian", "--eta", "0.5",
        ])
        .unwrap()
        .experiment(30);
        assert_eq!(cfg.kernel, Kernel::Gaussian { bandwidth: 0.02 });
    }

    #[test]
    fn bad_rule_is_usage_error() {
        assert!(matches!(
            parse(&["simulate", "--rules", "dp,bogus"]),
            Err(CliError::Usage(_))
        ));
        assert_eq!(
            parse(&["simulate", "--rules", ""]).unwrap().rules,
            Some(vec![])
        );
    }

    #[test]
    fn flags_win_over_file_and_env() {
        let cli = Cli::try_parse_from(["earlystop", "simulate", "--n", "64"]).unwrap();
        let Command::Simulate(flags) = cli.command else {
            unreachable!()
        };
        let file: FileConfig = serde_json::from_str(r#"{"n": 32, "reps": 9, "seed": 5}"#).unwrap();
        let cfg = merge(CommandKind::Simulate, flags, file, Some("11".into())).unwrap();
        assert_eq!((cfg.n, cfg.reps, cfg.seed), (Some(64), Some(9), 5));

        let cli = Cli::try_parse_from(["earlystop", "simulate"]).unwrap();
        let Command::Simulate(flags) = cli.command else {
            unreachable!()
        };
        let cfg = merge(
            CommandKind::Simulate,
            flags,
            FileConfig::default(),
            Some("11".into()),
        )
        .unwrap();
        assert_eq!(cfg.seed, 11);
    }

    #[test]
    fn file_rejects_unknown_keys() {
        assert!(serde_json::from_str::<FileConfig>(r#"{"nn": 3}"#).is_err());
        assert!(serde_json::from_str::<FileConfig>(r#"{"n": "three"}"#).is_err());
    }

    #[test]
    fn every_preset_expands_to_valid_config() {
        for p in ["inner-sobolev", "inner-gaussian", "outer-sobolev"] {
            let cli = parse(&["simulate", "--preset", p]).unwrap();
            for n in [2, 50, 200, 1000] {
                cli.experiment(n).validate().unwrap();
            }
        }
    }
}
