use crate::error::{CliError, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use spacrt::citest::{Method, Side};
use spacrt::glm::{CvRule, Kernel, Penalty, SizeSpec};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "spacrt",
    version,
    about = "Conditional independence tests via conditional saddlepoint approximation"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "SPACRT_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test X ⊥ Y | Z on a delimited table.
    Test(TestArgs),
    /// Run a seeded simulation scenario and summarize rejection rates.
    Simulate(SimulateArgs),
    /// Time each method per hypothesis on simulated CRISPR data.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// Comma- or tab-delimited table with a header row.
    #[arg(long, short)]
    pub input: PathBuf,
    /// JSONL result file.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Field delimiter; detected from the header when omitted.
    #[arg(long)]
    pub delimiter: Option<char>,
    /// Column(s) holding X; each one is a separate hypothesis.
    #[arg(long, value_delimiter = ',', required = true)]
    pub x_col: Vec<String>,
    #[arg(long)]
    pub y_col: String,
    /// Covariate columns (none: intercept-only fits).
    #[arg(long, value_delimiter = ',')]
    pub z_cols: Vec<String>,
    /// Precomputed E[X|Z]; skips the X fit. Requires a single --x-col.
    #[arg(long, conflicts_with = "x_model")]
    pub mu_x_col: Option<String>,
    /// Precomputed E[Y|Z]; skips the Y fit.
    #[arg(long, conflicts_with = "y_model")]
    pub mu_y_col: Option<String>,
    /// Family of X when --mu-x-col is given.
    #[arg(long, value_enum, default_value = "bernoulli")]
    pub x_family: FamilyArg,
    /// X|Z model: logistic, poisson, logistic:l1=λ, logistic:l2=λ, poisson:l2=λ, or hmm.
    #[arg(long)]
    pub x_model: Option<String>,
    /// Y|Z model: negbin[:mom|:ml|:R], poisson, logistic, krr[:linear|:gaussian=h].
    #[arg(long)]
    pub y_model: Option<String>,
    /// HMM parameter file (with --x-model hmm).
    #[arg(long)]
    pub hmm_file: Option<PathBuf>,
    /// All genotype columns in site order (with --x-model hmm).
    #[arg(long, value_delimiter = ',')]
    pub site_cols: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "spacrt,gcm", value_parser = parse_method)]
    pub methods: Vec<Method>,
    /// Side reported in the `p` field.
    #[arg(long, default_value = "two", value_parser = parse_side)]
    pub side: Side,
    /// dCRT resamples.
    #[arg(long, default_value_t = 10_000)]
    pub resamples: usize,
    /// Required with dcrt.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Include wall-clock fields (output is then not reproducible byte for byte).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FamilyArg {
    Bernoulli,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    Crispr,
    Gwas,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RuleArg {
    Min,
    OneSe,
}

impl From<RuleArg> for CvRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Min => CvRule::Min,
            RuleArg::OneSe => CvRule::OneSe,
        }
    }
}

/// CRISPR-model overrides shared by `simulate` and `bench`.
#[derive(Debug, Args)]
pub struct CrisprArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub gamma0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    /// Negative binomial size r.
    #[arg(long)]
    pub size: Option<f64>,
    /// Sample size per replicate.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub scenario: ScenarioArg,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// JSONL file: config, per-replicate p-values, summary records.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Optional CSV copy of the rejection-rate table.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Default: spacrt,dcrt,gcm,score_nb (crispr) or spacrt,dcrt,gcm (gwas).
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub methods: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_value = "0.005,0.05")]
    pub alphas: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub resamples: usize,
    #[command(flatten)]
    pub crispr: CrisprArgs,
    /// GWAS: number of sites.
    #[arg(long)]
    pub d: Option<usize>,
    /// GWAS: signal strength.
    #[arg(long)]
    pub eta: Option<f64>,
    /// GWAS: HMM states.
    #[arg(long)]
    pub states: Option<usize>,
    /// GWAS: HMM stay probability γ.
    #[arg(long)]
    pub stay: Option<f64>,
    /// GWAS: lasso λ selection rule.
    #[arg(long, value_enum, default_value = "min")]
    pub cv_rule: RuleArg,
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub seed: u64,
    /// Hypotheses timed per method.
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "spacrt,gcm,score_nb,dcrt", value_parser = parse_method)]
    pub methods: Vec<Method>,
    /// dCRT resample counts; one table row each.
    #[arg(long, value_delimiter = ',', default_value = "10000")]
    pub resamples: Vec<usize>,
    #[command(flatten)]
    pub crispr: CrisprArgs,
    /// Optional JSONL copy of the table.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: spacrt::Error| e.to_string())
}

fn parse_side(s: &str) -> std::result::Result<Side, String> {
    s.parse().map_err(|e: spacrt::Error| e.to_string())
}

/// X|Z fitter named on the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum XSpec {
    Logistic(Penalty),
    Poisson(Penalty),
    Hmm,
}

/// Y|Z fitter named on the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum YSpec {
    NegBin(SizeSpec),
    Poisson,
    Logistic,
    Krr(Kernel),
}

fn parse_penalty(s: &str) -> Result<Penalty> {
    let bad = || CliError::Config(format!("bad penalty '{s}' (expected l1=λ or l2=λ)"));
    let (kind, value) = s.split_once('=').ok_or_else(bad)?;
    let lambda: f64 = value.parse().map_err(|_| bad())?;
    if !(lambda >= 0.0) {
        return Err(bad());
    }
    match kind {
        "l1" => Ok(Penalty::L1(lambda)),
        "l2" => Ok(Penalty::L2(lambda)),
        _ => Err(bad()),
    }
}

pub fn parse_x_spec(s: &str) -> Result<XSpec> {
    let (name, rest) = s.split_once(':').map_or((s, None), |(a, b)| (a, Some(b)));
    let penalty = rest.map(parse_penalty).transpose()?.unwrap_or_default();
    match name {
        "logistic" => Ok(XSpec::Logistic(penalty)),
        "poisson" => Ok(XSpec::Poisson(penalty)),
        "hmm" if rest.is_none() => Ok(XSpec::Hmm),
        _ => Err(CliError::Config(format!("unknown X model '{s}'"))),
    }
}

pub fn parse_y_spec(s: &str) -> Result<YSpec> {
    let bad = || CliError::Config(format!("unknown Y model '{s}'"));
    let (name, rest) = s.split_once(':').map_or((s, None), |(a, b)| (a, Some(b)));
    match (name, rest) {
        ("negbin", None | Some("mom")) => Ok(YSpec::NegBin(SizeSpec::Mom)),
        ("negbin", Some("ml")) => Ok(YSpec::NegBin(SizeSpec::Ml)),
        ("negbin", Some(r)) => match r.parse::<f64>() {
            Ok(r) if r > 0.0 && r.is_finite() => Ok(YSpec::NegBin(SizeSpec::Fixed(r))),
            _ => Err(bad()),
        },
        ("poisson", None) => Ok(YSpec::Poisson),
        ("logistic", None) => Ok(YSpec::Logistic),
        ("krr", None | Some("gaussian")) => Ok(YSpec::Krr(Kernel::Gaussian { bandwidth: 1.0 })),
        ("krr", Some("linear")) => Ok(YSpec::Krr(Kernel::Linear)),
        ("krr", Some(g)) => match g
            .strip_prefix("gaussian=")
            .and_then(|h| h.parse::<f64>().ok())
        {
            Some(h) if h > 0.0 => Ok(YSpec::Krr(Kernel::Gaussian { bandwidth: h })),
            _ => Err(bad()),
        },
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_specs() {
        assert_eq!(
            parse_x_spec("logistic").unwrap(),
            XSpec::Logistic(Penalty::None)
        );
        assert_eq!(
            parse_x_spec("logistic:l1=0.1").unwrap(),
            XSpec::Logistic(Penalty::L1(0.1))
        );
        assert_eq!(parse_x_spec("hmm").unwrap(), XSpec::Hmm);
        assert!(parse_x_spec("logistic:l3=1").is_err());
        assert_eq!(
            parse_y_spec("negbin").unwrap(),
            YSpec::NegBin(SizeSpec::Mom)
        );
        assert_eq!(
            parse_y_spec("negbin:ml").unwrap(),
            YSpec::NegBin(SizeSpec::Ml)
        );
        assert_eq!(
            parse_y_spec("negbin:2.5").unwrap(),
            YSpec::NegBin(SizeSpec::Fixed(2.5))
        );
        assert!(parse_y_spec("negbin:-1").is_err());
        assert_eq!(
            parse_y_spec("krr:gaussian=0.5").unwrap(),
            YSpec::Krr(Kernel::Gaussian { bandwidth: 0.5 })
        );
        assert!(parse_y_spec("gamma").is_err());
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
