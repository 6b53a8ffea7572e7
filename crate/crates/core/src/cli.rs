//! Command-line front end. `run` does all the work so it can be driven from
//! tests; the binary only forwards process arguments and the exit code.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::engine::{effect_summary, EffectSummary, EngineError, SetupKind};
use crate::model::{ModelError, PopulationSpec, TestConfig};
use crate::rules::{
    compare, dilution_master_sides, dilution_verdict, dual_control_verdict, required_n, required_n_coefficient,
    RequiredN, RulesError, SimplifiedAssumptions,
};
use crate::sim::{run_calibration, CalibrationReport, EvaluationConfig, SimError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INAPPLICABLE: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Environment variable that overrides the evaluation seed.
pub const SEED_ENV: &str = "XDESIGN_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "xdesign",
    version,
    about = "Compare experiment setups for personalization-strategy A/B tests"
)]
struct Cli {
    /// Output format.
    #[arg(long, value_enum, default_value_t = OutputFormat::Table, global = true)]
    output: OutputFormat,
    /// Leave the timestamp out of the report manifest.
    #[arg(long, global = true)]
    no_timestamp: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Table,
}

#[derive(Debug, Args)]
struct SpecArgs {
    /// Population spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Test config (JSON with `alpha` and `power`); defaults to 0.05 and 0.8.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Actual effect, MDE and analysis groups per setup.
    Effects {
        #[command(flatten)]
        inputs: SpecArgs,
        /// Setups to evaluate; all applicable ones when omitted.
        #[arg(long = "setup")]
        setups: Vec<SetupKind>,
    },
    /// Which of two setups is superior.
    Compare {
        #[command(flatten)]
        inputs: SpecArgs,
        /// First setup (1-4 or a name such as qualified-only)
        #[arg(long)]
        a: SetupKind,
        /// Second setup
        #[arg(long)]
        b: SetupKind,
    },
    /// Whether to exclude never-qualifying users (qualified-only vs all-samples).
    DilutionCheck {
        #[command(flatten)]
        inputs: SpecArgs,
    },
    /// Whether dual control beats the qualified-only setup.
    DualControlCheck {
        #[command(flatten)]
        inputs: SpecArgs,
    },
    /// Users per group needed for dual control to win, under equal sizes and variances.
    RequiredN {
        /// Shared response variance.
        #[arg(long)]
        sigma2: f64,
        /// Difference of the two strategies' incremental effects.
        #[arg(long, allow_hyphen_values = true)]
        delta: f64,
        /// Two-sided significance level
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Minimum power
        #[arg(long, default_value_t = 0.8)]
        power: f64,
    },
    /// Simulation check of the closed forms.
    Validate {
        /// Evaluation config (JSON); defaults apply to missing fields.
        #[arg(long)]
        eval_config: Option<PathBuf>,
        /// Test config (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Setups to evaluate; all four when omitted.
        #[arg(long = "setup")]
        setups: Vec<SetupKind>,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the coverage table here.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Re-read a saved report and recompute its aggregate instead of simulating.
        #[arg(long, conflicts_with_all = ["eval_config", "config", "setups"])]
        from_report: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Inapplicable(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Inapplicable(_) => EXIT_INAPPLICABLE,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Inapplicable(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Model(m) => m.into(),
            EngineError::Inapplicable { .. } => CliError::Inapplicable(e.to_string()),
        }
    }
}

impl From<RulesError> for CliError {
    fn from(e: RulesError) -> Self {
        match e {
            RulesError::Engine(e) => e.into(),
            RulesError::Inapplicable(_) => CliError::Inapplicable(e.to_string()),
            RulesError::Mismatch => CliError::Input(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Engine(e) => e.into(),
            SimError::InvalidConfig(_) => CliError::Input(e.to_string()),
            SimError::TooFewSamples(_) | SimError::Bracket { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

/// Provenance attached to every JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Value,
    pub config: Value,
    pub seed: Option<u64>,
    pub version: String,
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub manifest: RunManifest,
    pub payload: T,
}

struct Output {
    command: &'static str,
    inputs: Value,
    config: Value,
    seed: Option<u64>,
    payload: Value,
    table: String,
    warnings: Vec<String>,
}

/// Runs the tool with `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    match execute(&cli, env_seed.as_deref()) {
        Ok(o) => {
            for w in &o.warnings {
                let _ = writeln!(err, "warning: {w}");
            }
            let text = match cli.output {
                OutputFormat::Table => o.table.clone(),
                OutputFormat::Json => {
                    let manifest = manifest(&o, cli.no_timestamp);
                    let mut s = serde_json::to_string_pretty(&Report {
                        manifest,
                        payload: &o.payload,
                    })
                    .expect("report serializes");
                    s.push('\n');
                    s
                }
            };
            match out.write_all(text.as_bytes()) {
                Ok(()) => EXIT_OK,
                Err(e) => {
                    let _ = writeln!(err, "error: writing output: {e}");
                    EXIT_INPUT
                }
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.code()
        }
    }
}

fn manifest(o: &Output, no_timestamp: bool) -> RunManifest {
    RunManifest {
        command: o.command.to_string(),
        inputs: o.inputs.clone(),
        config: o.config.clone(),
        seed: o.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: (!no_timestamp).then(|| chrono::Utc::now().to_rfc3339()),
    }
}

fn execute(cli: &Cli, env_seed: Option<&str>) -> Result<Output, CliError> {
    match &cli.command {
        Command::Effects { inputs, setups } => cmd_effects(inputs, setups),
        Command::Compare { inputs, a, b } => cmd_compare(inputs, *a, *b),
        Command::DilutionCheck { inputs } => cmd_dilution(inputs),
        Command::DualControlCheck { inputs } => cmd_dual_control(inputs),
        Command::RequiredN {
            sigma2,
            delta,
            alpha,
            power,
        } => cmd_required_n(*sigma2, *delta, *alpha, *power),
        Command::Validate {
            eval_config,
            config,
            setups,
            report,
            table,
            from_report,
        } => match from_report {
            Some(path) => cmd_reaggregate(path),
            None => cmd_validate(
                eval_config.as_deref(),
                config.as_deref(),
                setups,
                env_seed,
                cli,
                report,
                table,
            ),
        },
    }
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{what} {}: {e}", path.display())))
}

fn load_spec(path: &Path) -> Result<PopulationSpec, CliError> {
    let spec: PopulationSpec = read_json(path, "population spec")?;
    let violations = spec.validate();
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(CliError::Input(format!(
            "population spec {}: {}",
            path.display(),
            list.join("; ")
        )));
    }
    Ok(spec)
}

fn load_config(path: Option<&Path>) -> Result<TestConfig, CliError> {
    let cfg = match path {
        Some(p) => read_json(p, "test config")?,
        None => TestConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_inputs(inputs: &SpecArgs) -> Result<(PopulationSpec, TestConfig, Value), CliError> {
    let spec = load_spec(&inputs.spec)?;
    let cfg = load_config(inputs.config.as_deref())?;
    let files = json!({ "spec": inputs.spec, "config": inputs.config });
    Ok((spec, cfg, files))
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("serializable")
}

/// Ten significant digits, switching to scientific notation for very large
/// or very small magnitudes.
fn num(x: f64) -> String {
    let a = x.abs();
    if !x.is_finite() {
        format!("{x}")
    } else if a == 0.0 || (1e-4..1e9).contains(&a) {
        let decimals = if a == 0.0 {
            9
        } else {
            (9 - a.log10().floor() as i64).max(0) as usize
        };
        format!("{x:.decimals$}")
    } else {
        format!("{x:.9e}")
    }
}

fn summary_table(summaries: &[EffectSummary]) -> String {
    let mut t = String::new();
    let _ = writeln!(
        t,
        "{:<18} {:>18} {:>18} {:>18}",
        "setup", "delta", "theta*", "sigma_dbar"
    );
    for s in summaries {
        let _ = writeln!(
            t,
            "{:<18} {:>18} {:>18} {:>18}",
            s.setup.name(),
            num(s.delta),
            num(s.theta_star),
            num(s.sigma_dbar)
        );
    }
    for s in summaries {
        let _ = writeln!(t, "\n{} analysis groups", s.setup.name());
        let _ = writeln!(t, "  {:<6} {:>16} {:>18} {:>18}", "group", "size", "mean", "variance");
        for g in &s.groups {
            let _ = writeln!(
                t,
                "  {:<6} {:>16} {:>18} {:>18}",
                g.label,
                num(g.size),
                num(g.mean),
                num(g.var)
            );
        }
    }
    t
}

fn cmd_effects(inputs: &SpecArgs, setups: &[SetupKind]) -> Result<Output, CliError> {
    let (spec, cfg, files) = load_inputs(inputs)?;
    let explicit = !setups.is_empty();
    let chosen: Vec<SetupKind> = if explicit {
        setups.to_vec()
    } else {
        SetupKind::ALL.to_vec()
    };
    let mut summaries = Vec::new();
    let mut skipped = Vec::new();
    let mut warnings = Vec::new();
    for setup in chosen {
        match effect_summary(setup, &spec, &cfg) {
            Ok(s) => summaries.push(s),
            Err(e @ EngineError::Inapplicable { .. }) if !explicit => {
                warnings.push(format!("skipping {e}"));
                skipped.push(json!({ "setup": setup, "reason": e.to_string() }));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Output {
        command: "effects",
        inputs: files,
        config: to_value(&cfg),
        seed: None,
        table: summary_table(&summaries),
        payload: json!({ "summaries": summaries, "skipped": skipped }),
        warnings,
    })
}

fn cmd_compare(inputs: &SpecArgs, a: SetupKind, b: SetupKind) -> Result<Output, CliError> {
    let (spec, cfg, files) = load_inputs(inputs)?;
    let sa = effect_summary(a, &spec, &cfg)?;
    let sb = effect_summary(b, &spec, &cfg)?;
    let v = compare(&sa, &sb)?;
    let mut t = summary_table(&[sa.clone(), sb.clone()]);
    let winner = v.winner.map_or("inconclusive".to_string(), |w| w.name().to_string());
    let _ = writeln!(t, "\nwinner: {winner}\ncriterion: {}", v.criterion);
    let _ = writeln!(t, "delta gap: {}\ntheta* gap: {}", num(v.delta_gap), num(v.theta_gap));
    let _ = writeln!(
        t,
        "sign normalized: {}\nopposite signs: {}",
        v.sign_normalized, v.opposite_signs
    );
    Ok(Output {
        command: "compare",
        inputs: files,
        config: to_value(&cfg),
        seed: None,
        table: t,
        payload: json!({ "a": sa, "b": sb, "verdict": v }),
        warnings: vec![],
    })
}

fn cmd_dilution(inputs: &SpecArgs) -> Result<Output, CliError> {
    let (spec, cfg, files) = load_inputs(inputs)?;
    let v = dilution_verdict(&spec, &cfg)?;
    let (lhs, rhs) = dilution_master_sides(&spec, &cfg)?;
    let mut t = String::new();
    let _ = writeln!(
        t,
        "eta: {}\nxi: {}\nz: {}",
        num(v.terms.eta),
        num(v.terms.xi),
        num(v.terms.z)
    );
    let _ = writeln!(
        t,
        "qualified-only delta: {}\nqualified-only theta*: {}",
        num(v.delta_qualified),
        num(v.theta_qualified)
    );
    let _ = writeln!(t, "criterion-2 inequality: {} > {}", num(lhs), num(rhs));
    if let Some((l, r)) = v.general_test {
        let _ = writeln!(t, "general test: {} > {}", num(l), num(r));
    }
    let verdict = if v.undiluted_superior {
        "qualified-only (exclude group 0)"
    } else {
        "all-samples (keep group 0)"
    };
    let _ = writeln!(t, "rule: {}\nverdict: {verdict}", v.rule.name());
    Ok(Output {
        command: "dilution-check",
        inputs: files,
        config: to_value(&cfg),
        seed: None,
        table: t,
        payload: json!({ "verdict": v, "master_inequality": { "lhs": lhs, "rhs": rhs } }),
        warnings: if v.sign_normalized {
            vec!["negative contrast: analysis groups swapped".into()]
        } else {
            vec![]
        },
    })
}

fn cmd_dual_control(inputs: &SpecArgs) -> Result<Output, CliError> {
    let (spec, cfg, files) = load_inputs(inputs)?;
    let v = dual_control_verdict(&spec, &cfg)?;
    let mut t = String::new();
    let _ = writeln!(t, "lhs: {}\nrhs: {}", num(v.lhs), num(v.rhs));
    let _ = writeln!(t, "dual control superior: {}", v.dual_control_superior);
    let winner = v
        .comparison
        .winner
        .map_or("inconclusive".to_string(), |w| w.name().to_string());
    let _ = writeln!(t, "winner: {winner}\ncriterion: {}", v.comparison.criterion);
    Ok(Output {
        command: "dual-control-check",
        inputs: files,
        config: to_value(&cfg),
        seed: None,
        table: t,
        payload: to_value(&v),
        warnings: vec![],
    })
}

fn cmd_required_n(sigma2: f64, delta: f64, alpha: f64, power: f64) -> Result<Output, CliError> {
    let cfg = TestConfig::new(alpha, power)?;
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(CliError::Input(format!(
            "--sigma2 must be finite and positive, got {sigma2}"
        )));
    }
    if !delta.is_finite() {
        return Err(CliError::Input(format!("--delta must be finite, got {delta}")));
    }
    let a = SimplifiedAssumptions {
        sigma_sq_s: sigma2,
        n_common: 1.0,
        delta_diff: delta,
    };
    let n = required_n(&a, &cfg)?;
    let coefficient = required_n_coefficient(&cfg);
    let (ceil, warnings) = match n {
        RequiredN::Finite(v) => (Some(v.ceil()), vec![]),
        RequiredN::Infinite => (
            None,
            vec!["delta = 0: dual control never wins, required n is infinite".into()],
        ),
    };
    let mut t = String::new();
    let _ = writeln!(t, "coefficient: {}", num(coefficient));
    match ceil {
        Some(c) => {
            let _ = writeln!(t, "required n per user group: {} (at least {c} users)", num(n.value()));
        }
        None => {
            let _ = writeln!(t, "required n per user group: infinite");
        }
    }
    Ok(Output {
        command: "required-n",
        inputs: json!({}),
        config: json!({ "sigma2": sigma2, "delta": delta, "alpha": alpha, "power": power }),
        seed: None,
        table: t,
        payload: json!({ "coefficient": coefficient, "required_n": n, "ceil": ceil }),
        warnings,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn cmd_validate(
    eval_path: Option<&Path>,
    cfg_path: Option<&Path>,
    setups: &[SetupKind],
    env_seed: Option<&str>,
    cli: &Cli,
    report_path: &Option<PathBuf>,
    table_path: &Option<PathBuf>,
) -> Result<Output, CliError> {
    let mut eval: EvaluationConfig = match eval_path {
        Some(p) => read_json(p, "evaluation config")?,
        None => EvaluationConfig::default(),
    };
    if let Some(s) = env_seed {
        eval.seed = s
            .trim()
            .parse()
            .map_err(|_| CliError::Input(format!("{SEED_ENV} must be an unsigned 64-bit integer, got '{s}'")))?;
    }
    let cfg = load_config(cfg_path)?;
    let setups: Vec<SetupKind> = if setups.is_empty() {
        SetupKind::ALL.to_vec()
    } else {
        setups.to_vec()
    };
    let report = run_calibration(&eval, &setups, &cfg)?;
    let table = report.table();
    let failures: usize = report.aggregate.iter().map(|a| a.failures).sum();

    let mut out = Output {
        command: "validate",
        inputs: json!({ "eval_config": eval_path, "config": cfg_path }),
        config: json!({ "evaluation": eval, "test": cfg }),
        seed: Some(eval.seed),
        table,
        payload: to_value(&report),
        warnings: if failures > 0 {
            vec![format!("{failures} evaluation(s) recorded an error")]
        } else {
            vec![]
        },
    };
    if let Some(p) = report_path {
        let doc = Report {
            manifest: manifest(&out, cli.no_timestamp),
            payload: &report,
        };
        write_file(
            p,
            &(serde_json::to_string_pretty(&doc).expect("report serializes") + "\n"),
        )?;
    }
    if let Some(p) = table_path {
        write_file(p, &out.table)?;
    }
    out.payload = to_value(&report);
    Ok(out)
}

fn cmd_reaggregate(path: &Path) -> Result<Output, CliError> {
    let doc: Report<CalibrationReport> = read_json(path, "calibration report")?;
    let mut report = doc.payload;
    report.recompute_aggregate();
    Ok(Output {
        command: "validate",
        inputs: json!({ "from_report": path }),
        config: doc.manifest.config,
        seed: doc.manifest.seed,
        table: report.table(),
        payload: to_value(&report),
        warnings: vec![],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_keep_ten_significant_digits() {
        assert_eq!(num(0.1120634087245187), "0.1120634087");
        assert_eq!(num(5066000.123456), "5066000.123");
        assert_eq!(num(0.0), "0.000000000");
        assert_eq!(num(1.5e-7), "1.500000000e-7");
        assert_eq!(num(-2.5), "-2.500000000");
    }

    #[test]
    fn usage_errors_exit_with_input_code() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run(["xdesign", "effects"], &mut out, &mut err), EXIT_INPUT);
        assert_eq!(run(["xdesign", "--help"], &mut out, &mut err), EXIT_OK);
    }
}
