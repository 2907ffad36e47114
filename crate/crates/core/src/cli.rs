//! Command-line front end: `check`, `solve` and `trace`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::calculus::EquilibriumRecord;
use crate::economy::{build_ces_economy, verify_hypotheses, ExchangeEconomySpec, SharedModel};
use crate::error::{Error, Result};
use crate::fixtures::{fixture, is_fixture};
use crate::homotopy::write_trace_csv;
use crate::solver::find_equilibria;
use crate::verifier::{render_text, run_theorem_check, TheoremConfig, Verdict};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "eqindex", version, about = "Index-sum verification for exchange economies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sampled checks of Walras' law, homogeneity, the lower bound and boundary behaviour
    Check(CommonArgs),
    /// Locate equilibria and their indices
    Solve(CommonArgs),
    /// Full pipeline including the homotopy trace
    Trace(CommonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Both,
}

impl Format {
    fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }

    fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// JSON config file, or the name of a built-in fixture
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Initial truncation level of the price sphere
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Newton residual tolerance
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads (0 = all cores)
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Both)]
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EconomySource {
    Fixture(String),
    Spec(ExchangeEconomySpec),
}

/// Contents of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub economy: EconomySource,
    #[serde(default)]
    pub settings: TheoremConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        cfg.settings.validate()?;
        Ok(cfg)
    }

    /// A path to a config file, or a fixture name.
    pub fn load(source: &str) -> Result<Self> {
        let path = Path::new(source);
        if path.is_file() {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            return Self::parse(&text);
        }
        if is_fixture(source) {
            return Ok(Self {
                version: CONFIG_VERSION,
                economy: EconomySource::Fixture(source.to_string()),
                settings: TheoremConfig::default(),
            });
        }
        Err(Error::Config(format!(
            "'{source}' is neither a readable file nor a built-in fixture"
        )))
    }

    pub fn model(&self) -> Result<SharedModel> {
        match &self.economy {
            EconomySource::Fixture(name) => fixture(name),
            EconomySource::Spec(spec) => Ok(Arc::new(build_ces_economy(spec)?)),
        }
    }

    fn apply(&mut self, args: &CommonArgs) -> Result<()> {
        let s = &mut self.settings;
        if let Some(seed) = args.seed {
            s.seed = seed;
        }
        if let Some(eps) = args.epsilon {
            s.epsilon = eps;
        }
        if let Some(tol) = args.tol {
            s.newton_tol = tol;
        }
        if let Some(jobs) = args.jobs {
            s.jobs = jobs;
        }
        s.validate()
    }
}

#[derive(Debug, Serialize)]
struct SolveOutput<'a> {
    model: &'a str,
    status: &'a str,
    equilibria: &'a [EquilibriumRecord],
    index_sum: i32,
    error: Option<String>,
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s.into_bytes()
}

fn equilibria_csv(records: &[EquilibriumRecord], n: usize) -> Vec<u8> {
    let mut out = Vec::new();
    let mut header: Vec<String> = (1..=n).map(|i| format!("p_{i}")).collect();
    header.extend(["residual".into(), "g".into(), "index".into()]);
    let _ = writeln!(out, "{}", header.join(","));
    for r in records {
        let mut row: Vec<String> = r.price.as_slice().iter().map(|v| v.to_string()).collect();
        row.push(r.residual.to_string());
        row.push(r.g_value.to_string());
        row.push(r.index.to_string());
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

fn cmd_check(cfg: &RunConfig, args: &CommonArgs) -> Result<i32> {
    let model = cfg.model()?;
    let report = verify_hypotheses(model.as_ref(), cfg.settings.sample_count, cfg.settings.seed)?;
    write_file(&args.out, "check_report.json", &json_bytes(&report))?;
    let ok = report.all_passed();
    println!(
        "{}: walras {} homogeneity {} lower_bound {} boundary_blowup {}",
        report.model,
        report.passed.walras,
        report.passed.homogeneity,
        report.passed.lower_bound,
        report.passed.boundary_blowup
    );
    Ok(if ok { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_solve(cfg: &RunConfig, args: &CommonArgs) -> Result<i32> {
    let model = cfg.model()?;
    let n = model.dimension();
    let s = &cfg.settings;
    let (records, status, error) = match find_equilibria(model.as_ref(), s.search_epsilon, &s.solver()) {
        Ok(r) => (r, "ok", None),
        Err(e @ Error::NonRegularEquilibrium { .. }) => (Vec::new(), "non_regular", Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let index_sum = records.iter().map(|r| r.index).sum();
    if args.format.json() {
        let out = SolveOutput {
            model: model.label(),
            status,
            equilibria: &records,
            index_sum,
            error: error.clone(),
        };
        write_file(&args.out, "equilibria.json", &json_bytes(&out))?;
    }
    if args.format.csv() {
        write_file(&args.out, "equilibria.csv", &equilibria_csv(&records, n))?;
    }
    if let Some(e) = error {
        eprintln!("{}: {status}: {e}", model.label());
        return Ok(EXIT_FAILURE);
    }
    for r in &records {
        println!("{:?} index {:+}", r.price.as_slice(), r.index);
    }
    println!("{} equilibria, index sum {index_sum:+}", records.len());
    Ok(EXIT_OK)
}

fn cmd_trace(cfg: &RunConfig, args: &CommonArgs) -> Result<i32> {
    let model = cfg.model()?;
    let report = run_theorem_check(model, &cfg.settings);
    if args.format.csv() {
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &report.paths).expect("writing to memory");
        write_file(&args.out, "trace.csv", &buf)?;
    }
    if args.format.json() {
        write_file(&args.out, "trace_summary.json", &json_bytes(&report.trace_summary()))?;
        write_file(&args.out, "theorem_report.json", &json_bytes(&report))?;
    }
    let text = render_text(&report);
    write_file(&args.out, "theorem_report.txt", text.as_bytes())?;
    print!("{text}");
    Ok(if report.verdict == Verdict::Verified {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}

fn dispatch(cli: Cli) -> Result<i32> {
    let (Command::Check(args) | Command::Solve(args) | Command::Trace(args)) = &cli.command;
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply(args)?;
    fs::create_dir_all(&args.out)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", args.out.display())))?;
    match &cli.command {
        Command::Check(_) => cmd_check(&cfg, args),
        Command::Solve(_) => cmd_solve(&cfg, args),
        Command::Trace(_) => cmd_trace(&cfg, args),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e @ (Error::Config(_) | Error::InvalidSpec(_))) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rejects_unknown_keys_and_versions() {
        assert!(RunConfig::parse(r#"{"version": 1, "economy": "ces-3eq"}"#).is_ok());
        assert!(RunConfig::parse(r#"{"version": 2, "economy": "ces-3eq"}"#).is_err());
        assert!(RunConfig::parse(r#"{"version": 1, "economy": "ces-3eq", "extra": 0}"#).is_err());
        assert!(RunConfig::parse(r#"{"version": 1, "economy": "ces-3eq", "settings": {"sed": 1}}"#).is_err());
    }

    #[test]
    fn inline_economy_parses() {
        let cfg = RunConfig::parse(
            r#"{"version": 1, "economy": {"agents": [
                {"weights": [1, 1], "rho": 0, "endowment": [1, 0]},
                {"weights": [1, 1], "rho": 0, "endowment": [0, 1]}
            ]}, "settings": {"seed": 7}}"#,
        )
        .unwrap();
        assert_eq!(cfg.settings.seed, 7);
        assert_eq!(cfg.model().unwrap().dimension(), 2);
    }

    #[test]
    fn unknown_source_is_usage_error() {
        assert_eq!(run(["eqindex", "check", "--config", "/no/such/file.json"]), EXIT_USAGE);
        assert_eq!(run(["eqindex", "frobnicate"]), EXIT_USAGE);
    }
}
