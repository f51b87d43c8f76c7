//! Command-line front end: JSON run configuration in, CSV tables and a JSON
//! summary out.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, HPoint};
use crate::kernel::KernelParams;
use crate::nonlocal::{self, Bump, ProfileFunction};
use crate::potential::{self, green_bound_form, green_estimate, green_pair_grid};
use crate::quad::QuadSpec;
use crate::sim::{Functional, PointFn, SimConfig, Simulator};
use crate::verify::{self, Profile, Status};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable overriding the output directory.
pub const OUT_ENV: &str = "HJL_OUT";

#[derive(Debug, Parser)]
#[command(name = "halfspace-jump-lab", version, about = "Quadrature and Monte Carlo checks for boundary-degenerate jump kernels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Caps the number of worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Ten times fewer Monte Carlo paths.
    #[arg(long, global = true)]
    pub quick: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Tabulates C(alpha, p) over a p-grid.
    Constant,
    /// Evaluates the principal-value operator on a profile.
    Pvop,
    /// Runs Monte Carlo path functionals.
    Simulate,
    /// Estimates Green function values over point pairs.
    Green,
    /// Estimates occupation integrals and their height exponents.
    Occupation,
    /// Runs the acceptance criteria.
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Constant => "constant",
            Command::Pvop => "pvop",
            Command::Simulate => "simulate",
            Command::Green => "green",
            Command::Occupation => "occupation",
            Command::Verify => "verify",
        }
    }
}

fn default_quad() -> QuadSpec {
    QuadSpec::operator()
}

fn default_out() -> PathBuf {
    PathBuf::from("hjl-out")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: KernelParams,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default = "default_quad")]
    pub quad: QuadSpec,
    #[serde(default)]
    pub constant: Option<ConstantBlock>,
    #[serde(default)]
    pub pvop: Option<PvopBlock>,
    #[serde(default)]
    pub simulate: Option<SimulateBlock>,
    #[serde(default)]
    pub green: Option<GreenBlock>,
    #[serde(default)]
    pub occupation: Option<OccupationBlock>,
    #[serde(default)]
    pub verify: Option<VerifyBlock>,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantBlock {
    pub p_grid: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    Power { p: f64 },
    TruncatedPower { p: f64, r: f64 },
    SmoothBump { a: f64, b: f64, height: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvopBlock {
    pub profile: ProfileSpec,
    /// Evaluation points; each is a full coordinate vector.
    pub points: Vec<HPoint>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalSpec {
    ExitTime,
    Absorbed,
    ExitInto { target: BoxDomain },
    /// `x_d^p` at the terminal point.
    TerminalPower { p: f64 },
    /// `int (Y^d)^gamma dt`.
    OccupationPower { gamma: f64 },
}

impl FunctionalSpec {
    fn build(&self) -> Functional {
        match self {
            FunctionalSpec::ExitTime => Functional::ExitTime,
            FunctionalSpec::Absorbed => Functional::Absorbed,
            FunctionalSpec::ExitInto { target } => Functional::ExitInto(target.clone()),
            FunctionalSpec::TerminalPower { p } => {
                let p = *p;
                let f: PointFn = Arc::new(move |x: &HPoint| if x.height() > 0.0 { x.height().powf(p) } else { 0.0 });
                Functional::Terminal(f)
            }
            FunctionalSpec::OccupationPower { gamma } => {
                let g = *gamma;
                let f: PointFn = Arc::new(move |x: &HPoint| x.height().powf(g));
                Functional::Occupation(f)
            }
        }
    }

    fn label(&self) -> String {
        match self {
            FunctionalSpec::ExitTime => "exit_time".into(),
            FunctionalSpec::Absorbed => "absorbed".into(),
            FunctionalSpec::ExitInto { .. } => "exit_into".into(),
            FunctionalSpec::TerminalPower { p } => format!("terminal_power({p})"),
            FunctionalSpec::OccupationPower { gamma } => format!("occupation_power({gamma})"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpBlock {
    pub file: PathBuf,
    #[serde(default)]
    pub gzip: bool,
    pub n_paths: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub x0: HPoint,
    #[serde(default = "halfspace")]
    pub domain: BoxDomain,
    pub n_paths: u64,
    pub functionals: Vec<FunctionalSpec>,
    #[serde(default)]
    pub dump: Option<DumpBlock>,
}

fn halfspace() -> BoxDomain {
    BoxDomain::HalfSpace
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenBlock {
    /// Point pairs `(x, y)`; defaults to the twelve-pair grid.
    #[serde(default)]
    pub pairs: Option<Vec<(HPoint, HPoint)>>,
    pub n_paths: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupationBlock {
    pub gammas: Vec<f64>,
    pub heights: Vec<f64>,
    #[serde(rename = "R")]
    pub big_r: f64,
    pub n_paths: u64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    /// Criterion ids to run; all when absent.
    #[serde(default)]
    pub criteria: Option<Vec<u32>>,
}

impl RunConfig {
    /// Parses a configuration, reporting the JSON path of the first error.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Usage(format!("invalid config at `{}`: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let schema = |at: &str, e: Error| Error::Usage(format!("invalid config at `{at}`: {e}"));
        self.kernel.clone().validate().map_err(|e| schema("kernel", e))?;
        self.sim.validate().map_err(|e| schema("sim", e))?;
        self.quad.validate().map_err(|e| schema("quad", e))?;
        Ok(())
    }

    /// Configuration used by `verify` when no file is given.
    pub fn verify_default() -> Self {
        Self {
            kernel: KernelParams::new(1.5, 1, [0.0; 4]),
            sim: SimConfig::default(),
            quad: default_quad(),
            constant: None,
            pvop: None,
            simulate: None,
            green: None,
            occupation: None,
            verify: Some(VerifyBlock::default()),
            output_dir: default_out(),
        }
    }
}

/// Result of one subcommand: CSV rows plus a JSON summary.
#[derive(Clone, Debug)]
pub struct Report {
    pub command: &'static str,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub summary: Value,
    /// `false` when the run should exit with a nonzero status.
    pub success: bool,
}

impl Report {
    fn new(command: &'static str, header: &[&str]) -> Self {
        Self {
            command,
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
            summary: json!({}),
            success: true,
        }
    }

    /// Writes `<command>.csv` and `<command>_summary.json` into `dir`.
    pub fn write(&self, dir: &Path, config: &RunConfig) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{}.csv", self.command));
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&csv_path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        let json_path = dir.join(format!("{}_summary.json", self.command));
        let full = json!({
            "command": self.command,
            "version": VERSION,
            "config": config,
            "success": self.success,
            "summary": self.summary,
        });
        std::fs::write(&json_path, serde_json::to_string_pretty(&full)? + "\n")?;
        Ok((csv_path, json_path))
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// `C(alpha, p)` over the configured grid. Rows failing individually are
/// recorded and the sweep continues.
pub fn cmd_constant(cfg: &RunConfig) -> Result<Report> {
    let block = cfg
        .constant
        .as_ref()
        .ok_or_else(|| Error::Usage("missing `constant` block".into()))?;
    if block.p_grid.is_empty() {
        return Err(Error::Usage("`constant.p_grid` is empty".into()));
    }
    let k = &cfg.kernel;
    let mut rep = Report::new("constant", &["p", "C", "error_estimate", "flag", "message"]);
    let mut ok_rows: Vec<(f64, f64)> = Vec::new();
    let mut failures = 0;
    let spec = QuadSpec::constants();
    for &p in &block.p_grid {
        match nonlocal::constant_c_with(k, p, &spec) {
            Ok(r) => {
                let flag = if r.value.abs() < 1e-8 {
                    "zero"
                } else if r.value < 0.0 {
                    "negative"
                } else {
                    "positive"
                };
                ok_rows.push((p, r.value));
                rep.rows.push(vec![num(p), num(r.value), num(r.error), flag.into(), String::new()]);
            }
            Err(e) => {
                failures += 1;
                let flag = match e {
                    Error::ParameterOutOfRange(_) => "parameter_out_of_range",
                    _ => "error",
                };
                rep.rows.push(vec![num(p), String::new(), String::new(), flag.into(), e.to_string()]);
            }
        }
    }
    let mut positive: Vec<(f64, f64)> = ok_rows.iter().copied().filter(|(p, _)| *p > k.p_lower()).collect();
    positive.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone = positive.windows(2).all(|w| w[1].1 > w[0].1);
    let signs_ok = ok_rows.iter().all(|(p, c)| {
        let (lo, hi) = if k.alpha > 1.0 { (0.0, k.alpha - 1.0) } else { (k.alpha - 1.0, 0.0) };
        if *p > lo && *p < hi {
            *c < 0.0
        } else if *p > k.p_lower() {
            *c > 0.0
        } else {
            true
        }
    });
    rep.summary = json!({
        "rows": block.p_grid.len(),
        "failed_rows": failures,
        "increasing_above_lower_root": monotone,
        "sign_chart_consistent": signs_ok,
    });
    Ok(rep)
}

fn build_profile(spec: &ProfileSpec) -> Result<ProfileFunction> {
    Ok(match spec {
        ProfileSpec::Power { p } => ProfileFunction::Power { p: *p },
        ProfileSpec::TruncatedPower { p, r } => ProfileFunction::TruncatedPower { p: *p, r: *r },
        ProfileSpec::SmoothBump { a, b, height } => ProfileFunction::Bump(Bump::smooth(*a, *b, *height)?),
    })
}

/// Principal-value operator at each configured point. For powers the
/// closed form `C x_d^{p-alpha}` and a tolerance column are included; for
/// truncated powers the operator is evaluated in the form `L h_{p,R}`.
pub fn cmd_pvop(cfg: &RunConfig) -> Result<Report> {
    let block = cfg.pvop.as_ref().ok_or_else(|| Error::Usage("missing `pvop` block".into()))?;
    if block.points.is_empty() {
        return Err(Error::Usage("`pvop.points` is empty".into()));
    }
    let k = &cfg.kernel;
    let profile = build_profile(&block.profile)?;
    profile.validate(k)?;
    let mut header = vec!["point", "value", "quadrature_error", "near_field", "correction", "far_field"];
    header.extend(["closed_form", "tolerance", "within_tolerance", "message"]);
    let mut rep = Report::new("pvop", &header);
    let c = match &block.profile {
        ProfileSpec::Power { p } => Some(nonlocal::constant_c(k, *p)?),
        _ => None,
    };
    let mut all_within = true;
    let mut failures = 0;
    for x in &block.points {
        if x.dim() != k.d {
            return Err(Error::Usage(format!("point {x:?} does not have dimension {}", k.d)));
        }
        let point = x.coords().iter().map(|v| num(*v)).collect::<Vec<_>>().join(" ");
        let res = match &block.profile {
            ProfileSpec::TruncatedPower { p, r } => {
                nonlocal::pv_apply_truncated(k, *p, *r, x, &cfg.quad).map(|v| (v, None))
            }
            _ => nonlocal::pv_apply(k, &profile, x, &cfg.quad).map(|r| (r.value, Some(r))),
        };
        match res {
            Ok((value, parts)) => {
                let mut row = vec![point, num(value)];
                match parts {
                    Some(r) => row.extend([
                        num(r.quadrature_error),
                        num(r.decomposition.near_field),
                        num(r.decomposition.correction),
                        num(r.decomposition.far_field),
                    ]),
                    None => row.extend(std::iter::repeat_n(String::new(), 4)),
                }
                if let (Some(c), ProfileSpec::Power { p }) = (c, &block.profile) {
                    let scale = x.height().powf(p - k.alpha);
                    let closed = c * scale;
                    let tol = 1e-4 * c.abs().max(1.0) * scale;
                    let within = (value - closed).abs() <= tol;
                    all_within &= within;
                    row.extend([num(closed), num(tol), within.to_string(), String::new()]);
                } else {
                    row.extend([String::new(), String::new(), String::new(), String::new()]);
                }
                rep.rows.push(row);
            }
            Err(e) => {
                failures += 1;
                let mut row = vec![point];
                row.extend(std::iter::repeat_n(String::new(), 8));
                row.push(e.to_string());
                rep.rows.push(row);
            }
        }
    }
    rep.summary = json!({
        "points": block.points.len(),
        "failed_points": failures,
        "closed_form_constant": c,
        "all_within_tolerance": c.map(|_| all_within),
    });
    rep.success = failures == 0;
    Ok(rep)
}

/// Monte Carlo path functionals from one start point.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Report> {
    let block = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Usage("missing `simulate` block".into()))?;
    if block.n_paths == 0 {
        return Err(Error::Usage("`simulate.n_paths` must be positive".into()));
    }
    if block.functionals.is_empty() {
        return Err(Error::Usage("`simulate.functionals` is empty".into()));
    }
    let sim = Simulator::new(&cfg.kernel, &cfg.sim)?;
    let fs: Vec<Functional> = block.functionals.iter().map(|f| f.build()).collect();
    let est = sim.estimate_many(&block.x0, &block.domain, &fs, block.n_paths)?;
    let mut rep = Report::new(
        "simulate",
        &["functional", "mean", "std_error", "n_samples", "n_excluded", "ci95_lo", "ci95_hi"],
    );
    for (f, e) in block.functionals.iter().zip(&est) {
        rep.rows.push(vec![
            f.label(),
            num(e.mean),
            num(e.std_error),
            e.n_samples.to_string(),
            e.n_excluded.to_string(),
            num(e.ci95.0),
            num(e.ci95.1),
        ]);
    }
    if let Some(d) = &block.dump {
        sim.dump_paths(&d.file, d.gzip, &block.x0, &block.domain, d.n_paths)?;
    }
    rep.summary = json!({ "envelope": sim.envelope(), "estimates": est });
    Ok(rep)
}

/// Green function estimates against the two-sided bound form.
pub fn cmd_green(cfg: &RunConfig) -> Result<Report> {
    let block = cfg.green.as_ref().ok_or_else(|| Error::Usage("missing `green` block".into()))?;
    if block.n_paths < 2 {
        return Err(Error::Usage("`green.n_paths` must be at least 2".into()));
    }
    let k = &cfg.kernel;
    let pairs = match &block.pairs {
        Some(p) if p.is_empty() => return Err(Error::Usage("`green.pairs` is empty".into())),
        Some(p) => p.clone(),
        None if k.d >= 2 => green_pair_grid(k.d),
        None => return Err(Error::Usage("the default pair grid needs d >= 2".into())),
    };
    let sim = Simulator::new(k, &cfg.sim)?;
    let mut rep = Report::new("green", &["x", "y", "G", "std_error", "ci95_lo", "ci95_hi", "bound_form", "ratio"]);
    let mut ratios = Vec::new();
    for (i, (x, y)) in pairs.iter().enumerate() {
        let s = sim.with_config(&SimConfig {
            seed: potential::derive_seed(cfg.sim.seed, i as u64),
            ..cfg.sim.clone()
        })?;
        let g = green_estimate(&s, x, y, None, block.n_paths)?;
        let b = green_bound_form(k.alpha, x, y);
        ratios.push(g.mean / b);
        let fmt = |p: &HPoint| p.coords().iter().map(|v| num(*v)).collect::<Vec<_>>().join(" ");
        rep.rows.push(vec![
            fmt(x),
            fmt(y),
            num(g.mean),
            num(g.std_error),
            num(g.ci95.0),
            num(g.ci95.1),
            num(b),
            num(g.mean / b),
        ]);
    }
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    rep.summary = json!({ "pairs": pairs.len(), "sup_inf_ratio": max / min });
    Ok(rep)
}

/// Occupation integrals `E_x int (Y^d)^gamma dt` with height-exponent fits.
pub fn cmd_occupation(cfg: &RunConfig) -> Result<Report> {
    let block = cfg
        .occupation
        .as_ref()
        .ok_or_else(|| Error::Usage("missing `occupation` block".into()))?;
    if block.gammas.is_empty() || block.heights.is_empty() {
        return Err(Error::Usage("`occupation.gammas` and `occupation.heights` must be non-empty".into()));
    }
    let sim = Simulator::new(&cfg.kernel, &cfg.sim)?;
    let mut rep = Report::new("occupation", &["gamma", "x_d", "mean", "std_error", "ci95_lo", "ci95_hi", "message"]);
    let mut fits = Vec::new();
    for &g in &block.gammas {
        match potential::occupation_exponent(&sim, g, &block.heights, block.big_r, block.n_paths) {
            Ok(o) => {
                for (h, e) in o.heights.iter().zip(&o.estimates) {
                    rep.rows.push(vec![
                        num(g),
                        num(*h),
                        num(e.mean),
                        num(e.std_error),
                        num(e.ci95.0),
                        num(e.ci95.1),
                        String::new(),
                    ]);
                }
                fits.push(json!({ "gamma": g, "fit": o.fit, "log_fit": o.log_fit }));
            }
            Err(e) => {
                let mut row = vec![num(g)];
                row.extend(std::iter::repeat_n(String::new(), 5));
                row.push(e.to_string());
                rep.rows.push(row);
                fits.push(json!({ "gamma": g, "error": e.to_string() }));
            }
        }
    }
    rep.summary = json!({ "fits": fits });
    Ok(rep)
}

/// Runs the acceptance criteria. Succeeds unless a criterion fails.
pub fn cmd_verify(cfg: &RunConfig, profile: Profile) -> Result<Report> {
    let ids = cfg
        .verify
        .as_ref()
        .and_then(|v| v.criteria.clone())
        .unwrap_or_else(|| verify::ALL.to_vec());
    let mut rep = Report::new("verify", &["criterion_id", "name", "status", "measured", "budget"]);
    let mut results = Vec::new();
    for id in ids {
        let r = verify::run_criterion(id, profile, cfg.sim.seed)?;
        eprintln!("{}", r.line());
        rep.rows.push(vec![
            r.id.to_string(),
            r.name.clone(),
            r.status.as_str().into(),
            r.measured.clone(),
            r.budget.clone(),
        ]);
        results.push(r);
    }
    rep.success = results.iter().all(|r| r.status != Status::Fail);
    rep.summary = json!({ "profile": profile, "criteria": results });
    Ok(rep)
}

/// Output directory: `HJL_OUT` if set, else the configured one.
pub fn output_dir(cfg: &RunConfig) -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| cfg.output_dir.clone())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Usage("--threads must be positive".into()));
        }
        // Ignore a pool that was already installed by an earlier call.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let mut cfg = match (&cli.config, cli.command) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Command::Verify) => RunConfig::verify_default(),
        (None, _) => return Err(Error::Usage("--config is required for this command".into())),
    };
    if let Some(s) = cli.seed {
        cfg.sim.seed = s;
    }
    if cli.quick {
        for n in [
            cfg.simulate.as_mut().map(|b| &mut b.n_paths),
            cfg.green.as_mut().map(|b| &mut b.n_paths),
            cfg.occupation.as_mut().map(|b| &mut b.n_paths),
        ]
        .into_iter()
        .flatten()
        {
            *n = (*n / 10).max(2);
        }
    }
    let profile = if cli.quick { Profile::Quick } else { Profile::Full };
    let rep = match cli.command {
        Command::Constant => cmd_constant(&cfg)?,
        Command::Pvop => cmd_pvop(&cfg)?,
        Command::Simulate => cmd_simulate(&cfg)?,
        Command::Green => cmd_green(&cfg)?,
        Command::Occupation => cmd_occupation(&cfg)?,
        Command::Verify => cmd_verify(&cfg, profile)?,
    };
    let (csv, json) = rep.write(&output_dir(&cfg), &cfg)?;
    println!("{}: wrote {} and {}", cli.command.name(), csv.display(), json.display());
    Ok(if rep.success { 0 } else { 1 })
}
