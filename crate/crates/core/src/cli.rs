//! Command-line front end.
//!
//! Every subcommand resolves a [`RunConfig`] (JSON file first, flags on top,
//! then per-command defaults), runs the corresponding pipeline and writes
//! `<output>.csv` and `<output>.json`. Both files start from the resolved
//! configuration; neither contains timestamps, the worker count or the output
//! path, so reruns with any number of workers are byte-identical.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 resource cap,
//! 3 oracle mismatch.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::chaos::{self, ChaosParams, STREAM_WALK};
use crate::env::{log_sum_exp, EnvironmentField, EnvironmentModel};
use crate::error::{Error, Result};
use crate::estimator::{self, CertificateSpec, ConjecturePoint, C1_CANDIDATES};
use crate::lattice::LatticePoint;
use crate::moments::{self, DEFAULT_MAX_HORIZON};
use crate::partition;
use crate::rng::derive_seed;
use crate::stats;
use crate::walk::{sample_path, TransitionKernel};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Per-β seed stream for commands that sweep β.
pub const STREAM_BETA: u64 = 0x40;
/// Oracle field seeds.
pub const STREAM_ORACLE: u64 = 0x41;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RESOURCE: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "dpre", version, about = "Directed polymers in random environment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Monte Carlo profile of Q[log W_n]/n over a β grid.
    FreeEnergy(Flags),
    /// Exact Q[W_N²(β̂/√log N)] over an N grid.
    SecondMoment(Flags),
    /// Chaos statistic A^{q,N}: moments, tilted mean, V².
    Chaos(Flags),
    /// Fractional-moment negativity certificate.
    Certificate(Flags),
    /// log|p(β)| against β^{−2}, from an input file or a fresh run.
    Conjecture(Flags),
    /// Brute-force oracles against the fast paths.
    Oracle(Flags),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::FreeEnergy(_) => "free-energy",
            Command::SecondMoment(_) => "second-moment",
            Command::Chaos(_) => "chaos",
            Command::Certificate(_) => "certificate",
            Command::Conjecture(_) => "conjecture",
            Command::Oracle(_) => "oracle",
        }
    }

    fn flags(&self) -> &Flags {
        match self {
            Command::FreeEnergy(f)
            | Command::SecondMoment(f)
            | Command::Chaos(f)
            | Command::Certificate(f)
            | Command::Conjecture(f)
            | Command::Oracle(f) => f,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct Flags {
    /// JSON file with RunConfig fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Family name (gaussian-unit, rademacher) or a JSON model fragment.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub beta: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub beta_hat: Option<Vec<f64>>,
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub q: Option<usize>,
    /// Horizons (free-energy, conjecture) or block lengths N.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub n: Option<Vec<usize>>,
    /// Number of blocks n of the certificate.
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long = "k-level")]
    pub k_level: Option<f64>,
    #[arg(long)]
    pub gamma_hat: Option<f64>,
    #[arg(long)]
    pub c2: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output prefix; `<prefix>.csv` and `<prefix>.json` are written.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Worker threads (0 = one per core). Never changes results.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Largest horizon the exact recursions may allocate.
    #[arg(long)]
    pub max_horizon: Option<usize>,
    /// Conjecture input: JSON list of {beta, p_lower, se}.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// SE-weighted conjecture fit.
    #[arg(long)]
    pub weighted: bool,
}

/// Experiment configuration. Unset fields take per-command defaults in
/// [`RunConfig::resolve`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<EnvironmentModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_hat: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing)]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_horizon: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weighted: Option<bool>,
}

fn parse_model(s: &str) -> Result<EnvironmentModel> {
    let t = s.trim();
    let r = if t.starts_with('{') {
        EnvironmentModel::from_json(t)
    } else {
        EnvironmentModel::from_json(&json!({ "family": t }).to_string())
    };
    r.map_err(|e| Error::config("model", e))
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::config("config", e))
    }

    /// Config file (if any) with the flags laid on top.
    pub fn from_flags(command: &str, flags: &Flags) -> Result<Self> {
        let mut c = match &flags.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(cmd) = &c.command {
            if cmd != command {
                return Err(Error::config(
                    "command",
                    format!("config file is for `{cmd}`, invoked as `{command}`"),
                ));
            }
        }
        c.command = Some(command.to_string());
        if let Some(m) = &flags.model {
            c.model = Some(parse_model(m)?);
        }
        overlay!(c, flags; d, beta, beta_hat, c1, q, n, blocks, samples, theta, k_level,
                 gamma_hat, c2, seed, output, workers, max_horizon, input);
        if flags.weighted {
            c.weighted = Some(true);
        }
        Ok(c)
    }

    /// Fills the defaults of `self.command` and validates every field.
    pub fn resolve(mut self) -> Result<Self> {
        let cmd = self
            .command
            .clone()
            .ok_or_else(|| Error::config("command", "missing"))?;
        self.model.get_or_insert(EnvironmentModel::GaussianUnit);
        self.seed.get_or_insert(1);
        self.workers.get_or_insert(0);
        match cmd.as_str() {
            "free-energy" => {
                self.d.get_or_insert(2);
                self.beta.get_or_insert(vec![2.0]);
                self.n.get_or_insert(vec![32, 64, 128, 256]);
                self.samples.get_or_insert(2000);
                self.theta.get_or_insert(estimator::DEFAULT_THETA);
            }
            "second-moment" => {
                self.d.get_or_insert(2);
                self.beta_hat.get_or_insert(vec![1.0]);
                self.n.get_or_insert((8..=15).map(|k| 1usize << k).collect());
                self.max_horizon.get_or_insert(DEFAULT_MAX_HORIZON);
            }
            "chaos" => {
                self.d.get_or_insert(2);
                self.q.get_or_insert(2);
                self.gamma_hat.get_or_insert(1.0);
                self.n.get_or_insert(vec![64, 128, 256]);
                self.samples.get_or_insert(2000);
                self.c1.get_or_insert(2.0);
                self.k_level.get_or_insert(5.0);
                self.theta.get_or_insert(estimator::DEFAULT_THETA);
            }
            "certificate" => {
                self.d.get_or_insert(2);
                self.q.get_or_insert(2);
                self.gamma_hat.get_or_insert(1.0);
                self.n.get_or_insert(vec![64]);
                self.blocks.get_or_insert(4);
                self.k_level.get_or_insert(2.0);
                self.samples.get_or_insert(2000);
            }
            "conjecture" => {
                if self.input.is_none() {
                    self.d.get_or_insert(2);
                    self.beta.get_or_insert(vec![1.2, 1.6, 2.0, 2.4]);
                    self.n.get_or_insert(vec![16, 32, 64, 128]);
                    self.samples.get_or_insert(500);
                    self.theta.get_or_insert(estimator::DEFAULT_THETA);
                }
                self.weighted.get_or_insert(false);
            }
            "oracle" => {}
            other => return Err(Error::config("command", format!("unknown command `{other}`"))),
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if let Some(d) = self.d {
            if !(1..=3).contains(&d) {
                return Err(Error::config("d", format!("{d} not in 1..=3")));
            }
        }
        for (field, v) in [("beta", &self.beta), ("beta_hat", &self.beta_hat)] {
            if let Some(v) = v {
                if v.is_empty() || v.iter().any(|b| !b.is_finite()) {
                    return Err(Error::config(field, "need a nonempty list of finite values"));
                }
            }
        }
        if let Some(n) = &self.n {
            if n.is_empty() || n.contains(&0) {
                return Err(Error::config("n", "need a nonempty list of positive values"));
            }
        }
        if let Some(q) = self.q {
            if !(1..=chaos::MAX_ORDER).contains(&q) {
                return Err(Error::config("q", format!("{q} not in 1..={}", chaos::MAX_ORDER)));
            }
        }
        if let Some(t) = self.theta {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::config("theta", format!("{t} not in (0, 1)")));
            }
        }
        for (field, v) in [("c1", self.c1), ("k_level", self.k_level), ("c2", self.c2)] {
            if let Some(v) = v {
                if !(v >= 0.0) || (field != "c2" && v == 0.0) {
                    return Err(Error::config(field, format!("{v} out of range")));
                }
            }
        }
        if let Some(g) = self.gamma_hat {
            if !g.is_finite() {
                return Err(Error::config("gamma_hat", "must be finite"));
            }
        }
        if self.samples == Some(0) {
            return Err(Error::config("samples", "must be positive"));
        }
        if self.blocks == Some(0) {
            return Err(Error::config("blocks", "must be positive"));
        }
        Ok(())
    }

    /// Compact JSON echo used in both output files.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    fn model(&self) -> &EnvironmentModel {
        self.model.as_ref().expect("resolved")
    }
}

/// What a command produced.
#[derive(Debug)]
pub struct Report {
    pub header: &'static str,
    pub rows: Vec<String>,
    pub result: Value,
    /// Process exit code once the files are written.
    pub status: i32,
}

impl Report {
    fn ok(header: &'static str, rows: Vec<String>, result: Value) -> Self {
        Report {
            header,
            rows,
            result,
            status: 0,
        }
    }

    pub fn csv(&self, config: &RunConfig) -> String {
        let mut s = format!("# dpre {VERSION} config={}\n{}\n", config.echo(), self.header);
        for r in &self.rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    pub fn json(&self, config: &RunConfig) -> String {
        let v = json!({
            "dpre": VERSION,
            "config": serde_json::from_str::<Value>(&config.echo()).expect("echo is JSON"),
            "status": self.status,
            "result": self.result,
        });
        let mut s = serde_json::to_string_pretty(&v).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Runs a resolved configuration without touching the filesystem.
pub fn execute(config: &RunConfig) -> Result<Report> {
    stats::set_workers(config.workers.unwrap_or(0));
    match config.command.as_deref() {
        Some("free-energy") => cmd_free_energy(config),
        Some("second-moment") => cmd_second_moment(config),
        Some("chaos") => cmd_chaos(config),
        Some("certificate") => cmd_certificate(config),
        Some("conjecture") => cmd_conjecture(config),
        Some("oracle") => cmd_oracle(config),
        other => Err(Error::config("command", format!("{other:?}"))),
    }
}

fn write_outputs(config: &RunConfig, report: &Report) -> Result<(PathBuf, PathBuf)> {
    let prefix = config
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("dpre-{}", config.command.as_deref().unwrap_or("run"))));
    let with_ext = |ext: &str| {
        let mut p = prefix.clone().into_os_string();
        p.push(ext);
        PathBuf::from(p)
    };
    let (csv, js) = (with_ext(".csv"), with_ext(".json"));
    std::fs::write(&csv, report.csv(config))?;
    std::fs::write(&js, report.json(config))?;
    Ok((csv, js))
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let config = match RunConfig::from_flags(cli.command.name(), cli.command.flags()).and_then(RunConfig::resolve) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("dpre: {e}");
            return e.exit_code();
        }
    };
    let report = match execute(&config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("dpre {}: {e}", cli.command.name());
            return e.exit_code();
        }
    };
    match write_outputs(&config, &report) {
        Ok((csv, js)) => {
            eprintln!("wrote {} and {}", csv.display(), js.display());
            report.status
        }
        Err(e) => {
            eprintln!("dpre: {e}");
            e.exit_code()
        }
    }
}

fn fmt_row(fields: &[&dyn std::fmt::Display]) -> String {
    let mut s = String::new();
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{f}");
    }
    s
}

fn cmd_free_energy(c: &RunConfig) -> Result<Report> {
    let model = c.model();
    let (d, m, seed, theta) = (c.d.unwrap(), c.samples.unwrap(), c.seed.unwrap(), c.theta.unwrap());
    let schedule = c.n.as_ref().unwrap();
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for (i, &beta) in c.beta.as_ref().unwrap().iter().enumerate() {
        let s = derive_seed(seed, STREAM_BETA, i as u64);
        let p = estimator::free_energy_lower_with_theta(model, beta, d, schedule, m, s, theta)?;
        for (r, n) in p.profile.iter().zip(schedule) {
            rows.push(fmt_row(&[&model.family(), &d, &beta, n, &r.mean, &r.se, &r.samples, &s]));
        }
        points.push(p);
    }
    Ok(Report::ok(
        "family,d,beta,n,log_w_per_step,se,M,seed",
        rows,
        json!({ "points": points }),
    ))
}

fn cmd_second_moment(c: &RunConfig) -> Result<Report> {
    let model = c.model();
    let d = c.d.unwrap();
    let cap = c.max_horizon.unwrap();
    let grid = c.n.as_ref().unwrap();
    let (kept, dropped): (Vec<usize>, Vec<usize>) = grid.iter().partition(|&&n| n <= cap);
    let mut rows = Vec::new();
    let mut scans = Vec::new();
    for &bh in c.beta_hat.as_ref().unwrap() {
        if kept.is_empty() {
            break;
        }
        let scan = moments::intermediate_scan(model, bh, &kept, d)?;
        for r in &scan.records {
            rows.push(fmt_row(&[
                &r.d,
                &r.family,
                &r.beta_hat,
                &r.n,
                &r.beta_n,
                &r.lambda1,
                &r.second_moment,
                &scan.verdict.as_str(),
            ]));
        }
        scans.push(scan);
    }
    let mut report = Report::ok(
        "d,family,beta_hat,N,beta_N,lambda1,second_moment,verdict",
        rows,
        json!({ "scans": scans, "partial": !dropped.is_empty(), "skipped_n": dropped }),
    );
    if !dropped.is_empty() {
        eprintln!("dpre second-moment: N = {dropped:?} exceed max_horizon {cap}; results are partial");
        report.status = EXIT_RESOURCE;
    }
    Ok(report)
}

fn cmd_chaos(c: &RunConfig) -> Result<Report> {
    let model = c.model();
    let (d, q, gh, m, seed) = (
        c.d.unwrap(),
        c.q.unwrap(),
        c.gamma_hat.unwrap(),
        c.samples.unwrap(),
        c.seed.unwrap(),
    );
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for &n in c.n.as_ref().unwrap() {
        let mut params = ChaosParams::new(q, gh, n, d)?;
        params.c1 = c.c1.unwrap();
        params.k_level = c.k_level.unwrap();
        params.theta = c.theta.unwrap();
        if let Some(b) = c.beta.as_ref().and_then(|b| b.first()) {
            params.tilt_beta = Some(*b);
        }
        params.validate()?;
        let beta = params.beta()?;
        let samples = chaos::chaos_samples(model, &params, m, seed)?;
        let mean = stats::EstimateRecord::from_samples(&samples, seed, params.echo(model))?;
        let squares: Vec<f64> = samples.iter().map(|a| a * a).collect();
        let second = stats::EstimateRecord::from_samples(&squares, seed, params.echo(model))?;
        let exact = chaos::chaos_second_moment_exact(model, &params)?;
        let path = sample_path(d, n, derive_seed(seed, STREAM_WALK, n as u64));
        let kernel = TransitionKernel::new(d, n)?;
        let formula = chaos::tilted_chaos_mean_formula(model, &params, &path, &kernel)?;
        let tilted = chaos::tilted_chaos_mean_mc(model, &params, &path, m, seed)?;
        let v2 = chaos::v_second_moment_exact(model, gh, n, d)?;
        let stats_row: [(&str, f64, f64, usize); 6] = [
            ("mean_A", mean.mean, mean.se, m),
            ("second_moment_A", second.mean, second.se, m),
            ("second_moment_A_exact", exact, 0.0, 0),
            ("tilted_mean_formula", formula, 0.0, 0),
            ("tilted_mean_mc", tilted.mean, tilted.se, m),
            ("v_second_moment_exact", v2, 0.0, 0),
        ];
        for (name, v, se, mm) in stats_row {
            rows.push(fmt_row(&[&model.family(), &q, &n, &gh, &beta, &name, &v, &se, &mm, &seed]));
        }
        results.push(json!({
            "N": n,
            "params": params.echo(model),
            "mean_A": mean,
            "second_moment_A": second,
            "second_moment_A_exact": exact,
            "tilted_mean_formula": formula,
            "tilted_mean_mc": tilted,
            "v_second_moment_exact": v2,
        }));
    }
    Ok(Report::ok(
        "family,q,N,gamma_hat,beta,statistic,value,se,M,seed",
        rows,
        json!({ "blocks": results }),
    ))
}

fn cmd_certificate(c: &RunConfig) -> Result<Report> {
    let model = c.model();
    let n = *c.n.as_ref().unwrap().last().unwrap();
    let mut spec = CertificateSpec::new(c.d.unwrap(), 0.0, c.blocks.unwrap(), n, c.seed.unwrap());
    spec.k_level = c.k_level.unwrap();
    spec.q = c.q.unwrap();
    spec.gamma_hat = c.gamma_hat.unwrap();
    spec.m_cost = c.samples.unwrap();
    if let Some(t) = c.theta {
        spec.thetas = vec![t];
    }
    let (report, calibration) = match (c.beta.as_ref().and_then(|b| b.first()), c.c1) {
        (Some(&b), _) => {
            spec.beta = b;
            (estimator::negativity_certificate(model, &spec)?, None)
        }
        (None, Some(c1)) => {
            spec.beta = estimator::beta_of_n(c1, spec.q, n)?;
            (estimator::negativity_certificate(model, &spec)?, None)
        }
        (None, None) => {
            let cal = estimator::calibrate_c1(model, &spec, &C1_CANDIDATES)?;
            let r = match &cal.report {
                Some(r) => r.clone(),
                None => {
                    let last = *C1_CANDIDATES.last().unwrap();
                    spec.beta = estimator::beta_of_n(last, spec.q, n)?;
                    estimator::negativity_certificate(model, &spec)?
                }
            };
            (r, Some(cal))
        }
    };
    let rows = report
        .per_theta
        .iter()
        .map(|t| {
            fmt_row(&[
                &report.spec.beta,
                &t.theta,
                &t.cost.mean,
                &t.near_sum,
                &t.tail_bound,
                &t.radius,
                &t.factor,
                &t.rate,
                &t.proxy,
                &t.direct.certificate,
            ])
        })
        .collect();
    let calibration = calibration.map(|mut c| {
        c.report = None;
        c
    });
    Ok(Report::ok(
        "beta,theta,cost_factor,near_sum,tail_bound,radius,contraction_factor,rate,proxy,direct_certificate",
        rows,
        json!({ "report": report, "calibration": calibration }),
    ))
}

fn cmd_conjecture(c: &RunConfig) -> Result<Report> {
    let model = c.model();
    let weighted = c.weighted.unwrap_or(false);
    let (points, runs) = match &c.input {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::config("input", format!("{}: {e}", path.display())))?;
            let pts: Vec<ConjecturePoint> =
                serde_json::from_str(&text).map_err(|e| Error::config("input", e))?;
            (pts, Vec::new())
        }
        None => {
            let (d, m, seed, theta) = (c.d.unwrap(), c.samples.unwrap(), c.seed.unwrap(), c.theta.unwrap());
            let schedule = c.n.as_ref().unwrap();
            let mut runs = Vec::new();
            for (i, &beta) in c.beta.as_ref().unwrap().iter().enumerate() {
                let s = derive_seed(seed, STREAM_BETA, i as u64);
                runs.push(estimator::free_energy_lower_with_theta(model, beta, d, schedule, m, s, theta)?);
            }
            (runs.iter().map(ConjecturePoint::from).collect(), runs)
        }
    };
    let fit = estimator::conjecture_fit_points(&points, model.lambda_pp0(), weighted)?;
    let rows = points
        .iter()
        .map(|p| {
            let used = !fit.excluded.contains(&p.beta);
            fmt_row(&[&p.beta, &p.p_lower, &p.se, &used])
        })
        .collect();
    Ok(Report::ok(
        "beta,p_lower,se,used",
        rows,
        json!({ "fit": fit, "runs": runs }),
    ))
}

/// One fast-path/oracle comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub check: String,
    pub params: String,
    pub fast: f64,
    pub oracle: f64,
    pub error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleCheck {
    fn relative(check: &str, params: String, fast: f64, oracle: f64, tolerance: f64) -> Self {
        let error = (fast - oracle).abs() / oracle.abs().max(1e-300);
        let error = if fast == oracle { 0.0 } else { error };
        OracleCheck {
            check: check.into(),
            params,
            fast,
            oracle,
            error,
            tolerance,
            pass: error <= tolerance,
        }
    }
}

/// The default oracle suite.
pub fn oracle_suite(seed: u64) -> Result<Vec<OracleCheck>> {
    let mut out = Vec::new();
    for model in [EnvironmentModel::GaussianUnit, EnvironmentModel::Rademacher] {
        for d in [1, 2] {
            for n in 1..=5 {
                for beta in [0.3, 0.8] {
                    let fast = moments::second_moment_exact(&model, beta, n, d)?;
                    let slow = moments::second_moment_bruteforce(&model, beta, n, d)?;
                    out.push(OracleCheck::relative(
                        "second_moment",
                        format!("{} d={d} N={n} beta={beta}", model.family()),
                        fast,
                        slow,
                        1e-10,
                    ));
                }
            }
        }
    }
    let g = EnvironmentModel::GaussianUnit;
    for k in 0..5u64 {
        let s = derive_seed(seed, STREAM_ORACLE, k);
        let (n_blocks, block_len, beta) = (2, 16, 0.5);
        let horizon = n_blocks * block_len;
        let f = EnvironmentField::centered(g.clone(), s, 2, horizon as u32, horizon as i32)?;
        let o = LatticePoint::origin(2);
        let direct = partition::log_partition_value(&f, &g, beta, horizon, &o)?;
        let parts = partition::coarse_decomposition(&f, &g, beta, n_blocks, block_len, &o)?;
        let logs: Vec<f64> = parts.iter().map(|(_, l)| *l).collect();
        let summed = log_sum_exp(&logs);
        let error = (summed - direct).exp_m1().abs();
        out.push(OracleCheck {
            check: "coarse_decomposition".into(),
            params: format!("d=2 n=2 N=16 beta={beta} seed={s}"),
            fast: summed,
            oracle: direct,
            error,
            tolerance: 1e-9,
            pass: error <= 1e-9,
        });
    }
    for n in [2, 8, 32] {
        for gh in [0.5, 1.0] {
            let fast = chaos::v_second_moment_exact(&g, gh, n, 2)?;
            let slow = chaos::v_second_moment_difference_walk(&g, gh, n, 2)?;
            out.push(OracleCheck::relative(
                "v_second_moment",
                format!("gamma_hat={gh} N={n}"),
                fast,
                slow,
                1e-10,
            ));
        }
    }
    for n in [4, 16] {
        let kernel = TransitionKernel::new(2, n)?;
        let path = sample_path(2, n, derive_seed(seed, STREAM_WALK, n as u64));
        let fast = chaos::v_tilted_mean(&g, 1.6, 1.2, n, &path)?;
        let slow = chaos::v_tilted_mean_renewal(&g, 1.6, 1.2, n, &path, &kernel, true)?;
        out.push(OracleCheck::relative("v_tilted_anchored", format!("N={n}"), fast, slow, 1e-10));
        let fast = chaos::v_tilted_mean_full(&g, 1.6, 1.2, n, &path)?;
        let slow = chaos::v_tilted_mean_renewal(&g, 1.6, 1.2, n, &path, &kernel, false)?;
        out.push(OracleCheck::relative("v_tilted_full", format!("N={n}"), fast, slow, 1e-10));
    }
    for q in [2, 3] {
        let n = 9;
        let fast = moments::dnq(n, q)?;
        let slow = dnq_enumeration(n, q);
        out.push(OracleCheck::relative("dnq", format!("N={n} q={q}"), fast, slow, 1e-12));
    }
    Ok(out)
}

fn dnq_enumeration(n: usize, q: usize) -> f64 {
    fn rec(prev: usize, left: usize, n: usize) -> f64 {
        if left == 0 {
            return 1.0;
        }
        (prev + 1..=n).map(|j| rec(j, left - 1, n) / (j - prev) as f64).sum()
    }
    let total: f64 = (1..=n).map(|j| rec(j, q - 1, n)).sum();
    total / n as f64
}

fn cmd_oracle(c: &RunConfig) -> Result<Report> {
    let checks = oracle_suite(c.seed.unwrap())?;
    let rows = checks
        .iter()
        .map(|k| fmt_row(&[&k.check, &k.params, &k.fast, &k.oracle, &k.error, &k.tolerance, &k.pass]))
        .collect();
    let failed = checks.iter().filter(|k| !k.pass).count();
    let mut report = Report::ok(
        "check,params,fast,oracle,error,tolerance,pass",
        rows,
        json!({ "checks": checks, "failed": failed }),
    );
    if failed > 0 {
        eprintln!("dpre oracle: {failed} mismatches");
        report.status = EXIT_MISMATCH;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolved(args: &[&str]) -> Result<RunConfig> {
        let cli = Cli::try_parse_from(args).expect("parses");
        RunConfig::from_flags(cli.command.name(), cli.command.flags())?.resolve()
    }

    #[test]
    fn flags_and_defaults() {
        let c = resolved(&["dpre", "free-energy", "--beta", "2.0", "--n", "32,64", "--samples", "200"]).unwrap();
        assert_eq!(c.beta, Some(vec![2.0]));
        assert_eq!(c.n, Some(vec![32, 64]));
        assert_eq!(c.d, Some(2));
        assert_eq!(c.model, Some(EnvironmentModel::GaussianUnit));
        let c = resolved(&["dpre", "chaos", "--model", "rademacher"]).unwrap();
        assert_eq!(c.model, Some(EnvironmentModel::Rademacher));
        assert_eq!(c.n, Some(vec![64, 128, 256]));
    }

    #[test]
    fn invalid_fields_are_named() {
        let e = resolved(&["dpre", "free-energy", "--theta", "1.5"]).unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field == "theta"));
        let e = resolved(&["dpre", "chaos", "--q", "9"]).unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field == "q"));
        let e = resolved(&["dpre", "chaos", "--model", "cauchy"]).unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field == "model"));
        assert!(Cli::try_parse_from(["dpre", "free-energy", "--bogus"]).is_err());
    }

    #[test]
    fn config_file_is_overridden_by_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"beta": [1.0], "d": 1, "samples": 300}"#).unwrap();
        let c = resolved(&["dpre", "free-energy", "--config", p.to_str().unwrap(), "--d", "2"]).unwrap();
        assert_eq!(c.d, Some(2));
        assert_eq!(c.beta, Some(vec![1.0]));
        assert_eq!(c.samples, Some(300));
        std::fs::write(&p, r#"{"betta": [1.0]}"#).unwrap();
        assert!(resolved(&["dpre", "free-energy", "--config", p.to_str().unwrap()]).is_err());
    }

    #[test]
    fn echo_omits_execution_settings() {
        let c = resolved(&["dpre", "oracle", "--workers", "3", "-o", "/tmp/x"]).unwrap();
        let e = c.echo();
        assert!(!e.contains("workers") && !e.contains("output"));
        assert!(e.contains("\"command\":\"oracle\""));
    }

    #[test]
    fn dnq_enumeration_matches_small_case() {
        assert!((dnq_enumeration(4, 2) - 13.0 / 12.0).abs() < 1e-15);
    }
}
