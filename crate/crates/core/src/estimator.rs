//! Free-energy estimates, the β ↔ N coupling, the fractional-moment
//! negativity certificate and the small-β conjecture fit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::chaos::{self, ChaosParams, DEFAULT_CUTOFF};
use crate::env::{EnvironmentField, EnvironmentModel};
use crate::error::{Error, Result};
use crate::lattice::{LatticePoint, SiteBox};
use crate::moments::{checked_jensen_slack, fractional_from_logs, sample_log_partitions, FractionalMoment};
use crate::partition::BoxSpec;
use crate::rng::derive_seed;
use crate::stats::{self, EstimateRecord};
use crate::walk::{box_hit_prob, sample_path_from, TransitionKernel};

pub const STREAM_CERT_PATH: u64 = 0x30;
pub const STREAM_CERT_FIELD: u64 = 0x31;
pub const STREAM_CERT_COST: u64 = 0x32;
pub const STREAM_CERT_DIRECT: u64 = 0x33;

/// Default θ of the fractional moment.
pub const DEFAULT_THETA: f64 = 0.5;

/// C1 values scanned by [`calibrate_c1`] from the command line.
pub const C1_CANDIDATES: [f64; 7] = [2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0];

/// Residual RMS above which a conjecture fit is flagged as a model mismatch.
pub const FIT_MISMATCH_RMS: f64 = 1e-3;

/// β = C1·(log N)^{−(q−1)/(2q)}.
pub fn beta_of_n(c1: f64, q: usize, n: usize) -> Result<f64> {
    if !(c1 > 0.0 && c1.is_finite()) || q < 2 {
        return Err(Error::precondition("need C1 > 0 and q ≥ 2"));
    }
    if n < 3 {
        return Err(Error::precondition(format!("N = {n} < 3")));
    }
    let e = (q - 1) as f64 / (2 * q) as f64;
    Ok(c1 * (n as f64).ln().powf(-e))
}

/// N = ⌊exp((C1/β)^{2q/(q−1)})⌋.
pub fn n_of_beta(c1: f64, q: usize, beta: f64) -> Result<u64> {
    if !(c1 > 0.0 && beta > 0.0) || q < 2 {
        return Err(Error::precondition("need C1 > 0, β > 0 and q ≥ 2"));
    }
    let log_n = (c1 / beta).powf((2 * q) as f64 / (q - 1) as f64);
    if log_n >= 43.0 {
        return Err(Error::resource("block length N", u64::MAX, (43f64).exp() as u64));
    }
    Ok(log_n.exp().floor() as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyPoint {
    pub beta: f64,
    pub d: usize,
    pub n_schedule: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
    /// Q̂[log W_n]/n for every n of the schedule.
    pub profile: Vec<EstimateRecord>,
    /// Largest-n value of the profile.
    pub p_lower: f64,
    pub p_lower_se: f64,
    pub theta: f64,
    /// (1/(nθ))·log Q̂[W_n^θ] at the largest n, same environments.
    pub certificate: f64,
    /// Smallest Jensen slack over the schedule.
    pub jensen_slack: f64,
    pub diagnostics: Vec<String>,
}

/// Monte Carlo profile of Q[log W_n]/n over the schedule with θ = 0.5.
pub fn free_energy_lower(
    model: &EnvironmentModel,
    beta: f64,
    d: usize,
    n_schedule: &[usize],
    m: usize,
    seed: u64,
) -> Result<FreeEnergyPoint> {
    free_energy_lower_with_theta(model, beta, d, n_schedule, m, seed, DEFAULT_THETA)
}

pub fn free_energy_lower_with_theta(
    model: &EnvironmentModel,
    beta: f64,
    d: usize,
    n_schedule: &[usize],
    m: usize,
    seed: u64,
    theta: f64,
) -> Result<FreeEnergyPoint> {
    if m < 100 {
        return Err(Error::precondition("free energy needs M ≥ 100"));
    }
    if n_schedule.is_empty() || n_schedule.windows(2).any(|w| w[0] >= w[1]) || n_schedule[0] == 0 {
        return Err(Error::precondition("horizon schedule must be positive and increasing"));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::precondition("θ must lie in (0, 1)"));
    }
    let echo = |n: usize| json!({"family": model.family(), "beta": beta, "d": d, "n": n});
    if beta == 0.0 {
        return Ok(FreeEnergyPoint {
            beta,
            d,
            n_schedule: n_schedule.to_vec(),
            samples: m,
            seed,
            profile: n_schedule.iter().map(|&n| EstimateRecord::exact(0.0, m, seed, echo(n))).collect(),
            p_lower: 0.0,
            p_lower_se: 0.0,
            theta,
            certificate: 0.0,
            jensen_slack: 0.0,
            diagnostics: Vec::new(),
        });
    }
    let logs = sample_log_partitions(model, beta, d, n_schedule, m, seed)?;
    let mut profile = Vec::with_capacity(n_schedule.len());
    let mut slack = f64::INFINITY;
    for (k, &n) in n_schedule.iter().enumerate() {
        let col: Vec<f64> = logs.iter().map(|v| v[k]).collect();
        slack = slack.min(checked_jensen_slack(&col, theta, n));
        let per_step: Vec<f64> = col.iter().map(|l| l / n as f64).collect();
        profile.push(EstimateRecord::from_samples(&per_step, seed, echo(n))?);
    }
    let mut diagnostics = Vec::new();
    for (w, ns) in profile.windows(2).zip(n_schedule.windows(2)) {
        let band = 3.0 * w[0].se.hypot(w[1].se);
        if w[1].mean < w[0].mean - band {
            diagnostics.push(format!(
                "profile decreases from n = {} to n = {} beyond 3 SE",
                ns[0], ns[1]
            ));
        }
    }
    for (r, n) in profile.iter().zip(n_schedule) {
        if r.mean > 3.0 * r.se {
            diagnostics.push(format!("profile positive beyond 3 SE at n = {n}"));
        }
    }
    let last = profile.last().expect("nonempty schedule").clone();
    let n_max = *n_schedule.last().unwrap();
    let col: Vec<f64> = logs.iter().map(|v| v[n_schedule.len() - 1]).collect();
    let frac = fractional_from_logs(&col, theta, n_max, seed, echo(n_max));
    Ok(FreeEnergyPoint {
        beta,
        d,
        n_schedule: n_schedule.to_vec(),
        samples: m,
        seed,
        p_lower: last.mean,
        p_lower_se: last.se,
        profile,
        theta,
        certificate: frac.certificate,
        jensen_slack: slack,
        diagnostics,
    })
}

/// Parameters of the negativity certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateSpec {
    pub d: usize,
    /// Polymer β; also the tilt strength of Q_S.
    pub beta: f64,
    /// Number of blocks n.
    pub n_blocks: usize,
    /// Block length N.
    pub block_len: usize,
    pub thetas: Vec<f64>,
    pub k_level: f64,
    pub q: usize,
    pub gamma_hat: f64,
    /// Environments for the direct Q̂[W_{nN}^θ].
    pub m_direct: usize,
    /// Untilted environments for the cost factor.
    pub m_cost: usize,
    /// Tilted samples per probe start point.
    pub m_paths: usize,
    /// Target for the exact tail Σ_{|z|>R} max_x P^x(S_N ∈ B_z)^θ.
    pub epsilon: f64,
    pub seed: u64,
}

impl CertificateSpec {
    pub fn new(d: usize, beta: f64, n_blocks: usize, block_len: usize, seed: u64) -> Self {
        CertificateSpec {
            d,
            beta,
            n_blocks,
            block_len,
            thetas: vec![0.25, 0.5, 0.75],
            k_level: 5.0,
            q: 2,
            gamma_hat: 1.0,
            m_direct: 200,
            m_cost: 2000,
            m_paths: 400,
            epsilon: 0.01,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.thetas.is_empty() || self.thetas.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::precondition("every θ must lie in (0, 1)"));
        }
        if self.n_blocks < 1 || self.block_len < 2 {
            return Err(Error::precondition("need n ≥ 1 blocks of length N ≥ 2"));
        }
        if self.m_direct < 2 || self.m_cost < 2 || self.m_paths < 1 {
            return Err(Error::precondition("sample sizes too small"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::precondition("tail target ε must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaCertificate {
    pub theta: f64,
    /// Q̂[W_{nN}^θ] and (1/(nNθ))·log of it.
    pub direct: FractionalMoment,
    /// Q̂[exp(−θ/(1−θ)·f_K(A))].
    pub cost: EstimateRecord,
    /// cost^{1−θ}.
    pub cost_term: f64,
    /// Σ_{|z|≤R} (max over probes of Ê^x[Q_S[g]·1{S_N ∈ B_z}])^θ.
    pub near_sum: f64,
    /// Σ_{|z|>R} max_{x∈B₀} P^x(S_N ∈ B_z)^θ, exact.
    pub tail_bound: f64,
    pub radius: i64,
    /// ρ = cost_term·(near_sum + tail_bound); Q[W_{nN}^θ] ≲ ρ^n.
    pub factor: f64,
    /// c = −log ρ.
    pub rate: f64,
    /// −c/(Nθ), the implied proxy for Q[log W_{nN}]/(nN).
    pub proxy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub label: String,
    pub spec: CertificateSpec,
    pub probes: Vec<LatticePoint>,
    pub per_theta: Vec<ThetaCertificate>,
    /// Index into `per_theta` with the smallest proxy.
    pub best: usize,
    /// |B| minus the walk mass kept by the chaos DP cutoff.
    pub truncated_mass: f64,
}

impl CertificateReport {
    pub fn best(&self) -> &ThetaCertificate {
        &self.per_theta[self.best]
    }
}

/// Start points used for the max over x ∈ B₀: the centre, the corners and
/// the face midpoints, i.e. {−m, 0, m}^d.
pub fn probe_points(d: usize, m: i32) -> Vec<LatticePoint> {
    SiteBox::around(LatticePoint::origin(d), 1)
        .points()
        .into_iter()
        .map(|p| {
            let c: Vec<i32> = p.coords().iter().map(|v| v * m).collect();
            LatticePoint::new(&c)
        })
        .collect()
}

/// max_{x∈B₀} P^x(S_N ∈ B_z) for every z reachable from B₀.
fn box_hit_maxima(d: usize, n: usize) -> Result<BTreeMap<LatticePoint, f64>> {
    let spec = BoxSpec::new(n)?;
    let kernel = TransitionKernel::new(d, n)?;
    let b0 = spec.box_range(&LatticePoint::origin(d));
    let reach = b0.expand(n as i32);
    let zlo = spec.box_of(&reach.lo);
    let zhi = spec.box_of(&reach.hi);
    let starts = b0.points();
    let mut out = BTreeMap::new();
    for z in SiteBox::new(zlo, zhi).points() {
        let mut best = 0.0f64;
        for x in &starts {
            best = best.max(box_hit_prob(&kernel, x, n, &z)?);
        }
        if best > 0.0 {
            out.insert(z, best);
        }
    }
    Ok(out)
}

/// Finite-sample proxy of the coarse-grained fractional-moment bound.
///
/// Per block, Hölder with the penalty g = exp(f_K(A)) gives
/// ρ = Q[g^{−θ/(1−θ)}]^{1−θ} · Σ_z (max_x P^x[Q_S[g]·1{S_N ∈ B_z}])^θ and
/// Q[W_{nN}^θ] ≤ ρ^n. The max over x is taken over [`probe_points`] for
/// |z| ≤ R and exactly over B₀ for the tail.
pub fn negativity_certificate(model: &EnvironmentModel, spec: &CertificateSpec) -> Result<CertificateReport> {
    spec.validate()?;
    let (d, n) = (spec.d, spec.block_len);
    let bspec = BoxSpec::new(n)?;
    let mut params = ChaosParams::new(spec.q, spec.gamma_hat, n, d)?;
    params.k_level = spec.k_level;
    params.tilt_beta = Some(spec.beta);
    params.cutoff = DEFAULT_CUTOFF;

    // direct estimate of Q[W_{nN}^θ]
    let horizon = spec.n_blocks * n;
    let logs: Vec<f64> = if spec.beta == 0.0 {
        vec![0.0; spec.m_direct]
    } else {
        sample_log_partitions(
            model,
            spec.beta,
            d,
            &[horizon],
            spec.m_direct,
            derive_seed(spec.seed, STREAM_CERT_DIRECT, 0),
        )?
        .into_iter()
        .map(|v| v[0])
        .collect()
    };

    // untilted chaos samples for the cost factor
    let cost_seed = derive_seed(spec.seed, STREAM_CERT_COST, 0);
    let untilted = chaos::chaos_samples(model, &params, spec.m_cost, cost_seed)?;

    // tilted samples per probe: (endpoint box, g)
    let probes = probe_points(d, bspec.half_width());
    let mut truncated = 0.0;
    let mut weights: Vec<BTreeMap<LatticePoint, f64>> = Vec::with_capacity(probes.len());
    for (pi, x) in probes.iter().enumerate() {
        let path_seed = derive_seed(spec.seed, STREAM_CERT_PATH, pi as u64);
        let field_seed = derive_seed(spec.seed, STREAM_CERT_FIELD, pi as u64);
        let draws = stats::try_par_map(spec.m_paths, |i| {
            let path = sample_path_from(*x, n, derive_seed(path_seed, 0, i as u64));
            let f = EnvironmentField::new(
                model.clone(),
                derive_seed(field_seed, 0, i as u64),
                n as u32,
                params.box_sites().expand(n as i32),
            )?
            .with_tilt(&path, spec.beta)?;
            let v = chaos::chaos_orders(&f, model, &params, 0)?;
            Ok((bspec.box_of(&path.end()), v))
        })?;
        let mut acc: BTreeMap<LatticePoint, f64> = BTreeMap::new();
        for (z, v) in &draws {
            truncated = v.truncated_mass;
            *acc.entry(*z).or_insert(0.0) += chaos::g_product(&[v.value()], spec.k_level);
        }
        for v in acc.values_mut() {
            *v /= spec.m_paths as f64;
        }
        weights.push(acc);
    }
    let mut near_max: BTreeMap<LatticePoint, f64> = BTreeMap::new();
    for w in &weights {
        for (z, v) in w {
            let e = near_max.entry(*z).or_insert(0.0);
            *e = e.max(*v);
        }
    }

    let hit = box_hit_maxima(d, n)?;
    let mut per_theta = Vec::with_capacity(spec.thetas.len());
    for (ti, &theta) in spec.thetas.iter().enumerate() {
        let tail = |r: i64| -> f64 {
            hit.iter()
                .filter(|(z, _)| z.l1() > r)
                .map(|(_, p)| p.powf(theta))
                .sum()
        };
        let r_max = hit.keys().map(|z| z.l1()).max().unwrap_or(0);
        let radius = (0..=r_max)
            .find(|&r| tail(r) < spec.epsilon)
            .ok_or(Error::InfeasibleBlocks {
                radius: r_max,
                block_len: n,
            })?;
        let tail_bound = tail(radius);
        let near_sum: f64 = near_max
            .iter()
            .filter(|(z, _)| z.l1() <= radius)
            .map(|(_, v)| v.powf(theta))
            .sum();
        let cost = chaos::cost_factor_from_samples(
            &untilted,
            spec.k_level,
            theta,
            cost_seed,
            json!({"theta": theta, "K": spec.k_level}),
        )?
        .estimate;
        let cost_term = cost.mean.powf(1.0 - theta);
        let factor = cost_term * (near_sum + tail_bound);
        let rate = -factor.ln();
        let direct = fractional_from_logs(
            &logs,
            theta,
            horizon,
            spec.seed,
            json!({"beta": spec.beta, "theta": theta, "n": horizon, "index": ti}),
        );
        per_theta.push(ThetaCertificate {
            theta,
            direct,
            cost,
            cost_term,
            near_sum,
            tail_bound,
            radius,
            factor,
            rate,
            proxy: -rate / (n as f64 * theta),
        });
    }
    let best = per_theta
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.proxy.total_cmp(&b.1.proxy))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(CertificateReport {
        label: "finite-sample certificate proxy (Monte Carlo, finite n); not a rigorous bound".into(),
        spec: spec.clone(),
        probes,
        per_theta,
        best,
        truncated_mass: truncated,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C1Calibration {
    pub c1: Option<f64>,
    /// (C1, β, best contraction factor) for each candidate tried.
    pub tried: Vec<(f64, f64, f64)>,
    pub report: Option<CertificateReport>,
}

/// Smallest C1 among `candidates` whose certificate at β = beta_of_n(C1, q, N)
/// has best contraction factor below 1.
pub fn calibrate_c1(
    model: &EnvironmentModel,
    template: &CertificateSpec,
    candidates: &[f64],
) -> Result<C1Calibration> {
    let mut tried = Vec::new();
    for &c1 in candidates {
        let mut spec = template.clone();
        spec.beta = beta_of_n(c1, spec.q, spec.block_len)?;
        let report = negativity_certificate(model, &spec)?;
        let f = report.best().factor;
        tried.push((c1, spec.beta, f));
        if f < 1.0 {
            return Ok(C1Calibration {
                c1: Some(c1),
                tried,
                report: Some(report),
            });
        }
    }
    Ok(C1Calibration {
        c1: None,
        tried,
        report: None,
    })
}

/// A (β, p̂) input to the conjecture fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjecturePoint {
    pub beta: f64,
    pub p_lower: f64,
    pub se: f64,
}

impl From<&FreeEnergyPoint> for ConjecturePoint {
    fn from(p: &FreeEnergyPoint) -> Self {
        ConjecturePoint {
            beta: p.beta,
            p_lower: p.p_lower,
            se: p.p_lower_se,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjectureFit {
    /// (β, log|p̂|) for the points used.
    pub points: Vec<(f64, f64)>,
    /// β of points dropped for lack of signal (|p̂| ≤ 3 SE).
    pub excluded: Vec<f64>,
    /// Slope and intercept of log|p̂| against β^{−2}.
    pub slope: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    pub rms_residual: f64,
    pub fit_range: (f64, f64),
    /// −π/λ''(0), the conjectured small-β slope.
    pub conjectured_slope: f64,
    /// RMS residual above [`FIT_MISMATCH_RMS`].
    pub mismatch: bool,
    pub caveat: String,
}

pub fn conjecture_fit(points: &[FreeEnergyPoint], model: &EnvironmentModel) -> Result<ConjectureFit> {
    let pts: Vec<ConjecturePoint> = points.iter().map(ConjecturePoint::from).collect();
    conjecture_fit_points(&pts, model.lambda_pp0(), false)
}

/// Least squares of log|p| on β^{−2} over the points with |p| > 3 SE;
/// `weighted` weights each point by (|p|/SE)².
pub fn conjecture_fit_points(points: &[ConjecturePoint], lambda_pp0: f64, weighted: bool) -> Result<ConjectureFit> {
    let (used, excluded): (Vec<&ConjecturePoint>, Vec<&ConjecturePoint>) = points
        .iter()
        .partition(|p| p.beta != 0.0 && p.p_lower != 0.0 && p.p_lower.abs() > 3.0 * p.se);
    if used.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: used.len(),
        });
    }
    let x: Vec<f64> = used.iter().map(|p| p.beta.powi(-2)).collect();
    let y: Vec<f64> = used.iter().map(|p| p.p_lower.abs().ln()).collect();
    let w: Option<Vec<f64>> = weighted.then(|| {
        used.iter()
            .map(|p| if p.se > 0.0 { (p.p_lower / p.se).powi(2) } else { 1.0 })
            .collect()
    });
    let (intercept, slope, residuals) = stats::least_squares(&x, &y, w.as_deref())?;
    let rms = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
    let lo = used.iter().map(|p| p.beta).fold(f64::INFINITY, f64::min);
    let hi = used.iter().map(|p| p.beta).fold(f64::NEG_INFINITY, f64::max);
    Ok(ConjectureFit {
        points: used.iter().map(|p| p.beta).zip(y).collect(),
        excluded: excluded.iter().map(|p| p.beta).collect(),
        slope,
        intercept,
        residuals,
        rms_residual: rms,
        fit_range: (lo, hi),
        conjectured_slope: -std::f64::consts::PI / lambda_pp0,
        mismatch: rms > FIT_MISMATCH_RMS,
        caveat: "desk-scale β is far from the small-β regime; only the sign of the slope is meaningful".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const G: EnvironmentModel = EnvironmentModel::GaussianUnit;

    #[test]
    fn beta_n_coupling() {
        let n = (16f64).exp().round() as usize;
        assert!((beta_of_n(1.0, 2, n).unwrap() - 0.5).abs() < 1e-9);
        for n in [1000usize, 10000] {
            let b = beta_of_n(1.7, 2, n).unwrap();
            let back = n_of_beta(1.7, 2, b).unwrap();
            assert!(back == n as u64 || back + 1 == n as u64, "{n} → {back}");
        }
        assert!(beta_of_n(1.0, 2, 2).is_err());
        assert!(beta_of_n(1.0, 1, 100).is_err());
        // exponent (q−1)/(2q) increases towards 1/2
        let e: Vec<f64> = (2..=5).map(|q| (q - 1) as f64 / (2 * q) as f64).collect();
        assert!(e.windows(2).all(|w| w[1] > w[0]) && e[3] < 0.5);
    }

    #[test]
    fn free_energy_zero_beta() {
        let p = free_energy_lower(&G, 0.0, 2, &[8, 16], 100, 1).unwrap();
        assert_eq!((p.p_lower, p.p_lower_se), (0.0, 0.0));
        assert!(free_energy_lower(&G, 1.0, 2, &[8, 16], 10, 1).is_err());
    }

    #[test]
    fn free_energy_small_run() {
        let p = free_energy_lower(&G, 1.5, 2, &[8, 16, 32], 100, 3).unwrap();
        assert!(p.jensen_slack >= -1e-12);
        assert!(p.certificate >= p.p_lower - 3.0 * p.p_lower_se);
        for r in &p.profile {
            assert!(r.mean <= 3.0 * r.se);
        }
    }

    #[test]
    fn planted_fit() {
        let pts: Vec<ConjecturePoint> = [1.0, 1.3, 1.7, 2.2]
            .iter()
            .map(|b: &f64| ConjecturePoint {
                beta: *b,
                p_lower: -(-std::f64::consts::PI / (b * b)).exp(),
                se: 0.0,
            })
            .collect();
        let f = conjecture_fit_points(&pts, 1.0, false).unwrap();
        assert!((f.slope + std::f64::consts::PI).abs() < 1e-9);
        assert!(!f.mismatch);
        let pts: Vec<ConjecturePoint> = [0.5, 1.0, 1.5, 2.0, 3.0]
            .iter()
            .map(|b: &f64| ConjecturePoint {
                beta: *b,
                p_lower: -0.1 * b.powi(4),
                se: 0.0,
            })
            .collect();
        assert!(conjecture_fit_points(&pts, 1.0, false).unwrap().mismatch);
        assert!(conjecture_fit_points(&pts[..2], 1.0, false).is_err());
    }

    #[test]
    fn probes_cover_corners_and_centre() {
        let p = probe_points(2, 8);
        assert_eq!(p.len(), 9);
        assert!(p.contains(&LatticePoint::new(&[8, -8])));
        assert!(p.contains(&LatticePoint::origin(2)));
    }

    #[test]
    fn certificate_zero_beta_does_not_contract() {
        let mut s = CertificateSpec::new(2, 0.0, 2, 16, 5);
        s.m_direct = 10;
        s.m_cost = 50;
        s.m_paths = 20;
        s.k_level = 1.0;
        let r = negativity_certificate(&G, &s).unwrap();
        for t in &r.per_theta {
            assert!(t.factor >= 1.0 && t.rate <= 0.0);
            assert!(t.tail_bound < s.epsilon);
            let assembled = t.cost.mean.powf(1.0 - t.theta) * (t.near_sum + t.tail_bound);
            assert!((assembled - t.factor).abs() <= 1e-12 * t.factor);
        }
    }
}
