//! Second moments of the partition function under intermediate disorder,
//! the harmonic sums D_N^q, and fractional moments by Monte Carlo.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::env::{cumulant, lambda_pp0, log_sum_exp, EnvironmentField, EnvironmentModel};
use crate::error::{Error, Result};
use crate::lattice::LatticePoint;
use crate::partition::log_partition_profile;
use crate::rng::derive_seed;
use crate::stats::{self, EstimateRecord, KahanSum};
use crate::walk::{return_probabilities, WalkPath};

/// Largest horizon accepted by the exact O(N²) recursion by default.
pub const DEFAULT_MAX_HORIZON: usize = 1 << 16;

/// Relative half-width of the band around √(π/λ''(0)) reported as
/// near-threshold.
pub const NEAR_THRESHOLD_BAND: f64 = 0.01;

/// Seed stream for environments drawn by the partition-function samplers.
pub const STREAM_ENVIRONMENT: u64 = 0x10;

/// Λ₁(β) = exp(λ(2β) − 2λ(β)) − 1.
pub fn lambda1(model: &EnvironmentModel, beta: f64) -> f64 {
    (cumulant(model, 2.0 * beta) - 2.0 * cumulant(model, beta)).exp_m1()
}

/// Renewal sequence z_0 = 1, z_n = Λ Σ_{m<n} z_m r_{n−m}, where r are the
/// return probabilities with r[0] = 1 unused.
pub(crate) fn renewal_sequence(lambda: f64, r: &[f64], n: usize) -> Vec<f64> {
    let mut z = Vec::with_capacity(n + 1);
    z.push(1.0);
    for k in 1..=n {
        let mut acc = KahanSum::new();
        for m in 0..k {
            acc.add(z[m] * r[k - m]);
        }
        z.push(lambda * acc.value());
    }
    z
}

/// Cumulative sums h(T) = Σ_{n≤T} z_n for T = 0..=n, i.e. P_{S,S'}[(1+Λ)^{I_T}]
/// for two walks from the same point.
pub(crate) fn renewal_partial_sums(lambda: f64, d: usize, n: usize) -> Result<Vec<f64>> {
    let r = return_probabilities(d, n)?;
    let z = renewal_sequence(lambda, &r, n);
    let mut acc = KahanSum::new();
    Ok(z
        .iter()
        .map(|v| {
            acc.add(*v);
            acc.value()
        })
        .collect())
}

/// Q[W_N(β)²] by the renewal recursion, capped at [`DEFAULT_MAX_HORIZON`].
pub fn second_moment_exact(model: &EnvironmentModel, beta: f64, n: usize, d: usize) -> Result<f64> {
    second_moment_exact_with_cap(model, beta, n, d, DEFAULT_MAX_HORIZON)
}

pub fn second_moment_exact_with_cap(
    model: &EnvironmentModel,
    beta: f64,
    n: usize,
    d: usize,
    cap: usize,
) -> Result<f64> {
    if n < 1 {
        return Err(Error::precondition("N must be at least 1"));
    }
    if n > cap {
        return Err(Error::resource("second-moment horizon", n as u64, cap as u64));
    }
    let l1 = lambda1(model, beta);
    if l1 == 0.0 {
        return Ok(1.0);
    }
    let h = renewal_partial_sums(l1, d, n)?;
    let v = h[n];
    if !v.is_finite() {
        return Err(Error::Degenerate(format!("second moment overflowed at N = {n}")));
    }
    Ok(v)
}

/// Q[W_N(β)²] = P_{S,S'}[exp((λ(2β) − 2λ(β))·♯{0 < i ≤ N : S_i = S'_i})] by
/// enumerating every pair of paths.
pub fn second_moment_bruteforce(model: &EnvironmentModel, beta: f64, n: usize, d: usize) -> Result<f64> {
    if n > 6 {
        return Err(Error::precondition(format!(
            "brute-force enumeration refuses N = {n} > 6"
        )));
    }
    if !(1..=3).contains(&d) {
        return Err(Error::precondition(format!("dimension {d} not in 1..=3")));
    }
    let paths = all_paths(d, n);
    let rate = cumulant(model, 2.0 * beta) - 2.0 * cumulant(model, beta);
    // histogram of overlaps, then one exponential per overlap count
    let mut hist = vec![0u64; n + 1];
    for a in &paths {
        for b in &paths {
            let k = a.iter().zip(b).skip(1).filter(|(x, y)| x == y).count();
            hist[k] += 1;
        }
    }
    let total = (paths.len() * paths.len()) as f64;
    Ok(hist
        .iter()
        .enumerate()
        .map(|(k, c)| *c as f64 * (rate * k as f64).exp())
        .sum::<f64>()
        / total)
}

pub(crate) fn all_paths(d: usize, n: usize) -> Vec<Vec<LatticePoint>> {
    let mut paths = vec![vec![LatticePoint::origin(d)]];
    for _ in 0..n {
        let mut next = Vec::with_capacity(paths.len() * 2 * d);
        for p in &paths {
            for nb in p.last().unwrap().neighbours() {
                let mut q = p.clone();
                q.push(nb);
                next.push(q);
            }
        }
        paths = next;
    }
    paths
}

/// Every nearest-neighbour path of length n from the origin.
pub fn enumerate_paths(d: usize, n: usize) -> Vec<WalkPath> {
    all_paths(d, n)
        .into_iter()
        .map(|p| WalkPath::new(p).expect("enumerated paths are valid"))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanVerdict {
    Bounded,
    NearThreshold,
    Diverging,
}

impl ScanVerdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScanVerdict::Bounded => "bounded",
            ScanVerdict::NearThreshold => "near-threshold",
            ScanVerdict::Diverging => "diverging",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentScanRecord {
    pub d: usize,
    pub family: String,
    pub beta_hat: f64,
    pub n: usize,
    pub beta_n: f64,
    pub lambda1: f64,
    pub second_moment: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentScan {
    pub records: Vec<MomentScanRecord>,
    /// √(π/λ''(0)).
    pub threshold: f64,
    pub verdict: ScanVerdict,
    /// Least-squares slope of log(Q[W²] − 1) against log N.
    pub log_log_slope: Option<f64>,
}

/// √(π/λ''(0)): the boundary between bounded and diverging second moments
/// under β_N = β̂/√log N in d = 2.
pub fn intermediate_threshold(model: &EnvironmentModel) -> f64 {
    (std::f64::consts::PI / lambda_pp0(model)).sqrt()
}

/// Exact Q[W_N²(β̂/√log N)] over an N grid.
pub fn intermediate_scan(
    model: &EnvironmentModel,
    beta_hat: f64,
    grid: &[usize],
    d: usize,
) -> Result<MomentScan> {
    if !(beta_hat > 0.0 && beta_hat.is_finite()) {
        return Err(Error::precondition("β̂ must be positive and finite"));
    }
    if let Some(n) = grid.iter().find(|&&n| n < 3) {
        return Err(Error::precondition(format!("grid point N = {n} < 3")));
    }
    let records: Vec<MomentScanRecord> = stats::try_par_map(grid.len(), |i| {
        let n = grid[i];
        let beta_n = beta_hat / (n as f64).ln().sqrt();
        Ok(MomentScanRecord {
            d,
            family: model.family().to_string(),
            beta_hat,
            n,
            beta_n,
            lambda1: lambda1(model, beta_n),
            second_moment: second_moment_exact(model, beta_n, n, d)?,
        })
    })?;
    let threshold = intermediate_threshold(model);
    let rel = (beta_hat - threshold) / threshold;
    let verdict = if rel.abs() <= NEAR_THRESHOLD_BAND {
        ScanVerdict::NearThreshold
    } else if rel < 0.0 {
        ScanVerdict::Bounded
    } else {
        ScanVerdict::Diverging
    };
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.second_moment > 1.0)
        .map(|r| ((r.n as f64).ln(), (r.second_moment - 1.0).ln()))
        .collect();
    let log_log_slope = if pts.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        stats::least_squares(&x, &y, None).ok().map(|(_, b, _)| b)
    } else {
        None
    };
    Ok(MomentScan {
        records,
        threshold,
        verdict,
        log_log_slope,
    })
}

/// D_N^q = (1/N) Σ_{1≤j_1<…<j_q≤N} Π 1/(j_{i+1} − j_i).
pub fn dnq(n: usize, q: usize) -> Result<f64> {
    if !(1..=5).contains(&q) {
        return Err(Error::precondition(format!("order q = {q} not in 1..=5")));
    }
    if n < q {
        return Err(Error::precondition(format!("N = {n} < q = {q}")));
    }
    if q >= 3 && n > 1 << 15 {
        return Err(Error::resource("D_N^q convolution length", n as u64, 1 << 15));
    }
    // c_k(s): total weight of k gaps summing to s; D = (1/N) Σ_s c_{q−1}(s)(N − s)
    let inv: Vec<f64> = (0..n).map(|s| if s == 0 { 0.0 } else { 1.0 / s as f64 }).collect();
    let mut c = vec![0.0; n];
    c[0] = 1.0;
    for _ in 1..q {
        let mut next = vec![0.0; n];
        for (s, slot) in next.iter_mut().enumerate().skip(1) {
            let mut acc = KahanSum::new();
            for g in 1..=s {
                acc.add(inv[g] * c[s - g]);
            }
            *slot = acc.value();
        }
        c = next;
    }
    let mut acc = KahanSum::new();
    for (s, v) in c.iter().enumerate() {
        acc.add(v * (n - s) as f64);
    }
    Ok(acc.value() / n as f64)
}

/// log W_n for each n of the schedule and each of `m` environments.
/// Environment i uses seed `derive_seed(seed, STREAM_ENVIRONMENT, i)`.
pub fn sample_log_partitions(
    model: &EnvironmentModel,
    beta: f64,
    d: usize,
    schedule: &[usize],
    m: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let horizon = *schedule
        .last()
        .ok_or_else(|| Error::precondition("empty horizon schedule"))?;
    let origin = LatticePoint::origin(d);
    stats::try_par_map(m, |i| {
        let f = EnvironmentField::centered(
            model.clone(),
            derive_seed(seed, STREAM_ENVIRONMENT, i as u64),
            d,
            horizon as u32,
            horizon as i32,
        )?;
        log_partition_profile(&f, model, beta, schedule, &origin)
    })
}

/// (1/(nθ))·log(mean W^θ) − mean(log W)/n on a sample of log W_n values.
/// Nonnegative by Jensen's inequality on the empirical measure.
pub fn jensen_slack(log_w: &[f64], theta: f64, n: usize) -> f64 {
    let m = log_w.len() as f64;
    let scaled: Vec<f64> = log_w.iter().map(|l| theta * l).collect();
    let lhs = (log_sum_exp(&scaled) - m.ln()) / (theta * n as f64);
    let rhs = stats::pairwise_sum(log_w) / (m * n as f64);
    lhs - rhs
}

/// Tolerance of the runtime Jensen check.
pub const JENSEN_TOLERANCE: f64 = 1e-12;

/// Computes [`jensen_slack`] and panics if it is below −1e-12: the ordering
/// is an identity of the empirical measure, so a violation is a bug.
pub fn checked_jensen_slack(log_w: &[f64], theta: f64, n: usize) -> f64 {
    let s = jensen_slack(log_w, theta, n);
    assert!(
        s >= -JENSEN_TOLERANCE,
        "Jensen ordering violated: slack {s:e} (θ = {theta}, n = {n}, M = {})",
        log_w.len()
    );
    s
}

/// Q̂[W^θ] from log W samples, as (mean, SE) computed with a max shift.
pub fn fractional_mean_se(log_w: &[f64], theta: f64) -> (f64, f64) {
    let shift = log_w
        .iter()
        .map(|l| theta * l)
        .fold(f64::NEG_INFINITY, f64::max);
    let xs: Vec<f64> = log_w.iter().map(|l| (theta * l - shift).exp()).collect();
    let (m, se) = stats::mean_se(&xs);
    (m * shift.exp(), se * shift.exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionalMoment {
    /// Q̂[W_n^θ].
    pub estimate: EstimateRecord,
    /// (1/(nθ))·log Q̂[W_n^θ].
    pub certificate: f64,
    /// mean(log W_n)/n on the same environments.
    pub mean_log_w_per_step: f64,
    pub jensen_slack: f64,
}

/// Q̂[W_n^θ] over M environments, d-dimensional walk from the origin.
pub fn fractional_moment_mc(
    model: &EnvironmentModel,
    beta: f64,
    theta: f64,
    n: usize,
    d: usize,
    m: usize,
    seed: u64,
) -> Result<FractionalMoment> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::precondition("θ must lie in (0, 1)"));
    }
    if m < 2 {
        return Err(Error::precondition("need at least two samples"));
    }
    let params = json!({"family": model.family(), "beta": beta, "theta": theta, "n": n, "d": d});
    if beta == 0.0 {
        return Ok(FractionalMoment {
            estimate: EstimateRecord::exact(1.0, m, seed, params),
            certificate: 0.0,
            mean_log_w_per_step: 0.0,
            jensen_slack: 0.0,
        });
    }
    let logs: Vec<f64> = sample_log_partitions(model, beta, d, &[n], m, seed)?
        .into_iter()
        .map(|v| v[0])
        .collect();
    Ok(fractional_from_logs(&logs, theta, n, seed, params))
}

pub(crate) fn fractional_from_logs(
    logs: &[f64],
    theta: f64,
    n: usize,
    seed: u64,
    params: serde_json::Value,
) -> FractionalMoment {
    let slack = checked_jensen_slack(logs, theta, n);
    let (mean, se) = fractional_mean_se(logs, theta);
    let scaled: Vec<f64> = logs.iter().map(|l| theta * l).collect();
    let certificate = (log_sum_exp(&scaled) - (logs.len() as f64).ln()) / (theta * n as f64);
    FractionalMoment {
        estimate: EstimateRecord {
            mean,
            se,
            samples: logs.len(),
            seed,
            params,
        },
        certificate,
        mean_log_w_per_step: stats::pairwise_sum(logs) / (logs.len() * n) as f64,
        jensen_slack: slack,
    }
}
