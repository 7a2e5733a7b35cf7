//! Change-of-measure statistics: the chaos A^{q,N}, the penalty f_K and its
//! product g, the path functionals X and L, means and variances under the
//! path-tilted law Q_S, and the extension V^N.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::env::{cumulant, Environment, EnvironmentField, EnvironmentModel, SliceEta};
use crate::error::{Error, Result};
use crate::estimator::beta_of_n;
use crate::lattice::{Grid, LatticePoint, Row, SiteBox};
use crate::moments::{dnq, lambda1, renewal_partial_sums};
use crate::partition::{log_partition_value, BoxSpec, DEFAULT_GRID_CAP};
use crate::rng::derive_seed;
use crate::stats::{self, EstimateRecord, KahanSum};
use crate::walk::{return_probabilities, sample_path_from, TransitionKernel, WalkPath};

pub const MAX_ORDER: usize = 5;

/// Default mass cutoff of the marks DP (see [`ChaosParams::cutoff`]).
pub const DEFAULT_CUTOFF: f64 = 1e-10;

pub const STREAM_CHAOS: u64 = 0x20;
pub const STREAM_TILTED: u64 = 0x21;
pub const STREAM_WALK: u64 = 0x22;

/// Candidate values scanned by [`calibrate_c2`].
pub const C2_CANDIDATES: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosParams {
    pub q: usize,
    pub gamma_hat: f64,
    /// Block length N.
    pub n: usize,
    /// Block index z; the statistic sums over starting points in B_z^N.
    pub block: LatticePoint,
    /// Penalty level K.
    pub k_level: f64,
    pub c1: f64,
    pub c2: f64,
    pub theta: f64,
    /// Tilt strength of Q_S. `None` takes β = C1·(log N)^{−(q−1)/(2q)}.
    pub tilt_beta: Option<f64>,
    /// Sites where the walk mass started from the box, P^y(S_t ∈ B), is
    /// below this value are dropped from the marks DP. 0 keeps every
    /// reachable site.
    pub cutoff: f64,
}

impl ChaosParams {
    pub fn new(q: usize, gamma_hat: f64, n: usize, d: usize) -> Result<Self> {
        let p = ChaosParams {
            q,
            gamma_hat,
            n,
            block: LatticePoint::origin(d),
            k_level: 5.0,
            c1: 2.0,
            c2: 4.0,
            theta: 0.5,
            tilt_beta: None,
            cutoff: DEFAULT_CUTOFF,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_ORDER).contains(&self.q) {
            return Err(Error::precondition(format!("chaos order q = {} not in 1..=5", self.q)));
        }
        if self.n < 2 {
            return Err(Error::precondition("block length N must be at least 2"));
        }
        if !self.gamma_hat.is_finite() {
            return Err(Error::precondition("γ̂ must be finite"));
        }
        if !(self.k_level > 0.0) {
            return Err(Error::precondition("penalty level K must be positive"));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::precondition("θ must lie in (0, 1)"));
        }
        if !(self.c1 > 0.0) || self.c2.is_nan() || self.c2 < 0.0 {
            return Err(Error::precondition("C1 must be positive and C2 nonnegative"));
        }
        if !(self.cutoff >= 0.0 && self.cutoff < 1.0) {
            return Err(Error::precondition("mass cutoff must lie in [0, 1)"));
        }
        if !(1..=3).contains(&self.block.dim()) {
            return Err(Error::precondition("block dimension not in 1..=3"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.block.dim()
    }

    /// γ_N = γ̂/√log N.
    pub fn gamma_n(&self) -> f64 {
        self.gamma_hat / (self.n as f64).ln().sqrt()
    }

    pub fn beta(&self) -> Result<f64> {
        match self.tilt_beta {
            Some(b) => Ok(b),
            None => beta_of_n(self.c1, self.q, self.n),
        }
    }

    pub fn spec(&self) -> BoxSpec {
        BoxSpec::new(self.n).expect("N ≥ 2 checked")
    }

    pub fn box_sites(&self) -> SiteBox {
        self.spec().box_range(&self.block)
    }

    pub fn echo(&self, model: &EnvironmentModel) -> serde_json::Value {
        json!({
            "family": model.family(),
            "q": self.q,
            "gamma_hat": self.gamma_hat,
            "N": self.n,
            "block": self.block.coords(),
            "K": self.k_level,
            "C1": self.c1,
            "C2": if self.c2.is_finite() { json!(self.c2) } else { json!("inf") },
            "theta": self.theta,
            "tilt_beta": self.tilt_beta,
            "cutoff": self.cutoff,
        })
    }
}

/// Moment constants of the tilted law at (γ_N, β).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosConstants {
    pub gamma_n: f64,
    pub beta: f64,
    /// Q[(e(γ_N) − 1)²] = exp(λ(2γ_N) − 2λ(γ_N)) − 1.
    pub lambda1: f64,
    pub lambda2_pair: f64,
    pub lambda3_cross: f64,
    /// Q_S[e_{i,y}(γ_N)] − 1 at an on-path site.
    pub m_on: f64,
    /// Q_S[ê²] at an on-path site, ê = e(γ_N) − 1 − m.
    pub ehat2_on: f64,
    pub ehat2_off: f64,
}

impl ChaosConstants {
    pub fn new(model: &EnvironmentModel, gamma_n: f64, beta: f64) -> Self {
        let lg = cumulant(model, gamma_n);
        let lb = cumulant(model, beta);
        let pair = cumulant(model, 2.0 * gamma_n + beta) - 2.0 * lg - lb;
        let cross = (cumulant(model, gamma_n + beta) - lg - lb).exp_m1();
        let l1 = lambda1(model, gamma_n);
        ChaosConstants {
            gamma_n,
            beta,
            lambda1: l1,
            lambda2_pair: pair.exp_m1(),
            lambda3_cross: cross,
            m_on: cross,
            ehat2_on: pair.exp() - (1.0 + cross).powi(2),
            ehat2_off: l1,
        }
    }
}

/// The marks DP sweeps, for every t ≤ N, the sites it keeps. The geometry
/// is relative to the box centre and depends only on (d, N, cutoff).
pub(crate) struct MarksGeometry {
    dim: usize,
    n: usize,
    grid: Grid,
    rows: Vec<Vec<Row>>,
    hull: SiteBox,
    lost_mass: f64,
}

type GeometryKey = (usize, usize, u64);

fn geometry_cache() -> &'static Mutex<HashMap<GeometryKey, Arc<MarksGeometry>>> {
    static CACHE: OnceLock<Mutex<HashMap<GeometryKey, Arc<MarksGeometry>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

pub(crate) fn marks_geometry(d: usize, n: usize, cutoff: f64) -> Result<Arc<MarksGeometry>> {
    let key = (d, n, cutoff.to_bits());
    if let Some(g) = geometry_cache().lock().expect("cache lock").get(&key) {
        return Ok(g.clone());
    }
    let g = Arc::new(MarksGeometry::build(d, n, cutoff)?);
    geometry_cache()
        .lock()
        .expect("cache lock")
        .insert(key, g.clone());
    Ok(g)
}

/// One step of the walk operator on mass: out(y) = (1/2d) Σ_{|y'−y|=1} inp(y').
fn spread(grid: &Grid, rows: &[Row], inp: &[f64], out: &mut [f64]) {
    let d = grid.dim;
    let inv = 1.0 / (2 * d) as f64;
    let (s0, s1) = (grid.stride[0], grid.stride[1]);
    for row in rows {
        let mut i = row.base;
        for _ in 0..row.len {
            let g = match d {
                1 => inp[i - 1] + inp[i + 1],
                2 => inp[i - 1] + inp[i + 1] + inp[i - s0] + inp[i + s0],
                _ => inp[i - 1] + inp[i + 1] + inp[i - s1] + inp[i + s1] + inp[i - s0] + inp[i + s0],
            };
            out[i] = g * inv;
            i += 1;
        }
    }
}

fn rows_sum(rows: &[Row], buf: &[f64]) -> f64 {
    let mut acc = KahanSum::new();
    for row in rows {
        for v in &buf[row.base..row.base + row.len] {
            acc.add(*v);
        }
    }
    acc.value()
}

fn fill_rows(rows: &[Row], buf: &mut [f64], v: f64) {
    for row in rows {
        buf[row.base..row.base + row.len].fill(v);
    }
}

impl MarksGeometry {
    fn build(d: usize, n: usize, cutoff: f64) -> Result<Self> {
        let spec = BoxSpec::new(n)?;
        let b = SiteBox::around(LatticePoint::origin(d), spec.half_width());
        let full = b.expand(n as i32);
        let sites = (full.volume() as f64) * 2.0;
        if sites > DEFAULT_GRID_CAP as f64 {
            return Err(Error::resource("marks DP sites", sites as u64, DEFAULT_GRID_CAP));
        }
        let grid = Grid::covering(&full);
        let exact: Vec<Vec<Row>> = (0..=n).map(|t| grid.region_rows(&b, t as i32)).collect();
        if cutoff == 0.0 {
            return Ok(MarksGeometry {
                dim: d,
                n,
                grid,
                rows: exact,
                hull: full,
                lost_mass: 0.0,
            });
        }
        let last = d - 1;
        let prefix = |r: &Row| [r.start[0], if d == 3 { r.start[1] } else { 0 }];
        // exact F_0(t, ·) = P^·(S_t ∈ B); per row prefix keep the hull over time
        // of the interval where F_0 ≥ cutoff
        let mut cur = vec![0.0; grid.len];
        let mut nxt = vec![0.0; grid.len];
        fill_rows(&exact[0], &mut cur, 1.0);
        let mut keep: BTreeMap<[i32; 2], (i32, i32)> = BTreeMap::new();
        for r in &exact[0] {
            let lo = r.start[last];
            keep.insert(prefix(r), (lo, lo + r.len as i32 - 1));
        }
        let mut rows = vec![Self::rows_of(&grid, &keep, d)];
        for t in 1..=n {
            spread(&grid, &exact[t], &cur, &mut nxt);
            for r in &exact[t] {
                let vals = &nxt[r.base..r.base + r.len];
                let first = vals.iter().position(|v| *v >= cutoff);
                let Some(first) = first else { continue };
                let end = vals.iter().rposition(|v| *v >= cutoff).unwrap_or(first);
                let lo = r.start[last] + first as i32;
                let hi = r.start[last] + end as i32;
                keep.entry(prefix(r))
                    .and_modify(|e| *e = (e.0.min(lo), e.1.max(hi)))
                    .or_insert((lo, hi));
            }
            rows.push(Self::rows_of(&grid, &keep, d));
            std::mem::swap(&mut cur, &mut nxt);
        }
        let mut lo = [i32::MAX; 3];
        let mut hi = [i32::MIN; 3];
        for r in rows.last().unwrap() {
            for k in 0..d {
                lo[k] = lo[k].min(r.start[k]);
                hi[k] = hi[k].max(r.start[k]);
            }
            hi[last] = hi[last].max(r.start[last] + r.len as i32 - 1);
        }
        let hull = SiteBox::new(LatticePoint::from_raw(lo, d), LatticePoint::from_raw(hi, d));
        // truncated F_0 sweep for the lost mass
        cur.fill(0.0);
        nxt.fill(0.0);
        fill_rows(&rows[0], &mut cur, 1.0);
        for row_t in rows.iter().skip(1) {
            spread(&grid, row_t, &cur, &mut nxt);
            std::mem::swap(&mut cur, &mut nxt);
        }
        let lost = (b.volume() as f64 - rows_sum(&rows[n], &cur)).max(0.0);
        Ok(MarksGeometry {
            dim: d,
            n,
            grid,
            rows,
            hull,
            lost_mass: lost,
        })
    }

    fn rows_of(grid: &Grid, keep: &BTreeMap<[i32; 2], (i32, i32)>, d: usize) -> Vec<Row> {
        keep.iter()
            .map(|(p, (lo, hi))| {
                let start = match d {
                    1 => [*lo, 0, 0],
                    2 => [p[0], *lo, 0],
                    _ => [p[0], p[1], *lo],
                };
                Row {
                    start,
                    base: grid.idx(&start),
                    len: (hi - lo + 1) as usize,
                }
            })
            .collect()
    }
}

/// Value of the marks DP: A^{k,N} for k = 1..=q.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosValue {
    /// `orders[k − 1]` = A^{k,N}.
    pub orders: Vec<f64>,
    /// |B| minus the walk mass that survives the cutoff; 0 for the exact
    /// region.
    pub truncated_mass: f64,
}

impl ChaosValue {
    pub fn value(&self) -> f64 {
        *self.orders.last().expect("q ≥ 1")
    }
}

/// A_ℓ^{q,N} = (√log N/N)·Σ_{x∈B_z} P^x[Σ_{j₁<…<j_q} Π (e_{ℓN+j_i, S_{j_i}}(γ_N) − 1)].
pub fn chaos_statistic<E: Environment>(
    env: &E,
    model: &EnvironmentModel,
    params: &ChaosParams,
    ell: u32,
) -> Result<f64> {
    Ok(chaos_orders(env, model, params, ell)?.value())
}

/// Every order 1..=q of the chaos from one forward sweep. With
/// F_0(0, ·) = 1_B and
///   F_k(t, y) = (P F_k(t−1))(y) + (e_{t,y}(γ_N) − 1)·(P F_{k−1}(t−1))(y),
/// A^{k,N} = (√log N/N)·Σ_y F_k(N, y).
pub fn chaos_orders<E: Environment>(
    env: &E,
    model: &EnvironmentModel,
    params: &ChaosParams,
    ell: u32,
) -> Result<ChaosValue> {
    params.validate()?;
    let d = params.dim();
    if env.dim() != d {
        return Err(Error::precondition("field dimension differs from block dimension"));
    }
    let n = params.n;
    let geo = marks_geometry(d, n, params.cutoff)?;
    let bs = params.box_sites();
    let (lo, hi) = (bs.lo.raw(), bs.hi.raw());
    let center = [0, 1, 2].map(|k| (lo[k] + hi[k]) / 2);
    let hull = SiteBox::new(
        LatticePoint::from_raw(add3(geo.hull.lo.raw(), &center), d),
        LatticePoint::from_raw(add3(geo.hull.hi.raw(), &center), d),
    );
    let t0 = ell * n as u32;
    env.window().require(t0 + 1, t0 + n as u32, &hull)?;
    let gamma = params.gamma_n();
    let scale = (n as f64).ln().sqrt() / n as f64;
    if gamma == 0.0 {
        return Ok(ChaosValue {
            orders: vec![0.0; params.q],
            truncated_mass: geo.lost_mass,
        });
    }
    let lam = cumulant(model, gamma);
    let sums: Vec<f64> = match params.q {
        1 => marks_sweep::<E, 2>(env, &geo, center, t0, gamma, lam).to_vec(),
        2 => marks_sweep::<E, 3>(env, &geo, center, t0, gamma, lam).to_vec(),
        3 => marks_sweep::<E, 4>(env, &geo, center, t0, gamma, lam).to_vec(),
        4 => marks_sweep::<E, 5>(env, &geo, center, t0, gamma, lam).to_vec(),
        _ => marks_sweep::<E, 6>(env, &geo, center, t0, gamma, lam).to_vec(),
    };
    Ok(ChaosValue {
        orders: sums[1..].iter().map(|s| s * scale).collect(),
        truncated_mass: geo.lost_mass,
    })
}

fn add3(a: &[i32; 3], b: &[i32; 3]) -> [i32; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Σ_y F_k(N, y) for k < Q1, with all orders of a site stored contiguously.
fn marks_sweep<E: Environment, const Q1: usize>(
    env: &E,
    geo: &MarksGeometry,
    center: [i32; 3],
    t0: u32,
    gamma: f64,
    lam: f64,
) -> [f64; Q1] {
    let d = geo.dim;
    let inv = 1.0 / (2 * d) as f64;
    let s0 = geo.grid.stride[0] * Q1;
    let s1 = geo.grid.stride[1] * Q1;
    let mut cur = vec![0.0; geo.grid.len * Q1];
    let mut nxt = vec![0.0; geo.grid.len * Q1];
    for row in &geo.rows[0] {
        for i in 0..row.len {
            cur[(row.base + i) * Q1] = 1.0;
        }
    }
    for t in 1..=geo.n {
        let slice = env.slice(t0 + t as u32);
        for row in &geo.rows[t] {
            let a0 = row.start[0] + center[0];
            let a1 = row.start[1] + center[1];
            let mut last = row.start[d - 1] + center[d - 1];
            let b = row.base * Q1;
            let w = row.len * Q1;
            // the row with one site of margin, and the rows beside it
            let mid = &cur[b - Q1..b + w + Q1];
            let side = |s: usize| (&cur[b - s..b - s + w], &cur[b + s..b + s + w]);
            let (u0, v0) = if d >= 2 { side(s0) } else { (&mid[..w], &mid[..w]) };
            let (u1, v1) = if d == 3 { side(s1) } else { (&mid[..w], &mid[..w]) };
            let out = &mut nxt[b..b + w];
            for o in (0..w).step_by(Q1) {
                let c = match d {
                    1 => [last, 0, 0],
                    2 => [a0, last, 0],
                    _ => [a0, a1, last],
                };
                let em1 = (gamma * slice.eta(&c) - lam).exp_m1();
                let l: &[f64; Q1] = mid[o..o + Q1].try_into().unwrap();
                let r: &[f64; Q1] = mid[o + 2 * Q1..o + 3 * Q1].try_into().unwrap();
                let mut g = [0.0; Q1];
                for k in 0..Q1 {
                    g[k] = l[k] + r[k];
                }
                if d >= 2 {
                    let (u, v): (&[f64; Q1], &[f64; Q1]) =
                        (u0[o..o + Q1].try_into().unwrap(), v0[o..o + Q1].try_into().unwrap());
                    for k in 0..Q1 {
                        g[k] += u[k] + v[k];
                    }
                }
                if d == 3 {
                    let (u, v): (&[f64; Q1], &[f64; Q1]) =
                        (u1[o..o + Q1].try_into().unwrap(), v1[o..o + Q1].try_into().unwrap());
                    for k in 0..Q1 {
                        g[k] += u[k] + v[k];
                    }
                }
                let dst: &mut [f64; Q1] = (&mut out[o..o + Q1]).try_into().unwrap();
                dst[0] = g[0] * inv;
                for k in 1..Q1 {
                    dst[k] = (g[k] + em1 * g[k - 1]) * inv;
                }
                last += 1;
            }
        }
        std::mem::swap(&mut cur, &mut nxt);
    }
    let mut acc = [KahanSum::new(); Q1];
    for row in &geo.rows[geo.n] {
        for i in 0..row.len {
            let base = (row.base + i) * Q1;
            for (k, a) in acc.iter_mut().enumerate() {
                a.add(cur[base + k]);
            }
        }
    }
    acc.map(|a| a.value())
}

fn chaos_field(model: &EnvironmentModel, params: &ChaosParams, seed: u64) -> Result<EnvironmentField> {
    EnvironmentField::new(
        model.clone(),
        seed,
        params.n as u32,
        params.box_sites().expand(params.n as i32),
    )
}

/// A_0^{q,N} on M independent untilted fields; field i uses
/// `derive_seed(seed, STREAM_CHAOS, i)`.
pub fn chaos_samples(
    model: &EnvironmentModel,
    params: &ChaosParams,
    m: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    params.validate()?;
    if params.gamma_hat == 0.0 {
        return Ok(vec![0.0; m]);
    }
    stats::try_par_map(m, |i| {
        let f = chaos_field(model, params, derive_seed(seed, STREAM_CHAOS, i as u64))?;
        chaos_statistic(&f, model, params, 0)
    })
}

pub fn chaos_mean_mc(
    model: &EnvironmentModel,
    params: &ChaosParams,
    m: usize,
    seed: u64,
) -> Result<EstimateRecord> {
    let xs = chaos_samples(model, params, m, seed)?;
    record(&xs, seed, params.echo(model))
}

/// Q̂[A²] over M ≥ 100 untilted fields.
pub fn chaos_second_moment_mc(
    model: &EnvironmentModel,
    params: &ChaosParams,
    m: usize,
    seed: u64,
) -> Result<EstimateRecord> {
    if m < 100 {
        return Err(Error::precondition("chaos second moment needs M ≥ 100"));
    }
    let xs = chaos_samples(model, params, m, seed)?;
    let sq: Vec<f64> = xs.iter().map(|a| a * a).collect();
    record(&sq, seed, params.echo(model))
}

fn record(xs: &[f64], seed: u64, params: serde_json::Value) -> Result<EstimateRecord> {
    if xs.iter().all(|v| *v == 0.0) {
        return Ok(EstimateRecord::exact(0.0, xs.len(), seed, params));
    }
    EstimateRecord::from_samples(xs, seed, params)
}

/// c(j) = Σ_{y,y'∈B} P(S^y_j = S^{y'}_j) = Σ_a mult(a)·p_{2j}(0, a) for
/// j = 0..=n, where mult(a) counts the pairs of box points at offset a.
pub(crate) fn pair_meeting_weights(d: usize, n: usize) -> Result<Vec<f64>> {
    let m = BoxSpec::new(n)?.half_width();
    let kernel = TransitionKernel::new(d, 2 * n)?;
    let side = 2 * m + 1;
    let offsets = SiteBox::around(LatticePoint::origin(d), 2 * m).points();
    let mult: Vec<f64> = offsets
        .iter()
        .map(|a| a.coords().iter().map(|c| (side - c.abs()) as f64).product())
        .collect();
    let mut c = vec![(side as f64).powi(d as i32)];
    for j in 1..=n {
        let mut acc = KahanSum::new();
        for (a, w) in offsets.iter().zip(&mult) {
            if a.l1() % 2 == 0 && a.l1() <= 2 * j as i64 {
                acc.add(w * kernel.p0(2 * j, a));
            }
        }
        c.push(acc.value());
    }
    Ok(c)
}

/// Q[(A^{q,N})²] in closed form:
/// (log N/N²)·Λ₁(γ_N)^q·Σ_{j₁} c(j₁)·R_{q−1}(N − j₁), where R_k(T) sums the
/// products of k return probabilities over increasing gap sequences of total
/// length ≤ T.
pub fn chaos_second_moment_exact(model: &EnvironmentModel, params: &ChaosParams) -> Result<f64> {
    params.validate()?;
    let (n, q, d) = (params.n, params.q, params.dim());
    let l1 = lambda1(model, params.gamma_n());
    if l1 == 0.0 {
        return Ok(0.0);
    }
    let c = pair_meeting_weights(d, n)?;
    let r = return_probabilities(d, n)?;
    // R_0 ≡ 1; R_k(T) = Σ_{g=1}^{T} r_g R_{k−1}(T − g)
    let mut big_r = vec![1.0; n + 1];
    for _ in 1..q {
        let mut next = vec![0.0; n + 1];
        for (t, slot) in next.iter_mut().enumerate() {
            let mut acc = KahanSum::new();
            for g in 1..=t {
                acc.add(r[g] * big_r[t - g]);
            }
            *slot = acc.value();
        }
        big_r = next;
    }
    let mut acc = KahanSum::new();
    for j in 1..=n {
        acc.add(c[j] * big_r[n - j]);
    }
    let nf = n as f64;
    Ok(nf.ln() / (nf * nf) * l1.powi(q as i32) * acc.value())
}

/// f_K(x) = −K·1{x > e^{K²}}.
pub fn penalty(x: f64, k: f64) -> f64 {
    if x > (k * k).exp() {
        -k
    } else {
        0.0
    }
}

/// g = exp(Σ f_K(A_k)).
pub fn g_product(values: &[f64], k: f64) -> f64 {
    values.iter().map(|x| penalty(*x, k)).sum::<f64>().exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostFactor {
    /// Q̂[exp(−θ/(1−θ)·f_K(A))].
    pub estimate: EstimateRecord,
    /// Whether the estimate is at most 2.
    pub within_bound: bool,
}

/// The per-block Hölder cost from chaos samples drawn under Q.
pub fn cost_factor_from_samples(
    samples: &[f64],
    k: f64,
    theta: f64,
    seed: u64,
    params: serde_json::Value,
) -> Result<CostFactor> {
    let r = theta / (1.0 - theta);
    let xs: Vec<f64> = samples.iter().map(|a| (-r * penalty(*a, k)).exp()).collect();
    let estimate = if xs.iter().all(|v| *v == 1.0) {
        EstimateRecord::exact(1.0, xs.len(), seed, params)
    } else {
        EstimateRecord::from_samples(&xs, seed, params)?
    };
    Ok(CostFactor {
        within_bound: estimate.mean <= 2.0,
        estimate,
    })
}

pub fn penalty_cost_factor(
    model: &EnvironmentModel,
    params: &ChaosParams,
    m: usize,
    seed: u64,
) -> Result<CostFactor> {
    let xs = chaos_samples(model, params, m, seed)?;
    cost_factor_from_samples(&xs, params.k_level, params.theta, seed, params.echo(model))
}

/// Where the first kernel of X starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum XReading {
    /// p_{j₁}(y, S_{j₁}) summed over y ∈ B₀; consistent with
    /// Q_S[A] = √log N·Λ₃^q·X.
    FromBox,
    /// The displayed formula taken literally: the first kernel runs from
    /// S₀ and the sum over y only multiplies by |B₀|.
    Verbatim,
}

/// Σ_{y∈B} p_j(y, s) for the box B = [−m, m]^d.
fn box_mass(kernel: &TransitionKernel, j: usize, s: &LatticePoint, m: i32) -> f64 {
    let d = s.dim();
    let c = s.raw();
    let j = j as i32;
    let mut acc = 0.0;
    let range = |k: usize| ((c[k] - j).max(-m), (c[k] + j).min(m));
    let (lo0, hi0) = range(0);
    for y0 in lo0..=hi0 {
        if d == 1 {
            acc += kernel.p0(j as usize, &LatticePoint::from_raw([c[0] - y0, 0, 0], 1));
            continue;
        }
        let (lo1, hi1) = range(1);
        for y1 in lo1..=hi1 {
            if d == 2 {
                let w = [c[0] - y0, c[1] - y1, 0];
                if (w[0].abs() + w[1].abs()) <= j {
                    acc += kernel.p0(j as usize, &LatticePoint::from_raw(w, 2));
                }
                continue;
            }
            let (lo2, hi2) = range(2);
            for y2 in lo2..=hi2 {
                let w = [c[0] - y0, c[1] - y1, c[2] - y2];
                if w.iter().map(|v| v.abs()).sum::<i32>() <= j {
                    acc += kernel.p0(j as usize, &LatticePoint::from_raw(w, 3));
                }
            }
        }
    }
    acc
}

fn check_path(path: &WalkPath, n: usize, kernel: &TransitionKernel) -> Result<()> {
    use crate::walk::Kernel;
    if path.len() < n {
        return Err(Error::precondition(format!(
            "path has {} steps, need {n}",
            path.len()
        )));
    }
    if kernel.horizon() < n {
        return Err(Error::precondition(format!(
            "kernel horizon {} is shorter than N = {n}",
            kernel.horizon()
        )));
    }
    if kernel.dim() != path.dim() {
        return Err(Error::precondition("kernel and path dimensions differ"));
    }
    Ok(())
}

/// X = (1/N)·Σ_{y∈B₀}Σ_{0<j₁<…<j_q≤N} p_{j₁}(y, S_{j₁})·Π p_{j_{i+1}−j_i}(S_{j_i}, S_{j_{i+1}}).
pub fn x_statistic(path: &WalkPath, q: usize, n: usize, kernel: &TransitionKernel) -> Result<f64> {
    x_statistic_with(path, q, n, kernel, XReading::FromBox)
}

pub fn x_statistic_with(
    path: &WalkPath,
    q: usize,
    n: usize,
    kernel: &TransitionKernel,
    reading: XReading,
) -> Result<f64> {
    if !(1..=MAX_ORDER).contains(&q) {
        return Err(Error::precondition(format!("order q = {q} not in 1..=5")));
    }
    check_path(path, n, kernel)?;
    let m = BoxSpec::new(n)?.half_width();
    let vol = ((2 * m + 1) as f64).powi(path.dim() as i32);
    let s = path.positions();
    let first: Vec<f64> = (0..=n)
        .map(|j| match (j, reading) {
            (0, _) => 0.0,
            (_, XReading::FromBox) => box_mass(kernel, j, &s[j], m),
            (_, XReading::Verbatim) => vol * kernel.p0(j, &(s[j] - s[0])),
        })
        .collect();
    Ok(path_chain(&first, q, n, |j, k| kernel.p0(k - j, &(s[k] - s[j]))) / n as f64)
}

/// Σ_{j₁<…<j_q≤N} first(j₁)·Π link(j_i, j_{i+1}) by a 1-D DP over the last
/// index.
fn path_chain(first: &[f64], q: usize, n: usize, link: impl Fn(usize, usize) -> f64) -> f64 {
    let mut a = first.to_vec();
    if q > 1 {
        let mut table = vec![0.0; (n + 1) * (n + 1)];
        for j in 1..=n {
            for k in j + 1..=n {
                table[j * (n + 1) + k] = link(j, k);
            }
        }
        for _ in 1..q {
            let mut next = vec![0.0; n + 1];
            for (k, slot) in next.iter_mut().enumerate().skip(1) {
                let mut acc = KahanSum::new();
                for j in 1..k {
                    acc.add(a[j] * table[j * (n + 1) + k]);
                }
                *slot = acc.value();
            }
            a = next;
        }
    }
    let mut acc = KahanSum::new();
    for v in &a[1..=n] {
        acc.add(*v);
    }
    acc.value()
}

/// L = (1/N)·Σ_{j₁<…<j_q} 1{|S_{j₁} − x| ≤ C₂√j₁}·Π 1{|S_{j_{i+1}} − S_{j_i}| ≤ C₂√(j_{i+1} − j_i)}/(j_{i+1} − j_i).
/// `c2 = f64::INFINITY` switches every indicator on, giving D_N^q.
pub fn l_statistic(path: &WalkPath, q: usize, n: usize, c2: f64, x: &LatticePoint) -> Result<f64> {
    if !(1..=MAX_ORDER).contains(&q) {
        return Err(Error::precondition(format!("order q = {q} not in 1..=5")));
    }
    if c2.is_nan() || c2 < 0.0 {
        return Err(Error::precondition("C2 must be nonnegative"));
    }
    if path.len() < n || n < 1 {
        return Err(Error::precondition("path shorter than N"));
    }
    let s = path.positions();
    let near = |a: &LatticePoint, b: &LatticePoint, gap: usize| {
        c2.is_infinite() || (a.l1_dist(b) as f64) <= c2 * (gap as f64).sqrt()
    };
    let first: Vec<f64> = (0..=n)
        .map(|j| if j > 0 && near(&s[j], x, j) { 1.0 } else { 0.0 })
        .collect();
    Ok(path_chain(&first, q, n, |j, k| {
        if near(&s[k], &s[j], k - j) {
            1.0 / (k - j) as f64
        } else {
            0.0
        }
    }) / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct C2Calibration {
    /// Smallest candidate with P̂(L ≥ D/2) ≥ 0.9, if any.
    pub c2: Option<f64>,
    /// (C₂, P̂(L ≥ D/2)) for each candidate tried.
    pub fractions: Vec<(f64, f64)>,
    pub dnq: f64,
    pub walks: usize,
    pub seed: u64,
}

/// Scans [`C2_CANDIDATES`] on `walks` paths from the origin; walk i uses
/// `derive_seed(seed, STREAM_WALK, i)`.
pub fn calibrate_c2(q: usize, n: usize, d: usize, walks: usize, seed: u64) -> Result<C2Calibration> {
    let d_n = dnq(n, q)?;
    let origin = LatticePoint::origin(d);
    let paths: Vec<WalkPath> = (0..walks)
        .map(|i| sample_path_from(origin, n, derive_seed(seed, STREAM_WALK, i as u64)))
        .collect();
    let mut fractions = Vec::new();
    for c2 in C2_CANDIDATES {
        let hits = stats::try_par_map(paths.len(), |i| l_statistic(&paths[i], q, n, c2, &origin))?
            .iter()
            .filter(|l| **l >= d_n / 2.0)
            .count();
        let frac = hits as f64 / walks as f64;
        fractions.push((c2, frac));
        if frac >= 0.9 {
            return Ok(C2Calibration {
                c2: Some(c2),
                fractions,
                dnq: d_n,
                walks,
                seed,
            });
        }
    }
    Ok(C2Calibration {
        c2: None,
        fractions,
        dnq: d_n,
        walks,
        seed,
    })
}

/// √log N·Λ₃^q·X, the exact Q_S-mean of A_0^{q,N} given X.
pub fn tilted_mean_from_x(model: &EnvironmentModel, params: &ChaosParams, beta: f64, x: f64) -> f64 {
    let c = ChaosConstants::new(model, params.gamma_n(), beta);
    (params.n as f64).ln().sqrt() * c.lambda3_cross.powi(params.q as i32) * x
}

/// Q_S[A_0^{q,N}] = √log N·Λ₃^q·X for the tilt path S.
pub fn tilted_chaos_mean_formula(
    model: &EnvironmentModel,
    params: &ChaosParams,
    path: &WalkPath,
    kernel: &TransitionKernel,
) -> Result<f64> {
    check_tilt(params, path)?;
    let x = x_statistic(path, params.q, params.n, kernel)?;
    Ok(tilted_mean_from_x(model, params, params.beta()?, x))
}

fn check_tilt(params: &ChaosParams, path: &WalkPath) -> Result<()> {
    params.validate()?;
    if params.block != LatticePoint::origin(params.dim()) {
        return Err(Error::precondition("tilted statistics use the block z = 0"));
    }
    if path.dim() != params.dim() || path.len() != params.n {
        return Err(Error::precondition("tilt path must have N steps in the block dimension"));
    }
    if !params.box_sites().contains(&path.start()) {
        return Err(Error::precondition("tilt path must start inside B_0^N"));
    }
    Ok(())
}

/// A_0^{q,N} on M fields drawn from Q_S; field i uses
/// `derive_seed(seed, STREAM_TILTED, i)` for both its base and tilted streams.
pub fn tilted_chaos_samples(
    model: &EnvironmentModel,
    params: &ChaosParams,
    path: &WalkPath,
    m: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_tilt(params, path)?;
    if params.gamma_hat == 0.0 {
        return Ok(vec![0.0; m]);
    }
    let beta = params.beta()?;
    stats::try_par_map(m, |i| {
        let f = chaos_field(model, params, derive_seed(seed, STREAM_TILTED, i as u64))?
            .with_tilt(path, beta)?;
        chaos_statistic(&f, model, params, 0)
    })
}

pub fn tilted_chaos_mean_mc(
    model: &EnvironmentModel,
    params: &ChaosParams,
    path: &WalkPath,
    m: usize,
    seed: u64,
) -> Result<EstimateRecord> {
    let xs = tilted_chaos_samples(model, params, path, m, seed)?;
    record(&xs, seed, params.echo(model))
}

/// Var_{Q_S}[A_0^{q,N}] as a sample variance with its standard error.
pub fn tilted_chaos_variance_mc(
    model: &EnvironmentModel,
    params: &ChaosParams,
    path: &WalkPath,
    m: usize,
    seed: u64,
) -> Result<EstimateRecord> {
    if m < 100 {
        return Err(Error::precondition("tilted variance needs M ≥ 100"));
    }
    let xs = tilted_chaos_samples(model, params, path, m, seed)?;
    let params = params.echo(model);
    if xs.iter().all(|v| *v == xs[0]) {
        return Ok(EstimateRecord::exact(0.0, m, seed, params));
    }
    let (var, se) = stats::variance_se(&xs);
    Ok(EstimateRecord {
        mean: var.max(0.0),
        se,
        samples: m,
        seed,
        params,
    })
}

fn v_setup(n: usize, d: usize) -> Result<(i32, SiteBox)> {
    if n < 2 {
        return Err(Error::precondition("V^N needs N ≥ 2"));
    }
    let m = BoxSpec::new(n)?.half_width();
    Ok((m, SiteBox::around(LatticePoint::origin(d), m)))
}

/// V^N = (√log N/N)·Σ_{y∈B₀}(W_N^y(γ_N) − 1), all starting points at once
/// through the backward recursion
/// U_N ≡ 1, U_j(x) = (1/2d)·Σ_{|x'−x|=1} e_{j+1,x'}(γ_N)·U_{j+1}(x'),
/// so that W_N^y = U_0(y).
pub fn v_statistic<E: Environment>(
    env: &E,
    model: &EnvironmentModel,
    gamma_hat: f64,
    n: usize,
) -> Result<f64> {
    let d = env.dim();
    let (_, b) = v_setup(n, d)?;
    let reach = b.expand(n as i32);
    let sites = reach.volume() * 2;
    if sites > DEFAULT_GRID_CAP {
        return Err(Error::resource("V adjoint sites", sites, DEFAULT_GRID_CAP));
    }
    env.window().require(1, n as u32, &reach)?;
    let gamma = gamma_hat / (n as f64).ln().sqrt();
    if gamma == 0.0 {
        return Ok(0.0);
    }
    let lam = cumulant(model, gamma);
    let grid = Grid::covering(&reach);
    let mut cur = vec![0.0; grid.len];
    let mut nxt = vec![0.0; grid.len];
    fill_rows(&grid.region_rows(&b, n as i32), &mut cur, 1.0);
    for j in (0..n).rev() {
        let slice = env.slice(j as u32 + 1);
        for row in grid.region_rows(&b, j as i32 + 1) {
            let [a0, a1, _] = row.start;
            let mut last = row.start[d - 1];
            for i in row.base..row.base + row.len {
                let c = match d {
                    1 => [last, 0, 0],
                    2 => [a0, last, 0],
                    _ => [a0, a1, last],
                };
                cur[i] *= (gamma * slice.eta(&c) - lam).exp();
                last += 1;
            }
        }
        spread(&grid, &grid.region_rows(&b, j as i32), &cur, &mut nxt);
        std::mem::swap(&mut cur, &mut nxt);
    }
    let mut acc = KahanSum::new();
    for row in grid.region_rows(&b, 0) {
        for v in &cur[row.base..row.base + row.len] {
            acc.add(v - 1.0);
        }
    }
    Ok((n as f64).ln().sqrt() / n as f64 * acc.value())
}

/// V^N from one forward transfer run per starting point.
pub fn v_statistic_per_start<E: Environment>(
    env: &E,
    model: &EnvironmentModel,
    gamma_hat: f64,
    n: usize,
) -> Result<f64> {
    let (_, b) = v_setup(n, env.dim())?;
    let gamma = gamma_hat / (n as f64).ln().sqrt();
    let mut acc = KahanSum::new();
    for y in b.points() {
        acc.add(log_partition_value(env, model, gamma, n, &y)?.exp_m1());
    }
    Ok((n as f64).ln().sqrt() / n as f64 * acc.value())
}

/// Q[(V^N)²] = (log N/N²)·Λ₁(γ_N)·Σ_{j=1}^N c(j)·h(N − j), where c(j) is the
/// box-pair meeting weight at time j and h(T) = P^{0,0}[(1+Λ₁)^{I_T}] is the
/// renewal sum restarted at the first meeting.
pub fn v_second_moment_exact(
    model: &EnvironmentModel,
    gamma_hat: f64,
    n: usize,
    d: usize,
) -> Result<f64> {
    v_setup(n, d)?;
    let gamma = gamma_hat / (n as f64).ln().sqrt();
    let l1 = lambda1(model, gamma);
    if l1 == 0.0 {
        return Ok(0.0);
    }
    let c = pair_meeting_weights(d, n)?;
    let h = renewal_partial_sums(l1, d, n)?;
    let mut acc = KahanSum::new();
    for j in 1..=n {
        acc.add(c[j] * h[n - j]);
    }
    let nf = n as f64;
    Ok(nf.ln() / (nf * nf) * l1 * acc.value())
}

/// The same quantity by a backward recursion over the difference walk
/// D = S' − S'' (steps ξ − ξ', so D can stay put):
/// h_0 ≡ 1, h_T(a) = Σ_δ P(δ)·(1 + Λ₁·1{a + δ = 0})·h_{T−1}(a + δ),
/// then Q[(V^N)²] = (log N/N²)·Σ_a mult(a)·(h_N(a) − 1).
pub fn v_second_moment_difference_walk(
    model: &EnvironmentModel,
    gamma_hat: f64,
    n: usize,
    d: usize,
) -> Result<f64> {
    let (m, _) = v_setup(n, d)?;
    let gamma = gamma_hat / (n as f64).ln().sqrt();
    let l1 = lambda1(model, gamma);
    let reach = SiteBox::around(LatticePoint::origin(d), 2 * m + 2 * n as i32);
    if reach.volume() > DEFAULT_GRID_CAP / 4 {
        return Err(Error::resource("difference-walk sites", reach.volume(), DEFAULT_GRID_CAP / 4));
    }
    let pts = reach.points();
    let index: HashMap<LatticePoint, usize> = pts.iter().enumerate().map(|(i, p)| (*p, i)).collect();
    let origin = LatticePoint::origin(d);
    let units: Vec<LatticePoint> = origin.neighbours().collect();
    let mut steps: HashMap<LatticePoint, f64> = HashMap::new();
    let pw = 1.0 / (units.len() * units.len()) as f64;
    for a in &units {
        for b in &units {
            *steps.entry(*a - *b).or_insert(0.0) += pw;
        }
    }
    let mut steps: Vec<(LatticePoint, f64)> = steps.into_iter().collect();
    steps.sort_by_key(|s| s.0);
    let mut h = vec![1.0; pts.len()];
    for _ in 0..n {
        let mut next = vec![1.0; pts.len()];
        for (i, a) in pts.iter().enumerate() {
            let mut acc = 0.0;
            let mut inside = true;
            for (delta, p) in &steps {
                let b = *a + *delta;
                match index.get(&b) {
                    Some(&k) => {
                        let w = if b == origin { 1.0 + l1 } else { 1.0 };
                        acc += p * w * h[k];
                    }
                    None => inside = false,
                }
            }
            // sites at the rim never reach the origin in time; h stays 1
            if inside {
                next[i] = acc;
            }
        }
        h = next;
    }
    let side = 2 * m + 1;
    let mut acc = KahanSum::new();
    for a in SiteBox::around(origin, 2 * m).points() {
        let mult: f64 = a.coords().iter().map(|c| (side - c.abs()) as f64).product();
        acc.add(mult * (h[index[&a]] - 1.0));
    }
    let nf = n as f64;
    Ok(nf.ln() / (nf * nf) * acc.value())
}

/// w = exp(λ(γ_N + β_N) − λ(γ_N) − λ(β_N)), the Q_S-mean of e_{i,S_i}(γ_N).
pub fn overlap_weight(model: &EnvironmentModel, beta_n: f64, gamma_n: f64) -> f64 {
    (cumulant(model, gamma_n + beta_n) - cumulant(model, gamma_n) - cumulant(model, beta_n)).exp()
}

fn scaled_pair(n: usize, beta_hat: f64, gamma_hat: f64) -> (f64, f64) {
    let s = (n as f64).ln().sqrt();
    (beta_hat / s, gamma_hat / s)
}

/// (log N/N)·(P^{x}_{S'}[w^{I(S,S')}] − 1) for the fixed path S from x = S₀:
/// the path-anchored lower bound for Q_S[V^N]. Computed by a lattice DP over
/// the position of S' with weight w at the coincidence sites (t, S_t).
pub fn v_tilted_mean(
    model: &EnvironmentModel,
    beta_hat: f64,
    gamma_hat: f64,
    n: usize,
    path: &WalkPath,
) -> Result<f64> {
    v_setup(n, path.dim())?;
    if path.len() != n {
        return Err(Error::precondition("path must have N steps"));
    }
    let (bn, gn) = scaled_pair(n, beta_hat, gamma_hat);
    let w = overlap_weight(model, bn, gn);
    let x = path.start();
    let reach = SiteBox::around(x, n as i32);
    if reach.volume() > DEFAULT_GRID_CAP {
        return Err(Error::resource("tilted V sites", reach.volume(), DEFAULT_GRID_CAP));
    }
    let d = path.dim();
    let grid = Grid::covering(&reach);
    let mut buf = vec![0.0; grid.len];
    buf[grid.idx(x.raw())] = 1.0;
    let inv = 1.0 / (2 * d) as f64;
    let (s0, s1) = (grid.stride[0], grid.stride[1]);
    for t in 1..=n {
        for row in grid.diamond_rows(&x, t as i32) {
            let mut i = row.base;
            for _ in 0..row.len {
                let g = match d {
                    1 => buf[i - 1] + buf[i + 1],
                    2 => buf[i - 1] + buf[i + 1] + buf[i - s0] + buf[i + s0],
                    _ => buf[i - 1] + buf[i + 1] + buf[i - s1] + buf[i + s1] + buf[i - s0] + buf[i + s0],
                };
                buf[i] = g * inv;
                i += 2;
            }
        }
        buf[grid.idx(path.at(t).raw())] *= w;
    }
    let mut acc = KahanSum::new();
    for row in grid.diamond_rows(&x, n as i32) {
        for k in 0..row.len {
            acc.add(buf[row.base + 2 * k]);
        }
    }
    let nf = n as f64;
    Ok(nf.ln() / nf * (acc.value() - 1.0))
}

/// Q_S[V^N] = (√log N/N)·Σ_{y∈B₀}(P^y_{S'}[w^{I(S,S')}] − 1), exact, by the
/// same DP started from the whole box.
pub fn v_tilted_mean_full(
    model: &EnvironmentModel,
    beta_hat: f64,
    gamma_hat: f64,
    n: usize,
    path: &WalkPath,
) -> Result<f64> {
    let d = path.dim();
    let (_, b) = v_setup(n, d)?;
    if path.len() != n {
        return Err(Error::precondition("path must have N steps"));
    }
    let (bn, gn) = scaled_pair(n, beta_hat, gamma_hat);
    let w = overlap_weight(model, bn, gn);
    let reach = b.expand(n as i32);
    if reach.volume() * 2 > DEFAULT_GRID_CAP {
        return Err(Error::resource("tilted V sites", reach.volume() * 2, DEFAULT_GRID_CAP));
    }
    let grid = Grid::covering(&reach);
    let mut cur = vec![0.0; grid.len];
    let mut nxt = vec![0.0; grid.len];
    fill_rows(&grid.region_rows(&b, 0), &mut cur, 1.0);
    for t in 1..=n {
        spread(&grid, &grid.region_rows(&b, t as i32), &cur, &mut nxt);
        nxt[grid.idx(path.at(t).raw())] *= w;
        std::mem::swap(&mut cur, &mut nxt);
    }
    let total = rows_sum(&grid.region_rows(&b, n as i32), &cur);
    let nf = n as f64;
    Ok(nf.ln().sqrt() / nf * (total - b.volume() as f64))
}

/// Both tilted V quantities through the renewal along S:
/// a(k) = (w − 1)·[first(k) + Σ_{j<k} a(j)·p_{k−j}(S_j, S_k)], with
/// first(k) = p_k(S₀, S_k) (anchored) or Σ_{y∈B₀} p_k(y, S_k) (full).
pub fn v_tilted_mean_renewal(
    model: &EnvironmentModel,
    beta_hat: f64,
    gamma_hat: f64,
    n: usize,
    path: &WalkPath,
    kernel: &TransitionKernel,
    anchored: bool,
) -> Result<f64> {
    let (m, _) = v_setup(n, path.dim())?;
    check_path(path, n, kernel)?;
    let (bn, gn) = scaled_pair(n, beta_hat, gamma_hat);
    let wm1 = overlap_weight(model, bn, gn) - 1.0;
    let s = path.positions();
    let mut a = vec![0.0; n + 1];
    for k in 1..=n {
        let first = if anchored {
            kernel.p0(k, &(s[k] - s[0]))
        } else {
            box_mass(kernel, k, &s[k], m)
        };
        let mut acc = KahanSum::new();
        acc.add(first);
        for j in 1..k {
            acc.add(a[j] * kernel.p0(k - j, &(s[k] - s[j])));
        }
        a[k] = wm1 * acc.value();
    }
    let excess = stats::pairwise_sum(&a[1..]);
    let nf = n as f64;
    Ok(if anchored {
        nf.ln() / nf * excess
    } else {
        nf.ln().sqrt() / nf * excess
    })
}
