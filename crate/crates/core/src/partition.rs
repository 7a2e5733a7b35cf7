//! Transfer-matrix partition functions, directional weights, Gibbs
//! measures and the box-constrained (coarse-grained) partition functions.
//!
//! Weights are carried in scaled linear form: the stored slice is rescaled by
//! the previous slice's maximum and the logarithm of the accumulated scale is
//! kept separately, so log W_{n,y} = ln(stored) + log_scale. Sites of parity
//! t are written at time t and only read sites of parity t − 1, which lets a
//! single buffer hold both slices.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::env::{cumulant, Environment, EnvironmentModel, SliceEta};
use crate::error::{Error, Result};
use crate::lattice::{Grid, LatticePoint, SiteBox};
use crate::walk::WalkPath;

/// Largest transfer buffer, in sites, before a resource error.
pub const DEFAULT_GRID_CAP: u64 = 1 << 27;

const WEIGHT_DUMP_MAGIC: &[u8; 8] = b"DPRELWF\0";
const WEIGHT_DUMP_VERSION: u32 = 1;

/// The √N-box partition of the lattice used for coarse graining:
/// B_z = ∏_k [(2z_k − 1)m + z_k, (2z_k + 1)m + z_k] with m = ⌊√N⌋.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoxSpec {
    block_len: usize,
    m: i32,
}

impl BoxSpec {
    pub fn new(block_len: usize) -> Result<Self> {
        if block_len < 1 {
            return Err(Error::precondition("block length N must be at least 1"));
        }
        let mut m = (block_len as f64).sqrt().floor() as i64;
        while m * m > block_len as i64 {
            m -= 1;
        }
        while (m + 1) * (m + 1) <= block_len as i64 {
            m += 1;
        }
        Ok(BoxSpec {
            block_len,
            m: m as i32,
        })
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    /// m = ⌊√N⌋.
    pub fn half_width(&self) -> i32 {
        self.m
    }

    /// Index z of the box containing x.
    pub fn box_of(&self, x: &LatticePoint) -> LatticePoint {
        let w = 2 * self.m + 1;
        let mut c = *x.raw();
        for v in c.iter_mut().take(x.dim()) {
            *v = (*v + self.m).div_euclid(w);
        }
        LatticePoint::from_raw(c, x.dim())
    }

    pub fn box_range(&self, z: &LatticePoint) -> SiteBox {
        let w = 2 * self.m + 1;
        let mut lo = *z.raw();
        let mut hi = *z.raw();
        for k in 0..z.dim() {
            lo[k] = z.raw()[k] * w - self.m;
            hi[k] = z.raw()[k] * w + self.m;
        }
        SiteBox::new(
            LatticePoint::from_raw(lo, z.dim()),
            LatticePoint::from_raw(hi, z.dim()),
        )
    }

    /// Whether some site of box `b` is within l¹ distance N of box `a`.
    pub fn boxes_within_reach(&self, a: &LatticePoint, b: &LatticePoint) -> bool {
        box_gap(&self.box_range(a), &self.box_range(b)) <= self.block_len as i64
    }
}

pub fn box_of(spec: &BoxSpec, x: &LatticePoint) -> LatticePoint {
    spec.box_of(x)
}

pub fn box_range(spec: &BoxSpec, z: &LatticePoint) -> SiteBox {
    spec.box_range(z)
}

fn box_gap(a: &SiteBox, b: &SiteBox) -> i64 {
    (0..a.dim())
        .map(|k| {
            let gap = (b.lo.coords()[k] - a.hi.coords()[k]).max(a.lo.coords()[k] - b.hi.coords()[k]);
            i64::from(gap.max(0))
        })
        .sum()
}

/// A sequence of block indices Z = (z_1, …, z_n).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockPath {
    blocks: Vec<LatticePoint>,
}

impl BlockPath {
    /// Checked constructor: the first box must be within N steps of `start`
    /// and consecutive boxes within N steps of each other.
    pub fn new(blocks: Vec<LatticePoint>, spec: &BoxSpec, start: &LatticePoint) -> Result<Self> {
        let p = BlockPath { blocks };
        if !p.is_feasible(spec, start) {
            let radius = p.blocks.iter().map(|z| z.l1()).max().unwrap_or(0);
            return Err(Error::InfeasibleBlocks {
                radius,
                block_len: spec.block_len(),
            });
        }
        Ok(p)
    }

    /// No reachability check; coarse_partition reports such paths as −∞.
    pub fn unchecked(blocks: Vec<LatticePoint>) -> Self {
        BlockPath { blocks }
    }

    pub fn blocks(&self) -> &[LatticePoint] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Necessary condition for Ŵ_Z > 0 (box-to-box l¹ reach); parity can
    /// still make a feasible-looking path empty.
    pub fn is_feasible(&self, spec: &BoxSpec, start: &LatticePoint) -> bool {
        let n = spec.block_len() as i64;
        let mut prev = SiteBox::new(*start, *start);
        for z in &self.blocks {
            if z.dim() != start.dim() {
                return false;
            }
            let b = spec.box_range(z);
            if box_gap(&prev, &b) > n {
                return false;
            }
            prev = b;
        }
        true
    }
}

/// H_n(S) = Σ_{i=1}^n η(i, S_i).
pub fn hamiltonian<E: Environment>(env: &E, path: &WalkPath) -> Result<f64> {
    let mut h = 0.0;
    for (i, p) in path.positions().iter().enumerate().skip(1) {
        h += env.eta_at(i as u32, p)?;
    }
    Ok(h)
}

/// log W_{n,y} on the box [start − n, start + n]^d; unreachable sites hold −∞.
#[derive(Clone, Debug, PartialEq)]
pub struct LogWeightField {
    time: usize,
    start: LatticePoint,
    sites: SiteBox,
    values: Vec<f64>,
}

impl LogWeightField {
    pub fn time(&self) -> usize {
        self.time
    }

    pub fn start(&self) -> LatticePoint {
        self.start
    }

    pub fn sites(&self) -> &SiteBox {
        &self.sites
    }

    /// Values in `sites.points()` order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, y: &LatticePoint) -> f64 {
        if !self.sites.contains(y) {
            return f64::NEG_INFINITY;
        }
        let mut idx = 0usize;
        for k in 0..y.dim() {
            let side = (self.sites.hi.coords()[k] - self.sites.lo.coords()[k] + 1) as usize;
            idx = idx * side + (y.coords()[k] - self.sites.lo.coords()[k]) as usize;
        }
        self.values[idx]
    }

    /// log W_n = log Σ_y W_{n,y}.
    pub fn log_total(&self) -> f64 {
        crate::env::log_sum_exp(&self.values)
    }

    /// (site, log W_{n,y}) for every finite entry.
    pub fn finite_entries(&self) -> Vec<(LatticePoint, f64)> {
        self.sites
            .points()
            .into_iter()
            .zip(&self.values)
            .filter(|(_, v)| v.is_finite())
            .map(|(p, v)| (p, *v))
            .collect()
    }

    /// Debug dump: header (magic, version, d, n, box corners) then the values
    /// as little-endian doubles.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(WEIGHT_DUMP_MAGIC)?;
        w.write_all(&WEIGHT_DUMP_VERSION.to_le_bytes())?;
        w.write_all(&(self.start.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.time as u64).to_le_bytes())?;
        for p in [&self.start, &self.sites.lo, &self.sites.hi] {
            for c in p.raw() {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != WEIGHT_DUMP_MAGIC {
            return Err(Error::Format("not a weight-field dump".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != WEIGHT_DUMP_VERSION {
            return Err(Error::Format("weight-field dump version mismatch".into()));
        }
        r.read_exact(&mut b4)?;
        let d = u32::from_le_bytes(b4) as usize;
        if !(1..=3).contains(&d) {
            return Err(Error::Format(format!("bad dimension {d}")));
        }
        r.read_exact(&mut b8)?;
        let time = u64::from_le_bytes(b8) as usize;
        let mut pts = [LatticePoint::origin(d); 3];
        for p in pts.iter_mut() {
            let mut c = [0i32; 3];
            for v in c.iter_mut() {
                r.read_exact(&mut b4)?;
                *v = i32::from_le_bytes(b4);
            }
            *p = LatticePoint::from_raw(c, d);
        }
        let sites = SiteBox::new(pts[1], pts[2]);
        let mut values = Vec::with_capacity(sites.volume() as usize);
        for _ in 0..sites.volume() {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        Ok(LogWeightField {
            time,
            start: pts[0],
            sites,
            values,
        })
    }
}

/// The forward recursion W_{t,y} = (1/2d) Σ_{|x−y|=1} W_{t−1,x} · e^{βη(t0+t, y) − λ(β)}.
pub struct Transfer<'a, E: Environment> {
    env: &'a E,
    beta: f64,
    lambda: f64,
    t0: u32,
    start: LatticePoint,
    horizon: usize,
    grid: Grid,
    buf: Vec<f64>,
    time: usize,
    log_scale: f64,
    max: f64,
    sum: f64,
}

impl<E: Environment> Clone for Transfer<'_, E> {
    fn clone(&self) -> Self {
        Transfer {
            env: self.env,
            beta: self.beta,
            lambda: self.lambda,
            t0: self.t0,
            start: self.start,
            horizon: self.horizon,
            grid: self.grid.clone(),
            buf: self.buf.clone(),
            time: self.time,
            log_scale: self.log_scale,
            max: self.max,
            sum: self.sum,
        }
    }
}

impl<'a, E: Environment> Transfer<'a, E> {
    /// Walk started at `start` at time `t0`, able to run `horizon` steps.
    pub fn new(
        env: &'a E,
        model: &EnvironmentModel,
        beta: f64,
        t0: u32,
        start: LatticePoint,
        horizon: usize,
    ) -> Result<Self> {
        Self::with_cap(env, model, beta, t0, start, horizon, DEFAULT_GRID_CAP)
    }

    pub fn with_cap(
        env: &'a E,
        model: &EnvironmentModel,
        beta: f64,
        t0: u32,
        start: LatticePoint,
        horizon: usize,
        cap_sites: u64,
    ) -> Result<Self> {
        if start.dim() != env.dim() {
            return Err(Error::precondition("start point dimension differs from field"));
        }
        if !beta.is_finite() {
            return Err(Error::precondition("β must be finite"));
        }
        let reach = SiteBox::around(start, horizon as i32);
        let padded = (2 * horizon as u64 + 3).pow(start.dim() as u32);
        if padded > cap_sites {
            return Err(Error::resource("transfer buffer sites", padded, cap_sites));
        }
        if horizon > 0 {
            env.window()
                .require(t0 + 1, t0 + horizon as u32, &reach)?;
        }
        let grid = Grid::covering(&reach);
        let mut buf = vec![0.0; grid.len];
        buf[grid.idx(start.raw())] = 1.0;
        Ok(Transfer {
            env,
            beta,
            lambda: cumulant(model, beta),
            t0,
            start,
            horizon,
            grid,
            buf,
            time: 0,
            log_scale: 0.0,
            max: 1.0,
            sum: 1.0,
        })
    }

    pub fn time(&self) -> usize {
        self.time
    }

    /// Advances one time step.
    pub fn step(&mut self) {
        assert!(self.time < self.horizon, "transfer horizon exhausted");
        let t = self.time + 1;
        let slice = self.env.slice(self.t0 + t as u32);
        let d = self.grid.dim;
        let inv = 1.0 / self.max;
        let w = inv / (2 * d) as f64;
        let (beta, lambda) = (self.beta, self.lambda);
        let zero_beta = beta == 0.0;
        let s0 = self.grid.stride[0];
        let s1 = self.grid.stride[1];
        let s2 = self.grid.stride[2];
        let mut max = 0.0f64;
        let mut sum = 0.0f64;
        let buf = &mut self.buf;
        for row in self.grid.diamond_rows(&self.start, t as i32) {
            let [a0, a1, _] = row.start;
            let mut last = row.start[d - 1];
            let mut idx = row.base;
            for _ in 0..row.len {
                let g = match d {
                    1 => buf[idx - 1] + buf[idx + 1],
                    2 => buf[idx - 1] + buf[idx + 1] + buf[idx - s0] + buf[idx + s0],
                    _ => {
                        buf[idx - s2]
                            + buf[idx + s2]
                            + buf[idx - s1]
                            + buf[idx + s1]
                            + buf[idx - s0]
                            + buf[idx + s0]
                    }
                };
                let e = if zero_beta {
                    w
                } else {
                    let c = match d {
                        1 => [last, 0, 0],
                        2 => [a0, last, 0],
                        _ => [a0, a1, last],
                    };
                    w * (beta * slice.eta(&c) - lambda).exp()
                };
                let v = g * e;
                buf[idx] = v;
                max = max.max(v);
                sum += v;
                idx += 2;
                last += 2;
            }
        }
        self.log_scale += self.max.ln();
        self.max = max;
        self.sum = sum;
        self.time = t;
    }

    pub fn run_to(&mut self, t: usize) {
        while self.time < t {
            self.step();
        }
    }

    /// log W_t for the current time (−∞ once every path is excluded).
    pub fn log_total(&self) -> f64 {
        if self.sum > 0.0 {
            self.sum.ln() + self.log_scale
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Visits every current-parity site of the reachable diamond.
    fn for_each_site(&self, mut f: impl FnMut(&[i32; 3], usize)) {
        let d = self.grid.dim;
        for row in self.grid.diamond_rows(&self.start, self.time as i32) {
            let mut c = row.start;
            let mut idx = row.base;
            for _ in 0..row.len {
                f(&c, idx);
                idx += 2;
                c[d - 1] += 2;
            }
        }
    }

    /// Discards all paths whose current position is outside `b`.
    /// Returns false if nothing survives.
    pub fn restrict(&mut self, b: &SiteBox) -> bool {
        let d = self.grid.dim;
        let mut kill = Vec::new();
        self.for_each_site(|c, idx| {
            if !b.contains(&LatticePoint::from_raw(*c, d)) {
                kill.push(idx);
            }
        });
        for i in kill {
            self.buf[i] = 0.0;
        }
        let (mut max, mut sum) = (0.0f64, 0.0f64);
        self.for_each_site(|_, idx| {
            max = max.max(self.buf[idx]);
            sum += self.buf[idx];
        });
        self.sum = sum;
        if max > 0.0 {
            self.max = max;
            true
        } else {
            false
        }
    }

    /// log W_{t,y} at the current time.
    pub fn log_weight(&self, y: &LatticePoint) -> f64 {
        let dist = y.l1_dist(&self.start);
        if y.dim() != self.start.dim()
            || dist > self.time as i64
            || (dist - self.time as i64) % 2 != 0
        {
            return f64::NEG_INFINITY;
        }
        let v = self.buf[self.grid.idx(y.raw())];
        if v > 0.0 {
            v.ln() + self.log_scale
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn weight_field(&self) -> LogWeightField {
        let sites = SiteBox::around(self.start, self.time as i32);
        let values = sites.points().iter().map(|y| self.log_weight(y)).collect();
        LogWeightField {
            time: self.time,
            start: self.start,
            sites,
            values,
        }
    }
}

/// log W_n and the point-to-site weights log W_{n,y} for the walk started at
/// `start`.
pub fn log_partition<E: Environment>(
    env: &E,
    model: &EnvironmentModel,
    beta: f64,
    n: usize,
    start: &LatticePoint,
) -> Result<(f64, LogWeightField)> {
    if n < 1 {
        return Err(Error::precondition("n must be at least 1"));
    }
    let mut tr = Transfer::new(env, model, beta, 0, *start, n)?;
    tr.run_to(n);
    let field = tr.weight_field();
    Ok((tr.log_total(), field))
}

/// log W_n only, skipping the weight field.
pub fn log_partition_value<E: Environment>(
    env: &E,
    model: &EnvironmentModel,
    beta: f64,
    n: usize,
    start: &LatticePoint,
) -> Result<f64> {
    let mut tr = Transfer::new(env, model, beta, 0, *start, n)?;
    tr.run_to(n);
    Ok(tr.log_total())
}

/// log W_n for every n in an increasing schedule, from one transfer run.
pub fn log_partition_profile<E: Environment>(
    env: &E,
    model: &EnvironmentModel,
    beta: f64,
    schedule: &[usize],
    start: &LatticePoint,
) -> Result<Vec<f64>> {
    if schedule.windows(2).any(|w| w[0] >= w[1]) || schedule.first() == Some(&0) {
        return Err(Error::precondition("horizon schedule must be positive and increasing"));
    }
    let horizon = schedule.last().copied().unwrap_or(0);
    let mut tr = Transfer::new(env, model, beta, 0, *start, horizon)?;
    let mut out = Vec::with_capacity(schedule.len());
    for &n in schedule {
        tr.run_to(n);
        out.push(tr.log_total());
    }
    Ok(out)
}

/// μ_n(y) = W_{n,y} / W_n over the finite entries.
pub fn gibbs_measure(weights: &LogWeightField) -> Result<Vec<(LatticePoint, f64)>> {
    let entries = weights.finite_entries();
    if entries.is_empty() {
        return Err(Error::Degenerate("weight field has no finite entry".into()));
    }
    let logs: Vec<f64> = entries.iter().map(|(_, v)| *v).collect();
    let total = crate::env::log_sum_exp(&logs);
    Ok(entries
        .into_iter()
        .map(|(p, v)| (p, (v - total).exp()))
        .collect())
}

/// Result of a box-constrained transfer run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoarseWeight {
    pub log_weight: f64,
    pub feasible: bool,
}

/// log Ŵ_Z: the partition function over paths with S_{jN} ∈ B_{z_j} for
/// j = 1..n, walk started at `start`. Empty path sets give −∞ and
/// `feasible = false`.
pub fn coarse_partition<E: Environment>(
    env: &E,
    model: &EnvironmentModel,
    beta: f64,
    block_len: usize,
    blocks: &BlockPath,
    start: &LatticePoint,
) -> Result<CoarseWeight> {
    let spec = BoxSpec::new(block_len)?;
    let n = blocks.len();
    if n == 0 {
        return Err(Error::precondition("a block path needs at least one block"));
    }
    if !blocks.is_feasible(&spec, start) {
        return Ok(CoarseWeight {
            log_weight: f64::NEG_INFINITY,
            feasible: false,
        });
    }
    let mut tr = Transfer::new(env, model, beta, 0, *start, n * block_len)?;
    for (j, z) in blocks.blocks().iter().enumerate() {
        tr.run_to((j + 1) * block_len);
        if !tr.restrict(&spec.box_range(z)) {
            return Ok(CoarseWeight {
                log_weight: f64::NEG_INFINITY,
                feasible: false,
            });
        }
    }
    Ok(CoarseWeight {
        log_weight: tr.log_total(),
        feasible: true,
    })
}

/// Boxes that can hold S_N for some walk started in box `from` (or at the
/// single site `from` when it is a point box).
fn candidate_blocks(spec: &BoxSpec, from: &SiteBox) -> Vec<LatticePoint> {
    let reach = from.expand(spec.block_len() as i32);
    let lo = spec.box_of(&reach.lo);
    let hi = spec.box_of(&reach.hi);
    SiteBox::new(lo, hi)
        .points()
        .into_iter()
        .filter(|z| box_gap(from, &spec.box_range(z)) <= spec.block_len() as i64)
        .collect()
}

/// Every feasible Z of length `n_blocks` with its log Ŵ_Z, found by a
/// depth-first enumeration that shares transfer prefixes. Σ_Z Ŵ_Z = W_{nN}.
pub fn coarse_decomposition<E: Environment>(
    env: &E,
    model: &EnvironmentModel,
    beta: f64,
    n_blocks: usize,
    block_len: usize,
    start: &LatticePoint,
) -> Result<Vec<(BlockPath, f64)>> {
    let spec = BoxSpec::new(block_len)?;
    if n_blocks == 0 {
        return Err(Error::precondition("need at least one block"));
    }
    let root = Transfer::new(env, model, beta, 0, *start, n_blocks * block_len)?;
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(n_blocks);
    descend(
        &spec,
        root,
        SiteBox::new(*start, *start),
        n_blocks,
        &mut prefix,
        &mut out,
    );
    Ok(out)
}

fn descend<E: Environment>(
    spec: &BoxSpec,
    mut state: Transfer<'_, E>,
    from: SiteBox,
    remaining: usize,
    prefix: &mut Vec<LatticePoint>,
    out: &mut Vec<(BlockPath, f64)>,
) {
    state.run_to(state.time() + spec.block_len());
    for z in candidate_blocks(spec, &from) {
        let b = spec.box_range(&z);
        let mut child = state.clone();
        if !child.restrict(&b) {
            continue;
        }
        prefix.push(z);
        if remaining == 1 {
            out.push((BlockPath::unchecked(prefix.clone()), child.log_total()));
        } else {
            descend(spec, child, b, remaining - 1, prefix, out);
        }
        prefix.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{e_weight, EnvironmentField, TableField, Window};
    use crate::walk::sample_path;

    fn o2() -> LatticePoint {
        LatticePoint::origin(2)
    }

    fn field(seed: u64, d: usize, t: u32, r: i32) -> EnvironmentField {
        EnvironmentField::centered(EnvironmentModel::GaussianUnit, seed, d, t, r).unwrap()
    }

    /// log W_n by summing over every path.
    fn brute_log_w<E: Environment>(env: &E, model: &EnvironmentModel, beta: f64, n: usize, d: usize) -> f64 {
        let lam = cumulant(model, beta);
        let mut paths = vec![vec![LatticePoint::origin(d)]];
        for _ in 0..n {
            let mut next = Vec::new();
            for p in &paths {
                for nb in p.last().unwrap().neighbours() {
                    let mut q = p.clone();
                    q.push(nb);
                    next.push(q);
                }
            }
            paths = next;
        }
        let total: f64 = paths
            .iter()
            .map(|p| {
                let h = hamiltonian(env, &WalkPath::new(p.clone()).unwrap()).unwrap();
                (beta * h - n as f64 * lam).exp()
            })
            .sum();
        (total / paths.len() as f64).ln()
    }

    #[test]
    fn box_geometry_examples() {
        let s = BoxSpec::new(4).unwrap();
        assert_eq!(s.half_width(), 2);
        assert_eq!(s.box_of(&LatticePoint::new(&[5, 0])), LatticePoint::new(&[1, 0]));
        let r0 = s.box_range(&o2());
        let r1 = s.box_range(&LatticePoint::new(&[1, 0]));
        assert_eq!((r0.lo.coords()[0], r0.hi.coords()[0]), (-2, 2));
        assert_eq!((r1.lo.coords()[0], r1.hi.coords()[0]), (3, 7));
        for n in [1, 4, 9, 16] {
            let s = BoxSpec::new(n).unwrap();
            for z in SiteBox::around(o2(), 3).points() {
                let b = s.box_range(&z);
                assert_eq!(s.box_of(&b.lo), z);
                assert_eq!(s.box_of(&b.hi), z);
            }
        }
        for n in [2, 3, 8, 15, 17] {
            let m = BoxSpec::new(n).unwrap().half_width() as usize;
            assert!(m * m <= n && (m + 1) * (m + 1) > n);
        }
    }

    #[test]
    fn hamiltonian_examples() {
        let w = Window {
            t_max: 4,
            sites: SiteBox::around(o2(), 4),
        };
        let zero = TableField::constant(w, 0.0);
        let p = sample_path(2, 4, 1);
        assert_eq!(hamiltonian(&zero, &p).unwrap(), 0.0);
        let f = field(3, 2, 4, 4);
        let one = WalkPath::new(vec![o2(), LatticePoint::new(&[1, 0])]).unwrap();
        assert_eq!(
            hamiltonian(&f, &one).unwrap(),
            f.eta_at(1, &LatticePoint::new(&[1, 0])).unwrap()
        );
        let t = TableField::materialize(&f);
        let h = hamiltonian(&t, &p).unwrap();
        assert!((hamiltonian(&t.scaled(2.0), &p).unwrap() - 2.0 * h).abs() < 1e-12);
        let long = sample_path(2, 5, 1);
        assert!(matches!(hamiltonian(&f, &long), Err(Error::WindowViolation { .. })));
    }

    #[test]
    fn zero_beta_gives_unit_partition() {
        let f = field(1, 2, 20, 20);
        let m = EnvironmentModel::GaussianUnit;
        let (lw, wf) = log_partition(&f, &m, 0.0, 20, &o2()).unwrap();
        assert!(lw.abs() < 1e-13);
        assert!((wf.log_total() - lw).abs() < 1e-12);
    }

    #[test]
    fn one_step_closed_form() {
        let f = field(9, 2, 1, 1);
        let m = EnvironmentModel::GaussianUnit;
        let beta = 0.9;
        let (lw, _) = log_partition(&f, &m, beta, 1, &o2()).unwrap();
        let direct: f64 = o2()
            .neighbours()
            .map(|y| e_weight(&m, beta, f.eta_at(1, &y).unwrap()))
            .sum::<f64>()
            / 4.0;
        assert!((lw.exp() - direct).abs() < 1e-14);
    }

    #[test]
    fn transfer_matches_path_enumeration() {
        for d in 1..=3 {
            let n = if d == 3 { 4 } else { 6 };
            let f = field(17 + d as u64, d, n as u32, n as i32);
            for model in [EnvironmentModel::GaussianUnit, EnvironmentModel::Rademacher] {
                for beta in [0.4, 1.7] {
                    let (lw, wf) = log_partition(&f, &model, beta, n, &LatticePoint::origin(d)).unwrap();
                    let b = brute_log_w(&f, &model, beta, n, d);
                    assert!((lw - b).abs() < 1e-12, "d={d} β={beta}: {lw} vs {b}");
                    assert!((wf.log_total() - lw).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn weights_live_on_the_parity_diamond() {
        let f = field(4, 2, 9, 9);
        let (_, wf) = log_partition(&f, &EnvironmentModel::GaussianUnit, 1.0, 9, &o2()).unwrap();
        for (y, v) in wf.sites().points().iter().zip(wf.values()) {
            let reachable = y.l1() <= 9 && (y.l1() - 9) % 2 == 0;
            assert_eq!(v.is_finite(), reachable, "{y}");
        }
    }

    #[test]
    fn shifted_start_and_profile() {
        let f = EnvironmentField::new(
            EnvironmentModel::GaussianUnit,
            5,
            30,
            SiteBox::around(LatticePoint::new(&[3, -2]), 30),
        )
        .unwrap();
        let s = LatticePoint::new(&[3, -2]);
        let prof = log_partition_profile(&f, &EnvironmentModel::GaussianUnit, 0.8, &[5, 10, 30], &s).unwrap();
        for (i, n) in [5usize, 10, 30].iter().enumerate() {
            let v = log_partition_value(&f, &EnvironmentModel::GaussianUnit, 0.8, *n, &s).unwrap();
            assert_eq!(prof[i], v);
        }
        assert!(log_partition_profile(&f, &EnvironmentModel::GaussianUnit, 0.8, &[5, 5], &s).is_err());
    }

    #[test]
    fn large_beta_stays_finite() {
        let f = field(8, 2, 256, 256);
        let lw = log_partition_value(&f, &EnvironmentModel::GaussianUnit, 2.0, 256, &o2()).unwrap();
        assert!(lw.is_finite() && lw < 0.0);
    }

    #[test]
    fn window_and_resource_errors() {
        let f = field(1, 2, 10, 10);
        let m = EnvironmentModel::GaussianUnit;
        assert!(matches!(
            log_partition(&f, &m, 1.0, 11, &o2()),
            Err(Error::WindowViolation { .. })
        ));
        assert!(matches!(
            Transfer::with_cap(&f, &m, 1.0, 0, o2(), 10, 100),
            Err(Error::Resource { .. })
        ));
    }

    #[test]
    fn gibbs_examples() {
        let f = field(2, 2, 1, 1);
        let (_, wf) = log_partition(&f, &EnvironmentModel::GaussianUnit, 0.0, 1, &o2()).unwrap();
        let mu = gibbs_measure(&wf).unwrap();
        assert_eq!(mu.len(), 4);
        for (y, p) in &mu {
            assert_eq!(y.l1(), 1);
            assert!((p - 0.25).abs() < 1e-15);
        }
        let g = field(6, 2, 7, 7);
        let (_, wf) = log_partition(&g, &EnvironmentModel::GaussianUnit, 1.3, 7, &o2()).unwrap();
        let total: f64 = gibbs_measure(&wf).unwrap().iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);

        let w = Window {
            t_max: 2,
            sites: SiteBox::around(o2(), 2),
        };
        let mut t = TableField::constant(w, 0.0);
        let peak = LatticePoint::new(&[1, 1]);
        t.set(2, &peak, 10.0).unwrap();
        let (_, wf) = log_partition(&t, &EnvironmentModel::GaussianUnit, 5.0, 2, &o2()).unwrap();
        let mu = gibbs_measure(&wf).unwrap();
        let at_peak = mu.iter().find(|(y, _)| *y == peak).unwrap().1;
        assert!(at_peak >= 0.99);

        let empty = LogWeightField {
            time: 1,
            start: o2(),
            sites: SiteBox::around(o2(), 1),
            values: vec![f64::NEG_INFINITY; 9],
        };
        assert!(matches!(gibbs_measure(&empty), Err(Error::Degenerate(_))));
    }

    #[test]
    fn weight_dump_roundtrip() {
        let f = field(2, 2, 5, 5);
        let (_, wf) = log_partition(&f, &EnvironmentModel::GaussianUnit, 1.0, 5, &o2()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        wf.dump(&p).unwrap();
        assert_eq!(LogWeightField::load(&p).unwrap(), wf);
    }

    #[test]
    fn coarse_single_block_is_full_partition() {
        let f = field(3, 2, 1, 1);
        let m = EnvironmentModel::GaussianUnit;
        let z = BlockPath::new(vec![o2()], &BoxSpec::new(1).unwrap(), &o2()).unwrap();
        let c = coarse_partition(&f, &m, 1.1, 1, &z, &o2()).unwrap();
        let (lw, _) = log_partition(&f, &m, 1.1, 1, &o2()).unwrap();
        assert!(c.feasible);
        assert!((c.log_weight - lw).abs() < 1e-14);
    }

    #[test]
    fn coarse_decomposition_sums_to_full_partition() {
        let m = EnvironmentModel::GaussianUnit;
        for seed in 0..2 {
            let f = field(seed, 2, 32, 32);
            let parts = coarse_decomposition(&f, &m, 1.0, 2, 16, &o2()).unwrap();
            let logs: Vec<f64> = parts.iter().map(|(_, v)| *v).collect();
            let total = crate::env::log_sum_exp(&logs);
            let (lw, _) = log_partition(&f, &m, 1.0, 32, &o2()).unwrap();
            assert!(((total - lw) / lw.abs().max(1.0)).abs() <= 1e-9);
            for (z, v) in parts.iter().take(5) {
                let c = coarse_partition(&f, &m, 1.0, 16, z, &o2()).unwrap();
                assert!((c.log_weight - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn infeasible_block_paths() {
        let f = field(3, 2, 32, 32);
        let m = EnvironmentModel::GaussianUnit;
        let spec = BoxSpec::new(16).unwrap();
        let far = vec![LatticePoint::new(&[5, 0]), o2()];
        assert!(BlockPath::new(far.clone(), &spec, &o2()).is_err());
        let c = coarse_partition(&f, &m, 1.0, 16, &BlockPath::unchecked(far), &o2()).unwrap();
        assert!(!c.feasible);
        assert_eq!(c.log_weight, f64::NEG_INFINITY);
    }

    #[test]
    fn fractional_power_is_subadditive_over_blocks() {
        let f = field(11, 2, 32, 32);
        let parts = coarse_decomposition(&f, &EnvironmentModel::GaussianUnit, 1.2, 2, 16, &o2()).unwrap();
        let logs: Vec<f64> = parts.iter().map(|(_, v)| *v).collect();
        let total = crate::env::log_sum_exp(&logs);
        for theta in [0.25, 0.5, 0.75] {
            let lhs = theta * total;
            let scaled: Vec<f64> = logs.iter().map(|v| theta * v).collect();
            assert!(lhs <= crate::env::log_sum_exp(&scaled) + 1e-12);
        }
    }
}
