//! Simple random walk on Z^d: exact transition kernels, return
//! probabilities, path sampling and overlap counting.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::factorial::{ln_binomial, ln_factorial};

use crate::error::{Error, Result};
pub use crate::lattice::{LatticePoint, SiteBox};
use crate::partition::BoxSpec;

/// Default cap on kernel table storage.
pub const DEFAULT_KERNEL_CAP_BYTES: u64 = 1 << 29;

const KERNEL_CACHE_MAGIC: &[u8; 8] = b"DPREKRN\0";
const KERNEL_CACHE_VERSION: u32 = 1;

/// Environment variable naming the kernel-table cache directory.
pub const KERNEL_CACHE_ENV: &str = "DPRE_KERNEL_CACHE";

/// A nearest-neighbour path S_0, …, S_n.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkPath {
    positions: Vec<LatticePoint>,
}

impl WalkPath {
    pub fn new(positions: Vec<LatticePoint>) -> Result<Self> {
        let first = positions
            .first()
            .ok_or_else(|| Error::precondition("a path needs at least its start point"))?;
        let d = first.dim();
        for (i, w) in positions.windows(2).enumerate() {
            if w[1].dim() != d || w[0].l1_dist(&w[1]) != 1 {
                return Err(Error::precondition(format!(
                    "step {i} -> {} is not a unit step: {} -> {}",
                    i + 1,
                    w[0],
                    w[1]
                )));
            }
        }
        Ok(WalkPath { positions })
    }

    pub fn dim(&self) -> usize {
        self.positions[0].dim()
    }

    /// Number of steps n.
    pub fn len(&self) -> usize {
        self.positions.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn start(&self) -> LatticePoint {
        self.positions[0]
    }

    pub fn end(&self) -> LatticePoint {
        *self.positions.last().unwrap()
    }

    /// S_i.
    pub fn at(&self, i: usize) -> LatticePoint {
        self.positions[i]
    }

    pub fn positions(&self) -> &[LatticePoint] {
        &self.positions
    }

    /// Smallest box containing the path.
    pub fn bounding_box(&self) -> SiteBox {
        let mut b = SiteBox::new(self.start(), self.start());
        for p in &self.positions {
            b = b.union(&SiteBox::new(*p, *p));
        }
        b
    }
}

/// n uniform nearest-neighbour steps from the origin.
pub fn sample_path(d: usize, n: usize, seed: u64) -> WalkPath {
    sample_path_from(LatticePoint::origin(d), n, seed)
}

pub fn sample_path_from(start: LatticePoint, n: usize, seed: u64) -> WalkPath {
    let d = start.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(n + 1);
    let mut cur = start;
    positions.push(cur);
    for _ in 0..n {
        let k = rng.random_range(0..2 * d);
        cur = cur.step(k / 2, if k % 2 == 0 { 1 } else { -1 });
        positions.push(cur);
    }
    WalkPath { positions }
}

/// ♯{1 ≤ i ≤ n : a_i = b_i}; time 0 is excluded.
pub fn overlap_count(a: &WalkPath, b: &WalkPath) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.positions[1..]
        .iter()
        .zip(&b.positions[1..])
        .filter(|(x, y)| x == y)
        .count())
}

/// Anything that can report p_j(x, y).
pub trait Kernel {
    fn dim(&self) -> usize;
    fn horizon(&self) -> usize;
    /// p_j(x, y) = P^x(S_j = y), for 0 ≤ j ≤ horizon.
    fn p(&self, j: usize, x: &LatticePoint, y: &LatticePoint) -> f64;
}

/// Dense n-step transition probabilities p_j(0, ·) on [−j, j]^d, built by the
/// exact forward recursion.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelTable {
    dim: usize,
    horizon: usize,
    slices: Vec<Vec<f64>>,
}

fn table_entries(d: usize, n: usize) -> u64 {
    (1..=n as u64).map(|j| (2 * j + 1).pow(d as u32)).sum()
}

impl KernelTable {
    pub fn build(d: usize, n: usize) -> Result<Self> {
        Self::build_with_cap(d, n, DEFAULT_KERNEL_CAP_BYTES)
    }

    pub fn build_with_cap(d: usize, n: usize, cap_bytes: u64) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::precondition(format!("dimension {d} not in 1..=3")));
        }
        if n < 1 {
            return Err(Error::precondition("kernel horizon must be at least 1"));
        }
        let bytes = table_entries(d, n).saturating_mul(8);
        if bytes > cap_bytes {
            return Err(Error::resource(
                format!("kernel table (d={d}, n={n}) bytes"),
                bytes,
                cap_bytes,
            ));
        }
        let q = 1.0 / (2 * d) as f64;
        let mut slices: Vec<Vec<f64>> = Vec::with_capacity(n);
        for j in 1..=n {
            let side = 2 * j + 1;
            let mut cur = vec![0.0; side.pow(d as u32)];
            let b = SiteBox::around(LatticePoint::origin(d), j as i32);
            for (idx, w) in b.points().into_iter().enumerate() {
                if (w.l1() + j as i64) % 2 != 0 || w.l1() > j as i64 {
                    continue;
                }
                let mut acc = 0.0;
                for nb in w.neighbours() {
                    acc += if j == 1 {
                        if nb.l1() == 0 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        Self::lookup(&slices[j - 2], d, j - 1, &nb)
                    };
                }
                cur[idx] = acc * q;
            }
            slices.push(cur);
        }
        Ok(KernelTable {
            dim: d,
            horizon: n,
            slices,
        })
    }

    fn index(d: usize, j: usize, w: &LatticePoint) -> Option<usize> {
        let r = j as i32;
        let side = 2 * j + 1;
        let mut idx = 0usize;
        for &c in w.coords() {
            if c.abs() > r {
                return None;
            }
            idx = idx * side + (c + r) as usize;
        }
        debug_assert!(w.dim() == d);
        Some(idx)
    }

    fn lookup(slice: &[f64], d: usize, j: usize, w: &LatticePoint) -> f64 {
        Self::index(d, j, w).map_or(0.0, |i| slice[i])
    }

    /// p_j(0, w); j = 0 is the point mass at the origin.
    pub fn p0(&self, j: usize, w: &LatticePoint) -> f64 {
        if j == 0 {
            return if w.l1() == 0 { 1.0 } else { 0.0 };
        }
        Self::lookup(&self.slices[j - 1], self.dim, j, w)
    }

    /// The dense slice p_j(0, ·) over [−j, j]^d, last coordinate fastest.
    pub fn slice(&self, j: usize) -> &[f64] {
        &self.slices[j - 1]
    }

    /// Loads the table from `$DPRE_KERNEL_CACHE` when present, otherwise
    /// builds it (and stores it there if the variable is set).
    pub fn cached(d: usize, n: usize) -> Result<Self> {
        let Some(dir) = std::env::var_os(KERNEL_CACHE_ENV) else {
            return Self::build(d, n);
        };
        let path = PathBuf::from(dir).join(format!("kernel-d{d}-n{n}-v{KERNEL_CACHE_VERSION}.bin"));
        if let Ok(t) = Self::load(&path) {
            if t.dim == d && t.horizon == n {
                return Ok(t);
            }
        }
        let t = Self::build(d, n)?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        t.save(&path)?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(KERNEL_CACHE_MAGIC)?;
        w.write_all(&KERNEL_CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.horizon as u64).to_le_bytes())?;
        for s in &self.slices {
            for v in s {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != KERNEL_CACHE_MAGIC {
            return Err(Error::Format("not a kernel table cache file".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != KERNEL_CACHE_VERSION {
            return Err(Error::Format("kernel cache version mismatch".into()));
        }
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let horizon = u64::from_le_bytes(b8) as usize;
        if !(1..=3).contains(&dim) {
            return Err(Error::Format(format!("bad dimension {dim}")));
        }
        let mut slices = Vec::with_capacity(horizon);
        for j in 1..=horizon {
            let len = (2 * j + 1).pow(dim as u32);
            let mut s = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut b8)?;
                s.push(f64::from_le_bytes(b8));
            }
            slices.push(s);
        }
        Ok(KernelTable {
            dim,
            horizon,
            slices,
        })
    }
}

impl Kernel for KernelTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn p(&self, j: usize, x: &LatticePoint, y: &LatticePoint) -> f64 {
        self.p0(j, &(*y - *x))
    }
}

/// Transition probabilities without a lattice sweep. In d = 1 the kernel is
/// a binomial; in d = 2 the rotated coordinates x₁ + x₂ and x₁ − x₂ perform
/// independent ±1 walks, so p_j(0, x) = b_j(x₁ + x₂)·b_j(x₁ − x₂). d = 3 falls
/// back to a dense table.
#[derive(Clone, Debug)]
pub enum TransitionKernel {
    Rotated {
        dim: usize,
        horizon: usize,
        /// binom[j][k + j] = P(±1 walk at time j is at k).
        binom: Vec<Vec<f64>>,
    },
    Table(KernelTable),
}

impl TransitionKernel {
    pub fn new(d: usize, horizon: usize) -> Result<Self> {
        match d {
            1 | 2 => {
                let mut binom: Vec<Vec<f64>> = Vec::with_capacity(horizon + 1);
                binom.push(vec![1.0]);
                for j in 1..=horizon {
                    let prev = &binom[j - 1];
                    let mut cur = vec![0.0; 2 * j + 1];
                    for (k, c) in cur.iter_mut().enumerate() {
                        // position k − j comes from k − j ± 1 at time j − 1
                        let from_left = if k >= 2 { prev.get(k - 2) } else { None };
                        let from_right = prev.get(k);
                        *c = 0.5 * (from_left.copied().unwrap_or(0.0) + from_right.copied().unwrap_or(0.0));
                    }
                    binom.push(cur);
                }
                Ok(TransitionKernel::Rotated {
                    dim: d,
                    horizon,
                    binom,
                })
            }
            3 => Ok(TransitionKernel::Table(KernelTable::build(3, horizon.max(1))?)),
            _ => Err(Error::precondition(format!("dimension {d} not in 1..=3"))),
        }
    }

    #[inline]
    fn b(binom: &[Vec<f64>], j: usize, k: i32) -> f64 {
        let idx = k + j as i32;
        if idx < 0 || idx as usize > 2 * j {
            0.0
        } else {
            binom[j][idx as usize]
        }
    }

    /// p_j(0, w).
    #[inline]
    pub fn p0(&self, j: usize, w: &LatticePoint) -> f64 {
        match self {
            TransitionKernel::Rotated { dim, binom, .. } => {
                let c = w.raw();
                if *dim == 1 {
                    Self::b(binom, j, c[0])
                } else {
                    Self::b(binom, j, c[0] + c[1]) * Self::b(binom, j, c[0] - c[1])
                }
            }
            TransitionKernel::Table(t) => t.p0(j, w),
        }
    }
}

impl Kernel for TransitionKernel {
    fn dim(&self) -> usize {
        match self {
            TransitionKernel::Rotated { dim, .. } => *dim,
            TransitionKernel::Table(t) => t.dim,
        }
    }

    fn horizon(&self) -> usize {
        match self {
            TransitionKernel::Rotated { horizon, .. } => *horizon,
            TransitionKernel::Table(t) => t.horizon,
        }
    }

    fn p(&self, j: usize, x: &LatticePoint, y: &LatticePoint) -> f64 {
        self.p0(j, &(*y - *x))
    }
}

/// P(S_{2i} = 0) for the simple random walk on Z^d, i ≥ 1.
pub fn return_probability(d: usize, i: usize) -> f64 {
    assert!((1..=3).contains(&d), "dimension {d} not in 1..=3");
    assert!(i >= 1, "return probability index must be at least 1");
    let i64_ = i as u64;
    // C(2i, i) 4^{-i}
    let ln_u = ln_binomial(2 * i64_, i64_) - (i as f64) * (4f64).ln();
    match d {
        1 => ln_u.exp(),
        2 => (2.0 * ln_u).exp(),
        _ => ln_return_3d(i).exp(),
    }
}

/// log P(S_{2n} = 0) in d = 3:
/// 6^{−2n} C(2n, n) Σ_{j+k≤n} (n! / (j! k! (n−j−k)!))².
fn ln_return_3d(n: usize) -> f64 {
    let nn = n as u64;
    let ln_n = ln_factorial(nn);
    let mut terms = Vec::with_capacity((n + 1) * (n + 2) / 2);
    for j in 0..=nn {
        for k in 0..=(nn - j) {
            let l = ln_n - ln_factorial(j) - ln_factorial(k) - ln_factorial(nn - j - k);
            terms.push(2.0 * l);
        }
    }
    ln_binomial(2 * nn, nn) - 2.0 * (n as f64) * (6f64).ln() + crate::env::log_sum_exp(&terms)
}

/// r_0 = 1 and r_i = P(S_{2i} = 0) for 1 ≤ i ≤ n.
pub fn return_probabilities(d: usize, n: usize) -> Result<Vec<f64>> {
    if !(1..=3).contains(&d) {
        return Err(Error::precondition(format!("dimension {d} not in 1..=3")));
    }
    let mut r = Vec::with_capacity(n + 1);
    r.push(1.0);
    match d {
        1 | 2 => {
            // u_i = C(2i, i) 4^{-i} = u_{i-1} (2i − 1) / (2i)
            let mut u = 1.0f64;
            for i in 1..=n {
                u *= (2 * i - 1) as f64 / (2 * i) as f64;
                r.push(if d == 1 { u } else { u * u });
            }
        }
        _ => {
            if n > 4096 {
                return Err(Error::resource("d = 3 return probabilities", n as u64, 4096));
            }
            r.extend((1..=n).map(|i| ln_return_3d(i).exp()));
        }
    }
    Ok(r)
}

/// P^x(S_N ∈ B_z^N), summed exactly from the kernel.
pub fn box_hit_prob<K: Kernel>(
    kernel: &K,
    x: &LatticePoint,
    block_len: usize,
    z: &LatticePoint,
) -> Result<f64> {
    if kernel.horizon() < block_len {
        return Err(Error::precondition(format!(
            "kernel horizon {} is shorter than block length {block_len}",
            kernel.horizon()
        )));
    }
    let spec = BoxSpec::new(block_len)?;
    let target = spec.box_range(z);
    let reach = SiteBox::around(*x, block_len as i32);
    let lo_hi = intersect(&target, &reach);
    let Some(b) = lo_hi else { return Ok(0.0) };
    Ok(b.points()
        .iter()
        .filter(|y| y.l1_dist(x) <= block_len as i64)
        .map(|y| kernel.p(block_len, x, y))
        .sum())
}

fn intersect(a: &SiteBox, b: &SiteBox) -> Option<SiteBox> {
    let d = a.dim();
    let mut lo = Vec::with_capacity(d);
    let mut hi = Vec::with_capacity(d);
    for k in 0..d {
        let l = a.lo.coords()[k].max(b.lo.coords()[k]);
        let h = a.hi.coords()[k].min(b.hi.coords()[k]);
        if l > h {
            return None;
        }
        lo.push(l);
        hi.push(h);
    }
    Some(SiteBox::new(LatticePoint::new(&lo), LatticePoint::new(&hi)))
}
