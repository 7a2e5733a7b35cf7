//! Lattice points and dense padded grids shared by the transfer-matrix
//! kernels.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of Z^d, d ∈ {1, 2, 3}. Unused coordinates are kept at zero.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(try_from = "Vec<i32>", into = "Vec<i32>")]
pub struct LatticePoint {
    coords: [i32; 3],
    dim: u8,
}

impl LatticePoint {
    pub fn try_new(coords: &[i32]) -> Result<Self> {
        if coords.is_empty() || coords.len() > 3 {
            return Err(Error::precondition(format!(
                "lattice dimension must be 1, 2 or 3 (got {})",
                coords.len()
            )));
        }
        let mut c = [0; 3];
        c[..coords.len()].copy_from_slice(coords);
        Ok(LatticePoint {
            coords: c,
            dim: coords.len() as u8,
        })
    }

    /// Panics on a dimension outside 1..=3.
    pub fn new(coords: &[i32]) -> Self {
        Self::try_new(coords).expect("lattice point dimension")
    }

    pub fn origin(dim: usize) -> Self {
        assert!((1..=3).contains(&dim), "lattice dimension must be 1, 2 or 3");
        LatticePoint {
            coords: [0; 3],
            dim: dim as u8,
        }
    }

    pub(crate) fn from_raw(coords: [i32; 3], dim: usize) -> Self {
        LatticePoint {
            coords,
            dim: dim as u8,
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[i32] {
        &self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn raw(&self) -> &[i32; 3] {
        &self.coords
    }

    /// l¹ norm.
    pub fn l1(&self) -> i64 {
        self.coords().iter().map(|&c| i64::from(c).abs()).sum()
    }

    pub fn l1_dist(&self, other: &LatticePoint) -> i64 {
        (*self - *other).l1()
    }

    /// Moves one unit along axis `axis` in direction `sign`.
    pub fn step(&self, axis: usize, sign: i32) -> Self {
        let mut p = *self;
        p.coords[axis] += sign;
        p
    }

    /// The 2d nearest neighbours, in a fixed order.
    pub fn neighbours(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        (0..self.dim()).flat_map(move |a| [self.step(a, 1), self.step(a, -1)])
    }
}

impl std::ops::Sub for LatticePoint {
    type Output = LatticePoint;
    fn sub(self, rhs: Self) -> Self {
        debug_assert_eq!(self.dim, rhs.dim);
        let mut c = self.coords;
        for (a, b) in c.iter_mut().zip(rhs.coords) {
            *a -= b;
        }
        LatticePoint::from_raw(c, self.dim())
    }
}

impl std::ops::Add for LatticePoint {
    type Output = LatticePoint;
    fn add(self, rhs: Self) -> Self {
        debug_assert_eq!(self.dim, rhs.dim);
        let mut c = self.coords;
        for (a, b) in c.iter_mut().zip(rhs.coords) {
            *a += b;
        }
        LatticePoint::from_raw(c, self.dim())
    }
}

impl TryFrom<Vec<i32>> for LatticePoint {
    type Error = Error;
    fn try_from(v: Vec<i32>) -> Result<Self> {
        LatticePoint::try_new(&v)
    }
}

impl From<LatticePoint> for Vec<i32> {
    fn from(p: LatticePoint) -> Vec<i32> {
        p.coords().to_vec()
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, c) in self.coords().iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Axis-aligned integer box `lo..=hi` (per coordinate).
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct SiteBox {
    pub lo: LatticePoint,
    pub hi: LatticePoint,
}

impl SiteBox {
    pub fn new(lo: LatticePoint, hi: LatticePoint) -> Self {
        debug_assert_eq!(lo.dim(), hi.dim());
        SiteBox { lo, hi }
    }

    /// The box `center ± radius` in every coordinate.
    pub fn around(center: LatticePoint, radius: i32) -> Self {
        let mut lo = center;
        let mut hi = center;
        for k in 0..center.dim() {
            lo.coords[k] -= radius;
            hi.coords[k] += radius;
        }
        SiteBox { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    pub fn contains(&self, x: &LatticePoint) -> bool {
        (0..self.dim()).all(|k| self.lo.coords[k] <= x.coords[k] && x.coords[k] <= self.hi.coords[k])
    }

    pub fn contains_box(&self, other: &SiteBox) -> bool {
        self.contains(&other.lo) && self.contains(&other.hi)
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &SiteBox) -> SiteBox {
        let mut lo = self.lo;
        let mut hi = self.hi;
        for k in 0..self.dim() {
            lo.coords[k] = lo.coords[k].min(other.lo.coords[k]);
            hi.coords[k] = hi.coords[k].max(other.hi.coords[k]);
        }
        SiteBox { lo, hi }
    }

    pub fn expand(&self, by: i32) -> SiteBox {
        let mut lo = self.lo;
        let mut hi = self.hi;
        for k in 0..self.dim() {
            lo.coords[k] -= by;
            hi.coords[k] += by;
        }
        SiteBox { lo, hi }
    }

    pub fn volume(&self) -> u64 {
        (0..self.dim())
            .map(|k| (self.hi.coords[k] - self.lo.coords[k] + 1).max(0) as u64)
            .product()
    }

    /// l¹ distance from `x` to the box.
    pub fn l1_distance(&self, x: &LatticePoint) -> i64 {
        (0..self.dim())
            .map(|k| {
                let c = x.coords[k];
                let below = self.lo.coords[k] - c;
                let above = c - self.hi.coords[k];
                i64::from(below.max(above).max(0))
            })
            .sum()
    }

    /// All points, last coordinate fastest.
    pub fn points(&self) -> Vec<LatticePoint> {
        let d = self.dim();
        let mut out = Vec::with_capacity(self.volume() as usize);
        let mut c = self.lo.coords;
        if self.volume() == 0 {
            return out;
        }
        loop {
            out.push(LatticePoint::from_raw(c, d));
            let mut k = d;
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                if c[k] < self.hi.coords[k] {
                    c[k] += 1;
                    break;
                }
                c[k] = self.lo.coords[k];
            }
        }
    }
}

/// One run of sites along the last axis: contiguous for region rows, every
/// second site for diamond rows.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Row {
    pub start: [i32; 3],
    pub base: usize,
    pub len: usize,
}

/// Dense row-major array over a box with one layer of zero padding, so the
/// 2d-neighbour gather never needs bounds checks.
#[derive(Clone, Debug)]
pub(crate) struct Grid {
    pub dim: usize,
    pub lo: [i32; 3],
    pub stride: [usize; 3],
    pub len: usize,
}

impl Grid {
    /// Grid covering `b` plus one padding layer.
    pub fn covering(b: &SiteBox) -> Grid {
        let d = b.dim();
        let mut lo = [0i32; 3];
        let mut side = [1usize; 3];
        for k in 0..d {
            lo[k] = b.lo.coords[k] - 1;
            side[k] = (b.hi.coords[k] - b.lo.coords[k] + 3) as usize;
        }
        let mut stride = [0usize; 3];
        let mut s = 1usize;
        for k in (0..d).rev() {
            stride[k] = s;
            s *= side[k];
        }
        Grid {
            dim: d,
            lo,
            stride,
            len: s,
        }
    }

    #[inline(always)]
    pub fn idx(&self, c: &[i32; 3]) -> usize {
        let mut i = 0usize;
        for k in 0..self.dim {
            i += (c[k] - self.lo[k]) as usize * self.stride[k];
        }
        i
    }


    /// Sites `y` with `|y - center| <= r` and `|y - center| ≡ r (mod 2)`.
    pub fn diamond_rows(&self, center: &LatticePoint, r: i32) -> Vec<Row> {
        let d = self.dim;
        let c = center.raw();
        let mut rows = Vec::new();
        let mut push = |mut start: [i32; 3], rem: i32| {
            start[d - 1] = c[d - 1] - rem;
            rows.push(Row {
                start,
                base: self.idx(&start),
                len: rem as usize + 1,
            });
        };
        match d {
            1 => push([0; 3], r),
            2 => {
                for a in -r..=r {
                    push([c[0] + a, 0, 0], r - a.abs());
                }
            }
            _ => {
                for a in -r..=r {
                    let ra = r - a.abs();
                    for b in -ra..=ra {
                        push([c[0] + a, c[1] + b, 0], ra - b.abs());
                    }
                }
            }
        }
        rows
    }

    /// All sites within l¹ distance `t` of the box `b` (every parity).
    pub fn region_rows(&self, b: &SiteBox, t: i32) -> Vec<Row> {
        let d = self.dim;
        let last = d - 1;
        let outer = b.expand(t);
        let mut rows = Vec::new();
        let mut prefix = outer.lo;
        loop {
            let dp = (0..last)
                .map(|k| {
                    let x = prefix.coords[k];
                    (b.lo.coords[k] - x).max(x - b.hi.coords[k]).max(0)
                })
                .sum::<i32>();
            if dp <= t {
                let rem = t - dp;
                let mut start = prefix.coords;
                start[last] = b.lo.coords[last] - rem;
                let hi = b.hi.coords[last] + rem;
                rows.push(Row {
                    start,
                    base: self.idx(&start),
                    len: (hi - start[last] + 1) as usize,
                });
            }
            // advance the prefix odometer over axes 0..last
            let mut k = last;
            loop {
                if k == 0 {
                    return rows;
                }
                k -= 1;
                if prefix.coords[k] < outer.hi.coords[k] {
                    prefix.coords[k] += 1;
                    break;
                }
                prefix.coords[k] = outer.lo.coords[k];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diamond_rows_count_matches_parity_class() {
        for d in 1..=3 {
            let b = SiteBox::around(LatticePoint::origin(d), 6);
            let g = Grid::covering(&b);
            for r in 0..=6 {
                let n: usize = g
                    .diamond_rows(&LatticePoint::origin(d), r)
                    .iter()
                    .map(|row| row.len)
                    .sum();
                let brute = b
                    .points()
                    .iter()
                    .filter(|p| p.l1() <= r as i64 && (p.l1() - r as i64) % 2 == 0)
                    .count();
                assert_eq!(n, brute, "d={d} r={r}");
            }
        }
    }

    #[test]
    fn region_rows_cover_l1_neighbourhood_of_box() {
        let inner = SiteBox::new(LatticePoint::new(&[-1, 0]), LatticePoint::new(&[2, 1]));
        let outer = inner.expand(4);
        let g = Grid::covering(&outer);
        let n: usize = g.region_rows(&inner, 3).iter().map(|r| r.len).sum();
        let brute = outer
            .points()
            .iter()
            .filter(|p| inner.l1_distance(p) <= 3)
            .count();
        assert_eq!(n, brute);
    }

    #[test]
    fn box_points_enumerates_volume() {
        let b = SiteBox::around(LatticePoint::new(&[1, -2, 0]), 1);
        let pts = b.points();
        assert_eq!(pts.len() as u64, b.volume());
        assert_eq!(pts.len(), 27);
        assert!(pts.iter().all(|p| b.contains(p)));
    }
}
