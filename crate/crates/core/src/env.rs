//! Disorder distributions, their cumulant generating functions, and
//! reproducible space-time realizations of the environment.

use std::collections::HashMap;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticePoint, SiteBox};
use crate::rng::{self, SiteRng, COORD_LIMIT};
use crate::walk::WalkPath;

const PROB_SUM_TOL: f64 = 1e-12;

/// Law of a single environment variable η(i, x).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub enum EnvironmentModel {
    GaussianUnit,
    Rademacher,
    FiniteDiscrete(DiscreteLaw),
}

/// Finitely supported law with validated masses.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteLaw {
    values: Vec<f64>,
    probabilities: Vec<f64>,
}

impl DiscreteLaw {
    pub fn new(values: Vec<f64>, probabilities: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidModel("empty support".into()));
        }
        if values.len() != probabilities.len() {
            return Err(Error::InvalidModel(format!(
                "{} values but {} probabilities",
                values.len(),
                probabilities.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite support point".into()));
        }
        if probabilities.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidModel("probabilities must be nonnegative".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidModel(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        let law = DiscreteLaw {
            values,
            probabilities,
        };
        if law.variance() <= 0.0 {
            return Err(Error::InvalidModel(
                "degenerate law: variance must be positive".into(),
            ));
        }
        Ok(law)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    fn mean(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.probabilities)
            .map(|(v, p)| v * p)
            .sum()
    }

    fn variance(&self) -> f64 {
        let m = self.mean();
        self.values
            .iter()
            .zip(&self.probabilities)
            .map(|(v, p)| p * (v - m) * (v - m))
            .sum()
    }

    /// log Σ p_k e^{β v_k}, max-shifted.
    fn log_mgf(&self, beta: f64) -> f64 {
        let terms: Vec<f64> = self
            .values
            .iter()
            .zip(&self.probabilities)
            .filter(|(_, p)| **p > 0.0)
            .map(|(v, p)| p.ln() + beta * v)
            .collect();
        log_sum_exp(&terms)
    }
}

/// JSON fragment `{family, values?, probabilities?}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
}

impl TryFrom<ModelSpec> for EnvironmentModel {
    type Error = Error;

    fn try_from(spec: ModelSpec) -> Result<Self> {
        match spec.family.as_str() {
            "gaussian-unit" | "gaussian" => Ok(EnvironmentModel::GaussianUnit),
            "rademacher" => Ok(EnvironmentModel::Rademacher),
            "finite-discrete" => {
                let values = spec
                    .values
                    .ok_or_else(|| Error::InvalidModel("finite-discrete needs `values`".into()))?;
                let probabilities = spec.probabilities.ok_or_else(|| {
                    Error::InvalidModel("finite-discrete needs `probabilities`".into())
                })?;
                Ok(EnvironmentModel::FiniteDiscrete(DiscreteLaw::new(
                    values,
                    probabilities,
                )?))
            }
            other => Err(Error::InvalidModel(format!(
                "unknown family `{other}` (only laws with closed-form cumulants are admitted)"
            ))),
        }
    }
}

impl From<EnvironmentModel> for ModelSpec {
    fn from(m: EnvironmentModel) -> ModelSpec {
        let family = m.family().to_string();
        match m {
            EnvironmentModel::FiniteDiscrete(law) => ModelSpec {
                family,
                values: Some(law.values),
                probabilities: Some(law.probabilities),
            },
            _ => ModelSpec {
                family,
                values: None,
                probabilities: None,
            },
        }
    }
}

impl EnvironmentModel {
    pub fn finite_discrete(values: Vec<f64>, probabilities: Vec<f64>) -> Result<Self> {
        Ok(EnvironmentModel::FiniteDiscrete(DiscreteLaw::new(
            values,
            probabilities,
        )?))
    }

    pub fn family(&self) -> &'static str {
        match self {
            EnvironmentModel::GaussianUnit => "gaussian-unit",
            EnvironmentModel::Rademacher => "rademacher",
            EnvironmentModel::FiniteDiscrete(_) => "finite-discrete",
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    /// λ(β) = log Q[e^{βη}].
    pub fn cumulant(&self, beta: f64) -> f64 {
        cumulant(self, beta)
    }

    /// λ''(0), the variance of η.
    pub fn lambda_pp0(&self) -> f64 {
        lambda_pp0(self)
    }
}

pub fn cumulant(model: &EnvironmentModel, beta: f64) -> f64 {
    match model {
        EnvironmentModel::GaussianUnit => 0.5 * beta * beta,
        EnvironmentModel::Rademacher => {
            // log cosh β = |β| + log(1 + e^{-2|β|}) - log 2
            let a = beta.abs();
            a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
        }
        EnvironmentModel::FiniteDiscrete(law) => {
            if beta == 0.0 {
                0.0
            } else {
                law.log_mgf(beta)
            }
        }
    }
}

pub fn lambda_pp0(model: &EnvironmentModel) -> f64 {
    match model {
        EnvironmentModel::GaussianUnit | EnvironmentModel::Rademacher => 1.0,
        EnvironmentModel::FiniteDiscrete(law) => law.variance(),
    }
}

/// e(β) = exp(βη − λ(β)); its Q-expectation is exactly one.
pub fn e_weight(model: &EnvironmentModel, beta: f64, eta: f64) -> f64 {
    log_e_weight(model, beta, eta).exp()
}

pub fn log_e_weight(model: &EnvironmentModel, beta: f64, eta: f64) -> f64 {
    beta * eta - cumulant(model, beta)
}

/// Single-site law with density e^{βη − λ(β)} against the base law.
pub fn tilted_law(model: &EnvironmentModel, beta: f64) -> SiteLaw {
    match model {
        EnvironmentModel::GaussianUnit => SiteLaw::Gaussian { mean: beta },
        EnvironmentModel::Rademacher => SiteLaw::Coin {
            // e^β / (2 cosh β)
            p_plus: 1.0 / (1.0 + (-2.0 * beta).exp()),
        },
        EnvironmentModel::FiniteDiscrete(law) => {
            let lam = cumulant(model, beta);
            let probabilities: Vec<f64> = law
                .values
                .iter()
                .zip(&law.probabilities)
                .map(|(v, p)| p * (beta * v - lam).exp())
                .collect();
            SiteLaw::discrete(law.values.clone(), probabilities)
        }
    }
}

/// A sampler for one environment site.
#[derive(Clone, Debug, PartialEq)]
pub enum SiteLaw {
    Gaussian {
        mean: f64,
    },
    /// ±1 with P(+1) = p_plus.
    Coin {
        p_plus: f64,
    },
    Discrete {
        values: Vec<f64>,
        probabilities: Vec<f64>,
        cdf: Vec<f64>,
    },
}

impl SiteLaw {
    fn discrete(values: Vec<f64>, probabilities: Vec<f64>) -> SiteLaw {
        let total: f64 = probabilities.iter().sum();
        let probabilities: Vec<f64> = probabilities.iter().map(|p| p / total).collect();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        SiteLaw::Discrete {
            values,
            probabilities,
            cdf,
        }
    }

    /// Draws one value from a hashed site key.
    #[inline(always)]
    pub fn sample_key(&self, key: u64) -> f64 {
        match self {
            SiteLaw::Gaussian { mean } => {
                let z: f64 = StandardNormal.sample(&mut SiteRng::new(key));
                mean + z
            }
            SiteLaw::Coin { p_plus } => {
                if rng::unit_f64(rng::mix64(key)) < *p_plus {
                    1.0
                } else {
                    -1.0
                }
            }
            SiteLaw::Discrete { values, cdf, .. } => {
                let u = rng::unit_f64(rng::mix64(key));
                let k = cdf.iter().position(|&c| u < c).unwrap_or(values.len() - 1);
                values[k]
            }
        }
    }

    pub fn sample<R: RngCore>(&self, rng: &mut R) -> f64 {
        self.sample_key(rng.next_u64())
    }

    pub fn mean(&self) -> f64 {
        match self {
            SiteLaw::Gaussian { mean } => *mean,
            SiteLaw::Coin { p_plus } => 2.0 * p_plus - 1.0,
            SiteLaw::Discrete {
                values,
                probabilities,
                ..
            } => values.iter().zip(probabilities).map(|(v, p)| v * p).sum(),
        }
    }

    /// Atoms and masses for the finitely supported laws.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            SiteLaw::Gaussian { .. } => None,
            SiteLaw::Coin { p_plus } => Some(vec![(1.0, *p_plus), (-1.0, 1.0 - p_plus)]),
            SiteLaw::Discrete {
                values,
                probabilities,
                ..
            } => Some(values.iter().copied().zip(probabilities.iter().copied()).collect()),
        }
    }
}

/// Times `1..=t_max` by an axis-aligned box of sites.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub t_max: u32,
    pub sites: SiteBox,
}

impl Window {
    pub fn contains(&self, time: u32, x: &LatticePoint) -> bool {
        time >= 1 && time <= self.t_max && self.sites.contains(x)
    }

    pub fn covers(&self, t_lo: u32, t_hi: u32, sites: &SiteBox) -> bool {
        t_lo >= 1 && t_hi <= self.t_max && self.sites.contains_box(sites)
    }

    pub fn require(&self, t_lo: u32, t_hi: u32, sites: &SiteBox) -> Result<()> {
        if t_lo < 1 || t_hi > self.t_max {
            return Err(Error::WindowViolation {
                time: if t_lo < 1 { t_lo } else { t_hi },
                site: format!("{}..{}", sites.lo, sites.hi),
            });
        }
        if !self.sites.contains_box(sites) {
            return Err(Error::WindowViolation {
                time: t_hi,
                site: format!("{}..{}", sites.lo, sites.hi),
            });
        }
        Ok(())
    }
}

/// Environment values of one time slice.
pub trait SliceEta {
    fn eta(&self, x: &[i32; 3]) -> f64;
}

/// Anything that can serve η(i, x) on a window.
pub trait Environment: Sync {
    type Slice<'a>: SliceEta
    where
        Self: 'a;

    fn dim(&self) -> usize;
    fn window(&self) -> &Window;
    /// Unchecked access to time slice `time`; callers validate the window.
    fn slice(&self, time: u32) -> Self::Slice<'_>;

    fn eta_at(&self, time: u32, x: &LatticePoint) -> Result<f64> {
        if x.dim() != self.dim() || !self.window().contains(time, x) {
            return Err(Error::WindowViolation {
                time,
                site: x.to_string(),
            });
        }
        Ok(self.slice(time).eta(x.raw()))
    }
}

#[derive(Clone, Debug)]
struct Tilt {
    beta: f64,
    law: SiteLaw,
    /// `path[i]` is the tilted site at time i (index 0 unused).
    path: Vec<LatticePoint>,
}

/// A seeded realization of η on a space-time window. Values are generated
/// on demand from `(seed, i, x)`; nothing is stored.
#[derive(Clone, Debug)]
pub struct EnvironmentField {
    model: EnvironmentModel,
    seed: u64,
    window: Window,
    base: SiteLaw,
    tilt: Option<Tilt>,
}

impl EnvironmentField {
    pub fn new(model: EnvironmentModel, seed: u64, t_max: u32, sites: SiteBox) -> Result<Self> {
        let lim = COORD_LIMIT - 1;
        if sites
            .lo
            .coords()
            .iter()
            .chain(sites.hi.coords())
            .any(|c| c.abs() >= lim)
        {
            return Err(Error::resource(
                "spatial window extent",
                sites.volume(),
                u64::from(lim as u32),
            ));
        }
        let base = tilted_law(&model, 0.0);
        Ok(EnvironmentField {
            model,
            seed,
            window: Window { t_max, sites },
            base,
            tilt: None,
        })
    }

    /// Window `1..=t_max` × `[-radius, radius]^d`.
    pub fn centered(
        model: EnvironmentModel,
        seed: u64,
        dim: usize,
        t_max: u32,
        radius: i32,
    ) -> Result<Self> {
        Self::new(
            model,
            seed,
            t_max,
            SiteBox::around(LatticePoint::origin(dim), radius),
        )
    }

    /// The Q_S realization: sites (i, S_i), 1 ≤ i ≤ len(S), are drawn from the
    /// β-tilted law on a separate stream; every other site is shared with the
    /// untilted field.
    pub fn with_tilt(mut self, path: &WalkPath, beta: f64) -> Result<Self> {
        if path.dim() != self.dim() {
            return Err(Error::precondition("tilt path dimension differs from field"));
        }
        if path.len() as u64 > u64::from(self.window.t_max) {
            return Err(Error::WindowViolation {
                time: path.len() as u32,
                site: "tilt path".into(),
            });
        }
        self.tilt = Some(Tilt {
            beta,
            law: tilted_law(&self.model, beta),
            path: path.positions().to_vec(),
        });
        Ok(self)
    }

    pub fn model(&self) -> &EnvironmentModel {
        &self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tilt_beta(&self) -> Option<f64> {
        self.tilt.as_ref().map(|t| t.beta)
    }
}

pub struct FieldSlice<'a> {
    base: &'a SiteLaw,
    key: u64,
    tilt: Option<(&'a SiteLaw, u64, [i32; 3])>,
}

impl SliceEta for FieldSlice<'_> {
    #[inline(always)]
    fn eta(&self, x: &[i32; 3]) -> f64 {
        if let Some((law, key, site)) = &self.tilt {
            if site == x {
                return law.sample_key(rng::site_key(*key, x));
            }
        }
        self.base.sample_key(rng::site_key(self.key, x))
    }
}

impl Environment for EnvironmentField {
    type Slice<'a> = FieldSlice<'a>;

    fn dim(&self) -> usize {
        self.window.sites.dim()
    }

    fn window(&self) -> &Window {
        &self.window
    }

    #[inline]
    fn slice(&self, time: u32) -> FieldSlice<'_> {
        let tilt = self.tilt.as_ref().and_then(|t| {
            t.path.get(time as usize).filter(|_| time >= 1).map(|p| {
                (
                    &t.law,
                    rng::time_key(self.seed, rng::TAG_TILT, time),
                    *p.raw(),
                )
            })
        });
        FieldSlice {
            base: &self.base,
            key: rng::time_key(self.seed, rng::TAG_BASE, time),
            tilt,
        }
    }
}

/// An explicit, in-memory environment: listed sites take their stored value,
/// everything else in the window takes `default`.
#[derive(Clone, Debug)]
pub struct TableField {
    window: Window,
    default: f64,
    values: HashMap<(u32, [i32; 3]), f64>,
}

impl TableField {
    pub fn constant(window: Window, default: f64) -> Self {
        TableField {
            window,
            default,
            values: HashMap::new(),
        }
    }

    pub fn set(&mut self, time: u32, x: &LatticePoint, value: f64) -> Result<()> {
        if !self.window.contains(time, x) {
            return Err(Error::WindowViolation {
                time,
                site: x.to_string(),
            });
        }
        self.values.insert((time, *x.raw()), value);
        Ok(())
    }

    /// Copies every value of `env` on its window.
    pub fn materialize<E: Environment>(env: &E) -> Self {
        let window = *env.window();
        let pts = window.sites.points();
        let mut values = HashMap::with_capacity(pts.len() * window.t_max as usize);
        for t in 1..=window.t_max {
            let s = env.slice(t);
            for p in &pts {
                values.insert((t, *p.raw()), s.eta(p.raw()));
            }
        }
        TableField {
            window,
            default: 0.0,
            values,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        TableField {
            window: self.window,
            default: self.default * k,
            values: self.values.iter().map(|(key, v)| (*key, v * k)).collect(),
        }
    }
}

pub struct TableSlice<'a> {
    table: &'a TableField,
    time: u32,
}

impl SliceEta for TableSlice<'_> {
    fn eta(&self, x: &[i32; 3]) -> f64 {
        *self
            .table
            .values
            .get(&(self.time, *x))
            .unwrap_or(&self.table.default)
    }
}

impl Environment for TableField {
    type Slice<'a> = TableSlice<'a>;

    fn dim(&self) -> usize {
        self.window.sites.dim()
    }

    fn window(&self) -> &Window {
        &self.window
    }

    fn slice(&self, time: u32) -> TableSlice<'_> {
        TableSlice { table: self, time }
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn models() -> Vec<EnvironmentModel> {
        vec![
            EnvironmentModel::GaussianUnit,
            EnvironmentModel::Rademacher,
            EnvironmentModel::finite_discrete(vec![-1.0, 0.5, 2.0], vec![0.3, 0.5, 0.2]).unwrap(),
        ]
    }

    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn cumulant_examples() {
        let g = EnvironmentModel::GaussianUnit;
        assert_eq!(cumulant(&g, 0.0), 0.0);
        assert!((cumulant(&g, 1.0) - 0.5).abs() < 1e-15);
        let r = EnvironmentModel::Rademacher;
        let want = ((1f64.exp() + (-1f64).exp()) / 2.0).ln();
        assert!((cumulant(&r, 1.0) - want).abs() < 1e-15);
        assert!((cumulant(&r, 1.0) - 0.433781).abs() < 1e-6);
        for m in models() {
            assert_eq!(cumulant(&m, 0.0), 0.0);
        }
    }

    #[test]
    fn gaussian_cumulant_matches_quadrature() {
        // ∫ e^{βx} φ(x) dx by the trapezoid rule on [-12, 12]
        let beta = 1.0f64;
        let h = 1e-3;
        let mut acc = 0.0f64;
        let mut x = -12.0f64;
        while x <= 12.0 {
            acc += (beta * x).exp() * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            x += h;
        }
        let lam = (acc * h).ln();
        assert!((lam - cumulant(&EnvironmentModel::GaussianUnit, beta)).abs() < 1e-8);
    }

    #[test]
    fn cumulant_is_stable_at_large_beta() {
        let r = EnvironmentModel::Rademacher;
        assert!((cumulant(&r, 800.0) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-9);
        let d = EnvironmentModel::finite_discrete(vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
        assert!((cumulant(&d, 800.0) - cumulant(&r, 800.0)).abs() < 1e-9);
    }

    #[test]
    fn lambda_pp0_examples() {
        assert_eq!(lambda_pp0(&EnvironmentModel::GaussianUnit), 1.0);
        assert_eq!(lambda_pp0(&EnvironmentModel::Rademacher), 1.0);
        let d = EnvironmentModel::finite_discrete(vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
        assert!((lambda_pp0(&d) - 1.0).abs() < 1e-15);
        // finite differences of the cumulant
        for m in models() {
            let h = 1e-4;
            let fd = (cumulant(&m, h) - 2.0 * cumulant(&m, 0.0) + cumulant(&m, -h)) / (h * h);
            assert!((fd - lambda_pp0(&m)).abs() < 1e-6, "{}", m.family());
        }
    }

    #[test]
    fn cumulant_is_midpoint_convex() {
        for m in models() {
            let grid: Vec<f64> = (-16..=16).map(|k| k as f64 * 0.25).collect();
            for &a in &grid {
                for &b in &grid {
                    let mid = cumulant(&m, 0.5 * (a + b));
                    let avg = 0.5 * (cumulant(&m, a) + cumulant(&m, b));
                    assert!(mid <= avg + 1e-12, "{} a={a} b={b}", m.family());
                }
            }
        }
    }

    #[test]
    fn invalid_models_are_rejected() {
        assert!(EnvironmentModel::finite_discrete(vec![1.0], vec![1.0]).is_err());
        assert!(EnvironmentModel::finite_discrete(vec![1.0, 2.0], vec![0.5, 0.6]).is_err());
        assert!(EnvironmentModel::finite_discrete(vec![1.0, 2.0], vec![-0.5, 1.5]).is_err());
        assert!(EnvironmentModel::finite_discrete(vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(EnvironmentModel::from_json(r#"{"family":"empirical"}"#).is_err());
    }

    #[test]
    fn model_json_fragment() {
        let m = EnvironmentModel::finite_discrete(vec![-1.0, 1.0], vec![0.25, 0.75]).unwrap();
        let s = m.to_json();
        assert_eq!(
            s,
            r#"{"family":"finite-discrete","values":[-1.0,1.0],"probabilities":[0.25,0.75]}"#
        );
        assert_eq!(EnvironmentModel::from_json(&s).unwrap(), m);
        assert_eq!(
            EnvironmentModel::GaussianUnit.to_json(),
            r#"{"family":"gaussian-unit"}"#
        );
    }

    #[test]
    fn e_weight_examples() {
        for m in models() {
            assert_eq!(e_weight(&m, 0.0, 3.7), 1.0);
        }
        let g = EnvironmentModel::GaussianUnit;
        assert!((e_weight(&g, 1.0, 0.0) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((e_weight(&g, 1.0, 0.0) - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn e_weight_has_unit_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in models() {
            let base = tilted_law(&m, 0.0);
            for &beta in &[0.3, 0.7, 1.0, 2.0] {
                let xs: Vec<f64> = (0..100_000)
                    .map(|_| e_weight(&m, beta, base.sample(&mut rng)))
                    .collect();
                let (mean, se) = mean_se(&xs);
                assert!((mean - 1.0).abs() <= 4.0 * se, "{} β={beta}: {mean} ± {se}", m.family());
            }
        }
    }

    #[test]
    fn tilted_law_examples() {
        let r = EnvironmentModel::Rademacher;
        match tilted_law(&r, 0.0) {
            SiteLaw::Coin { p_plus } => assert_eq!(p_plus, 0.5),
            other => panic!("{other:?}"),
        }
        match tilted_law(&r, 1.0) {
            SiteLaw::Coin { p_plus } => {
                let e = 1f64.exp();
                assert!((p_plus - e / (e + 1.0 / e)).abs() < 1e-15);
                assert!((p_plus - 0.88080).abs() < 1e-5);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tilted_gaussian_shifts_mean_only() {
        let law = tilted_law(&EnvironmentModel::GaussianUnit, 1.3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..10_000).map(|_| law.sample(&mut rng)).collect();
        let (m, se) = mean_se(&xs);
        assert!((m - 1.3).abs() <= 4.0 * se);
        let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
        let (v, vse) = mean_se(&sq);
        assert!((v - 1.0).abs() <= 4.0 * vse, "{v} ± {vse}");
    }

    #[test]
    fn tilted_law_is_reweighted_base_law() {
        // E_tilted[f] = E_base[f · e_weight] exactly on the discrete families
        let f = |x: f64| x * x * x - 2.0 * x + 0.5;
        for m in &models()[1..] {
            for &beta in &[-1.5, 0.3, 2.0] {
                let base = tilted_law(m, 0.0).atoms().unwrap();
                let tilt = tilted_law(m, beta).atoms().unwrap();
                let lhs: f64 = tilt.iter().map(|(v, p)| p * f(*v)).sum();
                let rhs: f64 = base.iter().map(|(v, p)| p * f(*v) * e_weight(m, beta, *v)).sum();
                assert!((lhs - rhs).abs() < 1e-12, "{} β={beta}", m.family());
            }
        }
    }

    #[test]
    fn field_access_is_deterministic_and_windowed() {
        let f = EnvironmentField::centered(EnvironmentModel::GaussianUnit, 42, 2, 10, 5).unwrap();
        let x = LatticePoint::new(&[1, -2]);
        let a = f.eta_at(3, &x).unwrap();
        let b = f.eta_at(3, &x).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_ne!(a, f.eta_at(4, &x).unwrap());
        assert!(matches!(
            f.eta_at(11, &x),
            Err(Error::WindowViolation { .. })
        ));
        assert!(f.eta_at(0, &x).is_err());
        assert!(f.eta_at(1, &LatticePoint::new(&[6, 0])).is_err());
        let g = EnvironmentField::centered(EnvironmentModel::GaussianUnit, 43, 2, 10, 5).unwrap();
        assert_ne!(a, g.eta_at(3, &x).unwrap());
    }

    #[test]
    fn regenerated_field_is_bit_identical() {
        let mk = || EnvironmentField::centered(EnvironmentModel::Rademacher, 9, 2, 6, 4).unwrap();
        let a = TableField::materialize(&mk());
        let b = TableField::materialize(&mk());
        for ((k, v), _) in a.values.iter().zip(0..) {
            assert_eq!(v.to_bits(), b.values[k].to_bits());
        }
    }

    #[test]
    fn untilted_gaussian_field_is_centred() {
        let f = EnvironmentField::centered(EnvironmentModel::GaussianUnit, 1, 2, 100, 15).unwrap();
        let pts = f.window().sites.points();
        let mut xs = Vec::with_capacity(100_000);
        'outer: for t in 1..=100 {
            let s = f.slice(t);
            for p in &pts {
                xs.push(s.eta(p.raw()));
                if xs.len() == 100_000 {
                    break 'outer;
                }
            }
        }
        let (m, _) = mean_se(&xs);
        assert!(m.abs() < 4.0 / (1e5f64).sqrt(), "{m}");
        let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn tilted_field_overrides_only_on_path_sites() {
        let path = WalkPath::new(vec![
            LatticePoint::new(&[0, 0]),
            LatticePoint::new(&[1, 0]),
            LatticePoint::new(&[1, 1]),
        ])
        .unwrap();
        let mut on = Vec::new();
        for seed in 0..10_000u64 {
            let base = EnvironmentField::centered(EnvironmentModel::GaussianUnit, seed, 2, 4, 3).unwrap();
            let tilted = base.clone().with_tilt(&path, 1.0).unwrap();
            let off = LatticePoint::new(&[0, 1]);
            assert_eq!(
                base.eta_at(1, &off).unwrap().to_bits(),
                tilted.eta_at(1, &off).unwrap().to_bits()
            );
            // time 3 is beyond the path: untouched
            let p = LatticePoint::new(&[1, 1]);
            assert_eq!(base.eta_at(3, &p).unwrap(), tilted.eta_at(3, &p).unwrap());
            on.push(tilted.eta_at(1, &LatticePoint::new(&[1, 0])).unwrap());
        }
        let (m, se) = mean_se(&on);
        assert!((m - 1.0).abs() <= 4.0 * se, "{m} ± {se}");
    }
}
