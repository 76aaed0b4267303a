//! Probabilistic injection forecasts and their reduction to weighted scenarios.
//!
//! Stochastic injections (wind) enter dispatch as negative load at their
//! buses. Regions are independent, so every expectation in the crate can be
//! taken region by region.
//!
//! Two reduction strategies exist:
//! * [`discretize_forecast`] produces a finite [`ScenarioSet`] (exact for
//!   discrete sources, Gauss-Hermite for normals, seeded Monte Carlo above the
//!   tensor-product cap);
//! * [`Expectation::PiecewiseNormal`] integrates a single normal source in
//!   closed form over the pieces on which the integrand is affine, which keeps
//!   expected price curves continuous when the per-scenario curves jump.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::netmodel::{BusId, Network, Region};

pub const DEFAULT_ORDER: usize = 11;
pub const TENSOR_CAP: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    /// One value per bus of the injection.
    PointMass(Vec<f64>),
    /// A single draw applied to every bus of the injection.
    Normal { mean: f64, std: f64 },
    /// `values[k]` holds one value per bus; outcome `k` has probability `probs[k]`.
    Discrete { values: Vec<Vec<f64>>, probs: Vec<f64> },
}

/// Stochastic generation at one or more buses of a single region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticInjection {
    pub buses: Vec<BusId>,
    pub dist: Distribution,
}

impl StochasticInjection {
    pub fn mean(&self) -> Vec<f64> {
        match &self.dist {
            Distribution::PointMass(v) => v.clone(),
            Distribution::Normal { mean, .. } => vec![*mean; self.buses.len()],
            Distribution::Discrete { values, probs } => (0..self.buses.len())
                .map(|j| values.iter().zip(probs).map(|(v, p)| p * v[j]).sum())
                .collect(),
        }
    }

    fn validate(&self, network: &Network) -> Result<Region> {
        let n = self.buses.len();
        if n == 0 {
            return Err(Error::invalid("forecast_buses", "injection lists no bus"));
        }
        let mut region = None;
        for &b in &self.buses {
            let r = network
                .region_of(b)
                .ok_or_else(|| Error::invalid("known_bus", format!("forecast on unknown bus {b}")))?;
            if region.is_some_and(|x| x != r) {
                return Err(Error::invalid(
                    "forecast_region",
                    format!("injection at buses {:?} spans both regions", self.buses),
                ));
            }
            region = Some(r);
        }
        match &self.dist {
            Distribution::PointMass(v) => {
                if v.len() != n || v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::invalid("forecast_values", format!("point mass {v:?} for {n} buses")));
                }
            }
            Distribution::Normal { mean, std } => {
                if !mean.is_finite() || !(*std >= 0.0) || !std.is_finite() {
                    return Err(Error::invalid(
                        "nonnegative_std",
                        format!("normal({mean}, {std}) at buses {:?}", self.buses),
                    ));
                }
            }
            Distribution::Discrete { values, probs } => {
                if values.len() != probs.len() || values.is_empty() {
                    return Err(Error::invalid(
                        "discrete_support",
                        format!("{} values but {} probabilities", values.len(), probs.len()),
                    ));
                }
                if values.iter().any(|v| v.len() != n || v.iter().any(|x| !x.is_finite())) {
                    return Err(Error::invalid("forecast_values", format!("each outcome needs {n} finite values")));
                }
                if probs.iter().any(|&p| !(p > 0.0)) {
                    return Err(Error::invalid("positive_probabilities", format!("{probs:?}")));
                }
                let s: f64 = probs.iter().sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid("probabilities_sum_to_one", format!("{probs:?} sums to {s}")));
                }
            }
        }
        Ok(region.expect("nonempty"))
    }
}

/// Per-region stochastic injections.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Forecast {
    regions: [Vec<StochasticInjection>; 2],
}

impl Forecast {
    pub fn new(network: &Network, injections: Vec<StochasticInjection>) -> Result<Forecast> {
        let mut regions: [Vec<StochasticInjection>; 2] = Default::default();
        for inj in injections {
            let r = inj.validate(network)?;
            regions[r.index()].push(inj);
        }
        Ok(Forecast { regions })
    }

    pub fn region(&self, r: Region) -> &[StochasticInjection] {
        &self.regions[r.index()]
    }

    pub fn injections(&self) -> impl Iterator<Item = &StochasticInjection> {
        self.regions.iter().flatten()
    }

    pub fn is_deterministic(&self) -> bool {
        self.injections().all(|i| match &i.dist {
            Distribution::PointMass(_) => true,
            Distribution::Normal { std, .. } => *std == 0.0,
            Distribution::Discrete { probs, .. } => probs.len() == 1,
        })
    }

    /// Certainty equivalent: every source replaced by a point mass at its mean.
    pub fn mean(&self) -> Forecast {
        let map = |v: &Vec<StochasticInjection>| {
            v.iter()
                .map(|i| StochasticInjection {
                    buses: i.buses.clone(),
                    dist: Distribution::PointMass(i.mean()),
                })
                .collect()
        };
        Forecast {
            regions: [map(&self.regions[0]), map(&self.regions[1])],
        }
    }

    /// Copy with every normal source's standard deviation replaced.
    pub fn with_normal_std(&self, std: f64) -> Forecast {
        let mut out = self.clone();
        for inj in out.regions.iter_mut().flatten() {
            if let Distribution::Normal { std: s, .. } = &mut inj.dist {
                *s = std;
            }
        }
        out
    }

    /// Copy with every discrete source's probabilities replaced.
    pub fn with_discrete_probs(&self, probs: &[f64]) -> Result<Forecast> {
        let mut out = self.clone();
        for inj in out.regions.iter_mut().flatten() {
            if let Distribution::Discrete { values, probs: p } = &mut inj.dist {
                if values.len() != probs.len() {
                    return Err(Error::DimensionMismatch {
                        expected: values.len(),
                        got: probs.len(),
                    });
                }
                *p = probs.to_vec();
            }
        }
        let s: f64 = probs.iter().sum();
        if probs.iter().any(|&p| !(p > 0.0)) || (s - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("probabilities_sum_to_one", format!("{probs:?}")));
        }
        Ok(out)
    }
}

/// One realization: MW added to the load at each listed bus (wind is negative).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub adjustment: Vec<(BusId, f64)>,
    pub weight: f64,
}

impl Scenario {
    pub fn certain() -> Scenario {
        Scenario {
            adjustment: Vec::new(),
            weight: 1.0,
        }
    }

    /// Base loads with this scenario's adjustments applied.
    pub fn apply(&self, loads: &BTreeMap<BusId, f64>) -> BTreeMap<BusId, f64> {
        let mut out = loads.clone();
        for &(b, v) in &self.adjustment {
            *out.entry(b).or_insert(0.0) += v;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ExactDiscrete,
    GaussHermite { order: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub scenarios: Vec<Scenario>,
    pub provenance: Provenance,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.scenarios.iter().map(|s| s.weight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub samples: usize,
    pub seed: u64,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        MonteCarlo { samples: 4096, seed: 0x5eed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureRule {
    /// Tensor product of per-source rules; normals use Gauss-Hermite of `order`.
    Tensor {
        order: usize,
        cap: usize,
        fallback: Option<MonteCarlo>,
    },
    MonteCarlo(MonteCarlo),
}

impl Default for QuadratureRule {
    fn default() -> Self {
        QuadratureRule::Tensor {
            order: DEFAULT_ORDER,
            cap: TENSOR_CAP,
            fallback: Some(MonteCarlo::default()),
        }
    }
}

impl QuadratureRule {
    pub fn gauss_hermite(order: usize) -> Self {
        QuadratureRule::Tensor {
            order,
            cap: TENSOR_CAP,
            fallback: Some(MonteCarlo::default()),
        }
    }
}

/// Options for closed-form integration of piecewise-affine functions of a normal draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseOptions {
    /// Support is truncated to `mean +/- truncation * std` and renormalized.
    pub truncation: f64,
    pub initial_panels: usize,
    /// Panels narrower than `min_width * std` are accepted without an affinity test.
    pub min_width: f64,
    /// Affinity tolerance relative to `1 + |f|`.
    pub tol: f64,
}

impl Default for PiecewiseOptions {
    fn default() -> Self {
        PiecewiseOptions {
            truncation: 6.0,
            initial_panels: 24,
            min_width: 1e-8,
            tol: 1e-9,
        }
    }
}

/// How expectations over a region's forecast are taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Quadrature(QuadratureRule),
    /// Closed-form integration over a region's single normal source, exact
    /// enumeration of its other sources. Regions with several normal sources
    /// fall back to the default quadrature.
    PiecewiseNormal(PiecewiseOptions),
}

impl Default for Expectation {
    fn default() -> Self {
        Expectation::Quadrature(QuadratureRule::default())
    }
}

/// A normal source left for continuous integration.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalSource {
    pub buses: Vec<BusId>,
    pub mean: f64,
    pub std: f64,
}

impl NormalSource {
    /// Load adjustment for a realized injection `w`.
    pub fn adjustment(&self, w: f64) -> Vec<(BusId, f64)> {
        self.buses.iter().map(|&b| (b, -w)).collect()
    }
}

/// A region's expectation recipe: discrete scenarios, optionally crossed with
/// one normal source integrated piecewise.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPlan {
    pub scenarios: ScenarioSet,
    pub normal: Option<(NormalSource, PiecewiseOptions)>,
}

impl RegionPlan {
    /// Evaluates `E[f]` where `f` receives the full load adjustment of a realization.
    pub fn expect<F>(&self, mut f: F) -> Result<f64>
    where
        F: FnMut(&[(BusId, f64)]) -> Result<f64>,
    {
        let mut total = 0.0;
        for s in &self.scenarios.scenarios {
            let v = match &self.normal {
                None => f(&s.adjustment)?,
                Some((src, opts)) => integrate_piecewise_affine(src.mean, src.std, opts, |w| {
                    let mut adj = s.adjustment.clone();
                    adj.extend(src.adjustment(w));
                    f(&adj)
                })?,
            };
            total += s.weight * v;
        }
        Ok(total)
    }

    /// Realizations whose joint feasibility implies feasibility of every
    /// realization in the plan (support endpoints for the normal source).
    pub fn extreme_adjustments(&self) -> Vec<Vec<(BusId, f64)>> {
        let mut out = Vec::new();
        for s in &self.scenarios.scenarios {
            match &self.normal {
                None => out.push(s.adjustment.clone()),
                Some((src, opts)) => {
                    for w in [src.mean - opts.truncation * src.std, src.mean + opts.truncation * src.std] {
                        let mut adj = s.adjustment.clone();
                        adj.extend(src.adjustment(w));
                        out.push(adj);
                    }
                }
            }
        }
        out
    }
}

pub fn plan_region(f: &Forecast, region: Region, rule: &Expectation) -> Result<RegionPlan> {
    let sources = f.region(region);
    match rule {
        Expectation::Quadrature(q) => Ok(RegionPlan {
            scenarios: discretize_sources(sources, q)?,
            normal: None,
        }),
        Expectation::PiecewiseNormal(opts) => {
            let normals: Vec<usize> = sources
                .iter()
                .enumerate()
                .filter(|(_, s)| matches!(s.dist, Distribution::Normal { std, .. } if std > 0.0))
                .map(|(i, _)| i)
                .collect();
            if normals.len() != 1 {
                return Ok(RegionPlan {
                    scenarios: discretize_sources(sources, &QuadratureRule::default())?,
                    normal: None,
                });
            }
            let k = normals[0];
            let rest: Vec<StochasticInjection> = sources.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, s)| s.clone()).collect();
            let Distribution::Normal { mean, std } = sources[k].dist else {
                unreachable!()
            };
            Ok(RegionPlan {
                scenarios: discretize_sources(&rest, &QuadratureRule::default())?,
                normal: Some((
                    NormalSource {
                        buses: sources[k].buses.clone(),
                        mean,
                        std,
                    },
                    *opts,
                )),
            })
        }
    }
}

/// Joint scenario set over both regions (tensor product of all sources).
pub fn discretize_forecast(f: &Forecast, rule: &QuadratureRule) -> Result<ScenarioSet> {
    let all: Vec<StochasticInjection> = f.injections().cloned().collect();
    discretize_sources(&all, rule)
}

pub fn discretize_region(f: &Forecast, region: Region, rule: &QuadratureRule) -> Result<ScenarioSet> {
    discretize_sources(f.region(region), rule)
}

fn source_outcomes(src: &StochasticInjection, order: usize) -> Vec<(Vec<f64>, f64)> {
    let n = src.buses.len();
    match &src.dist {
        Distribution::PointMass(v) => vec![(v.clone(), 1.0)],
        Distribution::Normal { mean, std } if *std == 0.0 => vec![(vec![*mean; n], 1.0)],
        Distribution::Normal { mean, std } => {
            let (nodes, weights) = gauss_hermite(order);
            nodes.iter().zip(weights).map(|(z, w)| (vec![mean + std * z; n], w)).collect()
        }
        Distribution::Discrete { values, probs } => values.iter().cloned().zip(probs.iter().copied()).collect(),
    }
}

pub(crate) fn discretize_sources_default(sources: &[StochasticInjection]) -> Result<ScenarioSet> {
    discretize_sources(sources, &QuadratureRule::default())
}

fn discretize_sources(sources: &[StochasticInjection], rule: &QuadratureRule) -> Result<ScenarioSet> {
    let to_adjustment =
        |src: &StochasticInjection, vals: &[f64]| -> Vec<(BusId, f64)> { src.buses.iter().zip(vals).map(|(&b, &v)| (b, -v)).collect() };
    let has_normal = sources.iter().any(|s| matches!(s.dist, Distribution::Normal { std, .. } if std > 0.0));

    let (order, cap, fallback) = match *rule {
        QuadratureRule::MonteCarlo(mc) => return Ok(monte_carlo(sources, mc)),
        QuadratureRule::Tensor { order, cap, fallback } => (order, cap, fallback),
    };
    if order == 0 {
        return Err(Error::invalid("quadrature_order", "order must be positive"));
    }
    let per_source: Vec<Vec<(Vec<f64>, f64)>> = sources.iter().map(|s| source_outcomes(s, order)).collect();
    let size = per_source
        .iter()
        .try_fold(1usize, |acc, o| acc.checked_mul(o.len()))
        .unwrap_or(usize::MAX);
    if size > cap {
        return match fallback {
            Some(mc) => {
                log::warn!("tensor product of {size} scenarios exceeds cap {cap}; sampling {} points", mc.samples);
                Ok(monte_carlo(sources, mc))
            }
            None => Err(Error::UnsupportedCombination { scenarios: size, cap }),
        };
    }

    let mut scenarios = vec![Scenario::certain()];
    for (src, outcomes) in sources.iter().zip(&per_source) {
        let mut next = Vec::with_capacity(scenarios.len() * outcomes.len());
        for s in &scenarios {
            for (vals, w) in outcomes {
                let mut adj = s.adjustment.clone();
                adj.extend(to_adjustment(src, vals));
                next.push(Scenario {
                    adjustment: adj,
                    weight: s.weight * w,
                });
            }
        }
        scenarios = next;
    }
    Ok(ScenarioSet {
        scenarios,
        provenance: if has_normal {
            Provenance::GaussHermite { order }
        } else {
            Provenance::ExactDiscrete
        },
    })
}

fn monte_carlo(sources: &[StochasticInjection], mc: MonteCarlo) -> ScenarioSet {
    let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
    let n = mc.samples.max(1);
    let w = 1.0 / n as f64;
    let scenarios = (0..n)
        .map(|_| {
            let mut adjustment = Vec::new();
            for src in sources {
                let vals = match &src.dist {
                    Distribution::PointMass(v) => v.clone(),
                    Distribution::Normal { mean, std } => {
                        let z: f64 = rng.sample(rand_distr::StandardNormal);
                        vec![mean + std * z; src.buses.len()]
                    }
                    Distribution::Discrete { values, probs } => {
                        let u: f64 = rng.random();
                        let mut acc = 0.0;
                        let mut pick = values.len() - 1;
                        for (k, p) in probs.iter().enumerate() {
                            acc += p;
                            if u < acc {
                                pick = k;
                                break;
                            }
                        }
                        values[pick].clone()
                    }
                };
                adjustment.extend(src.buses.iter().zip(vals).map(|(&b, v)| (b, -v)));
            }
            Scenario { adjustment, weight: w }
        })
        .collect();
    ScenarioSet {
        scenarios,
        provenance: Provenance::MonteCarlo { samples: n, seed: mc.seed },
    }
}

pub fn expect(s: &ScenarioSet, values: &[f64]) -> Result<f64> {
    if values.len() != s.len() {
        return Err(Error::DimensionMismatch {
            expected: s.len(),
            got: values.len(),
        });
    }
    Ok(s.weights().zip(values).map(|(w, v)| w * v).sum())
}

/// Probabilists' Gauss-Hermite rule (weight `exp(-z^2/2)/sqrt(2 pi)`), nodes ascending.
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order.max(1);
    let jacobi = DMatrix::from_fn(n, n, |i, j| if i + 1 == j || j + 1 == i { (i.max(j) as f64).sqrt() } else { 0.0 });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n).map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrize away eigen-solver noise.
    let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -x;
        nodes[j] = x;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let s: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= s);
    (nodes, weights)
}

pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub(crate) fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E[f(W)]` for `W ~ N(mean, std^2)` truncated to `mean +/- truncation*std`,
/// where `f` is piecewise affine with finitely many breakpoints (jumps allowed).
///
/// Panels are trisected until `f` is affine on them to `tol`; each affine
/// piece is integrated exactly against the normal density.
pub fn integrate_piecewise_affine<F>(mean: f64, std: f64, opts: &PiecewiseOptions, mut f: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if std == 0.0 {
        return f(mean);
    }
    let k = opts.truncation;
    let mass = std_normal_cdf(k) - std_normal_cdf(-k);
    let piece = |za: f64, zb: f64, fa: f64, fb: f64| -> f64 {
        // f affine in z on [za, zb]. The closed form cancels on narrow panels
        // with steep slopes, where Simpson's rule is exact to rounding.
        if zb - za < 1e-3 {
            let zm = 0.5 * (za + zb);
            let body = fa * std_normal_pdf(za) + 2.0 * (fa + fb) * std_normal_pdf(zm) + fb * std_normal_pdf(zb);
            return (zb - za) * body / 6.0;
        }
        let slope = (fb - fa) / (zb - za);
        let at_zero = fa - slope * za;
        at_zero * (std_normal_cdf(zb) - std_normal_cdf(za)) + slope * (std_normal_pdf(za) - std_normal_pdf(zb))
    };
    let panels = opts.initial_panels.max(1);
    let zs: Vec<f64> = (0..=panels).map(|i| -k + 2.0 * k * i as f64 / panels as f64).collect();
    let mut fs = Vec::with_capacity(zs.len());
    for &z in &zs {
        fs.push(f(mean + std * z)?);
    }
    let mut stack: Vec<(f64, f64, f64, f64)> = (0..panels).rev().map(|i| (zs[i], zs[i + 1], fs[i], fs[i + 1])).collect();
    let mut total = 0.0;
    while let Some((za, zb, fa, fb)) = stack.pop() {
        let h = zb - za;
        if h <= opts.min_width {
            total += piece(za, zb, fa, fb);
            continue;
        }
        let (z1, z2) = (za + h / 3.0, za + 2.0 * h / 3.0);
        let (f1, f2) = (f(mean + std * z1)?, f(mean + std * z2)?);
        let lerp = |z: f64| fa + (fb - fa) * (z - za) / h;
        let scale = 1.0 + fa.abs().max(fb.abs());
        if (f1 - lerp(z1)).abs() <= opts.tol * scale && (f2 - lerp(z2)).abs() <= opts.tol * scale {
            total += piece(za, zb, fa, fb);
        } else {
            stack.push((z2, zb, f2, fb));
            stack.push((z1, z2, f1, f2));
            stack.push((za, z1, fa, f1));
        }
    }
    Ok(total / mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::fixtures::six_bus;
    use approx::assert_abs_diff_eq;

    fn normal(bus: BusId, mean: f64, std: f64) -> StochasticInjection {
        StochasticInjection {
            buses: vec![bus],
            dist: Distribution::Normal { mean, std },
        }
    }

    #[test]
    fn gh3_nodes_and_weights() {
        let (x, w) = gauss_hermite(3);
        let s3 = 3f64.sqrt();
        assert_abs_diff_eq!(x[0], -s3, epsilon = 1e-13);
        assert_abs_diff_eq!(x[1], 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(x[2], s3, epsilon = 1e-13);
        assert_abs_diff_eq!(w[0], 1.0 / 6.0, epsilon = 1e-13);
        assert_abs_diff_eq!(w[1], 2.0 / 3.0, epsilon = 1e-13);
    }

    fn double_factorial_moment(k: u32) -> f64 {
        if k % 2 == 1 {
            return 0.0;
        }
        (1..k).step_by(2).map(|x| x as f64).product()
    }

    #[test]
    fn gh_exact_on_monomials() {
        for n in [3usize, 5, 11] {
            let (x, w) = gauss_hermite(n);
            for k in 0..(2 * n as u32) {
                let got: f64 = x.iter().zip(&w).map(|(z, w)| w * z.powi(k as i32)).sum();
                let want = double_factorial_moment(k);
                // Rounding scales with the absolute moment, not the (possibly zero) signed one.
                let scale: f64 = x.iter().zip(&w).map(|(z, w)| w * z.abs().powi(k as i32)).sum();
                assert!((got - want).abs() <= 1e-12 * (1.0 + scale), "n={n} k={k}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn normal_order_three_scenarios() {
        let net = six_bus(250.0);
        let f = Forecast::new(&net, vec![normal(1, 55.0, 10.0)]).unwrap();
        let s = discretize_forecast(&f, &QuadratureRule::gauss_hermite(3)).unwrap();
        assert_eq!(s.provenance, Provenance::GaussHermite { order: 3 });
        let w: Vec<f64> = s.scenarios.iter().map(|s| -s.adjustment[0].1).collect();
        assert_abs_diff_eq!(w[0], 55.0 - 10.0 * 3f64.sqrt(), epsilon = 1e-11);
        assert_abs_diff_eq!(w[2], 55.0 + 10.0 * 3f64.sqrt(), epsilon = 1e-11);
    }

    #[test]
    fn zero_std_is_point_mass() {
        let net = six_bus(250.0);
        let f = Forecast::new(&net, vec![normal(1, 55.0, 0.0)]).unwrap();
        let s = discretize_forecast(&f, &QuadratureRule::default()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.scenarios[0].adjustment, vec![(1, -55.0)]);
        assert_eq!(s.scenarios[0].weight, 1.0);
        assert!(f.is_deterministic());
    }

    #[test]
    fn discrete_passthrough() {
        let net = six_bus(250.0);
        let src = StochasticInjection {
            buses: vec![4, 6],
            dist: Distribution::Discrete {
                values: vec![vec![10.0, 10.0], vec![200.0, 200.0]],
                probs: vec![0.5, 0.5],
            },
        };
        let f = Forecast::new(&net, vec![src]).unwrap();
        let s = discretize_forecast(&f, &QuadratureRule::default()).unwrap();
        assert_eq!(s.provenance, Provenance::ExactDiscrete);
        assert_eq!(s.len(), 2);
        assert_eq!(s.scenarios[1].adjustment, vec![(4, -200.0), (6, -200.0)]);
        assert_eq!(f.mean().region(Region::Two)[0].dist, Distribution::PointMass(vec![105.0, 105.0]));
    }

    #[test]
    fn bad_probabilities_rejected() {
        let net = six_bus(250.0);
        let src = StochasticInjection {
            buses: vec![1],
            dist: Distribution::Discrete {
                values: vec![vec![1.0], vec![2.0]],
                probs: vec![0.5, 0.6],
            },
        };
        assert!(matches!(
            Forecast::new(&net, vec![src]),
            Err(Error::Validation {
                invariant: "probabilities_sum_to_one",
                ..
            })
        ));
    }

    #[test]
    fn cap_without_fallback_errors() {
        let net = six_bus(250.0);
        let f = Forecast::new(&net, vec![normal(1, 55.0, 10.0), normal(2, 0.0, 1.0), normal(3, 0.0, 1.0)]).unwrap();
        let rule = QuadratureRule::Tensor {
            order: 11,
            cap: 1024,
            fallback: None,
        };
        assert_eq!(
            discretize_forecast(&f, &rule),
            Err(Error::UnsupportedCombination { scenarios: 1331, cap: 1024 })
        );
        let s = discretize_forecast(&f, &QuadratureRule::default()).unwrap();
        assert!(matches!(s.provenance, Provenance::MonteCarlo { .. }));
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let net = six_bus(250.0);
        let f = Forecast::new(&net, vec![normal(1, 55.0, 10.0)]).unwrap();
        let rule = QuadratureRule::MonteCarlo(MonteCarlo { samples: 500, seed: 7 });
        let a = discretize_forecast(&f, &rule).unwrap();
        let b = discretize_forecast(&f, &rule).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn expect_weighted_sum() {
        let s = ScenarioSet {
            scenarios: vec![
                Scenario {
                    adjustment: vec![],
                    weight: 0.5,
                },
                Scenario {
                    adjustment: vec![],
                    weight: 0.5,
                },
            ],
            provenance: Provenance::ExactDiscrete,
        };
        assert_eq!(expect(&s, &[10.0, 20.0]).unwrap(), 15.0);
        assert_eq!(expect(&s, &[7.0, 7.0]).unwrap(), 7.0);
        assert!(matches!(expect(&s, &[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn gh11_affine_is_mean() {
        let net = six_bus(250.0);
        let f = Forecast::new(&net, vec![normal(1, 55.0, 10.0)]).unwrap();
        let s = discretize_forecast(&f, &QuadratureRule::default()).unwrap();
        let vals: Vec<f64> = s.scenarios.iter().map(|sc| 3.0 - 2.0 * sc.adjustment[0].1).collect();
        assert_abs_diff_eq!(expect(&s, &vals).unwrap(), 3.0 + 2.0 * 55.0, epsilon = 1e-9);
    }

    #[test]
    fn piecewise_matches_closed_forms() {
        let opts = PiecewiseOptions::default();
        // E[max(W, 0)] for W ~ N(0,1) is 1/sqrt(2 pi).
        let v = integrate_piecewise_affine(0.0, 1.0, &opts, |w| Ok(w.max(0.0))).unwrap();
        assert_abs_diff_eq!(v, 1.0 / (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-8);
        // Step at mean + std: P(W > mu + sigma).
        let v = integrate_piecewise_affine(5.0, 2.0, &opts, |w| Ok(if w >= 7.0 { 1.0 } else { 0.0 })).unwrap();
        assert_abs_diff_eq!(v, 1.0 - std_normal_cdf(1.0), epsilon = 1e-7);
        let v = integrate_piecewise_affine(5.0, 2.0, &opts, |w| Ok(3.0 * w - 1.0)).unwrap();
        assert_abs_diff_eq!(v, 14.0, epsilon = 1e-10);
    }
}
