//! Brute-force evaluation of the two-stage expected-cost problem.
//!
//! Nothing here touches curve construction or root finding; the only shared
//! machinery is the regional dispatch solver. Expectations over a normal
//! source use their own integrator: adaptive bisection with quadratic
//! interpolation on each panel, integrated exactly against the normal
//! density.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::dispatch::{proxy_price, try_regional_dispatch};
use crate::error::{Error, Result};
use crate::forecast::{discretize_sources_default, Distribution, Forecast, StochasticInjection};
use crate::netmodel::{build_regional_view, BusId, Network, Region, RegionalModel};
use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Normal sources are truncated at this many standard deviations and renormalized.
    pub truncation: f64,
    pub initial_panels: usize,
    /// Panel acceptance tolerance relative to `1 + |f|`.
    pub tol: f64,
    /// Panels narrower than this many standard deviations are accepted as is.
    pub min_width: f64,
    pub execution: Execution,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            truncation: 6.0,
            initial_panels: 16,
            tol: 1e-12,
            min_width: 1e-10,
            execution: Execution::default(),
        }
    }
}

/// `E[f(W)]` for `W ~ N(mean, std^2)` truncated at `truncation` standard
/// deviations, for vector-valued `f` that is piecewise quadratic in `W`.
pub fn integrate_piecewise_quadratic<const N: usize, F>(mean: f64, std: f64, opts: &OracleOptions, mut f: F) -> Result<[f64; N]>
where
    F: FnMut(f64) -> Result<[f64; N]>,
{
    if std == 0.0 {
        return f(mean);
    }
    let unit = Normal::new(0.0, 1.0).expect("standard normal");
    let k = opts.truncation;
    let mass = unit.cdf(k) - unit.cdf(-k);
    let mut eval = |z: f64| f(mean + std * z);
    let n0 = opts.initial_panels.max(1);
    let mut total = [0.0; N];
    let mut stack = Vec::new();
    for i in (0..n0).rev() {
        let a = -k + 2.0 * k * i as f64 / n0 as f64;
        let b = -k + 2.0 * k * (i + 1) as f64 / n0 as f64;
        stack.push((a, b));
    }
    let mut ends: Option<(f64, [f64; N])> = None;
    while let Some((a, b)) = stack.pop() {
        let fa = match ends {
            Some((z, v)) if z == a => v,
            _ => eval(a)?,
        };
        let m = 0.5 * (a + b);
        let fb = eval(b)?;
        let fm = eval(m)?;
        let h = 0.5 * (b - a);
        let accept = if b - a <= opts.min_width {
            true
        } else {
            let (f1, f3) = (eval(a + 0.5 * h)?, eval(b - 0.5 * h)?);
            (0..N).all(|j| {
                let quad = |t: f64| {
                    // Lagrange form through (-1, fa), (0, fm), (1, fb).
                    fa[j] * t * (t - 1.0) / 2.0 - fm[j] * (t + 1.0) * (t - 1.0) + fb[j] * t * (t + 1.0) / 2.0
                };
                let scale = 1.0 + fa[j].abs().max(fb[j].abs());
                (f1[j] - quad(-0.5)).abs() <= opts.tol * scale && (f3[j] - quad(0.5)).abs() <= opts.tol * scale
            })
        };
        if !accept {
            stack.push((m, b));
            stack.push((a, m));
            ends = Some((a, fa));
            continue;
        }
        if b - a < 1e-3 {
            // Central moments cancel on narrow panels; Simpson is exact to rounding there.
            let (wa, wm, wb) = (unit.pdf(a), unit.pdf(m), unit.pdf(b));
            for j in 0..N {
                total[j] += (b - a) * (fa[j] * wa + 4.0 * fm[j] * wm + fb[j] * wb) / 6.0;
            }
            ends = Some((b, fb));
            continue;
        }
        // Moments of the density about m on [a, b].
        let (pa, pb) = (unit.pdf(a), unit.pdf(b));
        let m0 = unit.cdf(b) - unit.cdf(a);
        let m1 = pa - pb;
        let m2 = m0 + a * pa - b * pb;
        let c1 = m1 - m * m0;
        let c2 = m2 - 2.0 * m * m1 + m * m * m0;
        for j in 0..N {
            let d0 = fm[j];
            let d1 = (fb[j] - fa[j]) / (2.0 * h);
            let d2 = (fa[j] - 2.0 * fm[j] + fb[j]) / (2.0 * h * h);
            total[j] += d0 * m0 + d1 * c1 + d2 * c2;
        }
        ends = Some((b, fb));
    }
    Ok(total.map(|v| v / mass))
}

/// One region's uncertainty, enumerated: discrete outcomes crossed with at most one normal source.
#[derive(Debug, Clone)]
struct RegionLaw {
    outcomes: Vec<(Vec<(BusId, f64)>, f64)>,
    normal: Option<(Vec<BusId>, f64, f64)>,
}

fn region_law(sources: &[StochasticInjection]) -> Result<RegionLaw> {
    let normals: Vec<usize> = sources
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s.dist, Distribution::Normal { std, .. } if std > 0.0))
        .map(|(i, _)| i)
        .collect();
    if normals.len() > 1 {
        // Several continuous sources: fall back to the shared tensor quadrature.
        let set = discretize_sources_default(sources)?;
        return Ok(RegionLaw {
            outcomes: set.scenarios.into_iter().map(|s| (s.adjustment, s.weight)).collect(),
            normal: None,
        });
    }
    let mut outcomes: Vec<(Vec<(BusId, f64)>, f64)> = vec![(Vec::new(), 1.0)];
    let mut normal = None;
    for (i, src) in sources.iter().enumerate() {
        let branches: Vec<(Vec<f64>, f64)> = match &src.dist {
            Distribution::PointMass(v) => vec![(v.clone(), 1.0)],
            Distribution::Normal { mean, std } if normals.contains(&i) => {
                normal = Some((src.buses.clone(), *mean, *std));
                continue;
            }
            Distribution::Normal { mean, .. } => vec![(vec![*mean; src.buses.len()], 1.0)],
            Distribution::Discrete { values, probs } => values.iter().cloned().zip(probs.iter().copied()).collect(),
        };
        let mut next = Vec::new();
        for (adj, w) in &outcomes {
            for (vals, p) in &branches {
                let mut a = adj.clone();
                a.extend(src.buses.iter().zip(vals).map(|(&b, &v)| (b, -v)));
                next.push((a, w * p));
            }
        }
        outcomes = next;
    }
    Ok(RegionLaw { outcomes, normal })
}

/// Expected `[cost, proxy price]` of one region at `q`.
fn region_expectation(model: &RegionalModel, law: &RegionLaw, q: f64, opts: &OracleOptions) -> Result<[f64; 2]> {
    let mut total = [0.0; 2];
    for (k, (adj, w)) in law.outcomes.iter().enumerate() {
        let at = |extra: &[(BusId, f64)]| -> Result<[f64; 2]> {
            let mut a = adj.clone();
            a.extend_from_slice(extra);
            let d = model.load_with(&a);
            match try_regional_dispatch(model, q, &d, None)? {
                Some(sol) => Ok([sol.cost, proxy_price(&sol, model)]),
                None => Err(Error::InfeasibleScenario { scenario: k, q }),
            }
        };
        let v = match &law.normal {
            None => at(&[])?,
            Some((buses, mean, std)) => integrate_piecewise_quadratic(*mean, *std, opts, |x| {
                let extra: Vec<(BusId, f64)> = buses.iter().map(|&b| (b, -x)).collect();
                at(&extra)
            })?,
        };
        total[0] += w * v[0];
        total[1] += w * v[1];
    }
    Ok(total)
}

/// Both regions' models and laws, reused across a scan.
struct Evaluator {
    models: [RegionalModel; 2],
    laws: [RegionLaw; 2],
    opts: OracleOptions,
}

impl Evaluator {
    fn new(network: &Network, forecast: &Forecast, opts: &OracleOptions) -> Result<Evaluator> {
        Ok(Evaluator {
            models: [build_regional_view(network, Region::One)?, build_regional_view(network, Region::Two)?],
            laws: [region_law(forecast.region(Region::One))?, region_law(forecast.region(Region::Two))?],
            opts: *opts,
        })
    }

    /// `(E[c1 + c2], E[pi_2] - E[pi_1])` at `q`.
    fn at(&self, q: f64) -> Result<(f64, f64)> {
        let [c1, p1] = region_expectation(&self.models[0], &self.laws[0], q, &self.opts)?;
        let [c2, p2] = region_expectation(&self.models[1], &self.laws[1], q, &self.opts)?;
        Ok((c1 + c2, p2 - p1))
    }
}

/// `E[c1(g1*(q, d1)) + c2(g2*(q, d2))]`.
pub fn expected_total_cost(network: &Network, forecast: &Forecast, q: f64, opts: &OracleOptions) -> Result<f64> {
    Ok(Evaluator::new(network, forecast, opts)?.at(q)?.0)
}

/// Expected cost and price gap on a grid of interchange levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostScan {
    pub q: Vec<f64>,
    pub expected_cost: Vec<f64>,
    /// `E[pi_2] - E[pi_1]`, the negative slope of the expected cost.
    pub expected_gap: Vec<f64>,
    pub argmin: f64,
    pub min_cost: f64,
    /// Grid points dropped because some realization was infeasible.
    pub infeasible: Vec<f64>,
}

impl CostScan {
    /// Largest rise of the cost toward the minimum, i.e. violation of
    /// "nonincreasing left of the argmin, nondecreasing right of it".
    pub fn unimodality_violation(&self) -> f64 {
        let k = self.q.iter().position(|&q| q == self.argmin).unwrap_or(0);
        let mut worst: f64 = 0.0;
        for i in 1..self.q.len() {
            let step = self.expected_cost[i] - self.expected_cost[i - 1];
            let bad = if i <= k { step } else { -step };
            worst = worst.max(bad);
        }
        worst
    }
}

/// Evaluates `J(q)` on `grid`; infeasible points are dropped with a warning.
pub fn scan(network: &Network, forecast: &Forecast, grid: &[f64], opts: &OracleOptions) -> Result<CostScan> {
    let ev = Evaluator::new(network, forecast, opts)?;
    let values = par::map(opts.execution, grid, |&q| ev.at(q));
    let mut out = CostScan {
        q: Vec::new(),
        expected_cost: Vec::new(),
        expected_gap: Vec::new(),
        argmin: f64::NAN,
        min_cost: f64::INFINITY,
        infeasible: Vec::new(),
    };
    for (&q, v) in grid.iter().zip(values) {
        match v {
            Ok((c, g)) => {
                out.q.push(q);
                out.expected_cost.push(c);
                out.expected_gap.push(g);
                if c < out.min_cost {
                    out.min_cost = c;
                    out.argmin = q;
                }
            }
            Err(Error::InfeasibleScenario { scenario, .. }) => {
                log::debug!("q = {q}: scenario {scenario} infeasible, dropped from scan");
                out.infeasible.push(q);
            }
            Err(e) => return Err(e),
        }
    }
    if !out.infeasible.is_empty() {
        log::info!("{} of {} scan points dropped as infeasible", out.infeasible.len(), grid.len());
    }
    if out.q.is_empty() {
        return Err(Error::EmptyDomain { region: Region::One });
    }
    Ok(out)
}

/// Coarse-then-fine grid for [`grid_search_schedule`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub coarse_step: f64,
    pub fine_step: f64,
    /// Half-width of the fine window around the coarse argmin.
    pub window: f64,
}

impl Default for ScanGrid {
    fn default() -> Self {
        ScanGrid {
            coarse_step: 1.0,
            fine_step: 0.1,
            window: 5.0,
        }
    }
}

fn steps(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).floor() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

/// Interchange range allowed by generation capacity at mean loads, clipped to the interface.
fn capacity_range(network: &Network, forecast: &Forecast) -> (f64, f64) {
    let mean = forecast.mean();
    let mut net_load = [0.0; 2];
    for r in Region::BOTH {
        let gen_load: f64 = network.buses_in(r).iter().map(|&b| network.load_at(b)).sum();
        let wind: f64 = mean.region(r).iter().map(|s| s.mean().iter().sum::<f64>()).sum();
        net_load[r.index()] = gen_load - wind;
    }
    let cap = |r: Region| -> (f64, f64) {
        let gens = network.generators_in(r);
        let lo: f64 = gens.iter().map(|g| g.g_min).sum();
        let hi: f64 = gens.iter().map(|g| g.g_max.min(1e6)).sum();
        (lo, hi)
    };
    let (l1, h1) = cap(Region::One);
    let (l2, h2) = cap(Region::Two);
    let lo = (l1 - net_load[0]).max(net_load[1] - h2);
    let hi = (h1 - net_load[0]).min(net_load[1] - l2);
    let iface = network.interface();
    (lo.max(iface.q_min), hi.min(iface.q_max))
}

/// Minimizes `J(q)` by enumeration: a coarse scan of the feasible range,
/// then a fine scan around the coarse minimizer. The returned scan holds
/// both, merged in increasing `q`.
pub fn grid_search_schedule(network: &Network, forecast: &Forecast, grid: &ScanGrid, opts: &OracleOptions) -> Result<CostScan> {
    let (lo, hi) = capacity_range(network, forecast);
    if !(lo <= hi) {
        return Err(Error::EmptyDomain { region: Region::One });
    }
    let mut coarse_q = steps(lo, hi, grid.coarse_step);
    if coarse_q.last().is_some_and(|&q| q < hi) {
        coarse_q.push(hi);
    }
    let coarse = scan(network, forecast, &coarse_q, opts)?;
    let c = coarse.argmin;
    let fine_lo = (c - grid.window).max(lo);
    let fine_hi = (c + grid.window).min(hi);
    // Fine points are aligned to the coarse argmin so the two grids nest.
    let k0 = ((c - fine_lo) / grid.fine_step).floor();
    let fine_q: Vec<f64> = steps(c - k0 * grid.fine_step, fine_hi, grid.fine_step);
    let fine = scan(network, forecast, &fine_q, opts)?;

    let mut merged: Vec<(f64, f64, f64)> = coarse
        .q
        .iter()
        .zip(&coarse.expected_cost)
        .zip(&coarse.expected_gap)
        .chain(fine.q.iter().zip(&fine.expected_cost).zip(&fine.expected_gap))
        .map(|((&q, &c), &g)| (q, c, g))
        .collect();
    merged.sort_by(|a, b| a.0.total_cmp(&b.0));
    merged.dedup_by(|a, b| (a.0 - b.0).abs() <= 1e-9 * (1.0 + a.0.abs()));
    let (argmin, min_cost) = merged
        .iter()
        .fold((f64::NAN, f64::INFINITY), |best, &(q, c, _)| if c < best.1 { (q, c) } else { best });
    let mut infeasible = coarse.infeasible;
    infeasible.extend(fine.infeasible);
    Ok(CostScan {
        q: merged.iter().map(|m| m.0).collect(),
        expected_cost: merged.iter().map(|m| m.1).collect(),
        expected_gap: merged.iter().map(|m| m.2).collect(),
        argmin,
        min_cost,
        infeasible,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub q: f64,
    /// Central difference of the expected regional cost.
    pub fd: f64,
    /// Signed expected proxy price: `+E[pi_1]` for region 1, `-E[pi_2]` for region 2.
    pub price: f64,
    pub error: f64,
    /// The price is not affine over `[q - eps, q + eps]`; no accuracy is claimed.
    pub nonsmooth: bool,
}

/// Compares the finite-difference slope of a region's expected cost with its expected proxy price.
pub fn envelope_check(model: &RegionalModel, forecast: &Forecast, q: f64, eps: f64, opts: &OracleOptions) -> Result<EnvelopeReport> {
    let law = region_law(forecast.region(model.region))?;
    let eval = |x: f64| -> Result<[f64; 2]> {
        region_expectation(model, &law, x, opts).map_err(|e| match e {
            Error::InfeasibleScenario { .. } => Error::OutOfDomain {
                q: x,
                lo: q - eps,
                hi: q + eps,
            },
            other => other,
        })
    };
    let [c_minus, p_minus] = eval(q - eps)?;
    let [_, p_mid] = eval(q)?;
    let [c_plus, p_plus] = eval(q + eps)?;
    let fd = (c_plus - c_minus) / (2.0 * eps);
    let price = model.sign() * p_mid;
    let curvature = (p_plus - 2.0 * p_mid + p_minus).abs();
    Ok(EnvelopeReport {
        q,
        fd,
        price,
        error: (fd - price).abs(),
        nonsmooth: curvature > 1e-6 * (1.0 + p_mid.abs()),
    })
}

/// Writes `q,expected_cost,expected_gap` rows.
pub fn scan_csv(scan: &CostScan) -> String {
    let mut out = String::from("q,expected_cost,expected_gap\n");
    for i in 0..scan.q.len() {
        out.push_str(&format!("{},{},{}\n", scan.q[i], scan.expected_cost[i], scan.expected_gap[i]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::solve_centralized;
    use crate::netmodel::fixtures::*;
    use approx::assert_abs_diff_eq;

    fn wind(bus: BusId, dist: Distribution) -> StochasticInjection {
        StochasticInjection { buses: vec![bus], dist }
    }

    #[test]
    fn quadratic_moments_are_exact() {
        let o = OracleOptions::default();
        let [m0, m1, m2] = integrate_piecewise_quadratic(3.0, 2.0, &o, |w| Ok([1.0, w, w * w])).unwrap();
        assert_abs_diff_eq!(m0, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m1, 3.0, epsilon = 1e-11);
        // Truncation at 6 sigma removes ~2e-7 of the variance mass.
        assert_abs_diff_eq!(m2, 13.0, epsilon = 1e-6);
    }

    #[test]
    fn kinked_function() {
        // E[max(W, 0)] under the standard normal truncated to [-6, 6]:
        // (phi(0) - phi(6)) / (Phi(6) - Phi(-6)).
        let o = OracleOptions::default();
        let [v] = integrate_piecewise_quadratic(0.0, 1.0, &o, |w| Ok([w.max(0.0)])).unwrap();
        let unit = Normal::new(0.0, 1.0).unwrap();
        let want = (unit.pdf(0.0) - unit.pdf(6.0)) / (unit.cdf(6.0) - unit.cdf(-6.0));
        assert_abs_diff_eq!(v, want, epsilon = 1e-12);
    }

    #[test]
    fn point_mass_cost_is_deterministic_cost() {
        let net = six_bus(250.0);
        let f = Forecast::new(&net, vec![wind(1, Distribution::PointMass(vec![55.0]))]).unwrap();
        let c = expected_total_cost(&net, &f, 150.0, &OracleOptions::default()).unwrap();
        let m1 = build_regional_view(&net, Region::One).unwrap();
        let m2 = build_regional_view(&net, Region::Two).unwrap();
        let s1 = crate::dispatch::solve_regional_dispatch(&m1, 150.0, &m1.load_with(&[(1, -55.0)])).unwrap();
        let s2 = crate::dispatch::solve_regional_dispatch(&m2, 150.0, &m2.base_load).unwrap();
        assert_abs_diff_eq!(c, s1.cost + s2.cost, epsilon = 1e-9);
    }

    #[test]
    fn discrete_weights() {
        let net = six_bus(250.0);
        let f = Forecast::new(
            &net,
            vec![wind(
                1,
                Distribution::Discrete {
                    values: vec![vec![40.0], vec![70.0]],
                    probs: vec![0.5, 0.5],
                },
            )],
        )
        .unwrap();
        let o = OracleOptions::default();
        let c = expected_total_cost(&net, &f, 150.0, &o).unwrap();
        let one = |w: f64| {
            let g = Forecast::new(&net, vec![wind(1, Distribution::PointMass(vec![w]))]).unwrap();
            expected_total_cost(&net, &g, 150.0, &o).unwrap()
        };
        assert_abs_diff_eq!(c, 0.5 * one(40.0) + 0.5 * one(70.0), epsilon = 1e-9);
    }

    #[test]
    fn deterministic_two_bus_scan_matches_centralized() {
        let net = two_bus(100.0, 200.0);
        let f = Forecast::new(&net, vec![]).unwrap();
        let s = grid_search_schedule(&net, &f, &ScanGrid::default(), &OracleOptions::default()).unwrap();
        let j = solve_centralized(&net, &nalgebra::dvector![0.0], &nalgebra::dvector![100.0]).unwrap();
        assert!((s.argmin - j.q).abs() <= 0.1, "{} vs {}", s.argmin, j.q);
        assert!(s.unimodality_violation() <= 1e-9);
    }

    #[test]
    fn envelope_on_single_unit() {
        let net = two_bus(100.0, 200.0);
        let f = Forecast::new(&net, vec![]).unwrap();
        let m = build_regional_view(&net, Region::Two).unwrap();
        let r = envelope_check(&m, &f, 40.0, 0.5, &OracleOptions::default()).unwrap();
        assert!(r.error <= 1e-9, "{r:?}");
        assert!(!r.nonsmooth);
    }
}
