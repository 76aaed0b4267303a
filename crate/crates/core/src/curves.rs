//! Proxy-price curves: deterministic `pi_i(q, d)` and expected `E[pi_i(q, d_i)]`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dispatch::{feasible_domain, proxy_price, proxy_price_range, try_regional_dispatch};
use crate::error::{Error, Result};
use crate::forecast::{plan_region, Expectation, Forecast, Provenance, RegionPlan, Scenario, ScenarioSet};
use crate::netmodel::{build_regional_view, BusId, Network, Region, RegionalModel};
use crate::par::{self, Execution};
use crate::qp::Constraint;

/// Tolerance of the monotonicity invariant.
pub const MONOTONE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Uniform samples on the domain before refinement.
    pub points: usize,
    /// Midpoint interpolation error accepted by refinement, $/MWh.
    pub price_tol: f64,
    /// Intervals narrower than this (MW) are not split further.
    pub min_width: f64,
    /// Refinement stops once the curve holds this many samples.
    pub max_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            points: 201,
            price_tol: 1e-3,
            min_width: 1e-7,
            max_points: 20_000,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.points < 2 {
            return Err(Error::invalid("grid_points", "at least two grid points are required"));
        }
        if !(self.price_tol > 0.0 && self.min_width > 0.0) {
            return Err(Error::invalid("grid_tolerances", "price_tol and min_width must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveRole {
    Deterministic,
    Expected,
}

/// Price at one interchange level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    pub price: f64,
    /// Some realization had non-unique duals; its price is the right-hand limit.
    pub degenerate: bool,
}

/// Anything that can price the interchange of one region on an interval.
pub trait CurveSource: Sync {
    fn region(&self) -> Region;
    fn role(&self) -> CurveRole;
    fn domain(&self) -> (f64, f64);
    fn price_at(&self, q: f64) -> Result<PricePoint>;

    fn prices(&self, qs: &[f64], exec: Execution) -> Result<Vec<PricePoint>> {
        par::map(exec, qs, |&q| self.price_at(q)).into_iter().collect()
    }
}

fn role_of(plan: &RegionPlan) -> CurveRole {
    if plan.normal.is_none() && plan.scenarios.len() == 1 {
        CurveRole::Deterministic
    } else {
        CurveRole::Expected
    }
}

/// Grid points per warm-started run; fixed so results do not depend on the thread count.
const WARM_CHUNK: usize = 16;

/// Prices one region from its dispatch model and an expectation plan.
#[derive(Debug, Clone)]
pub struct RegionPricer {
    model: RegionalModel,
    plan: RegionPlan,
    domain: (f64, f64),
    role: CurveRole,
}

impl RegionPricer {
    /// Domain is the set of `q` in `within` feasible for every realization of `plan`.
    pub fn new(model: RegionalModel, plan: RegionPlan, role: CurveRole, within: (f64, f64)) -> Result<RegionPricer> {
        let mut lo = within.0;
        let mut hi = within.1;
        for adj in plan.extreme_adjustments() {
            let d = model.load_with(&adj);
            let (a, b) = feasible_domain(&model, &d, (lo, hi))?;
            lo = a;
            hi = b;
        }
        Ok(RegionPricer {
            model,
            plan,
            domain: (lo, hi),
            role,
        })
    }

    /// Pricer for one fixed load vector.
    pub fn deterministic(model: RegionalModel, d: &DVector<f64>, within: (f64, f64)) -> Result<RegionPricer> {
        if d.len() != model.buses.len() {
            return Err(Error::DimensionMismatch {
                expected: model.buses.len(),
                got: d.len(),
            });
        }
        let adjustment = model.buses.iter().enumerate().map(|(i, &b)| (b, d[i] - model.base_load[i])).collect();
        let plan = RegionPlan {
            scenarios: ScenarioSet {
                scenarios: vec![Scenario { adjustment, weight: 1.0 }],
                provenance: Provenance::ExactDiscrete,
            },
            normal: None,
        };
        RegionPricer::new(model, plan, CurveRole::Deterministic, within)
    }

    /// Pricer for a region of `network` under `forecast`, restricted to the interface interval.
    pub fn for_region(network: &Network, region: Region, forecast: &Forecast, rule: &Expectation) -> Result<RegionPricer> {
        let model = build_regional_view(network, region)?;
        let plan = plan_region(forecast, region, rule)?;
        let role = role_of(&plan);
        let iface = network.interface();
        RegionPricer::new(model, plan, role, (iface.q_min, iface.q_max))
    }

    pub fn model(&self) -> &RegionalModel {
        &self.model
    }

    pub fn plan(&self) -> &RegionPlan {
        &self.plan
    }

    fn is_single(&self) -> bool {
        self.plan.normal.is_none() && self.plan.scenarios.len() == 1
    }

    /// Price of one realization; degenerate points are replaced by their right-hand limit.
    fn realization_price(&self, q: f64, adj: &[(BusId, f64)], warm: &mut Option<Vec<Constraint>>) -> Result<PricePoint> {
        let d = self.model.load_with(adj);
        let sol = try_regional_dispatch(&self.model, q, &d, warm.as_deref())?.ok_or(Error::InfeasibleDispatch {
            region: self.model.region,
            q,
        })?;
        *warm = Some(sol.active.clone());
        if !sol.degenerate {
            return Ok(PricePoint {
                price: proxy_price(&sol, &self.model),
                degenerate: false,
            });
        }
        // One-sided limit: rightward except at the upper domain end.
        let rightward = q < self.domain.1;
        if let Some((lo, hi)) = proxy_price_range(&sol, &self.model) {
            let take_max = rightward == (self.model.region == Region::One);
            return Ok(PricePoint {
                price: if take_max { hi } else { lo },
                degenerate: true,
            });
        }
        let delta = 1e-7 * (1.0 + q.abs());
        for dir in [1.0, -1.0] {
            let dir = if rightward { dir } else { -dir };
            let near = try_regional_dispatch(&self.model, q + dir * delta, &d, None)?;
            let far = try_regional_dispatch(&self.model, q + 2.0 * dir * delta, &d, None)?;
            if let (Some(a), Some(b)) = (near, far) {
                if !a.degenerate && !b.degenerate {
                    let (pa, pb) = (proxy_price(&a, &self.model), proxy_price(&b, &self.model));
                    return Ok(PricePoint {
                        price: 2.0 * pa - pb,
                        degenerate: true,
                    });
                }
            }
        }
        Ok(PricePoint {
            price: proxy_price(&sol, &self.model),
            degenerate: true,
        })
    }

    fn price_warm(&self, q: f64, warm: &mut Option<Vec<Constraint>>) -> Result<PricePoint> {
        let (lo, hi) = self.domain;
        if !(q >= lo && q <= hi) {
            return Err(Error::OutOfDomain { q, lo, hi });
        }
        let mut degenerate = false;
        let price = self.plan.expect(|adj| {
            let p = self.realization_price(q, adj, warm)?;
            degenerate |= p.degenerate;
            Ok(p.price)
        })?;
        Ok(PricePoint { price, degenerate })
    }
}

impl CurveSource for RegionPricer {
    fn region(&self) -> Region {
        self.model.region
    }

    fn role(&self) -> CurveRole {
        self.role
    }

    fn domain(&self) -> (f64, f64) {
        self.domain
    }

    fn price_at(&self, q: f64) -> Result<PricePoint> {
        self.price_warm(q, &mut None)
    }

    fn prices(&self, qs: &[f64], exec: Execution) -> Result<Vec<PricePoint>> {
        if !self.is_single() {
            return par::map(exec, qs, |&q| self.price_at(q)).into_iter().collect();
        }
        // Consecutive grid points share most of their active set.
        par::map_chunks(exec, qs, WARM_CHUNK, |c| {
            let mut warm = None;
            c.iter().map(|&q| self.price_warm(q, &mut warm)).collect()
        })
        .into_iter()
        .collect()
    }
}

/// A price discontinuity that refinement could not resolve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub lo: f64,
    pub hi: f64,
    pub size: f64,
    /// Duals are non-unique inside the bracket.
    pub degenerate: bool,
}

/// Piecewise-linear price curve on increasing breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceCurve {
    pub role: CurveRole,
    pub region: Region,
    pub q: Vec<f64>,
    pub price: Vec<f64>,
    pub degenerate: Vec<bool>,
    pub domain: (f64, f64),
    pub jumps: Vec<Jump>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// Largest step against the required direction, $/MWh.
    pub worst_violation: f64,
    pub at: f64,
}

impl MonotonicityReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.worst_violation <= tol
    }
}

impl PriceCurve {
    /// Curve through `(q, price)` samples; `q` must be strictly increasing.
    pub fn from_samples(role: CurveRole, region: Region, q: Vec<f64>, price: Vec<f64>) -> Result<PriceCurve> {
        if q.len() != price.len() {
            return Err(Error::DimensionMismatch {
                expected: q.len(),
                got: price.len(),
            });
        }
        if q.is_empty() {
            return Err(Error::EmptyDomain { region });
        }
        if q.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid("curve_breakpoints", "breakpoints must be strictly increasing"));
        }
        let domain = (q[0], q[q.len() - 1]);
        let n = q.len();
        Ok(PriceCurve {
            role,
            region,
            q,
            price,
            degenerate: vec![false; n],
            domain,
            jumps: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn contains(&self, q: f64) -> bool {
        q >= self.domain.0 && q <= self.domain.1
    }

    pub fn value(&self, q: f64) -> Result<f64> {
        curve_value(self, q)
    }

    /// Region 1 curves must not decrease in `q`, region 2 curves must not increase.
    pub fn monotonicity(&self) -> MonotonicityReport {
        let sign = self.region.sign();
        let mut worst = MonotonicityReport {
            worst_violation: 0.0,
            at: self.domain.0,
        };
        for i in 1..self.len() {
            let drop = -sign * (self.price[i] - self.price[i - 1]);
            if drop > worst.worst_violation {
                worst = MonotonicityReport {
                    worst_violation: drop,
                    at: self.q[i],
                };
            }
        }
        worst
    }

    pub fn check_monotone(&self) -> Result<()> {
        let m = self.monotonicity();
        if !m.holds(MONOTONE_TOL) {
            return Err(Error::NumericalFailure(format!(
                "region {} curve violates monotonicity by {:.3e} at q = {}",
                self.region, m.worst_violation, m.at
            )));
        }
        Ok(())
    }

    /// Largest price change across an interval that refinement left unresolved.
    pub fn max_jump(&self) -> f64 {
        self.jumps.iter().map(|j| j.size).fold(0.0, f64::max)
    }
}

/// Piecewise-linear interpolation, exact at breakpoints.
pub fn curve_value(c: &PriceCurve, q: f64) -> Result<f64> {
    let (lo, hi) = c.domain;
    if !(q >= lo && q <= hi) {
        return Err(Error::OutOfDomain { q, lo, hi });
    }
    let i = c.q.partition_point(|&x| x < q);
    if i < c.len() && c.q[i] == q {
        return Ok(c.price[i]);
    }
    let (a, b) = (i - 1, i);
    let t = (q - c.q[a]) / (c.q[b] - c.q[a]);
    Ok(c.price[a] + t * (c.price[b] - c.price[a]))
}

/// Samples `source` on a uniform grid over its domain, then bisects every
/// interval whose midpoint deviates from linear interpolation by more than
/// `price_tol`.
pub fn build_curve(source: &dyn CurveSource, grid: &GridSpec, exec: Execution) -> Result<PriceCurve> {
    grid.validate()?;
    let (lo, hi) = source.domain();
    if !(lo <= hi) {
        return Err(Error::EmptyDomain { region: source.region() });
    }
    let mut q: Vec<f64> = if hi - lo <= grid.min_width {
        vec![lo]
    } else {
        let n = grid.points - 1;
        (0..=n).map(|i| if i == n { hi } else { lo + (hi - lo) * i as f64 / n as f64 }).collect()
    };
    let mut pts = source.prices(&q, exec)?;
    // Intervals (by left index) still to be tested.
    let mut open: Vec<usize> = (0..q.len().saturating_sub(1)).collect();
    let mut jumps = Vec::new();
    while !open.is_empty() && q.len() < grid.max_points {
        let mids: Vec<f64> = open.iter().map(|&i| 0.5 * (q[i] + q[i + 1])).collect();
        let mid_pts = source.prices(&mids, exec)?;
        let mut split = Vec::new();
        for (k, &i) in open.iter().enumerate() {
            let lerp = 0.5 * (pts[i].price + pts[i + 1].price);
            if (mid_pts[k].price - lerp).abs() > grid.price_tol {
                split.push(k);
            }
        }
        // Merge accepted midpoints, then collect children of split intervals.
        let mut nq = Vec::with_capacity(q.len() + split.len());
        let mut np = Vec::with_capacity(q.len() + split.len());
        let mut next_open = Vec::new();
        let mut s = split.iter().peekable();
        let mut opened = open.iter().enumerate().peekable();
        for i in 0..q.len() {
            nq.push(q[i]);
            np.push(pts[i]);
            if let Some(&(k, &oi)) = opened.peek() {
                if oi == i {
                    opened.next();
                    if s.peek() == Some(&&k) {
                        s.next();
                        let width = 0.5 * (q[i + 1] - q[i]);
                        nq.push(mids[k]);
                        np.push(mid_pts[k]);
                        if width > grid.min_width {
                            next_open.push(nq.len() - 2);
                            next_open.push(nq.len() - 1);
                        }
                    }
                }
            }
        }
        q = nq;
        pts = np;
        open = next_open;
    }
    let price: Vec<f64> = pts.iter().map(|p| p.price).collect();
    for i in 1..q.len() {
        let size = (price[i] - price[i - 1]).abs();
        if q[i] - q[i - 1] <= 2.0 * grid.min_width && size > grid.price_tol {
            let probe = source.price_at(0.5 * (q[i - 1] + q[i]))?;
            jumps.push(Jump {
                lo: q[i - 1],
                hi: q[i],
                size,
                degenerate: probe.degenerate || pts[i - 1].degenerate || pts[i].degenerate,
            });
        }
    }
    let domain = (q[0], q[q.len() - 1]);
    Ok(PriceCurve {
        role: source.role(),
        region: source.region(),
        degenerate: pts.iter().map(|p| p.degenerate).collect(),
        q,
        price,
        domain,
        jumps,
    })
}

/// Deterministic curve `pi(q, d)` on the region's feasible domain.
pub fn price_curve(model: &RegionalModel, d: &DVector<f64>, grid: &GridSpec) -> Result<PriceCurve> {
    let src = RegionPricer::deterministic(model.clone(), d, (f64::NEG_INFINITY, f64::INFINITY))?;
    build_curve(&src, grid, Execution::default())
}

/// Expected curve `E[pi(q, d)]` over the region's forecast on the common feasible domain.
pub fn expected_price_curve(model: &RegionalModel, forecast: &Forecast, rule: &Expectation, grid: &GridSpec) -> Result<PriceCurve> {
    let plan = plan_region(forecast, model.region, rule)?;
    let role = role_of(&plan);
    let src = RegionPricer::new(model.clone(), plan, role, (f64::NEG_INFINITY, f64::INFINITY))?;
    build_curve(&src, grid, Execution::default())
}
