//! Interchange schedules: TO and STO (curve intersection) and SCTS (bid clearing).
//!
//! All three reduce to finding the leftmost root of a nonincreasing function
//! on a one-dimensional axis. Schedules in direction 2->1 are computed on the
//! reflected axis `x = -q`, so in every case the function is
//! `h(x) = importer price - exporter price - bid price`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::curves::{build_curve, CurveSource, GridSpec, PriceCurve, RegionPricer};
use crate::error::{Error, Result};
use crate::forecast::{Expectation, Forecast, PiecewiseOptions};
use crate::netmodel::{InterfaceLimit, Network, Region};
use crate::par::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "1->2")]
    OneToTwo,
    #[serde(rename = "2->1")]
    TwoToOne,
    #[serde(rename = "none")]
    None,
}

impl Direction {
    /// Sign of `q` for flows in this direction (`+1` for none).
    pub fn axis(self) -> f64 {
        match self {
            Direction::TwoToOne => -1.0,
            _ => 1.0,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::OneToTwo => "1->2",
            Direction::TwoToOne => "2->1",
            Direction::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceBid {
    pub direction: Direction,
    /// MW.
    pub quantity: f64,
    /// Minimum acceptable expected price difference, $/MWh.
    pub price: f64,
}

impl InterfaceBid {
    pub fn validate(&self) -> Result<()> {
        if self.direction == Direction::None {
            return Err(Error::invalid("bid_direction", "bid direction must be 1->2 or 2->1"));
        }
        if !(self.quantity > 0.0 && self.quantity.is_finite()) {
            return Err(Error::invalid("bid_quantity", format!("quantity {} must be positive", self.quantity)));
        }
        if !self.price.is_finite() {
            return Err(Error::invalid("bid_price", "price must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BidStep {
    pub start: f64,
    pub end: f64,
    pub price: f64,
}

/// Merit-order stack of the bids in one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidCurve {
    pub direction: Direction,
    /// Equal-price bids share one step.
    pub steps: Vec<BidStep>,
    /// Indices into the input, in merit order.
    pub order: Vec<usize>,
    pub bids: Vec<InterfaceBid>,
    /// Indices of input bids in the other direction.
    pub ignored: Vec<usize>,
}

impl BidCurve {
    pub fn total(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.end)
    }

    /// Step price at cumulative quantity `x`; `+inf` beyond the stack.
    pub fn price_at(&self, x: f64) -> f64 {
        self.steps.iter().find(|s| x >= s.start && x < s.end).map_or(f64::INFINITY, |s| s.price)
    }
}

pub fn stack_bids(bids: &[InterfaceBid], dir: Direction) -> BidCurve {
    let mut order: Vec<usize> = (0..bids.len()).filter(|&i| bids[i].direction == dir).collect();
    let ignored = (0..bids.len()).filter(|&i| bids[i].direction != dir).collect();
    order.sort_by(|&a, &b| bids[a].price.total_cmp(&bids[b].price));
    let mut steps: Vec<BidStep> = Vec::new();
    let mut at = 0.0;
    for &i in &order {
        let b = bids[i];
        match steps.last_mut() {
            Some(s) if s.price == b.price => s.end += b.quantity,
            _ => steps.push(BidStep {
                start: at,
                end: at + b.quantity,
                price: b.price,
            }),
        }
        at += b.quantity;
    }
    BidCurve {
        direction: dir,
        steps,
        order,
        bids: bids.to_vec(),
        ignored,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "TO")]
    To,
    #[serde(rename = "STO")]
    Sto,
    #[serde(rename = "SCTS")]
    Scts,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::To => "TO",
            Method::Sto => "STO",
            Method::Scts => "SCTS",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptedBid {
    /// Index into the submitted bid list.
    pub index: usize,
    pub bid: InterfaceBid,
    pub accepted: f64,
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Samples in the region 1 and region 2 curves.
    pub curve_points: [usize; 2],
    pub bisection_steps: usize,
    /// Width of the final root bracket, MW.
    pub bracket: f64,
    /// The gap kept one sign up to a curve-domain end that is not the interface limit.
    pub no_crossing: bool,
    pub ignored_bids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub method: Method,
    pub direction: Direction,
    /// MW, positive from region 1 to region 2.
    pub q: f64,
    /// Expected proxy prices of region 1 and region 2 at `q`.
    pub prices: [f64; 2],
    /// Importer minus exporter expected price at `q` (region 2 minus region 1 when direction is none).
    pub gap: f64,
    pub binding: bool,
    pub accepted_bids: Vec<AcceptedBid>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntersectOptions {
    /// Price differences at most this large count as zero, $/MWh.
    pub gap_tol: f64,
    /// Root bracket width at which source bisection stops, relative to `1 + |q|`.
    pub q_tol: f64,
}

impl Default for IntersectOptions {
    fn default() -> Self {
        IntersectOptions { gap_tol: 1e-3, q_tol: 1e-10 }
    }
}

/// Root predicate threshold: `h > ROOT_EPS` means the gap is still open.
const ROOT_EPS: f64 = 1e-9;

pub fn determine_direction(c1: &PriceCurve, c2: &PriceCurve, gap_tol: f64) -> Result<Direction> {
    let p1 = c1.value(0.0)?;
    let p2 = c2.value(0.0)?;
    Ok(direction_from_gap(p2 - p1, gap_tol))
}

fn direction_from_gap(gap: f64, gap_tol: f64) -> Direction {
    if gap.abs() <= gap_tol {
        Direction::None
    } else if gap > 0.0 {
        Direction::OneToTwo
    } else {
        Direction::TwoToOne
    }
}

/// Evaluates prices from exact sources when given, else from sampled curves.
struct Pricing<'a> {
    curves: [&'a PriceCurve; 2],
    sources: Option<[&'a dyn CurveSource; 2]>,
}

impl Pricing<'_> {
    fn prices(&self, q: f64) -> Result<[f64; 2]> {
        match self.sources {
            Some([s1, s2]) => Ok([s1.price_at(q)?.price, s2.price_at(q)?.price]),
            None => Ok([self.curves[0].value(q)?, self.curves[1].value(q)?]),
        }
    }

    /// Breakpoints of both curves on the axis `x = s q`, inside `(a, b)`.
    fn breakpoints(&self, s: f64, a: f64, b: f64) -> Vec<f64> {
        let mut xs: Vec<f64> = self.curves[0]
            .q
            .iter()
            .chain(&self.curves[1].q)
            .map(|&q| s * q)
            .filter(|&x| x > a && x < b)
            .collect();
        xs.push(a);
        xs.push(b);
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs
    }
}

struct Root {
    x: f64,
    steps: usize,
    bracket: f64,
}

/// Leftmost `x` in `[a, b]` with `h(x) <= offset` for nonincreasing `h`,
/// interpolated linearly inside the final bracket. Returns `b` if the gap
/// never closes.
fn leftmost_root(pricing: &Pricing, s: f64, offset: f64, a: f64, b: f64, opts: &IntersectOptions) -> Result<Root> {
    let h = |x: f64| -> Result<f64> {
        let [p1, p2] = pricing.prices(s * x)?;
        Ok(s * (p2 - p1) - offset)
    };
    let ha = h(a)?;
    if ha <= ROOT_EPS {
        return Ok(Root {
            x: a,
            steps: 0,
            bracket: 0.0,
        });
    }
    let hb = h(b)?;
    if hb > ROOT_EPS {
        return Ok(Root {
            x: b,
            steps: 0,
            bracket: 0.0,
        });
    }
    let (mut l, mut r, mut hl, mut hr) = (a, b, ha, hb);
    let mut steps = 0;
    if pricing.sources.is_some() {
        let tol = opts.q_tol * (1.0 + a.abs().max(b.abs()));
        while r - l > tol {
            let m = 0.5 * (l + r);
            if m <= l || m >= r {
                break;
            }
            let hm = h(m)?;
            steps += 1;
            if hm > ROOT_EPS {
                (l, hl) = (m, hm);
            } else {
                (r, hr) = (m, hm);
            }
        }
    } else {
        // Binary search over breakpoints: h is affine between them.
        let xs = pricing.breakpoints(s, a, b);
        let (mut i, mut j) = (0, xs.len() - 1);
        while j - i > 1 {
            let k = (i + j) / 2;
            let hk = h(xs[k])?;
            steps += 1;
            if hk > ROOT_EPS {
                (i, hl) = (k, hk);
            } else {
                (j, hr) = (k, hk);
            }
        }
        (l, r) = (xs[i], xs[j]);
    }
    let x = if hr >= 0.0 { r } else { (l + hl / (hl - hr) * (r - l)).clamp(l, r) };
    Ok(Root { x, steps, bracket: r - l })
}

/// Feasible interval on the direction axis: curve overlap intersected with the interface.
fn axis_interval(c1: &PriceCurve, c2: &PriceCurve, limits: &InterfaceLimit, s: f64) -> Result<((f64, f64), f64)> {
    let lo = c1.domain.0.max(c2.domain.0);
    let hi = c1.domain.1.min(c2.domain.1);
    if !(lo <= hi) {
        return Err(Error::DomainMismatch(format!(
            "curve domains [{}, {}] and [{}, {}] do not overlap",
            c1.domain.0, c1.domain.1, c2.domain.0, c2.domain.1
        )));
    }
    let (qlo, qhi) = (lo.max(limits.q_min), hi.min(limits.q_max));
    if !(qlo <= qhi) {
        return Err(Error::DomainMismatch(format!(
            "curve overlap [{lo}, {hi}] misses the interface interval [{}, {}]",
            limits.q_min, limits.q_max
        )));
    }
    let iface_end = if s > 0.0 { limits.q_max } else { -limits.q_min };
    let (xlo, xhi) = if s > 0.0 { (qlo, qhi) } else { (-qhi, -qlo) };
    Ok(((xlo, xhi), iface_end))
}

fn direction_of(pricing: &Pricing, c1: &PriceCurve, c2: &PriceCurve, limits: &InterfaceLimit, gap_tol: f64) -> Result<Direction> {
    let (lo, hi) = axis_interval(c1, c2, limits, 1.0)?.0;
    if lo > 0.0 {
        return Ok(Direction::OneToTwo);
    }
    if hi < 0.0 {
        return Ok(Direction::TwoToOne);
    }
    let [p1, p2] = pricing.prices(0.0)?;
    Ok(direction_from_gap(p2 - p1, gap_tol))
}

fn assemble(method: Method, pricing: &Pricing, direction: Direction, x: f64, (x_hi, iface_end): (f64, f64), root: &Root) -> Result<Schedule> {
    let s = direction.axis();
    let q = s * x;
    let [p1, p2] = pricing.prices(q)?;
    let at_end = x >= x_hi - 1e-12 * (1.0 + x_hi.abs()) && direction != Direction::None;
    let binding = at_end && iface_end <= x_hi;
    Ok(Schedule {
        method,
        direction,
        q,
        prices: [p1, p2],
        gap: s * (p2 - p1),
        binding,
        accepted_bids: Vec::new(),
        diagnostics: Diagnostics {
            curve_points: [pricing.curves[0].len(), pricing.curves[1].len()],
            bisection_steps: root.steps,
            bracket: root.bracket,
            no_crossing: at_end && !binding,
            ignored_bids: Vec::new(),
        },
    })
}

/// Intersection of the region 1 (supply for 1->2) and region 2 curves,
/// clipped to the interface. `sources`, when given, are bisected directly
/// instead of the sampled curves.
pub fn intersect_schedule(
    method: Method,
    c1: &PriceCurve,
    c2: &PriceCurve,
    limits: &InterfaceLimit,
    opts: &IntersectOptions,
    sources: Option<[&dyn CurveSource; 2]>,
) -> Result<Schedule> {
    if c1.region != Region::One || c2.region != Region::Two {
        return Err(Error::DomainMismatch("curves must be given as (region 1, region 2)".into()));
    }
    let pricing = Pricing { curves: [c1, c2], sources };
    let direction = direction_of(&pricing, c1, c2, limits, opts.gap_tol)?;
    let s = direction.axis();
    let ((xlo, xhi), iface_end) = axis_interval(c1, c2, limits, s)?;
    if direction == Direction::None {
        let root = Root {
            x: 0.0,
            steps: 0,
            bracket: 0.0,
        };
        return assemble(method, &pricing, direction, 0.0, (xhi, iface_end), &root);
    }
    let a = xlo.max(0.0);
    let root = leftmost_root(&pricing, s, 0.0, a, xhi, opts)?;
    assemble(method, &pricing, direction, root.x, (xhi, iface_end), &root)
}

/// Clears interface bids against the expected curves: the largest
/// interchange whose expected price gap still covers the marginal bid.
pub fn scts_schedule(
    c1: &PriceCurve,
    c2: &PriceCurve,
    bids: &[InterfaceBid],
    limits: &InterfaceLimit,
    opts: &IntersectOptions,
    sources: Option<[&dyn CurveSource; 2]>,
) -> Result<Schedule> {
    let pricing = Pricing { curves: [c1, c2], sources };
    let direction = direction_of(&pricing, c1, c2, limits, opts.gap_tol)?;
    let stack = stack_bids(bids, direction);
    let s = direction.axis();
    let ((xlo, xhi), iface_end) = axis_interval(c1, c2, limits, s)?;
    let a = xlo.max(0.0);
    let mut x = a;
    let mut root = Root {
        x: a,
        steps: 0,
        bracket: 0.0,
    };
    let unbid = stack.steps.is_empty();
    if direction != Direction::None && unbid {
        // No participant in this direction: clear where the expected gap closes.
        root = leftmost_root(&pricing, s, 0.0, a, xhi, opts)?;
        x = root.x;
    } else if direction != Direction::None {
        for step in &stack.steps {
            let lo = step.start.max(a);
            let hi = step.end.min(xhi);
            if lo >= xhi {
                break;
            }
            if lo >= hi {
                continue;
            }
            root = leftmost_root(&pricing, s, step.price, lo, hi, opts)?;
            x = root.x;
            if root.x < hi {
                break;
            }
        }
    }
    let mut sched = assemble(Method::Scts, &pricing, direction, x, (xhi, iface_end), &root)?;
    // Binding means the interface stopped the clearing, not the bid stack.
    if !unbid {
        sched.binding &= x < stack.total();
        sched.diagnostics.no_crossing &= x < stack.total();
    }
    let mut at = 0.0;
    for &i in &stack.order {
        let b = bids[i];
        let accepted = (x - at).clamp(0.0, b.quantity);
        if accepted > 0.0 {
            sched.accepted_bids.push(AcceptedBid {
                index: i,
                bid: b,
                accepted,
                partial: accepted < b.quantity,
            });
        }
        at += b.quantity;
    }
    sched.diagnostics.ignored_bids = stack.ignored;
    Ok(sched)
}

/// `int_0^q (E[pi_2] - E[pi_1])`, the expected surplus of scheduling `q`.
pub fn expected_surplus(c1: &PriceCurve, c2: &PriceCurve, q: f64) -> Result<f64> {
    let (a, b) = if q >= 0.0 { (0.0, q) } else { (q, 0.0) };
    let mut xs: Vec<f64> = c1.q.iter().chain(&c2.q).copied().filter(|&x| x > a && x < b).collect();
    xs.push(a);
    xs.push(b);
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut total = 0.0;
    for w in xs.windows(2) {
        let g0 = c2.value(w[0])? - c1.value(w[0])?;
        let g1 = c2.value(w[1])? - c1.value(w[1])?;
        total += 0.5 * (g0 + g1) * (w[1] - w[0]);
    }
    Ok(if q >= 0.0 { total } else { -total })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleOptions {
    pub grid: GridSpec,
    pub expectation: Expectation,
    pub intersect: IntersectOptions,
    /// Bisect the pricing sources near the root rather than the sampled curves.
    pub refine_root: bool,
    pub execution: Execution,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        ScheduleOptions {
            grid: GridSpec::default(),
            expectation: Expectation::PiecewiseNormal(PiecewiseOptions::default()),
            intersect: IntersectOptions::default(),
            refine_root: true,
            execution: Execution::default(),
        }
    }
}

/// Both regions' pricing sources and sampled curves for one forecast.
#[derive(Debug, Clone)]
pub struct Market {
    pub pricers: [RegionPricer; 2],
    pub curves: [PriceCurve; 2],
    pub interface: InterfaceLimit,
    pub options: ScheduleOptions,
}

impl Market {
    pub fn build(network: &Network, forecast: &Forecast, options: &ScheduleOptions) -> Result<Market> {
        let p1 = RegionPricer::for_region(network, Region::One, forecast, &options.expectation)?;
        let p2 = RegionPricer::for_region(network, Region::Two, forecast, &options.expectation)?;
        let c1 = build_curve(&p1, &options.grid, options.execution)?;
        let c2 = build_curve(&p2, &options.grid, options.execution)?;
        Ok(Market {
            pricers: [p1, p2],
            curves: [c1, c2],
            interface: network.interface(),
            options: *options,
        })
    }

    fn sources(&self) -> Option<[&dyn CurveSource; 2]> {
        self.options
            .refine_root
            .then(|| [&self.pricers[0] as &dyn CurveSource, &self.pricers[1] as &dyn CurveSource])
    }

    pub fn intersect(&self, method: Method) -> Result<Schedule> {
        intersect_schedule(
            method,
            &self.curves[0],
            &self.curves[1],
            &self.interface,
            &self.options.intersect,
            self.sources(),
        )
    }

    pub fn scts(&self, bids: &[InterfaceBid]) -> Result<Schedule> {
        scts_schedule(
            &self.curves[0],
            &self.curves[1],
            bids,
            &self.interface,
            &self.options.intersect,
            self.sources(),
        )
    }

    /// Expected prices of both regions at `q`.
    pub fn prices_at(&self, q: f64) -> Result<[f64; 2]> {
        Ok([self.pricers[0].price_at(q)?.price, self.pricers[1].price_at(q)?.price])
    }
}

/// Tie optimization: intersection of the curves under the certainty-equivalent forecast.
pub fn to_schedule(network: &Network, forecast: &Forecast, options: &ScheduleOptions) -> Result<(Schedule, Market)> {
    let market = Market::build(network, &forecast.mean(), options)?;
    Ok((market.intersect(Method::To)?, market))
}

/// Stochastic tie optimization: intersection of the expected curves.
pub fn sto_schedule(network: &Network, forecast: &Forecast, options: &ScheduleOptions) -> Result<(Schedule, Market)> {
    let market = Market::build(network, forecast, options)?;
    Ok((market.intersect(Method::Sto)?, market))
}
