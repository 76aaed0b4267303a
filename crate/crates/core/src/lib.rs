//! Two-region interchange scheduling.
//!
//! Each region solves a DC economic dispatch in which the interchange `q`
//! enters as a withdrawal (region 1) or injection (region 2) at a proxy bus
//! in the neighboring region. The proxy price `lambda + s_q' mu` of each
//! region, traced over `q`, gives a supply and a demand curve; their
//! intersection is the tie-optimization schedule. Under forecast
//! uncertainty the same intersection of expected curves minimizes the
//! expected total cost, which [`oracle`] verifies by enumeration.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curves;
pub mod dispatch;
pub mod error;
pub mod forecast;
pub mod netmodel;
pub mod oracle;
pub mod par;
pub mod qp;
pub mod scheduler;

pub use curves::{build_curve, curve_value, expected_price_curve, price_curve, CurveSource, GridSpec, PriceCurve, RegionPricer};
pub use dispatch::{feasible_domain, proxy_price, solve_centralized, solve_regional_dispatch, DispatchSolution, JointSolution};
pub use error::{Error, Result};
pub use forecast::{discretize_forecast, expect, Distribution, Expectation, Forecast, ScenarioSet, StochasticInjection};
pub use netmodel::{build_ptdf, build_regional_view, parse_case, parse_matpower_case, Network, Region, RegionalModel};
pub use oracle::{envelope_check, expected_total_cost, grid_search_schedule, CostScan};
pub use par::Execution;
pub use qp::{solve_convex_qp, QpSolution, QuadraticProgram};
pub use scheduler::{
    determine_direction, intersect_schedule, scts_schedule, stack_bids, sto_schedule, to_schedule, Direction, InterfaceBid, Market, Method, Schedule,
};
