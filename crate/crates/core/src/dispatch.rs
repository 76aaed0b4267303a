//! Regional and centralized economic dispatch.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::netmodel::{build_regional_view, Network, Region, RegionalModel};
use crate::qp::{dual_extremes, solve_with, Constraint, DualWeights, QpStatus, QuadraticProgram, SolverOptions};

/// Scaled KKT residual above which an "optimal" answer is rejected.
const RESIDUAL_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchSolution {
    pub region: Region,
    pub q: f64,
    pub load: DVector<f64>,
    pub dispatch: DVector<f64>,
    /// Cost of serving one more MW of load.
    pub lambda: f64,
    /// Signed line duals (positive when the forward limit binds), one per monitored line.
    pub mu: DVector<f64>,
    pub flows: DVector<f64>,
    pub cost: f64,
    pub degenerate: bool,
    pub active: Vec<Constraint>,
}

fn regional_qp(model: &RegionalModel, q: f64, d: &DVector<f64>) -> QuadraticProgram {
    let ng = model.generators.len();
    let nl = model.monitored.len();
    let hess = DMatrix::from_diagonal(&DVector::from_iterator(ng, model.generators.iter().map(|g| 2.0 * g.h)));
    let lin = DVector::from_iterator(ng, model.generators.iter().map(|g| g.b));
    let sq = model.sign() * q;
    let a_eq = DMatrix::from_element(1, ng, -1.0);
    let c_eq = DVector::from_element(1, -(d.sum() + sq));
    let base = -(&model.shift * d) + &model.s_q * sq;
    let mut a_in = DMatrix::zeros(2 * nl, ng);
    let mut c_in = DVector::zeros(2 * nl);
    for l in 0..nl {
        for (k, &pos) in model.gen_bus.iter().enumerate() {
            a_in[(2 * l, k)] = model.shift[(l, pos)];
            a_in[(2 * l + 1, k)] = -model.shift[(l, pos)];
        }
        c_in[2 * l] = model.limits[l] - base[l];
        c_in[2 * l + 1] = model.limits[l] + base[l];
    }
    let lower = DVector::from_iterator(ng, model.generators.iter().map(|g| g.g_min));
    let upper = DVector::from_iterator(ng, model.generators.iter().map(|g| g.g_max));
    QuadraticProgram::new(hess, lin)
        .with_equalities(a_eq, c_eq)
        .with_inequalities(a_in, c_in)
        .with_bounds(lower, upper)
}

fn check_load(model: &RegionalModel, d: &DVector<f64>) -> Result<()> {
    if d.len() != model.buses.len() {
        return Err(Error::DimensionMismatch {
            expected: model.buses.len(),
            got: d.len(),
        });
    }
    Ok(())
}

/// `Ok(None)` when no dispatch is feasible at `q`.
pub fn try_regional_dispatch(model: &RegionalModel, q: f64, d: &DVector<f64>, warm: Option<&[Constraint]>) -> Result<Option<DispatchSolution>> {
    check_load(model, d)?;
    let qp = regional_qp(model, q, d);
    let opts = SolverOptions {
        warm_start: warm.map(<[Constraint]>::to_vec),
        ..Default::default()
    };
    let sol = solve_with(&qp, &opts)?;
    match sol.status {
        QpStatus::Infeasible => return Ok(None),
        QpStatus::Unbounded => return Err(Error::NumericalFailure("regional dispatch reported unbounded".into())),
        QpStatus::Optimal => {}
    }
    let scale = 1.0 + d.amax() + q.abs();
    let dual_scale = 1.0
        + [&sol.eq_duals, &sol.in_duals, &sol.lower_duals, &sol.upper_duals]
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.amax()));
    // Complementarity is a dual times a slack; near the domain edge duals grow.
    let r = &sol.residuals;
    if r.stationarity.max(r.feasibility) > RESIDUAL_LIMIT * scale || r.complementarity > RESIDUAL_LIMIT * scale * dual_scale {
        return Err(Error::NumericalFailure(format!(
            "region {} at q = {q}: KKT residuals {:?}",
            model.region, sol.residuals
        )));
    }
    let nl = model.monitored.len();
    let mu = DVector::from_fn(nl, |l, _| sol.in_duals[2 * l] - sol.in_duals[2 * l + 1]);
    let flows = model.flows(&sol.x, d, q);
    Ok(Some(DispatchSolution {
        region: model.region,
        q,
        load: d.clone(),
        lambda: sol.eq_duals[0],
        mu,
        flows,
        cost: model.cost(&sol.x),
        dispatch: sol.x,
        degenerate: sol.degenerate,
        active: sol.active,
    }))
}

pub fn solve_regional_dispatch(model: &RegionalModel, q: f64, d: &DVector<f64>) -> Result<DispatchSolution> {
    solve_regional_dispatch_warm(model, q, d, None)
}

pub fn solve_regional_dispatch_warm(model: &RegionalModel, q: f64, d: &DVector<f64>, warm: Option<&[Constraint]>) -> Result<DispatchSolution> {
    try_regional_dispatch(model, q, d, warm)?.ok_or(Error::InfeasibleDispatch { region: model.region, q })
}

/// Incremental cost to the region of one more MW of interchange:
/// `lambda + s_q' mu`. Region 1's optimal cost rises at this rate in q,
/// region 2's falls at it.
pub fn proxy_price(sol: &DispatchSolution, model: &RegionalModel) -> f64 {
    sol.lambda + model.s_q.dot(&sol.mu)
}

/// Tightness test for the dual face. Active rows are solved to rounding, so
/// anything looser admits rows that are merely close and biases prices near kinks.
const TIGHT_TOL: f64 = 1e-11;

/// `(min, max)` of the proxy price over all optimal duals of `sol`.
/// Region 1's right-hand price is the max, region 2's the min.
/// `None` if the tight set is too large to enumerate.
pub fn proxy_price_range(sol: &DispatchSolution, model: &RegionalModel) -> Option<(f64, f64)> {
    let qp = regional_qp(model, sol.q, &sol.load);
    let mut w = DualWeights::zeros(&qp);
    w.eq[0] = 1.0;
    for l in 0..model.monitored.len() {
        w.ineq[2 * l] = model.s_q[l];
        w.ineq[2 * l + 1] = -model.s_q[l];
    }
    dual_extremes(&qp, &sol.dispatch, &w, TIGHT_TOL)
}

/// Interchange interval on which region dispatch is feasible for load `d`,
/// intersected with `within`.
pub fn feasible_domain(model: &RegionalModel, d: &DVector<f64>, within: (f64, f64)) -> Result<(f64, f64)> {
    check_load(model, d)?;
    let cap = |v: f64| v.clamp(-1e9, 1e9);
    let gmin: f64 = model.generators.iter().map(|g| cap(g.g_min)).sum();
    let gmax: f64 = model.generators.iter().map(|g| cap(g.g_max)).sum();
    let total = d.sum();
    let (cap_lo, cap_hi) = match model.region {
        Region::One => (gmin - total, gmax - total),
        Region::Two => (total - gmax, total - gmin),
    };
    let lo = within.0.max(cap_lo);
    let hi = within.1.min(cap_hi);
    if !(lo <= hi) {
        return Err(Error::EmptyDomain { region: model.region });
    }
    let feasible = |q: f64| -> Result<bool> { Ok(try_regional_dispatch(model, q, d, None)?.is_some()) };

    let mut seed = None;
    for k in 0..=64 {
        // Midpoint first, then a uniform scan.
        let q = if k == 0 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * (k - 1) as f64 / 63.0
        };
        if feasible(q)? {
            seed = Some(q);
            break;
        }
    }
    let Some(seed) = seed else {
        return Err(Error::EmptyDomain { region: model.region });
    };
    let tol = |q: f64| 1e-9 * (1.0 + q.abs());
    let edge = |mut good: f64, mut bad: f64| -> Result<f64> {
        while (good - bad).abs() > tol(good) {
            let mid = 0.5 * (good + bad);
            if feasible(mid)? {
                good = mid;
            } else {
                bad = mid;
            }
        }
        Ok(good)
    };
    let q_lo = if feasible(lo)? { lo } else { edge(seed, lo)? };
    let q_hi = if feasible(hi)? { hi } else { edge(seed, hi)? };
    Ok((q_lo, q_hi))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointSolution {
    pub q: f64,
    /// Dual of `q <= Q_max`.
    pub mu_q: f64,
    /// Dual of `q >= Q_min`.
    pub mu_q_min: f64,
    pub dispatch: [Vec<f64>; 2],
    pub costs: [f64; 2],
    pub total_cost: f64,
    pub degenerate: bool,
}

/// Joint optimum over `(q, g1, g2)`. `q` is eliminated through region 1's
/// balance so the Hessian stays positive definite.
pub fn solve_centralized(network: &Network, d1: &DVector<f64>, d2: &DVector<f64>) -> Result<JointSolution> {
    let m1 = build_regional_view(network, Region::One)?;
    let m2 = build_regional_view(network, Region::Two)?;
    check_load(&m1, d1)?;
    check_load(&m2, d2)?;
    let (n1, n2) = (m1.generators.len(), m2.generators.len());
    let n = n1 + n2;
    let gens: Vec<_> = m1.generators.iter().chain(&m2.generators).collect();
    let hess = DMatrix::from_diagonal(&DVector::from_iterator(n, gens.iter().map(|g| 2.0 * g.h)));
    let lin = DVector::from_iterator(n, gens.iter().map(|g| g.b));
    let (dt1, dt2) = (d1.sum(), d2.sum());

    let a_eq = DMatrix::from_element(1, n, -1.0);
    let c_eq = DVector::from_element(1, -(dt1 + dt2));

    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let base1 = -(&m1.shift * d1) - &m1.s_q * dt1;
    for l in 0..m1.monitored.len() {
        let mut a = DVector::zeros(n);
        for (k, &pos) in m1.gen_bus.iter().enumerate() {
            a[k] = m1.shift[(l, pos)] + m1.s_q[l];
        }
        rows.push((a.clone(), m1.limits[l] - base1[l]));
        rows.push((-a, m1.limits[l] + base1[l]));
    }
    let base2 = -(&m2.shift * d2) + &m2.s_q * dt1;
    for l in 0..m2.monitored.len() {
        let mut a = DVector::zeros(n);
        for k in 0..n1 {
            a[k] = -m2.s_q[l];
        }
        for (k, &pos) in m2.gen_bus.iter().enumerate() {
            a[n1 + k] = m2.shift[(l, pos)];
        }
        rows.push((a.clone(), m2.limits[l] - base2[l]));
        rows.push((-a, m2.limits[l] + base2[l]));
    }
    let iface = network.interface();
    let mut q_rows = [None, None];
    let ones1 = DVector::from_fn(n, |k, _| if k < n1 { 1.0 } else { 0.0 });
    if iface.q_max.is_finite() {
        q_rows[0] = Some(rows.len());
        rows.push((ones1.clone(), iface.q_max + dt1));
    }
    if iface.q_min.is_finite() {
        q_rows[1] = Some(rows.len());
        rows.push((-ones1, -(iface.q_min + dt1)));
    }
    let a_in = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].0[j]);
    let c_in = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let lower = DVector::from_iterator(n, gens.iter().map(|g| g.g_min));
    let upper = DVector::from_iterator(n, gens.iter().map(|g| g.g_max));
    let qp = QuadraticProgram::new(hess, lin)
        .with_equalities(a_eq, c_eq)
        .with_inequalities(a_in, c_in)
        .with_bounds(lower, upper);
    let sol = solve_with(&qp, &SolverOptions::default())?;
    if sol.status != QpStatus::Optimal {
        return Err(Error::InfeasibleDispatch {
            region: Region::One,
            q: f64::NAN,
        });
    }
    let g1 = sol.x.rows(0, n1).into_owned();
    let g2 = sol.x.rows(n1, n2).into_owned();
    let q = g1.sum() - dt1;
    let (c1, c2) = (m1.cost(&g1), m2.cost(&g2));
    let dual = |r: Option<usize>| r.map_or(0.0, |i| sol.in_duals[i]);
    Ok(JointSolution {
        q,
        mu_q: dual(q_rows[0]),
        mu_q_min: dual(q_rows[1]),
        dispatch: [g1.iter().copied().collect(), g2.iter().copied().collect()],
        costs: [c1, c2],
        total_cost: c1 + c2,
        degenerate: sol.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::fixtures::*;
    use crate::netmodel::{NetworkParts, RegionalModel};
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    fn single_bus_region() -> RegionalModel {
        let n = Network::new(NetworkParts {
            buses: vec![1, 2],
            lines: vec![line(1, 2, 1e4)],
            generators: vec![gen(1, 10.0, 120.0), gen(2, 10.0, 1000.0)],
            loads: [(1, 100.0)].into_iter().collect(),
            region_of: [(1, Region::One), (2, Region::Two)].into_iter().collect(),
            declared_ties: None,
            proxy: [(Region::One, 2), (Region::Two, 1)].into_iter().collect(),
            q_max: 1000.0,
            q_min: None,
        })
        .unwrap();
        build_regional_view(&n, Region::One).unwrap()
    }

    #[test]
    fn single_bus_marginal_cost() {
        let m = single_bus_region();
        let s = solve_regional_dispatch(&m, 0.0, &dvector![100.0]).unwrap();
        assert_abs_diff_eq!(s.dispatch[0], 100.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.lambda, 12.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.cost, 1100.0, epsilon = 1e-7);
        assert_abs_diff_eq!(proxy_price(&s, &m), 12.0, epsilon = 1e-9);
    }

    #[test]
    fn export_beyond_capacity_is_infeasible() {
        let m = single_bus_region();
        assert_eq!(
            solve_regional_dispatch(&m, 50.0, &dvector![100.0]),
            Err(Error::InfeasibleDispatch {
                region: Region::One,
                q: 50.0
            })
        );
    }

    #[test]
    fn wrong_load_length() {
        let m = single_bus_region();
        assert!(matches!(
            solve_regional_dispatch(&m, 0.0, &dvector![1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn domain_ends_at_capacity() {
        let m = single_bus_region();
        let (lo, hi) = feasible_domain(&m, &dvector![100.0], (-1000.0, 1000.0)).unwrap();
        assert_abs_diff_eq!(lo, -100.0, epsilon = 1e-9);
        assert_abs_diff_eq!(hi, 20.0, epsilon = 1e-9);
    }

    #[test]
    fn binding_line_price() {
        let m = single_bus_region();
        let s = DispatchSolution {
            region: Region::One,
            q: 0.0,
            load: dvector![100.0],
            dispatch: dvector![100.0],
            lambda: 12.0,
            mu: dvector![5.0],
            flows: dvector![0.0],
            cost: 0.0,
            degenerate: false,
            active: vec![],
        };
        let mut m = m;
        m.s_q = dvector![0.5];
        assert_abs_diff_eq!(proxy_price(&s, &m), 14.5, epsilon = 1e-12);
    }

    #[test]
    fn two_bus_centralized() {
        // Cheap region 1 serves all 100 MW of region 2's load.
        let n = two_bus(100.0, 200.0);
        let j = solve_centralized(&n, &dvector![0.0], &dvector![100.0]).unwrap();
        assert_abs_diff_eq!(j.q, 100.0, epsilon = 1e-9);
        assert_abs_diff_eq!(j.mu_q, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn mirror_regions_do_not_trade() {
        let mut p = two_bus(50.0, 200.0).parts();
        p.generators[1].b = 10.0;
        p.loads.insert(1, 50.0);
        let n = Network::new(p).unwrap();
        let j = solve_centralized(&n, &dvector![50.0], &dvector![50.0]).unwrap();
        assert_abs_diff_eq!(j.q, 0.0, epsilon = 1e-9);
        assert_eq!(j.mu_q, 0.0);
    }

    #[test]
    fn interface_limit_binds() {
        let n = two_bus(100.0, 30.0);
        let j = solve_centralized(&n, &dvector![0.0], &dvector![100.0]).unwrap();
        assert_abs_diff_eq!(j.q, 30.0, epsilon = 1e-9);
        assert!(j.mu_q > 0.0);
    }
}
