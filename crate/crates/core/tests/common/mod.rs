//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls the library's solvers or integrators.

#![allow(dead_code)]

use std::collections::BTreeMap;

use interchange::netmodel::parse_case_document;
use interchange::{Forecast, Network, QpSolution, QuadraticProgram};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sixbus() -> (Network, Forecast) {
    let text = include_str!("../../../../cases/sixbus.json");
    let doc = parse_case_document(text).unwrap();
    (doc.network, doc.forecast)
}

pub fn sixbus_with_d5(d5: f64) -> (Network, Forecast) {
    let (n, f) = sixbus();
    let n = n.with_loads(&BTreeMap::from([(5, d5)])).unwrap();
    (n, f)
}

/// All constraints of a QP as rows `g x <= c` (or `= c` when `eq`).
pub struct Rows {
    pub g: DMatrix<f64>,
    pub c: DVector<f64>,
    pub eq: Vec<bool>,
}

pub fn stacked_rows(qp: &QuadraticProgram) -> Rows {
    let n = qp.dim();
    let mut rows: Vec<(Vec<f64>, f64, bool)> = Vec::new();
    for i in 0..qp.a_eq.nrows() {
        rows.push((qp.a_eq.row(i).iter().copied().collect(), qp.c_eq[i], true));
    }
    for i in 0..qp.a_in.nrows() {
        rows.push((qp.a_in.row(i).iter().copied().collect(), qp.c_in[i], false));
    }
    for j in 0..n {
        if qp.lower[j].is_finite() {
            let mut a = vec![0.0; n];
            a[j] = -1.0;
            rows.push((a, -qp.lower[j], false));
        }
        if qp.upper[j].is_finite() {
            let mut a = vec![0.0; n];
            a[j] = 1.0;
            rows.push((a, qp.upper[j], false));
        }
    }
    let p = rows.len();
    Rows {
        g: DMatrix::from_fn(p, n, |i, j| rows[i].0[j]),
        c: DVector::from_iterator(p, rows.iter().map(|r| r.1)),
        eq: rows.iter().map(|r| r.2).collect(),
    }
}

pub struct DualResolve {
    pub x: DVector<f64>,
    /// Lagrange dual value; a lower bound on the optimum.
    pub dual_value: f64,
    pub primal_value: f64,
    pub infeasibility: f64,
    pub iterations: usize,
}

/// Accelerated projected-gradient ascent on the Lagrange dual of a strictly
/// convex QP. Projection is onto `{lambda_i >= 0 for inequality rows}`.
pub fn projected_gradient_dual(qp: &QuadraticProgram, max_iter: usize, tol: f64) -> DualResolve {
    let rows = stacked_rows(qp);
    let h_inv = qp.hessian.clone().try_inverse().expect("positive definite Hessian");
    let p = rows.c.len();
    let x_of = |lam: &DVector<f64>| -> DVector<f64> { -(&h_inv * (&qp.linear + rows.g.transpose() * lam)) };
    let lagrangian =
        |x: &DVector<f64>, lam: &DVector<f64>| -> f64 { 0.5 * x.dot(&(&qp.hessian * x)) + qp.linear.dot(x) + lam.dot(&(&rows.g * x - &rows.c)) };
    let project = |lam: &mut DVector<f64>| {
        for i in 0..p {
            if !rows.eq[i] && lam[i] < 0.0 {
                lam[i] = 0.0;
            }
        }
    };
    let k = &rows.g * &h_inv * rows.g.transpose();
    let lip = if p == 0 {
        1.0
    } else {
        k.clone().symmetric_eigenvalues().amax().max(1e-12)
    };
    let infeas = |x: &DVector<f64>| -> f64 {
        let r = &rows.g * x - &rows.c;
        (0..p).map(|i| if rows.eq[i] { r[i].abs() } else { r[i].max(0.0) }).fold(0.0, f64::max)
    };

    let mut lam = DVector::zeros(p);
    let mut prev = lam.clone();
    let mut y = lam.clone();
    let mut t: f64 = 1.0;
    let mut best = f64::NEG_INFINITY;
    let mut it = 0;
    let scale = 1.0 + qp.linear.amax() + rows.c.amax();
    let mut checkpoint = f64::NEG_INFINITY;
    while it < max_iter {
        it += 1;
        // The dual value is monotone; stop once it stagnates at rounding level.
        if it % 500 == 0 {
            if best - checkpoint <= 1e-15 * (1.0 + best.abs()) {
                break;
            }
            checkpoint = best;
        }
        let xy = x_of(&y);
        let grad = &rows.g * &xy - &rows.c;
        let mut next = &y + grad / lip;
        project(&mut next);
        let xn = x_of(&next);
        let val = lagrangian(&xn, &next);
        if val < best {
            // Function-value restart.
            t = 1.0;
            y = lam.clone();
            continue;
        }
        best = val;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &lam) * ((t - 1.0) / t_next);
        prev.copy_from(&lam);
        lam = next;
        t = t_next;
        let step = (&lam - &prev).amax();
        let comp = (0..p)
            .filter(|&i| !rows.eq[i])
            .map(|i| (lam[i] * (rows.g.row(i) * &xn)[0] - lam[i] * rows.c[i]).abs())
            .fold(0.0, f64::max);
        if infeas(&xn) <= tol * scale && comp <= tol * scale && step <= tol * (1.0 + lam.amax()) {
            break;
        }
    }
    let x = x_of(&lam);
    DualResolve {
        dual_value: lagrangian(&x, &lam),
        primal_value: qp.objective(&x),
        infeasibility: infeas(&x),
        x,
        iterations: it,
    }
}

/// `(stationarity, feasibility, complementarity incl. dual sign)` computed from scratch.
pub fn kkt(qp: &QuadraticProgram, s: &QpSolution) -> (f64, f64, f64) {
    let x = &s.x;
    let grad = &qp.hessian * x + &qp.linear + qp.a_eq.transpose() * &s.eq_duals + qp.a_in.transpose() * &s.in_duals - &s.lower_duals + &s.upper_duals;
    let mut feas: f64 = (&qp.a_eq * x - &qp.c_eq).amax();
    let mut comp: f64 = 0.0;
    let slack_in = &qp.c_in - &qp.a_in * x;
    for i in 0..slack_in.len() {
        feas = feas.max(-slack_in[i]);
        comp = comp.max((s.in_duals[i] * slack_in[i]).abs()).max(-s.in_duals[i]);
    }
    for j in 0..x.len() {
        if qp.lower[j].is_finite() {
            feas = feas.max(qp.lower[j] - x[j]);
            comp = comp.max((s.lower_duals[j] * (x[j] - qp.lower[j])).abs());
        }
        if qp.upper[j].is_finite() {
            feas = feas.max(x[j] - qp.upper[j]);
            comp = comp.max((s.upper_duals[j] * (qp.upper[j] - x[j])).abs());
        }
        comp = comp.max(-s.lower_duals[j]).max(-s.upper_duals[j]);
    }
    (grad.amax(), feas.max(0.0), comp)
}

/// Feasible, strictly convex QP with up to `max_n` variables.
pub fn random_qp(rng: &mut ChaCha8Rng, max_n: usize) -> QuadraticProgram {
    let n = rng.random_range(1..=max_n);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let ridge = rng.random_range(0.1..1.0);
    let h = m.transpose() * &m / n as f64 + DMatrix::identity(n, n) * ridge;
    let b = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let mut lower = DVector::from_element(n, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(n, f64::INFINITY);
    for j in 0..n {
        if rng.random_bool(0.7) {
            lower[j] = x0[j] - rng.random_range(0.0..2.0);
            upper[j] = x0[j] + rng.random_range(0.0..2.0);
        }
    }
    let m_eq = rng.random_range(0..=n.saturating_sub(1).min(3));
    let a_eq = DMatrix::from_fn(m_eq, n, |_, _| rng.random_range(-1.0..1.0));
    let c_eq = &a_eq * &x0;
    let m_in = rng.random_range(0..=n);
    let a_in = DMatrix::from_fn(m_in, n, |_, _| rng.random_range(-1.0..1.0));
    let c_in = &a_in * &x0 + DVector::from_fn(m_in, |_, _| rng.random_range(0.0..1.0));
    QuadraticProgram::new(h, b)
        .with_equalities(a_eq, c_eq)
        .with_inequalities(a_in, c_in)
        .with_bounds(lower, upper)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Bus-angle DC power flow: flows on every line for net injections `p`
/// (MW, indexed like `network.buses()`), slack at the first bus.
pub fn dc_flows(network: &Network, p: &[f64]) -> Vec<f64> {
    let buses = network.buses();
    let nb = buses.len();
    let idx = |b| buses.iter().position(|&x| x == b).unwrap();
    let mut bmat = DMatrix::<f64>::zeros(nb, nb);
    for l in network.lines() {
        let (i, j) = (idx(l.from), idx(l.to));
        let y = 1.0 / l.x;
        bmat[(i, i)] += y;
        bmat[(j, j)] += y;
        bmat[(i, j)] -= y;
        bmat[(j, i)] -= y;
    }
    let red = bmat.view((1, 1), (nb - 1, nb - 1)).into_owned();
    let rhs = DVector::from_iterator(nb - 1, p[1..].iter().copied());
    let th = red.lu().solve(&rhs).expect("connected network");
    let theta = |k: usize| if k == 0 { 0.0 } else { th[k - 1] };
    network.lines().iter().map(|l| (theta(idx(l.from)) - theta(idx(l.to))) / l.x).collect()
}

/// Standard normal density.
pub fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Composite Simpson integral of `f(w) N(w; mean, std)` over `mean +- 8 std`.
pub fn normal_expectation(mean: f64, std: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
    let n = panels + panels % 2;
    let (a, b) = (-8.0, 8.0);
    let h = (b - a) / n as f64;
    let mut s = 0.0;
    for k in 0..=n {
        let z = a + h * k as f64;
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        s += w * f(mean + std * z) * phi(z);
    }
    s * h / 3.0
}
