//! Extremes of a linear functional over the optimal dual set.
//!
//! At a degenerate optimum the multipliers form a polytope. Its vertices are
//! basic solutions of the stationarity system over the tight constraints,
//! enumerated here by choosing which surplus columns to drop.

use nalgebra::{DMatrix, DVector};

use super::QuadraticProgram;

/// Coefficients of a linear functional of the duals `(y, z, z_lo, z_up)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualWeights {
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl DualWeights {
    pub fn zeros(qp: &QuadraticProgram) -> Self {
        let n = qp.dim();
        DualWeights {
            eq: DVector::zeros(qp.a_eq.nrows()),
            ineq: DVector::zeros(qp.a_in.nrows()),
            lower: DVector::zeros(n),
            upper: DVector::zeros(n),
        }
    }
}

/// Largest number of vertex candidates examined before giving up.
const MAX_CANDIDATES: usize = 20_000;

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return usize::MAX,
        };
    }
    acc
}

fn rank(m: &DMatrix<f64>) -> (usize, f64) {
    if m.ncols() == 0 {
        return (0, 0.0);
    }
    let sv = m.singular_values();
    let smax = sv.max();
    let r = sv.iter().filter(|&&s| s > 1e-9 * smax.max(1.0)).count();
    (r, smax)
}

/// `(min, max)` of `w' duals` over the multipliers optimal at primal `x`.
/// `None` if the tight set is too large to enumerate or no vertex is found.
pub fn dual_extremes(qp: &QuadraticProgram, x: &DVector<f64>, w: &DualWeights, feas_tol: f64) -> Option<(f64, f64)> {
    let n = qp.dim();
    let tight = |a: DVector<f64>, c: f64| -> bool {
        let s = a.norm();
        s > 0.0 && (a.dot(x) - c).abs() / s <= 10.0 * feas_tol * (1.0 + c.abs() / s)
    };
    let mut eq_cols: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..qp.a_eq.nrows() {
        let a = qp.a_eq.row(i).transpose();
        if a.amax() > 0.0 {
            eq_cols.push((a, w.eq[i]));
        }
    }
    let mut in_cols: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..qp.a_in.nrows() {
        let a = qp.a_in.row(i).transpose();
        if tight(a.clone(), qp.c_in[i]) {
            in_cols.push((a, w.ineq[i]));
        }
    }
    for j in 0..n {
        let e = DVector::from_fn(n, |k, _| if k == j { 1.0 } else { 0.0 });
        if qp.lower[j].is_finite() && tight(-e.clone(), -qp.lower[j]) {
            in_cols.push((-e.clone(), w.lower[j]));
        }
        if qp.upper[j].is_finite() && tight(e.clone(), qp.upper[j]) {
            in_cols.push((e, w.upper[j]));
        }
    }
    let r = -(&qp.hessian * x + &qp.linear);
    let all = DMatrix::from_fn(n, eq_cols.len() + in_cols.len(), |i, j| {
        if j < eq_cols.len() {
            eq_cols[j].0[i]
        } else {
            in_cols[j - eq_cols.len()].0[i]
        }
    });
    let (m, _) = rank(&all);
    let t = in_cols.len();
    let keep = m.checked_sub(eq_cols.len())?;
    if keep > t {
        return None;
    }
    let drop = t - keep;
    if binomial(t, drop) > MAX_CANDIDATES {
        return None;
    }
    let r_scale = 1.0 + r.amax();
    let mut best: Option<(f64, f64)> = None;
    // Iterate over subsets of `keep` inequality columns.
    let mut pick: Vec<usize> = (0..keep).collect();
    loop {
        let cols: Vec<&(DVector<f64>, f64)> = eq_cols.iter().chain(pick.iter().map(|&i| &in_cols[i])).collect();
        let ms = DMatrix::from_fn(n, cols.len(), |i, j| cols[j].0[i]);
        let (rk, _) = rank(&ms);
        if rk == cols.len() {
            if let Ok(u) = ms.clone().svd(true, true).solve(&r, 1e-14) {
                let resid = (&ms * &u - &r).amax();
                let u_scale = 1.0 + u.amax();
                let signs_ok = (eq_cols.len()..cols.len()).all(|k| u[k] >= -1e-9 * u_scale);
                if resid <= 1e-7 * r_scale && signs_ok {
                    let v: f64 = cols.iter().zip(u.iter()).map(|(c, ui)| c.1 * ui).sum();
                    best = Some(match best {
                        None => (v, v),
                        Some((lo, hi)) => (lo.min(v), hi.max(v)),
                    });
                }
            }
        }
        // Next combination in lexicographic order.
        let mut i = keep;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if pick[i] < t - keep + i {
                pick[i] += 1;
                for j in i + 1..keep {
                    pick[j] = pick[j - 1] + 1;
                }
                break;
            }
        }
        if keep == 0 {
            return best;
        }
    }
}
