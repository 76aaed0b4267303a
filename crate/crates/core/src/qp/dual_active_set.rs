//! Goldfarb-Idnani dual active-set method with dense recomputation.
//!
//! Starts from the unconstrained minimizer and adds violated constraints one
//! at a time, dropping constraints whose multipliers would turn negative.
//! Every iterate is optimal for the current active set, so the final active
//! set certifies the solution and the multipliers are the exact duals.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use super::{kkt_residuals, Constraint, KktResiduals, QpSolution, QpStatus, QuadraticProgram, SolverOptions};
use crate::error::{Error, Result};

/// Constraint in the form `n'x >= b` (or `= b`), with `n` normalized.
struct Row {
    n: DVector<f64>,
    b: f64,
    /// Original row norm; multipliers are divided by it on output.
    scale: f64,
    id: Constraint,
}

impl Row {
    fn is_eq(&self) -> bool {
        matches!(self.id, Constraint::Equality(_))
    }
}

fn build_rows(qp: &QuadraticProgram) -> Result<Vec<Row>> {
    let n = qp.dim();
    let mut rows = Vec::new();
    let mut push = |v: DVector<f64>, b: f64, id: Constraint| -> Result<()> {
        let s = v.norm();
        if s == 0.0 {
            // Zero row: either vacuous or infeasible, decided by the caller.
            return Err(Error::invalid("qp_zero_row", format!("{id:?} has an all-zero gradient")));
        }
        rows.push(Row {
            n: v / s,
            b: b / s,
            scale: s,
            id,
        });
        Ok(())
    };
    for i in 0..qp.a_eq.nrows() {
        push(qp.a_eq.row(i).transpose(), qp.c_eq[i], Constraint::Equality(i))?;
    }
    for i in 0..qp.a_in.nrows() {
        push(-qp.a_in.row(i).transpose(), -qp.c_in[i], Constraint::Inequality(i))?;
    }
    for j in 0..n {
        if qp.lower[j].is_finite() {
            push(
                DVector::from_fn(n, |k, _| if k == j { 1.0 } else { 0.0 }),
                qp.lower[j],
                Constraint::Lower(j),
            )?;
        }
    }
    for j in 0..n {
        if qp.upper[j].is_finite() {
            push(
                DVector::from_fn(n, |k, _| if k == j { -1.0 } else { 0.0 }),
                -qp.upper[j],
                Constraint::Upper(j),
            )?;
        }
    }
    Ok(rows)
}

/// Drops all-zero constraint rows, reporting infeasibility if one is violated.
fn prune_zero_rows(qp: &QuadraticProgram, tol: f64) -> std::result::Result<(QuadraticProgram, Vec<usize>, Vec<usize>), ()> {
    let keep_eq: Vec<usize> = (0..qp.a_eq.nrows()).filter(|&i| qp.a_eq.row(i).amax() > 0.0).collect();
    let keep_in: Vec<usize> = (0..qp.a_in.nrows()).filter(|&i| qp.a_in.row(i).amax() > 0.0).collect();
    for i in 0..qp.a_eq.nrows() {
        if !keep_eq.contains(&i) && qp.c_eq[i].abs() > tol {
            return Err(());
        }
    }
    for i in 0..qp.a_in.nrows() {
        if !keep_in.contains(&i) && qp.c_in[i] < -tol {
            return Err(());
        }
    }
    let n = qp.dim();
    let mut out = qp.clone();
    out.a_eq = DMatrix::from_fn(keep_eq.len(), n, |r, c| qp.a_eq[(keep_eq[r], c)]);
    out.c_eq = DVector::from_fn(keep_eq.len(), |r, _| qp.c_eq[keep_eq[r]]);
    out.a_in = DMatrix::from_fn(keep_in.len(), n, |r, c| qp.a_in[(keep_in[r], c)]);
    out.c_in = DVector::from_fn(keep_in.len(), |r, _| qp.c_in[keep_in[r]]);
    Ok((out, keep_eq, keep_in))
}

struct Factor {
    ginv: DMatrix<f64>,
    regularized: bool,
}

fn factor(h: &DMatrix<f64>, ridge: f64) -> Result<Factor> {
    if let Some(ch) = h.clone().cholesky() {
        return Ok(Factor {
            ginv: ch.inverse(),
            regularized: false,
        });
    }
    let n = h.nrows();
    let diag_scale = (0..n).map(|i| h[(i, i)].abs()).fold(1.0_f64, f64::max);
    let mut r = ridge * diag_scale;
    for _ in 0..8 {
        let g = h + DMatrix::identity(n, n) * r;
        if let Some(ch) = g.clone().cholesky() {
            return Ok(Factor {
                ginv: ch.inverse(),
                regularized: true,
            });
        }
        r *= 10.0;
    }
    Err(Error::NumericalFailure(format!(
        "hessian is not positive semidefinite (ridge up to {r:.1e} failed)"
    )))
}

/// Active-set state: row index, orientation (+1/-1, equalities only) and multiplier.
struct Active {
    rows: Vec<usize>,
    signs: Vec<f64>,
    u: Vec<f64>,
}

/// `z = G^-1 n - G^-1 N r` and `r = (N'G^-1N)^-1 N'G^-1 n` for the active columns,
/// plus the magnitude of the terms cancelled in forming `z`.
fn directions(rows: &[Row], act: &Active, ginv: &DMatrix<f64>, np: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, f64)> {
    let k = act.rows.len();
    let gnp = ginv * np;
    if k == 0 {
        return Ok((gnp, DVector::zeros(0), 0.0));
    }
    let nmat = DMatrix::from_fn(np.len(), k, |i, j| act.signs[j] * rows[act.rows[j]].n[i]);
    let gn = ginv * &nmat;
    let m = nmat.transpose() * &gn;
    let rhs = gn.transpose() * np;
    let r = match m.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NumericalFailure("active constraint gradients became dependent".into()))?,
    };
    let cancelled: f64 = (0..k).map(|j| gn.column(j).amax() * r[j].abs()).sum();
    let z = gnp - gn * &r;
    Ok((z, r, cancelled))
}

pub fn solve_with(qp: &QuadraticProgram, opts: &SolverOptions) -> Result<QpSolution> {
    qp.validate()?;
    let n = qp.dim();
    let Ok((pruned, keep_eq, keep_in)) = prune_zero_rows(qp, opts.feas_tol) else {
        return Ok(failed(qp, QpStatus::Infeasible, 0));
    };
    let rows = build_rows(&pruned)?;
    // Map pruned constraint ids back to the caller's numbering.
    let orig = |c: Constraint| match c {
        Constraint::Equality(i) => Constraint::Equality(keep_eq[i]),
        Constraint::Inequality(i) => Constraint::Inequality(keep_in[i]),
        other => other,
    };
    let fac = factor(&qp.hessian, opts.ridge)?;
    let ginv = &fac.ginv;
    let max_iter = opts.max_iter.unwrap_or(50 * (n + rows.len()) + 100);

    let warm: BTreeSet<usize> = opts
        .warm_start
        .as_ref()
        .map(|w| rows.iter().enumerate().filter(|(_, r)| w.contains(&orig(r.id))).map(|(i, _)| i).collect())
        .unwrap_or_default();

    let mut x = -(ginv * &qp.linear);
    let mut act = Active {
        rows: Vec::new(),
        signs: Vec::new(),
        u: Vec::new(),
    };
    let mut pending_eq: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].is_eq()).rev().collect();
    let mut iterations = 0usize;
    let viol_tol = |r: &Row| opts.feas_tol * 1e-2 * (1.0 + r.b.abs());

    loop {
        let p = if let Some(e) = pending_eq.pop() {
            e
        } else {
            let mut best: Option<(usize, f64, bool)> = None;
            for (i, r) in rows.iter().enumerate() {
                if r.is_eq() || act.rows.contains(&i) {
                    continue;
                }
                let s = r.n.dot(&x) - r.b;
                if s < -viol_tol(r) {
                    let w = warm.contains(&i);
                    let better = match best {
                        None => true,
                        Some((_, bs, bw)) => (w && !bw) || (w == bw && s < bs),
                    };
                    if better {
                        best = Some((i, s, w));
                    }
                }
            }
            match best {
                Some((i, _, _)) => i,
                None => break,
            }
        };

        let s0 = rows[p].n.dot(&x) - rows[p].b;
        let sign = if rows[p].is_eq() && s0 > 0.0 { -1.0 } else { 1.0 };
        let np = &rows[p].n * sign;
        let bp = rows[p].b * sign;
        let np_gnp = np.dot(&(ginv * &np));
        let mut u_p = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::IterationLimit(max_iter));
            }
            let (z, r, cancelled) = directions(&rows, &act, ginv, &np)?;
            let r_scale = r.amax().max(1.0);
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for j in 0..act.rows.len() {
                if rows[act.rows[j]].is_eq() {
                    continue;
                }
                if r[j] > 1e-13 * r_scale {
                    let ratio = (act.u[j] / r[j]).max(0.0);
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(j);
                    }
                }
            }
            let zn = z.dot(&np);
            let sp = np.dot(&x) - bp;
            // Below this, z is rounding left over from cancelling G^-1 N r.
            let z_floor = 1e-10 * (np_gnp + cancelled);
            let t2 = if zn > z_floor { (-sp / zn).max(0.0) } else { f64::INFINITY };
            if t1.is_infinite() && t2.is_infinite() {
                return Ok(failed(qp, QpStatus::Infeasible, iterations));
            }
            let t = t1.min(t2);
            if t2.is_finite() {
                x += &z * t;
            }
            for j in 0..act.rows.len() {
                act.u[j] -= t * r[j];
            }
            u_p += t;
            if t2 <= t1 {
                act.rows.push(p);
                act.signs.push(sign);
                act.u.push(u_p);
                break;
            }
            let j = drop.expect("finite t1 has a blocking constraint");
            act.rows.remove(j);
            act.signs.remove(j);
            act.u.remove(j);
        }
    }

    polish(&rows, &mut act, &fac, &qp.linear, &mut x, opts.feas_tol);

    if fac.regularized {
        let data_scale = 1.0 + qp.linear.amax() + qp.c_eq.amax().max(qp.c_in.amax());
        if x.amax() > 1e6 * data_scale {
            return Ok(failed(qp, QpStatus::Unbounded, iterations));
        }
    }

    let mut y = DVector::zeros(qp.a_eq.nrows());
    let mut zin = DVector::zeros(qp.a_in.nrows());
    let mut zlo = DVector::zeros(n);
    let mut zup = DVector::zeros(n);
    let mut active = Vec::with_capacity(act.rows.len());
    for ((&ri, &sg), &u) in act.rows.iter().zip(&act.signs).zip(&act.u) {
        let row = &rows[ri];
        let id = orig(row.id);
        active.push(id);
        let u = if row.is_eq() { u } else { u.max(0.0) };
        match id {
            Constraint::Equality(i) => y[i] = -sg * u / row.scale,
            Constraint::Inequality(i) => zin[i] = u / row.scale,
            Constraint::Lower(j) => zlo[j] = u,
            Constraint::Upper(j) => zup[j] = u,
        }
    }
    active.sort_unstable();
    let residuals = kkt_residuals(qp, &x, &y, &zin, &zlo, &zup);
    let degenerate = is_degenerate(&rows, &x, opts.feas_tol);
    Ok(QpSolution {
        status: QpStatus::Optimal,
        objective: qp.objective(&x),
        x,
        eq_duals: y,
        in_duals: zin,
        lower_duals: zlo,
        upper_duals: zup,
        residuals,
        active,
        degenerate,
        regularized: fac.regularized,
        iterations,
    })
}

/// Re-solves the equality-constrained problem on the final active set to
/// remove drift accumulated over the iterations. Kept only if it stays
/// primal and dual feasible.
fn polish(rows: &[Row], act: &mut Active, fac: &Factor, b: &DVector<f64>, x: &mut DVector<f64>, tol: f64) {
    let k = act.rows.len();
    let n = x.len();
    let ginv = &fac.ginv;
    let (xn, un) = if k == 0 {
        (-(ginv * b), DVector::zeros(0))
    } else {
        let nmat = DMatrix::from_fn(n, k, |i, j| act.signs[j] * rows[act.rows[j]].n[i]);
        let bvec = DVector::from_fn(k, |j, _| act.signs[j] * rows[act.rows[j]].b);
        let gn = ginv * &nmat;
        let m = nmat.transpose() * &gn;
        let rhs = bvec + gn.transpose() * b;
        let Some(u) = m.clone().cholesky().map(|c| c.solve(&rhs)).or_else(|| m.lu().solve(&rhs)) else {
            return;
        };
        let xn = ginv * (&nmat * &u - b);
        (xn, u)
    };
    let dual_ok = (0..k).all(|j| rows[act.rows[j]].is_eq() || un[j] >= -tol);
    let primal_ok = rows.iter().all(|r| {
        let s = r.n.dot(&xn) - r.b;
        if r.is_eq() {
            s.abs() <= tol * (1.0 + r.b.abs())
        } else {
            s >= -tol * (1.0 + r.b.abs())
        }
    });
    if dual_ok && primal_ok && xn.iter().all(|v| v.is_finite()) {
        *x = xn;
        act.u = un.iter().copied().collect();
    }
}

/// More tight constraints than the rank of their gradients.
fn is_degenerate(rows: &[Row], x: &DVector<f64>, tol: f64) -> bool {
    let tight: Vec<&Row> = rows
        .iter()
        .filter(|r| (r.n.dot(x) - r.b).abs() <= 10.0 * tol * (1.0 + r.b.abs()))
        .collect();
    if tight.is_empty() {
        return false;
    }
    let n = x.len();
    if tight.len() > n {
        return true;
    }
    let m = DMatrix::from_fn(n, tight.len(), |i, j| tight[j].n[i]);
    let sv = m.singular_values();
    let smax = sv.max();
    let rank = sv.iter().filter(|&&s| s > 1e-9 * smax.max(1.0)).count();
    tight.len() > rank
}

fn failed(qp: &QuadraticProgram, status: QpStatus, iterations: usize) -> QpSolution {
    let n = qp.dim();
    QpSolution {
        status,
        x: DVector::from_element(n, f64::NAN),
        eq_duals: DVector::zeros(qp.a_eq.nrows()),
        in_duals: DVector::zeros(qp.a_in.nrows()),
        lower_duals: DVector::zeros(n),
        upper_duals: DVector::zeros(n),
        objective: match status {
            QpStatus::Unbounded => f64::NEG_INFINITY,
            _ => f64::NAN,
        },
        residuals: KktResiduals {
            stationarity: f64::NAN,
            feasibility: f64::NAN,
            complementarity: f64::NAN,
        },
        active: Vec::new(),
        degenerate: false,
        regularized: false,
        iterations,
    }
}
