use nalgebra::{DMatrix, DVector};

use super::{BusId, Line, Network};
use crate::error::{Error, Result};

/// Line-by-bus power transfer distribution factors relative to `slack`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftFactorMatrix {
    pub slack: BusId,
    /// Column order.
    pub buses: Vec<BusId>,
    /// `lines x buses`; row order follows the network's line list.
    pub factors: DMatrix<f64>,
}

impl ShiftFactorMatrix {
    pub fn column(&self, bus: BusId) -> Option<usize> {
        self.buses.iter().position(|&b| b == bus)
    }

    /// Factor for line `line` (row index) and bus id `bus`.
    pub fn get(&self, line: usize, bus: BusId) -> f64 {
        self.factors[(line, self.column(bus).expect("bus in matrix"))]
    }

    /// Line flows for a bus injection vector in column order.
    pub fn flows(&self, injections: &DVector<f64>) -> DVector<f64> {
        &self.factors * injections
    }
}

pub fn build_ptdf(network: &Network, slack: BusId) -> Result<ShiftFactorMatrix> {
    ptdf_from_parts(network.buses(), network.lines(), slack)
}

pub(crate) fn ptdf_from_parts(buses: &[BusId], lines: &[Line], slack: BusId) -> Result<ShiftFactorMatrix> {
    let n = buses.len();
    let col = |b: BusId| buses.iter().position(|&x| x == b);
    let s = col(slack).ok_or_else(|| Error::invalid("known_bus", format!("slack bus {slack} is unknown")))?;
    let mut ends = Vec::with_capacity(lines.len());
    for (i, l) in lines.iter().enumerate() {
        if !(l.x > 0.0) || !l.x.is_finite() {
            return Err(Error::SingularNetwork(format!(
                "line {} ({}-{}) has reactance {}",
                i + 1,
                l.from,
                l.to,
                l.x
            )));
        }
        let a = col(l.from).ok_or_else(|| Error::invalid("known_bus", format!("bus {}", l.from)))?;
        let b = col(l.to).ok_or_else(|| Error::invalid("known_bus", format!("bus {}", l.to)))?;
        ends.push((a, b, 1.0 / l.x));
    }

    // Reduced index: bus position with the slack removed.
    let red = |k: usize| -> Option<usize> {
        match k.cmp(&s) {
            std::cmp::Ordering::Less => Some(k),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(k - 1),
        }
    };
    let m = n - 1;
    let mut lap = DMatrix::<f64>::zeros(m, m);
    for &(a, b, y) in &ends {
        if let Some(i) = red(a) {
            lap[(i, i)] += y;
        }
        if let Some(j) = red(b) {
            lap[(j, j)] += y;
        }
        if let (Some(i), Some(j)) = (red(a), red(b)) {
            lap[(i, j)] -= y;
            lap[(j, i)] -= y;
        }
    }

    let reactance = if m == 0 {
        DMatrix::zeros(0, 0)
    } else {
        let chol = lap
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularNetwork("susceptance matrix is singular; network is disconnected".into()))?;
        let inv = chol.inverse();
        // Cholesky of a near-singular Laplacian can succeed with a tiny pivot.
        let resid = (&lap * &inv - DMatrix::identity(m, m)).amax();
        if !(resid < 1e-6) {
            return Err(Error::SingularNetwork(format!(
                "susceptance matrix is ill-conditioned (inverse residual {resid:.2e})"
            )));
        }
        inv
    };

    let mut factors = DMatrix::<f64>::zeros(lines.len(), n);
    for (row, &(a, b, y)) in ends.iter().enumerate() {
        for k in 0..n {
            let Some(kr) = red(k) else { continue };
            let xa = red(a).map_or(0.0, |i| reactance[(i, kr)]);
            let xb = red(b).map_or(0.0, |j| reactance[(j, kr)]);
            factors[(row, k)] = y * (xa - xb);
        }
    }
    Ok(ShiftFactorMatrix {
        slack,
        buses: buses.to_vec(),
        factors,
    })
}
