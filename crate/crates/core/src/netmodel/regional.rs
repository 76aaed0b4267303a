use nalgebra::{DMatrix, DVector};

use super::{build_ptdf, BusId, Generator, Network, Region};
use crate::error::{Error, Result};

/// One region's dispatch problem after proxy reduction.
///
/// Monitored flows are `shift * (G g - d) + sign * q * s_q` where `G` maps
/// generators to region buses and `sign` is +1 for region 1, -1 for region 2.
/// Balance is `sum(g) = sum(d) + sign * q`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionalModel {
    pub region: Region,
    /// Region buses; load vectors are indexed in this order.
    pub buses: Vec<BusId>,
    pub generators: Vec<Generator>,
    /// Position in `buses` of each generator.
    pub gen_bus: Vec<usize>,
    pub base_load: DVector<f64>,
    /// Network line indices of monitored lines (internal plus tie, finite limit).
    pub monitored: Vec<usize>,
    pub limits: DVector<f64>,
    /// `monitored x buses` shift factors relative to `reference`.
    pub shift: DMatrix<f64>,
    /// Flow change per MW moved from `reference` to `proxy`.
    pub s_q: DVector<f64>,
    pub reference: BusId,
    pub proxy: BusId,
}

impl RegionalModel {
    pub fn sign(&self) -> f64 {
        self.region.sign()
    }

    pub fn bus_position(&self, bus: BusId) -> Option<usize> {
        self.buses.iter().position(|&b| b == bus)
    }

    /// Monitored-line flows for dispatch `g`, load `d` and interchange `q`.
    pub fn flows(&self, g: &DVector<f64>, d: &DVector<f64>, q: f64) -> DVector<f64> {
        let mut inj = -d.clone();
        for (k, &pos) in self.gen_bus.iter().enumerate() {
            inj[pos] += g[k];
        }
        &self.shift * inj + &self.s_q * (self.sign() * q)
    }

    /// Base load plus `adjustment` (MW per bus); buses outside the region are ignored.
    pub fn load_with(&self, adjustment: &[(BusId, f64)]) -> DVector<f64> {
        let mut d = self.base_load.clone();
        for &(b, v) in adjustment {
            if let Some(i) = self.bus_position(b) {
                d[i] += v;
            }
        }
        d
    }

    pub fn cost(&self, g: &DVector<f64>) -> f64 {
        self.generators.iter().zip(g.iter()).map(|(gen, &x)| gen.cost(x)).sum()
    }
}

pub fn build_regional_view(network: &Network, region: Region) -> Result<RegionalModel> {
    let buses = network.buses_in(region);
    let generators: Vec<Generator> = network.generators_in(region).into_iter().cloned().collect();
    let reference = generators
        .iter()
        .map(|g| g.bus)
        .min()
        .ok_or_else(|| Error::invalid("region_generation", format!("region {region} has no generator")))?;
    let proxy = network.proxy_bus(region);
    if network.region_of(proxy) != Some(region.other()) {
        return Err(Error::invalid(
            "proxy_bus",
            format!("region {region} proxy bus {proxy} missing from region {}", region.other()),
        ));
    }

    let ptdf = build_ptdf(network, reference)?;
    let mut monitored = network.internal_lines(region);
    monitored.extend_from_slice(network.tie_lines());
    monitored.sort_unstable();
    monitored.retain(|&l| network.lines()[l].limit.is_some_and(f64::is_finite));

    let cols: Vec<usize> = buses.iter().map(|&b| ptdf.column(b).expect("region bus")).collect();
    let p_col = ptdf.column(proxy).expect("proxy bus");
    let shift = DMatrix::from_fn(monitored.len(), buses.len(), |i, j| ptdf.factors[(monitored[i], cols[j])]);
    // Reference column is zero, so the transfer reduces to minus the proxy column.
    let s_q = DVector::from_fn(monitored.len(), |i, _| -ptdf.factors[(monitored[i], p_col)]);
    let limits = DVector::from_fn(monitored.len(), |i, _| {
        network.lines()[monitored[i]].limit.expect("monitored lines have limits")
    });
    let gen_bus = generators
        .iter()
        .map(|g| buses.iter().position(|&b| b == g.bus).expect("generator in region"))
        .collect();
    let base_load = DVector::from_iterator(buses.len(), buses.iter().map(|&b| network.load_at(b)));

    Ok(RegionalModel {
        region,
        buses,
        generators,
        gen_bus,
        base_load,
        monitored,
        limits,
        shift,
        s_q,
        reference,
        proxy,
    })
}
