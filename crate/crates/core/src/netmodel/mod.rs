//! Two-region network data, shift factors and per-region dispatch views.

mod case;
mod matpower;
mod ptdf;
mod regional;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use case::{emit_case, parse_case, parse_case_document, CaseDocument};
pub use matpower::{parse_matpower_case, parse_matpower_with_annotation, RegionAnnotation};
pub use ptdf::{build_ptdf, ShiftFactorMatrix};
pub use regional::{build_regional_view, RegionalModel};

/// External bus number as written in case files.
pub type BusId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Region {
    One,
    Two,
}

impl Region {
    pub const BOTH: [Region; 2] = [Region::One, Region::Two];

    pub fn other(self) -> Region {
        match self {
            Region::One => Region::Two,
            Region::Two => Region::One,
        }
    }

    /// +1 for region 1 (exporter under positive q), -1 for region 2.
    pub fn sign(self) -> f64 {
        match self {
            Region::One => 1.0,
            Region::Two => -1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Region::One => 0,
            Region::Two => 1,
        }
    }
}

impl TryFrom<u8> for Region {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Region::One),
            2 => Ok(Region::Two),
            other => Err(format!("region must be 1 or 2, got {other}")),
        }
    }
}

impl From<Region> for u8 {
    fn from(r: Region) -> u8 {
        r.index() as u8 + 1
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", u8::from(*self))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
    /// Series reactance, p.u. on the system base.
    pub x: f64,
    /// Thermal limit in MW, both directions. `None` leaves the line unmonitored.
    pub limit: Option<f64>,
}

/// Generator with cost `h g^2 + b g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: BusId,
    pub h: f64,
    pub b: f64,
    pub g_min: f64,
    pub g_max: f64,
}

impl Generator {
    pub fn cost(&self, g: f64) -> f64 {
        self.h * g * g + self.b * g
    }

    pub fn marginal_cost(&self, g: f64) -> f64 {
        2.0 * self.h * g + self.b
    }
}

/// Feasible interchange interval `[q_min, q_max]`; positive q flows 1 -> 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterfaceLimit {
    pub q_max: f64,
    pub q_min: f64,
}

impl InterfaceLimit {
    pub fn symmetric(q: f64) -> Self {
        Self { q_max: q, q_min: -q }
    }

    pub fn contains(&self, q: f64) -> bool {
        q >= self.q_min && q <= self.q_max
    }
}

/// Validated two-region network. Construct through [`Network::new`] or the
/// case parsers; fields are read-only afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    buses: Vec<BusId>,
    lines: Vec<Line>,
    generators: Vec<Generator>,
    loads: BTreeMap<BusId, f64>,
    region_of: BTreeMap<BusId, Region>,
    tie_lines: Vec<usize>,
    /// `proxy[0]` is region 1's proxy (a region-2 bus), `proxy[1]` region 2's.
    proxy: [BusId; 2],
    interface: InterfaceLimit,
}

/// Unvalidated network fields.
#[derive(Debug, Clone, Default)]
pub struct NetworkParts {
    pub buses: Vec<BusId>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub loads: BTreeMap<BusId, f64>,
    pub region_of: BTreeMap<BusId, Region>,
    /// Declared tie lines as endpoint pairs; `None` derives them from the partition.
    pub declared_ties: Option<Vec<(BusId, BusId)>>,
    pub proxy: BTreeMap<Region, BusId>,
    pub q_max: f64,
    pub q_min: Option<f64>,
}

impl Network {
    pub fn new(parts: NetworkParts) -> Result<Network> {
        let NetworkParts {
            buses,
            lines,
            generators,
            loads,
            region_of,
            declared_ties,
            proxy,
            q_max,
            q_min,
        } = parts;

        let mut seen = BTreeSet::new();
        for &b in &buses {
            if !seen.insert(b) {
                return Err(Error::invalid("unique_bus_ids", format!("bus {b} listed twice")));
            }
        }
        if buses.is_empty() {
            return Err(Error::invalid("nonempty_network", "no buses"));
        }
        for &b in &buses {
            if !region_of.contains_key(&b) {
                return Err(Error::invalid("region_partition", format!("bus {b} has no region")));
            }
        }
        if let Some(b) = region_of.keys().find(|b| !seen.contains(b)) {
            return Err(Error::invalid("known_bus", format!("region assignment names unknown bus {b}")));
        }
        for (i, l) in lines.iter().enumerate() {
            for end in [l.from, l.to] {
                if !seen.contains(&end) {
                    return Err(Error::invalid("known_bus", format!("line {} endpoint {end} is not a bus", i + 1)));
                }
            }
            if l.from == l.to {
                return Err(Error::invalid(
                    "no_self_loops",
                    format!("line {} connects bus {} to itself", i + 1, l.from),
                ));
            }
            if !(l.x > 0.0) || !l.x.is_finite() {
                return Err(Error::invalid(
                    "positive_reactance",
                    format!("line {} ({}-{}) has reactance {}", i + 1, l.from, l.to, l.x),
                ));
            }
            if let Some(f) = l.limit {
                if !(f >= 0.0) {
                    return Err(Error::invalid(
                        "nonnegative_limit",
                        format!("line {} ({}-{}) has limit {f}", i + 1, l.from, l.to),
                    ));
                }
            }
        }
        for (i, g) in generators.iter().enumerate() {
            if !seen.contains(&g.bus) {
                return Err(Error::invalid("known_bus", format!("generator {} sits on unknown bus {}", i + 1, g.bus)));
            }
            if !(g.g_min <= g.g_max) {
                return Err(Error::invalid(
                    "generator_bounds",
                    format!("generator {} at bus {} has g_min {} > g_max {}", i + 1, g.bus, g.g_min, g.g_max),
                ));
            }
            if !(g.h > 0.0) || !g.h.is_finite() || !g.b.is_finite() {
                return Err(Error::UnsupportedCost {
                    generator: i + 1,
                    reason: format!("need h > 0 and finite b, got h={} b={}", g.h, g.b),
                });
            }
        }
        for (&b, &v) in &loads {
            if !seen.contains(&b) {
                return Err(Error::invalid("known_bus", format!("load on unknown bus {b}")));
            }
            if !v.is_finite() {
                return Err(Error::invalid("finite_load", format!("load at bus {b} is {v}")));
            }
        }

        let tie_lines: Vec<usize> = lines
            .iter()
            .enumerate()
            .filter(|(_, l)| region_of[&l.from] != region_of[&l.to])
            .map(|(i, _)| i)
            .collect();
        if tie_lines.is_empty() {
            return Err(Error::invalid("tie_lines", "no line crosses the region partition"));
        }
        if let Some(declared) = declared_ties {
            let key = |a: BusId, b: BusId| (a.min(b), a.max(b));
            let want: BTreeSet<_> = declared.iter().map(|&(a, b)| key(a, b)).collect();
            let have: BTreeSet<_> = tie_lines.iter().map(|&i| key(lines[i].from, lines[i].to)).collect();
            if want != have {
                return Err(Error::invalid(
                    "tie_lines",
                    format!("declared tie lines {want:?} differ from partition-crossing lines {have:?}"),
                ));
            }
        }

        let mut pr = [0; 2];
        for r in Region::BOTH {
            let p = *proxy
                .get(&r)
                .ok_or_else(|| Error::invalid("proxy_bus", format!("region {r} has no proxy bus")))?;
            if !seen.contains(&p) {
                return Err(Error::invalid("proxy_bus", format!("proxy bus {p} of region {r} is unknown")));
            }
            if region_of[&p] != r.other() {
                return Err(Error::invalid(
                    "proxy_bus",
                    format!("proxy bus {p} of region {r} must lie in region {}", r.other()),
                ));
            }
            pr[r.index()] = p;
        }

        if !(q_max >= 0.0) {
            return Err(Error::invalid("interface_limit", format!("Q_max must be nonnegative, got {q_max}")));
        }
        let q_min = q_min.unwrap_or(-q_max);
        if !(q_min <= q_max) {
            return Err(Error::invalid("interface_limit", format!("Q_min {q_min} exceeds Q_max {q_max}")));
        }

        let net = Network {
            buses,
            lines,
            generators,
            loads,
            region_of,
            tie_lines,
            proxy: pr,
            interface: InterfaceLimit { q_max, q_min },
        };
        for r in Region::BOTH {
            if !net.region_connected(r) {
                return Err(Error::invalid("region_connected", format!("region {r} plus tie lines is not connected")));
            }
            if net.generators.iter().all(|g| net.region_of[&g.bus] != r) {
                return Err(Error::invalid("region_generation", format!("region {r} has no generator")));
            }
        }
        Ok(net)
    }

    /// Region buses plus tie lines (and their far ends) form one component.
    fn region_connected(&self, r: Region) -> bool {
        let idx = |b: BusId| self.bus_index(b).expect("validated");
        let mut parent: Vec<usize> = (0..self.buses.len()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let mut members = BTreeSet::new();
        for l in &self.lines {
            let (ra, rb) = (self.region_of[&l.from], self.region_of[&l.to]);
            if ra != r && rb != r {
                continue;
            }
            members.insert(idx(l.from));
            members.insert(idx(l.to));
            let (a, b) = (find(&mut parent, idx(l.from)), find(&mut parent, idx(l.to)));
            parent[a] = b;
        }
        for &b in self.buses_in(r).iter() {
            members.insert(idx(b));
        }
        let roots: BTreeSet<usize> = members.iter().map(|&m| find(&mut parent, m)).collect();
        roots.len() == 1
    }

    pub fn buses(&self) -> &[BusId] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn loads(&self) -> &BTreeMap<BusId, f64> {
        &self.loads
    }

    pub fn load_at(&self, bus: BusId) -> f64 {
        self.loads.get(&bus).copied().unwrap_or(0.0)
    }

    pub fn region_of(&self, bus: BusId) -> Option<Region> {
        self.region_of.get(&bus).copied()
    }

    pub fn tie_lines(&self) -> &[usize] {
        &self.tie_lines
    }

    /// Proxy bus used by `region`; it lies in the other region.
    pub fn proxy_bus(&self, region: Region) -> BusId {
        self.proxy[region.index()]
    }

    pub fn interface(&self) -> InterfaceLimit {
        self.interface
    }

    pub fn bus_index(&self, bus: BusId) -> Option<usize> {
        self.buses.iter().position(|&b| b == bus)
    }

    /// Buses of `region` in network order.
    pub fn buses_in(&self, region: Region) -> Vec<BusId> {
        self.buses.iter().copied().filter(|b| self.region_of[b] == region).collect()
    }

    pub fn generators_in(&self, region: Region) -> Vec<&Generator> {
        self.generators.iter().filter(|g| self.region_of[&g.bus] == region).collect()
    }

    /// Internal lines of `region` (both ends inside it).
    pub fn internal_lines(&self, region: Region) -> Vec<usize> {
        (0..self.lines.len())
            .filter(|&i| {
                let l = &self.lines[i];
                self.region_of[&l.from] == region && self.region_of[&l.to] == region
            })
            .collect()
    }

    pub fn parts(&self) -> NetworkParts {
        NetworkParts {
            buses: self.buses.clone(),
            lines: self.lines.clone(),
            generators: self.generators.clone(),
            loads: self.loads.clone(),
            region_of: self.region_of.clone(),
            declared_ties: Some(self.tie_lines.iter().map(|&i| (self.lines[i].from, self.lines[i].to)).collect()),
            proxy: Region::BOTH.iter().map(|&r| (r, self.proxy_bus(r))).collect(),
            q_max: self.interface.q_max,
            q_min: Some(self.interface.q_min),
        }
    }

    /// Copy with replaced loads (MW per bus); buses not listed keep their load.
    pub fn with_loads(&self, overrides: &BTreeMap<BusId, f64>) -> Result<Network> {
        let mut parts = self.parts();
        for (&b, &v) in overrides {
            parts.loads.insert(b, v);
        }
        Network::new(parts)
    }

    pub fn with_interface(&self, q_max: f64, q_min: Option<f64>) -> Result<Network> {
        let mut parts = self.parts();
        parts.q_max = q_max;
        parts.q_min = q_min;
        Network::new(parts)
    }

    pub fn with_proxies(&self, proxy_1: BusId, proxy_2: BusId) -> Result<Network> {
        let mut parts = self.parts();
        parts.proxy.insert(Region::One, proxy_1);
        parts.proxy.insert(Region::Two, proxy_2);
        Network::new(parts)
    }
}
