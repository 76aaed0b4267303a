//! MATPOWER text case ingestion plus the region annotation sidecar.

use std::collections::BTreeMap;

use serde::Deserialize;

use super::case::{injections_from_raw, RawInjection};
use super::{BusId, CaseDocument, Generator, Line, Network, NetworkParts, Region};
use crate::error::{Error, Result};
use crate::forecast::Forecast;
use crate::scheduler::InterfaceBid;

/// Region split and study overrides for a MATPOWER case.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionAnnotation {
    /// Inclusive bus ranges forming region 1; every other bus is region 2.
    pub region_split: RegionSplit,
    pub proxy_buses: ProxyBuses,
    #[serde(default)]
    pub line_limit_overrides: Vec<LimitOverride>,
    /// Which branches become monitored lines.
    #[serde(default)]
    pub monitor: MonitorPolicy,
    #[serde(default)]
    pub interface: Option<AnnotatedInterface>,
    #[serde(default)]
    pub(crate) wind: Vec<RawInjection>,
    #[serde(default)]
    pub bids: Vec<InterfaceBid>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSplit {
    pub region_1: Vec<[BusId; 2]>,
}

/// `p1` is region 1's proxy (a region-2 bus); `p2` is region 2's.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyBuses {
    pub p1: BusId,
    pub p2: BusId,
}

/// 1-based branch row and its new limit in MW.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitOverride {
    pub branch: usize,
    pub limit: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorPolicy {
    /// Every in-service branch with a nonzero rateA.
    #[default]
    All,
    /// Only branches named in `line_limit_overrides`.
    Overrides,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedInterface {
    #[serde(rename = "Q_max")]
    pub q_max: Option<f64>,
    #[serde(rename = "Q_min", default)]
    pub q_min: Option<f64>,
}

impl RegionAnnotation {
    pub fn parse(text: &str) -> Result<RegionAnnotation> {
        serde_json::from_str(text).map_err(|e| Error::parse(format!("annotation line {} column {}", e.line(), e.column()), e.to_string()))
    }

    fn region_of(&self, bus: BusId) -> Region {
        if self.region_split.region_1.iter().any(|&[a, b]| bus >= a && bus <= b) {
            Region::One
        } else {
            Region::Two
        }
    }
}

/// Rows of one table as `(source line, values)`.
type Rows = Vec<(usize, Vec<f64>)>;

/// Numeric tables of a MATPOWER document, keyed by `mpc.<name>`.
struct Tables {
    tables: BTreeMap<String, Rows>,
}

impl Tables {
    fn parse(text: &str) -> Result<Tables> {
        let mut tables = BTreeMap::new();
        let mut current: Option<(String, Rows)> = None;
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split('%').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut body = line;
            if current.is_none() {
                let Some(rest) = line.strip_prefix("mpc.") else { continue };
                let Some((name, rhs)) = rest.split_once('=') else { continue };
                let rhs = rhs.trim();
                let Some(after) = rhs.strip_prefix('[') else { continue };
                current = Some((name.trim().to_string(), Vec::new()));
                body = after;
            }
            let (name, rows) = current.as_mut().expect("inside table");
            let (content, closed) = match body.find(']') {
                Some(p) => (&body[..p], true),
                None => (body, false),
            };
            for chunk in content.split(';') {
                let vals: Vec<&str> = chunk.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
                if vals.is_empty() {
                    continue;
                }
                let row = vals
                    .iter()
                    .map(|v| match *v {
                        "Inf" | "inf" => Ok(f64::INFINITY),
                        "-Inf" | "-inf" => Ok(f64::NEG_INFINITY),
                        s => s
                            .parse::<f64>()
                            .map_err(|_| Error::parse(format!("line {lineno} (mpc.{name})"), format!("bad number {s:?}"))),
                    })
                    .collect::<Result<Vec<f64>>>()?;
                rows.push((lineno, row));
            }
            if closed {
                let (name, rows) = current.take().expect("inside table");
                tables.insert(name, rows);
            }
        }
        if let Some((name, _)) = current {
            return Err(Error::parse(format!("mpc.{name}"), "table is not closed with ']'"));
        }
        Ok(Tables { tables })
    }

    fn get(&self, name: &str, min_cols: usize) -> Result<&[(usize, Vec<f64>)]> {
        let rows = self
            .tables
            .get(name)
            .ok_or_else(|| Error::parse(format!("mpc.{name}"), "table missing"))?;
        for (lineno, r) in rows {
            if r.len() < min_cols {
                return Err(Error::parse(
                    format!("line {lineno} (mpc.{name})"),
                    format!("expected at least {min_cols} columns, found {}", r.len()),
                ));
            }
        }
        Ok(rows)
    }
}

fn as_bus(v: f64, lineno: usize, table: &str) -> Result<BusId> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as BusId)
    } else {
        Err(Error::parse(format!("line {lineno} (mpc.{table})"), format!("bad bus number {v}")))
    }
}

pub fn parse_matpower_case(text: &str, annotation: &RegionAnnotation) -> Result<Network> {
    parse_matpower_inner(text, annotation).map(|(n, _)| n)
}

/// Parses a MATPOWER document plus its JSON sidecar into a full case.
pub fn parse_matpower_with_annotation(text: &str, annotation_text: &str) -> Result<CaseDocument> {
    let ann = RegionAnnotation::parse(annotation_text)?;
    let (network, name) = parse_matpower_inner(text, &ann)?;
    let forecast = Forecast::new(&network, injections_from_raw(ann.wind.clone())?)?;
    for b in &ann.bids {
        b.validate()?;
    }
    Ok(CaseDocument {
        name,
        network,
        forecast,
        bids: ann.bids.clone(),
    })
}

fn parse_matpower_inner(text: &str, ann: &RegionAnnotation) -> Result<(Network, Option<String>)> {
    let name = text
        .lines()
        .find_map(|l| l.trim().strip_prefix("function"))
        .and_then(|rest| rest.split('=').nth(1))
        .map(|s| s.trim().to_string());
    let tables = Tables::parse(text)?;
    let bus_rows = tables.get("bus", 3)?;
    let gen_rows = tables.get("gen", 10)?;
    let branch_rows = tables.get("branch", 11)?;
    let cost_rows = tables.get("gencost", 4)?;
    if cost_rows.len() != gen_rows.len() {
        return Err(Error::parse(
            "mpc.gencost",
            format!("{} cost rows for {} generators", cost_rows.len(), gen_rows.len()),
        ));
    }

    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut loads = BTreeMap::new();
    for (lineno, r) in bus_rows {
        let b = as_bus(r[0], *lineno, "bus")?;
        buses.push(b);
        if r[2] != 0.0 {
            loads.insert(b, r[2]);
        }
    }

    let mut generators = Vec::new();
    for (k, ((lineno, g), (clineno, c))) in gen_rows.iter().zip(cost_rows).enumerate() {
        if g[7] <= 0.0 {
            continue;
        }
        let bus = as_bus(g[0], *lineno, "gen")?;
        let model = c[0];
        if model == 1.0 {
            return Err(Error::UnsupportedCost {
                generator: k + 1,
                reason: "piecewise-linear cost table".into(),
            });
        }
        if model != 2.0 {
            return Err(Error::parse(
                format!("line {clineno} (mpc.gencost)"),
                format!("unknown cost model {model}"),
            ));
        }
        let n = c[3] as usize;
        if c.len() < 4 + n {
            return Err(Error::parse(
                format!("line {clineno} (mpc.gencost)"),
                format!("{n} coefficients declared, {} present", c.len() - 4),
            ));
        }
        let coeffs = &c[4..4 + n];
        let (h, b) = match n {
            3 => (coeffs[0], coeffs[1]),
            2 => (0.0, coeffs[0]),
            1 => (0.0, 0.0),
            _ => {
                return Err(Error::UnsupportedCost {
                    generator: k + 1,
                    reason: format!("polynomial of degree {}", n.saturating_sub(1)),
                })
            }
        };
        if !(h > 0.0) {
            return Err(Error::UnsupportedCost {
                generator: k + 1,
                reason: format!("quadratic coefficient {h} is not positive"),
            });
        }
        generators.push(Generator {
            bus,
            h,
            b,
            g_min: g[9],
            g_max: g[8],
        });
    }

    let overrides: BTreeMap<usize, f64> = ann.line_limit_overrides.iter().map(|o| (o.branch, o.limit)).collect();
    if let Some(&bad) = overrides.keys().find(|&&b| b == 0 || b > branch_rows.len()) {
        return Err(Error::invalid("known_branch", format!("override names branch {bad}")));
    }
    let mut lines = Vec::new();
    for (k, (lineno, r)) in branch_rows.iter().enumerate() {
        if r[10] <= 0.0 {
            if overrides.contains_key(&(k + 1)) {
                return Err(Error::invalid("known_branch", format!("override names out-of-service branch {}", k + 1)));
            }
            continue;
        }
        if r.len() > 9 && r[9] != 0.0 {
            log::warn!("branch {} phase shift {} ignored", k + 1, r[9]);
        }
        let tap = if r[8] == 0.0 { 1.0 } else { r[8] };
        let rate = r[5];
        let limit = match (overrides.get(&(k + 1)), ann.monitor) {
            (Some(&f), _) => Some(f),
            (None, MonitorPolicy::Overrides) => None,
            (None, MonitorPolicy::All) => (rate > 0.0).then_some(rate),
        };
        lines.push(Line {
            from: as_bus(r[0], *lineno, "branch")?,
            to: as_bus(r[1], *lineno, "branch")?,
            x: r[3] * tap,
            limit,
        });
    }

    let region_of = buses.iter().map(|&b| (b, ann.region_of(b))).collect();
    let (q_max, q_min) = match ann.interface {
        Some(i) => (i.q_max.unwrap_or(f64::INFINITY), i.q_min),
        None => (f64::INFINITY, None),
    };
    let network = Network::new(NetworkParts {
        buses,
        lines,
        generators,
        loads,
        region_of,
        declared_ties: None,
        proxy: [(Region::One, ann.proxy_buses.p1), (Region::Two, ann.proxy_buses.p2)]
            .into_iter()
            .collect(),
        q_max,
        q_min,
    })?;
    Ok((network, name))
}
