//! Native JSON case documents. The schema is described in `docs/case-format.md`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BusId, Generator, Line, Network, NetworkParts, Region};
use crate::error::{Error, Result};
use crate::forecast::{Distribution, Forecast, StochasticInjection};
use crate::scheduler::InterfaceBid;

/// Everything a native case file can carry.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseDocument {
    pub name: Option<String>,
    pub network: Network,
    pub forecast: Forecast,
    pub bids: Vec<InterfaceBid>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    buses: Vec<BusId>,
    lines: Vec<RawLine>,
    generators: Vec<RawGenerator>,
    #[serde(default)]
    loads: BTreeMap<String, f64>,
    regions: BTreeMap<String, Vec<BusId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tie: Option<Vec<[BusId; 2]>>,
    proxy: BTreeMap<String, BusId>,
    interface: RawInterface,
    #[serde(default)]
    forecasts: Vec<RawInjection>,
    #[serde(default)]
    bids: Vec<InterfaceBid>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    from: BusId,
    to: BusId,
    x: f64,
    /// `null` or absent: unmonitored.
    #[serde(default)]
    limit: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGenerator {
    bus: BusId,
    h: f64,
    b: f64,
    #[serde(default)]
    g_min: f64,
    g_max: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInterface {
    /// `null` means unlimited.
    #[serde(rename = "Q_max")]
    q_max: Option<f64>,
    #[serde(rename = "Q_min", default, skip_serializing_if = "Option::is_none")]
    q_min: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RawValues {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl RawValues {
    fn into_vec(self, n: usize) -> Vec<f64> {
        match self {
            RawValues::Scalar(v) => vec![v; n],
            RawValues::Vector(v) => v,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum RawDistribution {
    PointMass(RawValues),
    Normal { mean: f64, std: f64 },
    Discrete { values: Vec<RawValues>, probs: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawInjection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bus: Option<BusId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    buses: Option<Vec<BusId>>,
    distribution: RawDistribution,
}

fn region_key(key: &str, section: &str) -> Result<Region> {
    match key {
        "1" => Ok(Region::One),
        "2" => Ok(Region::Two),
        other => Err(Error::parse(section, format!("region key must be \"1\" or \"2\", got {other:?}"))),
    }
}

pub(crate) fn injections_from_raw(raw: Vec<RawInjection>) -> Result<Vec<StochasticInjection>> {
    raw.into_iter()
        .enumerate()
        .map(|(i, f)| {
            let buses = match (f.bus, f.buses) {
                (Some(b), None) => vec![b],
                (None, Some(bs)) => bs,
                _ => return Err(Error::parse(format!("forecasts[{i}]"), "give exactly one of `bus` or `buses`")),
            };
            let n = buses.len();
            let dist = match f.distribution {
                RawDistribution::PointMass(v) => Distribution::PointMass(v.into_vec(n)),
                RawDistribution::Normal { mean, std } => Distribution::Normal { mean, std },
                RawDistribution::Discrete { values, probs } => Distribution::Discrete {
                    values: values.into_iter().map(|v| v.into_vec(n)).collect(),
                    probs,
                },
            };
            Ok(StochasticInjection { buses, dist })
        })
        .collect()
}

fn json_error(e: serde_json::Error) -> Error {
    Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string())
}

/// Parses a native case and returns only its network.
pub fn parse_case(text: &str) -> Result<Network> {
    parse_case_document(text).map(|c| c.network)
}

pub fn parse_case_document(text: &str) -> Result<CaseDocument> {
    let raw: RawCase = serde_json::from_str(text).map_err(json_error)?;

    let mut region_of = BTreeMap::new();
    for (key, members) in &raw.regions {
        let r = region_key(key, "regions")?;
        for &b in members {
            if region_of.insert(b, r).is_some() {
                return Err(Error::invalid("region_partition", format!("bus {b} assigned twice")));
            }
        }
    }
    let mut loads = BTreeMap::new();
    for (key, &v) in &raw.loads {
        let bus: BusId = key
            .parse()
            .map_err(|_| Error::parse(format!("loads.{key}"), "load keys must be bus numbers"))?;
        loads.insert(bus, v);
    }
    let mut proxy = BTreeMap::new();
    for (key, &b) in &raw.proxy {
        proxy.insert(region_key(key, "proxy")?, b);
    }
    let network = Network::new(NetworkParts {
        buses: raw.buses,
        lines: raw
            .lines
            .into_iter()
            .map(|l| Line {
                from: l.from,
                to: l.to,
                x: l.x,
                limit: l.limit,
            })
            .collect(),
        generators: raw
            .generators
            .into_iter()
            .map(|g| Generator {
                bus: g.bus,
                h: g.h,
                b: g.b,
                g_min: g.g_min,
                g_max: g.g_max,
            })
            .collect(),
        loads,
        region_of,
        declared_ties: raw.tie.map(|t| t.into_iter().map(|[a, b]| (a, b)).collect()),
        proxy,
        q_max: raw.interface.q_max.unwrap_or(f64::INFINITY),
        q_min: raw.interface.q_min,
    })?;

    let injections = injections_from_raw(raw.forecasts)?;
    let forecast = Forecast::new(&network, injections)?;
    for (i, bid) in raw.bids.iter().enumerate() {
        bid.validate().map_err(|e| match e {
            Error::Validation { invariant, message } => Error::Validation {
                invariant,
                message: format!("bids[{i}]: {message}"),
            },
            other => other,
        })?;
    }
    Ok(CaseDocument {
        name: raw.name,
        network,
        forecast,
        bids: raw.bids,
    })
}

/// Serializes a case; `parse_case_document(emit_case(c))` reproduces `c`.
pub fn emit_case(case: &CaseDocument) -> String {
    let net = &case.network;
    let mut regions: BTreeMap<String, Vec<BusId>> = BTreeMap::new();
    for r in Region::BOTH {
        regions.insert(r.to_string(), net.buses_in(r));
    }
    let finite = |v: f64| v.is_finite().then_some(v);
    let iface = net.interface();
    let raw = RawCase {
        name: case.name.clone(),
        buses: net.buses().to_vec(),
        lines: net
            .lines()
            .iter()
            .map(|l| RawLine {
                from: l.from,
                to: l.to,
                x: l.x,
                limit: l.limit,
            })
            .collect(),
        generators: net
            .generators()
            .iter()
            .map(|g| RawGenerator {
                bus: g.bus,
                h: g.h,
                b: g.b,
                g_min: g.g_min,
                g_max: g.g_max,
            })
            .collect(),
        loads: net.loads().iter().map(|(b, v)| (b.to_string(), *v)).collect(),
        regions,
        tie: Some(net.tie_lines().iter().map(|&i| [net.lines()[i].from, net.lines()[i].to]).collect()),
        proxy: Region::BOTH.iter().map(|&r| (r.to_string(), net.proxy_bus(r))).collect(),
        interface: RawInterface {
            q_max: finite(iface.q_max),
            q_min: finite(iface.q_min),
        },
        forecasts: case
            .forecast
            .injections()
            .map(|inj| RawInjection {
                bus: None,
                buses: Some(inj.buses.clone()),
                distribution: match &inj.dist {
                    Distribution::PointMass(v) => RawDistribution::PointMass(RawValues::Vector(v.clone())),
                    Distribution::Normal { mean, std } => RawDistribution::Normal { mean: *mean, std: *std },
                    Distribution::Discrete { values, probs } => RawDistribution::Discrete {
                        values: values.iter().cloned().map(RawValues::Vector).collect(),
                        probs: probs.clone(),
                    },
                },
            })
            .collect(),
        bids: case.bids.clone(),
    };
    let mut s = serde_json::to_string_pretty(&raw).expect("case serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "buses": [1, 2],
        "lines": [{"from": 1, "to": 2, "x": 0.1, "limit": 100}],
        "generators": [
            {"bus": 1, "h": 0.01, "b": 10, "g_max": 120},
            {"bus": 2, "h": 0.01, "b": 45, "g_max": 120}
        ],
        "loads": {"2": 50},
        "regions": {"1": [1], "2": [2]},
        "proxy": {"1": 2, "2": 1},
        "interface": {"Q_max": 80}
    }"#;

    #[test]
    fn minimal_two_bus() {
        let c = parse_case_document(MINIMAL).unwrap();
        assert_eq!(c.network.tie_lines(), &[0]);
        assert_eq!(c.network.interface().q_min, -80.0);
        assert_eq!(c.network.buses_in(Region::One), vec![1]);
    }

    #[test]
    fn syntax_error_has_location() {
        let err = parse_case("{\n  \"buses\": [1,\n").unwrap_err();
        match err {
            Error::Parse { location, .. } => assert!(location.starts_with("line "), "{location}"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn unknown_field_is_parse_error() {
        let text = MINIMAL.replace("\"loads\"", "\"lodes\"");
        assert!(matches!(parse_case(&text), Err(Error::Parse { .. })));
    }

    #[test]
    fn unknown_generator_bus() {
        let text = MINIMAL.replace("{\"bus\": 2, \"h\"", "{\"bus\": 7, \"h\"");
        let err = parse_case(&text).unwrap_err();
        assert!(err.to_string().contains("bus 7"), "{err}");
    }

    #[test]
    fn round_trip_is_identical() {
        let mut text = MINIMAL.replace(
            "\"interface\": {\"Q_max\": 80}",
            r#""interface": {"Q_max": 80, "Q_min": -20},
               "forecasts": [{"bus": 1, "distribution": {"normal": {"mean": 5.5, "std": 0.1}}},
                             {"buses": [2], "distribution": {"discrete": {"values": [1, 2.5], "probs": [0.25, 0.75]}}}],
               "bids": [{"direction": "1->2", "quantity": 20, "price": 2}]"#,
        );
        text = text.replace("\"limit\": 100", "\"limit\": null");
        let c = parse_case_document(&text).unwrap();
        let again = parse_case_document(&emit_case(&c)).unwrap();
        assert_eq!(c, again);
        assert_eq!(emit_case(&c), emit_case(&again));
    }

    #[test]
    fn unlimited_interface() {
        let text = MINIMAL.replace("{\"Q_max\": 80}", "{\"Q_max\": null}");
        let c = parse_case_document(&text).unwrap();
        assert_eq!(c.network.interface().q_max, f64::INFINITY);
        assert_eq!(c.network.interface().q_min, f64::NEG_INFINITY);
        assert_eq!(parse_case_document(&emit_case(&c)).unwrap(), c);
    }
}
