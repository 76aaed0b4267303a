//! Command-line harness: loads a case, runs one study and writes its artifacts.
//!
//! Every command writes into the output directory. Schedules go to
//! `schedule.json` and `summary.txt`, sampled curves to `curves_*.csv`, and
//! oracle scans to `scan.csv`. Sweeps write `sweep_sigma.csv` or `sweep_proxy.csv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use serde::Serialize;

use interchange::forecast::{MonteCarlo, PiecewiseOptions, QuadratureRule};
use interchange::netmodel::{parse_case_document, parse_matpower_with_annotation, BusId, CaseDocument};
use interchange::oracle::{grid_search_schedule, scan, scan_csv, OracleOptions, ScanGrid};
use interchange::scheduler::{IntersectOptions, ScheduleOptions};
use interchange::{Execution, Expectation, Forecast, GridSpec, InterfaceBid, Market, Network, PriceCurve, Region, Schedule};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "INTERCHANGE_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Tie optimization on the certainty-equivalent forecast.
    To,
    /// Stochastic tie optimization on expected curves.
    Sto,
    /// TO and STO side by side.
    Compare,
    /// Stochastic coordinated transaction scheduling with interface bids.
    Scts,
    /// Brute-force expected-cost scan.
    Oracle,
    /// Deterministic and expected price curves only.
    Curves,
    /// Parse and validate the case.
    Validate,
    /// TO and STO across normal-source standard deviations.
    SweepSigma,
    /// TO and STO across proxy-bus pairs.
    SweepProxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpectationKind {
    /// Closed-form integration over a single normal source per region.
    Piecewise,
    /// Gauss-Hermite tensor quadrature.
    Gh,
    /// Seeded Monte Carlo sampling.
    Mc,
}

/// Run configuration; every field has a command-line flag.
#[derive(Debug, Clone, Parser, Serialize)]
#[command(
    name = "interchange",
    version,
    about = "Two-region interchange scheduling studies",
    allow_negative_numbers = true
)]
pub struct RunConfig {
    /// Native JSON case, or a MATPOWER `.m` file with a region sidecar.
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long, value_enum)]
    pub cmd: Command,
    /// Sidecar for MATPOWER cases; defaults to `<stem>.regions.json` beside the case.
    #[arg(long)]
    pub annotation: Option<PathBuf>,
    /// Output directory; defaults to $INTERCHANGE_OUT, then `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Load override `BUS=MW`; repeatable. `--dN V` is accepted as shorthand.
    #[arg(long = "load", value_parser = parse_load)]
    pub loads: Vec<(BusId, f64)>,
    /// Standard deviation applied to every normal source.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Probabilities applied to every discrete source, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub pmf: Option<Vec<f64>>,
    /// Interface limit in MW, 1 -> 2.
    #[arg(long)]
    pub q_max: Option<f64>,
    /// Lower interface limit in MW; defaults to minus the upper one.
    #[arg(long)]
    pub q_min: Option<f64>,
    /// JSON array of interface bids; defaults to the case's bids.
    #[arg(long)]
    pub bids: Option<PathBuf>,
    /// Standard deviations for `sweep-sigma`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Vec<f64>,
    /// Proxy pairs `A:B` with A in region 1 and B in region 2, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_pair)]
    pub pairs: Vec<(BusId, BusId)>,
    /// How expectations over the forecast are taken.
    #[arg(long, value_enum, default_value = "piecewise")]
    pub expectation: ExpectationKind,
    /// Gauss-Hermite order per normal source.
    #[arg(long, default_value_t = 11)]
    pub order: usize,
    /// Sample count for `--expectation mc`.
    #[arg(long, default_value_t = 1000)]
    pub mc_samples: usize,
    /// Monte Carlo seed.
    #[arg(long, default_value_t = 0x5eed)]
    pub seed: u64,
    /// Uniform curve samples before adaptive refinement.
    #[arg(long, default_value_t = 201)]
    pub grid_points: usize,
    /// Curve refinement tolerance, $/MWh.
    #[arg(long, default_value_t = 1e-3)]
    pub price_tol: f64,
    /// Price gaps at most this large count as zero, $/MWh.
    #[arg(long, default_value_t = 1e-3)]
    pub gap_tol: f64,
    /// Oracle coarse scan step, MW.
    #[arg(long, default_value_t = 1.0)]
    pub coarse_step: f64,
    /// Oracle fine scan step, MW.
    #[arg(long, default_value_t = 0.1)]
    pub fine_step: f64,
    /// Half-width of the fine scan around the coarse argmin, MW.
    #[arg(long, default_value_t = 5.0)]
    pub window: f64,
    /// Run every sweep on the calling thread.
    #[arg(long)]
    pub sequential: bool,
}

fn parse_load(s: &str) -> std::result::Result<(BusId, f64), String> {
    let (b, v) = s.split_once('=').ok_or_else(|| format!("expected BUS=MW, got {s:?}"))?;
    let bus = b.trim().parse().map_err(|_| format!("bad bus {b:?}"))?;
    let mw = v.trim().parse().map_err(|_| format!("bad MW value {v:?}"))?;
    Ok((bus, mw))
}

fn parse_pair(s: &str) -> std::result::Result<(BusId, BusId), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected A:B, got {s:?}"))?;
    let a = a.trim().parse().map_err(|_| format!("bad bus {a:?}"))?;
    let b = b.trim().parse().map_err(|_| format!("bad bus {b:?}"))?;
    Ok((a, b))
}

/// Accepts `run` as an optional leading word, a command as the first
/// positional (`interchange sto --case ...`), and `--dN V` / `--dN=V` load flags.
pub fn normalize_args<I, S>(args: I) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let mut it = args.into_iter().map(Into::into);
    let mut out: Vec<String> = it.next().into_iter().collect();
    let mut rest: Vec<String> = it.collect();
    if rest.first().is_some_and(|a| a == "run") {
        rest.remove(0);
    }
    if rest.first().is_some_and(|a| !a.starts_with('-')) {
        out.push("--cmd".into());
    }
    let mut i = 0;
    while i < rest.len() {
        let a = &rest[i];
        let load = a.strip_prefix("--d").and_then(|t| {
            let (bus, val) = match t.split_once('=') {
                Some((b, v)) => (b, Some(v.to_string())),
                None => (t, None),
            };
            (!bus.is_empty() && bus.chars().all(|c| c.is_ascii_digit())).then(|| (bus.to_string(), val))
        });
        match load {
            Some((bus, Some(v))) => {
                out.push("--load".into());
                out.push(format!("{bus}={v}"));
            }
            Some((bus, None)) if i + 1 < rest.len() => {
                out.push("--load".into());
                out.push(format!("{bus}={}", rest[i + 1]));
                i += 1;
            }
            _ => out.push(a.clone()),
        }
        i += 1;
    }
    out
}

impl RunConfig {
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("price-tol", self.price_tol),
            ("gap-tol", self.gap_tol),
            ("coarse-step", self.coarse_step),
            ("fine-step", self.fine_step),
            ("window", self.window),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                bail!(interchange::Error::Validation {
                    invariant: "positive_parameter",
                    message: format!("--{name} must be positive, got {v}"),
                });
            }
        }
        for (name, v) in [("order", self.order), ("mc-samples", self.mc_samples), ("grid-points", self.grid_points)] {
            if v == 0 {
                bail!(interchange::Error::Validation {
                    invariant: "positive_parameter",
                    message: format!("--{name} must be positive"),
                });
            }
        }
        if self.sigma.is_some_and(|s| s.is_nan() || s < 0.0) || self.sigmas.iter().any(|s| s.is_nan() || *s < 0.0) {
            bail!(interchange::Error::Validation {
                invariant: "nonnegative_sigma",
                message: "standard deviations must be nonnegative".into(),
            });
        }
        Ok(())
    }

    pub fn schedule_options(&self) -> ScheduleOptions {
        let expectation = match self.expectation {
            ExpectationKind::Piecewise => Expectation::PiecewiseNormal(PiecewiseOptions::default()),
            ExpectationKind::Gh => Expectation::Quadrature(QuadratureRule::gauss_hermite(self.order)),
            ExpectationKind::Mc => Expectation::Quadrature(QuadratureRule::MonteCarlo(MonteCarlo {
                samples: self.mc_samples,
                seed: self.seed,
            })),
        };
        ScheduleOptions {
            grid: GridSpec {
                points: self.grid_points,
                price_tol: self.price_tol,
                ..GridSpec::default()
            },
            expectation,
            intersect: IntersectOptions {
                gap_tol: self.gap_tol,
                ..IntersectOptions::default()
            },
            execution: self.execution(),
            ..ScheduleOptions::default()
        }
    }

    pub fn oracle_options(&self) -> OracleOptions {
        OracleOptions {
            execution: self.execution(),
            ..OracleOptions::default()
        }
    }

    fn scan_grid(&self) -> ScanGrid {
        ScanGrid {
            coarse_step: self.coarse_step,
            fine_step: self.fine_step,
            window: self.window,
        }
    }
}

/// Reads the case and applies every override in the config.
pub fn load_case(config: &RunConfig) -> Result<CaseDocument> {
    let path = &config.case;
    let text = fs::read_to_string(path).with_context(|| format!("reading case {}", path.display()))?;
    let mut doc = if path.extension().is_some_and(|e| e == "m") {
        let ann_path = config.annotation.clone().unwrap_or_else(|| sidecar_path(path));
        let ann = fs::read_to_string(&ann_path).with_context(|| format!("reading annotation {}", ann_path.display()))?;
        parse_matpower_with_annotation(&text, &ann).with_context(|| format!("case {}", path.display()))?
    } else {
        parse_case_document(&text).with_context(|| format!("case {}", path.display()))?
    };
    if !config.loads.is_empty() {
        let overrides: BTreeMap<BusId, f64> = config.loads.iter().copied().collect();
        doc.network = doc.network.with_loads(&overrides)?;
    }
    if config.q_max.is_some() || config.q_min.is_some() {
        let iface = doc.network.interface();
        doc.network = doc
            .network
            .with_interface(config.q_max.unwrap_or(iface.q_max), config.q_min.or(Some(iface.q_min)))?;
    }
    if let Some(s) = config.sigma {
        doc.forecast = doc.forecast.with_normal_std(s);
    }
    if let Some(p) = &config.pmf {
        doc.forecast = doc.forecast.with_discrete_probs(p)?;
    }
    if let Some(b) = &config.bids {
        let text = fs::read_to_string(b).with_context(|| format!("reading bids {}", b.display()))?;
        let bids: Vec<InterfaceBid> = serde_json::from_str(&text).map_err(|e| interchange::Error::Parse {
            location: format!("{} line {} column {}", b.display(), e.line(), e.column()),
            message: e.to_string(),
        })?;
        for bid in &bids {
            bid.validate()?;
        }
        doc.bids = bids;
    }
    Ok(doc)
}

fn sidecar_path(case: &Path) -> PathBuf {
    let stem = case.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    case.with_file_name(format!("{stem}.regions.json"))
}

/// One row of `summary.txt`, evaluated under the full forecast.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub q: f64,
    pub expected_cost: f64,
    /// Importer minus exporter expected price at `q`.
    pub expected_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleDocument {
    pub case: Option<String>,
    pub command: Command,
    pub schedules: Vec<Schedule>,
    pub summary: Vec<SummaryRow>,
}

/// What a run produced, for callers that embed the harness.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub summary: Vec<SummaryRow>,
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: PathBuf) -> Result<Writer> {
        fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Writer { dir, files: Vec::new() })
    }

    fn write(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(path);
        Ok(())
    }

    fn curve(&mut self, tag: &str, c: &PriceCurve) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(["q", "price", "degenerate"])?;
        for i in 0..c.len() {
            w.write_record([c.q[i].to_string(), c.price[i].to_string(), c.degenerate[i].to_string()])?;
        }
        let body = String::from_utf8(w.into_inner()?)?;
        let r = match c.region {
            Region::One => 1,
            Region::Two => 2,
        };
        self.write(&format!("curves_{tag}_region{r}.csv"), &body)
    }

    fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        let body = String::from_utf8(w.into_inner()?)?;
        self.write(name, &body)
    }
}

/// Expected cost and importer-minus-exporter gap under `forecast` at `q`.
fn evaluate(network: &Network, forecast: &Forecast, method: &str, s: &Schedule, config: &RunConfig) -> Result<SummaryRow> {
    let sc = scan(network, forecast, &[s.q], &config.oracle_options())?;
    Ok(SummaryRow {
        method: method.to_string(),
        q: s.q,
        expected_cost: sc.expected_cost[0],
        expected_gap: s.direction.axis() * sc.expected_gap[0],
    })
}

pub fn summary_text(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<8} {:>24} {:>24} {:>24}", "Method", "q*", "E[Cost(q*)]", "E[dpi(q*)]");
    for r in rows {
        let _ = writeln!(out, "{:<8} {:>24} {:>24} {:>24}", r.method, r.q, r.expected_cost, r.expected_gap);
    }
    out
}

fn finish(w: &mut Writer, doc: &CaseDocument, config: &RunConfig, schedules: Vec<Schedule>, summary: Vec<SummaryRow>) -> Result<()> {
    let sd = ScheduleDocument {
        case: doc.name.clone(),
        command: config.cmd,
        schedules,
        summary: summary.clone(),
    };
    w.write("schedule.json", &(serde_json::to_string_pretty(&sd)? + "\n"))?;
    w.write("summary.txt", &summary_text(&summary))
}

fn market_to(doc: &CaseDocument, config: &RunConfig) -> Result<(Schedule, Market)> {
    Ok(interchange::to_schedule(&doc.network, &doc.forecast, &config.schedule_options())?)
}

fn market_sto(doc: &CaseDocument, config: &RunConfig) -> Result<(Schedule, Market)> {
    Ok(interchange::sto_schedule(&doc.network, &doc.forecast, &config.schedule_options())?)
}

pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let doc = load_case(config)?;
    let mut w = Writer::new(config.out_dir())?;
    let mut summary = Vec::new();
    match config.cmd {
        Command::Validate => {
            let n = &doc.network;
            let mut text = String::new();
            let _ = writeln!(text, "case: {}", doc.name.as_deref().unwrap_or("(unnamed)"));
            let _ = writeln!(text, "buses: {}", n.buses().len());
            let _ = writeln!(text, "lines: {}", n.lines().len());
            let _ = writeln!(text, "tie lines: {}", n.tie_lines().len());
            let _ = writeln!(text, "generators: {}", n.generators().len());
            let _ = writeln!(text, "stochastic sources: {}", doc.forecast.injections().count());
            let _ = writeln!(text, "bids: {}", doc.bids.len());
            w.write("summary.txt", &text)?;
        }
        Command::To | Command::Sto => {
            let (s, m, tag) = if config.cmd == Command::To {
                let (s, m) = market_to(&doc, config)?;
                (s, m, "TO")
            } else {
                let (s, m) = market_sto(&doc, config)?;
                (s, m, "STO")
            };
            for c in &m.curves {
                w.curve(tag, c)?;
            }
            summary.push(evaluate(&doc.network, &doc.forecast, tag, &s, config)?);
            finish(&mut w, &doc, config, vec![s], summary.clone())?;
        }
        Command::Compare => {
            let (to, mto) = market_to(&doc, config)?;
            let (sto, msto) = market_sto(&doc, config)?;
            for c in &mto.curves {
                w.curve("TO", c)?;
            }
            for c in &msto.curves {
                w.curve("STO", c)?;
            }
            summary.push(evaluate(&doc.network, &doc.forecast, "TO", &to, config)?);
            summary.push(evaluate(&doc.network, &doc.forecast, "STO", &sto, config)?);
            finish(&mut w, &doc, config, vec![to, sto], summary.clone())?;
        }
        Command::Scts => {
            let m = Market::build(&doc.network, &doc.forecast, &config.schedule_options())?;
            let s = m.scts(&doc.bids)?;
            for c in &m.curves {
                w.curve("SCTS", c)?;
            }
            summary.push(evaluate(&doc.network, &doc.forecast, "SCTS", &s, config)?);
            finish(&mut w, &doc, config, vec![s], summary.clone())?;
        }
        Command::Oracle => {
            let sc = grid_search_schedule(&doc.network, &doc.forecast, &config.scan_grid(), &config.oracle_options())?;
            w.write("scan.csv", &scan_csv(&sc))?;
            let k = sc.q.iter().position(|&q| q == sc.argmin).unwrap_or(0);
            summary.push(SummaryRow {
                method: "Oracle".into(),
                q: sc.argmin,
                expected_cost: sc.min_cost,
                expected_gap: sc.argmin.signum() * sc.expected_gap[k],
            });
            finish(&mut w, &doc, config, Vec::new(), summary.clone())?;
        }
        Command::Curves => {
            let (_, mto) = market_to(&doc, config)?;
            let msto = Market::build(&doc.network, &doc.forecast, &config.schedule_options())?;
            for c in &mto.curves {
                w.curve("TO", c)?;
            }
            for c in &msto.curves {
                w.curve("STO", c)?;
            }
        }
        Command::SweepSigma => {
            if config.sigmas.is_empty() {
                bail!(interchange::Error::Validation {
                    invariant: "sigmas_given",
                    message: "sweep-sigma needs --sigmas".into(),
                });
            }
            let mut rows = Vec::new();
            for &sigma in &config.sigmas {
                let f = doc.forecast.with_normal_std(sigma);
                let d = CaseDocument {
                    forecast: f.clone(),
                    ..doc.clone()
                };
                let (to, _) = market_to(&d, config)?;
                let (sto, _) = market_sto(&d, config)?;
                let a = evaluate(&d.network, &f, "TO", &to, config)?;
                let b = evaluate(&d.network, &f, "STO", &sto, config)?;
                rows.push(vec![sigma, a.q, b.q, a.expected_cost, b.expected_cost, a.expected_gap, b.expected_gap]);
            }
            w.table(
                "sweep_sigma.csv",
                &["sigma", "q_to", "q_sto", "cost_to", "cost_sto", "gap_to", "gap_sto"],
                &rows,
            )?;
        }
        Command::SweepProxy => {
            if config.pairs.is_empty() {
                bail!(interchange::Error::Validation {
                    invariant: "pairs_given",
                    message: "sweep-proxy needs --pairs".into(),
                });
            }
            let mut rows = Vec::new();
            for &(a, b) in &config.pairs {
                // Region 1's proxy lies in region 2 and vice versa.
                let network = doc.network.with_proxies(b, a)?;
                let d = CaseDocument {
                    network: network.clone(),
                    ..doc.clone()
                };
                let (to, _) = market_to(&d, config)?;
                let (sto, _) = market_sto(&d, config)?;
                let x = evaluate(&network, &d.forecast, "TO", &to, config)?;
                let y = evaluate(&network, &d.forecast, "STO", &sto, config)?;
                rows.push(vec![a as f64, b as f64, x.q, y.q, x.expected_cost, y.expected_cost]);
            }
            w.table(
                "sweep_proxy.csv",
                &["bus_region1", "bus_region2", "q_to", "q_sto", "cost_to", "cost_sto"],
                &rows,
            )?;
        }
    }
    Ok(RunOutcome { files: w.files, summary })
}

/// Machine-readable failure report.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorDocument {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
    /// Outermost context first.
    pub context: Vec<String>,
}

/// 1 for parse, validation and I/O problems, 2 for infeasibility, 3 for numerical failures.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use interchange::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InfeasibleDispatch { .. }
                | E::InfeasibleScenario { .. }
                | E::EmptyDomain { .. }
                | E::OutOfDomain { .. }
                | E::DomainMismatch(_) => 2,
                E::NumericalFailure(_) | E::IterationLimit(_) => 3,
                _ => 1,
            };
        }
    }
    1
}

pub fn error_document(err: &anyhow::Error) -> ErrorDocument {
    let kind = err
        .chain()
        .find_map(|c| c.downcast_ref::<interchange::Error>().map(|e| e.kind().to_string()))
        .or_else(|| err.chain().find_map(|c| c.downcast_ref::<std::io::Error>().map(|_| "io".to_string())))
        .unwrap_or_else(|| "other".to_string());
    ErrorDocument {
        kind,
        message: format!("{err:#}"),
        exit_code: exit_code(err),
        context: err.chain().map(|c| c.to_string()).collect(),
    }
}
