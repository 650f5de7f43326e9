//! Seed by load by policy sweeps, their CSV outputs and figure data.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run, RunResult, RunStats, Scenario};
use crate::error::SimError;
use crate::metrics::{
    availability, e2e_latency_stats, late_deliveries, mean_ci95, mean_of_present, prob_availability_above,
    qos_met_fraction, SliceSelector,
};
use crate::model::{SimTime, SliceType};
use crate::scheduler::Policy;
use crate::trace::TransitionRecord;

/// Environment variable overriding the number of parallel runs.
pub const WORKERS_ENV: &str = "SLICESIM_WORKERS";

/// Availability window length used by sweeps.
pub const AVAILABILITY_WINDOW: SimTime = SimTime::from_secs(1);

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub base: Scenario,
    /// Active RG fractions.
    pub loads: Vec<f64>,
    pub policies: Vec<Policy>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidSweep(m.to_string()));
        if self.loads.is_empty() {
            return bad("no load points");
        }
        if self.policies.is_empty() {
            return bad("no policies");
        }
        if self.seeds.is_empty() {
            return bad("no seeds");
        }
        if let Some(l) = self.loads.iter().find(|&&l| !(l > 0.0 && l <= 1.0)) {
            return Err(SimError::InvalidSweep(format!("load {l} outside (0, 1]")));
        }
        self.base.validate()
    }

    /// Scenario for one cell of the sweep.
    pub fn scenario(&self, policy: Policy, load: f64, seed: u64) -> Scenario {
        let mut s = self.base.clone();
        s.policy.policy = policy;
        s.active_fraction = load;
        s.seed = seed;
        s
    }

    /// All `(policy, load, seed)` runs in output order.
    pub fn jobs(&self) -> Vec<(Policy, f64, u64)> {
        let mut v = Vec::with_capacity(self.policies.len() * self.loads.len() * self.seeds.len());
        for &p in &self.policies {
            for &l in &self.loads {
                for &s in &self.seeds {
                    v.push((p, l, s));
                }
            }
        }
        v
    }
}

/// Metrics of one slice selection in one run.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SliceSummary {
    pub mean_latency_ms: Option<f64>,
    pub availability: Option<f64>,
    pub qos_met: Option<f64>,
    pub delivered: usize,
}

/// Everything the aggregates need from one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub policy: Policy,
    pub load: f64,
    pub seed: u64,
    pub slices: BTreeMap<SliceSelector, SliceSummary>,
    /// Delivered packets of any slice that arrived after their deadline.
    pub late_deliveries: usize,
    pub stats: RunStats,
    pub transitions: Vec<TransitionRecord>,
    pub warmup_us: u64,
    pub end_us: u64,
}

impl RunSummary {
    pub fn slice(&self, sel: impl Into<SliceSelector>) -> SliceSummary {
        self.slices.get(&sel.into()).copied().unwrap_or_default()
    }

    /// Packet conservation and per-interval capacity both hold.
    pub fn conserved(&self) -> bool {
        let s = &self.stats;
        s.generated == s.delivered + s.dropped_expired + s.lost_retx + s.in_flight && s.max_overallocation <= 0
    }
}

pub fn summarize(policy: Policy, load: f64, seed: u64, r: &RunResult) -> RunSummary {
    let mut slices = BTreeMap::new();
    for sel in SliceSelector::ALL {
        let lat = e2e_latency_stats(&r.trace, sel);
        slices.insert(
            sel,
            SliceSummary {
                mean_latency_ms: lat.map(|l| l.mean_ms),
                availability: availability(&r.trace, sel, AVAILABILITY_WINDOW),
                qos_met: qos_met_fraction(&r.trace, sel),
                delivered: lat.map_or(0, |l| l.count),
            },
        );
    }
    RunSummary {
        policy,
        load,
        seed,
        slices,
        late_deliveries: SliceType::ALL.iter().map(|&t| late_deliveries(&r.trace, t)).sum(),
        stats: r.stats.clone(),
        transitions: r.transitions.clone(),
        warmup_us: r.trace.warmup_us,
        end_us: r.trace.end_us,
    }
}

/// Worker count from [`WORKERS_ENV`], if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    let v = std::env::var(WORKERS_ENV).ok()?;
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => Some(n),
        _ => {
            warn!("ignoring {WORKERS_ENV}={v:?}");
            None
        }
    }
}

pub fn trace_file_name(policy: Policy, load: f64, seed: u64) -> String {
    format!("{policy}_load{:.2}_seed{seed}.csv", load)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutput {
    pub runs: Vec<RunSummary>,
    pub aggregate: Vec<AggregateRow>,
}

/// Runs every cell of the sweep in parallel. With `out`, writes one trace
/// per run under `out/traces/`, plus `runs.csv` and `aggregate.csv`.
pub fn run_sweep(spec: &SweepSpec, out: Option<&Path>) -> Result<SweepOutput, SimError> {
    spec.validate()?;
    let trace_dir = match out {
        Some(dir) => {
            let t = dir.join("traces");
            fs::create_dir_all(&t).map_err(|e| SimError::Config {
                path: t.display().to_string(),
                message: format!("cannot create output directory: {e}"),
            })?;
            Some(t)
        }
        None => None,
    };
    let jobs = spec.jobs();
    let total = jobs.len();
    info!("running {total} simulations");
    let one = |&(policy, load, seed): &(Policy, f64, u64)| -> Result<RunSummary, SimError> {
        let scenario = spec.scenario(policy, load, seed);
        let result = run(&scenario)?;
        if let Some(dir) = &trace_dir {
            let path = dir.join(trace_file_name(policy, load, seed));
            result.trace.write_csv(BufWriter::new(File::create(path)?))?;
        }
        Ok(summarize(policy, load, seed, &result))
    };
    let results: Vec<Result<RunSummary, SimError>> = match workers_from_env() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| SimError::InvalidSweep(e.to_string()))?
            .install(|| jobs.par_iter().map(one).collect()),
        None => jobs.par_iter().map(one).collect(),
    };
    let mut runs = Vec::with_capacity(total);
    let mut failures = Vec::new();
    for (job, r) in jobs.iter().zip(results) {
        match r {
            Ok(s) => runs.push(s),
            Err(e) => failures.push(format!("{} load {} seed {}: {e}", job.0, job.1, job.2)),
        }
    }
    let aggregate = aggregate(&runs);
    if let Some(dir) = out {
        write_runs_csv(&runs, File::create(dir.join("runs.csv"))?)?;
        write_transitions_csv(&runs, File::create(dir.join("transitions.csv"))?)?;
        write_aggregate_csv(&aggregate, File::create(dir.join("aggregate.csv"))?)?;
    }
    if !failures.is_empty() {
        return Err(SimError::RunsFailed {
            n: failures.len(),
            total,
            first: failures.swap_remove(0),
        });
    }
    Ok(SweepOutput { runs, aggregate })
}

#[derive(Serialize)]
struct RunRow<'a> {
    policy: &'a str,
    active_fraction: f64,
    seed: u64,
    slice_type: &'a str,
    mean_latency_ms: Option<f64>,
    availability: Option<f64>,
    qos_met: Option<f64>,
    delivered: usize,
    late_deliveries: usize,
    generated: u64,
    delivered_all: u64,
    dropped_expired: u64,
    lost_retx: u64,
    in_flight: u64,
    max_overallocation: i64,
    warmup_us: u64,
    end_us: u64,
}

pub fn write_runs_csv<W: Write>(runs: &[RunSummary], w: W) -> Result<(), SimError> {
    let mut out = csv::Writer::from_writer(w);
    for r in runs {
        for (sel, s) in &r.slices {
            out.serialize(RunRow {
                policy: r.policy.as_str(),
                active_fraction: r.load,
                seed: r.seed,
                slice_type: sel.as_str(),
                mean_latency_ms: s.mean_latency_ms,
                availability: s.availability,
                qos_met: s.qos_met,
                delivered: s.delivered,
                late_deliveries: r.late_deliveries,
                generated: r.stats.generated,
                delivered_all: r.stats.delivered,
                dropped_expired: r.stats.dropped_expired,
                lost_retx: r.stats.lost_retx,
                in_flight: r.stats.in_flight,
                max_overallocation: r.stats.max_overallocation,
                warmup_us: r.warmup_us,
                end_us: r.end_us,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TransitionRow<'a> {
    policy: &'a str,
    active_fraction: f64,
    seed: u64,
    patient: usize,
    kind: &'a str,
    requested_us: u64,
    effective_us: Option<u64>,
}

/// Every slice transition of every run; a rejected request has no `effective_us`.
pub fn write_transitions_csv<W: Write>(runs: &[RunSummary], w: W) -> Result<(), SimError> {
    let mut out = csv::Writer::from_writer(w);
    for r in runs {
        for t in &r.transitions {
            out.serialize(TransitionRow {
                policy: r.policy.as_str(),
                active_fraction: r.load,
                seed: r.seed,
                patient: t.patient,
                kind: t.kind.as_str(),
                requested_us: t.requested_us,
                effective_us: t.effective_us,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One `(policy, load, slice type)` cell aggregated over seeds.
#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub policy: Policy,
    pub active_fraction: f64,
    pub slice_type: String,
    pub mean_latency_ms: Option<f64>,
    pub pr_A_gt_099: Option<f64>,
    pub qos_met: Option<f64>,
    pub seeds: usize,
    /// Half-width of the 95% interval of `qos_met`.
    pub ci95: Option<f64>,
    pub latency_ci95: Option<f64>,
    pub pr_A_ci95: Option<f64>,
}

impl AggregateRow {
    pub fn selector(&self) -> Option<SliceSelector> {
        self.slice_type.parse().ok()
    }
}

fn load_key(load: f64) -> i64 {
    (load * 10_000.0).round() as i64
}

/// Aggregates run summaries per `(policy, load, slice selection)`.
pub fn aggregate(runs: &[RunSummary]) -> Vec<AggregateRow> {
    let mut cells: BTreeMap<(Policy, i64), Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        cells.entry((r.policy, load_key(r.load))).or_default().push(r);
    }
    let mut rows = Vec::new();
    for ((policy, _), rs) in cells {
        let load = rs[0].load;
        for sel in SliceSelector::ALL {
            let label = format!("{policy} load {load:.2} {sel}");
            let lat: Vec<Option<f64>> = rs.iter().map(|r| r.slice(sel).mean_latency_ms).collect();
            let qos: Vec<Option<f64>> = rs.iter().map(|r| r.slice(sel).qos_met).collect();
            let avail: Vec<f64> = rs.iter().filter_map(|r| r.slice(sel).availability).collect();
            let above: Vec<f64> = avail.iter().map(|&a| if a > 0.99 { 1.0 } else { 0.0 }).collect();
            let lat = mean_of_present(&format!("{label} latency"), &lat);
            let qos = mean_of_present(&format!("{label} qos"), &qos);
            rows.push(AggregateRow {
                policy,
                active_fraction: load,
                slice_type: sel.as_str().to_string(),
                mean_latency_ms: lat.map(|x| x.0),
                pr_A_gt_099: prob_availability_above(&avail, 0.99),
                qos_met: qos.map(|x| x.0),
                seeds: rs.len(),
                ci95: qos.map(|x| x.1),
                latency_ci95: lat.map(|x| x.1),
                pr_A_ci95: mean_ci95(&above).map(|x| x.1),
            });
        }
    }
    rows
}

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], w: W) -> Result<(), SimError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_aggregate_csv<R: Read>(r: R) -> Result<Vec<AggregateRow>, SimError> {
    let mut rdr = csv::Reader::from_reader(r);
    let rows: Result<Vec<AggregateRow>, csv::Error> = rdr.deserialize().collect();
    Ok(rows?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Figure {
    Latency,
    Availability,
    Qos,
}

impl Figure {
    pub fn as_str(self) -> &'static str {
        match self {
            Figure::Latency => "latency",
            Figure::Availability => "availability",
            Figure::Qos => "qos",
        }
    }

    /// Slice selections plotted by the figure.
    pub fn selections(self) -> Vec<SliceSelector> {
        match self {
            Figure::Latency => SliceType::ALL.iter().map(|&t| t.into()).collect(),
            Figure::Availability => SliceSelector::ALL.to_vec(),
            Figure::Qos => vec![SliceType::Emergency.into()],
        }
    }

    fn value(self, r: &AggregateRow) -> (Option<f64>, Option<f64>) {
        match self {
            Figure::Latency => (r.mean_latency_ms, r.latency_ci95),
            Figure::Availability => (r.pr_A_gt_099, r.pr_A_ci95),
            Figure::Qos => (r.qos_met, r.ci95),
        }
    }
}

impl std::str::FromStr for Figure {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "latency" => Ok(Figure::Latency),
            "availability" => Ok(Figure::Availability),
            "qos" => Ok(Figure::Qos),
            other => Err(format!(
                "unknown figure `{other}` (expected latency, availability or qos)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub policy: Policy,
    pub active_fraction: f64,
    pub slice_type: String,
    pub value: f64,
    pub ci95: f64,
}

/// Long-format plot data for one figure. Every `(policy, load)` pair seen in
/// the aggregate must have a row for each plotted slice; cells whose value is
/// empty (e.g. no emergency traffic) are skipped with a warning.
pub fn emit_figure_data(rows: &[AggregateRow], figure: Figure) -> Result<Vec<FigureRow>, SimError> {
    let policies: BTreeSet<Policy> = rows.iter().map(|r| r.policy).collect();
    let mut loads: BTreeMap<i64, f64> = BTreeMap::new();
    for r in rows {
        loads.entry(load_key(r.active_fraction)).or_insert(r.active_fraction);
    }
    let mut index: BTreeMap<(Policy, i64, SliceSelector), &AggregateRow> = BTreeMap::new();
    for r in rows {
        if let Some(sel) = r.selector() {
            index.insert((r.policy, load_key(r.active_fraction), sel), r);
        }
    }
    let mut missing = Vec::new();
    let mut out = Vec::new();
    for &p in &policies {
        for (&k, &load) in &loads {
            for sel in figure.selections() {
                match index.get(&(p, k, sel)) {
                    None => missing.push(format!("{p}/{load:.2}/{sel}")),
                    Some(r) => match figure.value(r) {
                        (Some(value), ci) => out.push(FigureRow {
                            policy: p,
                            active_fraction: load,
                            slice_type: sel.as_str().to_string(),
                            value,
                            ci95: ci.unwrap_or(0.0),
                        }),
                        (None, _) => warn!(
                            "{} figure: no value for {p}/{load:.2}/{sel}, row omitted",
                            figure.as_str()
                        ),
                    },
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(SimError::MissingCells(missing.join(", ")));
    }
    Ok(out)
}

pub fn write_figure_csv<W: Write>(rows: &[FigureRow], w: W) -> Result<(), SimError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `dir/aggregate.csv` and writes `dir/figure_<name>.csv`.
pub fn report(dir: &Path, figure: Figure) -> Result<PathBuf, SimError> {
    let agg_path = dir.join("aggregate.csv");
    let f = File::open(&agg_path).map_err(|e| SimError::Config {
        path: agg_path.display().to_string(),
        message: e.to_string(),
    })?;
    let rows = read_aggregate_csv(f)?;
    let data = emit_figure_data(&rows, figure)?;
    let path = dir.join(format!("figure_{}.csv", figure.as_str()));
    write_figure_csv(&data, File::create(&path)?)?;
    Ok(path)
}
