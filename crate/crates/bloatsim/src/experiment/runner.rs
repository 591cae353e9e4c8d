//! Grid execution. Every (cell × repetition) is an isolated single-threaded
//! simulation seeded independently, so runs may execute in any order or in
//! parallel; results are merged back in deterministic (cell, rep) order.

use super::{build_setup, cell_seed, FactorGrid, ScenarioConfig};
use crate::metrics::{self, RunMetrics};
use crate::mptcp::CcAlgorithm;
use crate::qdisc::DisciplineKind;
use crate::world;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How many runs may execute at once. Sequential is always available; the
/// thread pool needs the `parallel` feature, without which any requested
/// fan-out degrades to sequential execution with identical output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    /// A pool of `n` threads; `0` means one per available core.
    Threads(usize),
}

impl Parallelism {
    pub fn from_jobs(jobs: usize) -> Self {
        match jobs {
            1 => Parallelism::Sequential,
            n => Parallelism::Threads(n),
        }
    }
}

/// (qdisc, cc, delay_a_ms, rep, seed): one run's identity.
type Unit = (DisciplineKind, CcAlgorithm, f64, u32, u64);

/// All repetitions of one factor combination.
#[derive(Debug)]
pub struct CellResult {
    pub qdisc: DisciplineKind,
    pub cc: CcAlgorithm,
    pub delay_a_ms: f64,
    /// (repetition index, seed, outcome), in repetition order.
    pub runs: Vec<(u32, u64, Result<RunMetrics, String>)>,
}

impl CellResult {
    /// Metrics of the successful repetitions, in repetition order.
    pub fn metrics(&self) -> Vec<&RunMetrics> {
        self.runs
            .iter()
            .filter_map(|(_, _, outcome)| outcome.as_ref().ok())
            .collect()
    }

    /// Mean of one metric over successful repetitions, by aggregate-column
    /// name. `None` when the metric is absent in every run.
    pub fn mean_of(&self, name: &str) -> Option<f64> {
        let k = metrics::METRIC_NAMES.iter().position(|n| *n == name)?;
        let values: Vec<f64> = self
            .metrics()
            .iter()
            .filter_map(|m| metrics::metric_values(m)[k])
            .collect();
        metrics::mean_ci(&values).map(|ci| ci.mean)
    }
}

/// The whole grid's results plus failure bookkeeping and CSV assembly.
#[derive(Debug)]
pub struct GridOutcome {
    pub scenario: String,
    pub cells: Vec<CellResult>,
    pub failures: usize,
}

impl GridOutcome {
    pub fn cell(
        &self,
        qdisc: DisciplineKind,
        cc: CcAlgorithm,
        delay_a_ms: f64,
    ) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.qdisc == qdisc && c.cc == cc && c.delay_a_ms == delay_a_ms)
    }

    /// Per-run CSV: header plus one row per successful run, in (cell, rep)
    /// order. Failed runs contribute no row (they are counted in
    /// `failures` and reported on stderr by the CLI).
    pub fn runs_csv(&self) -> String {
        let mut out = metrics::runs_csv_header();
        out.push('\n');
        for cell in &self.cells {
            for (rep, _, outcome) in &cell.runs {
                if let Ok(m) = outcome {
                    out.push_str(&metrics::runs_csv_row(
                        &self.scenario,
                        cell.qdisc,
                        cell.cc,
                        cell.delay_a_ms,
                        *rep,
                        m,
                    ));
                    out.push('\n');
                }
            }
        }
        out
    }

    /// Aggregate CSV: one row per cell with means and 95% CI half-widths
    /// over the successful repetitions (`reps` column counts them).
    pub fn aggregate_csv(&self) -> String {
        let mut out = metrics::aggregate_csv_header();
        out.push('\n');
        for cell in &self.cells {
            let rows: Vec<RunMetrics> = cell.metrics().into_iter().cloned().collect();
            let agg = metrics::aggregate(&rows);
            out.push_str(&metrics::aggregate_csv_row(
                &self.scenario,
                cell.qdisc,
                cell.cc,
                cell.delay_a_ms,
                rows.len(),
                &agg,
            ));
            out.push('\n');
        }
        out
    }

    /// Error lines for every failed run, in output order.
    pub fn failure_reports(&self) -> Vec<&str> {
        self.cells
            .iter()
            .flat_map(|c| c.runs.iter())
            .filter_map(|(_, _, outcome)| outcome.as_ref().err().map(|e| e.as_str()))
            .collect()
    }
}

/// Run one cell repetition.
pub fn run_cell(
    cfg: &ScenarioConfig,
    qdisc: DisciplineKind,
    cc: CcAlgorithm,
    delay_a_ms: f64,
    rep: u32,
) -> Result<RunMetrics, String> {
    let seed = cell_seed(cfg.base_seed, qdisc, cc, delay_a_ms, rep);
    execute(cfg, &(qdisc, cc, delay_a_ms, rep, seed))
}

fn execute(cfg: &ScenarioConfig, unit: &Unit) -> Result<RunMetrics, String> {
    let &(qdisc, cc, delay_a_ms, rep, seed) = unit;
    let setup = build_setup(cfg, qdisc, cc, delay_a_ms, seed, false);
    world::run_once(&setup)
        .map(|rec| RunMetrics::from_record(qdisc, &rec, seed))
        .map_err(|e| format!("{qdisc}/{cc}/delay_a {delay_a_ms} ms rep {rep} (seed {seed}): {e}"))
}

#[cfg(feature = "parallel")]
fn run_units(
    cfg: &ScenarioConfig,
    units: &[Unit],
    par: Parallelism,
) -> Vec<Result<RunMetrics, String>> {
    match par {
        Parallelism::Sequential => units.iter().map(|u| execute(cfg, u)).collect(),
        Parallelism::Threads(0) => units.par_iter().map(|u| execute(cfg, u)).collect(),
        Parallelism::Threads(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("worker pool")
            .install(|| units.par_iter().map(|u| execute(cfg, u)).collect()),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_units(
    cfg: &ScenarioConfig,
    units: &[Unit],
    _par: Parallelism,
) -> Vec<Result<RunMetrics, String>> {
    units.iter().map(|u| execute(cfg, u)).collect()
}

/// Execute every cell × repetition of the grid.
pub fn run_grid(cfg: &ScenarioConfig, grid: &FactorGrid, par: Parallelism) -> GridOutcome {
    let cells = grid.cells();
    let mut units = Vec::with_capacity(cells.len() * cfg.reps as usize);
    for &(qdisc, cc, delay) in &cells {
        for rep in 0..cfg.reps {
            let seed = cell_seed(cfg.base_seed, qdisc, cc, delay, rep);
            units.push((qdisc, cc, delay, rep, seed));
        }
    }

    let outcomes = run_units(cfg, &units, par);

    let mut merged = units.into_iter().zip(outcomes);
    let mut out = Vec::with_capacity(cells.len());
    let mut failures = 0;
    for (qdisc, cc, delay_a_ms) in cells {
        let mut runs = Vec::with_capacity(cfg.reps as usize);
        for _ in 0..cfg.reps {
            let ((_, _, _, rep, seed), outcome) = merged.next().expect("one outcome per unit");
            if outcome.is_err() {
                failures += 1;
            }
            runs.push((rep, seed, outcome));
        }
        out.push(CellResult {
            qdisc,
            cc,
            delay_a_ms,
            runs,
        });
    }
    GridOutcome {
        scenario: cfg.scenario.clone(),
        cells: out,
        failures,
    }
}
