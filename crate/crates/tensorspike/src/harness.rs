//! Experiment plumbing behind the command-line tool: config files, output
//! directories, seeded sweeps and the small debugging commands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::layout::Parity;
use crate::model::SpikeMode;
use crate::pipeline::{run_mpsnsga, RunConfig, RunOutput, ScheduleChoice};
use crate::search::{reference_search, SearchOutcome};
use crate::seeding::{self, tags};
use crate::sga::TraceRow;
use crate::spectral::{default_max_iter, top_eigvec_power};
use crate::FORMAT_TAG;

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig = serde_json::from_str(text)?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path)?)
}

pub fn config_to_json(config: &RunConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(config)?)
}

/// Points every seed of `config` at `seed`: the run seed itself, and the
/// instance and noise seeds derived from it.
pub fn reseed(config: &mut RunConfig, seed: u64) {
    config.seed = seed;
    config.instance.seed = seeding::derive_seed(seed, tags::INSTANCE);
    config.noise.seed = seeding::derive_seed(seed, tags::NOISE);
}

/// Writes trace rows as CSV, preceded by the format comment line.
pub fn write_trace_csv<W: Write>(mut out: W, rows: &[TraceRow], instrument: bool) -> Result<()> {
    writeln!(out, "# {FORMAT_TAG}")?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["phase", "stage", "pattern", "block", "step", "sample", "eta", "frob_norm", "reward_value"];
    if instrument {
        header.push("alpha");
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.phase.as_str().to_string(),
            r.stage.to_string(),
            r.pattern.map(|p| p.to_string()).unwrap_or_default(),
            r.block.to_string(),
            r.step.to_string(),
            r.sample.to_string(),
            format!("{:e}", r.eta),
            format!("{:e}", r.frob_norm),
            format!("{:e}", r.reward_value),
        ];
        if instrument {
            rec.push(r.alpha.map(|a| format!("{a:e}")).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json`, `schedule.json` and `traces.csv` into `dir`.
pub fn write_run_outputs(dir: &Path, output: &RunOutput, instrument: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut report = serde_json::to_string_pretty(&output.report)?;
    report.push('\n');
    fs::write(dir.join("report.json"), report)?;
    let mut schedule = serde_json::to_string_pretty(&output.schedule)?;
    schedule.push('\n');
    fs::write(dir.join("schedule.json"), schedule)?;
    let file = fs::File::create(dir.join("traces.csv"))?;
    write_trace_csv(std::io::BufWriter::new(file), &output.trace, instrument)
}

/// Values swept over; an empty axis keeps the base config's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default)]
    pub d: Vec<usize>,
    #[serde(default)]
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub rho: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: RunConfig,
    pub axes: SweepAxes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub d: usize,
    pub lambda: f64,
    pub rho: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d: usize,
    pub lambda: f64,
    pub rho: Option<f64>,
    pub seed: u64,
    pub samples: u64,
    pub state_scalars: u64,
    pub max_loss: f64,
    pub success: bool,
}

/// Loss at or below which a run counts as a success.
pub const SUCCESS_LOSS: f64 = 0.1;

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Grid in `d`, `λ`, `ρ`, seed order.
    pub fn cells(&self) -> Result<Vec<SweepCell>> {
        let a = &self.axes;
        if let Some(&d) = a.d.iter().find(|&&d| d == 0) {
            return Err(invalid(format!("sweep dimension {d}")));
        }
        if let Some(l) = a.lambda.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(invalid(format!("sweep lambda {l}")));
        }
        if let Some(r) = a.rho.iter().find(|r| !(r.abs() <= 1.0)) {
            return Err(invalid(format!("sweep rho {r}")));
        }
        let base = &self.base.instance;
        let ds = if a.d.is_empty() { vec![base.dims[0]] } else { a.d.clone() };
        let ls = if a.lambda.is_empty() { vec![base.snr] } else { a.lambda.clone() };
        let rs: Vec<Option<f64>> = if a.rho.is_empty() { vec![None] } else { a.rho.iter().map(|&r| Some(r)).collect() };
        let ss = if a.seeds.is_empty() { vec![self.base.seed] } else { a.seeds.clone() };
        let mut out = Vec::with_capacity(ds.len() * ls.len() * rs.len() * ss.len());
        for &d in &ds {
            for &lambda in &ls {
                for &rho in &rs {
                    for &seed in &ss {
                        out.push(SweepCell { d, lambda, rho, seed });
                    }
                }
            }
        }
        Ok(out)
    }

    /// The full run config of one cell.
    pub fn cell_config(&self, cell: &SweepCell) -> RunConfig {
        let mut c = self.base.clone();
        if !self.axes.d.is_empty() {
            c.instance.dims = vec![cell.d; c.instance.order];
        }
        c.instance.snr = cell.lambda;
        if let Some(rho) = cell.rho {
            c.instance.spike_mode = SpikeMode::PairedCorrelation { rho };
        }
        if !self.axes.seeds.is_empty() {
            reseed(&mut c, cell.seed);
        }
        c.parallel = false;
        c
    }
}

fn run_cell(sweep: &SweepConfig, cell: &SweepCell) -> Result<SweepRow> {
    let config = sweep.cell_config(cell);
    let out = run_mpsnsga(&config)?;
    let r = &out.report;
    Ok(SweepRow {
        d: cell.d,
        lambda: cell.lambda,
        rho: cell.rho,
        seed: cell.seed,
        samples: r.resources.total_samples(),
        state_scalars: r.resources.state_scalars_current,
        max_loss: r.loss.max_loss,
        success: r.loss.max_loss <= SUCCESS_LOSS,
    })
}

/// Runs every cell on a pool of at most `jobs` threads; rows come back in grid order.
pub fn run_sweep(sweep: &SweepConfig, jobs: usize) -> Result<Vec<SweepRow>> {
    let cells = sweep.cells()?;
    for cell in &cells {
        sweep.cell_config(cell).validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    pool.install(|| cells.par_iter().map(|c| run_cell(sweep, c)).collect())
}

pub fn write_sweep_csv<W: Write>(mut out: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(out, "# {FORMAT_TAG}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["d", "lambda", "rho", "seed", "N", "S", "max_loss", "success@0.1"])?;
    for r in rows {
        w.write_record([
            r.d.to_string(),
            r.lambda.to_string(),
            r.rho.map(|x| x.to_string()).unwrap_or_default(),
            r.seed.to_string(),
            r.samples.to_string(),
            r.state_scalars.to_string(),
            format!("{:e}", r.max_loss),
            u8::from(r.success).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the reference search a config with `"mode": "auto"` would run.
pub fn search_c3(config: &RunConfig) -> Result<SearchOutcome> {
    config.validate()?;
    let kappa = match config.schedule.choice {
        ScheduleChoice::Auto { kappa } => kappa,
        other => return Err(invalid(format!("search-c3 needs schedule mode auto, got {other:?}"))),
    };
    let instance = Arc::new(config.instance.build()?);
    let parity = Parity::of(instance.order());
    reference_search(
        instance,
        config.noise.derived(tags::SEARCH),
        kappa,
        parity,
        config.constants.n1_scale,
        seeding::derive_seed(config.seed, tags::SEARCH),
        config.sample_cap,
    )
}

/// Human-readable search summary: `c3 <value|none>` then one CSV row per round.
pub fn format_search(outcome: &SearchOutcome) -> String {
    let mut s = match outcome.c3 {
        Some(c3) => format!("c3 {c3}\n"),
        None => "c3 none\n".to_string(),
    };
    s.push_str("tau,n1,mean_abs,threshold\n");
    for r in &outcome.rounds {
        s.push_str(&format!("{},{},{:e},{:e}\n", r.tau, r.n1, r.mean_abs, r.threshold));
    }
    s
}

/// Floor on the default cap; `⌈10 d ln d⌉` is tiny for small matrices.
const EIG_MIN_ITER: usize = 1000;

fn default_tol() -> f64 {
    1e-10
}

/// Input of the `eig` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigRequest {
    pub matrix: Vec<Vec<f64>>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigResult {
    pub vector: Vec<f64>,
    pub eigenvalue: f64,
    pub residual: f64,
}

pub fn eig(req: &EigRequest) -> Result<EigResult> {
    let n = req.matrix.len();
    if n == 0 || req.matrix.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension("eig needs a non-empty square matrix".into()));
    }
    let m = DMatrix::from_fn(n, n, |i, j| req.matrix[i][j]);
    let v = top_eigvec_power(&m, req.tol, req.max_iter.unwrap_or_else(|| default_max_iter(n).max(EIG_MIN_ITER)), req.seed)?;
    let mv = &m * &v;
    let eigenvalue = v.dot(&mv);
    let residual = (mv - &v * eigenvalue).norm();
    Ok(EigResult { vector: v.iter().copied().collect(), eigenvalue, residual })
}

/// `env` if set and non-empty, else `flag`, else `fallback`.
pub fn resolve_out_dir(flag: Option<PathBuf>, env: Option<String>, fallback: &str) -> PathBuf {
    match env {
        Some(e) if !e.is_empty() => PathBuf::from(e),
        _ => flag.unwrap_or_else(|| PathBuf::from(fallback)),
    }
}
