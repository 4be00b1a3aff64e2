//! Experiment runner: replays workloads through plain and private sketches,
//! averages accuracy metrics over repeats and emits long-format CSV.
//!
//! Each repeat `r` derives its own stream, hash and noise seeds from the
//! configured seed, so repeats can run in parallel and the output depends only
//! on the configuration. Within a repeat every cell (space budget, rho) shares
//! the stream and the hash functions; only the noise differs.

use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;

use dpsketch::dp_mechanism::{calibrate_sigma, l2_sensitivity, noise_bound, zcdp_to_dp};
use dpsketch::evaluation::{are, avg_rank_error, exact_counts, f1_topk, ExactSummary};
use dpsketch::hashing::derive_seed;
use dpsketch::workload::{Source, StreamSpec, DEFAULT_ZIPF_S};
use dpsketch::{
    CounterMatrix, DyadicParams, DyadicSketch, PrivacyBudget, SketchParams, StreamOp, Variant,
};

pub const CSV_HEADER: [&str; 13] = [
    "experiment",
    "variant",
    "private",
    "rho",
    "beta",
    "gamma",
    "space_kb",
    "universe_bits",
    "n",
    "repeats",
    "seed",
    "metric",
    "value",
];

/// Space budgets swept by default, in KiB (doubling from 9.2 to 147.3).
pub const DEFAULT_SPACE_KB: [f64; 5] = [9.2, 18.4, 36.8, 73.6, 147.3];

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sketch(#[from] dpsketch::Error),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("output failed: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RunError>;

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Zipf,
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: Dataset,
    pub n: usize,
    pub universe_bits: u32,
    pub zipf_s: f64,
    pub p_del: f64,
    pub gamma: f64,
    pub beta: f64,
    /// Private cells; the non-private baseline is always included.
    pub rhos: Vec<f64>,
    pub delta: f64,
    pub space_kb: Vec<f64>,
    pub k: usize,
    pub ms: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    pub variants: Vec<Variant>,
    /// Quantile runs only: exact per-level counters instead of sketches.
    pub exact_mode: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: Dataset::Zipf,
            n: 100_000,
            universe_bits: 16,
            zipf_s: DEFAULT_ZIPF_S,
            p_del: 0.0,
            gamma: 0.01,
            beta: 0.01,
            rhos: Vec::new(),
            delta: 1e-6,
            space_kb: DEFAULT_SPACE_KB.to_vec(),
            k: 10,
            ms: (1..=10).collect(),
            repeats: 5,
            seed: 0,
            variants: vec![Variant::CountMin, Variant::CountSketch],
            exact_mode: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(RunError::Config(msg));
        if self.repeats == 0 {
            return fail("--repeats must be >= 1".into());
        }
        if self.variants.is_empty() {
            return fail("at least one --variant is required".into());
        }
        if let Some(r) = self.rhos.iter().find(|r| !r.is_finite() || **r <= 0.0) {
            return fail(format!("--rho must be a positive number, got {r}"));
        }
        if let Some(kb) = self
            .space_kb
            .iter()
            .find(|kb| !kb.is_finite() || **kb <= 0.0)
        {
            return fail(format!("--space-kb must be positive, got {kb}"));
        }
        if self.ms.contains(&0) {
            return fail("--m must be >= 1".into());
        }
        if self.k == 0 {
            return fail("--k must be >= 1".into());
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return fail(format!("--beta must lie in (0, 1), got {}", self.beta));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("--gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail(format!("--delta must lie in (0, 1), got {}", self.delta));
        }
        Ok(())
    }

    fn stream_spec(&self, repeat: usize) -> StreamSpec {
        StreamSpec {
            source: match &self.dataset {
                Dataset::Zipf => Source::Zipf,
                Dataset::File(path) => Source::File(path.clone()),
            },
            n: self.n,
            universe_bits: self.universe_bits,
            zipf_s: self.zipf_s,
            p_del: self.p_del,
            seed: derive_seed(self.seed, 3 * repeat as u64),
        }
    }

    fn hash_seed(&self, repeat: usize) -> u64 {
        derive_seed(self.seed, 3 * repeat as u64 + 1)
    }

    fn noise_seed(&self, repeat: usize, cell: usize) -> u64 {
        derive_seed(derive_seed(self.seed, 3 * repeat as u64 + 2), cell as u64)
    }
}

/// One CSV line.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub experiment: &'static str,
    pub variant: String,
    pub rho: Option<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub space_kb: f64,
    pub universe_bits: u32,
    pub n: usize,
    pub repeats: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

impl Row {
    pub fn private(&self) -> bool {
        self.rho.is_some()
    }

    fn record(&self) -> [String; 13] {
        [
            self.experiment.to_string(),
            self.variant.clone(),
            self.private().to_string(),
            self.rho
                .map_or_else(|| "none".to_string(), |r| r.to_string()),
            self.beta.to_string(),
            self.gamma.to_string(),
            self.space_kb.to_string(),
            self.universe_bits.to_string(),
            self.n.to_string(),
            self.repeats.to_string(),
            self.seed.to_string(),
            self.metric.clone(),
            self.value.to_string(),
        ]
    }
}

pub fn write_csv<W: Write>(rows: &[Row], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(CSV_HEADER)?;
    for row in rows {
        writer.write_record(row.record())?;
    }
    writer.flush()?;
    Ok(())
}

struct Workload {
    ops: Vec<StreamOp>,
    summary: ExactSummary,
}

fn load_workload(cfg: &ExperimentConfig, repeat: usize) -> Result<Workload> {
    let ops = cfg.stream_spec(repeat).build()?;
    let summary = exact_counts(&ops);
    Ok(Workload { ops, summary })
}

/// `None` followed by every configured rho.
fn rho_cells(cfg: &ExperimentConfig) -> Vec<Option<f64>> {
    std::iter::once(None)
        .chain(cfg.rhos.iter().copied().map(Some))
        .collect()
}

fn budget(rho: f64) -> Result<PrivacyBudget> {
    Ok(PrivacyBudget::new(rho)?)
}

fn mean_over_repeats(per_repeat: &[Vec<f64>], cell: usize) -> f64 {
    per_repeat.iter().map(|values| values[cell]).sum::<f64>() / per_repeat.len() as f64
}

fn run_repeats<F>(cfg: &ExperimentConfig, job: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync + Send,
{
    (0..cfg.repeats).into_par_iter().map(job).collect()
}

#[derive(Clone, Copy)]
struct LinearCell {
    variant: Variant,
    params: SketchParams,
    space_kb: f64,
    rho: Option<f64>,
    noise_cell: usize,
}

fn linear_cells(cfg: &ExperimentConfig) -> Result<Vec<LinearCell>> {
    let mut cells = Vec::new();
    for &variant in &cfg.variants {
        for &space_kb in &cfg.space_kb {
            let bytes = (space_kb * 1024.0).round() as usize;
            let params = SketchParams::from_space_budget(variant, bytes, cfg.beta)?;
            for (noise_cell, rho) in rho_cells(cfg).into_iter().enumerate() {
                cells.push(LinearCell {
                    variant,
                    params,
                    space_kb,
                    rho,
                    noise_cell,
                });
            }
        }
    }
    Ok(cells)
}

fn build_linear(
    cfg: &ExperimentConfig,
    cell: &LinearCell,
    repeat: usize,
    ops: &[StreamOp],
) -> Result<CounterMatrix> {
    let hash_seed = cfg.hash_seed(repeat);
    let mut sketch = match cell.rho {
        Some(rho) => CounterMatrix::new_private(
            cell.params,
            budget(rho)?,
            hash_seed,
            cfg.noise_seed(repeat, cell.noise_cell),
        )?,
        None => CounterMatrix::new(cell.params, hash_seed),
    };
    sketch.extend(ops.iter().copied());
    Ok(sketch)
}

fn run_linear<M>(
    cfg: &ExperimentConfig,
    experiment: &'static str,
    metric: &str,
    measure: M,
) -> Result<Vec<Row>>
where
    M: Fn(&CounterMatrix, &ExactSummary) -> dpsketch::Result<f64> + Sync,
{
    cfg.validate()?;
    let cells = linear_cells(cfg)?;
    let per_repeat = run_repeats(cfg, |repeat| {
        let workload = load_workload(cfg, repeat)?;
        cells
            .iter()
            .map(|cell| {
                let sketch = build_linear(cfg, cell, repeat, &workload.ops)?;
                Ok(measure(&sketch, &workload.summary)?)
            })
            .collect()
    })?;
    let n = load_workload(cfg, 0)?.ops.len();
    Ok(cells
        .iter()
        .enumerate()
        .map(|(i, cell)| Row {
            experiment,
            variant: cell.variant.to_string(),
            rho: cell.rho,
            beta: cfg.beta,
            gamma: cell.params.gamma(),
            space_kb: cell.space_kb,
            universe_bits: cfg.universe_bits,
            n,
            repeats: cfg.repeats,
            seed: cfg.seed,
            metric: metric.to_string(),
            value: mean_over_repeats(&per_repeat, i),
        })
        .collect())
}

/// Mean ARE per (variant, space budget, rho) cell.
pub fn run_frequency(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    run_linear(cfg, "frequency", "are", |sketch, summary| {
        are(|x| sketch.query(x), summary)
    })
}

/// Mean top-k F1 per (variant, space budget, rho) cell.
pub fn run_topk(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    let k = cfg.k;
    let metric = format!("f1_top{k}");
    run_linear(cfg, "topk", &metric, move |sketch, summary| {
        f1_topk(|x| sketch.query(x), summary, k)
    })
}

#[derive(Clone, Copy)]
enum QuantileCell {
    Exact,
    Sketch {
        params: DyadicParams,
        rho: Option<f64>,
        noise_cell: usize,
    },
}

/// Mean average rank error per (variant, rho, m) cell.
pub fn run_quantile(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    cfg.validate()?;
    if cfg.ms.is_empty() {
        return Err(RunError::Config("at least one --m is required".into()));
    }
    let cells: Vec<QuantileCell> = if cfg.exact_mode {
        vec![QuantileCell::Exact]
    } else {
        let mut cells = Vec::new();
        for &variant in &cfg.variants {
            if variant == Variant::CountMin && !cfg.rhos.is_empty() {
                return Err(RunError::Config(
                    "private dyadic sketches need --variant cs".into(),
                ));
            }
            let base = DyadicParams::new(cfg.universe_bits, variant, cfg.gamma)?;
            for (noise_cell, rho) in rho_cells(cfg).into_iter().enumerate() {
                let params = match rho {
                    Some(r) => base.with_privacy(budget(r)?)?,
                    None => base,
                };
                cells.push(QuantileCell::Sketch {
                    params,
                    rho,
                    noise_cell,
                });
            }
        }
        cells
    };

    let per_repeat = run_repeats(cfg, |repeat| {
        let workload = load_workload(cfg, repeat)?;
        let mut values = Vec::with_capacity(cells.len() * cfg.ms.len());
        for cell in &cells {
            let mut sketch = match *cell {
                QuantileCell::Exact => DyadicSketch::new_exact(cfg.universe_bits)?,
                QuantileCell::Sketch {
                    params, noise_cell, ..
                } => DyadicSketch::new(
                    params,
                    cfg.hash_seed(repeat),
                    cfg.noise_seed(repeat, noise_cell),
                )?,
            };
            sketch.extend(&workload.ops)?;
            for &m in &cfg.ms {
                let rank = |x| sketch.rank(x).expect("quantile items lie in the universe");
                values.push(avg_rank_error(rank, &workload.summary, m)?);
            }
        }
        Ok(values)
    })?;

    let n = load_workload(cfg, 0)?.ops.len();
    let mut rows = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        let (variant, rho, space_kb) = match cell {
            QuantileCell::Exact => ("exact".to_string(), None, 0.0),
            QuantileCell::Sketch { params, rho, .. } => (
                params.variant().to_string(),
                *rho,
                params.space_bytes() as f64 / 1024.0,
            ),
        };
        for (j, &m) in cfg.ms.iter().enumerate() {
            rows.push(Row {
                experiment: "quantile",
                variant: variant.clone(),
                rho,
                beta: cfg.beta,
                gamma: cfg.gamma,
                space_kb,
                universe_bits: cfg.universe_bits,
                n,
                repeats: cfg.repeats,
                seed: cfg.seed,
                metric: format!("avg_rank_error_m{m}"),
                value: mean_over_repeats(&per_repeat, c * cfg.ms.len() + j),
            });
        }
    }
    Ok(rows)
}

/// Shape and noise calibration for `(gamma, beta)` and every configured rho.
pub fn run_calibrate(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &variant in &cfg.variants {
        let params = SketchParams::from_accuracy(variant, cfg.gamma, cfg.beta)?;
        let (d, w) = (params.rows(), params.cols());
        let row = |rho: Option<f64>, metric: &str, value: f64| Row {
            experiment: "calibrate",
            variant: variant.to_string(),
            rho,
            beta: cfg.beta,
            gamma: cfg.gamma,
            space_kb: params.space_bytes() as f64 / 1024.0,
            universe_bits: cfg.universe_bits,
            n: cfg.n,
            repeats: 1,
            seed: cfg.seed,
            metric: metric.to_string(),
            value,
        };
        for rho in rho_cells(cfg) {
            rows.push(row(rho, "rows", d as f64));
            rows.push(row(rho, "cols", w as f64));
            rows.push(row(rho, "l2_sensitivity", l2_sensitivity(d)));
            if let Some(r) = rho {
                let b = budget(r)?;
                rows.push(row(rho, "sigma", calibrate_sigma(d, b)?));
                rows.push(row(rho, "noise_bound", noise_bound(d, w, cfg.beta, b)?));
                rows.push(row(rho, "epsilon", zcdp_to_dp(b, cfg.delta)?));
            }
        }
    }
    Ok(rows)
}
