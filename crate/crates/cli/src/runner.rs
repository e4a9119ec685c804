//! Runs an experiment grid and writes results, gains and artifacts.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use zdc_core::baselines::{lloyd_max_for_source, ofssq_run, scalar_run, train_ofssq};
use zdc_core::evaluation::{evaluate_policy, EvalOptions, RunReport, Snr};
use zdc_core::qlearning::TrainStats;
use zdc_core::{extract_policy, train, DistortionSpec, FiniteSource, QuantizerSpace};

use crate::config::{ExperimentConfig, MethodSpec, TrainJob};
use crate::error::{write_file, CliError};
use crate::persist::save_policy;

/// Added to a cell's seed to get its evaluation seed, so the evaluation path
/// is not the training path.
pub const EVAL_SEED_OFFSET: u64 = 1 << 32;

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub rate_bits: f64,
    pub n: Option<u32>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    #[serde(rename = "T")]
    pub t: u64,
    pub seed: u64,
    pub avg_distortion: Option<f64>,
    /// dB, or `lossless`; empty for failed cells.
    pub snr_db: Option<String>,
    pub status: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    /// SNR in dB with `lossless` read as infinity.
    pub fn snr(&self) -> Option<f64> {
        match self.snr_db.as_deref()? {
            "lossless" => Some(f64::INFINITY),
            s => s.parse().ok(),
        }
    }
}

/// One line of the gains CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub method: String,
    pub rate_bits: f64,
    pub seed: u64,
    pub snr_db: f64,
    pub baseline: String,
    pub baseline_snr_db: f64,
    pub gain_db: f64,
}

#[derive(Debug)]
pub struct ExperimentSummary {
    pub results_path: PathBuf,
    pub gains_path: Option<PathBuf>,
    pub rows: Vec<ResultRow>,
    pub gains: Vec<GainRow>,
    pub failed: usize,
}

#[derive(Serialize)]
struct CellRecord<'a> {
    method: &'a str,
    levels: usize,
    seed: u64,
    eval_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<&'a TrainStats>,
    report: &'a RunReport,
}

struct Cell<'a> {
    method: &'a MethodSpec,
    label: String,
    levels: usize,
    seed: u64,
}

impl Cell<'_> {
    fn stem(&self) -> String {
        format!("{}_M{}_s{}", self.label, self.levels, self.seed)
    }
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    source: FiniteSource,
    dist: DistortionSpec,
    artifacts: PathBuf,
}

impl Context<'_> {
    fn run(&self, cell: &Cell<'_>) -> Result<RunReport, CliError> {
        let eval_seed = cell.seed.wrapping_add(EVAL_SEED_OFFSET);
        let samples = self.config.eval_samples;
        let artifact = |kind: &str| self.artifacts.join(format!("{}.{kind}.json", cell.stem()));
        let mut stats = None;
        let report = match cell.method {
            MethodSpec::Algorithm1(spec) => {
                let space = QuantizerSpace::for_values(self.source.values(), cell.levels, spec.space)?;
                let cfg = spec.train_config(cell.seed);
                let (table, train_stats) = train(&self.source, &self.dist, &space, &cfg)?;
                let policy = extract_policy(&table, &cfg, &space, &self.source, &self.dist)?;
                save_policy(&policy, &artifact("policy"))?;
                stats = Some(train_stats);
                let opts = EvalOptions { expected_n: Some(spec.n), ..EvalOptions::new(samples, eval_seed) };
                evaluate_policy(&self.source, &policy, &self.dist, &opts)?
            }
            MethodSpec::Ofssq(spec) => {
                let mut rng = ChaCha8Rng::seed_from_u64(cell.seed);
                let path = self.source.sample_path(self.config.train_samples, &mut rng);
                let codebooks = train_ofssq(&path, self.source.values(), spec.k, cell.levels, spec.classifier)?;
                write_file(&artifact("codebooks"), &codebooks.to_json())?;
                ofssq_run(&codebooks, &self.source, samples, eval_seed)?
            }
            MethodSpec::LloydMax => {
                let fit = lloyd_max_for_source(&self.source, cell.levels)?;
                let json = serde_json::to_string(&fit.quantizer).expect("quantizer serializes");
                write_file(&artifact("quantizer"), &json)?;
                scalar_run(&fit.quantizer, &self.source, samples, eval_seed)?
            }
        };
        let record = CellRecord {
            method: &cell.label,
            levels: cell.levels,
            seed: cell.seed,
            eval_seed,
            train: stats.as_ref(),
            report: &report,
        };
        let json = serde_json::to_string_pretty(&record).expect("record serializes");
        write_file(&artifact("report"), &json)?;
        Ok(report)
    }
}

fn row(config: &ExperimentConfig, cell: &Cell<'_>, outcome: &Result<RunReport, CliError>) -> ResultRow {
    let (n, k) = match cell.method {
        MethodSpec::Algorithm1(a) => (Some(a.n), None),
        MethodSpec::Ofssq(o) => (None, Some(o.k)),
        MethodSpec::LloydMax => (None, Some(1)),
    };
    let (avg_distortion, snr_db, status) = match outcome {
        Ok(r) => (Some(r.avg_distortion), Some(r.snr_db.to_string()), "ok"),
        Err(_) => (None, None, "failed"),
    };
    ResultRow {
        method: cell.label.clone(),
        rate_bits: (cell.levels as f64).log2(),
        n,
        k,
        t: config.eval_samples,
        seed: cell.seed,
        avg_distortion,
        snr_db,
        status: status.into(),
    }
}

/// SNR gain of every successful cell over the baseline cell with the same
/// rate and seed.
pub fn gains(rows: &[ResultRow], baseline: &str) -> Vec<GainRow> {
    let mut out = Vec::new();
    for r in rows.iter().filter(|r| r.is_ok() && r.method != baseline) {
        let base = rows
            .iter()
            .find(|b| b.method == baseline && b.rate_bits == r.rate_bits && b.seed == r.seed && b.is_ok());
        let (Some(snr), Some(base_snr)) = (r.snr(), base.and_then(ResultRow::snr)) else {
            continue;
        };
        out.push(GainRow {
            method: r.method.clone(),
            rate_bits: r.rate_bits,
            seed: r.seed,
            snr_db: snr,
            baseline: baseline.into(),
            baseline_snr_db: base_snr,
            // Two lossless cells tie rather than giving inf - inf.
            gain_db: if snr == base_snr { 0.0 } else { snr - base_snr },
        });
    }
    out
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Results(path.into(), e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Results(path.into(), e.to_string()))?;
    write_file(path, &String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Results(path.into(), e.to_string()))?;
    reader
        .deserialize()
        .collect::<Result<Vec<ResultRow>, _>>()
        .map_err(|e| CliError::Results(path.into(), e.to_string()))
}

/// Runs every (method, rate, seed) cell on up to `workers` threads.
///
/// Rows come out in config order (method, then rate, then seed) whatever the
/// scheduling, and a failed cell is logged and kept as a `failed` row.
pub fn run_experiment(
    config: &ExperimentConfig,
    output_dir: Option<&Path>,
    workers: usize,
) -> Result<ExperimentSummary, CliError> {
    config.validate()?;
    let out = output_dir.unwrap_or(&config.output_dir);
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let source = config.source.build()?;
    let ctx = Context {
        config,
        dist: DistortionSpec::squared_error_for(&source),
        source,
        artifacts: out.join(format!("{}-artifacts", config.name)),
    };

    let mut cells = Vec::new();
    for method in &config.methods {
        for &levels in &config.rates {
            for &seed in &config.seeds {
                cells.push(Cell { method, label: method.label(), levels, seed });
            }
        }
    }
    log::info!("{}: {} cells on {} workers", config.name, cells.len(), workers.max(1));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::ConfigParse(format!("worker pool: {e}")))?;
    let outcomes: Vec<Result<RunReport, CliError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let outcome = ctx.run(cell);
                match &outcome {
                    Ok(r) => log::info!("{}: SNR {} dB", cell.stem(), r.snr_db),
                    Err(e) => log::error!("{} failed: {e}", cell.stem()),
                }
                outcome
            })
            .collect()
    });

    let rows: Vec<ResultRow> = cells.iter().zip(&outcomes).map(|(c, o)| row(config, c, o)).collect();
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    let results_path = out.join(format!("{}.results.csv", config.name));
    write_csv(&results_path, &rows)?;

    let (gains, gains_path) = match &config.baseline {
        Some(b) => {
            let g = gains(&rows, b);
            let path = out.join(format!("{}.gains.csv", config.name));
            write_csv(&path, &g)?;
            (g, Some(path))
        }
        None => (Vec::new(), None),
    };
    if failed == rows.len() {
        return Err(CliError::AllCellsFailed(failed));
    }
    Ok(ExperimentSummary { results_path, gains_path, rows, gains, failed })
}

/// Trains one policy and writes it (and optionally the Q-table) to disk.
pub fn run_train(job: &TrainJob) -> Result<TrainStats, CliError> {
    let source = job.source.build()?;
    let dist = DistortionSpec::squared_error_for(&source);
    let space = QuantizerSpace::for_values(source.values(), job.levels, job.algorithm1.space)?;
    let cfg = job.algorithm1.train_config(job.seed);
    let (table, stats) = train(&source, &dist, &space, &cfg)?;
    let policy = extract_policy(&table, &cfg, &space, &source, &dist)?;
    save_policy(&policy, &job.policy_out)?;
    if let Some(path) = &job.table_out {
        write_file(path, &table.to_json())?;
    }
    Ok(stats)
}

/// Short SNR text for terminal output.
pub fn describe(snr: &Snr) -> String {
    match snr {
        Snr::Db(v) => format!("{v:.3} dB"),
        Snr::Lossless => "lossless".into(),
    }
}
