//! Sweep over (symbol × N × setting × seed) with resumable cells.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, ensure, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dilution_core::trainer::{Grouping, Objective};
use dilution_core::{
    carve_eval, evaluate, generate_corpus, make_split, max_setting_size, mine_triggers, remove_dilution, signal_report,
    BootstrapConfig, Carve, Corpus, DilutionOptions, MetricReport, Provenance, Ratio, SignalReport, Split, SplitEntry,
    SplitSpec, TaskKind, TrainConfig, TriggerSet, UpsamplePlan,
};

use crate::manifest::{CarveConfig, CorpusSource, GridPoint, Manifest, Setting, TriggerSource, Upsample};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A manifest resolved against its corpus: everything a cell needs.
#[derive(Debug)]
pub struct Experiment {
    pub manifest: Manifest,
    pub corpus_digest: String,
    pub carve: Carve,
    pub triggers: BTreeMap<String, BTreeSet<String>>,
    /// Resolved N for each grid point, per symbol.
    pub sizes: BTreeMap<String, Vec<(GridPoint, usize)>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub symbol: String,
    pub point: GridPoint,
    pub n: usize,
    pub setting: Setting,
    pub seed: u64,
}

impl Cell {
    pub fn label(&self) -> String {
        format!("{}/N={}/{}/seed={}", self.symbol, self.point, self.setting, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub symbol: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub setting: String,
    pub seed: u64,
    /// Training entries after the setting's interventions.
    pub n_train: usize,
    pub overall_acc: f64,
    pub new_symbol_acc: Option<f64>,
    pub competing_acc: Option<f64>,
    pub strength: Option<f64>,
    pub coverage: Option<f64>,
    pub imbalance: f64,
    pub overall_ci_low: f64,
    pub overall_ci_high: f64,
    pub new_symbol_ci_low: Option<f64>,
    pub new_symbol_ci_high: Option<f64>,
    pub competing_ci_low: Option<f64>,
    pub competing_ci_high: Option<f64>,
    pub model_digest: String,
    pub wall_time_s: f64,
}

impl ResultRow {
    fn numbers(&self) -> Vec<Option<f64>> {
        vec![
            Some(self.overall_acc),
            self.new_symbol_acc,
            self.competing_acc,
            self.strength,
            self.coverage,
            Some(self.imbalance),
            Some(self.overall_ci_low),
            Some(self.overall_ci_high),
            self.new_symbol_ci_low,
            self.new_symbol_ci_high,
            self.competing_ci_low,
            self.competing_ci_high,
            Some(self.wall_time_s),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.numbers().into_iter().flatten().all(f64::is_finite)
    }
}

/// Seed average of the rows sharing (symbol, N, setting). Optional metrics
/// are averaged only when every seed has them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub symbol: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub setting: String,
    pub seeds: usize,
    pub n_train: f64,
    pub overall_acc: f64,
    pub new_symbol_acc: Option<f64>,
    pub competing_acc: Option<f64>,
    pub strength: Option<f64>,
    pub coverage: Option<f64>,
    pub imbalance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: String,
    pub reason: String,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<CellFailure>,
    pub computed: usize,
    pub skipped: usize,
    pub out_dir: PathBuf,
}

impl SweepOutcome {
    pub fn success(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Everything a finished cell leaves behind besides its row.
#[derive(Debug, Serialize, Deserialize)]
pub struct CellMetrics {
    pub cell: Cell,
    pub hash: String,
    pub metrics: MetricReport,
    pub signal: SignalReport,
    pub deficit: usize,
    pub model_digest: String,
}

#[derive(Serialize)]
struct CellKey<'a> {
    version: &'a str,
    task: TaskKind,
    corpus: &'a str,
    carve: &'a CarveConfig,
    symbol: &'a str,
    k: usize,
    n: usize,
    setting: String,
    base_ratio: Option<Ratio>,
    seed: u64,
    triggers: &'a BTreeSet<String>,
    trainer: &'a TrainConfig,
    bootstrap: &'a BootstrapConfig,
}

fn load_corpus(manifest: &Manifest) -> Result<Corpus> {
    let corpus = match &manifest.corpus {
        CorpusSource::File { path } => Corpus::load(path, manifest.task)?,
        CorpusSource::Synth { spec, counts } => generate_corpus(spec, counts)?,
    };
    ensure!(
        corpus.task() == manifest.task,
        "corpus holds {:?} examples but the manifest task is {:?}",
        corpus.task(),
        manifest.task
    );
    Ok(corpus)
}

fn whole_pool_split(pool: &Corpus, symbol: &str, source: &str) -> Result<Split> {
    let entries = pool
        .examples()
        .iter()
        .map(|e| SplitEntry {
            id: e.id.clone(),
            provenance: Provenance::Original,
        })
        .collect();
    let spec = SplitSpec {
        new_symbol: symbol.to_string(),
        k: pool.count(symbol),
        n: pool.len(),
        seed: 0,
        source: source.to_string(),
    };
    Ok(Split::from_entries(spec, entries, pool)?)
}

fn pick(sets: &[TriggerSet], symbol: &str) -> Result<BTreeSet<String>> {
    sets.iter()
        .find(|s| s.symbol == symbol)
        .map(|s| s.tokens.clone())
        .ok_or_else(|| anyhow!("no trigger set for `{symbol}`"))
}

fn resolve_triggers(manifest: &Manifest, pool: &Corpus, digest: &str) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let mut out = BTreeMap::new();
    for symbol in &manifest.symbols {
        let tokens = match (&manifest.triggers, &manifest.corpus) {
            (TriggerSource::Auto, CorpusSource::Synth { spec, .. }) => spec
                .symbol(symbol)
                .map(|s| s.triggers.iter().cloned().collect())
                .ok_or_else(|| anyhow!("`{symbol}` is not in the synthetic spec"))?,
            (TriggerSource::Auto | TriggerSource::Bundled, _) => pick(&TriggerSet::bundled(), symbol)?,
            (TriggerSource::File { path }, _) => pick(&TriggerSet::load_file(path)?, symbol)?,
            (TriggerSource::Inline { sets }, _) => {
                for s in sets {
                    s.validate()?;
                }
                pick(sets, symbol)?
            }
            (TriggerSource::Mined { min_count, top_k }, _) => {
                let split = whole_pool_split(pool, symbol, digest)?;
                let mined = mine_triggers(&split, pool, symbol, *min_count, *top_k)?;
                ensure!(
                    !mined.is_empty(),
                    "no trigger for `{symbol}` reaches min_count {min_count}"
                );
                mined.into_iter().map(|m| m.token).collect()
            }
        };
        out.insert(symbol.clone(), tokens);
    }
    Ok(out)
}

impl Experiment {
    /// Loads the corpus, carves it and checks every manifest invariant that
    /// depends on the data. Nothing is trained here.
    pub fn prepare(manifest: Manifest) -> Result<Experiment> {
        manifest.validate()?;
        let corpus = load_corpus(&manifest)?;
        let corpus_digest = corpus.digest();
        let c = manifest.carve;
        let carve = carve_eval(&corpus, c.dev_fraction, c.test_fraction, c.seed)?;
        for s in &carve.unstratified {
            log::warn!("stratum `{s}` too small to stratify");
        }
        let triggers = resolve_triggers(&manifest, &carve.train_pool, &corpus_digest)?;
        let mut sizes = BTreeMap::new();
        for symbol in &manifest.symbols {
            let available = carve.train_pool.count(symbol);
            ensure!(
                available >= manifest.k,
                "`{symbol}` has {available} training-pool examples, fewer than k = {}",
                manifest.k
            );
            let max = max_setting_size(&carve.train_pool, symbol, manifest.k)?;
            let mut resolved = Vec::new();
            for point in manifest.grid() {
                let n = match point {
                    GridPoint::Size(n) if n > max => {
                        bail!("N = {n} exceeds the max setting {max} for `{symbol}`")
                    }
                    GridPoint::Size(n) => n,
                    GridPoint::Max => max,
                };
                resolved.push((point, n));
            }
            sizes.insert(symbol.clone(), resolved);
        }
        Ok(Experiment {
            manifest,
            corpus_digest,
            carve,
            triggers,
            sizes,
        })
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for symbol in &self.manifest.symbols {
            for &(point, n) in &self.sizes[symbol] {
                for setting in &self.manifest.settings {
                    for &seed in &self.manifest.seeds {
                        cells.push(Cell {
                            symbol: symbol.clone(),
                            point,
                            n,
                            setting: *setting,
                            seed,
                        });
                    }
                }
            }
        }
        cells
    }

    fn smallest_n(&self, symbol: &str) -> usize {
        self.sizes[symbol]
            .iter()
            .map(|&(_, n)| n)
            .min()
            .expect("grid is nonempty")
    }

    fn base_ratio(&self, cell: &Cell) -> Result<Option<Ratio>> {
        Ok(match cell.setting.upsample {
            Some(Upsample::Adaptive(Some(r))) => Some(r),
            Some(Upsample::Adaptive(None)) => Some(Ratio::new(
                self.manifest.k as u64,
                self.smallest_n(&cell.symbol) as u64,
            )?),
            _ => None,
        })
    }

    pub fn cell_hash(&self, cell: &Cell) -> Result<String> {
        let m = &self.manifest;
        let key = CellKey {
            version: CODE_VERSION,
            task: m.task,
            corpus: &self.corpus_digest,
            carve: &m.carve,
            symbol: &cell.symbol,
            k: m.k,
            n: cell.n,
            setting: cell.setting.to_string(),
            base_ratio: self.base_ratio(cell)?,
            seed: cell.seed,
            triggers: &self.triggers[&cell.symbol],
            trainer: &m.trainer,
            bootstrap: &m.bootstrap,
        };
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&key)?)))
    }

    pub fn train_config(&self, cell: &Cell) -> TrainConfig {
        let mut cfg = self.manifest.trainer.clone();
        cfg.seed = cell.seed;
        if cell.setting.dro {
            cfg.objective = Objective::GroupDro;
        }
        if self.manifest.task == TaskKind::Program && cfg.grouping == Grouping::PerSymbol {
            cfg.grouping = Grouping::ContainsSymbol {
                symbol: cell.symbol.clone(),
            };
        }
        cfg
    }

    /// The cell's training split after dilution removal and upsampling.
    pub fn build_split(&self, cell: &Cell) -> Result<Split> {
        let pool = &self.carve.train_pool;
        let triggers = &self.triggers[&cell.symbol];
        let mut split = make_split(
            pool,
            SplitSpec {
                new_symbol: cell.symbol.clone(),
                k: self.manifest.k,
                n: cell.n,
                seed: cell.seed,
                source: self.corpus_digest.clone(),
            },
        )?;
        if cell.setting.no_dilution {
            // Only the max setting may shrink: nothing is left to backfill from.
            let opts = DilutionOptions {
                allow_deficit: cell.n >= max_setting_size(pool, &cell.symbol, self.manifest.k)?,
                target_strength: None,
            };
            split = remove_dilution(&split, pool, triggers, opts)?;
        }
        if let Some(up) = cell.setting.upsample {
            let plan = match up {
                Upsample::Fixed(ratio) => UpsamplePlan::Fixed { ratio },
                Upsample::Adaptive(_) => UpsamplePlan::Adaptive {
                    base_ratio: self.base_ratio(cell)?.expect("adaptive setting has a ratio"),
                },
            };
            split = plan.apply(&split, pool)?;
        }
        Ok(split)
    }

    fn cell_dir(&self, hash: &str) -> PathBuf {
        self.manifest.out_dir.join("cells").join(hash)
    }

    fn run_cell(&self, cell: &Cell) -> Result<(ResultRow, bool)> {
        let hash = self.cell_hash(cell)?;
        let dir = self.cell_dir(&hash);
        let row_path = dir.join("row.json");
        if let Ok(text) = fs::read_to_string(&row_path) {
            if let Ok(row) = serde_json::from_str::<ResultRow>(&text) {
                return Ok((row, false));
            }
            log::warn!("{}: unreadable row.json, recomputing", cell.label());
        }
        let start = Instant::now();
        let pool = &self.carve.train_pool;
        let triggers = &self.triggers[&cell.symbol];
        let split = self.build_split(cell)?;
        let model = dilution_core::train(&split, pool, &self.carve.dev, &self.train_config(cell))?;
        let metrics = evaluate(
            &model,
            &self.carve.test,
            &cell.symbol,
            Some(triggers),
            &self.manifest.bootstrap,
        )?;
        let signal = signal_report(&split, pool, &cell.symbol, triggers)?;
        let model_digest = model.digest();
        let ci = |name: &str| metrics.ci.get(name).copied();
        let overall_ci = ci("overall").ok_or_else(|| anyhow!("missing overall interval"))?;
        let row = ResultRow {
            symbol: cell.symbol.clone(),
            n: cell.n,
            setting: cell.setting.to_string(),
            seed: cell.seed,
            n_train: split.len(),
            overall_acc: metrics.overall_acc,
            new_symbol_acc: metrics.new_symbol_acc,
            competing_acc: metrics.competing_acc,
            strength: signal.strength,
            coverage: signal.coverage,
            imbalance: split.stats.imbalance,
            overall_ci_low: overall_ci.low,
            overall_ci_high: overall_ci.high,
            new_symbol_ci_low: ci("new_symbol").map(|i| i.low),
            new_symbol_ci_high: ci("new_symbol").map(|i| i.high),
            competing_ci_low: ci("competing").map(|i| i.low),
            competing_ci_high: ci("competing").map(|i| i.high),
            model_digest: model_digest.clone(),
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        ensure!(row.is_finite(), "non-finite metric");

        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("split.json"), split.to_json())?;
        let record = CellMetrics {
            cell: cell.clone(),
            hash,
            metrics,
            signal,
            deficit: split.deficit,
            model_digest,
        };
        fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&record)? + "\n")?;
        if self.manifest.save_models {
            fs::write(dir.join("model.bin"), model.to_bytes())?;
        }
        // row.json marks the cell as done, so it goes last and atomically.
        let tmp = dir.join("row.json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(&row)? + "\n")?;
        fs::rename(&tmp, &row_path)?;
        Ok((row, true))
    }
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, usize, String)> = Vec::new();
    let mut groups: BTreeMap<(String, usize, String), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.symbol.clone(), r.n, r.setting.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let len = g.len() as f64;
            let mean = |f: &dyn Fn(&ResultRow) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / len;
            let mean_opt = |f: &dyn Fn(&ResultRow) -> Option<f64>| {
                g.iter()
                    .map(|r| f(r))
                    .collect::<Option<Vec<f64>>>()
                    .map(|v| v.iter().sum::<f64>() / len)
            };
            SummaryRow {
                symbol: key.0,
                n: key.1,
                setting: key.2,
                seeds: g.len(),
                n_train: mean(&|r| r.n_train as f64),
                overall_acc: mean(&|r| r.overall_acc),
                new_symbol_acc: mean_opt(&|r| r.new_symbol_acc),
                competing_acc: mean_opt(&|r| r.competing_acc),
                strength: mean_opt(&|r| r.strength),
                coverage: mean_opt(&|r| r.coverage),
                imbalance: mean(&|r| r.imbalance),
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

const RESULT_HEADER: &[&str] = &[
    "symbol",
    "N",
    "setting",
    "seed",
    "n_train",
    "overall_acc",
    "new_symbol_acc",
    "competing_acc",
    "strength",
    "coverage",
    "imbalance",
    "overall_ci_low",
    "overall_ci_high",
    "new_symbol_ci_low",
    "new_symbol_ci_high",
    "competing_ci_low",
    "competing_ci_high",
    "model_digest",
    "wall_time_s",
];

const SUMMARY_HEADER: &[&str] = &[
    "symbol",
    "N",
    "setting",
    "seeds",
    "n_train",
    "overall_acc",
    "new_symbol_acc",
    "competing_acc",
    "strength",
    "coverage",
    "imbalance",
];

/// Runs every cell not already completed under `out_dir` and writes
/// `results.csv`, `summary.csv` and `failures.csv`. Manifest problems abort
/// before any training; cell failures are recorded and the sweep goes on.
pub fn run_sweep(manifest: Manifest) -> Result<SweepOutcome> {
    let exp = Experiment::prepare(manifest)?;
    let out_dir = exp.manifest.out_dir.clone();
    fs::create_dir_all(out_dir.join("cells")).with_context(|| format!("creating {}", out_dir.display()))?;
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&exp.manifest)? + "\n",
    )?;

    let cells = exp.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(exp.manifest.workers)
        .build()?;
    let results: Vec<Result<(ResultRow, bool)>> = pool.install(|| cells.par_iter().map(|c| exp.run_cell(c)).collect());

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let (mut computed, mut skipped) = (0, 0);
    for (cell, res) in cells.iter().zip(results) {
        match res {
            Ok((row, fresh)) => {
                if fresh {
                    computed += 1;
                } else {
                    skipped += 1;
                }
                rows.push(row);
            }
            Err(e) => {
                log::error!("{} failed: {e:#}", cell.label());
                failures.push(CellFailure {
                    cell: cell.label(),
                    reason: format!("{e:#}"),
                });
            }
        }
    }
    let summary = summarize(&rows);
    write_csv(&out_dir.join("results.csv"), &rows, RESULT_HEADER)?;
    write_csv(&out_dir.join("summary.csv"), &summary, SUMMARY_HEADER)?;
    write_csv(&out_dir.join("failures.csv"), &failures, &["cell", "reason"])?;
    log::info!("{computed} cells computed, {skipped} reused, {} failed", failures.len());
    Ok(SweepOutcome {
        rows,
        summary,
        failures,
        computed,
        skipped,
        out_dir,
    })
}
