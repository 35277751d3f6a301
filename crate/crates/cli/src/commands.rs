//! Command line surface of the `dilution` binary.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use dilution_core::{
    carve_eval, evaluate, generate_corpus, make_split, max_setting_size, mine_triggers, remove_dilution, signal_report,
    upsample_adaptive, upsample_fixed, BootstrapConfig, Corpus, DilutionOptions, ModelState, SignalReport, Split,
    SplitSpec, SynthSpec, TaskKind, TrainConfig, TriggerSet,
};

use crate::manifest::{GridPoint, Manifest};
use crate::report::{write_report, ReportKind};
use crate::sweep::{read_results, run_sweep};

#[derive(Debug, Parser)]
#[command(name = "dilution", version, about = "Incremental symbol learning experiments")]
pub struct Cli {
    /// Seed for the command (for `sweep`, replaces the manifest's seed list).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for `sweep`.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_task(s: &str) -> std::result::Result<TaskKind, String> {
    match s {
        "intent" => Ok(TaskKind::Intent),
        "program" => Ok(TaskKind::Program),
        _ => Err(format!("unknown task `{s}`; expected intent or program")),
    }
}

#[derive(Debug, clap::Args)]
pub struct PoolArgs {
    /// Training pool in the corpus JSONL schema.
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long, default_value = "intent", value_parser = parse_task)]
    pub task: TaskKind,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus and carve it into train pool, dev and test.
    Ingest {
        input: PathBuf,
        #[arg(long, default_value = "intent", value_parser = parse_task)]
        task: TaskKind,
        #[arg(long, default_value_t = 0.1)]
        dev_fraction: f64,
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
    },
    /// Generate a synthetic corpus from `{"spec": ..., "counts": ...}`.
    Synth { spec: PathBuf },
    /// Draw a training split with `k` new-symbol examples out of `n`.
    Split {
        #[command(flatten)]
        pool: PoolArgs,
        #[arg(long)]
        symbol: String,
        #[arg(long)]
        k: usize,
        /// A size or `max`.
        #[arg(long)]
        n: GridPoint,
    },
    /// Source signal statistics of a split, or mined trigger candidates.
    Signal {
        #[command(flatten)]
        pool: PoolArgs,
        #[arg(long)]
        split: PathBuf,
        /// Trigger config file; the bundled tables by default.
        #[arg(long)]
        triggers: Option<PathBuf>,
        /// Mine trigger candidates seen at least this often instead.
        #[arg(long)]
        mine: Option<usize>,
        #[arg(long, default_value_t = 20)]
        top_k: usize,
    },
    /// Remove diluting examples from a split and backfill.
    Dilute {
        #[command(flatten)]
        pool: PoolArgs,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        triggers: Option<PathBuf>,
        #[arg(long)]
        allow_deficit: bool,
        #[arg(long)]
        target_strength: Option<f64>,
    },
    /// Duplicate the new symbol's examples.
    Upsample {
        #[command(flatten)]
        pool: PoolArgs,
        #[arg(long)]
        split: PathBuf,
        /// Copies per original.
        #[arg(long, conflicts_with = "adaptive")]
        fixed: Option<u32>,
        /// Target ratio `a/b` of new-symbol entries to N.
        #[arg(long)]
        adaptive: Option<String>,
    },
    /// Train a model on a split.
    Train {
        #[command(flatten)]
        pool: PoolArgs,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        /// Trainer config JSON; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score a model on a test set.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        symbol: String,
        #[arg(long)]
        triggers: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
    },
    /// Run every cell of a manifest.
    Sweep { manifest: PathBuf },
    /// Derive a plot-ready table from a results CSV.
    Report {
        results: PathBuf,
        /// accuracy, strength or competing.
        #[arg(long)]
        kind: String,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthRequest {
    spec: SynthSpec,
    counts: BTreeMap<String, usize>,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn read_split(path: &Path) -> Result<Split> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Split::from_json(&text)?)
}

fn triggers_for(path: Option<&Path>, symbol: &str) -> Result<BTreeSet<String>> {
    let sets = match path {
        Some(p) => TriggerSet::load_file(p)?,
        None => TriggerSet::bundled(),
    };
    match sets.into_iter().find(|s| s.symbol == symbol) {
        Some(s) => Ok(s.tokens),
        None => bail!("no trigger set for `{symbol}`"),
    }
}

fn load_pool(p: &PoolArgs) -> Result<Corpus> {
    Ok(Corpus::load(&p.pool, p.task)?)
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().context("--out is required")
}

/// Runs one invocation and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Ingest {
            input,
            task,
            dev_fraction,
            test_fraction,
        } => {
            let dir = out_dir(&cli)?;
            let corpus = Corpus::load(input, *task)?;
            let carve = carve_eval(&corpus, *dev_fraction, *test_fraction, cli.seed.unwrap_or(0))?;
            fs::create_dir_all(dir)?;
            carve.train_pool.write(dir.join("train_pool.jsonl"))?;
            carve.dev.write(dir.join("dev.jsonl"))?;
            carve.test.write(dir.join("test.jsonl"))?;
            println!("digest {}", corpus.digest());
            println!(
                "examples {} (train pool {}, dev {}, test {})",
                corpus.len(),
                carve.train_pool.len(),
                carve.dev.len(),
                carve.test.len()
            );
            for (symbol, count) in corpus.inventory() {
                println!("{symbol}\t{count}");
            }
        }
        Command::Synth { spec } => {
            let text = fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
            let mut req: SynthRequest = serde_json::from_str(&text)?;
            if let Some(seed) = cli.seed {
                req.spec.seed = seed;
            }
            let corpus = generate_corpus(&req.spec, &req.counts)?;
            emit(out, &corpus.to_jsonl())?;
        }
        Command::Split { pool, symbol, k, n } => {
            let corpus = load_pool(pool)?;
            let n = match n {
                GridPoint::Size(n) => *n,
                GridPoint::Max => max_setting_size(&corpus, symbol, *k)?,
            };
            let split = make_split(
                &corpus,
                SplitSpec {
                    new_symbol: symbol.clone(),
                    k: *k,
                    n,
                    seed: cli.seed.unwrap_or(0),
                    source: corpus.digest(),
                },
            )?;
            emit(out, &split.to_json())?;
        }
        Command::Signal {
            pool,
            split,
            triggers,
            mine,
            top_k,
        } => {
            let corpus = load_pool(pool)?;
            let split = read_split(split)?;
            let symbol = split.new_symbol().to_string();
            let text = match mine {
                Some(min_count) => {
                    let mut s = String::from("token,strength,count,count_with_symbol\n");
                    for m in mine_triggers(&split, &corpus, &symbol, *min_count, *top_k)? {
                        s.push_str(&format!(
                            "{},{},{},{}\n",
                            m.token, m.strength, m.count, m.count_with_symbol
                        ));
                    }
                    s
                }
                None => {
                    let t = triggers_for(triggers.as_deref(), &symbol)?;
                    let report = signal_report(&split, &corpus, &symbol, &t)?;
                    format!("{}\n{}\n", SignalReport::CSV_HEADER, report.csv_row())
                }
            };
            emit(out, &text)?;
        }
        Command::Dilute {
            pool,
            split,
            triggers,
            allow_deficit,
            target_strength,
        } => {
            let corpus = load_pool(pool)?;
            let split = read_split(split)?;
            let t = triggers_for(triggers.as_deref(), split.new_symbol())?;
            let opts = DilutionOptions {
                allow_deficit: *allow_deficit,
                target_strength: *target_strength,
            };
            emit(out, &remove_dilution(&split, &corpus, &t, opts)?.to_json())?;
        }
        Command::Upsample {
            pool,
            split,
            fixed,
            adaptive,
        } => {
            let corpus = load_pool(pool)?;
            let split = read_split(split)?;
            let result = match (fixed, adaptive) {
                (Some(r), None) => upsample_fixed(&split, &corpus, *r)?,
                (None, Some(a)) => {
                    let setting: crate::manifest::Setting = format!("upsample_adaptive({a})").parse()?;
                    match setting.upsample {
                        Some(crate::manifest::Upsample::Adaptive(Some(r))) => upsample_adaptive(&split, &corpus, r)?,
                        _ => unreachable!("parsed as adaptive"),
                    }
                }
                _ => bail!("pass exactly one of --fixed or --adaptive"),
            };
            emit(out, &result.to_json())?;
        }
        Command::Train {
            pool,
            split,
            dev,
            config,
        } => {
            let path = out_dir(&cli)?;
            let corpus = load_pool(pool)?;
            let split = read_split(split)?;
            let dev = Corpus::load(dev, pool.task)?;
            let mut cfg: TrainConfig = match config {
                Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
                None => TrainConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let model = dilution_core::train(&split, &corpus, &dev, &cfg)?;
            fs::write(path, model.to_bytes())?;
            println!("model {}", model.digest());
        }
        Command::Eval {
            model,
            test,
            symbol,
            triggers,
            resamples,
        } => {
            let bytes = fs::read(model).with_context(|| format!("reading {}", model.display()))?;
            let model = ModelState::from_bytes(&bytes)?;
            let test = Corpus::load(test, model.task())?;
            let t = match triggers {
                Some(p) => Some(triggers_for(Some(p), symbol)?),
                None => triggers_for(None, symbol).ok(),
            };
            let boot = BootstrapConfig {
                resamples: *resamples,
                seed: cli.seed.unwrap_or(0),
                ..BootstrapConfig::default()
            };
            let report = evaluate(&model, &test, symbol, t.as_ref(), &boot)?;
            emit(out, &(serde_json::to_string_pretty(&report)? + "\n"))?;
        }
        Command::Sweep { manifest } => {
            let mut m = Manifest::load(manifest)?;
            if let Some(o) = &cli.out {
                m.out_dir = o.clone();
            }
            if let Some(w) = cli.workers {
                m.workers = w;
            }
            if let Some(s) = cli.seed {
                m.seeds = vec![s];
            }
            let outcome = run_sweep(m)?;
            println!(
                "{} rows ({} computed, {} reused), {} failed; results in {}",
                outcome.rows.len(),
                outcome.computed,
                outcome.skipped,
                outcome.failures.len(),
                outcome.out_dir.display()
            );
            for f in &outcome.failures {
                eprintln!("FAILED {}: {}", f.cell, f.reason);
            }
            return Ok(if outcome.success() { 0 } else { 1 });
        }
        Command::Report { results, kind } => {
            let kind: ReportKind = kind.parse()?;
            let rows = read_results(results)?;
            let dir = match out {
                Some(d) => d.to_path_buf(),
                None => results.parent().unwrap_or(Path::new(".")).to_path_buf(),
            };
            fs::create_dir_all(&dir)?;
            println!("{}", write_report(&rows, kind, &dir)?.display());
        }
    }
    Ok(0)
}
