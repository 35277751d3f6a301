//! Experiment manifests and the settings grammar.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, ensure, Context, Result};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use dilution_core::{BootstrapConfig, Ratio, SynthSpec, TaskKind, TrainConfig, TriggerSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub task: TaskKind,
    pub corpus: CorpusSource,
    #[serde(default)]
    pub carve: CarveConfig,
    pub symbols: Vec<String>,
    pub k: usize,
    /// Defaults to the standard grid for the task.
    #[serde(default)]
    pub grid: Option<Vec<GridPoint>>,
    #[serde(default = "default_settings")]
    pub settings: Vec<Setting>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub triggers: TriggerSource,
    #[serde(default)]
    pub trainer: TrainConfig,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Keep each cell's trained model next to its metrics.
    #[serde(default)]
    pub save_models: bool,
}

fn default_settings() -> Vec<Setting> {
    vec![Setting::baseline()]
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_workers() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    File {
        path: PathBuf,
    },
    Synth {
        spec: SynthSpec,
        counts: BTreeMap<String, usize>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarveConfig {
    pub dev_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for CarveConfig {
    fn default() -> Self {
        CarveConfig {
            dev_fraction: 0.1,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum TriggerSource {
    /// The synth spec's triggers for synthetic corpora, the bundled tables
    /// otherwise.
    #[default]
    Auto,
    Bundled,
    File {
        path: PathBuf,
    },
    Inline {
        sets: Vec<TriggerSet>,
    },
    /// Top tokens by single-token strength over the whole training pool.
    Mined {
        min_count: usize,
        top_k: usize,
    },
}

/// A point of the N grid: a size or the largest feasible split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GridPoint {
    Size(usize),
    Max,
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridPoint::Size(n) => write!(f, "{n}"),
            GridPoint::Max => f.write_str("max"),
        }
    }
}

impl FromStr for GridPoint {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "max" {
            return Ok(GridPoint::Max);
        }
        s.parse()
            .map(GridPoint::Size)
            .map_err(|_| anyhow!("grid point `{s}` is neither a size nor `max`"))
    }
}

impl Serialize for GridPoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            GridPoint::Size(n) => s.serialize_u64(*n as u64),
            GridPoint::Max => s.serialize_str("max"),
        }
    }
}

impl<'de> Deserialize<'de> for GridPoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => Ok(GridPoint::Size(n)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

pub fn default_grid(task: TaskKind) -> Vec<GridPoint> {
    let sizes: &[usize] = match task {
        TaskKind::Intent => &[750, 1500, 3000, 7500, 15000, 18000],
        TaskKind::Program => &[5000, 10000, 20000, 50000, 100000],
    };
    let mut grid: Vec<GridPoint> = sizes.iter().map(|&n| GridPoint::Size(n)).collect();
    if task == TaskKind::Program {
        grid.push(GridPoint::Max);
    }
    grid
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Upsample {
    Fixed(u32),
    /// `None` uses `k` over the smallest grid size.
    Adaptive(Option<Ratio>),
}

/// An ordered pipeline applied to the baseline split: dilution removal,
/// then upsampling, then the training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Setting {
    pub no_dilution: bool,
    pub upsample: Option<Upsample>,
    pub dro: bool,
}

impl Setting {
    pub fn baseline() -> Setting {
        Setting {
            no_dilution: false,
            upsample: None,
            dro: false,
        }
    }

    pub fn is_baseline(&self) -> bool {
        *self == Setting::baseline()
    }
}

fn parse_arg<'a>(part: &'a str, name: &str) -> Option<Option<&'a str>> {
    let rest = part.strip_prefix(name)?;
    if rest.is_empty() {
        return Some(None);
    }
    rest.strip_prefix('(')?.strip_suffix(')').map(Some)
}

fn parse_ratio(s: &str) -> Result<Ratio> {
    let (num, den) = s
        .split_once('/')
        .ok_or_else(|| anyhow!("ratio `{s}` is not of the form a/b"))?;
    Ok(Ratio::new(num.trim().parse()?, den.trim().parse()?)?)
}

impl FromStr for Setting {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "baseline" {
            return Ok(Setting::baseline());
        }
        let mut out = Setting::baseline();
        for part in s.split('+').map(str::trim) {
            if part == "no_dilution" {
                ensure!(!out.no_dilution, "`no_dilution` repeated in `{s}`");
                out.no_dilution = true;
            } else if part == "dro" {
                ensure!(!out.dro, "`dro` repeated in `{s}`");
                out.dro = true;
            } else if let Some(arg) = parse_arg(part, "upsample_fixed") {
                ensure!(out.upsample.is_none(), "more than one upsampling step in `{s}`");
                let ratio = match arg {
                    Some(a) => a.trim().parse().with_context(|| format!("bad ratio in `{part}`"))?,
                    None => 32,
                };
                ensure!(ratio >= 1, "upsampling ratio must be at least 1");
                out.upsample = Some(Upsample::Fixed(ratio));
            } else if let Some(arg) = parse_arg(part, "upsample_adaptive") {
                ensure!(out.upsample.is_none(), "more than one upsampling step in `{s}`");
                out.upsample = Some(Upsample::Adaptive(arg.map(parse_ratio).transpose()?));
            } else {
                bail!(
                    "unknown setting `{part}`; expected baseline, no_dilution, upsample_fixed[(r)], \
                     upsample_adaptive[(a/b)] or dro, joined with `+`"
                );
            }
        }
        Ok(out)
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.no_dilution {
            parts.push("no_dilution".to_string());
        }
        match self.upsample {
            Some(Upsample::Fixed(r)) => parts.push(format!("upsample_fixed({r})")),
            Some(Upsample::Adaptive(None)) => parts.push("upsample_adaptive".into()),
            Some(Upsample::Adaptive(Some(r))) => parts.push(format!("upsample_adaptive({r})")),
            None => {}
        }
        if self.dro {
            parts.push("dro".into());
        }
        if parts.is_empty() {
            f.write_str("baseline")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

impl Serialize for Setting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Setting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Manifest> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a manifest; relative paths inside it are taken relative to the
    /// manifest's directory.
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut m = Manifest::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        m.rebase(base);
        Ok(m)
    }

    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let CorpusSource::File { path } = &mut self.corpus {
            fix(path);
        }
        if let TriggerSource::File { path } = &mut self.triggers {
            fix(path);
        }
        fix(&mut self.out_dir);
    }

    pub fn grid(&self) -> Vec<GridPoint> {
        self.grid.clone().unwrap_or_else(|| default_grid(self.task))
    }

    /// Checks everything that does not need the corpus.
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.symbols.is_empty(), "no symbols under study");
        let unique: BTreeSet<&String> = self.symbols.iter().collect();
        ensure!(unique.len() == self.symbols.len(), "duplicate symbol in manifest");
        ensure!(self.k >= 1, "k must be at least 1");
        let grid = self.grid();
        ensure!(!grid.is_empty(), "empty N grid");
        let unique: BTreeSet<GridPoint> = grid.iter().copied().collect();
        ensure!(unique.len() == grid.len(), "duplicate N grid point");
        for g in &grid {
            if let GridPoint::Size(n) = g {
                ensure!(*n >= self.k, "grid size {n} is smaller than k = {}", self.k);
            }
        }
        ensure!(!self.settings.is_empty(), "no settings");
        let names: BTreeSet<String> = self.settings.iter().map(Setting::to_string).collect();
        ensure!(names.len() == self.settings.len(), "duplicate setting");
        ensure!(!self.seeds.is_empty(), "no seeds");
        let seeds: BTreeSet<u64> = self.seeds.iter().copied().collect();
        ensure!(seeds.len() == self.seeds.len(), "duplicate seed");
        ensure!(self.workers >= 1, "workers must be at least 1");
        ensure!(
            self.bootstrap.resamples >= 100,
            "bootstrap needs at least 100 resamples"
        );
        self.trainer.validate()?;
        if let CorpusSource::Synth { spec, .. } = &self.corpus {
            spec.validate()?;
        }
        if let TriggerSource::Mined { min_count, top_k } = self.triggers {
            ensure!(
                min_count >= 1 && top_k >= 1,
                "mined triggers need min_count and top_k of at least 1"
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_round_trip() {
        for s in [
            "baseline",
            "no_dilution",
            "dro",
            "upsample_fixed(32)",
            "upsample_adaptive",
            "upsample_adaptive(30/750)",
            "no_dilution+upsample_fixed(8)+dro",
        ] {
            let parsed: Setting = s.parse().unwrap();
            assert_eq!(parsed.to_string(), s);
        }
    }

    #[test]
    fn setting_order_is_canonical() {
        let a: Setting = "dro+no_dilution".parse().unwrap();
        assert_eq!(a.to_string(), "no_dilution+dro");
        let b: Setting = "upsample_fixed".parse().unwrap();
        assert_eq!(b.upsample, Some(Upsample::Fixed(32)));
    }

    #[test]
    fn bad_settings() {
        for s in [
            "",
            "upsample",
            "dro+dro",
            "upsample_fixed(0)",
            "upsample_fixed+upsample_adaptive",
            "upsample_adaptive(3)",
        ] {
            assert!(s.parse::<Setting>().is_err(), "{s}");
        }
        let err = "oversample".parse::<Setting>().unwrap_err().to_string();
        assert!(err.contains("no_dilution"));
    }

    #[test]
    fn grid_points() {
        let g: Vec<GridPoint> = serde_json::from_str(r#"[750, "max"]"#).unwrap();
        assert_eq!(g, vec![GridPoint::Size(750), GridPoint::Max]);
        assert_eq!(serde_json::to_string(&g).unwrap(), r#"[750,"max"]"#);
        assert!(serde_json::from_str::<Vec<GridPoint>>(r#"["huge"]"#).is_err());
    }

    #[test]
    fn defaults() {
        let m = Manifest::from_json(
            r#"{"task":"intent","corpus":{"kind":"file","path":"c.jsonl"},"symbols":["play_radio"],"k":30}"#,
        )
        .unwrap();
        assert_eq!(m.seeds, vec![0, 1, 2]);
        assert_eq!(m.grid().len(), 6);
        assert_eq!(m.settings, vec![Setting::baseline()]);
        m.validate().unwrap();
        assert_eq!(default_grid(TaskKind::Program).last(), Some(&GridPoint::Max));
    }

    #[test]
    fn invalid_manifests() {
        let base = r#"{"task":"intent","corpus":{"kind":"file","path":"c.jsonl"},"symbols":["a"],"k":30"#;
        for extra in [
            r#","grid":[10]"#,
            r#","seeds":[]"#,
            r#","settings":["dro","dro"]"#,
            r#","workers":0"#,
        ] {
            let m = Manifest::from_json(&format!("{base}{extra}}}")).unwrap();
            assert!(m.validate().is_err(), "{extra}");
        }
        assert!(Manifest::from_json(&format!(r#"{base},"typo":1}}"#)).is_err());
    }

    #[test]
    fn rebase_relative_paths() {
        let mut m = Manifest::from_json(
            r#"{"task":"intent","corpus":{"kind":"file","path":"c.jsonl"},"symbols":["a"],"k":3,"out_dir":"/abs"}"#,
        )
        .unwrap();
        m.rebase(Path::new("/exp"));
        assert_eq!(
            m.corpus,
            CorpusSource::File {
                path: PathBuf::from("/exp/c.jsonl")
            }
        );
        assert_eq!(m.out_dir, PathBuf::from("/abs"));
    }
}
