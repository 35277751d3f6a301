//! Plot-ready tables derived from sweep rows.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, ensure, Result};

use crate::sweep::ResultRow;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportKind {
    /// New-symbol accuracy against N, one column group per setting.
    Accuracy,
    /// Baseline source signal strength against N.
    Strength,
    /// Competing-subset accuracy per setting at the largest N.
    Competing,
}

impl ReportKind {
    pub const ALL: [ReportKind; 3] = [ReportKind::Accuracy, ReportKind::Strength, ReportKind::Competing];

    pub fn name(self) -> &'static str {
        match self {
            ReportKind::Accuracy => "accuracy",
            ReportKind::Strength => "strength",
            ReportKind::Competing => "competing",
        }
    }
}

impl fmt::Display for ReportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReportKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        ReportKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = ReportKind::ALL.iter().map(|k| k.name()).collect();
            anyhow!("unknown report kind `{s}`; valid kinds: {}", valid.join(", "))
        })
    }
}

/// A header line plus rows of fields. Numbers use the shortest
/// representation that parses back to the same value; missing values are
/// empty fields.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    pub fn from_csv(text: &str) -> Result<Table> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn mean(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().collect::<Option<_>>()?;
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Settings in order of first appearance.
fn settings(rows: &[ResultRow]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    rows.iter()
        .filter(|r| seen.insert(r.setting.clone()))
        .map(|r| r.setting.clone())
        .collect()
}

type Key = (String, usize, String);

fn group(rows: &[ResultRow]) -> BTreeMap<Key, Vec<&ResultRow>> {
    let mut g: BTreeMap<Key, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        g.entry((r.symbol.clone(), r.n, r.setting.clone())).or_default().push(r);
    }
    g
}

/// Builds the table for `kind`. Values are seed means; interval columns
/// average the per-seed bootstrap bounds.
pub fn report(rows: &[ResultRow], kind: ReportKind) -> Result<Table> {
    ensure!(!rows.is_empty(), "no result rows to report");
    let groups = group(rows);
    let points: BTreeSet<(String, usize)> = rows.iter().map(|r| (r.symbol.clone(), r.n)).collect();
    let names = settings(rows);
    let get = |sym: &str, n: usize, setting: &str| groups.get(&(sym.to_string(), n, setting.to_string()));

    Ok(match kind {
        ReportKind::Accuracy => {
            let mut header = vec!["symbol".to_string(), "N".to_string()];
            for s in &names {
                header.extend([s.clone(), format!("{s}_ci_low"), format!("{s}_ci_high")]);
            }
            let rows = points
                .iter()
                .map(|(sym, n)| {
                    let mut out = vec![sym.clone(), n.to_string()];
                    for s in &names {
                        let g = get(sym, *n, s).map(Vec::as_slice).unwrap_or(&[]);
                        out.push(num(mean(g.iter().map(|r| r.new_symbol_acc))));
                        out.push(num(mean(g.iter().map(|r| r.new_symbol_ci_low))));
                        out.push(num(mean(g.iter().map(|r| r.new_symbol_ci_high))));
                    }
                    out
                })
                .collect();
            Table { header, rows }
        }
        ReportKind::Strength => {
            let rows: Vec<Vec<String>> = points
                .iter()
                .filter_map(|(sym, n)| {
                    let g = get(sym, *n, "baseline")?;
                    Some(vec![
                        sym.clone(),
                        n.to_string(),
                        num(mean(g.iter().map(|r| r.strength))),
                    ])
                })
                .collect();
            ensure!(!rows.is_empty(), "strength report needs baseline rows");
            Table {
                header: vec!["symbol".into(), "N".into(), "strength".into()],
                rows,
            }
        }
        ReportKind::Competing => {
            let mut max_n: BTreeMap<&str, usize> = BTreeMap::new();
            for (sym, n) in &points {
                let m = max_n.entry(sym.as_str()).or_default();
                *m = (*m).max(*n);
            }
            let mut out = Vec::new();
            for (sym, n) in max_n {
                for s in &names {
                    if let Some(g) = get(sym, n, s) {
                        out.push(vec![
                            sym.to_string(),
                            n.to_string(),
                            s.clone(),
                            num(mean(g.iter().map(|r| r.competing_acc))),
                            num(mean(g.iter().map(|r| r.competing_ci_low))),
                            num(mean(g.iter().map(|r| r.competing_ci_high))),
                        ]);
                    }
                }
            }
            Table {
                header: ["symbol", "N", "setting", "competing_acc", "ci_low", "ci_high"]
                    .map(String::from)
                    .to_vec(),
                rows: out,
            }
        }
    })
}

/// Writes `report_<kind>.csv` into `dir` and returns its path.
pub fn write_report(rows: &[ResultRow], kind: ReportKind, dir: &Path) -> Result<std::path::PathBuf> {
    let table = report(rows, kind)?;
    let path = dir.join(format!("report_{kind}.csv"));
    std::fs::write(&path, table.to_csv()?)?;
    Ok(path)
}
