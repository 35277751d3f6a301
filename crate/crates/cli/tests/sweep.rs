use std::fs;
use std::path::Path;

use dilution_cli::sweep::read_results;
use dilution_cli::{report, run_sweep, Manifest, ReportKind, Table};

fn manifest(out: &Path, settings: &str, grid: &str) -> Manifest {
    let text = format!(
        r#"{{
  "task": "intent",
  "corpus": {{
    "kind": "synth",
    "spec": {{
      "symbols": [
        {{"name": "a", "triggers": ["ta"], "p_trig": 1.0}},
        {{"name": "b", "triggers": ["tb"], "p_trig": 0.8}},
        {{"name": "c", "triggers": ["tc"], "p_trig": 0.8}}
      ],
      "p_cross": 0.05, "vocab_size": 60, "zipf_exponent": 1.0,
      "background_specificity": 0.3, "seed": 5
    }},
    "counts": {{"a": 60, "b": 200, "c": 200}}
  }},
  "symbols": ["a"],
  "k": 10,
  "grid": {grid},
  "settings": {settings},
  "trainer": {{"learning_rate": 4.0, "lr_decay": 0.0, "epochs": 3, "batch_size": 16,
               "features": {{"hash_dim": 1024, "ngram_order": 1}}}},
  "bootstrap": {{"resamples": 100}},
  "out_dir": "{}",
  "workers": 2
}}"#,
        out.display()
    );
    Manifest::from_json(&text).unwrap()
}

#[test]
fn twelve_rows_four_summaries_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), r#"["baseline", "no_dilution"]"#, "[100, 200]");
    let first = run_sweep(m.clone()).unwrap();
    assert!(first.success(), "{:?}", first.failures);
    assert_eq!(first.rows.len(), 12);
    assert_eq!(first.summary.len(), 4);
    assert_eq!(first.computed, 12);

    for s in &first.summary {
        let seeds: Vec<_> = first
            .rows
            .iter()
            .filter(|r| r.symbol == s.symbol && r.n == s.n && r.setting == s.setting)
            .collect();
        assert_eq!(seeds.len(), 3);
        let mean = seeds.iter().map(|r| r.overall_acc).sum::<f64>() / 3.0;
        assert!((s.overall_acc - mean).abs() <= 1e-15);
    }
    for r in first.rows.iter().filter(|r| r.setting == "no_dilution") {
        assert_eq!(r.strength, Some(1.0));
        assert_eq!(r.n_train, r.n);
    }

    let parsed = read_results(&dir.path().join("results.csv")).unwrap();
    assert_eq!(parsed, first.rows);

    let again = run_sweep(m.clone()).unwrap();
    assert_eq!((again.computed, again.skipped), (0, 12));
    assert_eq!(again.rows, first.rows);

    let victim = fs::read_dir(dir.path().join("cells"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    fs::remove_dir_all(&victim).unwrap();
    let third = run_sweep(m).unwrap();
    assert_eq!((third.computed, third.skipped), (1, 11));
    assert!(victim.join("row.json").exists());
    let strip = |rows: &[dilution_cli::ResultRow]| {
        rows.iter()
            .map(|r| {
                let mut r = r.clone();
                r.wall_time_s = 0.0;
                r
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&third.rows), strip(&first.rows));
}

#[test]
fn grid_beyond_max_aborts_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let m = manifest(&out, r#"["baseline"]"#, "[100, 100000]");
    let err = run_sweep(m).unwrap_err().to_string();
    assert!(err.contains("exceeds the max setting"), "{err}");
    assert!(!out.exists());
}

#[test]
fn failing_cells_are_recorded_and_the_rest_run() {
    let dir = tempfile::tempdir().unwrap();
    // 1/1000 of N = 100 rounds to zero new-symbol entries, below k.
    let m = manifest(dir.path(), r#"["baseline", "upsample_adaptive(1/1000)"]"#, "[100]");
    let outcome = run_sweep(m).unwrap();
    assert!(!outcome.success());
    assert_eq!(outcome.rows.len(), 3);
    assert_eq!(outcome.failures.len(), 3);
    let failures = fs::read_to_string(dir.path().join("failures.csv")).unwrap();
    assert_eq!(failures.lines().count(), 4);
}

#[test]
fn max_grid_point_and_composed_settings() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = manifest(
        dir.path(),
        r#"["no_dilution+upsample_fixed(4)+dro", "upsample_adaptive"]"#,
        r#"[100, "max"]"#,
    );
    m.seeds = vec![3];
    let outcome = run_sweep(m).unwrap();
    assert!(outcome.success(), "{:?}", outcome.failures);
    let composed: Vec<_> = outcome
        .rows
        .iter()
        .filter(|r| r.setting.starts_with("no_dilution"))
        .collect();
    assert!(composed.iter().all(|r| r.strength == Some(1.0)));
    // 10 originals become 40 entries on top of the split.
    assert_eq!(composed[0].n_train, 100 + 30);
    let adaptive = outcome
        .rows
        .iter()
        .find(|r| r.setting == "upsample_adaptive" && r.n > 100)
        .unwrap();
    let target = (10.0 * adaptive.n as f64 / 100.0).round() as usize;
    assert_eq!(adaptive.n_train, adaptive.n - 10 + target);
}

#[test]
fn reports_from_written_results_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path(), r#"["baseline", "no_dilution", "dro"]"#, "[100, 200]");
    let outcome = run_sweep(m).unwrap();
    let rows = read_results(&dir.path().join("results.csv")).unwrap();
    for kind in ReportKind::ALL {
        let path = dilution_cli::report::write_report(&rows, kind, dir.path()).unwrap();
        let parsed = Table::from_csv(&fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(parsed, report(&outcome.rows, kind).unwrap());
    }
    let strength = report(&rows, ReportKind::Strength).unwrap();
    assert_eq!(strength.header, ["symbol", "N", "strength"]);
    assert_eq!(strength.rows.len(), 2);
}
