use dilution_core::trainer::{train_examples, Grouping};
use dilution_core::{
    evaluate, predict, BootstrapConfig, Corpus, Example, FeatureConfig, ModelState, Objective, Prediction, TaskKind,
    TrainConfig,
};

fn config(objective: Objective, epochs: usize) -> TrainConfig {
    TrainConfig {
        objective,
        epochs,
        learning_rate: 1.0,
        lr_decay: 0.0,
        batch_size: 8,
        features: FeatureConfig {
            hash_dim: 1024,
            ngram_order: 1,
        },
        ..TrainConfig::default()
    }
}

fn corpus(rows: &[(String, &str)]) -> Corpus {
    let ex = rows
        .iter()
        .enumerate()
        .map(|(i, (utt, label))| Example::intent(format!("e{i}"), utt.as_str(), *label).unwrap())
        .collect();
    Corpus::new(TaskKind::Intent, ex).unwrap()
}

fn accuracy(model: &ModelState, c: &Corpus) -> f64 {
    c.examples().iter().filter(|e| predict(model, e).matches(e)).count() as f64 / c.len() as f64
}

#[test]
fn separable_toy_is_fit_within_twenty_epochs() {
    let rows: Vec<(String, &str)> = (0..60)
        .map(|i| match i % 3 {
            0 => (format!("weather in city{i}"), "weather"),
            1 => (format!("play song{i}"), "music"),
            _ => (format!("alarm at hour{i}"), "alarm"),
        })
        .collect();
    let c = corpus(&rows);
    let refs: Vec<&Example> = c.examples().iter().collect();
    let model = train_examples(&refs, &c, &config(Objective::Erm, 20)).unwrap();
    assert_eq!(accuracy(&model, &c), 1.0);
}

#[test]
fn predictions_follow_the_majority_label_of_a_token() {
    let mut rows = Vec::new();
    for i in 0..100 {
        rows.push(("x".to_string(), if i < 70 { "a" } else { "b" }));
        rows.push(("y".to_string(), if i < 20 { "a" } else { "b" }));
    }
    let c = corpus(&rows);
    let refs: Vec<&Example> = c.examples().iter().collect();
    let model = train_examples(&refs, &c, &config(Objective::Erm, 20)).unwrap();
    let probe = |utt: &str| predict(&model, &Example::intent("p", utt, "a").unwrap());
    assert_eq!(probe("x"), Prediction::Label("a".into()));
    assert_eq!(probe("y"), Prediction::Label("b".into()));
}

#[test]
fn group_dro_recovers_a_rare_class_at_least_as_well_as_erm() {
    // The rare class shares its cue with many majority examples.
    let mut train = Vec::new();
    for i in 0..12 {
        train.push((format!("cue rare{} extra", i % 3), "rare"));
    }
    for i in 0..300 {
        let utt = if i % 5 == 0 {
            format!("cue common{}", i % 7)
        } else {
            format!("common{} plain", i % 7)
        };
        train.push((utt, "common"));
    }
    let mut test = Vec::new();
    for i in 0..30 {
        test.push((format!("cue rare{} extra", i % 3), "rare"));
        test.push((format!("common{} plain", i % 7), "common"));
    }
    let (train, test) = (corpus(&train), corpus(&test));
    let refs: Vec<&Example> = train.examples().iter().collect();
    let recall = |objective| {
        let cfg = TrainConfig {
            grouping: Grouping::PerSymbol,
            ..config(objective, 5)
        };
        let model = train_examples(&refs, &test, &cfg).unwrap();
        let boot = BootstrapConfig {
            resamples: 100,
            ..BootstrapConfig::default()
        };
        evaluate(&model, &test, "rare", None, &boot)
            .unwrap()
            .new_symbol_acc
            .unwrap()
    };
    assert!(recall(Objective::GroupDro) >= recall(Objective::Erm));
}

#[test]
fn artifacts_round_trip() {
    let rows: Vec<(String, &str)> = (0..20)
        .map(|i| (format!("w{} v{}", i % 4, i % 3), if i % 2 == 0 { "a" } else { "b" }))
        .collect();
    let c = corpus(&rows);
    let refs: Vec<&Example> = c.examples().iter().collect();
    let model = train_examples(&refs, &c, &config(Objective::Erm, 3)).unwrap();
    let bytes = model.to_bytes();
    let back = ModelState::from_bytes(&bytes).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.digest(), model.digest());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(ModelState::from_bytes(&bad).is_err());
    assert!(ModelState::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}
