use super::*;
use crate::corpus::FixtureSpec;
use crate::sentclass::{compute_metrics, NnHyper};

fn metrics_with(acc_correct: usize, n: usize) -> ClsMetrics {
    // First `acc_correct` predictions right, the rest wrong, two categories.
    let truth: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let pred: Vec<usize> = truth.iter().enumerate().map(|(i, &t)| if i < acc_correct { t } else { 1 - t }).collect();
    compute_metrics(&truth, &pred, 2).unwrap()
}

use crate::sentclass::ClsMetrics;

fn run(model: ClassifierKind, arm: Arm, seed: u64, correct: usize) -> RunRecord {
    RunRecord {
        model,
        family: model.family(),
        dataset: "toy".into(),
        arm,
        seed,
        epochs: 0,
        metrics: metrics_with(correct, 10),
    }
}

fn toy_report() -> ExperimentReport {
    use ClassifierKind::*;
    let runs = vec![
        run(Cnn, Arm::Imbalanced, 0, 5),
        run(Cnn, Arm::Balanced, 0, 8),
        run(Cnn, Arm::Imbalanced, 1, 6),
        run(Cnn, Arm::Balanced, 1, 7),
        run(Svm, Arm::Imbalanced, 0, 9),
        run(Svm, Arm::Balanced, 0, 9),
        run(Svm, Arm::Imbalanced, 1, 9),
        run(Svm, Arm::Balanced, 1, 8),
        run(Tree, Arm::Imbalanced, 0, 4),
        run(Tree, Arm::Balanced, 0, 6),
    ];
    build_report("toy", vec!["a".into(), "b".into()], vec![50, 10], runs, vec![], vec![]).unwrap()
}

fn row(r: &ExperimentReport, metric: Metric, group: Group) -> &DiffRow {
    r.differences[0].rows.iter().find(|x| x.metric == metric && x.group == group).unwrap()
}

#[test]
fn difference_block_matches_hand_means() {
    let r = toy_report();
    assert_eq!(r.differences.len(), 1);
    // CNN: (+30, +10) -> 20; SVM: (0, -10) -> -5; tree: +20.
    let dl = row(&r, Metric::Accuracy, Group::DeepLearning);
    assert!((dl.value - 20.0).abs() < 1e-9);
    assert_eq!(dl.models, 1);
    let ml = row(&r, Metric::Accuracy, Group::MachineLearning);
    assert!((ml.value - 7.5).abs() < 1e-9);
    // Overall weights families by model count: (20 * 1 + 7.5 * 2) / 3.
    let all = row(&r, Metric::Accuracy, Group::Overall);
    assert!((all.value - 35.0 / 3.0).abs() < 1e-9);
    assert_eq!(all.models, 3);
    assert!((r.imbalance_ratio - 5.0).abs() < 1e-12);
    let cnn_bal = r.means.iter().find(|m| m.model == ClassifierKind::Cnn && m.arm == Arm::Balanced).unwrap();
    assert!((cnn_bal.accuracy - 0.75).abs() < 1e-12);
}

#[test]
fn consistency_check_catches_tampering() {
    let mut r = toy_report();
    check_consistency(&r).unwrap();
    r.differences[0].rows[0].value += 0.01;
    assert!(matches!(check_consistency(&r), Err(Error::Report(_))));
    assert!(render_report(&r, Format::Markdown).is_err());
    let mut r = toy_report();
    r.runs[1].metrics.accuracy = 0.1;
    assert!(check_consistency(&r).is_err());
}

#[test]
fn json_round_trip_renders_stable_markdown() {
    let r = toy_report();
    let md = render_report(&r, Format::Markdown).unwrap();
    let json = render_report(&r, Format::Json).unwrap();
    let back: ExperimentReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
    assert_eq!(render_report(&back, Format::Markdown).unwrap(), md);
    assert_eq!(render_report(&back, Format::Json).unwrap(), json);
    for label in ["| Accuracy | Deep learning |", "| F1 | Machine Learning |", "| F1 | Overall average |"] {
        assert!(md.contains(label), "{md}");
    }
    let csv = render_report(&r, Format::Csv).unwrap();
    assert!(csv.starts_with("section,dataset,model,arm,seed,metric,value\n"));
    assert!(csv.contains("difference,toy,overall,balanced,,accuracy,"));
}

#[test]
fn report_needs_two_arms() {
    let runs = vec![run(ClassifierKind::Cnn, Arm::Imbalanced, 0, 5)];
    assert!(build_report("x", vec!["a".into(), "b".into()], vec![1, 1], runs, vec![], vec![]).is_err());
}

#[test]
fn config_requires_core_arms_and_seeds() {
    let mut c = ExperimentConfig::default();
    c.validate().unwrap();
    c.arms = vec![Arm::Imbalanced, Arm::Duplicated];
    assert!(c.validate().is_err());
    let mut c = ExperimentConfig::default();
    c.seeds.clear();
    assert!(c.validate().is_err());
    let json = serde_json::to_string(&ExperimentConfig::default()).unwrap();
    let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, ExperimentConfig::default());
    assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
}

/// Small fixture and fast settings shared by the pipeline tests.
fn tiny_config() -> ExperimentConfig {
    let mut fixture = FixtureSpec::with_counts(&[("positive", 150), ("negative", 30)]);
    fixture.lexicon_size = 12;
    fixture.shared_size = 12;
    fixture.max_len = 6;
    let mut c = ExperimentConfig {
        dataset_id: "tiny".into(),
        dataset: DatasetSource::Synthetic { fixture },
        classifiers: vec![ClassifierKind::NaiveBayes, ClassifierKind::Cnn],
        seeds: vec![3],
        ..ExperimentConfig::default()
    };
    c.prep.language_filter = None;
    c.vocab.max_len = 8;
    c.gan_model = GanModelConfig {
        emb_dim: 8,
        hidden: 16,
        cat_dim: 4,
        max_len: 8,
        disc_emb_dim: 8,
        disc_filters: 8,
        disc_widths: vec![2, 3],
        ..GanModelConfig::default()
    };
    c.train.pretrain_epochs = 2;
    c.train.disc_pretrain_steps = 2;
    c.train.adversarial_rounds = 2;
    c.train.batch_size = 16;
    c.train.fitness_samples = 32;
    c.train.eval_samples = 32;
    c.balance.filters.max_len = 7;
    c.classifier_hyper.nn = NnHyper { emb_dim: 8, filters: 8, max_len: 8, epochs: 2, ..NnHyper::default() };
    c
}

#[test]
fn duplicated_arm_needs_no_gan() {
    let mut c = tiny_config();
    c.arms = vec![Arm::Imbalanced, Arm::Duplicated];
    let p = prepare(&c, 3).unwrap();
    let arms = build_arms(&c, &p, 3).unwrap();
    assert!(arms.gan.is_none());
    let (_, dup) = &arms.arms[1];
    let counts = dup.counts(Some(Split::Train));
    assert_eq!(counts[0], counts[1]);
    assert_eq!(dup.split_vec(Split::Test), p.corpus.split_vec(Split::Test));
}

#[test]
fn full_run_is_deterministic_and_hygienic() {
    let mut c = tiny_config();
    c.arms = vec![Arm::Imbalanced, Arm::Balanced, Arm::Duplicated];
    let a = run_experiment(&c).unwrap();
    let b = run_experiment(&c).unwrap();
    let ja = render_report(&a, Format::Json).unwrap();
    assert_eq!(ja, render_report(&b, Format::Json).unwrap());
    assert_eq!(a.runs.len(), 2 * 3);
    assert_eq!(a.differences.len(), 2);
    assert_eq!(a.gan.len(), 1);
    let bal = a.balance.iter().find(|x| x.arm == Arm::Balanced).unwrap();
    assert!(bal.added > 0);
}

#[test]
fn stage_failures_name_the_stage() {
    let mut c = tiny_config();
    c.dataset = DatasetSource::Csv { path: "/nonexistent/data.csv".into(), schema: crate::corpus::Schema::Labeled2, rating_rule: Default::default() };
    match run_experiment(&c) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "load"),
        other => panic!("{other:?}"),
    }
}
