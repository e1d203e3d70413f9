//! Acceptance suite: nine numbered criteria, one pass/fail line each.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.
//! The desk-scale pipeline (criteria 7 and 8) trains on 2,400 synthetic
//! images in deterministic single-worker mode and takes several minutes.

use std::collections::{BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use tickdist::data::{
    decode_attention_records, encode_attention_records, generate_synthetic_dataset,
    AttentionRecord, ImageStore,
};
use tickdist::distill::{
    at_loss, generate_soft_labels, AttentionMap, SoftLabelOrigin, AT_EPSILON,
};
use tickdist::metrics::{self, ScoredSample};
use tickdist::model::{
    build_lighter_cnn, build_surrogate_teacher, deserialize, lighter_cnn_spec, serialize,
    Model, Profile,
};
use tickdist::train::{
    kfold, score_items, split_dataset, teacher_records, train_at, train_at_lsr, train_baseline,
    FileTeacher, ModelTeacher, TrainConfig, TrainData, TrainHistory,
};
use tickdist::verify;
use tickdist::{Result, Tensor};

const PIPELINE_SEED: u64 = 4242;
const DATASET_N: usize = 2400;

fn check(
    results: &mut Vec<(usize, &'static str, std::result::Result<String, String>)>,
    number: usize,
    name: &'static str,
    body: impl FnOnce() -> Result<String>,
) {
    let started = Instant::now();
    let outcome = match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(detail)) => Ok(format!("{detail} [{:.1}s]", started.elapsed().as_secs_f64())),
        Ok(Err(e)) => Err(format!("{e}")),
        Err(panic) => Err(match panic.downcast_ref::<String>() {
            Some(s) => s.clone(),
            None => panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .unwrap_or_else(|| "panic".to_string()),
        }),
    };
    let line = match &outcome {
        Ok(detail) => format!("[PASS] criterion {number} ({name}): {detail}"),
        Err(detail) => format!("[FAIL] criterion {number} ({name}): {detail}"),
    };
    println!("{line}");
    results.push((number, name, outcome));
}

#[test]
fn acceptance_criteria() {
    let mut results = Vec::new();

    check(&mut results, 1, "parameter-count exactness", criterion_1);
    check(&mut results, 2, "shape-table exactness", criterion_2);
    check(&mut results, 3, "gradient suite", criterion_3);
    check(&mut results, 4, "attention-loss invariants", criterion_4);
    check(&mut results, 6, "metric oracles", criterion_6);
    check(&mut results, 9, "round-trips", criterion_9);

    // the desk-scale pipeline feeds criteria 7, 5 and 8
    let dir_a = tempfile::tempdir().expect("tempdir");
    let mut pipeline: Option<PipelineOutcome> = None;
    check(&mut results, 7, "desk-scale pipeline", || {
        let outcome = run_pipeline(dir_a.path())?;
        let detail = outcome.describe();
        let verdict = outcome.verdict();
        pipeline = Some(outcome);
        verdict?;
        Ok(detail)
    });

    match &pipeline {
        Some(p) => {
            let student1 = &p.student1;
            check(&mut results, 5, "LSR contract", || criterion_5(student1));
            check(&mut results, 8, "determinism", || {
                let dir_b = tempfile::tempdir().expect("tempdir");
                let _ = run_pipeline(dir_b.path())?;
                compare_artifacts(dir_a.path(), dir_b.path())
            });
        }
        None => {
            for (number, name) in [(5, "LSR contract"), (8, "determinism")] {
                println!("[FAIL] criterion {number} ({name}): skipped, pipeline run failed");
                results.push((number, name, Err("pipeline run failed".into())));
            }
        }
    }

    results.sort_by_key(|(n, _, _)| *n);
    println!("\nacceptance summary:");
    for (number, name, outcome) in &results {
        println!(
            "  criterion {number} ({name}): {}",
            if outcome.is_ok() { "PASS" } else { "FAIL" }
        );
    }
    let failures: Vec<String> = results
        .iter()
        .filter_map(|(n, name, o)| o.as_ref().err().map(|e| format!("criterion {n} ({name}): {e}")))
        .collect();
    assert!(failures.is_empty(), "failed criteria:\n{}", failures.join("\n"));
}

fn criterion_1() -> Result<String> {
    let started = Instant::now();
    let model = build_lighter_cnn::<f32>(Profile::Full, 0)?;
    let (trainable, total) = model.count_parameters();
    let elapsed = started.elapsed();
    assert_eq!(
        (trainable, total),
        (5_350_633, 5_352_041),
        "count_parameters(full) = ({trainable}, {total})"
    );
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}, budget 1 s");
    Ok(format!("(trainable, total) = ({trainable}, {total})"))
}

/// Every output-size row of the published architecture table, stated
/// independently of the builder.
const EXPECTED_ROWS: [&[usize]; 22] = [
    &[64, 147, 147],
    &[64, 147, 147],
    &[128, 140, 140],
    &[128, 140, 140],
    &[128, 69, 69],
    &[128, 69, 69],
    &[256, 62, 62],
    &[256, 62, 62],
    &[128, 55, 55],
    &[128, 55, 55],
    &[128, 26, 26],
    &[128, 26, 26],
    &[64, 19, 19],
    &[64, 19, 19],
    &[32, 8, 8],
    &[32, 8, 8],
    &[32, 4, 4],
    &[32, 4, 4],
    &[512],
    &[32],
    &[4],
    &[1],
];

fn criterion_2() -> Result<String> {
    let started = Instant::now();
    let spec = lighter_cnn_spec(Profile::Full);
    let computed = spec.computed_shapes()?;
    assert_eq!(computed.len(), EXPECTED_ROWS.len(), "layer count");
    for (i, (got, expected)) in computed.iter().zip(EXPECTED_ROWS.iter()).enumerate() {
        assert_eq!(&got[..], *expected, "output size of layer {i}");
        assert_eq!(
            &spec.layers[i].declared_output[..],
            *expected,
            "declared size of layer {i}"
        );
    }
    assert!(started.elapsed().as_secs_f64() < 1.0);
    Ok(format!("{} output-size rows exact", computed.len()))
}

fn criterion_3() -> Result<String> {
    let outcomes = verify::gradcheck_suite(20, 1e-5, 1e-6)?;
    let mut worst: f64 = 0.0;
    for o in &outcomes {
        assert!(o.passed, "{}: {}", o.name, o.detail);
        // detail carries "max rel err X"; track the printed worst
        if let Some(v) = o
            .detail
            .split("max rel err ")
            .nth(1)
            .and_then(|s| s.split(' ').next())
            .and_then(|s| s.parse::<f64>().ok())
        {
            worst = worst.max(v);
        }
    }
    Ok(format!(
        "{} operator cases x 20 seeds, worst rel err {worst:.2e} < 1e-6",
        outcomes.len()
    ))
}

fn criterion_4() -> Result<String> {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    // scale invariance at three scales
    for trial in 0..50 {
        let q = Tensor::from_fn(&[5, 5], |_| rng.random_range(0.0..1.0));
        let base = AttentionMap::from_raw(q.clone())?;
        for c in [0.1f64, 1.0, 1e3] {
            let scaled = AttentionMap::from_raw(q.map(|v| v * c))?;
            let l = at_loss(&base, &scaled, AT_EPSILON)?;
            assert!(l < 1e-9, "trial {trial}, c {c}: at_loss {l}");
        }
    }
    // range over 10^4 random nonnegative pairs
    let bound = 2f64.sqrt() + 1e-9;
    let mut max_seen = 0.0f64;
    for _ in 0..10_000 {
        let a = AttentionMap::from_raw(Tensor::from_fn(&[4, 4], |_| rng.random_range(0.0..1.0)))?;
        let b = AttentionMap::from_raw(Tensor::from_fn(&[4, 4], |_| rng.random_range(0.0..1.0)))?;
        let l = at_loss(&a, &b, AT_EPSILON)?;
        assert!((0.0..=bound).contains(&l), "at_loss {l} outside [0, sqrt2]");
        max_seen = max_seen.max(l);
    }
    // orthogonal unit case
    let e1 = AttentionMap::from_raw(Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0])?)?;
    let e2 = AttentionMap::from_raw(Tensor::from_vec(vec![2, 2], vec![0.0, 1.0, 0.0, 0.0])?)?;
    let orth = at_loss(&e1, &e2, AT_EPSILON)?;
    assert!(
        (orth - 2f64.sqrt()).abs() < 1e-9,
        "orthogonal case {orth} != sqrt 2"
    );
    Ok(format!(
        "scale-invariant at c in {{0.1, 1, 1e3}}; 10^4 pairs within [0, sqrt2] (max {max_seen:.4}); orthogonal = sqrt 2"
    ))
}

fn criterion_5(student1: &Model<f32>) -> Result<String> {
    // fresh synthetic set, disjoint seed from the training pipeline
    let (manifest, images) = generate_synthetic_dataset(1000, 0.41, 96, PIPELINE_SEED ^ 0xabcd)?;
    let store = ImageStore::from_images(images, (96, 96));
    let samples: Vec<(u32, u8)> = manifest.rows().iter().map(|r| (r.id, r.label)).collect();
    let records = generate_soft_labels(
        student1,
        &samples,
        |ids| store.batch::<f32>(ids),
        64,
        5.0,
        0.6,
    )?;
    assert_eq!(records.len(), samples.len(), "coverage");

    // independent misclassification oracle: sigmoid scores at the 0.5
    // threshold (ties positive)
    let scores = score_items(student1, &store, &samples, 64)?;
    let misclassified: BTreeSet<u32> = scores
        .iter()
        .filter(|s| (s.score >= 0.5) as u8 != s.label)
        .map(|s| s.id)
        .collect();
    let replaced: BTreeSet<u32> = records
        .iter()
        .filter(|r| r.origin == SoftLabelOrigin::Replaced)
        .map(|r| r.id)
        .collect();
    assert_eq!(replaced, misclassified, "replaced set != misclassified set");

    let labels: HashMap<u32, u8> = samples.iter().copied().collect();
    for r in &records {
        assert_eq!(r.p0() + r.p1, 1.0, "record {} does not sum to 1", r.id);
        if r.origin == SoftLabelOrigin::Replaced {
            let true_class_prob = if labels[&r.id] == 1 { r.p1 } else { r.p0() };
            assert_eq!(true_class_prob, 0.6, "record {} replacement", r.id);
        }
    }
    Ok(format!(
        "1000 records: sums exact, {} replaced == misclassified, true-class 0.6 exact",
        replaced.len()
    ))
}

fn criterion_6() -> Result<String> {
    // fast ROC-AUC vs brute force over 200 random score sets
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    for set in 0..200 {
        let n = rng.random_range(2..=500);
        // coarse grid in ~half the sets to force ties
        let grid = rng.random_range(0..2) == 0;
        let mut samples = Vec::with_capacity(n);
        let mut has = [false, false];
        for id in 0..n {
            let score = if grid {
                rng.random_range(0..=10) as f64 / 10.0
            } else {
                rng.random_range(0.0..1.0)
            };
            let label = rng.random_range(0..2) as u8;
            has[label as usize] = true;
            samples.push(ScoredSample::new(id as u32, score, label));
        }
        if !(has[0] && has[1]) {
            samples.push(ScoredSample::new(n as u32, 0.5, u8::from(!has[1])));
        }
        let fast = metrics::roc_auc(&samples)?;
        let brute = roc_auc_brute(&samples);
        assert!(
            (fast - brute).abs() < 1e-9,
            "set {set}: fast {fast} vs brute {brute}"
        );
    }

    // ten fixed average-precision fixtures, hand-computed, exact equality
    let s = ScoredSample::new;
    let fixtures: [(Vec<ScoredSample>, f64); 10] = [
        (vec![s(0, 0.9, 1), s(1, 0.8, 1), s(2, 0.3, 0)], 1.0),
        (vec![s(0, 0.9, 0), s(1, 0.5, 1)], (1.0 / 2.0) / 1.0),
        (
            vec![s(0, 0.9, 1), s(1, 0.8, 0), s(2, 0.7, 1)],
            (1.0 / 1.0 + 2.0 / 3.0) / 2.0,
        ),
        (
            vec![s(0, 0.9, 0), s(1, 0.8, 1), s(2, 0.7, 1)],
            (1.0 / 2.0 + 2.0 / 3.0) / 2.0,
        ),
        (vec![s(0, 0.9, 1), s(1, 0.5, 1), s(2, 0.1, 1)], 1.0),
        // tie at 0.5 broken by ascending id: positive id 0 ranks first
        (
            vec![s(0, 0.5, 1), s(1, 0.5, 0), s(2, 0.2, 1)],
            (1.0 / 1.0 + 2.0 / 3.0) / 2.0,
        ),
        // tie where the negative has the smaller id and ranks first
        (vec![s(0, 0.5, 0), s(1, 0.5, 1)], (1.0 / 2.0) / 1.0),
        (
            vec![s(0, 0.9, 0), s(1, 0.8, 0), s(2, 0.3, 1), s(3, 0.2, 1), s(4, 0.1, 1)],
            (1.0 / 3.0 + 2.0 / 4.0 + 3.0 / 5.0) / 3.0,
        ),
        (
            vec![
                s(0, 0.9, 1),
                s(1, 0.8, 0),
                s(2, 0.7, 1),
                s(3, 0.6, 0),
                s(4, 0.5, 1),
                s(5, 0.4, 0),
            ],
            (1.0 / 1.0 + 2.0 / 3.0 + 3.0 / 5.0) / 3.0,
        ),
        (
            vec![s(0, 0.9, 0), s(1, 0.8, 0), s(2, 0.7, 0), s(3, 0.6, 1)],
            (1.0 / 4.0) / 1.0,
        ),
    ];
    for (i, (samples, expected)) in fixtures.iter().enumerate() {
        let got = metrics::pr_auc(samples)?;
        assert_eq!(got, *expected, "fixture {i}: ap {got} != {expected}");
    }
    Ok("200 roc sets vs brute force < 1e-9; 10 AP fixtures exact".to_string())
}

fn roc_auc_brute(samples: &[ScoredSample]) -> f64 {
    let mut wins = 0.0f64;
    let mut pairs = 0.0f64;
    for p in samples.iter().filter(|s| s.label == 1) {
        for n in samples.iter().filter(|s| s.label == 0) {
            pairs += 1.0;
            if p.score > n.score {
                wins += 1.0;
            } else if p.score == n.score {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

struct PipelineOutcome {
    baseline_accuracy: f64,
    baseline_epochs: usize,
    at_first: f64,
    at_last: f64,
    student1: Model<f32>,
    student1_accuracy: f64,
    student2_accuracy: f64,
}

impl PipelineOutcome {
    fn describe(&self) -> String {
        format!(
            "baseline acc {:.4} in {} epochs; at_loss {:.4} -> {:.4} ({:.0}% drop); student2 {:.4} vs student1 {:.4} ({:+.2} points, recorded)",
            self.baseline_accuracy,
            self.baseline_epochs,
            self.at_first,
            self.at_last,
            (1.0 - self.at_last / self.at_first) * 100.0,
            self.student2_accuracy,
            self.student1_accuracy,
            (self.student2_accuracy - self.student1_accuracy) * 100.0,
        )
    }

    fn verdict(&self) -> Result<()> {
        // (a) and (b) are asserted; (c) is recorded in the run report
        assert!(
            self.baseline_accuracy >= 0.90,
            "baseline test accuracy {:.4} < 0.90",
            self.baseline_accuracy
        );
        assert!(
            self.baseline_epochs <= 30,
            "baseline took {} epochs",
            self.baseline_epochs
        );
        assert!(
            self.at_last <= 0.5 * self.at_first,
            "mean at_loss fell only {:.4} -> {:.4}",
            self.at_first,
            self.at_last
        );
        Ok(())
    }
}

fn pipeline_config(max_epochs: usize, patience: Option<usize>) -> TrainConfig {
    TrainConfig {
        seed: PIPELINE_SEED,
        max_epochs,
        patience,
        deterministic: true,
        ..TrainConfig::default()
    }
}

fn run_pipeline(out: &Path) -> Result<PipelineOutcome> {
    let (manifest, images) = generate_synthetic_dataset(DATASET_N, 0.41, 96, PIPELINE_SEED)?;
    let store = ImageStore::from_images(images, (96, 96));
    let labels: HashMap<u32, u8> = manifest.rows().iter().map(|r| (r.id, r.label)).collect();
    let (train_ids, test_ids) = split_dataset(&manifest, 11, 1, PIPELINE_SEED)?;
    assert_eq!((train_ids.len(), test_ids.len()), (2200, 200), "11/1 split");
    let folds = kfold(&train_ids, 3, PIPELINE_SEED)?;
    let items = |ids: &[u32]| -> Vec<(u32, u8)> {
        ids.iter().map(|&id| (id, labels[&id])).collect()
    };
    let data = TrainData {
        store: &store,
        items: items(&train_ids),
        val_items: items(&folds[0].1),
    };
    let test_items = items(&test_ids);
    let eval_model = |model: &Model<f32>| -> Result<f64> {
        let scores = score_items(model, &store, &test_items, 64)?;
        metrics::accuracy(&scores, metrics::DEFAULT_THRESHOLD)
    };
    let save = |model: &Model<f32>, name: &str| -> Result<()> {
        tickdist::model::save_model(model, &out.join(name))
    };
    let save_history = |h: &TrainHistory, name: &str| -> Result<()> {
        h.save_csv(&out.join(name))
    };

    // surrogate teacher, briefly trained on hard labels
    eprintln!("  [pipeline] training surrogate teacher...");
    let mut teacher = build_surrogate_teacher::<f32>(Profile::Reduced, PIPELINE_SEED ^ 0x7e)?;
    let teacher_history = train_baseline(&mut teacher, &data, &pipeline_config(5, None))?;
    save(&teacher, "teacher.lcnn")?;
    save_history(&teacher_history, "teacher_history.csv")?;

    // (a) scratch baseline within 30 epochs
    eprintln!("  [pipeline] training scratch baseline...");
    let mut baseline = build_lighter_cnn::<f32>(Profile::Reduced, PIPELINE_SEED)?;
    let baseline_history = train_baseline(&mut baseline, &data, &pipeline_config(30, Some(5)))?;
    save(&baseline, "baseline.lcnn")?;
    save_history(&baseline_history, "baseline_history.csv")?;
    let baseline_accuracy = eval_model(&baseline)?;

    // (b) attention transfer from the frozen teacher
    eprintln!("  [pipeline] training AT student...");
    let mut at_student = build_lighter_cnn::<f32>(Profile::Reduced, PIPELINE_SEED ^ 0xa7)?;
    let at_history = train_at(
        &mut at_student,
        &ModelTeacher::new(&teacher),
        &data,
        &pipeline_config(12, None),
    )?;
    save(&at_student, "at.lcnn")?;
    save_history(&at_history, "at_history.csv")?;
    let at_first = at_history.epochs.first().and_then(|e| e.mean_at_loss).unwrap_or(f64::NAN);
    let at_last = at_history.epochs.last().and_then(|e| e.mean_at_loss).unwrap_or(f64::NAN);

    // (c) the two-student AT + LSR pipeline
    eprintln!("  [pipeline] running AT + LSR...");
    let outcome = train_at_lsr(
        &ModelTeacher::new(&teacher),
        &data,
        &pipeline_config(12, None),
    )?;
    save(&outcome.student1, "student1.lcnn")?;
    save(&outcome.student2, "student2.lcnn")?;
    save_history(&outcome.student1_history, "student1_history.csv")?;
    save_history(&outcome.student2_history, "student2_history.csv")?;
    tickdist::distill::write_soft_labels(&out.join("soft_labels.csv"), &outcome.soft_labels)?;
    let student1_accuracy = eval_model(&outcome.student1)?;
    let student2_accuracy = eval_model(&outcome.student2)?;

    // run report with the comparative table and fold-wise summaries
    let fold_summary = |model: &Model<f32>| -> Result<metrics::FoldSummary> {
        let mut reports = Vec::new();
        for (_, val) in &folds {
            let scores = score_items(model, &store, &items(val), 64)?;
            reports.push(metrics::evaluate(&scores, metrics::DEFAULT_THRESHOLD)?);
        }
        metrics::summarize_folds(reports)
    };
    #[derive(serde::Serialize)]
    struct RunReport {
        baseline_test_accuracy: f64,
        at_mean_loss_first_epoch: f64,
        at_mean_loss_final_epoch: f64,
        comparative: Vec<(String, f64)>,
        baseline_folds: metrics::FoldSummary,
        student2_folds: metrics::FoldSummary,
    }
    let report = RunReport {
        baseline_test_accuracy: baseline_accuracy,
        at_mean_loss_first_epoch: at_first,
        at_mean_loss_final_epoch: at_last,
        comparative: vec![
            ("baseline".into(), baseline_accuracy),
            ("student1".into(), student1_accuracy),
            ("student2".into(), student2_accuracy),
        ],
        baseline_folds: fold_summary(&baseline)?,
        student2_folds: fold_summary(&outcome.student2)?,
    };
    std::fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&report).expect("report"),
    )?;

    Ok(PipelineOutcome {
        baseline_accuracy,
        baseline_epochs: baseline_history.epochs.len(),
        at_first,
        at_last,
        student1: outcome.student1,
        student1_accuracy,
        student2_accuracy,
    })
}

const PIPELINE_FILES: [&str; 11] = [
    "teacher.lcnn",
    "teacher_history.csv",
    "baseline.lcnn",
    "baseline_history.csv",
    "at.lcnn",
    "at_history.csv",
    "student1.lcnn",
    "student2.lcnn",
    "student1_history.csv",
    "student2_history.csv",
    "soft_labels.csv",
];

fn compare_artifacts(a: &Path, b: &Path) -> Result<String> {
    for name in PIPELINE_FILES {
        let bytes_a = std::fs::read(a.join(name))?;
        let bytes_b = std::fs::read(b.join(name))?;
        assert_eq!(
            bytes_a, bytes_b,
            "artifact {name} differs between identical runs"
        );
    }
    Ok(format!(
        "{} artifacts byte-identical across repeated runs",
        PIPELINE_FILES.len()
    ))
}

fn criterion_9() -> Result<String> {
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    let mut model_instances = 0;
    // 50 randomized model instances: varying seeds, architectures, and
    // batch-norm states
    for i in 0..50u64 {
        let mut model = if i % 2 == 0 {
            build_lighter_cnn::<f32>(Profile::Reduced, i)?
        } else {
            build_surrogate_teacher::<f32>(Profile::Reduced, i)?
        };
        if i % 3 != 0 {
            // randomize running statistics with one training forward
            let batch = Tensor::from_fn(&[2, 3, 96, 96], |_| rng.random_range(0.0..1.0f32));
            let mut g = tickdist::Graph::new();
            let mut drop_rng = ChaCha20Rng::seed_from_u64(i);
            model.forward_train(&mut g, &batch, 0.1, &mut drop_rng)?;
        }
        let bytes = serialize(&model);
        let loaded = deserialize(&bytes)?;
        assert_eq!(serialize(&loaded), bytes, "model instance {i} round trip");
        assert_eq!(loaded.spec(), model.spec());
        for (pa, pb) in model.params().iter().zip(loaded.params()) {
            assert_eq!(pa.value, pb.value, "instance {i} param {}", pa.name);
        }
        assert_eq!(loaded.bn_states(), model.bn_states(), "instance {i} bn");
        model_instances += 1;
    }

    // 50 randomized attention files
    let mut atmap_instances = 0;
    for i in 0..50u32 {
        let h = rng.random_range(2..12);
        let w = rng.random_range(2..12);
        let count = rng.random_range(1..40);
        let records: Vec<AttentionRecord> = (0..count)
            .map(|k| AttentionRecord {
                id: i * 1000 + k,
                logit: rng.random_range(-4.0..4.0),
                map: Tensor::from_fn(&[h, w], |_| rng.random_range(0.0..3.0f32)),
            })
            .collect();
        let bytes = encode_attention_records(&records)?;
        let decoded = decode_attention_records(&bytes)?;
        assert_eq!(decoded.records, records, "atmap instance {i}");
        assert_eq!(
            encode_attention_records(&decoded.records)?,
            bytes,
            "atmap instance {i} re-encode"
        );
        atmap_instances += 1;
    }

    // file-based teacher reproduces in-process training bit-exactly
    let (manifest, images) = generate_synthetic_dataset(48, 0.5, 96, 17)?;
    let store = ImageStore::from_images(images, (96, 96));
    let items: Vec<(u32, u8)> = manifest.rows().iter().map(|r| (r.id, r.label)).collect();
    let ids: Vec<u32> = items.iter().map(|&(id, _)| id).collect();
    let mut teacher = build_surrogate_teacher::<f32>(Profile::Reduced, 3)?;
    let cfg = TrainConfig {
        seed: 5,
        max_epochs: 2,
        batch_size: 16,
        patience: None,
        deterministic: true,
        ..TrainConfig::default()
    };
    let data = TrainData {
        store: &store,
        items: items.clone(),
        val_items: vec![],
    };
    train_baseline(&mut teacher, &data, &cfg)?;

    let records = teacher_records(&teacher, &store, &ids, 16)?;
    let file_teacher = FileTeacher::new(decode_attention_records(&encode_attention_records(
        &records,
    )?)?);

    let train_with = |teacher: &dyn tickdist::train::Teacher<f32>| -> Result<Vec<u8>> {
        let mut student = build_lighter_cnn::<f32>(Profile::Reduced, 7)?;
        train_at(&mut student, teacher, &data, &cfg)?;
        Ok(serialize(&student))
    };
    let in_process = train_with(&ModelTeacher::new(&teacher))?;
    let via_file = train_with(&file_teacher)?;
    assert_eq!(
        in_process, via_file,
        "file-based teacher diverged from in-process teacher"
    );

    Ok(format!(
        "{model_instances} model + {atmap_instances} attention files bit-exact; file teacher == in-process teacher"
    ))
}
