//! Subcommand implementations.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{
    Arch, DistillArgs, EvaluateArgs, GradcheckArgs, HyperArgs, PredictArgs, SelfcheckArgs,
    SplitFilter, Strategy, SynthDataArgs, TeacherArgs, TrainArgs,
};
use crate::data::{
    generate_synthetic_dataset, load_image, resize, save_image_png, write_attention_file,
    DatasetManifest, ImageStore, ManifestRow, SampleSource,
};
use crate::distill::write_soft_labels;
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport, FoldSummary};
use crate::model::{build_lighter_cnn, load_model, save_model, Model, Profile};
use crate::train::{
    kfold, score_items, split_dataset, teacher_records, train_at, train_at_lsr, train_baseline,
    FileTeacher, ModelTeacher, Teacher, TeacherTable, TrainConfig, TrainData, TrainHistory,
};

pub(super) fn synth_data(args: SynthDataArgs) -> Result<()> {
    let out = &args.out.out;
    let images_dir = out.join("images");
    std::fs::create_dir_all(&images_dir)?;
    let (manifest, images) =
        generate_synthetic_dataset(args.n, args.positive_fraction, args.image_size, args.seed)?;
    let mut rows = Vec::with_capacity(manifest.len());
    for (row, (id, image)) in manifest.rows().iter().zip(&images) {
        let rel = PathBuf::from("images").join(format!("{id:06}.png"));
        save_image_png(image, &out.join(&rel))?;
        rows.push(ManifestRow {
            id: row.id,
            source: SampleSource::File(rel),
            label: row.label,
            split: None,
        });
    }
    let file_manifest = DatasetManifest::new(rows)?;
    file_manifest.save(&out.join("manifest.csv"))?;
    write_stamp(
        out,
        "synth-data",
        args.seed,
        &args_digest(&(args.n, args.positive_fraction, args.image_size, args.seed))?,
    )?;
    let positives = manifest.rows().iter().filter(|r| r.label == 1).count();
    println!(
        "wrote {} images ({} positive) and manifest.csv to {}",
        manifest.len(),
        positives,
        out.display()
    );
    Ok(())
}

/// Teacher loaded either as a model file or as precomputed attention maps.
enum TeacherSource {
    Model(Box<Model<f32>>),
    File(FileTeacher),
}

impl TeacherSource {
    fn open(args: &TeacherArgs) -> Result<Option<Self>> {
        match (&args.teacher, &args.teacher_maps) {
            (Some(path), None) => Ok(Some(TeacherSource::Model(Box::new(load_model(path)?)))),
            (None, Some(path)) => Ok(Some(TeacherSource::File(FileTeacher::open(path)?))),
            (None, None) => Ok(None),
            (Some(_), Some(_)) => Err(Error::Config(
                "pass either --teacher or --teacher-maps, not both".into(),
            )),
        }
    }
}

impl Teacher<f32> for TeacherSource {
    fn attention_resolution(&self) -> Result<(usize, usize)> {
        match self {
            TeacherSource::Model(m) => ModelTeacher::new(m).attention_resolution(),
            TeacherSource::File(f) => Teacher::<f32>::attention_resolution(f),
        }
    }

    fn table(&self, store: &ImageStore, ids: &[u32], batch_size: usize) -> Result<TeacherTable<f32>> {
        match self {
            TeacherSource::Model(m) => ModelTeacher::new(m).table(store, ids, batch_size),
            TeacherSource::File(f) => f.table(store, ids, batch_size),
        }
    }
}

struct Dataset {
    manifest: DatasetManifest,
    base_dir: PathBuf,
    store: ImageStore,
    labels: HashMap<u32, u8>,
    train_ids: Vec<u32>,
    test_ids: Vec<u32>,
}

impl Dataset {
    fn items(&self, ids: &[u32]) -> Vec<(u32, u8)> {
        ids.iter().map(|&id| (id, self.labels[&id])).collect()
    }
}

fn load_dataset(
    manifest_path: &Path,
    profile: Profile,
    split_train: u32,
    split_test: u32,
    seed: u64,
) -> Result<Dataset> {
    let manifest = DatasetManifest::load(manifest_path)?;
    if manifest.is_empty() {
        return Err(Error::Data("manifest holds no samples".into()));
    }
    let base_dir = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let [_, h, w] = profile.input_shape();
    let store = ImageStore::preload(&manifest, &base_dir, (h, w))?;
    let labels: HashMap<u32, u8> = manifest.rows().iter().map(|r| (r.id, r.label)).collect();

    let tagged = manifest
        .rows()
        .iter()
        .any(|r| matches!(r.split.as_deref(), Some("train") | Some("test")));
    let (train_ids, test_ids) = if tagged {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for r in manifest.rows() {
            match r.split.as_deref() {
                Some("train") => train.push(r.id),
                Some("test") => test.push(r.id),
                other => {
                    return Err(Error::Data(format!(
                        "sample {} has split tag {other:?}; a tagged manifest must tag every row train or test",
                        r.id
                    )))
                }
            }
        }
        (train, test)
    } else {
        split_dataset(&manifest, split_train, split_test, seed)?
    };
    Ok(Dataset {
        manifest,
        base_dir,
        store,
        labels,
        train_ids,
        test_ids,
    })
}

/// Split-tagged copy of the manifest with file sources resolved against the
/// original manifest directory, so the copy works from any location.
fn tagged_manifest(ds: &Dataset) -> Result<DatasetManifest> {
    let tag_of = |id: u32| -> &'static str {
        if ds.test_ids.binary_search(&id).is_ok() {
            "test"
        } else {
            "train"
        }
    };
    let rows = ds
        .manifest
        .rows()
        .iter()
        .map(|r| ManifestRow {
            id: r.id,
            source: match &r.source {
                SampleSource::File(p) => SampleSource::File(ds.base_dir.join(p)),
                synth => synth.clone(),
            },
            label: r.label,
            split: Some(tag_of(r.id).to_string()),
        })
        .collect();
    DatasetManifest::new(rows)
}

fn resolve_config(hyper: &HyperArgs) -> Result<TrainConfig> {
    let mut cfg = match &hyper.config {
        Some(path) => TrainConfig::from_toml(&std::fs::read_to_string(path)?)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = hyper.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = hyper.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = hyper.max_epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = hyper.seed {
        cfg.seed = v;
    }
    if let Some(v) = hyper.beta1 {
        cfg.weights.beta1 = v;
    }
    if let Some(v) = hyper.beta2 {
        cfg.weights.beta2 = v;
    }
    if let Some(v) = hyper.temperature {
        cfg.weights.temperature = v;
    }
    if let Some(v) = hyper.dropout {
        cfg.dropout_rate = v;
    }
    if let Some(v) = hyper.patience {
        cfg.patience = Some(v);
    }
    if hyper.paper_faithful {
        cfg.patience = None;
    }
    if hyper.no_augment {
        cfg.augment = crate::train::AugmentConfig::disabled();
    }
    if let Some(p) = hyper.profile {
        cfg.profile = p.into();
    }
    if let Some(v) = hyper.workers {
        cfg.workers = v;
    }
    if hyper.deterministic {
        cfg.deterministic = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fold_summary(
    model: &Model<f32>,
    ds: &Dataset,
    ids: &[u32],
    k: usize,
    seed: u64,
    batch_size: usize,
    threshold: f64,
) -> Result<FoldSummary> {
    let folds = kfold(ids, k, seed)?;
    let mut reports = Vec::with_capacity(folds.len());
    for (_, val) in &folds {
        let scores = score_items(model, &ds.store, &ds.items(val), batch_size)?;
        reports.push(metrics::evaluate(&scores, threshold)?);
    }
    metrics::summarize_folds(reports)
}

#[derive(Serialize)]
struct TrainReport {
    strategy: String,
    test: EvalReport,
    validation_folds: FoldSummary,
    epochs_trained: usize,
    stopped_early: bool,
    mean_at_loss_first_epoch: Option<f64>,
    mean_at_loss_final_epoch: Option<f64>,
    config: TrainConfig,
}

fn at_loss_endpoints(history: &TrainHistory) -> (Option<f64>, Option<f64>) {
    let first = history.epochs.first().and_then(|e| e.mean_at_loss);
    let last = history.epochs.last().and_then(|e| e.mean_at_loss);
    (first, last)
}

pub(super) fn train(args: TrainArgs) -> Result<()> {
    let cfg = resolve_config(&args.hyper)?;
    let teacher = TeacherSource::open(&args.teacher)?;
    match (args.strategy, &teacher) {
        (Strategy::At, None) => {
            return Err(Error::Config(
                "--strategy at requires --teacher or --teacher-maps".into(),
            ))
        }
        (Strategy::Scratch, Some(_)) => {
            return Err(Error::Config(
                "--strategy scratch does not take a teacher".into(),
            ))
        }
        _ => {}
    }
    let ds = load_dataset(
        &args.manifest,
        cfg.profile,
        args.split_train,
        args.split_test,
        cfg.seed,
    )?;
    let folds = kfold(&ds.train_ids, cfg.kfold_k, cfg.seed)?;
    let data = TrainData {
        store: &ds.store,
        items: ds.items(&ds.train_ids),
        val_items: ds.items(&folds[0].1),
    };

    let out = &args.out.out;
    std::fs::create_dir_all(out)?;
    let mut model = match args.arch {
        Arch::Student => build_lighter_cnn::<f32>(cfg.profile, cfg.seed)?,
        Arch::SurrogateTeacher => {
            crate::model::build_surrogate_teacher::<f32>(cfg.profile, cfg.seed)?
        }
    };
    let history = match args.strategy {
        Strategy::Scratch => train_baseline(&mut model, &data, &cfg)?,
        Strategy::At => {
            let teacher = teacher.as_ref().expect("checked above");
            let history = train_at(&mut model, teacher, &data, &cfg)?;
            if let TeacherSource::Model(tm) = teacher {
                let records = teacher_records(tm, &ds.store, &ds.train_ids, cfg.batch_size)?;
                write_attention_file(&out.join("teacher_maps.atmap"), &records)?;
            }
            history
        }
    };

    save_model(&model, &out.join("model.lcnn"))?;
    history.save_csv(&out.join("history.csv"))?;
    tagged_manifest(&ds)?.save(&out.join("split.csv"))?;

    let scores = score_items(&model, &ds.store, &ds.items(&ds.test_ids), cfg.batch_size)?;
    let test = metrics::evaluate(&scores, metrics::DEFAULT_THRESHOLD)?;
    let validation_folds = fold_summary(
        &model,
        &ds,
        &ds.train_ids,
        cfg.kfold_k,
        cfg.seed,
        cfg.batch_size,
        metrics::DEFAULT_THRESHOLD,
    )?;
    let (at_first, at_last) = at_loss_endpoints(&history);
    let report = TrainReport {
        strategy: format!("{:?}", args.strategy).to_lowercase(),
        test,
        validation_folds,
        epochs_trained: history.epochs.len(),
        stopped_early: history.stopped_early,
        mean_at_loss_first_epoch: at_first,
        mean_at_loss_final_epoch: at_last,
        config: cfg.clone(),
    };
    write_json(&out.join("report.json"), &report)?;
    write_stamp(out, "train", cfg.seed, &config_digest(&cfg)?)?;

    println!(
        "trained {} epochs{}; test accuracy {:.4}, roc_auc {:.4}, pr_auc {:.4}",
        report.epochs_trained,
        if report.stopped_early { " (early stop)" } else { "" },
        report.test.accuracy,
        report.test.roc_auc,
        report.test.pr_auc
    );
    print_fold_line(&report.validation_folds);
    println!("artifacts in {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct DistillReport {
    student1_test: EvalReport,
    student2_test: EvalReport,
    /// student2 minus student1 test accuracy, in percentage points.
    accuracy_delta_points: f64,
    validation_folds_student2: FoldSummary,
    soft_labels_softened: usize,
    soft_labels_replaced: usize,
    student1_mean_at_loss_first_epoch: Option<f64>,
    student1_mean_at_loss_final_epoch: Option<f64>,
    student2_mean_at_loss_first_epoch: Option<f64>,
    student2_mean_at_loss_final_epoch: Option<f64>,
    config: TrainConfig,
}

pub(super) fn distill(args: DistillArgs) -> Result<()> {
    let mut cfg = resolve_config(&args.hyper)?;
    if let Some(f) = args.subset_fraction {
        cfg.subset_fraction = f;
        cfg.validate()?;
    }
    let teacher = TeacherSource::open(&args.teacher)?.ok_or_else(|| {
        Error::Config("distill requires --teacher or --teacher-maps".into())
    })?;
    let ds = load_dataset(
        &args.manifest,
        cfg.profile,
        args.split_train,
        args.split_test,
        cfg.seed,
    )?;
    let folds = kfold(&ds.train_ids, cfg.kfold_k, cfg.seed)?;
    let data = TrainData {
        store: &ds.store,
        items: ds.items(&ds.train_ids),
        val_items: ds.items(&folds[0].1),
    };

    let out = &args.out.out;
    std::fs::create_dir_all(out)?;
    let outcome = train_at_lsr(&teacher, &data, &cfg)?;

    save_model(&outcome.student1, &out.join("student1.lcnn"))?;
    save_model(&outcome.student2, &out.join("student2.lcnn"))?;
    write_soft_labels(&out.join("soft_labels.csv"), &outcome.soft_labels)?;
    outcome
        .student1_history
        .save_csv(&out.join("student1_history.csv"))?;
    outcome
        .student2_history
        .save_csv(&out.join("student2_history.csv"))?;
    tagged_manifest(&ds)?.save(&out.join("split.csv"))?;
    if let TeacherSource::Model(tm) = &teacher {
        let records = teacher_records(tm, &ds.store, &ds.train_ids, cfg.batch_size)?;
        write_attention_file(&out.join("teacher_maps.atmap"), &records)?;
    }

    let test_items = ds.items(&ds.test_ids);
    let s1_scores = score_items(&outcome.student1, &ds.store, &test_items, cfg.batch_size)?;
    let s2_scores = score_items(&outcome.student2, &ds.store, &test_items, cfg.batch_size)?;
    let student1_test = metrics::evaluate(&s1_scores, metrics::DEFAULT_THRESHOLD)?;
    let student2_test = metrics::evaluate(&s2_scores, metrics::DEFAULT_THRESHOLD)?;
    let validation_folds_student2 = fold_summary(
        &outcome.student2,
        &ds,
        &ds.train_ids,
        cfg.kfold_k,
        cfg.seed,
        cfg.batch_size,
        metrics::DEFAULT_THRESHOLD,
    )?;
    let (s1_first, s1_last) = at_loss_endpoints(&outcome.student1_history);
    let (s2_first, s2_last) = at_loss_endpoints(&outcome.student2_history);
    let softened = outcome
        .soft_labels
        .iter()
        .filter(|r| r.origin == crate::distill::SoftLabelOrigin::Softened)
        .count();
    let report = DistillReport {
        accuracy_delta_points: (student2_test.accuracy - student1_test.accuracy) * 100.0,
        student1_test,
        student2_test,
        validation_folds_student2,
        soft_labels_softened: softened,
        soft_labels_replaced: outcome.soft_labels.len() - softened,
        student1_mean_at_loss_first_epoch: s1_first,
        student1_mean_at_loss_final_epoch: s1_last,
        student2_mean_at_loss_first_epoch: s2_first,
        student2_mean_at_loss_final_epoch: s2_last,
        config: cfg.clone(),
    };
    write_json(&out.join("report.json"), &report)?;
    write_stamp(out, "distill", cfg.seed, &config_digest(&cfg)?)?;

    println!(
        "student1 test accuracy {:.4}; student2 test accuracy {:.4} (delta {:+.2} points)",
        report.student1_test.accuracy,
        report.student2_test.accuracy,
        report.accuracy_delta_points
    );
    println!(
        "soft labels: {} softened, {} replaced; artifacts in {}",
        report.soft_labels_softened,
        report.soft_labels_replaced,
        out.display()
    );
    Ok(())
}

pub(super) fn evaluate(args: EvaluateArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let base_dir = args
        .manifest
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let tagged = manifest
        .rows()
        .iter()
        .any(|r| matches!(r.split.as_deref(), Some("train") | Some("test")));
    let filter = args.split.unwrap_or(if tagged {
        SplitFilter::Test
    } else {
        SplitFilter::All
    });
    let selected: Vec<(u32, u8)> = manifest
        .rows()
        .iter()
        .filter(|r| match filter {
            SplitFilter::All => true,
            SplitFilter::Test => r.split.as_deref() == Some("test"),
            SplitFilter::Train => r.split.as_deref() == Some("train"),
        })
        .map(|r| (r.id, r.label))
        .collect();
    if selected.is_empty() {
        return Err(Error::Data(format!(
            "no rows selected by --split {filter:?}"
        )));
    }
    let [_, h, w] = model.spec().input_shape;
    let selected_ids: std::collections::HashSet<u32> =
        selected.iter().map(|&(id, _)| id).collect();
    let sub_manifest = DatasetManifest::new(
        manifest
            .rows()
            .iter()
            .filter(|r| selected_ids.contains(&r.id))
            .cloned()
            .collect(),
    )?;
    let store = ImageStore::preload(&sub_manifest, &base_dir, (h, w))?;

    let scores = score_items(&model, &store, &selected, args.batch_size)?;
    let report = metrics::evaluate(&scores, args.threshold)?;

    let out = &args.out.out;
    std::fs::create_dir_all(out)?;
    print_eval_table(&report);

    let folds = match args.folds {
        Some(k) => {
            let ids: Vec<u32> = selected.iter().map(|&(id, _)| id).collect();
            let parts = kfold(&ids, k, args.seed)?;
            let mut reports = Vec::with_capacity(parts.len());
            for (fold, (_, val)) in parts.iter().enumerate() {
                let items: Vec<(u32, u8)> = selected
                    .iter()
                    .filter(|(id, _)| val.binary_search(id).is_ok())
                    .copied()
                    .collect();
                let scores = score_items(&model, &store, &items, args.batch_size)?;
                let report = metrics::evaluate(&scores, args.threshold).map_err(|e| match e {
                    Error::UndefinedMetric(m) => Error::Data(format!(
                        "fold {fold} of {k} ({} samples): {m}; use fewer folds or more samples",
                        items.len()
                    )),
                    other => other,
                })?;
                reports.push(report);
            }
            let summary = metrics::summarize_folds(reports)?;
            print_fold_line(&summary);
            Some(summary)
        }
        None => None,
    };

    #[derive(Serialize)]
    struct FullReport {
        report: EvalReport,
        folds: Option<FoldSummary>,
    }
    write_json(&out.join("report.json"), &FullReport { report: report.clone(), folds })?;
    std::fs::write(&out.join("confusion.csv"), confusion_csv(&report))?;
    write_stamp(
        out,
        "evaluate",
        args.seed,
        &args_digest(&(
            &args.model,
            &args.manifest,
            filter,
            args.folds,
            args.threshold,
            args.batch_size,
        ))?,
    )?;
    println!("report.json and confusion.csv in {}", out.display());
    Ok(())
}

/// Stamp for stdout-contract commands, kept off stdout.
fn stderr_stamp(command: &str, detail: &str) {
    eprintln!(
        "# tickdist {} {command} {detail}",
        env!("CARGO_PKG_VERSION")
    );
}

pub(super) fn predict(args: PredictArgs) -> Result<()> {
    let model_bytes = std::fs::read(&args.model)
        .map_err(|e| Error::Data(format!("cannot read model file {}: {e}", args.model.display())))?;
    stderr_stamp(
        "predict",
        &format!(
            "model_sha256={} threshold={}",
            &hex_sha256(&model_bytes)[..16],
            metrics::DEFAULT_THRESHOLD
        ),
    );
    let model = crate::model::deserialize(&model_bytes)?;
    let image = load_image(&args.image)?;
    let [_, h, w] = model.spec().input_shape;
    let image = resize(&image, h, w)?;
    let batch = crate::tensor::Tensor::from_vec(
        vec![1, 3, h, w],
        image.data().to_vec(),
    )?;
    let p1 = model.predict_proba(&batch)?[0];
    let label = if p1 >= metrics::DEFAULT_THRESHOLD {
        "blacklegged"
    } else {
        "non-blacklegged"
    };
    println!("{label} {p1:.4}");
    Ok(())
}

pub(super) fn gradcheck(args: GradcheckArgs) -> Result<()> {
    if args.seeds == 0 {
        return Err(Error::Config("--seeds must be positive".into()));
    }
    stderr_stamp(
        "gradcheck",
        &format!(
            "seeds={} step={} tolerance={}",
            args.seeds, args.step, args.tolerance
        ),
    );
    let outcomes = crate::verify::gradcheck_suite(args.seeds, args.step, args.tolerance)?;
    let mut failed = 0;
    for o in &outcomes {
        println!("[{}] {}: {}", if o.passed { "pass" } else { "FAIL" }, o.name, o.detail);
        if !o.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Error::Verification(format!(
            "{failed} of {} gradient checks failed",
            outcomes.len()
        )));
    }
    println!("all {} gradient checks passed", outcomes.len());
    Ok(())
}

pub(super) fn selfcheck(_args: SelfcheckArgs) -> Result<()> {
    stderr_stamp("selfcheck", "");
    let outcomes = crate::verify::selfcheck()?;
    let mut failed = 0;
    for o in &outcomes {
        println!("[{}] {}: {}", if o.passed { "pass" } else { "FAIL" }, o.name, o.detail);
        if !o.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Error::Verification(format!(
            "{failed} of {} self-checks failed",
            outcomes.len()
        )));
    }
    println!("all {} self-checks passed", outcomes.len());
    Ok(())
}

fn print_eval_table(report: &EvalReport) {
    println!("samples    {}", report.n);
    println!("threshold  {:.2}", report.threshold);
    println!("accuracy   {:.2}%", report.accuracy * 100.0);
    println!("roc_auc    {:.2}%", report.roc_auc * 100.0);
    println!("pr_auc     {:.2}%", report.pr_auc * 100.0);
    println!(
        "confusion  tp={} fp={} tn={} fn={}",
        report.confusion.tp, report.confusion.fp, report.confusion.tn, report.confusion.fn_
    );
}

fn print_fold_line(summary: &FoldSummary) {
    println!(
        "folds (k={}): accuracy {:.2} ± {:.2}, roc_auc {:.2} ± {:.2}, pr_auc {:.2} ± {:.2}",
        summary.folds.len(),
        summary.accuracy.mean * 100.0,
        summary.accuracy.std * 100.0,
        summary.roc_auc.mean * 100.0,
        summary.roc_auc.std * 100.0,
        summary.pr_auc.mean * 100.0,
        summary.pr_auc.std * 100.0,
    );
}

fn confusion_csv(report: &EvalReport) -> String {
    format!(
        ",predicted_positive,predicted_negative\nactual_positive,{},{}\nactual_negative,{},{}\n",
        report.confusion.tp, report.confusion.fn_, report.confusion.fp, report.confusion.tn
    )
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("serialize report: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn config_digest(cfg: &TrainConfig) -> Result<String> {
    let canonical = serde_json::to_string(cfg)
        .map_err(|e| Error::Data(format!("serialize config: {e}")))?;
    Ok(hex_sha256(canonical.as_bytes()))
}

fn args_digest<T: std::fmt::Debug>(t: &T) -> Result<String> {
    Ok(hex_sha256(format!("{t:?}").as_bytes()))
}

fn hex_sha256(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reproducibility stamp: seed, config digest, versions. No timestamps, so
/// identical runs produce identical stamps.
fn write_stamp(out: &Path, command: &str, seed: u64, config_digest: &str) -> Result<()> {
    #[derive(Serialize)]
    struct Stamp<'a> {
        command: &'a str,
        crate_version: &'a str,
        model_format: String,
        seed: u64,
        config_sha256: &'a str,
    }
    write_json(
        &out.join("stamp.json"),
        &Stamp {
            command,
            crate_version: env!("CARGO_PKG_VERSION"),
            model_format: format!(
                "LCNN v{}.{}",
                crate::model::FORMAT_MAJOR,
                crate::model::FORMAT_MINOR
            ),
            seed,
            config_sha256: config_digest,
        },
    )
}
