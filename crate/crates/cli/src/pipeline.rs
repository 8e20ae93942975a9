//! Multi-step runs shared by the commands and the acceptance suite.

use dceeg_autodiff::{ParamStore, Real};
use dceeg_core::distill::teacher_logits;
use dceeg_core::{
    build_prompts, count_flops, count_params, distill, init_student, predict, prompt_param_count,
    train_teacher, AblationVariant, ClipModel, ClipSpec, ConformerConfig, CurvePoint,
    DistillSummary, LayerFlops, ParamCount, PromptMode, Samples, StudentModel, TextEncoderConfig,
    TrainSummary,
};
use dceeg_metrics::{compute_metrics, FoldPlan, MeanStd, MetricsReport};
use dceeg_signal::EpochDataset;
use sha2::{Digest, Sha256};

use crate::config::RunConfigFile;
use crate::error::Result;

/// Teacher description for `ds` with prompts from the configured templates.
pub fn clip_spec(
    cfg: &RunConfigFile,
    ds: &EpochDataset,
    text: &TextEncoderConfig,
    eeg: &ConformerConfig,
) -> Result<ClipSpec> {
    let prompts = build_prompts(&ds.classes, &cfg.templates()?)?;
    let mut eeg = eeg.clone();
    eeg.electrodes = ds.channels.len();
    eeg.window_samples = ds.window_samples;
    Ok(ClipSpec::new(
        eeg,
        text.clone(),
        ds.classes.clone(),
        prompts,
        ds.channels.clone(),
    ))
}

pub fn fit_teacher<T: Real>(
    cfg: &RunConfigFile,
    spec: ClipSpec,
    data: &Samples<T>,
    on_epoch: impl FnMut(&CurvePoint),
) -> Result<(ClipModel, ParamStore<T>, TrainSummary)> {
    let model = ClipModel::new(spec)?;
    let mut store = model.init_params(cfg.seed, cfg.train.sigma_init)?;
    let summary = train_teacher(&model, &mut store, data, &cfg.train, on_epoch)?;
    Ok((model, store, summary))
}

pub fn fit_student<T: Real>(
    cfg: &RunConfigFile,
    teacher: &ClipModel,
    teacher_store: &ParamStore<T>,
    data: &Samples<T>,
    on_epoch: impl FnMut(&CurvePoint),
) -> Result<(StudentModel, ParamStore<T>, DistillSummary)> {
    let mut s = cfg.student();
    s.electrodes = teacher.spec.eeg.electrodes;
    s.window_samples = teacher.spec.eeg.window_samples;
    let (student, mut store) = init_student(teacher, teacher_store, s, &cfg.distill)?;
    let summary = distill(
        teacher,
        teacher_store,
        &student,
        &mut store,
        data,
        &cfg.distill,
        on_epoch,
    )?;
    Ok((student, store, summary))
}

pub fn accuracy(probs: &[Vec<f64>], truth: &[usize]) -> f64 {
    let hits = probs
        .iter()
        .zip(truth)
        .filter(|(p, &t)| dceeg_metrics::argmax(p) == t)
        .count();
    hits as f64 / truth.len().max(1) as f64
}

#[derive(Clone, Debug)]
pub struct ModelFold {
    /// Eval-mode accuracy on the fold's training split.
    pub train_accuracy: f64,
    pub test: MetricsReport,
    pub epochs_run: usize,
    pub epochs_to_target: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub teacher: ModelFold,
    pub student: ModelFold,
}

#[derive(Clone, Debug)]
pub struct CvOutcome {
    pub folds: Vec<FoldResult>,
    pub teacher_accuracy: MeanStd,
    pub student_accuracy: MeanStd,
}

/// Per fold: train a teacher on the training split, distill a student from
/// it on the same split, and score both on the held-out split. Folds group
/// epochs by source recording.
pub fn cross_validate_models<T: Real>(
    cfg: &RunConfigFile,
    ds: &EpochDataset,
    mut log: impl FnMut(&str),
) -> Result<CvOutcome> {
    let spec = clip_spec(cfg, ds, &cfg.text, &cfg.teacher)?;
    let samples: Samples<T> = Samples::from_dataset(ds)?;
    let groups: Vec<String> = ds.epochs.iter().map(|e| e.source_id.clone()).collect();
    let plan = FoldPlan::grouped(&groups, cfg.eval.folds, cfg.seed)?;
    let mut folds = Vec::with_capacity(plan.folds);
    let bs = cfg.eval.batch_size;
    for f in 0..plan.folds {
        let (tr_idx, te_idx) = (plan.train_indices(f), plan.test_indices(f));
        let (train, test) = (samples.subset(&tr_idx), samples.subset(&te_idx));
        let (model, store, ts) = fit_teacher(cfg, spec.clone(), &train, |_| {})?;
        let teacher = ModelFold {
            train_accuracy: accuracy(&predict(&model, &store, &train, bs)?.probs, &train.labels),
            test: compute_metrics(&test.labels, &predict(&model, &store, &test, bs)?.probs)?,
            epochs_run: ts.epochs_run,
            epochs_to_target: ts.epochs_to_target,
        };
        let (student, sstore, ss) = fit_student(cfg, &model, &store, &train, |_| {})?;
        let student = ModelFold {
            train_accuracy: accuracy(&student.predict(&sstore, &train, bs)?.probs, &train.labels),
            test: compute_metrics(&test.labels, &student.predict(&sstore, &test, bs)?.probs)?,
            epochs_run: ss.epochs_run,
            epochs_to_target: ss.epochs_to_target,
        };
        log(&format!(
            "fold {f}: teacher train {:.4} test {:.4} | student train {:.4} test {:.4}",
            teacher.train_accuracy,
            teacher.test.micro_rates.acc,
            student.train_accuracy,
            student.test.micro_rates.acc
        ));
        folds.push(FoldResult {
            fold: f,
            train_size: train.len(),
            test_size: test.len(),
            teacher,
            student,
        });
    }
    let acc = |g: fn(&FoldResult) -> f64| MeanStd::of(&folds.iter().map(g).collect::<Vec<_>>());
    Ok(CvOutcome {
        teacher_accuracy: acc(|r| r.teacher.test.micro_rates.acc),
        student_accuracy: acc(|r| r.student.test.micro_rates.acc),
        folds,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub eeg_prompts: bool,
    pub text_prompt_mode: PromptMode,
    pub trainable_params: usize,
    pub prompt_params: usize,
    /// SHA-256 over the parameter manifest (names, shapes, trainable flags).
    pub manifest_hash: String,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

pub fn manifest_hash<T: Real>(store: &ParamStore<T>) -> String {
    let mut h = Sha256::new();
    for e in store.manifest() {
        h.update(format!("{} {:?} {}\n", e.name, e.shape, e.trainable));
    }
    hex::encode(h.finalize())
}

/// Train every ablation variant for `epochs` on the first fold's training
/// split and score it on that fold's held-out split.
pub fn ablation_grid<T: Real>(
    cfg: &RunConfigFile,
    ds: &EpochDataset,
    epochs: usize,
    mut log: impl FnMut(&str),
) -> Result<Vec<AblationRow>> {
    let samples: Samples<T> = Samples::from_dataset(ds)?;
    let groups: Vec<String> = ds.epochs.iter().map(|e| e.source_id.clone()).collect();
    let plan = FoldPlan::grouped(&groups, cfg.eval.folds, cfg.seed)?;
    let (train, test) = (
        samples.subset(&plan.train_indices(0)),
        samples.subset(&plan.test_indices(0)),
    );
    let mut run = cfg.clone();
    run.train.epochs = epochs;
    run.train.early_stop = false;
    let mut rows = Vec::with_capacity(AblationVariant::ALL.len());
    for v in AblationVariant::ALL {
        let (eeg, text) = v.apply(&cfg.teacher, &cfg.text);
        let spec = clip_spec(cfg, ds, &text, &eeg)?;
        let (model, store, summary) = fit_teacher(&run, spec, &train, |_| {})?;
        let probs = predict(&model, &store, &test, cfg.eval.batch_size)?.probs;
        let last = summary.curve.last().expect("at least one epoch");
        let row = AblationRow {
            variant: v,
            eeg_prompts: v.eeg_prompts(),
            text_prompt_mode: v.text_mode(),
            trainable_params: store.num_trainable(),
            prompt_params: prompt_param_count(&model.spec.eeg, &model.spec.text),
            manifest_hash: manifest_hash(&store),
            train_loss: last.loss,
            train_accuracy: last.accuracy,
            test_accuracy: accuracy(&probs, &test.labels),
        };
        log(&format!(
            "{}: {} trainable, test accuracy {:.4}",
            v.label(),
            row.trainable_params,
            row.test_accuracy
        ));
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct ModelAccount {
    pub name: String,
    pub params: ParamCount,
    pub flops: Vec<LayerFlops>,
}

impl ModelAccount {
    pub fn of(name: &str, c: &ConformerConfig, batch: usize) -> Self {
        ModelAccount {
            name: name.into(),
            params: count_params(c),
            flops: count_flops(c, batch),
        }
    }

    pub fn total_flops(&self) -> u64 {
        self.flops.last().map_or(0, |l| l.cumulative)
    }
}

/// Student cumulative FLOPs strictly below the teacher's at every depth
/// index, and in total.
pub fn student_cheaper_everywhere(teacher: &ModelAccount, student: &ModelAccount) -> bool {
    teacher
        .flops
        .iter()
        .zip(&student.flops)
        .all(|(t, s)| s.cumulative < t.cumulative)
        && student.total_flops() < teacher.total_flops()
}

/// Teacher classifier logits as bit patterns.
pub fn teacher_outputs<T: Real>(
    model: &ClipModel,
    store: &ParamStore<T>,
    data: &Samples<T>,
    batch: usize,
) -> Result<Vec<u64>> {
    Ok(teacher_logits(model, store, data, batch)?
        .into_iter()
        .flatten()
        .map(f64::to_bits)
        .collect())
}
