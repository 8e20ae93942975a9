//! Knowledge distillation of a trained teacher into a smaller EEG encoder.
//! The student reuses the teacher's classifier head, logit scale and text
//! features as frozen copies; only the student encoder is updated.

use std::collections::BTreeSet;
use std::path::Path;

use dceeg_autodiff::init::Initializer;
use dceeg_autodiff::{
    load_checkpoint, save_checkpoint, Adam, AdamConfig, Checkpoint, Graph, Mode, NodeId,
    ParamStore, Real, Tensor,
};
use serde::{Deserialize, Serialize};

use crate::clip::{
    clip_name, count_correct, epoch_order, predict_with, ClipModel, HeadNames, Predictions,
    CLASSIFIER, LOGIT_SCALE, META_KIND, META_SPEC, TEXT_FEATURES,
};
use crate::config::ConformerConfig;
use crate::conformer::{EegEncoder, EEG_ENCODER};
use crate::curves::{epochs_to_threshold, CurvePoint};
use crate::error::{CoreError, Result};
use crate::losses::{self, log_softmax_row, softmax_rows};
use crate::nn;
use crate::samples::{chunks, Samples};

pub const STUDENT: &str = "student";
/// Probability floor inside logarithms.
pub const KL_EPS: f64 = 1e-12;
pub const ROW_SUM_TOL: f64 = 1e-6;

/// Which distribution weights the log-ratio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `Σ Q·log(Q/P)` with Q the teacher distribution.
    #[default]
    TeacherRef,
    /// `Σ P·log(P/Q)` with P the student distribution.
    StudentRef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub temperature: f64,
    pub alpha: f64,
    pub kl_direction: KlDirection,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub reuse_teacher_text: bool,
    pub target_accuracy: f64,
    pub early_stop: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            temperature: 1.0,
            alpha: 0.5,
            kl_direction: KlDirection::TeacherRef,
            epochs: 100,
            batch_size: 32,
            lr: 1e-5,
            weight_decay: 1e-4,
            seed: 11,
            reuse_teacher_text: true,
            target_accuracy: 0.95,
            early_stop: false,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(CoreError::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(CoreError::Config(format!(
                "alpha {} outside [0,1]",
                self.alpha
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(CoreError::Config(
                "epochs, batch_size and lr must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn check_rows(rows: &[Vec<f64>]) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        let s: f64 = r.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL || r.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(CoreError::NotProbabilities { row: i, sum: s });
        }
    }
    Ok(())
}

/// Mean over rows of `Σ ref·log(ref/other)`. Zero reference entries add
/// nothing; other entries are floored at [`KL_EPS`].
pub fn kl_divergence(p: &[Vec<f64>], q: &[Vec<f64>], direction: KlDirection) -> Result<f64> {
    if p.len() != q.len() || p.iter().zip(q).any(|(a, b)| a.len() != b.len()) || p.is_empty() {
        return Err(CoreError::Mismatch(
            "P and Q must be non-empty and share a shape".into(),
        ));
    }
    check_rows(p)?;
    check_rows(q)?;
    let (reference, other) = match direction {
        KlDirection::TeacherRef => (q, p),
        KlDirection::StudentRef => (p, q),
    };
    let mut total = 0.0;
    for (r, o) in reference.iter().zip(other) {
        for (&a, &b) in r.iter().zip(o) {
            if a > 0.0 {
                total += a * (a.max(KL_EPS).ln() - b.max(KL_EPS).ln());
            }
        }
    }
    Ok(total / p.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistillLosses {
    pub ce: f64,
    pub kl: f64,
    pub total: f64,
}

/// `α·CE(student, y) + (1−α)·t²·KL` with both distributions softened by `t`.
pub fn distill_loss(
    student_logits: &[Vec<f64>],
    teacher_logits: &[Vec<f64>],
    labels: &[usize],
    cfg: &DistillConfig,
) -> Result<DistillLosses> {
    let t = cfg.temperature;
    if !(t > 0.0) {
        return Err(CoreError::Config(format!(
            "temperature must be positive, got {t}"
        )));
    }
    let ce = losses::cross_entropy(student_logits, labels)?;
    let p = softmax_rows(student_logits, t);
    let q = softmax_rows(teacher_logits, t);
    // Log-probabilities straight from the logits avoid the ε floor.
    let lp: Vec<Vec<f64>> = student_logits
        .iter()
        .map(|r| log_softmax_row(r, t))
        .collect();
    let lq: Vec<Vec<f64>> = teacher_logits
        .iter()
        .map(|r| log_softmax_row(r, t))
        .collect();
    let (w, a, b) = match cfg.kl_direction {
        KlDirection::TeacherRef => (&q, &lq, &lp),
        KlDirection::StudentRef => (&p, &lp, &lq),
    };
    let mut kl = 0.0;
    for ((wr, ar), br) in w.iter().zip(a).zip(b) {
        kl += wr
            .iter()
            .zip(ar)
            .zip(br)
            .map(|((w, a), b)| w * (a - b))
            .sum::<f64>();
    }
    kl /= student_logits.len() as f64;
    Ok(DistillLosses {
        ce,
        kl,
        total: cfg.alpha * ce + (1.0 - cfg.alpha) * t * t * kl,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct DistillNodes {
    pub ce: NodeId,
    pub kl: NodeId,
    pub total: NodeId,
}

/// Graph form of [`distill_loss`]. Teacher logits pass through `detach`.
pub fn build_distill_loss<T: Real>(
    g: &mut Graph<T>,
    student_logits: NodeId,
    teacher_logits: NodeId,
    labels: &[usize],
    cfg: &DistillConfig,
) -> Result<DistillNodes> {
    let t = cfg.temperature;
    if !(t > 0.0) {
        return Err(CoreError::Config(format!(
            "temperature must be positive, got {t}"
        )));
    }
    let n = labels.len() as f64;
    let teacher = g.detach(teacher_logits)?;
    let ce = g.cross_entropy(student_logits, labels)?;
    let lp = g.log_softmax(student_logits, t)?;
    let lq = g.log_softmax(teacher, t)?;
    let (w_log, a, b) = match cfg.kl_direction {
        KlDirection::TeacherRef => (lq, lq, lp),
        KlDirection::StudentRef => (lp, lp, lq),
    };
    let w = g.exp(w_log)?;
    let diff = g.sub(a, b)?;
    let prod = g.mul(w, diff)?;
    let kl = g.sum(prod)?;
    let kl = g.scale(kl, 1.0 / n)?;
    let ca = g.scale(ce, cfg.alpha)?;
    let kb = g.scale(kl, (1.0 - cfg.alpha) * t * t)?;
    let total = g.add(ca, kb)?;
    Ok(DistillNodes { ce, kl, total })
}

/// Student description stored with its checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentSpec {
    pub eeg: ConformerConfig,
    pub classes: Vec<String>,
    pub channels: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct StudentModel {
    pub spec: StudentSpec,
    pub eeg: EegEncoder,
}

pub fn student_name(rest: &str) -> String {
    format!("{STUDENT}/{rest}")
}

impl StudentModel {
    pub fn new(spec: StudentSpec) -> Result<Self> {
        let eeg = EegEncoder::new(spec.eeg.clone(), student_name(EEG_ENCODER))?;
        Ok(StudentModel { spec, eeg })
    }

    pub fn heads(&self) -> HeadNames {
        HeadNames::under(STUDENT)
    }

    /// Prefix of the tensors distillation may update.
    pub fn encoder_prefix(&self) -> String {
        format!("{}/", self.eeg.prefix)
    }

    pub fn predict<T: Real>(
        &self,
        store: &ParamStore<T>,
        data: &Samples<T>,
        batch: usize,
    ) -> Result<Predictions> {
        predict_with(&self.eeg, &self.heads(), store, data, batch)
    }
}

/// Fresh student parameters plus frozen copies of the teacher's heads.
pub fn init_student<T: Real>(
    teacher: &ClipModel,
    teacher_store: &ParamStore<T>,
    student_cfg: ConformerConfig,
    cfg: &DistillConfig,
) -> Result<(StudentModel, ParamStore<T>)> {
    if student_cfg.output_dim() != teacher.latent_dim() {
        return Err(CoreError::Mismatch(format!(
            "student output width {} differs from teacher latent width {}",
            student_cfg.output_dim(),
            teacher.latent_dim()
        )));
    }
    let t = &teacher.spec.eeg;
    if (
        student_cfg.electrodes,
        student_cfg.window_samples,
        student_cfg.input_channels,
    ) != (t.electrodes, t.window_samples, t.input_channels)
    {
        return Err(CoreError::Mismatch(
            "student and teacher input shapes differ".into(),
        ));
    }
    let model = StudentModel::new(StudentSpec {
        eeg: student_cfg,
        classes: teacher.spec.classes.clone(),
        channels: teacher.spec.channels.clone(),
    })?;
    let mut store = ParamStore::new();
    model
        .eeg
        .init_params(&mut store, &mut Initializer::new(cfg.seed));
    let heads = model.heads();
    for p in ["w", "b"] {
        let src = teacher_store
            .get(&clip_name(&format!("{CLASSIFIER}/{p}")))?
            .clone()
            .frozen();
        store.insert(format!("{}/{p}", heads.classifier), src);
    }
    store.insert(
        heads.logit_scale,
        teacher_store.get(&clip_name(LOGIT_SCALE))?.clone().frozen(),
    );
    let u = if cfg.reuse_teacher_text {
        teacher.text_features(teacher_store)?
    } else {
        let mut fresh: ParamStore<T> = teacher.init_params(cfg.seed, 1.0)?;
        fresh.remove(&clip_name(TEXT_FEATURES));
        teacher.text_features(&fresh)?
    };
    store.insert(heads.text_features, u.frozen());
    Ok((model, store))
}

/// Teacher classifier logits, eval mode, as `f64` rows.
pub fn teacher_logits<T: Real>(
    teacher: &ClipModel,
    store: &ParamStore<T>,
    data: &Samples<T>,
    batch: usize,
) -> Result<Vec<Vec<f64>>> {
    let all: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for idx in chunks(&all, batch) {
        let mut g = Graph::new(Mode::Eval, 0, 0);
        let x = g.input_value("x", &data.batch(idx), false);
        let tr = teacher.eeg.encode(&mut g, store, x)?;
        let logits = nn::linear(&mut g, store, &clip_name(CLASSIFIER), tr.features)?;
        g.run(store).map_err(|e| tr.locate(e))?;
        let k = g.shape(logits)[1];
        out.extend(
            g.tensor(logits)?
                .to_f64_vec()
                .chunks(k)
                .map(<[f64]>::to_vec),
        );
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillSummary {
    pub curve: Vec<CurvePoint>,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub epochs_to_target: Option<usize>,
    /// Every tensor name the optimizer touched.
    pub update_set: BTreeSet<String>,
}

/// Train the student encoder. The teacher store is only read.
pub fn distill<T: Real>(
    teacher: &ClipModel,
    teacher_store: &ParamStore<T>,
    student: &StudentModel,
    store: &mut ParamStore<T>,
    data: &Samples<T>,
    cfg: &DistillConfig,
    mut on_epoch: impl FnMut(&CurvePoint),
) -> Result<DistillSummary> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    // The teacher is deterministic in eval mode, so its logits are computed once.
    let t_logits = teacher_logits(teacher, teacher_store, data, cfg.batch_size)?;
    let k = teacher.num_classes();
    let heads = student.heads();
    let prefix = student.encoder_prefix();
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    })?;
    let mut update_set = BTreeSet::new();
    let mut curve = Vec::new();
    let (mut step, mut final_loss, mut epochs_run) = (0u64, f64::NAN, 0);
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(data.len(), cfg.seed, epoch);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (bi, idx) in chunks(&order, cfg.batch_size).enumerate() {
            let labels = data.batch_labels(idx);
            let tl: Vec<f64> = idx
                .iter()
                .flat_map(|&i| t_logits[i].iter().copied())
                .collect();
            let mut g = Graph::new(Mode::Train, cfg.seed, step);
            let x = g.input_value("x", &data.batch(idx), false);
            let tr = student.eeg.encode(&mut g, store, x)?;
            let s_logits = nn::linear(&mut g, store, &heads.classifier, tr.features)?;
            let t_node = g.input_value(
                "teacher_logits",
                &Tensor::from_f64(&[idx.len(), k], &tl)?,
                false,
            );
            let n = build_distill_loss(&mut g, s_logits, t_node, &labels, cfg)?;
            match g.run(store) {
                Ok(()) => {}
                Err(dceeg_autodiff::Error::NonFinite { .. }) => {
                    return Err(CoreError::NonFiniteLoss { epoch, batch: bi })
                }
                Err(e) => return Err(e.into()),
            }
            let loss = g.scalar_value(n.total)?.as_f64();
            if !loss.is_finite() {
                return Err(CoreError::NonFiniteLoss { epoch, batch: bi });
            }
            let grads = g.backward(n.total)?;
            if let Some(name) = grads.names().find(|n| !n.starts_with(&prefix)) {
                return Err(CoreError::Mismatch(format!(
                    "distillation would update '{name}'"
                )));
            }
            update_set.extend(adam.step(store, &grads)?);
            step += 1;
            loss_sum += loss * idx.len() as f64;
            correct += count_correct(g.data(s_logits)?, k, &labels);
        }
        let point = CurvePoint {
            epoch,
            split: "train".into(),
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        on_epoch(&point);
        final_loss = point.loss;
        epochs_run = epoch;
        let reached = point.accuracy >= cfg.target_accuracy;
        curve.push(point);
        if cfg.early_stop && reached {
            break;
        }
    }
    Ok(DistillSummary {
        epochs_to_target: epochs_to_threshold(&curve, cfg.target_accuracy),
        curve,
        epochs_run,
        final_loss,
        update_set,
    })
}

pub fn save_student<T: Real>(
    path: &Path,
    model: &StudentModel,
    store: &ParamStore<T>,
) -> Result<()> {
    let mut ck = Checkpoint::new(store.clone());
    ck.meta.insert(META_KIND.into(), STUDENT.into());
    ck.meta
        .insert(META_SPEC.into(), serde_json::to_string(&model.spec)?);
    save_checkpoint(path, &ck)?;
    Ok(())
}

pub fn load_student<T: Real>(path: &Path) -> Result<(StudentModel, ParamStore<T>)> {
    let ck: Checkpoint<T> = load_checkpoint(path)?;
    if ck.meta(META_KIND).ok() != Some(STUDENT) {
        return Err(CoreError::Mismatch(format!(
            "{} is not a student checkpoint",
            path.display()
        )));
    }
    let spec: StudentSpec = serde_json::from_str(ck.meta(META_SPEC)?)?;
    let model = StudentModel::new(spec)?;
    let mut expect = ParamStore::<T>::new();
    model.eeg.init_params(&mut expect, &mut Initializer::new(0));
    for e in expect.manifest() {
        let t = ck
            .store
            .get(&e.name)
            .map_err(|_| CoreError::Mismatch(format!("checkpoint lacks '{}'", e.name)))?;
        if t.shape() != e.shape.as_slice() {
            return Err(CoreError::Mismatch(format!(
                "'{}' has shape {:?}, model expects {:?}",
                e.name,
                t.shape(),
                e.shape
            )));
        }
    }
    let heads = model.heads();
    for n in [
        format!("{}/w", heads.classifier),
        heads.logit_scale.clone(),
        heads.text_features.clone(),
    ] {
        ck.store
            .get(&n)
            .map_err(|_| CoreError::Mismatch(format!("checkpoint lacks '{n}'")))?;
    }
    Ok((model, ck.store))
}

/// Kind tag of a checkpoint file (`clip` or `student`).
pub fn checkpoint_kind(path: &Path) -> Result<String> {
    let ck: Checkpoint<f32> = load_checkpoint(path)?;
    Ok(ck.meta(META_KIND).unwrap_or_default().to_string())
}
