//! Teacher: EEG and text encoders aligned by σ-scaled cosine logits, plus
//! a classifier head on the EEG features.

use std::path::Path;

use dceeg_autodiff::init::Initializer;
use dceeg_autodiff::{
    load_checkpoint, save_checkpoint, Adam, AdamConfig, Checkpoint, Graph, Mode, NodeId,
    ParamStore, Real, Tensor,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ConformerConfig, TextEncoderConfig};
use crate::conformer::{EegEncoder, EEG_ENCODER};
use crate::curves::{epochs_to_threshold, CurvePoint};
use crate::error::{CoreError, Result};
use crate::losses::{self, softmax_rows, transpose};
use crate::nn;
use crate::samples::{chunks, Samples};
use crate::text::{TextEncoder, HANDCRAFTED_PREFIX, TEXT_ENCODER};
use crate::vocab::{Tokenized, Vocabulary};

pub const CLIP: &str = "clip";
pub const LOGIT_SCALE: &str = "logit_scale";
pub const CLASSIFIER: &str = "classifier";
pub const TEXT_FEATURES: &str = "text_features";
pub const DEFAULT_SIGMA: f64 = 1.0 / 0.07;

/// How text rows pair with EEG rows in the contrastive term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// One prompt per class; targets are class indices.
    #[default]
    Class,
    /// One prompt per batch item; targets are the diagonal.
    InBatch,
}

/// Everything needed to rebuild a teacher around a parameter store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub eeg: ConformerConfig,
    pub text: TextEncoderConfig,
    pub classes: Vec<String>,
    /// One prompt string per class.
    pub prompts: Vec<String>,
    pub channels: Vec<String>,
    /// Vocabulary tokens after the reserved ids.
    pub vocabulary: Vec<String>,
}

impl ClipSpec {
    /// Vocabulary is built from the prompts and the handcrafted prefix.
    pub fn new(
        eeg: ConformerConfig,
        text: TextEncoderConfig,
        classes: Vec<String>,
        prompts: Vec<String>,
        channels: Vec<String>,
    ) -> Self {
        let mut corpus = prompts.clone();
        corpus.push(HANDCRAFTED_PREFIX.to_string());
        let vocab = Vocabulary::build(&corpus);
        ClipSpec {
            eeg,
            text,
            classes,
            prompts,
            channels,
            vocabulary: vocab.tokens().map(String::from).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClipModel {
    pub spec: ClipSpec,
    pub vocab: Vocabulary,
    pub eeg: EegEncoder,
    pub text: TextEncoder,
    pub prompt_tokens: Vec<Tokenized>,
}

pub fn clip_name(rest: &str) -> String {
    format!("{CLIP}/{rest}")
}

impl ClipModel {
    pub fn new(spec: ClipSpec) -> Result<Self> {
        let k = spec.classes.len();
        if k < 2 || spec.prompts.len() != k {
            return Err(CoreError::Config(format!(
                "{k} classes need as many prompts (got {})",
                spec.prompts.len()
            )));
        }
        if spec.eeg.output_dim() != spec.text.latent_dim {
            return Err(CoreError::Config(format!(
                "eeg output width {} differs from text latent width {}",
                spec.eeg.output_dim(),
                spec.text.latent_dim
            )));
        }
        if spec.channels.len() != spec.eeg.electrodes {
            return Err(CoreError::Config(format!(
                "{} channel names for {} electrodes",
                spec.channels.len(),
                spec.eeg.electrodes
            )));
        }
        let mut vocab_text = spec.vocabulary.join("\n");
        if !vocab_text.is_empty() {
            vocab_text.push('\n');
        }
        let vocab = Vocabulary::read(vocab_text.as_bytes())?;
        let eeg = EegEncoder::new(spec.eeg.clone(), clip_name(EEG_ENCODER))?;
        let text = TextEncoder::new(spec.text.clone(), &vocab, clip_name(TEXT_ENCODER))?;
        let prompt_tokens = text.tokenize_all(&spec.prompts, &vocab);
        Ok(ClipModel {
            spec,
            vocab,
            eeg,
            text,
            prompt_tokens,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.spec.classes.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.text.latent_dim
    }

    pub fn init_params<T: Real>(&self, seed: u64, sigma_init: f64) -> Result<ParamStore<T>> {
        if !(sigma_init > 0.0) {
            return Err(CoreError::Config(format!(
                "sigma_init must be positive, got {sigma_init}"
            )));
        }
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed);
        self.eeg.init_params(&mut store, &mut init);
        self.text.init_params(&mut store, &mut init);
        store.insert(
            clip_name(LOGIT_SCALE),
            Tensor::scalar(T::of(sigma_init.ln())).trainable(),
        );
        nn::init_linear(
            &mut store,
            &mut init,
            &clip_name(CLASSIFIER),
            self.latent_dim(),
            self.num_classes(),
        );
        Ok(store)
    }

    /// Check that `store` holds exactly the tensors this model declares.
    pub fn check_store<T: Real>(&self, store: &ParamStore<T>) -> Result<()> {
        let fresh: ParamStore<T> = self.init_params(0, 1.0)?;
        for e in fresh.manifest() {
            let t = store
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
        Ok(())
    }

    /// Normalized per-class text features `U [K, latent]`, eval mode.
    pub fn text_features<T: Real>(&self, store: &ParamStore<T>) -> Result<Tensor<T>> {
        if let Ok(t) = store.get(&clip_name(TEXT_FEATURES)) {
            return Ok(t.clone());
        }
        let mut g = Graph::new(Mode::Eval, 0, 0);
        let tr = self.text.encode(&mut g, store, &self.prompt_tokens)?;
        let u = g.l2_normalize(tr.features)?;
        g.run(store)?;
        Ok(g.tensor(u)?)
    }

    /// Store the current text features as a frozen tensor; inference and
    /// distillation then reuse them.
    pub fn freeze_text_features<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        store.remove(&clip_name(TEXT_FEATURES));
        let u = self.text_features(store)?.frozen();
        store.insert(clip_name(TEXT_FEATURES), u);
        Ok(())
    }
}

/// Nodes of one teacher training step.
#[derive(Clone, Debug)]
pub struct ClipNodes {
    pub f_eeg: NodeId,
    pub v: NodeId,
    pub u: NodeId,
    pub sigma: NodeId,
    pub l_eeg: NodeId,
    pub l_txt: NodeId,
    pub class_logits: NodeId,
    pub l1: NodeId,
    pub l2: NodeId,
    pub total: NodeId,
}

fn check_targets(targets: &[usize], k: usize) -> Result<()> {
    match targets.iter().find(|&&t| t >= k) {
        Some(&t) => Err(CoreError::TargetOutOfRange {
            target: t,
            classes: k,
        }),
        None => Ok(()),
    }
}

/// Text-side soft targets for class pairing: row `k` spreads its mass
/// uniformly over the batch items of class `k`; absent classes stay empty.
pub fn text_targets(targets: &[usize], k: usize) -> Vec<Vec<f64>> {
    let mut q = vec![vec![0.0; targets.len()]; k];
    for c in 0..k {
        let n = targets.iter().filter(|&&t| t == c).count();
        for (i, &t) in targets.iter().enumerate() {
            if t == c {
                q[c][i] = 1.0 / n as f64;
            }
        }
    }
    q
}

/// Declare the teacher loss on `x[B, 1, E, L]`.
pub fn build_clip_loss<T: Real>(
    model: &ClipModel,
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    x: NodeId,
    targets: &[usize],
    alpha: f64,
    pairing: Pairing,
) -> Result<ClipNodes> {
    let k = model.num_classes();
    check_targets(targets, k)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CoreError::Config(format!("alpha {alpha} outside [0,1]")));
    }
    let b = targets.len();
    let eeg = model.eeg.encode(g, store, x)?;
    let v = g.l2_normalize(eeg.features)?;
    let prompts: Vec<Tokenized> = match pairing {
        Pairing::Class => model.prompt_tokens.clone(),
        Pairing::InBatch => targets
            .iter()
            .map(|&t| model.prompt_tokens[t].clone())
            .collect(),
    };
    let txt = model.text.encode(g, store, &prompts)?;
    let u = g.l2_normalize(txt.features)?;
    let ls = g.param(store, &clip_name(LOGIT_SCALE))?;
    let sigma = g.exp(ls)?;
    let sim = g.matmul_nt(v, u)?;
    let l_eeg = g.mul(sim, sigma)?;
    let l_txt = g.transpose(l_eeg)?;
    let (ce_eeg, ce_txt) = match pairing {
        Pairing::Class => {
            let q: Vec<f64> = text_targets(targets, k).concat();
            let q = Tensor::from_f64(&[k, b], &q)?;
            (
                g.cross_entropy(l_eeg, targets)?,
                g.soft_cross_entropy(l_txt, &q)?,
            )
        }
        Pairing::InBatch => {
            let diag: Vec<usize> = (0..b).collect();
            (
                g.cross_entropy(l_eeg, &diag)?,
                g.cross_entropy(l_txt, &diag)?,
            )
        }
    };
    let l1 = g.add(ce_eeg, ce_txt)?;
    let l1 = g.scale(l1, 0.5)?;
    let class_logits = nn::linear(g, store, &clip_name(CLASSIFIER), eeg.features)?;
    let l2 = g.cross_entropy(class_logits, targets)?;
    let a = g.scale(l1, alpha)?;
    let c = g.scale(l2, 1.0 - alpha)?;
    let total = g.add(a, c)?;
    Ok(ClipNodes {
        f_eeg: eeg.features,
        v,
        u,
        sigma,
        l_eeg,
        l_txt,
        class_logits,
        l1,
        l2,
        total,
    })
}

/// Per-batch loss quantities in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipBatchState {
    pub v: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub sigma: f64,
    pub l_eeg: Vec<Vec<f64>>,
    pub l_txt: Vec<Vec<f64>>,
    pub class_logits: Vec<Vec<f64>>,
    pub alpha: f64,
    pub pairing: Pairing,
}

fn normalize_rows(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            r.iter().map(|v| v / n).collect()
        })
        .collect()
}

impl ClipBatchState {
    /// Normalize raw features and form both logit matrices.
    pub fn new(
        f_eeg: &[Vec<f64>],
        f_txt: &[Vec<f64>],
        sigma: f64,
        class_logits: Vec<Vec<f64>>,
        alpha: f64,
        pairing: Pairing,
    ) -> Self {
        let v = normalize_rows(f_eeg);
        let u = normalize_rows(f_txt);
        let l_eeg: Vec<Vec<f64>> = v
            .iter()
            .map(|a| {
                u.iter()
                    .map(|b| sigma * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
                    .collect()
            })
            .collect();
        let l_txt = transpose(&l_eeg);
        ClipBatchState {
            v,
            u,
            sigma,
            l_eeg,
            l_txt,
            class_logits,
            alpha,
            pairing,
        }
    }

    /// Read the state back from an evaluated training graph.
    pub fn from_graph<T: Real>(
        g: &Graph<T>,
        n: &ClipNodes,
        alpha: f64,
        pairing: Pairing,
    ) -> Result<Self> {
        let rows = |id: NodeId| -> Result<Vec<Vec<f64>>> {
            let t = g.tensor(id)?;
            let cols = *t.shape().last().unwrap_or(&1);
            Ok(t.to_f64_vec().chunks(cols).map(<[f64]>::to_vec).collect())
        };
        Ok(ClipBatchState {
            v: rows(n.v)?,
            u: rows(n.u)?,
            sigma: g.scalar_value(n.sigma)?.as_f64(),
            l_eeg: rows(n.l_eeg)?,
            l_txt: rows(n.l_txt)?,
            class_logits: rows(n.class_logits)?,
            alpha,
            pairing,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipLosses {
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
}

/// L1 = mean of the EEG→text and text→EEG cross-entropies, L2 = classifier
/// cross-entropy, total = α·L1 + (1−α)·L2.
pub fn clip_losses(state: &ClipBatchState, targets: &[usize]) -> Result<ClipLosses> {
    let k = state.class_logits.first().map_or(0, Vec::len);
    check_targets(targets, k)?;
    for rows in [&state.l_eeg, &state.l_txt, &state.class_logits] {
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CoreError::Mismatch("non-finite logits".into()));
        }
    }
    let (ce_eeg, ce_txt) = match state.pairing {
        Pairing::Class => (
            losses::cross_entropy(&state.l_eeg, targets)?,
            losses::soft_cross_entropy(&state.l_txt, &text_targets(targets, k))?,
        ),
        Pairing::InBatch => {
            let diag: Vec<usize> = (0..targets.len()).collect();
            (
                losses::cross_entropy(&state.l_eeg, &diag)?,
                losses::cross_entropy(&state.l_txt, &diag)?,
            )
        }
    };
    let l1 = 0.5 * (ce_eeg + ce_txt);
    let l2 = losses::cross_entropy(&state.class_logits, targets)?;
    Ok(ClipLosses {
        l1,
        l2,
        total: state.alpha * l1 + (1.0 - state.alpha) * l2,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub alpha: f64,
    pub sigma_init: f64,
    pub seed: u64,
    pub pairing: Pairing,
    /// Train accuracy reported as "epochs to threshold".
    pub target_accuracy: f64,
    /// Stop once train accuracy reaches `target_accuracy`.
    pub early_stop: bool,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            epochs: 400,
            batch_size: 32,
            lr: 1e-5,
            weight_decay: 1e-4,
            alpha: 0.5,
            sigma_init: DEFAULT_SIGMA,
            seed: 7,
            pairing: Pairing::Class,
            target_accuracy: 0.95,
            early_stop: false,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CoreError::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(CoreError::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(CoreError::Config(format!(
                "alpha {} outside [0,1]",
                self.alpha
            )));
        }
        if !(self.sigma_init > 0.0) {
            return Err(CoreError::Config(format!(
                "sigma_init must be positive, got {}",
                self.sigma_init
            )));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub curve: Vec<CurvePoint>,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub epochs_to_target: Option<usize>,
}

/// Shuffled sample order for one training epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(
        seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    ));
    order
}

fn argmax_row<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn count_correct<T: Real>(logits: &[T], k: usize, targets: &[usize]) -> usize {
    logits
        .chunks(k)
        .zip(targets)
        .filter(|(r, &t)| argmax_row(r) == t)
        .count()
}

/// Train every trainable tensor in `store` (both encoders, prompts, σ and
/// the classifier). `on_epoch` sees each curve point as it is produced.
pub fn train_teacher<T: Real>(
    model: &ClipModel,
    store: &mut ParamStore<T>,
    data: &Samples<T>,
    run: &TrainRunConfig,
    mut on_epoch: impl FnMut(&CurvePoint),
) -> Result<TrainSummary> {
    run.validate()?;
    if data.is_empty() {
        return Err(CoreError::EmptyDataset);
    }
    let mut adam = Adam::new(run.adam())?;
    let mut curve = Vec::new();
    let mut step = 0u64;
    let mut final_loss = f64::NAN;
    let mut epochs_run = 0;
    for epoch in 1..=run.epochs {
        let order = epoch_order(data.len(), run.seed, epoch);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (bi, idx) in chunks(&order, run.batch_size).enumerate() {
            let targets = data.batch_labels(idx);
            let mut g = Graph::new(Mode::Train, run.seed, step);
            let x = g.input_value("x", &data.batch(idx), false);
            let n = build_clip_loss(model, &mut g, store, x, &targets, run.alpha, run.pairing)?;
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
            adam.step(store, &grads)?;
            step += 1;
            loss_sum += loss * idx.len() as f64;
            correct += count_correct(g.data(n.class_logits)?, model.num_classes(), &targets);
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
        let reached = point.accuracy >= run.target_accuracy;
        curve.push(point);
        if run.early_stop && reached {
            break;
        }
    }
    model.freeze_text_features(store)?;
    Ok(TrainSummary {
        epochs_to_target: epochs_to_threshold(&curve, run.target_accuracy),
        curve,
        epochs_run,
        final_loss,
    })
}

/// Classifier probabilities plus the separately reported zero-shot scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub probs: Vec<Vec<f64>>,
    pub zero_shot: Vec<Vec<f64>>,
}

/// Names a head set on top of an EEG encoder: classifier, logit scale and
/// frozen text features.
#[derive(Clone, Debug)]
pub struct HeadNames {
    pub classifier: String,
    pub logit_scale: String,
    pub text_features: String,
}

impl HeadNames {
    pub fn under(prefix: &str) -> Self {
        HeadNames {
            classifier: format!("{prefix}/{CLASSIFIER}"),
            logit_scale: format!("{prefix}/{LOGIT_SCALE}"),
            text_features: format!("{prefix}/{TEXT_FEATURES}"),
        }
    }
}

/// Eval-mode inference in chunks of `batch` epochs.
pub fn predict_with<T: Real>(
    enc: &EegEncoder,
    heads: &HeadNames,
    store: &ParamStore<T>,
    data: &Samples<T>,
    batch: usize,
) -> Result<Predictions> {
    let u = store.get(&heads.text_features)?.to_f64_vec();
    let sigma = store.get(&heads.logit_scale)?.data()[0].as_f64().exp();
    let latent = enc.cfg.output_dim();
    let u: Vec<&[f64]> = u.chunks(latent).collect();
    let (mut probs, mut zero_shot) = (Vec::new(), Vec::new());
    let all: Vec<usize> = (0..data.len()).collect();
    for idx in chunks(&all, batch) {
        let mut g = Graph::new(Mode::Eval, 0, 0);
        let x = g.input_value("x", &data.batch(idx), false);
        let tr = enc.encode(&mut g, store, x)?;
        let logits = nn::linear(&mut g, store, &heads.classifier, tr.features)?;
        let v = g.l2_normalize(tr.features)?;
        g.run(store).map_err(|e| tr.locate(e))?;
        let k = g.shape(logits)[1];
        let rows: Vec<Vec<f64>> = g
            .tensor(logits)?
            .to_f64_vec()
            .chunks(k)
            .map(<[f64]>::to_vec)
            .collect();
        probs.extend(softmax_rows(&rows, 1.0));
        let v = g.tensor(v)?.to_f64_vec();
        let sims: Vec<Vec<f64>> = v
            .chunks(latent)
            .map(|vr| {
                u.iter()
                    .map(|ur| sigma * vr.iter().zip(*ur).map(|(a, b)| a * b).sum::<f64>())
                    .collect()
            })
            .collect();
        zero_shot.extend(softmax_rows(&sims, 1.0));
    }
    Ok(Predictions { probs, zero_shot })
}

pub fn predict<T: Real>(
    model: &ClipModel,
    store: &ParamStore<T>,
    data: &Samples<T>,
    batch: usize,
) -> Result<Predictions> {
    if !store.contains(&clip_name(TEXT_FEATURES)) {
        let mut s = store.clone();
        model.freeze_text_features(&mut s)?;
        return predict_with(&model.eeg, &HeadNames::under(CLIP), &s, data, batch);
    }
    predict_with(&model.eeg, &HeadNames::under(CLIP), store, data, batch)
}

pub const META_KIND: &str = "kind";
pub const META_SPEC: &str = "spec";

pub fn save_clip<T: Real>(path: &Path, model: &ClipModel, store: &ParamStore<T>) -> Result<()> {
    let mut ck = Checkpoint::new(store.clone());
    ck.meta.insert(META_KIND.into(), CLIP.into());
    ck.meta
        .insert(META_SPEC.into(), serde_json::to_string(&model.spec)?);
    save_checkpoint(path, &ck)?;
    Ok(())
}

pub fn load_clip<T: Real>(path: &Path) -> Result<(ClipModel, ParamStore<T>)> {
    let ck: Checkpoint<T> = load_checkpoint(path)?;
    if ck.meta(META_KIND).ok() != Some(CLIP) {
        return Err(CoreError::Mismatch(format!(
            "{} is not a teacher checkpoint",
            path.display()
        )));
    }
    let spec: ClipSpec = serde_json::from_str(ck.meta(META_SPEC)?)?;
    let model = ClipModel::new(spec)?;
    model.check_store(&ck.store)?;
    Ok((model, ck.store))
}
