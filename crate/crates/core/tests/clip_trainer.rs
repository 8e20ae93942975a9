mod common;

use common::{noise, samples, synthetic, tiny_eeg, tiny_model, tiny_text};
use dceeg_autodiff::{Graph, Mode, ParamStore, Tensor};
use dceeg_core::clip::{text_targets, DEFAULT_SIGMA};
use dceeg_core::losses::{cross_entropy, soft_cross_entropy, transpose};
use dceeg_core::{
    build_clip_loss, clip_losses, load_clip, predict, save_clip, train_teacher, ClipBatchState,
    ClipModel, CoreError, Pairing, PromptMode, Samples, TrainRunConfig,
};

const E: usize = 4;
const L: usize = 128;

fn model() -> ClipModel {
    tiny_model(tiny_eeg(E, L), tiny_text(PromptMode::Learnable))
}

fn toy_batch(b: usize, seed: u64) -> (Tensor<f64>, Vec<usize>) {
    let x = Tensor::new(vec![b, 1, E, L], noise(b * E * L, seed)).unwrap();
    (x, (0..b).map(|i| (i * 7 + 3) % 2).collect())
}

fn graph_state(
    m: &ClipModel,
    store: &ParamStore<f64>,
    alpha: f64,
    pairing: Pairing,
) -> (ClipBatchState, [f64; 3], Vec<usize>) {
    let (x, y) = toy_batch(6, 1);
    let mut g = Graph::new(Mode::Eval, 0, 0);
    let xn = g.input_value("x", &x, false);
    let n = build_clip_loss(m, &mut g, store, xn, &y, alpha, pairing).unwrap();
    g.run(store).unwrap();
    let s = ClipBatchState::from_graph(&g, &n, alpha, pairing).unwrap();
    let vals = [n.l1, n.l2, n.total].map(|id| g.scalar_value(id).unwrap());
    (s, vals, y)
}

#[test]
fn graph_losses_match_numeric_route() {
    let m = model();
    let store = m.init_params::<f64>(3, DEFAULT_SIGMA).unwrap();
    for pairing in [Pairing::Class, Pairing::InBatch] {
        for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let (s, [l1, l2, total], y) = graph_state(&m, &store, alpha, pairing);
            let num = clip_losses(&s, &y).unwrap();
            assert!(
                (num.l1 - l1).abs() < 1e-9 && (num.l2 - l2).abs() < 1e-9,
                "{pairing:?} α={alpha}"
            );
            assert!((num.total - total).abs() < 1e-9);
            assert!((total - (alpha * l1 + (1.0 - alpha) * l2)).abs() < 1e-9);
        }
    }
}

#[test]
fn batch_state_invariants() {
    let m = model();
    let store = m.init_params::<f64>(4, DEFAULT_SIGMA).unwrap();
    let (s, _, _) = graph_state(&m, &store, 0.5, Pairing::Class);
    for r in s.v.iter().chain(&s.u) {
        let n: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
    assert_eq!(s.l_txt, transpose(&s.l_eeg));
    assert!((s.sigma - DEFAULT_SIGMA).abs() < 1e-9);
}

#[test]
fn endpoints_are_exact() {
    let m = model();
    let store = m.init_params::<f64>(5, DEFAULT_SIGMA).unwrap();
    let (_, [l1, _, t1], _) = graph_state(&m, &store, 1.0, Pairing::Class);
    let (_, [_, l2, t0], _) = graph_state(&m, &store, 0.0, Pairing::Class);
    assert_eq!(t1, l1);
    assert_eq!(t0, l2);
}

#[test]
fn text_side_ce_equals_ce_on_transposed_eeg_logits() {
    let m = model();
    let store = m.init_params::<f64>(6, DEFAULT_SIGMA).unwrap();
    let (s, _, y) = graph_state(&m, &store, 0.5, Pairing::Class);
    let direct = soft_cross_entropy(&s.l_txt, &text_targets(&y, 2)).unwrap();
    let via = soft_cross_entropy(&transpose(&s.l_eeg), &text_targets(&y, 2)).unwrap();
    assert!((direct - via).abs() < 1e-9);
    let (s, _, _) = graph_state(&m, &store, 0.5, Pairing::InBatch);
    let diag: Vec<usize> = (0..s.l_eeg.len()).collect();
    let direct = cross_entropy(&s.l_txt, &diag).unwrap();
    let via = cross_entropy(&transpose(&s.l_eeg), &diag).unwrap();
    assert!((direct - via).abs() < 1e-9);
}

fn argmax(r: &[f64]) -> usize {
    (0..r.len()).fold(0, |b, j| if r[j] > r[b] { j } else { b })
}

#[test]
fn sigma_rescaling_keeps_every_argmax() {
    let f_eeg: Vec<Vec<f64>> = noise(40, 1).chunks(8).map(<[f64]>::to_vec).collect();
    let f_txt: Vec<Vec<f64>> = noise(24, 2).chunks(8).map(<[f64]>::to_vec).collect();
    let base = ClipBatchState::new(&f_eeg, &f_txt, 2.0, vec![], 0.5, Pairing::Class);
    for c in [1e-3, 0.5, 3.0, 1e4] {
        let s = ClipBatchState::new(&f_eeg, &f_txt, 2.0 * c, vec![], 0.5, Pairing::Class);
        for (a, b) in base
            .l_eeg
            .iter()
            .zip(&s.l_eeg)
            .chain(base.l_txt.iter().zip(&s.l_txt))
        {
            assert_eq!(argmax(a), argmax(b));
        }
    }
}

#[test]
fn total_gradient_is_linear_mix_of_component_gradients() {
    let m = model();
    let store = m.init_params::<f64>(7, DEFAULT_SIGMA).unwrap();
    let (x, y) = toy_batch(6, 9);
    let grads = |alpha: f64| {
        let mut g = Graph::new(Mode::Train, 2, 5);
        let xn = g.input_value("x", &x, false);
        let n = build_clip_loss(&m, &mut g, &store, xn, &y, alpha, Pairing::Class).unwrap();
        g.run(&store).unwrap();
        g.backward(n.total).unwrap()
    };
    let (g1, g0) = (grads(1.0), grads(0.0));
    for alpha in [0.25, 0.5, 0.75] {
        let ga = grads(alpha);
        for (name, v) in ga.iter() {
            let a1 = g1
                .get(name)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; v.len()]);
            let a0 = g0
                .get(name)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; v.len()]);
            for i in 0..v.len() {
                let mix = alpha * a1[i] + (1.0 - alpha) * a0[i];
                assert!((v[i] - mix).abs() < 1e-6, "{name}[{i}] α={alpha}");
            }
        }
    }
    assert!(g1.get("clip/logit_scale").is_some());
}

#[test]
fn bad_target_is_rejected() {
    let m = model();
    let store = m.init_params::<f64>(1, DEFAULT_SIGMA).unwrap();
    let (x, _) = toy_batch(2, 1);
    let mut g = Graph::new(Mode::Eval, 0, 0);
    let xn = g.input_value("x", &x, false);
    let r = build_clip_loss(&m, &mut g, &store, xn, &[0, 2], 0.5, Pairing::Class);
    assert!(matches!(
        r,
        Err(CoreError::TargetOutOfRange {
            target: 2,
            classes: 2
        })
    ));
}

fn small_data() -> Samples<f64> {
    let s = samples(&synthetic(2, 5));
    let idx: Vec<usize> = (0..s.len()).step_by(2).collect();
    s.subset(&idx)
}

#[test]
fn training_is_deterministic_per_seed() {
    let m = model();
    let data = small_data();
    let run = TrainRunConfig {
        epochs: 3,
        lr: 1e-3,
        batch_size: 16,
        ..Default::default()
    };
    let go = || {
        let mut st = m.init_params::<f64>(2, run.sigma_init).unwrap();
        let s = train_teacher(&m, &mut st, &data, &run, |_| {}).unwrap();
        (s, st)
    };
    let (a, sa) = go();
    let (b, sb) = go();
    assert_eq!(a.final_loss.to_bits(), b.final_loss.to_bits());
    assert!(sa.bit_eq(&sb));
    assert_eq!(a.curve.len(), 3);
}

#[test]
fn training_updates_sigma_and_prompts_and_makes_progress() {
    let m = model();
    let data = small_data();
    let run = TrainRunConfig {
        epochs: 20,
        lr: 1e-3,
        batch_size: 16,
        ..Default::default()
    };
    let mut st = m.init_params::<f64>(1, run.sigma_init).unwrap();
    let before = st.clone();
    let s = train_teacher(&m, &mut st, &data, &run, |_| {}).unwrap();
    for name in [
        "clip/logit_scale",
        "clip/eeg_encoder/block0/prompts",
        "clip/text_encoder/layer0/prompts",
    ] {
        assert!(
            !st.get(name).unwrap().bit_eq(before.get(name).unwrap()),
            "{name} unchanged"
        );
    }
    let head: f64 = s.curve[..10].iter().map(|p| p.loss).sum();
    let tail: f64 = s.curve[s.curve.len() - 10..].iter().map(|p| p.loss).sum();
    assert!(tail <= head, "{tail} > {head}");
    assert!(!st.get("clip/text_features").unwrap().requires_grad);
}

#[test]
fn empty_dataset_is_an_error() {
    let m = model();
    let mut st = m.init_params::<f64>(1, DEFAULT_SIGMA).unwrap();
    let empty = Samples::<f64>::new(vec![], vec![], E, L).unwrap();
    let r = train_teacher(&m, &mut st, &empty, &TrainRunConfig::default(), |_| {});
    assert!(matches!(r, Err(CoreError::EmptyDataset)));
}

#[test]
fn non_finite_loss_reports_epoch_and_batch() {
    let m = model();
    let mut st = m.init_params::<f64>(1, DEFAULT_SIGMA).unwrap();
    let mut data = small_data();
    data.data[0] = f64::NAN;
    let run = TrainRunConfig {
        epochs: 1,
        batch_size: data.len(),
        ..Default::default()
    };
    let r = train_teacher(&m, &mut st, &data, &run, |_| {});
    assert!(
        matches!(r, Err(CoreError::NonFiniteLoss { epoch: 1, batch: 0 })),
        "{r:?}"
    );
}

#[test]
fn predictions_are_distributions_and_row_deterministic() {
    let m = model();
    let st = m.init_params::<f64>(3, DEFAULT_SIGMA).unwrap();
    let data = small_data();
    let dup = data.subset(&[0, 1, 0, 1]);
    let p = predict(&m, &st, &dup, 3).unwrap();
    for r in p.probs.iter().chain(&p.zero_shot) {
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_eq!(p.probs[0], p.probs[2]);
    assert_eq!(p.zero_shot[1], p.zero_shot[3]);
}

#[test]
fn checkpoint_round_trip_reproduces_predictions() {
    let m = model();
    let mut st = m.init_params::<f64>(3, DEFAULT_SIGMA).unwrap();
    m.freeze_text_features(&mut st).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("teacher.ckpt");
    save_clip(&path, &m, &st).unwrap();
    let (m2, st2) = load_clip::<f64>(&path).unwrap();
    assert!(st.bit_eq(&st2));
    let data = small_data();
    assert_eq!(
        predict(&m, &st, &data, 8).unwrap(),
        predict(&m2, &st2, &data, 8).unwrap()
    );
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let m = model();
    let mut st = m.init_params::<f64>(3, DEFAULT_SIGMA).unwrap();
    st.remove("clip/classifier/w");
    assert!(matches!(m.check_store(&st), Err(CoreError::Mismatch(_))));
}
