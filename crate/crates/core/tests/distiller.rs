mod common;

use common::{noise, samples, synthetic, tiny_eeg, tiny_model, tiny_text};
use dceeg_autodiff::{Graph, Mode, ParamStore, Tensor};
use dceeg_core::distill::teacher_logits;
use dceeg_core::losses::softmax_rows;
use dceeg_core::{
    build_distill_loss, distill, distill_loss, init_student, kl_divergence, load_student, predict,
    save_student, train_teacher, ClipModel, CoreError, DistillConfig, KlDirection, PromptMode,
    Samples, TrainRunConfig,
};

fn rows(n: usize, k: usize, seed: u64, scale: f64) -> Vec<Vec<f64>> {
    noise(n * k, seed)
        .chunks(k)
        .map(|r| r.iter().map(|v| v * scale).collect())
        .collect()
}

#[test]
fn kl_is_nonnegative_and_zero_only_on_agreement() {
    for seed in 0..20 {
        let p = softmax_rows(&rows(5, 4, seed, 3.0), 1.0);
        let q = softmax_rows(&rows(5, 4, seed + 100, 3.0), 1.0);
        for d in [KlDirection::TeacherRef, KlDirection::StudentRef] {
            assert!(kl_divergence(&p, &q, d).unwrap() > 0.0);
            assert!(kl_divergence(&p, &p, d).unwrap().abs() < 1e-15);
        }
    }
}

#[test]
fn graph_distill_loss_matches_numeric_route() {
    let s = rows(6, 3, 1, 2.0);
    let t = rows(6, 3, 2, 2.0);
    let y = [0, 1, 2, 2, 1, 0];
    for dir in [KlDirection::TeacherRef, KlDirection::StudentRef] {
        for temperature in [1.0, 3.0, 5.0] {
            for alpha in [0.0, 0.5, 1.0] {
                let cfg = DistillConfig {
                    temperature,
                    alpha,
                    kl_direction: dir,
                    ..Default::default()
                };
                let num = distill_loss(&s, &t, &y, &cfg).unwrap();
                let mut g = Graph::<f64>::new(Mode::Eval, 0, 0);
                let sn =
                    g.input_value("s", &Tensor::from_f64(&[6, 3], &s.concat()).unwrap(), false);
                let tn =
                    g.input_value("t", &Tensor::from_f64(&[6, 3], &t.concat()).unwrap(), false);
                let n = build_distill_loss(&mut g, sn, tn, &y, &cfg).unwrap();
                g.run(&ParamStore::new()).unwrap();
                for (a, b) in [(num.ce, n.ce), (num.kl, n.kl), (num.total, n.total)] {
                    assert!((a - g.scalar_value(b).unwrap()).abs() < 1e-9);
                }
                let floored = kl_divergence(
                    &softmax_rows(&s, temperature),
                    &softmax_rows(&t, temperature),
                    dir,
                )
                .unwrap();
                assert!((floored - num.kl).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn student_logit_gradient_matches_finite_differences() {
    let t = rows(4, 3, 8, 2.0);
    let y = [2, 0, 1, 1];
    for seed in 0..5 {
        let s = rows(4, 3, 20 + seed, 2.0);
        for dir in [KlDirection::TeacherRef, KlDirection::StudentRef] {
            for temperature in [1.0, 3.0] {
                let cfg = DistillConfig {
                    temperature,
                    kl_direction: dir,
                    ..Default::default()
                };
                let mut g = Graph::<f64>::new(Mode::Eval, 0, 0);
                let sn = g.input_value("s", &Tensor::from_f64(&[4, 3], &s.concat()).unwrap(), true);
                let tn =
                    g.input_value("t", &Tensor::from_f64(&[4, 3], &t.concat()).unwrap(), false);
                let n = build_distill_loss(&mut g, sn, tn, &y, &cfg).unwrap();
                g.run(&ParamStore::new()).unwrap();
                g.backward(n.total).unwrap();
                let analytic = g.grad(sn).unwrap().to_vec();
                let h = 1e-6;
                for i in 0..12 {
                    let bump = |d: f64| {
                        let mut z = s.clone();
                        z[i / 3][i % 3] += d;
                        distill_loss(&z, &t, &y, &cfg).unwrap().total
                    };
                    let numeric = (bump(h) - bump(-h)) / (2.0 * h);
                    let rel = (analytic[i] - numeric).abs()
                        / analytic[i].abs().max(numeric.abs()).max(1e-6);
                    assert!(
                        rel < 1e-4,
                        "{dir:?} t={temperature} [{i}]: {} vs {numeric}",
                        analytic[i]
                    );
                }
            }
        }
    }
}

#[test]
fn alpha_one_leaves_teacher_logits_without_gradient() {
    for alpha in [1.0, 0.5] {
        let cfg = DistillConfig {
            alpha,
            ..Default::default()
        };
        let mut g = Graph::<f64>::new(Mode::Eval, 0, 0);
        let sn = g.input_value("s", &Tensor::from_f64(&[2, 3], &noise(6, 1)).unwrap(), true);
        let tn = g.input_value("t", &Tensor::from_f64(&[2, 3], &noise(6, 2)).unwrap(), true);
        let n = build_distill_loss(&mut g, sn, tn, &[0, 1], &cfg).unwrap();
        g.run(&ParamStore::new()).unwrap();
        g.backward(n.total).unwrap();
        assert!(
            g.grad(tn).is_none_or(|v| v.iter().all(|x| *x == 0.0)),
            "α={alpha}"
        );
    }
}

#[test]
fn higher_temperature_flattens_monotonically() {
    let logits = rows(8, 5, 3, 6.0);
    let mut last = f64::INFINITY;
    for t in [1.0, 3.0, 5.0, 10.0] {
        let dev = softmax_rows(&logits, t)
            .iter()
            .flatten()
            .map(|p| (p - 0.2).abs())
            .fold(0.0, f64::max);
        assert!(dev < last, "t={t}: {dev} !< {last}");
        last = dev;
    }
}

#[test]
fn temperature_must_be_positive() {
    let cfg = DistillConfig {
        temperature: 0.0,
        ..Default::default()
    };
    let r = distill_loss(&[vec![0.0, 1.0]], &[vec![0.0, 1.0]], &[0], &cfg);
    assert!(matches!(r, Err(CoreError::Config(_))));
}

fn trained_teacher() -> (ClipModel, ParamStore<f64>, Samples<f64>) {
    let s = samples(&synthetic(2, 9));
    let idx: Vec<usize> = (0..s.len()).step_by(2).collect();
    let data = s.subset(&idx);
    let m = tiny_model(tiny_eeg(4, 128), tiny_text(PromptMode::Learnable));
    let mut st = m
        .init_params::<f64>(1, dceeg_core::clip::DEFAULT_SIGMA)
        .unwrap();
    let run = TrainRunConfig {
        epochs: 3,
        lr: 1e-3,
        batch_size: 16,
        ..Default::default()
    };
    train_teacher(&m, &mut st, &data, &run, |_| {}).unwrap();
    (m, st, data)
}

#[test]
fn teacher_is_untouched_and_only_student_encoder_updates() {
    let (m, st, data) = trained_teacher();
    let before = st.clone();
    let out_before = predict(&m, &st, &data, 16).unwrap();
    let logits_before = teacher_logits(&m, &st, &data, 16).unwrap();
    let cfg = DistillConfig {
        epochs: 2,
        lr: 1e-3,
        batch_size: 16,
        ..Default::default()
    };
    let (student, mut ss) = init_student(&m, &st, tiny_eeg(4, 128).into_student(), &cfg).unwrap();
    let frozen_before = ss.clone();
    let sum = distill(&m, &st, &student, &mut ss, &data, &cfg, |_| {}).unwrap();

    assert!(st.bit_eq(&before));
    assert_eq!(predict(&m, &st, &data, 16).unwrap(), out_before);
    let logits_after = teacher_logits(&m, &st, &data, 16).unwrap();
    assert!(logits_before
        .iter()
        .flatten()
        .zip(logits_after.iter().flatten())
        .all(|(a, b)| a.to_bits() == b.to_bits()));

    assert!(!sum.update_set.is_empty());
    assert!(sum
        .update_set
        .iter()
        .all(|n| n.starts_with("student/eeg_encoder/")));
    let trainable: std::collections::BTreeSet<String> = ss.trainable_names().into_iter().collect();
    assert_eq!(sum.update_set, trainable);
    for n in [
        "student/classifier/w",
        "student/logit_scale",
        "student/text_features",
    ] {
        assert!(ss.get(n).unwrap().bit_eq(frozen_before.get(n).unwrap()));
    }
    assert!(ss.contains("student/eeg_encoder/projection/w"));
}

#[test]
fn latent_mismatch_is_rejected() {
    let (m, st, _) = trained_teacher();
    let mut bad = tiny_eeg(4, 128).into_student();
    bad.projection_dim = Some(7);
    let r = init_student(&m, &st, bad, &DistillConfig::default());
    assert!(matches!(r, Err(CoreError::Mismatch(_))));
}

#[test]
fn reused_text_features_equal_teacher_features() {
    let (m, st, _) = trained_teacher();
    let (student, ss) = init_student(
        &m,
        &st,
        tiny_eeg(4, 128).into_student(),
        &DistillConfig::default(),
    )
    .unwrap();
    assert!(ss
        .get(&student.heads().text_features)
        .unwrap()
        .bit_eq(st.get("clip/text_features").unwrap()));
}

#[test]
fn student_checkpoint_round_trip() {
    let (m, st, data) = trained_teacher();
    let (student, ss) = init_student(
        &m,
        &st,
        tiny_eeg(4, 128).into_student(),
        &DistillConfig::default(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("student.ckpt");
    save_student(&path, &student, &ss).unwrap();
    let (s2, ss2) = load_student::<f64>(&path).unwrap();
    assert!(ss.bit_eq(&ss2));
    assert_eq!(
        student.predict(&ss, &data, 8).unwrap(),
        s2.predict(&ss2, &data, 8).unwrap()
    );
    assert!(dceeg_core::load_clip::<f64>(&path).is_err());
}
