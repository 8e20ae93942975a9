mod common;

use common::{noise, tiny_eeg, tiny_model, tiny_text};
use dceeg_core::clip::{HeadNames, DEFAULT_SIGMA};
use dceeg_core::{ecam, prompt_param_count, AblationVariant, EcamMethod, Samples};

fn data(n: usize) -> Samples<f64> {
    Samples::new(noise(n * 4 * 128, 3), vec![0; n], 4, 128).unwrap()
}

#[test]
fn maps_are_normalized_per_epoch() {
    let m = tiny_model(tiny_eeg(4, 128), tiny_text(Default::default()));
    let mut st = m.init_params::<f64>(2, DEFAULT_SIGMA).unwrap();
    m.freeze_text_features(&mut st).unwrap();
    for method in [EcamMethod::GradientInput, EcamMethod::ConvActivation] {
        let maps = ecam(&m.eeg, &HeadNames::under("clip"), &st, &data(5), method, 2).unwrap();
        assert_eq!(maps.len(), 5);
        for map in &maps {
            assert_eq!(map.scores.len(), 4);
            assert!(map.scores.iter().all(|s| (0.0..=1.0).contains(s)));
            assert!(
                map.scores.contains(&0.0) && map.scores.contains(&1.0),
                "{method:?}"
            );
            assert!(map.warning.is_none());
        }
    }
}

#[test]
fn gradient_input_map_is_batch_independent() {
    let m = tiny_model(tiny_eeg(4, 128), tiny_text(Default::default()));
    let st = m.init_params::<f64>(4, DEFAULT_SIGMA).unwrap();
    let d = data(4);
    let heads = HeadNames::under("clip");
    let together = ecam(&m.eeg, &heads, &st, &d, EcamMethod::GradientInput, 4).unwrap();
    let apart = ecam(&m.eeg, &heads, &st, &d, EcamMethod::GradientInput, 1).unwrap();
    for (a, b) in together.iter().zip(&apart) {
        for (x, y) in a.scores.iter().zip(&b.scores) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn silent_input_gives_uniform_map_with_warning() {
    let m = tiny_model(tiny_eeg(4, 128), tiny_text(Default::default()));
    let st = m.init_params::<f64>(2, DEFAULT_SIGMA).unwrap();
    let zeros = Samples::new(vec![0.0; 4 * 128], vec![0], 4, 128).unwrap();
    let maps = ecam(
        &m.eeg,
        &HeadNames::under("clip"),
        &st,
        &zeros,
        EcamMethod::GradientInput,
        1,
    )
    .unwrap();
    assert_eq!(maps[0].scores, vec![1.0; 4]);
    assert!(maps[0].warning.is_some());
}

#[test]
fn ablation_variants_give_distinct_manifests() {
    let mut manifests = Vec::new();
    let mut counts = std::collections::HashMap::new();
    for v in AblationVariant::ALL {
        let (e, t) = v.apply(&tiny_eeg(4, 128), &tiny_text(Default::default()));
        let m = tiny_model(e.clone(), t.clone());
        let st = m.init_params::<f64>(0, DEFAULT_SIGMA).unwrap();
        let man: Vec<_> = st
            .manifest()
            .into_iter()
            .map(|e| (e.name, e.shape, e.trainable))
            .collect();
        assert!(
            !manifests.contains(&man),
            "{} duplicates an earlier manifest",
            v.label()
        );
        manifests.push(man);
        counts.insert(v, (st.num_trainable(), prompt_param_count(&e, &t)));
    }
    let (lp, lp_prompts) = counts[&AblationVariant::BaseLp];
    let (wp, wp_prompts) = counts[&AblationVariant::BaseWp];
    assert_eq!(wp_prompts, 0);
    assert_eq!(lp - wp, lp_prompts);
    assert!(lp > wp);
}
