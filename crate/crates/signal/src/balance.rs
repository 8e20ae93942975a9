use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SignalError};
use crate::recording::EegEpoch;

/// Keep every seizure epoch and a seeded random subset of background
/// epochs, `round(ratio × seizures)` of them or all if fewer exist.
/// Relative order is preserved.
pub fn balance(epochs: Vec<EegEpoch>, ratio: f64, seed: u64) -> Result<Vec<EegEpoch>> {
    let n_sz = epochs.iter().filter(|e| e.is_seizure()).count();
    if n_sz == 0 {
        return Err(SignalError::NoSeizureEpochs);
    }
    let bg: Vec<usize> = epochs
        .iter()
        .enumerate()
        .filter(|(_, e)| !e.is_seizure())
        .map(|(i, _)| i)
        .collect();
    let want = ((ratio * n_sz as f64).round() as usize).min(bg.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; epochs.len()];
    for i in sample(&mut rng, bg.len(), want) {
        keep[bg[i]] = true;
    }
    Ok(epochs
        .into_iter()
        .enumerate()
        .filter(|(i, e)| e.is_seizure() || keep[*i])
        .map(|(_, e)| e)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn epochs(bg: usize, sz: usize) -> Vec<EegEpoch> {
        (0..bg + sz)
            .map(|i| EegEpoch {
                data: vec![i as f64],
                num_channels: 1,
                window_samples: 1,
                label: if i < bg { "bckg".into() } else { "SZ".into() },
                source_id: "r".into(),
                window_start_s: i as f64,
            })
            .collect()
    }

    fn counts(e: &[EegEpoch]) -> (usize, usize) {
        let s = e.iter().filter(|e| e.is_seizure()).count();
        (e.len() - s, s)
    }

    #[test]
    fn subsamples_background() {
        assert_eq!(counts(&balance(epochs(100, 20), 1.0, 1).unwrap()), (20, 20));
        assert_eq!(counts(&balance(epochs(100, 20), 2.0, 1).unwrap()), (40, 20));
    }

    #[test]
    fn cannot_oversample() {
        assert_eq!(counts(&balance(epochs(10, 20), 1.0, 1).unwrap()), (10, 20));
    }

    #[test]
    fn seeded() {
        let a = balance(epochs(100, 20), 1.0, 5).unwrap();
        assert_eq!(a, balance(epochs(100, 20), 1.0, 5).unwrap());
        assert_ne!(a, balance(epochs(100, 20), 1.0, 6).unwrap());
        assert!(a
            .windows(2)
            .all(|w| w[0].window_start_s < w[1].window_start_s));
    }

    #[test]
    fn needs_seizures() {
        assert!(matches!(
            balance(epochs(5, 0), 1.0, 0),
            Err(SignalError::NoSeizureEpochs)
        ));
    }
}
