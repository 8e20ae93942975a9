use crate::error::{MetricsError, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_labels(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(MetricsError::Invalid(format!(
                "{} labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut m = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(MetricsError::Invalid(format!(
                    "class index ({t}, {p}) outside 0..{classes}"
                )));
            }
            m.counts[t * classes + p] += 1;
        }
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.classes).map(|p| self.get(truth, p)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, predicted)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    /// `(tp, fp, fn, tn)` for class `c` against the rest.
    pub fn one_vs_rest(&self, c: usize) -> (u64, u64, u64, u64) {
        let tp = self.get(c, c);
        let fp = self.col_sum(c) - tp;
        let fn_ = self.row_sum(c) - tp;
        (tp, fp, fn_, self.total() - tp - fp - fn_)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_sums() {
        let m = ConfusionMatrix::from_labels(&[0, 0, 1, 2, 2], &[0, 1, 1, 2, 0], 3).unwrap();
        assert_eq!(m.total(), 5);
        assert_eq!(m.trace(), 3);
        assert_eq!(m.one_vs_rest(0), (1, 1, 1, 2));
        assert!(ConfusionMatrix::from_labels(&[3], &[0], 3).is_err());
    }
}
