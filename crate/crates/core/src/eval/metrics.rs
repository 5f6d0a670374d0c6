use crate::error::{Error, Result};

/// Counts indexed `[truth][prediction]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    phases: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(phases: usize) -> Self {
        ConfusionMatrix {
            phases,
            counts: vec![0; phases * phases],
        }
    }

    pub fn from_counts(phases: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != phases * phases {
            return Err(Error::Length(format!(
                "{} counts for {phases} phases",
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { phases, counts })
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.phases + pred]
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.phases || pred >= self.phases {
            return Err(Error::OutOfRange(format!(
                "label pair ({truth}, {pred}) for {} phases",
                self.phases
            )));
        }
        self.counts[truth * self.phases + pred] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.phases, other.phases);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.phases).map(|i| self.get(i, i)).sum()
    }

    /// `(tp, fp, fn)` for phase `i`.
    pub fn outcomes(&self, i: usize) -> (u64, u64, u64) {
        let tp = self.get(i, i);
        let col: u64 = (0..self.phases).map(|r| self.get(r, i)).sum();
        let row: u64 = (0..self.phases).map(|c| self.get(i, c)).sum();
        (tp, col - tp, row - tp)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], phases: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::Length(format!(
            "{} labels vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(phases);
    for (&t, &p) in truth.iter().zip(pred) {
        cm.record(t, p)?;
    }
    Ok(cm)
}

/// Per-phase rates in percent. `None` marks an undefined rate: recall and
/// Jaccard without ground truth, precision for a phase neither true nor
/// predicted. A phase that is true but never predicted has precision 0.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseMetrics {
    pub support: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub jaccard: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub per_phase: Vec<PhaseMetrics>,
    /// Means over phases with ground-truth support.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_jaccard: f64,
}

fn pct(num: u64, den: u64) -> f64 {
    100.0 * num as f64 / den as f64
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Empty("confusion matrix has no frames".into()));
    }
    let per_phase: Vec<PhaseMetrics> = (0..cm.phases())
        .map(|i| {
            let (tp, fp, fneg) = cm.outcomes(i);
            let support = tp + fneg;
            PhaseMetrics {
                support,
                precision: match (tp + fp, support) {
                    (0, 0) => None,
                    (0, _) => Some(0.0),
                    (d, _) => Some(pct(tp, d)),
                },
                recall: (support > 0).then(|| pct(tp, support)),
                jaccard: (support > 0).then(|| pct(tp, tp + fp + fneg)),
            }
        })
        .collect();
    let supported: Vec<&PhaseMetrics> = per_phase.iter().filter(|m| m.support > 0).collect();
    let mean = |f: fn(&PhaseMetrics) -> Option<f64>| {
        supported.iter().map(|m| f(m).unwrap_or(0.0)).sum::<f64>() / supported.len() as f64
    };
    Ok(Metrics {
        accuracy: pct(cm.trace(), total),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_jaccard: mean(|m| m.jaccard),
        per_phase,
    })
}

/// Mean and sample standard deviation (n − 1; zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sequences_are_diagonal() {
        let cm = confusion(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(cm.trace(), 4);
        let m = metrics(&cm).unwrap();
        assert_eq!(
            (
                m.accuracy,
                m.macro_precision,
                m.macro_recall,
                m.macro_jaccard
            ),
            (100.0, 100.0, 100.0, 100.0)
        );
    }

    #[test]
    fn single_miss() {
        let cm = confusion(&[1], &[2], 3).unwrap();
        assert_eq!(cm.get(1, 2), 1);
        assert_eq!(cm.total(), 1);
        assert!(confusion(&[1], &[], 3).is_err());
    }

    #[test]
    fn worked_two_by_two() {
        let cm = ConfusionMatrix::from_counts(2, vec![5, 5, 0, 10]).unwrap();
        let m = metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 75.0);
        assert_eq!(m.per_phase[0].precision, Some(100.0));
        assert!((m.per_phase[1].precision.unwrap() - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(m.per_phase[0].recall, Some(50.0));
        assert_eq!(m.per_phase[1].recall, Some(100.0));
        assert_eq!(m.per_phase[0].jaccard, Some(50.0));
        assert!((m.per_phase[1].jaccard.unwrap() - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn precision_conventions() {
        // Phase 2 never true but predicted once; phase 1 true but never
        // predicted; phase 3 absent everywhere.
        let cm = confusion(&[0, 0, 1], &[0, 2, 0], 4).unwrap();
        let m = metrics(&cm).unwrap();
        assert_eq!(m.per_phase[1].precision, Some(0.0));
        assert_eq!(m.per_phase[2].precision, Some(0.0));
        assert_eq!(m.per_phase[3].precision, None);
        assert_eq!(m.per_phase[2].recall, None);
        assert!(metrics(&ConfusionMatrix::new(2)).is_err());
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[80.0, 60.0]);
        assert_eq!(m, 70.0);
        assert!((s - 14.142135623730951).abs() < 1e-9);
        assert_eq!(mean_std(&[42.0]), (42.0, 0.0));
    }
}
