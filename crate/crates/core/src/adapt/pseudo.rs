use std::io::Write;

use super::ClusterModel;
use crate::data::LabeledDataset;
use crate::error::{invalid, shape, Result};
use crate::nn::{Classifier, Matrix};

/// Hard pseudo labels together with the class distributions they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    pub labels: Vec<usize>,
    pub probs: Matrix,
}

impl PseudoLabelSet {
    /// Labels are the row-wise argmax of `probs`.
    pub fn from_probs(probs: Matrix) -> Self {
        Self {
            labels: probs.argmax_rows(),
            probs,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.cols()
    }

    /// Fraction of labels that agree with the ground truth; unlabeled samples
    /// are skipped. `None` when nothing is labeled.
    pub fn accuracy(&self, truth: &[Option<usize>]) -> Option<f64> {
        let (hits, total) = self
            .labels
            .iter()
            .zip(truth)
            .filter_map(|(p, t)| t.map(|t| (*p == t) as usize))
            .fold((0, 0), |(h, n), hit| (h + hit, n + 1));
        (total > 0).then(|| hits as f64 / total as f64)
    }

    /// CSV with header `index,cluster,label,prob_0..prob_{K-1}`.
    pub fn write_csv<W: Write>(&self, clusters: Option<&ClusterModel>, mut out: W) -> std::io::Result<()> {
        let probs: Vec<String> = (0..self.num_classes()).map(|k| format!("prob_{k}")).collect();
        writeln!(out, "index,cluster,label,{}", probs.join(","))?;
        for (i, (label, row)) in self.labels.iter().zip(self.probs.iter_rows()).enumerate() {
            let cluster = clusters.map_or(-1, |c| c.assignments[i] as i64);
            write!(out, "{i},{cluster},{label}")?;
            for p in row {
                write!(out, ",{p}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Eval-mode predictions on every target sample.
pub fn pregenerate_labels(model: &Classifier, target: &LabeledDataset) -> Result<PseudoLabelSet> {
    Ok(PseudoLabelSet::from_probs(model.predict_proba(target.features())?))
}

/// Eval-mode activations at the model's feature tap.
pub fn extract_features(model: &Classifier, data: &LabeledDataset) -> Result<Matrix> {
    Ok(model.forward_eval(data.features())?.features)
}

/// Over-clustering size: ten clusters per class, or half the samples when
/// that is smaller.
pub fn overcluster_k(num_classes: usize, num_samples: usize) -> usize {
    let k = 10 * num_classes;
    if k > num_samples {
        (num_samples / 2).max(1)
    } else {
        k
    }
}

/// Replaces each sample's distribution by the mean distribution of its
/// cluster and relabels by argmax.
pub fn dtc_refine(pseudo: &PseudoLabelSet, clusters: &ClusterModel) -> Result<PseudoLabelSet> {
    let n = pseudo.len();
    if clusters.assignments.len() != n || pseudo.probs.rows() != n {
        return Err(invalid(format!(
            "{} pseudo labels but {} cluster assignments",
            n,
            clusters.assignments.len()
        )));
    }
    if let Some(&bad) = clusters.assignments.iter().find(|&&c| c >= clusters.k) {
        return Err(shape(format!("cluster {bad} out of range for k = {}", clusters.k)));
    }
    let classes = pseudo.num_classes();
    let mut sums = Matrix::zeros(clusters.k, classes);
    let mut counts = vec![0usize; clusters.k];
    for (row, &c) in pseudo.probs.iter_rows().zip(&clusters.assignments) {
        counts[c] += 1;
        for (s, &p) in sums.row_mut(c).iter_mut().zip(row) {
            *s += p;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            sums.row_mut(c).iter_mut().for_each(|s| *s /= count as f64);
        }
    }
    Ok(PseudoLabelSet::from_probs(sums.select_rows(&clusters.assignments)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Affine, Layer};

    fn clusters(assignments: Vec<usize>, k: usize) -> ClusterModel {
        ClusterModel {
            centroids: Matrix::zeros(k, 1),
            assignments,
            k,
            inertia: 0.0,
            inertia_trace: vec![],
        }
    }

    #[test]
    fn argmax_and_ties() {
        let p = PseudoLabelSet::from_probs(Matrix::from_rows(&[[0.1, 0.7, 0.2], [0.5, 0.5, 0.0]]).unwrap());
        assert_eq!(p.labels, vec![1, 0]);
    }

    #[test]
    fn cluster_mean_example() {
        let p = PseudoLabelSet::from_probs(Matrix::from_rows(&[[0.6, 0.4], [0.2, 0.8]]).unwrap());
        let r = dtc_refine(&p, &clusters(vec![0, 0], 1)).unwrap();
        for row in r.probs.iter_rows() {
            assert!((row[0] - 0.4).abs() < 1e-15 && (row[1] - 0.6).abs() < 1e-15);
        }
        assert_eq!(r.labels, vec![1, 1]);
    }

    #[test]
    fn identical_rows_and_singletons_unchanged() {
        let p = PseudoLabelSet::from_probs(Matrix::from_rows(&[[0.3, 0.7], [0.3, 0.7], [0.9, 0.1]]).unwrap());
        assert_eq!(dtc_refine(&p, &clusters(vec![1, 1, 0], 2)).unwrap(), p);
        assert_eq!(dtc_refine(&p, &clusters(vec![2, 0, 1], 3)).unwrap(), p);
    }

    #[test]
    fn length_mismatch() {
        let p = PseudoLabelSet::from_probs(Matrix::filled(2, 2, 0.5));
        assert!(dtc_refine(&p, &clusters(vec![0], 1)).is_err());
    }

    #[test]
    fn overcluster_sizes() {
        assert_eq!(overcluster_k(4, 2000), 40);
        assert_eq!(overcluster_k(10, 60), 30);
        assert_eq!(overcluster_k(3, 1), 1);
    }

    #[test]
    fn input_tap_returns_inputs() {
        let affine = Affine {
            weight: Matrix::identity(2),
            bias: vec![0.0; 2],
        };
        let model = Classifier::new(2, vec![Layer::Affine(affine), Layer::Softmax], 2, 0).unwrap();
        let x = Matrix::from_rows(&[[0.3, -0.2], [1.0, 4.0]]).unwrap();
        let data = LabeledDataset::unlabeled(x.clone(), 2).unwrap();
        assert_eq!(extract_features(&model, &data).unwrap(), x);
    }

    #[test]
    fn accuracy_skips_unlabeled() {
        let p = PseudoLabelSet {
            labels: vec![0, 1, 1],
            probs: Matrix::filled(3, 2, 0.5),
        };
        assert_eq!(p.accuracy(&[Some(0), None, Some(0)]), Some(0.5));
        assert_eq!(p.accuracy(&[None, None, None]), None);
    }
}
