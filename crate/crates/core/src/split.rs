//! Small-loss scoring against pre-generated labels and the label-wise
//! cleaner/noisier split.

use std::io::Write;

use crate::data::LabeledDataset;
use crate::error::{invalid, shape, Result};
use crate::nn::{cross_entropy, Classifier};

/// Partition of the target indices into a cleaner and a noisier subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    /// Sorted ascending.
    pub cleaner: Vec<usize>,
    /// Sorted ascending.
    pub noisier: Vec<usize>,
    /// Cleaner indices grouped by pseudo label, smallest loss first.
    pub cleaner_by_class: Vec<Vec<usize>>,
    pub per_class_cleaner_counts: Vec<usize>,
    pub split_ratio: f64,
}

impl SplitAssignment {
    pub fn len(&self) -> usize {
        self.cleaner.len() + self.noisier.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-sample membership flag, `true` for cleaner.
    pub fn membership(&self) -> Vec<bool> {
        let mut out = vec![false; self.len()];
        for &i in &self.cleaner {
            out[i] = true;
        }
        out
    }

    /// Fraction of cleaner samples whose pseudo label matches the ground truth.
    pub fn cleaner_precision(&self, pseudo_labels: &[usize], truth: &[Option<usize>]) -> Option<f64> {
        let (hits, total) = self
            .cleaner
            .iter()
            .filter_map(|&i| truth[i].map(|t| (t == pseudo_labels[i]) as usize))
            .fold((0, 0), |(h, n), hit| (h + hit, n + 1));
        (total > 0).then(|| hits as f64 / total as f64)
    }

    /// CSV with header `index,pseudo_label,loss,subset`.
    pub fn write_csv<W: Write>(&self, losses: &[f64], pseudo_labels: &[usize], mut out: W) -> std::io::Result<()> {
        writeln!(out, "index,pseudo_label,loss,subset")?;
        for (i, clean) in self.membership().into_iter().enumerate() {
            let subset = if clean { "cleaner" } else { "noisier" };
            writeln!(out, "{i},{},{},{subset}", pseudo_labels[i], losses[i])?;
        }
        Ok(())
    }
}

/// Number of a class's `n` samples that go to the cleaner subset: `⌈r·n⌉`.
///
/// A relative slack of 1e-9 keeps products such as `0.2 · 5` from rounding up
/// past the exact integer.
pub fn cleaner_quota(n: usize, r: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let exact = r * n as f64;
    ((exact - 1e-9 * exact.max(1.0)).ceil() as usize).clamp(1, n)
}

/// Eval-mode cross-entropy of every sample against its pseudo label.
pub fn per_sample_loss(model: &Classifier, target: &LabeledDataset, pseudo_labels: &[usize]) -> Result<Vec<f64>> {
    if pseudo_labels.len() != target.len() {
        return Err(shape(format!(
            "{} pseudo labels for {} samples",
            pseudo_labels.len(),
            target.len()
        )));
    }
    let probs = model.predict_proba(target.features())?;
    Ok(cross_entropy(&probs, pseudo_labels)?.1)
}

/// Splits each pseudo-label group by loss: the `⌈r·n_c⌉` smallest losses
/// (smaller index first on ties) are cleaner, the rest noisier.
pub fn labelwise_split(losses: &[f64], pseudo_labels: &[usize], num_classes: usize, r: f64) -> Result<SplitAssignment> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(invalid(format!("split ratio {r} must lie in (0, 1]")));
    }
    if losses.len() != pseudo_labels.len() {
        return Err(shape(format!(
            "{} losses for {} labels",
            losses.len(),
            pseudo_labels.len()
        )));
    }
    if losses.iter().any(|l| l.is_nan()) {
        return Err(invalid("losses contain NaN"));
    }
    let mut groups = vec![Vec::new(); num_classes];
    for (i, &y) in pseudo_labels.iter().enumerate() {
        if y >= num_classes {
            return Err(invalid(format!("label {y} out of range for {num_classes} classes")));
        }
        groups[y].push(i);
    }
    let mut cleaner = Vec::new();
    let mut noisier = Vec::new();
    let mut cleaner_by_class = Vec::with_capacity(num_classes);
    for mut group in groups {
        // indices are ascending, so a stable sort keeps the smaller index first on ties
        group.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));
        let keep = cleaner_quota(group.len(), r);
        cleaner.extend_from_slice(&group[..keep]);
        noisier.extend_from_slice(&group[keep..]);
        group.truncate(keep);
        cleaner_by_class.push(group);
    }
    cleaner.sort_unstable();
    noisier.sort_unstable();
    Ok(SplitAssignment {
        cleaner,
        noisier,
        per_class_cleaner_counts: cleaner_by_class.iter().map(Vec::len).collect(),
        cleaner_by_class,
        split_ratio: r,
    })
}
