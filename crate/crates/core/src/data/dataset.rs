use std::io::Write;

use crate::error::{invalid, shape, Result};
use crate::nn::Matrix;

/// Feature rows with optional integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<Option<usize>>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<Option<usize>>, num_classes: usize) -> Result<Self> {
        if features.rows() == 0 {
            return Err(invalid("dataset must contain at least one sample"));
        }
        if labels.len() != features.rows() {
            return Err(shape(format!(
                "{} labels for {} samples",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(bad) = labels.iter().flatten().find(|&&y| y >= num_classes) {
            return Err(invalid(format!("label {bad} out of range for {num_classes} classes")));
        }
        features.ensure_finite("features")?;
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    /// Fully labeled dataset.
    pub fn labeled(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        Self::new(features, labels.into_iter().map(Some).collect(), num_classes)
    }

    pub fn unlabeled(features: Matrix, num_classes: usize) -> Result<Self> {
        let n = features.rows();
        Self::new(features, vec![None; n], num_classes)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// All labels, or an error if any sample is unlabeled.
    pub fn known_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, y)| y.ok_or_else(|| invalid(format!("sample {i} is unlabeled"))))
            .collect()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.labels.iter().all(Option::is_some)
    }

    /// Same features with every label removed.
    pub fn without_labels(&self) -> Self {
        Self {
            features: self.features.clone(),
            labels: vec![None; self.len()],
            num_classes: self.num_classes,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(invalid(format!("index {bad} out of range")));
        }
        Self::new(
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
        )
    }

    /// Rescales every feature to zero mean and unit variance using this
    /// dataset's own statistics; constant features are only centered.
    pub fn standardize(&mut self) {
        let means = self.features.column_means();
        let vars = self.features.column_variances(&means);
        let scale: Vec<f64> = vars
            .iter()
            .map(|&v| if v > 1e-12 { 1.0 / v.sqrt() } else { 1.0 })
            .collect();
        for i in 0..self.features.rows() {
            for (j, x) in self.features.row_mut(i).iter_mut().enumerate() {
                *x = (*x - means[j]) * scale[j];
            }
        }
    }

    /// CSV with header `feature_0..feature_{d-1},label`; unlabeled rows get -1.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = (0..self.dim()).map(|j| format!("feature_{j}")).collect();
        writeln!(out, "{},label", header.join(","))?;
        for (row, label) in self.features.iter_rows().zip(&self.labels) {
            for x in row {
                write!(out, "{x},")?;
            }
            match label {
                Some(y) => writeln!(out, "{y}")?,
                None => writeln!(out, "-1")?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let m = Matrix::zeros(2, 2);
        assert!(LabeledDataset::labeled(m.clone(), vec![0, 2], 2).is_err());
        assert!(LabeledDataset::labeled(m.clone(), vec![0], 2).is_err());
        assert!(LabeledDataset::labeled(Matrix::zeros(0, 2), vec![], 2).is_err());
        let nan = Matrix::from_rows(&[[f64::NAN, 0.0]]).unwrap();
        assert!(LabeledDataset::labeled(nan, vec![0], 2).is_err());
        let d = LabeledDataset::new(m, vec![Some(1), None], 2).unwrap();
        assert!(d.known_labels().is_err());
    }

    #[test]
    fn standardize_centers_and_scales() {
        let m = Matrix::from_rows(&[[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]]).unwrap();
        let mut d = LabeledDataset::unlabeled(m, 2).unwrap();
        d.standardize();
        let means = d.features().column_means();
        let vars = d.features().column_variances(&means);
        assert!(means.iter().all(|m| m.abs() < 1e-12));
        assert!((vars[0] - 1.0).abs() < 1e-12);
        assert_eq!(vars[1], 0.0);
    }

    #[test]
    fn csv_layout() {
        let m = Matrix::from_rows(&[[1.5, -2.0], [0.0, 1.0]]).unwrap();
        let d = LabeledDataset::new(m, vec![Some(1), None], 3).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "feature_0,feature_1,label\n1.5,-2,1\n0,1,-1\n"
        );
    }
}
