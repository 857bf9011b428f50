use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{invalid, Result};
use crate::nn::Matrix;

/// Two-dimensional Gaussian classes on a circle, with the target domain
/// rotated about the origin and then translated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSpec {
    pub num_classes: usize,
    pub samples_per_class_source: usize,
    pub samples_per_class_target: usize,
    pub class_center_radius: f64,
    pub within_class_stddev: f64,
    pub shift_translation: [f64; 2],
    /// Radians, counter-clockwise.
    pub shift_rotation_angle: f64,
    pub seed: u64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            samples_per_class_source: 500,
            samples_per_class_target: 500,
            class_center_radius: 3.0,
            within_class_stddev: 0.7,
            shift_translation: [1.0, 1.0],
            shift_rotation_angle: 0.5,
            seed: 0,
        }
    }
}

impl ShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.samples_per_class_source == 0 || self.samples_per_class_target == 0 {
            return Err(invalid("class and sample counts must be at least 1"));
        }
        if !(self.within_class_stddev > 0.0) || !self.within_class_stddev.is_finite() {
            return Err(invalid("within-class stddev must be positive"));
        }
        let finite = [self.class_center_radius, self.shift_rotation_angle]
            .iter()
            .chain(&self.shift_translation)
            .all(|v| v.is_finite());
        if !finite {
            return Err(invalid("shift parameters must be finite"));
        }
        Ok(())
    }

    /// Class centers, evenly spaced on the circle starting at angle 0.
    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.num_classes)
            .map(|c| {
                let angle = std::f64::consts::TAU * c as f64 / self.num_classes as f64;
                [
                    self.class_center_radius * angle.cos(),
                    self.class_center_radius * angle.sin(),
                ]
            })
            .collect()
    }

    /// Applies the domain shift (rotation, then translation) to a point.
    pub fn shift_point(&self, [x, y]: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.shift_rotation_angle.sin_cos();
        [
            c * x - s * y + self.shift_translation[0],
            s * x + c * y + self.shift_translation[1],
        ]
    }
}

/// Draws the labeled source and target domains. Deterministic in `spec`.
pub fn generate_shifted_gaussians(spec: &ShiftSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.within_class_stddev).expect("validated stddev");
    let centers = spec.centers();
    let mut draw = |per_class: usize, shifted: bool| {
        let mut rows = Vec::with_capacity(per_class * centers.len());
        let mut labels = Vec::with_capacity(per_class * centers.len());
        for (class, center) in centers.iter().enumerate() {
            for _ in 0..per_class {
                let p = [center[0] + noise.sample(&mut rng), center[1] + noise.sample(&mut rng)];
                rows.push(if shifted { spec.shift_point(p) } else { p });
                labels.push(class);
            }
        }
        (rows, labels)
    };
    let (src_rows, src_labels) = draw(spec.samples_per_class_source, false);
    let (tgt_rows, tgt_labels) = draw(spec.samples_per_class_target, true);
    let source = LabeledDataset::labeled(Matrix::from_rows(&src_rows)?, src_labels, spec.num_classes)?;
    let target = LabeledDataset::labeled(Matrix::from_rows(&tgt_rows)?, tgt_labels, spec.num_classes)?;
    Ok((source, target))
}
