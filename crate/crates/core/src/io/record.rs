use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MixtureModel, RigidTransform};
use crate::scene::{classify_components, GroundTruth};

use super::config::Config;
use super::formats::write_text;
use super::normalize::Normalization;

/// Rotation in row-major order and translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&RigidTransform> for TransformRecord {
    fn from(t: &RigidTransform) -> Self {
        let (rotation, translation) = t.to_row_major();
        Self { rotation, translation }
    }
}

impl TransformRecord {
    pub fn to_transform(&self) -> Result<RigidTransform> {
        RigidTransform::from_row_major(&self.rotation, &self.translation)
    }
}

fn to_transforms(records: &[TransformRecord]) -> Result<Vec<RigidTransform>> {
    records.iter().map(TransformRecord::to_transform).collect()
}

/// Counts of component variances per decade, in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaHistogram {
    /// `counts[i]` covers `[10^(first_decade + i), 10^(first_decade + i + 1))`.
    pub first_decade: i32,
    pub counts: Vec<usize>,
}

impl SigmaHistogram {
    pub fn from_variances(variances: &[f64]) -> Self {
        let decades: Vec<i32> = variances
            .iter()
            .filter(|v| **v > 0.0)
            .map(|v| v.log10().floor() as i32)
            .collect();
        let (Some(&lo), Some(&hi)) = (decades.iter().min(), decades.iter().max()) else {
            return Self {
                first_decade: 0,
                counts: Vec::new(),
            };
        };
        let mut counts = vec![0; (hi - lo + 1) as usize];
        for d in decades {
            counts[(d - lo) as usize] += 1;
        }
        Self {
            first_decade: lo,
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSummary {
    pub components: usize,
    pub sigma_histogram: SigmaHistogram,
    /// Components whose variance exceeds the outlier threshold.
    pub rejected: Vec<usize>,
    /// Variance threshold in original units.
    pub threshold: f64,
}

impl MixtureSummary {
    /// `model` must already be in original units.
    pub fn from_model(model: &MixtureModel) -> Self {
        let labels = classify_components(model);
        Self {
            components: model.num_components(),
            sigma_histogram: SigmaHistogram::from_variances(&model.variances),
            rejected: (0..labels.len()).filter(|&k| !labels.is_inlier(k)).collect(),
            threshold: labels.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean Frobenius rotation error against ground truth, when known.
    pub rotation_rmse: Option<f64>,
    /// Degrees, when ground truth is known.
    pub mean_composition_angle: Option<f64>,
    /// Wall-clock time; the only field that varies between identical runs.
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub inputs: Vec<String>,
    pub seed: u64,
    pub config: Config,
    /// Applied to the inputs before registration; transforms below are
    /// already mapped back to original units.
    pub normalization: Normalization,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// One per input, mapping it into the common frame.
    pub transforms: Vec<TransformRecord>,
    /// Absent for runs without a mixture, such as the ICP baseline.
    pub mixture: Option<MixtureSummary>,
    pub metrics: Metrics,
}

impl RunRecord {
    pub fn transforms(&self) -> Result<Vec<RigidTransform>> {
        to_transforms(&self.transforms)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: Self = serde_json::from_str(text)?;
        record.transforms()?;
        Ok(record)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read(path)?)
    }
}

/// Ground truth of a synthetic run in record form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub angles: Vec<f64>,
    /// View-to-model transforms.
    pub transforms: Vec<TransformRecord>,
    pub outlier_labels: Vec<Vec<bool>>,
}

impl From<&GroundTruth> for TruthRecord {
    fn from(g: &GroundTruth) -> Self {
        Self {
            angles: g.angles.clone(),
            transforms: g.transforms.iter().map(TransformRecord::from).collect(),
            outlier_labels: g.outlier_labels.clone(),
        }
    }
}

impl TruthRecord {
    pub fn to_ground_truth(&self) -> Result<GroundTruth> {
        Ok(GroundTruth {
            angles: self.angles.clone(),
            transforms: to_transforms(&self.transforms)?,
            outlier_labels: self.outlier_labels.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        write_text(path, &s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let record: Self = serde_json::from_str(&read(path)?)?;
        record.to_ground_truth()?;
        Ok(record)
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
