use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{median, MixtureModel, PointSet};

/// Components split by the variance threshold `2 * median(variances)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub outlier: Vec<bool>,
    pub threshold: f64,
}

impl Classification {
    pub fn is_inlier(&self, k: usize) -> bool {
        !self.outlier[k]
    }

    pub fn rejected(&self) -> usize {
        self.outlier.iter().filter(|o| **o).count()
    }

    pub fn len(&self) -> usize {
        self.outlier.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outlier.is_empty()
    }
}

/// Components with a variance above twice the median attracted scattered
/// points and are labeled outliers.
pub fn classify_components(model: &MixtureModel) -> Classification {
    let mut v = model.variances.clone();
    let threshold = 2.0 * median(&mut v);
    Classification {
        outlier: model.variances.iter().map(|s| *s > threshold).collect(),
        threshold,
    }
}

/// Inlier means as a point set.
pub fn export_scene_model(model: &MixtureModel, labels: &Classification) -> Result<PointSet> {
    if labels.len() != model.num_components() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} components",
            labels.len(),
            model.num_components()
        )));
    }
    let means: Vec<_> = model
        .means
        .iter()
        .enumerate()
        .filter(|(k, _)| labels.is_inlier(*k))
        .map(|(_, m)| *m)
        .collect();
    if means.is_empty() {
        return Err(Error::EmptyModel);
    }
    PointSet::new(0, means)
}
