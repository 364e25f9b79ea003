//! Classification accuracy and rank AUC for a fitted coefficient vector.

use crate::data::Dataset;
use crate::error::{OsmacError, Result};
use crate::glm::sigmoid;
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub predictions: Vec<u8>,
    pub accuracy: f64,
}

/// `ŷ_i = 1` when `p_i(β) > threshold`; ties go to 0.
pub fn classify(beta: &[f64], data: &Dataset, threshold: f64) -> Result<Classification> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(OsmacError::InvalidSpec(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    check_dim(beta, data)?;
    let predictions: Vec<u8> = (0..data.n())
        .map(|i| (sigmoid(linalg::dot(data.row(i), beta)) > threshold) as u8)
        .collect();
    let correct = predictions
        .iter()
        .zip(data.responses())
        .filter(|(a, b)| a == b)
        .count();
    Ok(Classification {
        accuracy: correct as f64 / data.n() as f64,
        predictions,
    })
}

/// Mann-Whitney AUC of the linear scores `x_i^T β`, ties counted as 1/2.
pub fn auc(beta: &[f64], data: &Dataset) -> Result<f64> {
    check_dim(beta, data)?;
    let (n0, n1) = data.class_counts();
    if n0 == 0 || n1 == 0 {
        return Err(OsmacError::DegenerateClasses { n0, n1 });
    }
    let mut scored: Vec<(f64, u8)> = (0..data.n())
        .map(|i| (linalg::dot(data.row(i), beta), data.y(i)))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));

    // sum of midranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j + 1 < scored.len() && scored[j + 1].0 == scored[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let pos = scored[i..=j].iter().filter(|s| s.1 == 1).count();
        rank_sum += midrank * pos as f64;
        i = j + 1;
    }
    let (n0, n1) = (n0 as f64, n1 as f64);
    Ok((rank_sum - n1 * (n1 + 1.0) / 2.0) / (n0 * n1))
}

fn check_dim(beta: &[f64], data: &Dataset) -> Result<()> {
    if beta.len() != data.d() {
        return Err(OsmacError::DimensionMismatch {
            expected: data.d(),
            got: beta.len(),
        });
    }
    Ok(())
}
