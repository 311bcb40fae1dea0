use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::{ForwardOutput, OutputGrad};
use super::ModelError;

/// Supervision for one contract: tool score and tool feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub s: f64,
    pub f: Vec<f64>,
}

/// Weighted terms plus their raw mean squared errors.
/// `total == score + aux + feature`, summed in that order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub score: f64,
    pub aux: f64,
    pub feature: f64,
    pub score_mse: f64,
    pub aux_mse: f64,
    /// Sum over features of each feature's MSE.
    pub feature_mse: f64,
}

/// Joint loss over a batch and its gradient with respect to each output.
pub fn joint_loss(
    outputs: &[ForwardOutput],
    targets: &[&Target],
    cfg: &ModelConfig,
) -> Result<(LossBreakdown, Vec<OutputGrad>), ModelError> {
    if outputs.len() != targets.len() || outputs.is_empty() {
        return Err(ModelError::Shape(format!("{} outputs for {} targets", outputs.len(), targets.len())));
    }
    let b = outputs.len() as f64;
    let k = cfg.k_features;
    let mut sq_s = 0.0;
    let mut sq_aux = 0.0;
    let mut sq_f = 0.0;
    let mut grads = Vec::with_capacity(outputs.len());
    for (o, t) in outputs.iter().zip(targets) {
        if t.f.len() != k || o.f_hat.len() != k {
            return Err(ModelError::Shape(format!("feature vectors must hold {k} values")));
        }
        let finite = t.s.is_finite()
            && o.s_hat.is_finite()
            && o.s_tool_hat.is_finite()
            && t.f.iter().chain(&o.f_hat).all(|x| x.is_finite());
        if !finite {
            return Err(ModelError::Numeric("non-finite value in loss inputs".into()));
        }
        let es = o.s_hat - t.s;
        let ea = o.s_tool_hat - t.s;
        sq_s += es * es;
        sq_aux += ea * ea;
        let mut d_f = Vec::with_capacity(k);
        for (fh, f) in o.f_hat.iter().zip(&t.f) {
            let e = fh - f;
            sq_f += e * e;
            d_f.push(2.0 * cfg.lambda_feature * e / b);
        }
        grads.push(OutputGrad {
            d_s_hat: 2.0 * cfg.lambda_s * es / b,
            d_s_tool: 2.0 * cfg.lambda_aux * ea / b,
            d_f,
        });
    }
    let score_mse = sq_s / b;
    let aux_mse = sq_aux / b;
    let feature_mse = sq_f / b;
    let score = cfg.lambda_s * score_mse;
    let aux = cfg.lambda_aux * aux_mse;
    let feature = cfg.lambda_feature * feature_mse;
    Ok((
        LossBreakdown {
            total: score + aux + feature,
            score,
            aux,
            feature,
            score_mse,
            aux_mse,
            feature_mse,
        },
        grads,
    ))
}
