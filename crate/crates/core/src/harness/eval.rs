use serde::{Deserialize, Serialize};

use super::model::FoamModel;
use crate::autograd::Tape;
use crate::error::Result;
use crate::hdc::CORRUPTED_INPUT_OP;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_iou: f64,
    pub per_scene_iou: Vec<f64>,
    pub precision: f64,
    pub recall: f64,
}

/// Foreground IoU of a thresholded prediction; two empty masks score 1.
pub fn iou(pred: &[bool], truth: &[bool]) -> f64 {
    let inter = pred.iter().zip(truth).filter(|(&p, &t)| p && t).count();
    let union = pred.iter().zip(truth).filter(|(&p, &t)| p || t).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Logits of one image through the inference path.
pub fn predict(model: &FoamModel, store: &ParamStore<f32>, image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let tape = Tape::new();
    let logits = model.forward(tape.constant(image.clone()), store)?;
    assert!(
        !tape.has_op(CORRUPTED_INPUT_OP),
        "inference must not build the corruption branch"
    );
    Ok(logits.to_tensor())
}

/// Thresholds `sigmoid(logits)` at 0.5 and scores every scene.
pub fn evaluate(model: &FoamModel, store: &ParamStore<f32>, data: &[(Tensor<f32>, Tensor<f32>)]) -> Result<EvalReport> {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    let mut per_scene = Vec::with_capacity(data.len());
    for (image, mask) in data {
        let logits = predict(model, store, image)?;
        let pred: Vec<bool> = logits.data().iter().map(|&z| z > 0.0).collect();
        let truth: Vec<bool> = mask.data().iter().map(|&m| m > 0.5).collect();
        for (&p, &t) in pred.iter().zip(&truth) {
            match (p, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        per_scene.push(iou(&pred, &truth));
    }
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let mean_iou = if per_scene.is_empty() {
        0.0
    } else {
        per_scene.iter().sum::<f64>() / per_scene.len() as f64
    };
    Ok(EvalReport {
        mean_iou,
        per_scene_iou: per_scene,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
    })
}
