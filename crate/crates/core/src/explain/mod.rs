//! The three explainers under test and the helpers that turn their output
//! into pixel masks.

pub mod lime;
pub mod ridge;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, PixelMask};
use crate::net::{BackwardMode, Network};

pub use lime::{lime_explain, partial_union, LimeBaseline, LimeConfig, SuperpixelRanking};

/// Non-negative per-pixel influence, channels already aggregated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelScores {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl PixelScores {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Input("score map size does not match dimensions".into()));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Input("pixel scores must be finite and non-negative".into()));
        }
        Ok(Self { height, width, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Clamps negative input gradients to zero and sums the rest over channels.
pub fn aggregate_positive(grad: &[f64], channels: usize, height: usize, width: usize) -> PixelScores {
    let n = height * width;
    let mut values = vec![0.0; n];
    for c in 0..channels {
        for (v, g) in values.iter_mut().zip(&grad[c * n..(c + 1) * n]) {
            *v += g.max(0.0);
        }
    }
    PixelScores { height, width, values }
}

/// Input gradient of the predicted class's pre-softmax score, post-processed
/// by [`aggregate_positive`].
pub fn gradient_scores(net: &Network, x: &Image, mode: BackwardMode) -> Result<PixelScores> {
    let mut net = net.clone();
    let t = x.to_tensor();
    let class = net.predict(&t)?.argmax();
    let (_, grad) = net.score_grad(&t, class, mode)?;
    Ok(aggregate_positive(grad.data(), x.channels(), x.height(), x.width()))
}

/// Classic salience: plain gradient.
pub fn salience(net: &Network, x: &Image) -> Result<PixelScores> {
    gradient_scores(net, x, BackwardMode::Standard)
}

/// Guided backpropagation: ReLUs pass only positive gradient through
/// positive activations.
pub fn guided_backprop(net: &Network, x: &Image) -> Result<PixelScores> {
    gradient_scores(net, x, BackwardMode::Guided)
}

/// The `budget` highest-scoring pixels; ties go to the earlier pixel in
/// row-major order.
pub fn pixel_budget_mask(scores: &PixelScores, budget: usize) -> Result<PixelMask> {
    if budget == 0 || budget > scores.len() {
        return Err(Error::Input(format!(
            "pixel budget {budget} outside 1..={}",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores.values[b].total_cmp(&scores.values[a]).then(a.cmp(&b)));
    Ok(PixelMask::from_indices(
        scores.height,
        scores.width,
        order.into_iter().take(budget),
    ))
}
