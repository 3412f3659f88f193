//! Layer-stack classifier with exact reverse-mode gradients.

mod layer;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use layer::{Layer, LayerSpec, Params};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// How ReLU layers treat the incoming gradient during backward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackwardMode {
    /// Exact gradient.
    Standard,
    /// Pass only components whose forward input and incoming gradient are
    /// both positive.
    Guided,
}

/// Per-layer parameter gradients; `None` for parameterless layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<Params>>,
}

#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub scores: Tensor,
    pub grad_input: Tensor,
    pub grad_params: Gradients,
}

/// On-disk model: architecture plus per-layer flat parameter arrays
/// (row-major weight followed by bias; empty for parameterless layers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFile {
    pub architecture: Vec<LayerSpec>,
    pub weights: Vec<Vec<f64>>,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: [usize; 3],
    num_classes: usize,
    seed: u64,
}

/// Checks that the stack composes and ends in `num_classes` scores.
fn check_architecture(
    specs: &[LayerSpec],
    input_shape: [usize; 3],
    num_classes: usize,
) -> Result<()> {
    if num_classes == 0 {
        return Err(Error::Config("num_classes must be positive".into()));
    }
    if input_shape.contains(&0) {
        return Err(Error::Config(format!(
            "input shape must be positive, got {input_shape:?}"
        )));
    }
    let mut shape = input_shape.to_vec();
    for spec in specs {
        shape = spec.output_shape(&shape)?;
    }
    if shape.iter().product::<usize>() != num_classes || shape.len() != 1 {
        return Err(Error::Config(format!(
            "network produces shape {shape:?}, expected [{num_classes}]"
        )));
    }
    Ok(())
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Softmax cross-entropy of `scores` against `label`, and its gradient
/// with respect to the scores.
pub fn cross_entropy(scores: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
    let loss = m + z.ln() - scores[label];
    let mut grad = softmax(scores);
    grad[label] -= 1.0;
    (loss, grad)
}

impl Network {
    /// Builds a freshly initialized network (He-normal weights, zero biases).
    pub fn new(
        architecture: &[LayerSpec],
        input_shape: [usize; 3],
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        check_architecture(architecture, input_shape, num_classes)?;
        let mut rng = rng::stream(seed, rng::stage::INIT, 0);
        let layers = architecture
            .iter()
            .map(|s| Layer::initialized(s.clone(), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers,
            input_shape,
            num_classes,
            seed,
        })
    }

    pub fn from_weight_file(file: WeightFile) -> Result<Self> {
        let WeightFile {
            architecture,
            weights,
            input_shape,
            num_classes,
            seed,
        } = file;
        check_architecture(&architecture, input_shape, num_classes)?;
        if weights.len() != architecture.len() {
            return Err(Error::Config(format!(
                "{} weight arrays for {} layers",
                weights.len(),
                architecture.len()
            )));
        }
        let mut layers = Vec::with_capacity(architecture.len());
        for (spec, flat) in architecture.into_iter().zip(weights) {
            if flat.len() != spec.param_count() {
                return Err(Error::Config(format!(
                    "{spec:?}: expected {} parameters, got {}",
                    spec.param_count(),
                    flat.len()
                )));
            }
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("{spec:?}: non-finite parameter")));
            }
            let params = match spec.param_shapes() {
                Some((ws, bs)) => {
                    let nw: usize = ws.iter().product();
                    let mut flat = flat;
                    let bias = flat.split_off(nw);
                    Some(Params {
                        weight: Tensor::new(ws, flat)?,
                        bias: Tensor::new(bs, bias)?,
                    })
                }
                None => None,
            };
            layers.push(Layer::new(spec, params)?);
        }
        Ok(Self {
            layers,
            input_shape,
            num_classes,
            seed,
        })
    }

    pub fn to_weight_file(&self) -> WeightFile {
        WeightFile {
            architecture: self.layers.iter().map(|l| l.spec().clone()).collect(),
            weights: self
                .layers
                .iter()
                .map(|l| match l.params() {
                    Some(p) => p.weight.data().iter().chain(p.bias.data()).copied().collect(),
                    None => Vec::new(),
                })
                .collect(),
            input_shape: self.input_shape,
            num_classes: self.num_classes,
            seed: self.seed,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: WeightFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::from_weight_file(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_weight_file()).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::Shape {
                expected: self.input_shape.to_vec(),
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.num_classes {
            return Err(Error::Input(format!(
                "label {label} out of range for {} classes",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Pre-softmax class scores; caches activations for a later backward.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut act = x.clone();
        for layer in &mut self.layers {
            act = layer.forward(act)?;
        }
        Ok(act)
    }

    /// Same scores as [`forward`](Self::forward) without touching the caches.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut act = x.clone();
        for layer in &self.layers {
            act = layer.infer(&act)?;
        }
        Ok(act)
    }

    /// Runs layers `range` on an intermediate activation.
    pub fn run_layers(&self, range: std::ops::Range<usize>, activation: Tensor) -> Result<Tensor> {
        let mut act = activation;
        for layer in self.layers.get(range).unwrap_or(&[]) {
            act = layer.infer(&act)?;
        }
        Ok(act)
    }

    /// Runs layers `start..` on an intermediate activation.
    pub fn predict_from(&self, start: usize, activation: Tensor) -> Result<Tensor> {
        self.run_layers(start..self.layers.len(), activation)
    }

    /// Bias-free output of layer `index` when it is Conv2d or Dense.
    pub fn linear_part(&self, index: usize, x: &Tensor) -> Result<Option<Tensor>> {
        match self.layers.get(index) {
            Some(l) => l.linear_part(x),
            None => Ok(None),
        }
    }

    pub fn classify(&self, x: &Tensor) -> Result<usize> {
        Ok(self.predict(x)?.argmax())
    }

    /// Backpropagates `grad_scores` through the cached pass.
    pub fn backward(
        &self,
        grad_scores: &Tensor,
        mode: BackwardMode,
        want_params: bool,
    ) -> Result<(Tensor, Gradients)> {
        if grad_scores.len() != self.num_classes {
            return Err(Error::Shape {
                expected: vec![self.num_classes],
                actual: grad_scores.shape().to_vec(),
            });
        }
        let mut grad = grad_scores.clone();
        let mut params = vec![None; self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (g, p) = layer.backward(&grad, mode, want_params)?;
            grad = g;
            params[i] = p;
        }
        if !grad.is_finite() {
            return Err(Error::Numeric("non-finite input gradient".into()));
        }
        Ok((grad, Gradients { layers: params }))
    }

    /// Softmax cross-entropy loss of `x` against `label` with input and
    /// parameter gradients.
    pub fn loss_and_grad(&mut self, x: &Tensor, label: usize, mode: BackwardMode) -> Result<LossGrad> {
        self.loss_grad_inner(x, label, mode, true)
    }

    /// Like [`loss_and_grad`](Self::loss_and_grad) but skips parameter gradients.
    pub fn loss_and_input_grad(
        &mut self,
        x: &Tensor,
        label: usize,
        mode: BackwardMode,
    ) -> Result<LossGrad> {
        self.loss_grad_inner(x, label, mode, false)
    }

    fn loss_grad_inner(
        &mut self,
        x: &Tensor,
        label: usize,
        mode: BackwardMode,
        want_params: bool,
    ) -> Result<LossGrad> {
        self.check_label(label)?;
        let scores = self.forward(x)?;
        let (loss, dscores) = cross_entropy(scores.data(), label);
        let (grad_input, grad_params) =
            self.backward(&Tensor::from_vec(dscores), mode, want_params)?;
        Ok(LossGrad {
            loss,
            scores,
            grad_input,
            grad_params,
        })
    }

    /// Gradient of the pre-softmax score of `class` with respect to `x`.
    pub fn score_grad(&mut self, x: &Tensor, class: usize, mode: BackwardMode) -> Result<(Tensor, Tensor)> {
        self.check_label(class)?;
        let scores = self.forward(x)?;
        let mut onehot = vec![0.0; self.num_classes];
        onehot[class] = 1.0;
        let (grad, _) = self.backward(&Tensor::from_vec(onehot), mode, false)?;
        Ok((scores, grad))
    }

    /// In-place `p <- p - lr * grad` for every parameter.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::Input(format!("learning rate must be non-negative, got {lr}")));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Internal(format!(
                "{} gradient entries for {} layers",
                grads.layers.len(),
                self.layers.len()
            )));
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            match (layer.params_mut(), g) {
                (Some(p), Some(g)) => {
                    p.weight
                        .sub_scaled(&g.weight, lr)
                        .map_err(|e| Error::Internal(e.to_string()))?;
                    p.bias
                        .sub_scaled(&g.bias, lr)
                        .map_err(|e| Error::Internal(e.to_string()))?;
                }
                (None, None) => {}
                (Some(_), None) => {}
                (None, Some(_)) => {
                    return Err(Error::Internal("gradient for parameterless layer".into()))
                }
            }
        }
        Ok(())
    }

    pub fn clear_caches(&mut self) {
        for l in &mut self.layers {
            l.clear_cache();
        }
    }
}

impl Gradients {
    /// Accumulates `other` into `self`.
    pub fn add(&mut self, other: &Gradients) -> Result<()> {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a, b) {
                (Some(a), Some(b)) => {
                    a.weight.add_assign(&b.weight)?;
                    a.bias.add_assign(&b.bias)?;
                }
                (a @ None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn map(&mut self, f: impl Fn(f64) -> f64) {
        for p in self.layers.iter_mut().flatten() {
            p.weight.data_mut().iter_mut().for_each(|v| *v = f(*v));
            p.bias.data_mut().iter_mut().for_each(|v| *v = f(*v));
        }
    }

    /// `self[i] = f(self[i], other[i])` over every parameter.
    pub fn zip_map(&mut self, other: &Gradients, f: impl Fn(f64, f64) -> f64) -> Result<()> {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a, b) {
                (Some(a), Some(b)) => {
                    if a.weight.shape() != b.weight.shape() || a.bias.shape() != b.bias.shape() {
                        return Err(Error::Internal("gradient shapes differ".into()));
                    }
                    for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                        *x = f(*x, *y);
                    }
                    for (x, y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                        *x = f(*x, *y);
                    }
                }
                (None, None) => {}
                _ => return Err(Error::Internal("gradient layouts differ".into())),
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for p in self.layers.iter_mut().flatten() {
            p.weight.data_mut().iter_mut().for_each(|v| *v *= factor);
            p.bias.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
}
