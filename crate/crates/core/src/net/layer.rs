use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::BackwardMode;

/// Serializable description of one layer; parameters live elsewhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Stride-1 cross-correlation with symmetric zero padding.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    Relu,
    /// Non-overlapping pooling window of `size`×`size`.
    MaxPool2d { size: usize },
    Flatten,
    /// Fully connected; accepts any input whose element count is `inputs`.
    Dense { inputs: usize, outputs: usize },
}

impl LayerSpec {
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |why: String| Err(Error::Config(format!("{self:?}: {why}")));
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => {
                if kernel == 0 || in_channels == 0 || out_channels == 0 {
                    return bad("zero-sized convolution".into());
                }
                let [c, h, w] = match input {
                    [c, h, w] => [*c, *h, *w],
                    _ => return bad(format!("expects a 3-d input, got {input:?}")),
                };
                if c != in_channels {
                    return bad(format!("expects {in_channels} channels, got {c}"));
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return bad(format!("kernel larger than padded input {input:?}"));
                }
                Ok(vec![
                    out_channels,
                    h + 2 * padding + 1 - kernel,
                    w + 2 * padding + 1 - kernel,
                ])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool2d { size } => {
                let [c, h, w] = match input {
                    [c, h, w] => [*c, *h, *w],
                    _ => return bad(format!("expects a 3-d input, got {input:?}")),
                };
                if size == 0 || h < size || w < size {
                    return bad(format!("window does not fit input {input:?}"));
                }
                Ok(vec![c, h / size, w / size])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { inputs, outputs } => {
                let n: usize = input.iter().product();
                if n != inputs || outputs == 0 {
                    return bad(format!("expects {inputs} inputs, got shape {input:?}"));
                }
                Ok(vec![outputs])
            }
        }
    }

    /// `(weight shape, bias shape)` for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            )),
            LayerSpec::Dense { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Params {
    fn zeros_like(&self) -> Params {
        Params {
            weight: Tensor::zeros(self.weight.shape()),
            bias: Tensor::zeros(self.bias.shape()),
        }
    }
}

/// One layer plus whatever it cached during the last `forward`.
#[derive(Debug, Clone)]
pub struct Layer {
    spec: LayerSpec,
    params: Option<Params>,
    input: Option<Tensor>,
    argmax: Vec<usize>,
}

impl Layer {
    pub(crate) fn new(spec: LayerSpec, params: Option<Params>) -> Result<Self> {
        match (spec.param_shapes(), &params) {
            (None, None) => {}
            (Some((ws, bs)), Some(p)) => {
                if p.weight.shape() != ws.as_slice() {
                    return Err(Error::Shape {
                        expected: ws,
                        actual: p.weight.shape().to_vec(),
                    });
                }
                if p.bias.shape() != bs.as_slice() {
                    return Err(Error::Shape {
                        expected: bs,
                        actual: p.bias.shape().to_vec(),
                    });
                }
            }
            _ => {
                return Err(Error::Config(format!(
                    "{spec:?}: parameters do not match layer kind"
                )))
            }
        }
        Ok(Self {
            spec,
            params,
            input: None,
            argmax: Vec::new(),
        })
    }

    /// He-normal weights, zero bias.
    pub(crate) fn initialized(spec: LayerSpec, rng: &mut Rng) -> Result<Self> {
        let params = spec.param_shapes().map(|(ws, bs)| {
            let fan_in: usize = ws[1..].iter().product();
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let n: usize = ws.iter().product();
            let weight: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
            Params {
                weight: Tensor::new(ws, weight).expect("consistent shape"),
                bias: Tensor::zeros(&bs),
            }
        });
        Self::new(spec, params)
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn params(&self) -> Option<&Params> {
        self.params.as_ref()
    }

    pub fn params_mut(&mut self) -> Option<&mut Params> {
        self.params.as_mut()
    }

    pub(crate) fn clear_cache(&mut self) {
        self.input = None;
        self.argmax.clear();
    }

    pub(crate) fn forward(&mut self, x: Tensor) -> Result<Tensor> {
        let (out, argmax) = self.compute(&x)?;
        self.argmax = argmax;
        self.input = Some(x);
        Ok(out)
    }

    pub(crate) fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.compute(x)?.0)
    }

    fn compute(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let out_shape = self.spec.output_shape(x.shape()).map_err(|_| Error::Shape {
            expected: vec![],
            actual: x.shape().to_vec(),
        })?;
        let mut argmax = Vec::new();
        let out = match self.spec {
            LayerSpec::Conv2d { padding, .. } => {
                let p = self.params.as_ref().expect("validated");
                conv_forward(x, &p.weight, &p.bias, padding, &out_shape)
            }
            LayerSpec::Relu => {
                let data = x.data().iter().map(|&v| v.max(0.0)).collect();
                Tensor::new(out_shape, data)?
            }
            LayerSpec::MaxPool2d { size } => {
                let (out, idx) = pool_forward(x, size, &out_shape);
                argmax = idx;
                out
            }
            LayerSpec::Flatten => x.clone().reshape(out_shape)?,
            LayerSpec::Dense { inputs, outputs } => {
                let p = self.params.as_ref().expect("validated");
                let w = p.weight.data();
                let xs = x.data();
                let data = (0..outputs)
                    .map(|o| {
                        let row = &w[o * inputs..(o + 1) * inputs];
                        p.bias.data()[o] + dot(row, xs)
                    })
                    .collect();
                Tensor::new(out_shape, data)?
            }
        };
        Ok((out, argmax))
    }

    /// Output of a Conv2d/Dense layer without its bias term; `None` for
    /// other kinds.
    pub(crate) fn linear_part(&self, x: &Tensor) -> Result<Option<Tensor>> {
        let p = match (&self.spec, &self.params) {
            (LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. }, Some(p)) => p,
            _ => return Ok(None),
        };
        let zero = Params {
            weight: p.weight.clone(),
            bias: Tensor::zeros(p.bias.shape()),
        };
        let unbiased = Layer {
            spec: self.spec.clone(),
            params: Some(zero),
            input: None,
            argmax: Vec::new(),
        };
        Ok(Some(unbiased.infer(x)?))
    }

    /// Propagates `grad_out` back through the cached forward pass.
    pub(crate) fn backward(
        &self,
        grad_out: &Tensor,
        mode: BackwardMode,
        want_params: bool,
    ) -> Result<(Tensor, Option<Params>)> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::Internal("backward called before forward".into()))?;
        let mut param_grad = None;
        let grad_in = match self.spec {
            LayerSpec::Conv2d { padding, .. } => {
                let p = self.params.as_ref().expect("validated");
                let mut g = want_params.then(|| p.zeros_like());
                let gi = conv_backward(x, &p.weight, grad_out, padding, g.as_mut());
                param_grad = g;
                gi
            }
            LayerSpec::Relu => {
                let data = x
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&xi, &gi)| match mode {
                        BackwardMode::Standard if xi > 0.0 => gi,
                        BackwardMode::Guided if xi > 0.0 && gi > 0.0 => gi,
                        _ => 0.0,
                    })
                    .collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
            LayerSpec::MaxPool2d { .. } => {
                let mut gi = Tensor::zeros(x.shape());
                let d = gi.data_mut();
                for (&src, &g) in self.argmax.iter().zip(grad_out.data()) {
                    d[src] += g;
                }
                gi
            }
            LayerSpec::Flatten => grad_out.clone().reshape(x.shape().to_vec())?,
            LayerSpec::Dense { inputs, outputs } => {
                let p = self.params.as_ref().expect("validated");
                let w = p.weight.data();
                let g = grad_out.data();
                let mut gi = vec![0.0; inputs];
                for o in 0..outputs {
                    axpy(g[o], &w[o * inputs..(o + 1) * inputs], &mut gi);
                }
                if want_params {
                    let mut pg = p.zeros_like();
                    let xs = x.data();
                    let wd = pg.weight.data_mut();
                    for o in 0..outputs {
                        axpy(g[o], xs, &mut wd[o * inputs..(o + 1) * inputs]);
                    }
                    pg.bias.data_mut().copy_from_slice(g);
                    param_grad = Some(pg);
                }
                Tensor::new(x.shape().to_vec(), gi)?
            }
        };
        Ok((grad_in, param_grad))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Valid `(out_lo, out_hi)` range of output columns for kernel offset `k`,
/// i.e. those with `0 <= o + k - pad < len`.
#[inline]
fn valid_range(k: usize, pad: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (len + pad).saturating_sub(k).min(out_len);
    (lo, hi.max(lo))
}

fn conv_forward(x: &Tensor, w: &Tensor, b: &Tensor, pad: usize, out_shape: &[usize]) -> Tensor {
    let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let k = w.shape()[2];
    let xs = x.data();
    let ws = w.data();
    let mut out = vec![0.0; c_out * oh * ow];
    for oc in 0..c_out {
        let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        plane.fill(b.data()[oc]);
        for ic in 0..c_in {
            let input = &xs[ic * h * wd..(ic + 1) * h * wd];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(ky, pad, h, oh);
                for kx in 0..k {
                    let wv = ws[((oc * c_in + ic) * k + ky) * k + kx];
                    let (ox_lo, ox_hi) = valid_range(kx, pad, wd, ow);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let ix_lo = ox_lo + kx - pad;
                    let span = ox_hi - ox_lo;
                    for oy in oy_lo..oy_hi {
                        let iy = oy + ky - pad;
                        let src = &input[iy * wd + ix_lo..iy * wd + ix_lo + span];
                        let dst = &mut plane[oy * ow + ox_lo..oy * ow + ox_hi];
                        axpy(wv, src, dst);
                    }
                }
            }
        }
    }
    Tensor::new(out_shape.to_vec(), out).expect("conv output shape")
}

fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    pad: usize,
    mut grads: Option<&mut Params>,
) -> Tensor {
    let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, oh, ow) = (
        grad_out.shape()[0],
        grad_out.shape()[1],
        grad_out.shape()[2],
    );
    let k = w.shape()[2];
    let xs = x.data();
    let ws = w.data();
    let gs = grad_out.data();
    let mut gi = vec![0.0; c_in * h * wd];
    for oc in 0..c_out {
        let gplane = &gs[oc * oh * ow..(oc + 1) * oh * ow];
        if let Some(p) = grads.as_deref_mut() {
            p.bias.data_mut()[oc] = gplane.iter().sum();
        }
        for ic in 0..c_in {
            let input = &xs[ic * h * wd..(ic + 1) * h * wd];
            let gin = &mut gi[ic * h * wd..(ic + 1) * h * wd];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(ky, pad, h, oh);
                for kx in 0..k {
                    let widx = ((oc * c_in + ic) * k + ky) * k + kx;
                    let wv = ws[widx];
                    let (ox_lo, ox_hi) = valid_range(kx, pad, wd, ow);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let ix_lo = ox_lo + kx - pad;
                    let span = ox_hi - ox_lo;
                    let mut acc = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy + ky - pad;
                        let g = &gplane[oy * ow + ox_lo..oy * ow + ox_hi];
                        axpy(wv, g, &mut gin[iy * wd + ix_lo..iy * wd + ix_lo + span]);
                        if grads.is_some() {
                            acc += dot(g, &input[iy * wd + ix_lo..iy * wd + ix_lo + span]);
                        }
                    }
                    if let Some(p) = grads.as_deref_mut() {
                        p.weight.data_mut()[widx] = acc;
                    }
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), gi).expect("conv input shape")
}

/// Max pooling; ties go to the first maximal element in row-major order.
fn pool_forward(x: &Tensor, size: usize, out_shape: &[usize]) -> (Tensor, Vec<usize>) {
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let (c, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let xs = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = ch * h * w + (oy * size) * w + ox * size;
                for dy in 0..size {
                    let row = ch * h * w + (oy * size + dy) * w + ox * size;
                    for j in row..row + size {
                        if xs[j] > xs[best] {
                            best = j;
                        }
                    }
                }
                out.push(xs[best]);
                idx.push(best);
            }
        }
    }
    (
        Tensor::new(out_shape.to_vec(), out).expect("pool output shape"),
        idx,
    )
}
