//! Superpixel LIME: perturb superpixels on and off, fit a weighted linear
//! surrogate to the black box, rank superpixels by positive coefficient.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ridge::weighted_ridge;
use crate::error::{Error, Result};
use crate::image::{Image, PixelMask};
use crate::net::{softmax, Network};
use crate::par::Parallelism;
use crate::rng::{stage, stream};
use crate::segmentation::{segment, SegmentMap, SegmentParams};
use crate::tensor::Tensor;

/// Coefficients at or below this are treated as non-positive.
pub const POSITIVE_CUTOFF: f64 = 1e-9;

/// What an "off" superpixel is replaced with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimeBaseline {
    #[default]
    SuperpixelMean,
    GlobalMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeConfig {
    pub num_samples: usize,
    pub kernel_width: f64,
    pub ridge_lambda: f64,
    pub on_probability: f64,
    pub baseline: LimeBaseline,
    pub seed: u64,
    pub segmentation: SegmentParams,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            num_samples: 1000,
            kernel_width: 0.25,
            ridge_lambda: 1e-3,
            on_probability: 0.5,
            baseline: LimeBaseline::SuperpixelMean,
            seed: 4,
            segmentation: SegmentParams::lime(),
        }
    }
}

impl LimeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples < 2 {
            return Err(Error::Config("lime.num_samples must be at least 2".into()));
        }
        if !(self.kernel_width > 0.0) || !self.kernel_width.is_finite() {
            return Err(Error::Config("lime.kernel_width must be positive".into()));
        }
        if !(self.ridge_lambda >= 0.0) || !self.ridge_lambda.is_finite() {
            return Err(Error::Config("lime.ridge_lambda must be non-negative".into()));
        }
        if !(self.on_probability > 0.0 && self.on_probability < 1.0) {
            return Err(Error::Config("lime.on_probability must lie in (0, 1)".into()));
        }
        self.segmentation.validate()
    }
}

/// Fitted surrogate `g(z) = intercept + coefficients·z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl Surrogate {
    /// Features with positive coefficient, strongest first; ties by id.
    pub fn positive_ranking(&self) -> Vec<(usize, f64)> {
        let mut ranked: Vec<(usize, f64)> = self
            .coefficients
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, c)| *c > POSITIVE_CUTOFF)
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }
}

/// Binary perturbation design; row 0 is the unperturbed instance.
pub fn sample_design(features: usize, cfg: &LimeConfig, index: u64) -> Vec<Vec<bool>> {
    let mut rng = stream(cfg.seed, stage::LIME, index);
    let mut rows = Vec::with_capacity(cfg.num_samples);
    rows.push(vec![true; features]);
    for _ in 1..cfg.num_samples {
        rows.push((0..features).map(|_| rng.gen::<f64>() < cfg.on_probability).collect());
    }
    rows
}

/// Proximity weight of a sample with `on` of `total` features kept.
pub fn kernel_weight(on: usize, total: usize, width: f64) -> f64 {
    let d = 1.0 - on as f64 / total as f64;
    (-(d * d) / (width * width)).exp()
}

/// Fits a surrogate to `black_box` over `features` binary features.
pub fn fit_surrogate<F>(
    features: usize,
    cfg: &LimeConfig,
    index: u64,
    black_box: F,
    par: Parallelism,
) -> Result<Surrogate>
where
    F: Fn(&[bool]) -> Result<f64> + Sync + Send,
{
    cfg.validate()?;
    if features == 0 {
        return Err(Error::Input("surrogate needs at least one feature".into()));
    }
    let rows = sample_design(features, cfg, index);
    let y = par.map(&rows, |z| black_box(z)).into_iter().collect::<Result<Vec<f64>>>()?;
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("black box returned {v}")));
    }
    let w: Vec<f64> = rows
        .iter()
        .map(|z| kernel_weight(z.iter().filter(|&&b| b).count(), features, cfg.kernel_width))
        .collect();
    let beta = weighted_ridge(&rows, &y, &w, cfg.ridge_lambda)?;
    Ok(Surrogate { intercept: beta[0], coefficients: beta[1..].to_vec() })
}

/// LIME output for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperpixelRanking {
    pub segments: SegmentMap,
    pub explained_class: usize,
    pub surrogate: Surrogate,
    /// Positive-coefficient superpixels, strongest first.
    pub ranked: Vec<(usize, f64)>,
}

/// Union of the `n` top-ranked superpixels (fewer if fewer are positive).
pub fn partial_union(ranking: &SuperpixelRanking, n: usize) -> Result<PixelMask> {
    if n == 0 {
        return Err(Error::Input("partial union needs n >= 1".into()));
    }
    if ranking.ranked.is_empty() {
        return Err(Error::Input("LIME ranking has no positive superpixel".into()));
    }
    let seg = &ranking.segments;
    let keep: Vec<bool> = {
        let mut keep = vec![false; seg.num_segments()];
        for &(id, _) in ranking.ranked.iter().take(n) {
            keep[id] = true;
        }
        keep
    };
    Ok(PixelMask::from_indices(
        seg.height(),
        seg.width(),
        (0..seg.labels().len()).filter(|&p| keep[seg.label(p)]),
    ))
}

/// Replacement image used for "off" superpixels.
pub fn fill_image(x: &Image, seg: &SegmentMap, baseline: LimeBaseline) -> Image {
    let (c, n) = (x.channels(), x.pixels());
    let mut fill = x.clone();
    match baseline {
        LimeBaseline::GlobalMean => {
            for ch in 0..c {
                let m = x.data()[ch * n..(ch + 1) * n].iter().sum::<f64>() / n as f64;
                fill.data_mut()[ch * n..(ch + 1) * n].fill(m);
            }
        }
        LimeBaseline::SuperpixelMean => {
            let s = seg.num_segments();
            let mut sums = vec![0.0; s * c];
            for p in 0..n {
                let id = seg.label(p);
                for ch in 0..c {
                    sums[id * c + ch] += x.data()[ch * n + p];
                }
            }
            for p in 0..n {
                let id = seg.label(p);
                for ch in 0..c {
                    fill.data_mut()[ch * n + p] = sums[id * c + ch] / seg.sizes()[id] as f64;
                }
            }
        }
    }
    fill
}

/// Composites `x` on the "on" superpixels and `fill` elsewhere.
pub fn render(x: &Image, fill: &Image, seg: &SegmentMap, z: &[bool]) -> Image {
    let (c, n) = (x.channels(), x.pixels());
    let mut out = fill.clone();
    for p in (0..n).filter(|&p| z[seg.label(p)]) {
        for ch in 0..c {
            out.data_mut()[ch * n + p] = x.data()[ch * n + p];
        }
    }
    out
}

/// Evaluates the class probability of perturbed images.
///
/// When the first layer is linear, its response to a composite is the
/// response to the fill image plus the responses to each kept superpixel's
/// difference from the fill, so those are computed once and summed per sample.
pub struct Renderer<'a> {
    net: &'a Network,
    x: &'a Image,
    seg: &'a SegmentMap,
    fill: Image,
    class: usize,
    fast: Option<FirstLayer>,
}

struct FirstLayer {
    base: Tensor,
    deltas: Vec<Vec<(usize, f64)>>,
}

impl<'a> Renderer<'a> {
    pub fn new(net: &'a Network, x: &'a Image, seg: &'a SegmentMap, baseline: LimeBaseline, class: usize) -> Result<Self> {
        let fill = fill_image(x, seg, baseline);
        let mut r = Self { net, x, seg, fill, class, fast: None };
        r.fast = r.first_layer()?;
        Ok(r)
    }

    fn first_layer(&self) -> Result<Option<FirstLayer>> {
        let fill_t = self.fill.to_tensor();
        if self.net.linear_part(0, &fill_t)?.is_none() {
            return Ok(None);
        }
        let base = self.net.run_layers(0..1, fill_t)?;
        let (c, n) = (self.x.channels(), self.x.pixels());
        let mut deltas = Vec::with_capacity(self.seg.num_segments());
        for id in 0..self.seg.num_segments() {
            let mut d = Tensor::zeros(&[c, self.x.height(), self.x.width()]);
            for p in (0..n).filter(|&p| self.seg.label(p) == id) {
                for ch in 0..c {
                    d.data_mut()[ch * n + p] = self.x.data()[ch * n + p] - self.fill.data()[ch * n + p];
                }
            }
            let resp = self.net.linear_part(0, &d)?.expect("first layer is linear");
            deltas.push(resp.data().iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect());
        }
        Ok(Some(FirstLayer { base, deltas }))
    }

    pub fn accelerated(&self) -> bool {
        self.fast.is_some()
    }

    /// Probability of the explained class for the composite `z`.
    pub fn probability(&self, z: &[bool]) -> Result<f64> {
        let scores = match &self.fast {
            Some(f) => {
                let mut act = f.base.clone();
                let data = act.data_mut();
                for (d, _) in f.deltas.iter().zip(z).filter(|(_, &on)| on) {
                    for &(i, v) in d {
                        data[i] += v;
                    }
                }
                self.net.predict_from(1, act)?
            }
            None => self.probability_slow_scores(z)?,
        };
        Ok(softmax(scores.data())[self.class])
    }

    /// Same quantity via a full render and forward pass.
    pub fn probability_slow(&self, z: &[bool]) -> Result<f64> {
        Ok(softmax(self.probability_slow_scores(z)?.data())[self.class])
    }

    fn probability_slow_scores(&self, z: &[bool]) -> Result<Tensor> {
        self.net.predict(&render(self.x, &self.fill, self.seg, z).to_tensor())
    }
}

/// Explains the network's predicted class on `x`. `index` selects the
/// sampling stream so every example gets its own perturbations.
pub fn lime_explain(net: &Network, x: &Image, cfg: &LimeConfig, index: u64, par: Parallelism) -> Result<SuperpixelRanking> {
    cfg.validate()?;
    let segments = segment(x, &cfg.segmentation)?;
    if segments.num_segments() < 2 {
        return Err(Error::Input(format!(
            "LIME needs at least 2 superpixels, segmentation produced {}",
            segments.num_segments()
        )));
    }
    let explained_class = net.classify(&x.to_tensor())?;
    let renderer = Renderer::new(net, x, &segments, cfg.baseline, explained_class)?;
    let surrogate = fit_surrogate(segments.num_segments(), cfg, index, |z| renderer.probability(z), par)?;
    let ranked = surrogate.positive_ranking();
    Ok(SuperpixelRanking { segments, explained_class, surrogate, ranked })
}
