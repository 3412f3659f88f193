//! Synthetic shapes dataset and the training loop for the stand-in classifier.
//!
//! Each image is a Voronoi mosaic of softly shaded color cells with one
//! class-specific shape (disc, square, cross, triangle, ring, diamond) painted
//! at a random position, size and color. Pixels are stored on the 8-bit
//! grid so PPM round trips are exact.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::net::{BackwardMode, Gradients, LayerSpec, Network};
use crate::par::Parallelism;
use crate::rng::{self, stage};

pub const SHAPE_NAMES: [&str; 6] = ["disc", "square", "cross", "triangle", "ring", "diamond"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub num_classes: usize,
    pub images_per_class: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            images_per_class: 100,
            height: 64,
            width: 64,
            seed: 1,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > SHAPE_NAMES.len() {
            return Err(Error::Config(format!(
                "num_classes must be in 1..={}, got {}",
                SHAPE_NAMES.len(),
                self.num_classes
            )));
        }
        if self.images_per_class == 0 {
            return Err(Error::Config("images_per_class must be positive".into()));
        }
        if self.height.min(self.width) < 16 {
            return Err(Error::Config(format!(
                "{}x{} is too small to place a shape (minimum 16x16)",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.num_classes * self.images_per_class
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Seed of image `index`; labels cycle through the classes.
    pub fn image_seed(&self, index: usize) -> u64 {
        rng::derive_seed(self.seed, stage::DATASET, index as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
    pub seed: u64,
}

pub fn generate_dataset(cfg: &DatasetConfig, par: Parallelism) -> Result<Vec<Sample>> {
    cfg.validate()?;
    Ok(par.map_range(cfg.len(), |i| {
        let label = i % cfg.num_classes;
        let seed = cfg.image_seed(i);
        Sample {
            image: render_image(cfg.height, cfg.width, label, seed),
            label,
            seed,
        }
    }))
}

fn random_color(rng: &mut rng::Rng) -> [f64; 3] {
    [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]
}

fn color_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Whether `(dy, dx)` (relative to the shape center) lies inside shape `kind`
/// of radius `r`.
fn inside(kind: usize, dy: f64, dx: f64, r: f64) -> bool {
    match kind {
        0 => dy * dy + dx * dx <= r * r,
        1 => dy.abs() <= 0.85 * r && dx.abs() <= 0.85 * r,
        2 => {
            let arm = 0.33 * r;
            (dy.abs() <= arm && dx.abs() <= r) || (dx.abs() <= arm && dy.abs() <= r)
        }
        3 => {
            // upward triangle, apex at -r, base at +0.8r
            let t = (dy + r) / (1.8 * r);
            (0.0..=1.0).contains(&t) && dx.abs() <= t * r
        }
        4 => {
            let d2 = dy * dy + dx * dx;
            d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
        }
        _ => dy.abs() + dx.abs() <= r,
    }
}

pub fn render_image(h: usize, w: usize, label: usize, seed: u64) -> Image {
    let mut rng = rng::seeded(seed);
    // cells vary around one muted base tone; the shape is the only
    // high-contrast object
    let base = [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)];
    let cells = rng.gen_range(10..=14);
    let sites: Vec<(f64, f64, [f64; 3], f64, f64)> = (0..cells)
        .map(|_| {
            let y = rng.gen_range(0.0..h as f64);
            let x = rng.gen_range(0.0..w as f64);
            let color = base.map(|b| b + rng.gen_range(-0.15..0.15));
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let amp = rng.gen_range(0.0..0.06) / h.max(w) as f64;
            (y, x, color, amp * angle.cos(), amp * angle.sin())
        })
        .collect();

    let mut img = Image::filled(3, h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let site = sites
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - fy).powi(2) + (a.1 - fx).powi(2);
                    let db = (b.0 - fy).powi(2) + (b.1 - fx).powi(2);
                    da.total_cmp(&db)
                })
                .expect("at least one site");
            let shade = site.3 * (fy - site.0) + site.4 * (fx - site.1);
            img.set_color(y * w + x, &site.2.map(|v| v + shade));
        }
    }

    let side = h.min(w) as f64;
    let r = rng.gen_range(0.18 * side..0.25 * side);
    let cy = rng.gen_range(r + 1.0..h as f64 - r - 1.0);
    let cx = rng.gen_range(r + 1.0..w as f64 - r - 1.0);
    let mut color = random_color(&mut rng);
    for _ in 0..64 {
        if color_dist(&color, &base) >= 0.55 {
            break;
        }
        color = random_color(&mut rng);
    }
    for p in 0..h * w {
        if inside(label, (p / w) as f64 + 0.5 - cy, (p % w) as f64 + 0.5 - cx, r) {
            img.set_color(p, &color);
        }
    }
    img.quantize();
    img
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 0.003,
            batch_size: 8,
            optimizer: Optimizer::Adam,
            seed: 2,
        }
    }
}

/// Update rule. Both feed their step through [`Network::sgd_step`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Sgd { momentum: f64 },
    /// Adam with the usual constants (0.9, 0.999, 1e-8).
    Adam,
}

struct OptimizerState {
    rule: Optimizer,
    t: i32,
    first: Option<Gradients>,
    second: Option<Gradients>,
}

impl OptimizerState {
    fn new(rule: Optimizer) -> Self {
        Self {
            rule,
            t: 0,
            first: None,
            second: None,
        }
    }

    /// Turns a raw gradient into the step handed to `sgd_step`.
    fn direction(&mut self, grads: Gradients) -> Result<Gradients> {
        self.t += 1;
        match self.rule {
            Optimizer::Sgd { momentum } => {
                let v = match self.first.as_mut() {
                    None => self.first.insert(grads),
                    Some(v) => {
                        v.scale(momentum);
                        v.add(&grads)?;
                        v
                    }
                };
                Ok(v.clone())
            }
            Optimizer::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                let mut sq = grads.clone();
                sq.map(|g| g * g);
                let m = self.first.get_or_insert_with(|| zeroed(&grads));
                m.scale(B1);
                let mut g1 = grads.clone();
                g1.scale(1.0 - B1);
                m.add(&g1)?;
                let v = self.second.get_or_insert_with(|| zeroed(&grads));
                v.scale(B2);
                sq.scale(1.0 - B2);
                v.add(&sq)?;
                let c1 = 1.0 - B1.powi(self.t);
                let c2 = 1.0 - B2.powi(self.t);
                let mut step = m.clone();
                step.zip_map(v, |mi, vi| (mi / c1) / ((vi / c2).sqrt() + EPS))?;
                Ok(step)
            }
        }
    }
}

fn zeroed(g: &Gradients) -> Gradients {
    let mut z = g.clone();
    z.scale(0.0);
    z
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub holdout_accuracy: f64,
    pub epoch_losses: Vec<f64>,
}

/// Small CNN used as the stand-in classifier for `h`×`w` RGB inputs.
///
/// Three conv/ReLU/max-pool stages; the last pool covers the whole remaining
/// feature map (for square inputs), so the dense head sees position-free
/// features.
pub fn default_architecture(h: usize, w: usize, num_classes: usize) -> Vec<LayerSpec> {
    let (h1, w1) = (h / 4 / 2, w / 4 / 2);
    let global = h1.min(w1).max(1);
    let (h2, w2) = (h1 / global, w1 / global);
    vec![
        LayerSpec::Conv2d { in_channels: 3, out_channels: 8, kernel: 3, padding: 1 },
        LayerSpec::Relu,
        LayerSpec::MaxPool2d { size: 4 },
        LayerSpec::Conv2d { in_channels: 8, out_channels: 16, kernel: 3, padding: 1 },
        LayerSpec::Relu,
        LayerSpec::MaxPool2d { size: 2 },
        LayerSpec::Conv2d { in_channels: 16, out_channels: 16, kernel: 3, padding: 1 },
        LayerSpec::Relu,
        LayerSpec::MaxPool2d { size: global },
        LayerSpec::Flatten,
        LayerSpec::Dense { inputs: 16 * h2 * w2, outputs: num_classes },
    ]
}

pub fn accuracy(net: &Network, samples: &[Sample], par: Parallelism) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let hits = par
        .map(samples, |s| net.classify(&s.image.to_tensor()).map(|c| c == s.label))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / samples.len() as f64)
}

/// Mini-batch SGD on softmax cross-entropy. Single-threaded so the update
/// sequence, and hence the weights, are reproducible.
pub fn train(
    net: &mut Network,
    train_set: &[Sample],
    holdout: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("epochs and batch_size must be at least 1".into()));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::Config("learning_rate must be positive".into()));
    }
    if let Optimizer::Sgd { momentum } = cfg.optimizer {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
    }
    let mut optimizer = OptimizerState::new(cfg.optimizer);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = rng::stream(cfg.seed, stage::TRAIN, epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = None;
            for &i in batch {
                let s = &train_set[i];
                let lg = net
                    .loss_and_grad(&s.image.to_tensor(), s.label, BackwardMode::Standard)
                    .map_err(|e| match e {
                        Error::Numeric(m) => Error::Training(format!(
                            "{m} at epoch {epoch}, sample {i}; try a smaller learning rate"
                        )),
                        other => other,
                    })?;
                if !lg.loss.is_finite() {
                    return Err(Error::Training(format!(
                        "loss became {} at epoch {epoch}, sample {i} (label {}); try a smaller learning rate",
                        lg.loss, s.label
                    )));
                }
                total += lg.loss;
                match acc.as_mut() {
                    None => acc = Some(lg.grad_params),
                    Some(a) => a.add(&lg.grad_params)?,
                }
            }
            let mut grads = acc.expect("non-empty batch");
            grads.scale(1.0 / batch.len() as f64);
            let step = optimizer.direction(grads)?;
            net.sgd_step(&step, cfg.learning_rate)?;
        }
        let mean = total / train_set.len() as f64;
        log::debug!("epoch {epoch}: mean loss {mean:.4}");
        epoch_losses.push(mean);
    }
    net.clear_caches();
    Ok(TrainReport {
        epochs: cfg.epochs,
        final_loss: *epoch_losses.last().expect("epochs >= 1"),
        train_accuracy: accuracy(net, train_set, Parallelism::Sequential)?,
        holdout_accuracy: accuracy(net, holdout, Parallelism::Sequential)?,
        epoch_losses,
    })
}
