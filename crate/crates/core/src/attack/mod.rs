//! Targeted Basic Iterative Method confined to a pixel mask.
//!
//! Each iteration descends the cross-entropy toward the target label by one
//! signed step on the masked pixels only:
//! `x' <- clip(x' - step_eps * sign(grad) * mask)`. Pixels outside the mask are
//! never written, so they stay bit-identical to the original.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, PixelMask};
use crate::net::{cross_entropy, BackwardMode, Network};
use crate::par::Parallelism;
use crate::segmentation::{self, SegmentParams};

/// Minimum loss decrease that counts as progress.
pub const PROGRESS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub target_label: usize,
    pub step_eps: f64,
    pub max_iters: usize,
    /// Iterations without progress before the attempt is declared stalled.
    pub patience: usize,
    /// Optional bound on the per-channel deviation from the original.
    #[serde(default)]
    pub ball_eps: Option<f64>,
    /// Snap attacked pixels to the 8-bit grid after every step so the stored
    /// PPM is exactly the image that was classified.
    #[serde(default = "default_true")]
    pub quantize: bool,
}

fn default_true() -> bool {
    true
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            target_label: 0,
            step_eps: 1.0 / 255.0,
            max_iters: 200,
            patience: 25,
            ball_eps: None,
            quantize: true,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_eps > 0.0) || !self.step_eps.is_finite() {
            return Err(Error::Config(format!("step_eps must be positive, got {}", self.step_eps)));
        }
        if self.max_iters == 0 || self.patience == 0 {
            return Err(Error::Config("max_iters and patience must be at least 1".into()));
        }
        if let Some(b) = self.ball_eps {
            if !(b > 0.0) {
                return Err(Error::Config(format!("ball_eps must be positive, got {b}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackStatus {
    Success,
    Stalled,
    MaxIters,
    AlreadyTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialRecord {
    pub original: Image,
    pub adversarial: Image,
    pub mask: PixelMask,
    pub original_label: usize,
    pub adversarial_label: usize,
    pub target_label: usize,
    pub iterations: usize,
    pub status: AttackStatus,
    /// Cross-entropy toward the target at the returned adversarial image.
    pub target_loss: f64,
}

impl AdversarialRecord {
    /// Re-checks the record invariants against `net`; returns the first
    /// violation found.
    pub fn verify(&self, net: &Network) -> std::result::Result<(), String> {
        let (orig, adv) = (self.original.data(), self.adversarial.data());
        if orig.len() != adv.len() {
            return Err("original and adversarial sizes differ".into());
        }
        let n = self.mask.len();
        for (i, (&a, &o)) in adv.iter().zip(orig).enumerate() {
            if !(0.0..=1.0).contains(&a) {
                return Err(format!("value {a} at {i} leaves [0, 1]"));
            }
            if !self.mask.get(i % n) && a.to_bits() != o.to_bits() {
                return Err(format!("off-mask pixel {} changed", i % n));
            }
        }
        let predicted = net
            .classify(&self.adversarial.to_tensor())
            .map_err(|e| e.to_string())?;
        let consistent = match self.status {
            AttackStatus::Success | AttackStatus::AlreadyTarget => predicted == self.target_label,
            AttackStatus::Stalled | AttackStatus::MaxIters => predicted != self.target_label,
        };
        if !consistent {
            return Err(format!(
                "status {:?} but network predicts {predicted} (target {})",
                self.status, self.target_label
            ));
        }
        Ok(())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn bim_attack(
    net: &Network,
    x: &Image,
    mask: &PixelMask,
    cfg: &AttackConfig,
) -> Result<AdversarialRecord> {
    cfg.validate()?;
    if mask.count() == 0 {
        return Err(Error::Input("attack mask is empty".into()));
    }
    if mask.height() != x.height() || mask.width() != x.width() {
        return Err(Error::Input("attack mask does not match image size".into()));
    }
    if cfg.target_label >= net.num_classes() {
        return Err(Error::Input(format!(
            "target label {} out of range",
            cfg.target_label
        )));
    }
    let mut net = net.clone();
    let original_scores = net.predict(&x.to_tensor())?;
    let original_label = original_scores.argmax();
    let record = |adv: Image, label, iterations, status, loss| AdversarialRecord {
        original: x.clone(),
        adversarial: adv,
        mask: mask.clone(),
        original_label,
        adversarial_label: label,
        target_label: cfg.target_label,
        iterations,
        status,
        target_loss: loss,
    };
    if original_label == cfg.target_label {
        let loss = cross_entropy(original_scores.data(), cfg.target_label).0;
        return Ok(record(x.clone(), original_label, 0, AttackStatus::AlreadyTarget, loss));
    }

    let n = x.pixels();
    let channels = x.channels();
    let bounds: Vec<(f64, f64)> = x
        .data()
        .iter()
        .map(|&o| {
            let (mut lo, mut hi) = match cfg.ball_eps {
                Some(b) => ((o - b).max(0.0), (o + b).min(1.0)),
                None => (0.0, 1.0),
            };
            if cfg.quantize {
                lo = (lo * 255.0).ceil() / 255.0;
                hi = (hi * 255.0).floor() / 255.0;
                if lo > hi {
                    lo = o;
                    hi = o;
                }
            }
            (lo, hi)
        })
        .collect();

    let mut adv = x.clone();
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut it = 0;
    loop {
        let lg = net
            .loss_and_input_grad(&adv.to_tensor(), cfg.target_label, BackwardMode::Standard)
            .map_err(|e| match e {
                Error::Numeric(m) => Error::Internal(format!("attack gradient: {m}")),
                other => other,
            })?;
        let label = lg.scores.argmax();
        if label == cfg.target_label {
            return Ok(record(adv, label, it, AttackStatus::Success, lg.loss));
        }
        if lg.loss < best - PROGRESS_TOL {
            best = lg.loss;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                return Ok(record(adv, label, it, AttackStatus::Stalled, lg.loss));
            }
        }
        if it == cfg.max_iters {
            return Ok(record(adv, label, it, AttackStatus::MaxIters, lg.loss));
        }

        let grad = lg.grad_input.data();
        let data = adv.data_mut();
        for p in mask.indices() {
            for c in 0..channels {
                let i = c * n + p;
                let mut v = data[i] - cfg.step_eps * sign(grad[i]);
                if cfg.quantize {
                    v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
                }
                data[i] = v.clamp(bounds[i].0, bounds[i].1);
            }
        }
        it += 1;
    }
}

/// One (image, region) attack attempt.
#[derive(Debug, Clone)]
pub struct Attempt {
    pub image_index: usize,
    /// 0 for the largest region.
    pub region_rank: usize,
    pub outcome: std::result::Result<AdversarialRecord, String>,
}

#[derive(Debug, Clone, Default)]
pub struct ExampleBatch {
    pub attempts: Vec<Attempt>,
    /// Images the network already assigns to the target label.
    pub skipped_images: Vec<usize>,
}

impl ExampleBatch {
    pub fn successes(&self) -> impl Iterator<Item = (&Attempt, &AdversarialRecord)> {
        self.attempts.iter().filter_map(|a| match &a.outcome {
            Ok(r) if r.status == AttackStatus::Success => Some((a, r)),
            _ => None,
        })
    }

    pub fn success_fraction(&self) -> f64 {
        if self.attempts.is_empty() {
            return 0.0;
        }
        self.successes().count() as f64 / self.attempts.len() as f64
    }
}

/// Attacks each of the `m` largest attack-preset segments of every image,
/// always starting from the original image. A failing attempt is recorded
/// and never aborts the batch.
pub fn generate_examples(
    net: &Network,
    images: &[Image],
    seg_params: &SegmentParams,
    cfg: &AttackConfig,
    m: usize,
    par: Parallelism,
) -> Result<ExampleBatch> {
    cfg.validate()?;
    seg_params.validate()?;
    if m == 0 {
        return Err(Error::Input("number of regions must be at least 1".into()));
    }
    let per_image = par.map_range(images.len(), |i| -> (Vec<Attempt>, bool) {
        let img = &images[i];
        match net.classify(&img.to_tensor()) {
            Ok(label) if label == cfg.target_label => return (Vec::new(), true),
            Ok(_) => {}
            Err(e) => {
                return (
                    vec![Attempt { image_index: i, region_rank: 0, outcome: Err(e.to_string()) }],
                    false,
                )
            }
        }
        let regions = match segmentation::segment(img, seg_params)
            .and_then(|seg| segmentation::largest_regions(&seg, m))
        {
            Ok(r) => r,
            Err(e) => {
                return (
                    vec![Attempt { image_index: i, region_rank: 0, outcome: Err(e.to_string()) }],
                    false,
                )
            }
        };
        let attempts = regions
            .iter()
            .enumerate()
            .map(|(rank, mask)| Attempt {
                image_index: i,
                region_rank: rank,
                outcome: bim_attack(net, img, mask, cfg).map_err(|e| e.to_string()),
            })
            .collect();
        (attempts, false)
    });
    let mut batch = ExampleBatch::default();
    for (i, (attempts, skipped)) in per_image.into_iter().enumerate() {
        if skipped {
            batch.skipped_images.push(i);
        }
        batch.attempts.extend(attempts);
    }
    Ok(batch)
}
