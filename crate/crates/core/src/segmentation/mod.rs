//! Graph-based segmentation (Felzenszwalb–Huttenlocher) over the 8-connected
//! pixel grid.
//!
//! Edges are weighted by Euclidean RGB distance and processed in ascending
//! order; two components merge when the joining edge is no heavier than
//! `min(Int(C1) + k/|C1|, Int(C2) + k/|C2|)`, `Int` being the heaviest edge
//! already inside a component. A second pass folds components smaller than
//! `min_size` into the neighbor across their cheapest boundary edge.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, PixelMask};
use crate::pnm::{self, GrayMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    /// Scale of the merge threshold, in `[0, 1]` color units.
    pub k: f64,
    pub min_size: usize,
    /// Gaussian pre-smoothing; 0 disables it.
    #[serde(default)]
    pub sigma: f64,
}

impl SegmentParams {
    /// Preset for picking attack regions.
    pub fn attack() -> Self {
        Self {
            k: 300.0 / (255.0 * 255.0),
            min_size: 20,
            sigma: 0.0,
        }
    }

    /// Preset for LIME superpixels. Deliberately coarser than the attack
    /// preset and smoothed, so superpixels never line up exactly with the
    /// attacked regions.
    pub fn lime() -> Self {
        Self {
            k: 1.0,
            min_size: 40,
            sigma: 0.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) || !self.k.is_finite() {
            return Err(Error::Input(format!("segmentation k must be positive, got {}", self.k)));
        }
        if self.min_size == 0 {
            return Err(Error::Input("segmentation min_size must be at least 1".into()));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Input(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Per-pixel region labels; ids are contiguous from 0 in order of first
/// appearance (row-major).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    sizes: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentMeta {
    height: usize,
    width: usize,
    num_segments: usize,
    sizes: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    params: Option<SegmentParams>,
}

impl SegmentMap {
    /// Builds a map from raw labels, renumbering them contiguously.
    pub fn from_labels(height: usize, width: usize, raw: &[usize]) -> Result<Self> {
        if raw.len() != height * width || raw.is_empty() {
            return Err(Error::Input(format!(
                "{height}x{width} map needs {} labels, got {}",
                height * width,
                raw.len()
            )));
        }
        let mut remap = std::collections::HashMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        let mut sizes = Vec::new();
        for &r in raw {
            let next = remap.len();
            let id = *remap.entry(r).or_insert(next);
            if id == sizes.len() {
                sizes.push(0);
            }
            sizes[id] += 1;
            labels.push(id as u32);
        }
        Ok(Self {
            height,
            width,
            labels,
            sizes,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_segments(&self) -> usize {
        self.sizes.len()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, p: usize) -> usize {
        self.labels[p] as usize
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn mask(&self, id: usize) -> PixelMask {
        PixelMask::from_indices(
            self.height,
            self.width,
            self.labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l as usize == id)
                .map(|(i, _)| i),
        )
    }

    /// Writes `<stem>.pgm` (16-bit labels) and `<stem>.json` (metadata).
    pub fn save(&self, dir: &Path, stem: &str, params: Option<SegmentParams>) -> Result<()> {
        let map = GrayMap {
            width: self.width,
            height: self.height,
            maxval: 65535,
            samples: self.labels.iter().map(|&l| l as u16).collect(),
        };
        if self.num_segments() > 65536 {
            return Err(Error::Input("too many segments for a 16-bit map".into()));
        }
        pnm::write_pgm(&dir.join(format!("{stem}.pgm")), &map)?;
        let meta = SegmentMeta {
            height: self.height,
            width: self.width,
            num_segments: self.num_segments(),
            sizes: self.sizes.clone(),
            params,
        };
        let path = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let pgm_path = dir.join(format!("{stem}.pgm"));
        let map = pnm::read_pgm(&pgm_path)?;
        let raw: Vec<usize> = map.samples.iter().map(|&s| s as usize).collect();
        let seg = Self::from_labels(map.height, map.width, &raw)?;
        if seg.labels.iter().zip(&map.samples).any(|(&a, &b)| a as u16 != b) {
            return Err(Error::format(pgm_path, "labels are not in canonical order"));
        }
        Ok(seg)
    }
}

struct DisjointSets {
    parent: Vec<usize>,
    rank: Vec<u8>,
    size: Vec<usize>,
    internal: Vec<f64>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn join(&mut self, a: usize, b: usize, weight: f64) {
        let (hi, lo) = if self.rank[a] >= self.rank[b] { (a, b) } else { (b, a) };
        if self.rank[a] == self.rank[b] {
            self.rank[hi] += 1;
        }
        self.parent[lo] = hi;
        self.size[hi] += self.size[lo];
        self.internal[hi] = self.internal[hi].max(self.internal[lo]).max(weight);
    }
}

#[derive(Clone, Copy)]
struct Edge {
    a: u32,
    b: u32,
    w: f64,
}

fn smooth(img: &Image, sigma: f64) -> Image {
    let radius = (4.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let (c, h, w) = (img.channels(), img.height() as isize, img.width() as isize);
    let clamp = |v: isize, hi: isize| v.clamp(0, hi - 1) as usize;
    let mut tmp = img.clone();
    let mut out = img.clone();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * img.get(ch, y as usize, clamp(x + i as isize - radius, w)))
                    .sum();
                tmp.set(ch, y as usize, x as usize, v);
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * tmp.get(ch, clamp(y + i as isize - radius, h), x as usize))
                    .sum();
                out.set(ch, y as usize, x as usize, v);
            }
        }
    }
    out
}

/// 8-connected edges in row-major order of their first endpoint.
fn grid_edges(img: &Image) -> Vec<Edge> {
    let (h, w) = (img.height(), img.width());
    let n = h * w;
    let data = img.data();
    let c = img.channels();
    let dist = |p: usize, q: usize| -> f64 {
        (0..c)
            .map(|ch| {
                let d = data[ch * n + p] - data[ch * n + q];
                d * d
            })
            .sum::<f64>()
            .sqrt()
    };
    let mut edges = Vec::with_capacity(4 * n);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let mut push = |q: usize| {
                edges.push(Edge {
                    a: p as u32,
                    b: q as u32,
                    w: dist(p, q),
                })
            };
            if x + 1 < w {
                push(p + 1);
            }
            if y + 1 < h {
                if x > 0 {
                    push(p + w - 1);
                }
                push(p + w);
                if x + 1 < w {
                    push(p + w + 1);
                }
            }
        }
    }
    edges
}

pub fn segment(img: &Image, params: &SegmentParams) -> Result<SegmentMap> {
    params.validate()?;
    let smoothed;
    let src = if params.sigma > 0.0 {
        smoothed = smooth(img, params.sigma);
        &smoothed
    } else {
        img
    };
    let (h, w) = (img.height(), img.width());
    let mut edges = grid_edges(src);
    // stable: equal weights keep generation (lexicographic) order
    edges.sort_by(|a, b| a.w.total_cmp(&b.w));

    let mut sets = DisjointSets::new(h * w);
    for e in &edges {
        let a = sets.find(e.a as usize);
        let b = sets.find(e.b as usize);
        if a == b {
            continue;
        }
        let ta = sets.internal[a] + params.k / sets.size[a] as f64;
        let tb = sets.internal[b] + params.k / sets.size[b] as f64;
        if e.w <= ta.min(tb) {
            sets.join(a, b, e.w);
        }
    }

    loop {
        let mut merged = false;
        for e in &edges {
            let a = sets.find(e.a as usize);
            let b = sets.find(e.b as usize);
            if a != b && (sets.size[a] < params.min_size || sets.size[b] < params.min_size) {
                sets.join(a, b, e.w);
                merged = true;
            }
        }
        if !merged {
            break;
        }
    }

    let raw: Vec<usize> = (0..h * w).map(|p| sets.find(p)).collect();
    SegmentMap::from_labels(h, w, &raw)
}

/// Masks of the `m` largest segments, largest first; equal sizes go to the
/// smaller id.
pub fn largest_regions(seg: &SegmentMap, m: usize) -> Result<Vec<PixelMask>> {
    if m == 0 {
        return Err(Error::Input("number of regions must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..seg.num_segments()).collect();
    order.sort_by(|&a, &b| seg.sizes()[b].cmp(&seg.sizes()[a]).then(a.cmp(&b)));
    Ok(order.into_iter().take(m).map(|id| seg.mask(id)).collect())
}

#[cfg(test)]
mod tests;
