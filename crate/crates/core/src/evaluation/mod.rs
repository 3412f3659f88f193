//! Overlap metrics against the attacked region, budget-matched comparison of
//! the explainers, and mean-rank aggregation.

use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{partial_union, pixel_budget_mask, PixelScores, SuperpixelRanking};
use crate::image::PixelMask;
use crate::rng::{stage, stream};

/// Largest superpixel count whose partial union is evaluated.
pub const MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lime,
    Guided,
    Salience,
    Random,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Lime, Method::Guided, Method::Salience, Method::Random];
    /// The methods that are ranked against each other.
    pub const EXPLAINERS: [Method; 3] = [Method::Lime, Method::Guided, Method::Salience];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lime => "lime",
            Method::Guided => "guided",
            Method::Salience => "salience",
            Method::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown method {s:?}")))
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `|P ∩ C| / |P ∪ C|`.
pub fn jaccard(p: &PixelMask, c: &PixelMask) -> Result<f64> {
    if c.count() == 0 {
        return Err(Error::Input("jaccard needs a nonempty reference mask".into()));
    }
    let inter = p.intersection_count(c)?;
    let union = p.union_count(c)?;
    Ok(inter as f64 / union as f64)
}

/// `1 - Hamming(P, C) / N`.
pub fn hamming_likeness(p: &PixelMask, c: &PixelMask) -> Result<f64> {
    let d = p.hamming(c)?;
    Ok(1.0 - d as f64 / p.len() as f64)
}

/// Ranks where larger values are better: 1 is best, ties share the mean of
/// the positions they occupy.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|v| {
            let better = values.iter().filter(|o| *o > v).count();
            let equal = values.iter().filter(|o| *o == v).count();
            better as f64 + (equal as f64 + 1.0) / 2.0
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub jaccard: f64,
    pub hamming: f64,
    /// `None` for the random baseline, which is not ranked.
    pub rank_j: Option<f64>,
    pub rank_h: Option<f64>,
}

/// One `(example, n)` comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub example_id: usize,
    pub n: usize,
    pub budget: usize,
    /// Indexed like [`Method::ALL`].
    pub scores: [MethodScore; 4],
}

impl EvalRecord {
    pub fn score(&self, m: Method) -> &MethodScore {
        &self.scores[m.index()]
    }
}

/// Explanations of one adversarial image.
pub struct Explanations<'a> {
    pub lime: &'a SuperpixelRanking,
    pub guided: &'a PixelScores,
    pub salience: &'a PixelScores,
}

/// Uniformly random mask with exactly `budget` pixels.
pub fn random_mask(height: usize, width: usize, budget: usize, seed: u64, example_id: usize, n: usize) -> PixelMask {
    let mut rng = stream(seed, stage::RANDOM_BASELINE, ((example_id as u64) << 16) | n as u64);
    PixelMask::from_indices(height, width, sample(&mut rng, height * width, budget))
}

/// Compares the explainers at `n = 1..=MAX_N` superpixels' worth of pixels
/// against the attacked region `truth`.
pub fn evaluate_example(
    example_id: usize,
    truth: &PixelMask,
    ex: &Explanations<'_>,
    seed: u64,
) -> Result<Vec<EvalRecord>> {
    if ex.lime.ranked.is_empty() {
        return Err(Error::Input(format!("example {example_id}: LIME ranked no superpixel positively")));
    }
    let (h, w) = (truth.height(), truth.width());
    let mut out = Vec::with_capacity(MAX_N);
    for n in 1..=MAX_N {
        let p_lime = partial_union(ex.lime, n)?;
        let budget = p_lime.count();
        let masks = [
            p_lime,
            pixel_budget_mask(ex.guided, budget)?,
            pixel_budget_mask(ex.salience, budget)?,
            random_mask(h, w, budget, seed, example_id, n),
        ];
        let mut j = [0.0; 4];
        let mut hm = [0.0; 4];
        for (i, m) in masks.iter().enumerate() {
            j[i] = jaccard(m, truth)?;
            hm[i] = hamming_likeness(m, truth)?;
        }
        let rj = average_ranks(&j[..3]);
        let rh = average_ranks(&hm[..3]);
        let score = |i: usize| MethodScore {
            jaccard: j[i],
            hamming: hm[i],
            rank_j: rj.get(i).copied(),
            rank_h: rh.get(i).copied(),
        };
        out.push(EvalRecord { example_id, n, budget, scores: [score(0), score(1), score(2), score(3)] });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_rank_jaccard: Option<f64>,
    pub mean_rank_hamming: Option<f64>,
    pub mean_jaccard: f64,
    pub mean_hamming: f64,
    /// Mean over examples of the best Jaccard across n.
    pub mean_best_jaccard: f64,
    pub best_jaccard_std_error: f64,
}

/// Whether an explainer's best-n Jaccard beats the random baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomGate {
    pub method: Method,
    /// Mean per-example difference of best-n Jaccard, explainer minus random.
    pub mean_difference: f64,
    pub std_error: f64,
    /// `mean_difference / std_error`.
    pub z: f64,
    pub passed: bool,
}

pub const GATE_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub examples: usize,
    pub records: usize,
    pub methods: Vec<MethodSummary>,
    pub random_gate: Vec<RandomGate>,
    /// Mean ranks order lime < guided < salience under Jaccard.
    pub ordering_jaccard: bool,
    pub ordering_hamming: bool,
    pub config_fingerprint: String,
}

impl SummaryTable {
    pub fn method(&self, m: Method) -> &MethodSummary {
        &self.methods[m.index()]
    }

    /// Plain-text rendering of the mean-rank table.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "examples: {}  comparisons per method: {}\n\n{:<10} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
            self.examples, self.records, "method", "rank J", "rank H", "mean J", "mean H", "best-n J"
        );
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        for m in &self.methods {
            s += &format!(
                "{:<10} {:>10} {:>10} {:>10.4} {:>10.4} {:>10.4}\n",
                m.method.name(),
                opt(m.mean_rank_jaccard),
                opt(m.mean_rank_hamming),
                m.mean_jaccard,
                m.mean_hamming,
                m.mean_best_jaccard
            );
        }
        s += "\nbest-n Jaccard vs random (paired):\n";
        for g in &self.random_gate {
            s += &format!(
                "{:<10} diff {:.4}  se {:.4}  z {:.1}  {}\n",
                g.method.name(),
                g.mean_difference,
                g.std_error,
                g.z,
                if g.passed { "pass" } else { "FAIL" }
            );
        }
        let yn = |b: bool| if b { "yes" } else { "no" };
        s += &format!(
            "\nordering lime < guided < salience: jaccard {}, hamming {}\nconfig fingerprint: {}\n",
            yn(self.ordering_jaccard),
            yn(self.ordering_hamming),
            self.config_fingerprint
        );
        s
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard error of the mean; zero for fewer than two values.
fn std_error(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

/// Best Jaccard over n for every example, in first-appearance order.
pub fn best_jaccard(records: &[EvalRecord], m: Method) -> Vec<f64> {
    let mut ids: Vec<usize> = Vec::new();
    let mut best: Vec<f64> = Vec::new();
    for r in records {
        let v = r.score(m).jaccard;
        match ids.iter().position(|&i| i == r.example_id) {
            Some(k) => best[k] = best[k].max(v),
            None => {
                ids.push(r.example_id);
                best.push(v);
            }
        }
    }
    best
}

/// Mean ranks and the random-baseline gate over all records.
pub fn aggregate(records: &[EvalRecord], config_fingerprint: &str) -> Result<SummaryTable> {
    if records.is_empty() {
        return Err(Error::Input("no evaluation records to aggregate".into()));
    }
    let random_best = best_jaccard(records, Method::Random);
    let collect = |f: &dyn Fn(&EvalRecord) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = records.iter().map(f).collect();
        v.map(|v| mean(&v))
    };
    let mut methods = Vec::new();
    let mut random_gate = Vec::new();
    for m in Method::ALL {
        let best = best_jaccard(records, m);
        methods.push(MethodSummary {
            method: m,
            mean_rank_jaccard: collect(&|r| r.score(m).rank_j),
            mean_rank_hamming: collect(&|r| r.score(m).rank_h),
            mean_jaccard: collect(&|r| Some(r.score(m).jaccard)).unwrap_or(0.0),
            mean_hamming: collect(&|r| Some(r.score(m).hamming)).unwrap_or(0.0),
            mean_best_jaccard: mean(&best),
            best_jaccard_std_error: std_error(&best),
        });
        if m != Method::Random {
            let diff: Vec<f64> = best.iter().zip(&random_best).map(|(a, b)| a - b).collect();
            let (d, se) = (mean(&diff), std_error(&diff));
            let z = if se > 0.0 { d / se } else if d > 0.0 { f64::INFINITY } else { 0.0 };
            random_gate.push(RandomGate { method: m, mean_difference: d, std_error: se, z, passed: z >= GATE_SIGMAS });
        }
    }
    let ordered = |pick: fn(&MethodSummary) -> Option<f64>| {
        let r: Vec<f64> = Method::EXPLAINERS.iter().map(|m| pick(&methods[m.index()]).unwrap_or(f64::NAN)).collect();
        r[0] < r[1] && r[1] < r[2]
    };
    Ok(SummaryTable {
        examples: random_best.len(),
        records: records.len(),
        ordering_jaccard: ordered(|m| m.mean_rank_jaccard),
        ordering_hamming: ordered(|m| m.mean_rank_hamming),
        methods,
        random_gate,
        config_fingerprint: config_fingerprint.to_string(),
    })
}

/// One CSV line: a method's result at one `(example, n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub example_id: usize,
    pub n: usize,
    pub budget: usize,
    pub method: Method,
    pub jaccard: f64,
    pub hamming: f64,
    pub rank_j: Option<f64>,
    pub rank_h: Option<f64>,
}

pub fn write_csv(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for r in records {
        for m in Method::ALL {
            let s = r.score(m);
            w.serialize(CsvRow {
                example_id: r.example_id,
                n: r.n,
                budget: r.budget,
                method: m,
                jaccard: s.jaccard,
                hamming: s.hamming,
                rank_j: s.rank_j,
                rank_h: s.rank_h,
            })
            .map_err(|e| Error::format(path, e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads records written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut out: Vec<EvalRecord> = Vec::new();
    let blank = MethodScore { jaccard: f64::NAN, hamming: f64::NAN, rank_j: None, rank_h: None };
    for row in rd.deserialize::<CsvRow>() {
        let row = row.map_err(|e| Error::format(path, e.to_string()))?;
        let same = out.last().is_some_and(|r| r.example_id == row.example_id && r.n == row.n);
        if !same {
            out.push(EvalRecord { example_id: row.example_id, n: row.n, budget: row.budget, scores: [blank; 4] });
        }
        let rec = out.last_mut().expect("pushed above");
        if rec.budget != row.budget {
            return Err(Error::format(path, format!("budgets differ within example {} n {}", row.example_id, row.n)));
        }
        rec.scores[row.method.index()] =
            MethodScore { jaccard: row.jaccard, hamming: row.hamming, rank_j: row.rank_j, rank_h: row.rank_h };
    }
    if out.iter().any(|r| r.scores.iter().any(|s| s.jaccard.is_nan())) {
        return Err(Error::format(path, "a comparison is missing one of the methods"));
    }
    Ok(out)
}
