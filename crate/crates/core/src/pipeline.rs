//! Stage runners. Every stage reads only the config and files written by
//! earlier stages under the output directory, so any stage can be rerun on
//! its own.
//!
//! ```text
//! <out>/config.json
//! <out>/data/{train,holdout}/manifest.json, img_NNNN.ppm
//! <out>/model.json, train_report.json
//! <out>/attack/manifest.json, ex_NNNN.ppm, ex_NNNN_mask.pbm
//! <out>/explain/lime/ex_NNNN.json, ex_NNNN_segments.{pgm,json}
//! <out>/explain/{guided,salience}/ex_NNNN.json, ex_NNNN.pgm
//! <out>/eval.csv, summary.json, summary.txt
//! <out>/plots/*.svg, overlays/*.ppm
//! ```

use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::attack::{generate_examples, AttackStatus};
use crate::config::PipelineConfig;
use crate::data::{generate_dataset, train, DatasetConfig, Sample, TrainReport};
use crate::error::{Error, Result};
use crate::evaluation::{aggregate, evaluate_example, read_csv, write_csv, EvalRecord, Explanations, Method, SummaryTable};
use crate::explain::{guided_backprop, lime_explain, salience, PixelScores, SuperpixelRanking};
use crate::explain::lime::Surrogate;
use crate::image::{Image, PixelMask};
use crate::net::Network;
use crate::par::Parallelism;
use crate::pnm::{self, GrayMap};
use crate::report;
use crate::segmentation::{segment, SegmentMap, SegmentParams};

/// Paths of every artifact under an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Holdout,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Holdout => "holdout",
        }
    }
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn data_dir(&self, split: Split) -> PathBuf {
        self.root.join("data").join(split.name())
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model.json")
    }

    pub fn train_report(&self) -> PathBuf {
        self.root.join("train_report.json")
    }

    pub fn attack_dir(&self) -> PathBuf {
        self.root.join("attack")
    }

    pub fn attack_manifest(&self) -> PathBuf {
        self.attack_dir().join("manifest.json")
    }

    pub fn explain_dir(&self, m: Method) -> PathBuf {
        self.root.join("explain").join(m.name())
    }

    pub fn eval_csv(&self) -> PathBuf {
        self.root.join("eval.csv")
    }

    pub fn summary_json(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn summary_txt(&self) -> PathBuf {
        self.root.join("summary.txt")
    }

    pub fn plots_dir(&self) -> PathBuf {
        self.root.join("plots")
    }

    pub fn overlays_dir(&self) -> PathBuf {
        self.root.join("overlays")
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn example_stem(id: usize) -> String {
    format!("ex_{id:04}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataEntry {
    pub file: String,
    pub label: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub config: DatasetConfig,
    pub images: Vec<DataEntry>,
}

/// Renders the training and held-out sets to PPM files.
pub fn gen_data(cfg: &PipelineConfig, out: &Layout, par: Parallelism) -> Result<()> {
    for (split, dcfg) in [(Split::Train, cfg.dataset.clone()), (Split::Holdout, cfg.attack_set())] {
        let dir = out.data_dir(split);
        ensure_dir(&dir)?;
        let samples = generate_dataset(&dcfg, par)?;
        let mut images = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            let file = format!("img_{i:04}.ppm");
            pnm::write_ppm(&dir.join(&file), &s.image)?;
            images.push(DataEntry { file, label: s.label, seed: s.seed });
        }
        write_json(&dir.join("manifest.json"), &DataManifest { config: dcfg, images })?;
        info!("wrote {} {} images to {}", samples.len(), split.name(), dir.display());
    }
    Ok(())
}

pub fn load_split(out: &Layout, split: Split) -> Result<Vec<Sample>> {
    let dir = out.data_dir(split);
    let manifest: DataManifest = read_json(&dir.join("manifest.json"))?;
    manifest
        .images
        .iter()
        .map(|e| {
            Ok(Sample { image: pnm::read_ppm(&dir.join(&e.file))?, label: e.label, seed: e.seed })
        })
        .collect()
}

/// Trains the classifier on the training split, monitoring the held-out one.
pub fn train_stage(cfg: &PipelineConfig, out: &Layout) -> Result<TrainReport> {
    let train_set = load_split(out, Split::Train)?;
    let holdout = load_split(out, Split::Holdout)?;
    let d = &cfg.dataset;
    let mut net = Network::new(&cfg.architecture(), [3, d.height, d.width], d.num_classes, cfg.model.init_seed)?;
    let report = train(&mut net, &train_set, &holdout, &cfg.training)?;
    net.save(&out.model())?;
    write_json(&out.train_report(), &report)?;
    info!(
        "trained {} epochs: loss {:.4}, train accuracy {:.3}, holdout accuracy {:.3}",
        report.epochs, report.final_loss, report.train_accuracy, report.holdout_accuracy
    );
    Ok(report)
}

/// One attack attempt as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackEntry {
    pub image_index: usize,
    pub region_rank: usize,
    /// Present for successful attempts, which are the evaluated examples.
    pub example_id: Option<usize>,
    pub status: Option<AttackStatus>,
    pub error: Option<String>,
    pub original_label: Option<usize>,
    pub adversarial_label: Option<usize>,
    pub iterations: Option<usize>,
    pub region_pixels: Option<usize>,
    pub target_loss: Option<f64>,
    pub adversarial: Option<String>,
    pub mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackManifest {
    pub target_label: usize,
    pub regions_per_image: usize,
    pub images: usize,
    /// Images already classified as the target, never attacked.
    pub skipped_images: Vec<usize>,
    pub attempts: usize,
    pub successes: usize,
    pub success_fraction: f64,
    pub records: Vec<AttackEntry>,
}

/// Attacks the largest regions of every held-out image.
pub fn attack_stage(cfg: &PipelineConfig, out: &Layout, par: Parallelism) -> Result<AttackManifest> {
    let net = Network::load(&out.model())?;
    let holdout = load_split(out, Split::Holdout)?;
    let images: Vec<Image> = holdout.into_iter().map(|s| s.image).collect();
    let a = &cfg.attack;
    let batch = generate_examples(&net, &images, &a.segmentation, &a.attack, a.regions_per_image, par)?;
    let dir = out.attack_dir();
    ensure_dir(&dir)?;
    let mut records = Vec::with_capacity(batch.attempts.len());
    let mut next_id = 0;
    for at in &batch.attempts {
        let mut e = AttackEntry {
            image_index: at.image_index,
            region_rank: at.region_rank,
            example_id: None,
            status: None,
            error: None,
            original_label: None,
            adversarial_label: None,
            iterations: None,
            region_pixels: None,
            target_loss: None,
            adversarial: None,
            mask: None,
        };
        match &at.outcome {
            Err(msg) => {
                warn!("image {} region {}: {msg}", at.image_index, at.region_rank);
                e.error = Some(msg.clone());
            }
            Ok(r) => {
                e.status = Some(r.status);
                e.original_label = Some(r.original_label);
                e.adversarial_label = Some(r.adversarial_label);
                e.iterations = Some(r.iterations);
                e.region_pixels = Some(r.mask.count());
                e.target_loss = Some(r.target_loss);
                if r.status == AttackStatus::Success {
                    r.verify(&net).map_err(|v| {
                        Error::Internal(format!("image {} region {}: {v}", at.image_index, at.region_rank))
                    })?;
                    let stem = example_stem(next_id);
                    let (adv, mask) = (format!("{stem}.ppm"), format!("{stem}_mask.pbm"));
                    pnm::write_ppm(&dir.join(&adv), &r.adversarial)?;
                    pnm::write_pbm(&dir.join(&mask), &r.mask)?;
                    e.example_id = Some(next_id);
                    e.adversarial = Some(adv);
                    e.mask = Some(mask);
                    next_id += 1;
                }
            }
        }
        records.push(e);
    }
    let manifest = AttackManifest {
        target_label: a.attack.target_label,
        regions_per_image: a.regions_per_image,
        images: images.len(),
        skipped_images: batch.skipped_images.clone(),
        attempts: batch.attempts.len(),
        successes: next_id,
        success_fraction: batch.success_fraction(),
        records,
    };
    write_json(&out.attack_manifest(), &manifest)?;
    info!(
        "{} of {} attempts succeeded ({:.3}); {} images already in the target class",
        manifest.successes,
        manifest.attempts,
        manifest.success_fraction,
        manifest.skipped_images.len()
    );
    Ok(manifest)
}

/// A successful adversarial example, reloaded from disk.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: usize,
    pub image_index: usize,
    pub region_rank: usize,
    pub original: Image,
    pub adversarial: Image,
    pub mask: PixelMask,
}

pub fn load_examples(out: &Layout) -> Result<(AttackManifest, Vec<Example>)> {
    let manifest: AttackManifest = read_json(&out.attack_manifest())?;
    let holdout = out.data_dir(Split::Holdout);
    let data: DataManifest = read_json(&holdout.join("manifest.json"))?;
    let dir = out.attack_dir();
    let mut examples = Vec::new();
    for e in &manifest.records {
        let (Some(id), Some(adv), Some(mask)) = (e.example_id, &e.adversarial, &e.mask) else { continue };
        let entry = data.images.get(e.image_index).ok_or_else(|| {
            Error::format(out.attack_manifest(), format!("image index {} not in the held-out set", e.image_index))
        })?;
        examples.push(Example {
            id,
            image_index: e.image_index,
            region_rank: e.region_rank,
            original: pnm::read_ppm(&holdout.join(&entry.file))?,
            adversarial: pnm::read_ppm(&dir.join(adv))?,
            mask: pnm::read_pbm(&dir.join(mask))?,
        });
    }
    Ok((manifest, examples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSuperpixel {
    pub id: usize,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LimeFile {
    example_id: usize,
    explained_class: usize,
    segmentation: SegmentParams,
    num_segments: usize,
    intercept: f64,
    coefficients: Vec<f64>,
    ranked: Vec<RankedSuperpixel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScoreFile {
    example_id: usize,
    method: Method,
    /// Full-precision scores; the PGM next to this file is for viewing only.
    scores: PixelScores,
}

fn save_lime(dir: &Path, id: usize, r: &SuperpixelRanking, params: SegmentParams) -> Result<()> {
    let stem = example_stem(id);
    r.segments.save(dir, &format!("{stem}_segments"), Some(params))?;
    write_json(
        &dir.join(format!("{stem}.json")),
        &LimeFile {
            example_id: id,
            explained_class: r.explained_class,
            segmentation: params,
            num_segments: r.segments.num_segments(),
            intercept: r.surrogate.intercept,
            coefficients: r.surrogate.coefficients.clone(),
            ranked: r.ranked.iter().map(|&(id, coefficient)| RankedSuperpixel { id, coefficient }).collect(),
        },
    )
}

pub fn load_lime(out: &Layout, id: usize) -> Result<SuperpixelRanking> {
    let dir = out.explain_dir(Method::Lime);
    let stem = example_stem(id);
    let path = dir.join(format!("{stem}.json"));
    let f: LimeFile = read_json(&path)?;
    let segments = SegmentMap::load(&dir, &format!("{stem}_segments"))?;
    if segments.num_segments() != f.num_segments || f.ranked.iter().any(|r| r.id >= f.num_segments) {
        return Err(Error::format(path, "ranking does not match the stored segmentation"));
    }
    Ok(SuperpixelRanking {
        segments,
        explained_class: f.explained_class,
        surrogate: Surrogate { intercept: f.intercept, coefficients: f.coefficients },
        ranked: f.ranked.into_iter().map(|r| (r.id, r.coefficient)).collect(),
    })
}

fn save_scores(dir: &Path, id: usize, method: Method, scores: &PixelScores) -> Result<()> {
    let stem = example_stem(id);
    let max = scores.values.iter().cloned().fold(0.0, f64::max);
    let map = GrayMap {
        width: scores.width,
        height: scores.height,
        maxval: 65535,
        samples: scores
            .values
            .iter()
            .map(|v| if max > 0.0 { (v / max * 65535.0).round() as u16 } else { 0 })
            .collect(),
    };
    pnm::write_pgm(&dir.join(format!("{stem}.pgm")), &map)?;
    write_json(&dir.join(format!("{stem}.json")), &ScoreFile { example_id: id, method, scores: scores.clone() })
}

pub fn load_scores(out: &Layout, method: Method, id: usize) -> Result<PixelScores> {
    let path = out.explain_dir(method).join(format!("{}.json", example_stem(id)));
    let f: ScoreFile = read_json(&path)?;
    if f.method != method || f.example_id != id {
        return Err(Error::format(path, "file belongs to another method or example"));
    }
    PixelScores::new(f.scores.height, f.scores.width, f.scores.values)
}

enum Explained {
    Lime(SuperpixelRanking),
    Scores(PixelScores),
}

/// Explains every adversarial example with the chosen methods.
pub fn explain_stage(cfg: &PipelineConfig, out: &Layout, methods: &[Method], par: Parallelism) -> Result<usize> {
    if methods.contains(&Method::Random) {
        return Err(Error::Input("random is a baseline, not an explainer".into()));
    }
    let net = Network::load(&out.model())?;
    let (_, examples) = load_examples(out)?;
    for &m in methods {
        let dir = out.explain_dir(m);
        ensure_dir(&dir)?;
        let results = par.map(&examples, |ex| -> Result<Explained> {
            Ok(match m {
                Method::Lime => match lime_explain(&net, &ex.adversarial, &cfg.lime, ex.id as u64, par) {
                    Err(Error::Input(msg)) => {
                        // nothing to rank; evaluation skips the example
                        warn!("example {}: {msg}", ex.id);
                        let segments = segment(&ex.adversarial, &cfg.lime.segmentation)?;
                        let explained_class = net.classify(&ex.adversarial.to_tensor())?;
                        let k = segments.num_segments();
                        Explained::Lime(SuperpixelRanking {
                            segments,
                            explained_class,
                            surrogate: Surrogate { intercept: 0.0, coefficients: vec![0.0; k] },
                            ranked: Vec::new(),
                        })
                    }
                    r => Explained::Lime(r?),
                },
                Method::Guided => Explained::Scores(guided_backprop(&net, &ex.adversarial)?),
                _ => Explained::Scores(salience(&net, &ex.adversarial)?),
            })
        });
        for (ex, r) in examples.iter().zip(results) {
            match r? {
                Explained::Lime(r) => save_lime(&dir, ex.id, &r, cfg.lime.segmentation)?,
                Explained::Scores(s) => save_scores(&dir, ex.id, m, &s)?,
            }
        }
        info!("{}: explained {} examples", m.name(), examples.len());
    }
    Ok(examples.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub table: SummaryTable,
    pub attack_attempts: usize,
    pub attack_successes: usize,
    pub attack_success_fraction: f64,
    /// Examples left out because LIME ranked no superpixel positively.
    pub skipped_examples: Vec<usize>,
}

/// Budget-matched comparison of the explainers on every example.
pub fn evaluate_stage(cfg: &PipelineConfig, out: &Layout, par: Parallelism) -> Result<(Vec<EvalRecord>, Summary)> {
    let (manifest, examples) = load_examples(out)?;
    let per_example = par.map(&examples, |ex| -> Result<Option<Vec<EvalRecord>>> {
        let lime = load_lime(out, ex.id)?;
        if lime.ranked.is_empty() {
            return Ok(None);
        }
        let guided = load_scores(out, Method::Guided, ex.id)?;
        let sal = load_scores(out, Method::Salience, ex.id)?;
        let e = Explanations { lime: &lime, guided: &guided, salience: &sal };
        evaluate_example(ex.id, &ex.mask, &e, cfg.evaluation.seed).map(Some)
    });
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (ex, r) in examples.iter().zip(per_example) {
        match r? {
            Some(v) => records.extend(v),
            None => {
                warn!("example {}: LIME ranked no superpixel positively, skipped", ex.id);
                skipped.push(ex.id);
            }
        }
    }
    if records.is_empty() {
        return Err(Error::Input(format!(
            "nothing to evaluate: {} successful attacks, {} skipped by LIME",
            examples.len(),
            skipped.len()
        )));
    }
    let table = aggregate(&records, &cfg.fingerprint())?;
    let summary = Summary {
        table,
        attack_attempts: manifest.attempts,
        attack_successes: manifest.successes,
        attack_success_fraction: manifest.success_fraction,
        skipped_examples: skipped,
    };
    write_csv(&out.eval_csv(), &records)?;
    write_json(&out.summary_json(), &summary)?;
    write_text(&out.summary_txt(), &summary_text(&summary))?;
    Ok((records, summary))
}

pub fn summary_text(s: &Summary) -> String {
    let mut t = format!(
        "attack: {} of {} attempts succeeded ({:.3})\n",
        s.attack_successes, s.attack_attempts, s.attack_success_fraction
    );
    if !s.skipped_examples.is_empty() {
        t += &format!("skipped examples without a positive LIME superpixel: {:?}\n", s.skipped_examples);
    }
    t + "\n" + &s.table.to_text()
}

pub fn load_summary(out: &Layout) -> Result<Summary> {
    read_json(&out.summary_json())
}

/// Files written by [`report_stage`].
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub example: usize,
    pub plot: PathBuf,
    pub ranks: PathBuf,
    pub overlay: PathBuf,
}

/// Plots one example's metrics against n, the mean-rank chart and an
/// overlay of all masks at a common budget.
pub fn report_stage(cfg: &PipelineConfig, out: &Layout) -> Result<ReportFiles> {
    let records = read_csv(&out.eval_csv())?;
    let summary = load_summary(out)?;
    let example = match cfg.report.example {
        Some(id) => id,
        None => records.first().map(|r| r.example_id).ok_or_else(|| Error::Input("eval.csv is empty".into()))?,
    };
    let plots = out.plots_dir();
    ensure_dir(&plots)?;
    let plot = plots.join(format!("example_{example:04}.svg"));
    write_text(&plot, &report::metric_plot_svg(&records, example)?)?;
    let ranks = plots.join("mean_ranks.svg");
    write_text(&ranks, &report::mean_rank_svg(&summary.table))?;

    let (_, examples) = load_examples(out)?;
    let ex = examples
        .iter()
        .find(|e| e.id == example)
        .ok_or_else(|| Error::Input(format!("example {example} not in the attack manifest")))?;
    let budget = records
        .iter()
        .find(|r| r.example_id == example && r.n == cfg.report.overlay_n.min(crate::evaluation::MAX_N))
        .map(|r| r.budget)
        .ok_or_else(|| Error::Input(format!("no record for example {example}")))?;
    let lime = load_lime(out, example)?;
    let guided = load_scores(out, Method::Guided, example)?;
    let sal = load_scores(out, Method::Salience, example)?;
    let e = Explanations { lime: &lime, guided: &guided, salience: &sal };
    let overlay = report::render_overlay(&ex.original, &ex.adversarial, &ex.mask, &e, budget)?;
    ensure_dir(&out.overlays_dir())?;
    let overlay_path = out.overlays_dir().join(format!("example_{example:04}.ppm"));
    pnm::write_ppm(&overlay_path, &overlay.compose())?;
    Ok(ReportFiles { example, plot, ranks, overlay: overlay_path })
}

/// Creates the output directory and stores the resolved config there.
pub fn init_output(cfg: &PipelineConfig, out: &Layout) -> Result<()> {
    ensure_dir(out.root())?;
    cfg.save(&out.config())
}

/// Every stage in order.
pub fn run_all(cfg: &PipelineConfig, out: &Layout, par: Parallelism) -> Result<Summary> {
    init_output(cfg, out)?;
    gen_data(cfg, out, par)?;
    train_stage(cfg, out)?;
    attack_stage(cfg, out, par)?;
    explain_stage(cfg, out, &Method::EXPLAINERS, par)?;
    let (_, summary) = evaluate_stage(cfg, out, par)?;
    report_stage(cfg, out)?;
    Ok(summary)
}
