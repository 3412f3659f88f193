//! Human-facing outputs: metric-vs-n plots, the mean-rank chart and
//! side-by-side mask overlays.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::evaluation::{EvalRecord, Explanations, Method, SummaryTable};
use crate::explain::{pixel_budget_mask, SuperpixelRanking};
use crate::image::{Image, PixelMask};

fn color(m: Method) -> &'static str {
    match m {
        Method::Lime => "#1b9e77",
        Method::Guided => "#d95f02",
        Method::Salience => "#7570b3",
        Method::Random => "#888888",
    }
}

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 45.0;

/// Jaccard and Hamming likeness against n for one example, one line per
/// method.
pub fn metric_plot_svg(records: &[EvalRecord], example_id: usize) -> Result<String> {
    let mut rows: Vec<&EvalRecord> = records.iter().filter(|r| r.example_id == example_id).collect();
    if rows.is_empty() {
        return Err(Error::Input(format!("no evaluation records for example {example_id}")));
    }
    rows.sort_by_key(|r| r.n);
    let width = 2.0 * (PANEL_W + 2.0 * MARGIN);
    let height = PANEL_H + 2.0 * MARGIN + 20.0;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    let max_n = rows.last().map_or(1, |r| r.n).max(2);
    type Getter = fn(&EvalRecord, Method) -> f64;
    let panels: [(&str, Getter); 2] = [
        ("Jaccard index", |r, m| r.score(m).jaccard),
        ("Hamming likeness", |r, m| r.score(m).hamming),
    ];
    for (k, (title, get)) in panels.iter().enumerate() {
        let x0 = MARGIN + k as f64 * (PANEL_W + 2.0 * MARGIN);
        let y0 = MARGIN;
        let all: Vec<f64> = rows.iter().flat_map(|r| Method::ALL.map(|m| get(r, m))).collect();
        let lo = if k == 0 { 0.0 } else { (all.iter().cloned().fold(1.0, f64::min) * 10.0).floor() / 10.0 };
        let hi = 1.0f64.min((all.iter().cloned().fold(0.0, f64::max) * 10.0).ceil() / 10.0).max(lo + 0.1);
        let px = |n: usize| x0 + (n - 1) as f64 / (max_n - 1) as f64 * PANEL_W;
        let py = |v: f64| y0 + PANEL_H - (v - lo) / (hi - lo) * PANEL_H;
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{title}, example {example_id}</text>"#,
            x0 + PANEL_W / 2.0,
            y0 - 12.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<rect x="{x0:.1}" y="{y0:.1}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="black"/>"#
        )
        .unwrap();
        for i in 0..=4 {
            let v = lo + (hi - lo) * i as f64 / 4.0;
            writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
                x0 - 4.0,
                py(v) + 4.0
            )
            .unwrap();
        }
        for n in (1..=max_n).filter(|n| *n == 1 || n % 5 == 0) {
            writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{n}</text>"#,
                px(n),
                y0 + PANEL_H + 14.0
            )
            .unwrap();
        }
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">superpixels n</text>"#,
            x0 + PANEL_W / 2.0,
            y0 + PANEL_H + 30.0
        )
        .unwrap();
        for m in Method::ALL {
            let pts: Vec<String> = rows.iter().map(|r| format!("{:.1},{:.1}", px(r.n), py(get(r, m)))).collect();
            let dash = if m == Method::Random { r#" stroke-dasharray="4 3""# } else { "" };
            writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="2"{dash} points="{}"/>"#,
                color(m),
                pts.join(" ")
            )
            .unwrap();
        }
    }
    for (i, m) in Method::ALL.iter().enumerate() {
        let x = MARGIN + i as f64 * 110.0;
        let y = height - 12.0;
        writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}" stroke-width="3"/><text x="{:.1}" y="{y:.1}">{}</text>"#,
            y - 4.0,
            x + 20.0,
            y - 4.0,
            color(*m),
            x + 25.0,
            m.name()
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Mean ranks per explainer under both metrics as a bar chart with the
/// values printed in a table underneath.
pub fn mean_rank_svg(table: &SummaryTable) -> String {
    let (w, h) = (520.0, 330.0);
    let (x0, y0, ph) = (60.0, 40.0, 180.0);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">Mean rank over {} comparisons (1 best, 3 worst)</text>"#,
        w / 2.0,
        table.records
    )
    .unwrap();
    let py = |v: f64| y0 + ph - v / 3.0 * ph;
    for v in 0..=3 {
        writeln!(
            s,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="end">{v}</text><line x1="{x0}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#dddddd"/>"##,
            x0 - 6.0,
            py(v as f64) + 4.0,
            py(v as f64),
            x0 + 420.0,
            py(v as f64)
        )
        .unwrap();
    }
    for (g, (label, pick)) in [
        ("Jaccard", (|m: &crate::evaluation::MethodSummary| m.mean_rank_jaccard) as fn(&_) -> Option<f64>),
        ("Hamming", |m| m.mean_rank_hamming),
    ]
    .iter()
    .enumerate()
    {
        let gx = x0 + 20.0 + g as f64 * 210.0;
        for (i, m) in Method::EXPLAINERS.iter().enumerate() {
            let v = pick(table.method(*m)).unwrap_or(0.0);
            let x = gx + i as f64 * 55.0;
            writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="45" height="{:.1}" fill="{}"/><text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#,
                py(v),
                ph - (py(v) - y0),
                color(*m),
                x + 22.5,
                py(v) - 4.0
            )
            .unwrap();
        }
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#,
            gx + 77.5,
            y0 + ph + 18.0
        )
        .unwrap();
    }
    let mut y = y0 + ph + 45.0;
    writeln!(s, r#"<text x="{x0}" y="{y:.1}" font-weight="bold">method   rank J   rank H   best-n J</text>"#).unwrap();
    for m in Method::EXPLAINERS {
        y += 16.0;
        let ms = table.method(m);
        writeln!(
            s,
            r#"<text x="{x0}" y="{y:.1}" fill="{}" xml:space="preserve">{:<9}{:>7.3}  {:>7.3}  {:>9.4}</text>"#,
            color(m),
            m.name(),
            ms.mean_rank_jaccard.unwrap_or(f64::NAN),
            ms.mean_rank_hamming.unwrap_or(f64::NAN),
            ms.mean_best_jaccard
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// The `budget` pixels LIME considers most relevant: superpixels in rank
/// order, row-major within a superpixel.
pub fn lime_budget_mask(ranking: &SuperpixelRanking, budget: usize) -> Result<PixelMask> {
    let seg = &ranking.segments;
    let available: usize = ranking.ranked.iter().map(|(id, _)| seg.sizes()[*id]).sum();
    if budget == 0 || budget > available {
        return Err(Error::Input(format!("budget {budget} outside 1..={available} for this LIME ranking")));
    }
    let order = ranking
        .ranked
        .iter()
        .flat_map(|(id, _)| (0..seg.labels().len()).filter(move |&p| seg.label(p) == *id));
    Ok(PixelMask::from_indices(seg.height(), seg.width(), order.take(budget)))
}

/// Named panels, each with the input image's dimensions.
pub struct Overlay {
    pub panels: Vec<(String, Image)>,
}

fn mask_panel(mask: &PixelMask) -> Image {
    let (h, w) = (mask.height(), mask.width());
    let mut img = Image::filled(3, h, w, 0.0);
    for p in mask.indices() {
        img.set_color(p, &[1.0, 1.0, 1.0]);
    }
    img
}

/// Original, adversarial, the attacked region and each explainer's mask at
/// the same pixel budget; white marks relevant pixels.
pub fn render_overlay(
    original: &Image,
    adversarial: &Image,
    truth: &PixelMask,
    ex: &Explanations<'_>,
    budget: usize,
) -> Result<Overlay> {
    let n = truth.len();
    if budget == 0 || budget > n {
        return Err(Error::Input(format!("overlay budget {budget} outside 1..={n}")));
    }
    Ok(Overlay {
        panels: vec![
            ("original".into(), original.clone()),
            ("adversarial".into(), adversarial.clone()),
            ("attacked region".into(), mask_panel(truth)),
            (Method::Lime.name().into(), mask_panel(&lime_budget_mask(ex.lime, budget)?)),
            (Method::Guided.name().into(), mask_panel(&pixel_budget_mask(ex.guided, budget)?)),
            (Method::Salience.name().into(), mask_panel(&pixel_budget_mask(ex.salience, budget)?)),
        ],
    })
}

impl Overlay {
    /// Panels left to right separated by a 2-pixel gray bar.
    pub fn compose(&self) -> Image {
        const GAP: usize = 2;
        let first = &self.panels[0].1;
        let (h, w) = (first.height(), first.width());
        let k = self.panels.len();
        let total_w = k * w + (k - 1) * GAP;
        let mut out = Image::filled(3, h, total_w, 0.5);
        for (i, (_, img)) in self.panels.iter().enumerate() {
            let off = i * (w + GAP);
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        let v = img.get(c.min(img.channels() - 1), y, x);
                        out.set(c, y, off + x, v);
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::MethodScore;
    use crate::explain::{lime::Surrogate, PixelScores};
    use crate::segmentation::SegmentMap;

    fn white(img: &Image) -> usize {
        (0..img.pixels()).filter(|&p| img.color(p).iter().all(|&v| v == 1.0)).count()
    }

    #[test]
    fn overlay_counts() {
        let raw: Vec<usize> = (0..64).map(|p| (p / 32) * 2 + (p % 8) / 4).collect();
        let seg = SegmentMap::from_labels(8, 8, &raw).unwrap();
        let lime = SuperpixelRanking {
            segments: seg.clone(),
            explained_class: 0,
            surrogate: Surrogate { intercept: 0.0, coefficients: vec![0.0; 4] },
            ranked: vec![(2, 0.3), (0, 0.1)],
        };
        let scores = PixelScores::new(8, 8, (0..64).map(|p| (p % 7) as f64).collect()).unwrap();
        let truth = seg.mask(1);
        let x = Image::filled(3, 8, 8, 0.25);
        let ex = Explanations { lime: &lime, guided: &scores, salience: &scores };
        let o = render_overlay(&x, &x, &truth, &ex, 20).unwrap();
        assert_eq!(o.panels.len(), 6);
        assert_eq!(white(&o.panels[2].1), truth.count());
        for (_, p) in &o.panels[3..] {
            assert_eq!(white(p), 20);
        }
        assert!(o.panels.iter().all(|(_, p)| p.height() == 8 && p.width() == 8));
        assert_eq!(o.compose().width(), 6 * 8 + 5 * 2);
        // only 32 pixels are ranked by LIME
        assert!(render_overlay(&x, &x, &truth, &ex, 33).is_err());
        assert!(render_overlay(&x, &x, &truth, &ex, 0).is_err());
    }

    #[test]
    fn plot_mentions_every_method() {
        let s = |j| MethodScore { jaccard: j, hamming: 0.9, rank_j: None, rank_h: None };
        let recs: Vec<EvalRecord> = (1..=20)
            .map(|n| EvalRecord { example_id: 3, n, budget: n, scores: [s(0.5), s(0.4), s(0.3), s(0.01)] })
            .collect();
        let svg = metric_plot_svg(&recs, 3).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 8);
        assert!(metric_plot_svg(&recs, 4).is_err());
    }
}
