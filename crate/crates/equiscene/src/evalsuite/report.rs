//! Report emission: machine-readable stats, a four-box MSE boxplot, and a
//! PSNR summary table.

use super::MetricSummary;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::BufWriter;
use std::path::Path;

/// Quartiles by linear interpolation over the sorted sample.
pub fn quartiles(values: &[f64]) -> (f64, f64, f64) {
    assert!(!values.is_empty(), "quartiles of an empty sample");
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let q = |p: f64| -> f64 {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    };
    (q(0.25), q(0.5), q(0.75))
}

/// Distribution summary with Tukey whiskers at 1.5 * IQR.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SummaryStats {
    pub mean: f64,
    pub ci95: f64,
    pub count: usize,
    pub excluded_inf: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
}

impl SummaryStats {
    pub fn from_summary(s: &MetricSummary) -> Self {
        let (q1, median, q3) = quartiles(&s.values);
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let finite: Vec<f64> = s.values.iter().copied().filter(|v| v.is_finite()).collect();
        let whisker_lo = finite
            .iter()
            .copied()
            .filter(|&v| v >= lo_fence)
            .fold(f64::INFINITY, f64::min);
        let whisker_hi = finite
            .iter()
            .copied()
            .filter(|&v| v <= hi_fence)
            .fold(f64::NEG_INFINITY, f64::max);
        Self {
            mean: s.mean,
            ci95: s.ci95,
            count: s.count,
            excluded_inf: s.excluded_inf,
            q1,
            median,
            q3,
            whisker_lo,
            whisker_hi,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricPair {
    pub mse: SummaryStats,
    pub psnr: SummaryStats,
}

/// The full evaluation report, one entry per manipulation/baseline.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub n_examples: usize,
    pub background_manipulation: MetricPair,
    pub transform_manipulation: MetricPair,
    pub baseline_video_frames: MetricPair,
    pub baseline_no_object: MetricPair,
}

impl EvalReport {
    pub fn new(
        n_examples: usize,
        bg: (&MetricSummary, &MetricSummary),
        tf: (&MetricSummary, &MetricSummary),
        vf: (&MetricSummary, &MetricSummary),
        no: (&MetricSummary, &MetricSummary),
    ) -> Self {
        let pair = |x: (&MetricSummary, &MetricSummary)| MetricPair {
            mse: SummaryStats::from_summary(x.0),
            psnr: SummaryStats::from_summary(x.1),
        };
        Self {
            n_examples,
            background_manipulation: pair(bg),
            transform_manipulation: pair(tf),
            baseline_video_frames: pair(vf),
            baseline_no_object: pair(no),
        }
    }

    fn rows(&self) -> [(&'static str, &MetricPair); 4] {
        [
            ("Background manipulation", &self.background_manipulation),
            ("Transform manipulation", &self.transform_manipulation),
            ("Baseline: Video frames", &self.baseline_video_frames),
            ("Baseline: No object", &self.baseline_no_object),
        ]
    }
}

/// Write stats.json, boxplot.png (four MSE boxes), and psnr_table.md.
pub fn emit_report(report: &EvalReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    std::fs::write(out_dir.join("stats.json"), json)?;

    let mut table = String::from("| Type | PSNR 95% CI |\n|---|---|\n");
    for (name, pair) in report.rows() {
        table.push_str(&format!(
            "| {name} | {:.3} ± {:.3} |\n",
            pair.psnr.mean, pair.psnr.ci95
        ));
    }
    if report.rows().iter().any(|(_, p)| p.psnr.excluded_inf > 0) {
        table.push('\n');
        for (name, pair) in report.rows() {
            if pair.psnr.excluded_inf > 0 {
                table.push_str(&format!(
                    "{} infinite-PSNR examples excluded from {name}.\n",
                    pair.psnr.excluded_inf
                ));
            }
        }
    }
    std::fs::write(out_dir.join("psnr_table.md"), table)?;
    draw_boxplot(report, &out_dir.join("boxplot.png"))
}

const PLOT_W: usize = 480;
const PLOT_H: usize = 320;
const MARGIN: usize = 24;

fn draw_boxplot(report: &EvalReport, path: &Path) -> Result<()> {
    let boxes: Vec<&SummaryStats> = report.rows().iter().map(|(_, p)| &p.mse).collect();
    let hi = boxes.iter().map(|b| b.whisker_hi).fold(0.0f64, f64::max).max(1e-9);
    let mut img = vec![255u8; PLOT_W * PLOT_H * 3];
    let y_of = |v: f64| -> usize {
        let frac = (v / hi).clamp(0.0, 1.0);
        MARGIN + ((1.0 - frac) * (PLOT_H - 2 * MARGIN) as f64) as usize
    };
    let mut put = |x: usize, y: usize, rgb: [u8; 3]| {
        if x < PLOT_W && y < PLOT_H {
            let at = (y * PLOT_W + x) * 3;
            img[at..at + 3].copy_from_slice(&rgb);
        }
    };
    let colors =
        [[66u8, 135, 245], [245, 130, 48], [60, 180, 75], [145, 30, 180]];
    let slot = (PLOT_W - 2 * MARGIN) / 4;
    for (bi, stats) in boxes.iter().enumerate() {
        let cx = MARGIN + bi * slot + slot / 2;
        let half = slot / 4;
        let color = colors[bi];
        let (yq1, ymed, yq3) = (y_of(stats.q1), y_of(stats.median), y_of(stats.q3));
        let (ylo, yhi) = (y_of(stats.whisker_lo), y_of(stats.whisker_hi));
        // Box outline and median.
        for x in cx - half..=cx + half {
            put(x, yq1, color);
            put(x, yq3, color);
            put(x, ymed, [0, 0, 0]);
        }
        for y in yq3.min(yq1)..=yq3.max(yq1) {
            put(cx - half, y, color);
            put(cx + half, y, color);
        }
        // Whisker stems and caps.
        for y in yhi.min(yq3)..=yq3 {
            put(cx, y, color);
        }
        for y in yq1..=ylo.max(yq1) {
            put(cx, y, color);
        }
        for x in cx - half / 2..=cx + half / 2 {
            put(x, yhi, color);
            put(x, ylo, color);
        }
    }
    // Axis.
    for y in MARGIN..PLOT_H - MARGIN {
        put(MARGIN / 2, y, [0, 0, 0]);
    }
    let file = std::fs::File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), PLOT_W as u32, PLOT_H as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    encoder
        .write_header()
        .and_then(|mut w| w.write_image_data(&img))
        .map_err(|e| Error::Format(format!("boxplot png: {e}")))?;
    Ok(())
}
