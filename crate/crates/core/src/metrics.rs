//! Detection-error tradeoff analysis for trigger classifiers.
//!
//! A sample is suppressed when its score `y < t` and accepted when `y >= t`.
//! FS is the fraction of true triggers suppressed; FT the fraction of false
//! triggers accepted. Rates are formed from integer counts, so thresholds and
//! rates are bit-stable across runs.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::decodesim::Label;
use crate::util::fmt_sig9;

/// Operating point: FS = 0.4%.
pub const TARGET_FS: f64 = 0.004;
/// Upper FS limit of the region-of-interest AUC.
pub const AUC_FS_MAX: f64 = 0.01;
/// Threshold above every valid score; suppresses everything.
pub const ABOVE_ONE: f64 = 1.0 + f64::EPSILON;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("need at least one TT and one FT sample (got {tt} TT, {ft} FT)")]
    SingleClassInput { tt: usize, ft: usize },
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("target FS {target} is unachievable; smallest FS point is at threshold {fallback}")]
    Unachievable { target: f64, fallback: f64 },
    #[error("sample sets differ: {0}")]
    IdMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub id: String,
    pub label: Label,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub fs: f64,
    pub ft: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetCurve {
    /// Increasing threshold; FS non-decreasing, FT non-increasing.
    pub points: Vec<DetPoint>,
    pub n_tt: usize,
    pub n_ft: usize,
}

impl DetCurve {
    /// A curve from explicit `(fs, ft)` points, thresholds set to their index.
    pub fn from_rates(rates: &[(f64, f64)]) -> Self {
        Self {
            points: rates.iter().enumerate().map(|(i, &(fs, ft))| DetPoint { threshold: i as f64, fs, ft }).collect(),
            n_tt: 0,
            n_ft: 0,
        }
    }

    /// `(FS, FT)` at an arbitrary threshold.
    pub fn rates_at(&self, t: f64) -> (f64, f64) {
        // Points are the curve's breakpoints; anything between two thresholds
        // behaves like the next one up.
        match self.points.iter().find(|p| p.threshold >= t) {
            Some(p) => (p.fs, p.ft),
            None => (1.0, 0.0),
        }
    }

    pub fn ft_at_fs(&self, target_fs: f64) -> Result<f64, MetricsError> {
        let t = pick_threshold(self, target_fs)?;
        Ok(self.rates_at(t).1)
    }

    pub fn auc_region(&self, fs_max: f64) -> f64 {
        auc_region(self, fs_max)
    }

    /// `threshold,fs,ft` with nine significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,fs,ft\n");
        for p in &self.points {
            writeln!(s, "{},{},{}", fmt_sig9(p.threshold), fmt_sig9(p.fs), fmt_sig9(p.ft)).unwrap();
        }
        s
    }
}

fn class_counts(scores: &[(Label, f64)]) -> Result<(usize, usize), MetricsError> {
    let mut tt = 0;
    let mut ft = 0;
    for &(label, y) in scores {
        if !(0.0..=1.0).contains(&y) {
            return Err(MetricsError::ScoreOutOfRange(y));
        }
        match label {
            Label::TT => tt += 1,
            Label::FT => ft += 1,
        }
    }
    if tt == 0 || ft == 0 {
        return Err(MetricsError::SingleClassInput { tt, ft });
    }
    Ok((tt, ft))
}

/// Sweeps every distinct score (plus 0 and just above 1) as a threshold.
/// Consecutive thresholds with identical counts collapse onto the largest one.
pub fn det_curve(scores: &[(Label, f64)]) -> Result<DetCurve, MetricsError> {
    let (n_tt, n_ft) = class_counts(scores)?;
    let mut sorted: Vec<(f64, Label)> = scores.iter().map(|&(l, y)| (y, l)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut thresholds: Vec<f64> = sorted.iter().map(|s| s.0).collect();
    thresholds.push(0.0);
    thresholds.push(ABOVE_ONE);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut points: Vec<DetPoint> = Vec::with_capacity(thresholds.len());
    let mut last_counts = None;
    let (mut below_tt, mut below_ft, mut i) = (0usize, 0usize, 0usize);
    for t in thresholds {
        while i < sorted.len() && sorted[i].0 < t {
            match sorted[i].1 {
                Label::TT => below_tt += 1,
                Label::FT => below_ft += 1,
            }
            i += 1;
        }
        let counts = (below_tt, below_ft);
        let point = DetPoint { threshold: t, fs: below_tt as f64 / n_tt as f64, ft: (n_ft - below_ft) as f64 / n_ft as f64 };
        if last_counts == Some(counts) {
            *points.last_mut().unwrap() = point;
        } else {
            points.push(point);
        }
        last_counts = Some(counts);
    }
    Ok(DetCurve { points, n_tt, n_ft })
}

/// Largest threshold whose FS does not exceed `target_fs`.
pub fn pick_threshold(curve: &DetCurve, target_fs: f64) -> Result<f64, MetricsError> {
    match curve.points.iter().rev().find(|p| p.fs <= target_fs) {
        Some(p) => Ok(p.threshold),
        None => {
            let fallback = curve.points.first().map_or(0.0, |p| p.threshold);
            Err(MetricsError::Unachievable { target: target_fs, fallback })
        }
    }
}

/// Threshold from `dev` at `target_fs`, and the FT rate it yields on `eval`.
pub fn ft_at_fs(dev: &[(Label, f64)], eval: &[(Label, f64)], target_fs: f64) -> Result<(f64, f64), MetricsError> {
    let t = pick_threshold(&det_curve(dev)?, target_fs)?;
    let (_, n_ft) = class_counts(eval)?;
    let accepted = eval.iter().filter(|&&(l, y)| l == Label::FT && y >= t).count();
    Ok((t, accepted as f64 / n_ft as f64))
}

/// Trapezoidal `∫ FT d(FS)` over `FS ∈ [0, fs_max]`, linearly interpolated at
/// the `fs_max` boundary. Unnormalized.
pub fn auc_region(curve: &DetCurve, fs_max: f64) -> f64 {
    let mut area = 0.0;
    for w in curve.points.windows(2) {
        let (x0, y0, x1, y1) = (w[0].fs, w[0].ft, w[1].fs, w[1].ft);
        if x0 >= fs_max {
            break;
        }
        if x1 <= fs_max {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let ym = y0 + (y1 - y0) * (fs_max - x0) / (x1 - x0);
            area += (fs_max - x0) * (y0 + ym) / 2.0;
            break;
        }
    }
    area
}

/// Joint correctness of two classifiers, per true class, in percent.
/// Cell order: A✓B✓, A✓B✗, A✗B✓, A✗B✗.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMatrix {
    pub tt: [f64; 4],
    pub ft: [f64; 4],
    pub tt_counts: [usize; 4],
    pub ft_counts: [usize; 4],
}

impl ErrorMatrix {
    pub fn row(&self, label: Label) -> &[f64; 4] {
        match label {
            Label::TT => &self.tt,
            Label::FT => &self.ft,
        }
    }

    /// `class,a_correct_b_correct,a_correct_b_wrong,a_wrong_b_correct,a_wrong_b_wrong`.
    pub fn to_csv(&self, a: &str, b: &str) -> String {
        let mut s = format!("class,{a}_correct_{b}_correct,{a}_correct_{b}_wrong,{a}_wrong_{b}_correct,{a}_wrong_{b}_wrong\n");
        for (name, row) in [("TT", &self.tt), ("FT", &self.ft)] {
            writeln!(s, "{name},{},{},{},{}", fmt_sig9(row[0]), fmt_sig9(row[1]), fmt_sig9(row[2]), fmt_sig9(row[3])).unwrap();
        }
        s
    }
}

fn correct(label: Label, y: f64, t: f64) -> bool {
    match label {
        Label::TT => y >= t,
        Label::FT => y < t,
    }
}

pub fn error_matrix(a: &[ScoredSample], b: &[ScoredSample], t_a: f64, t_b: f64) -> Result<ErrorMatrix, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::IdMismatch(format!("{} vs {} samples", a.len(), b.len())));
    }
    let by_id: HashMap<&str, &ScoredSample> = b.iter().map(|s| (s.id.as_str(), s)).collect();
    if by_id.len() != b.len() {
        return Err(MetricsError::IdMismatch("duplicate ids".into()));
    }
    let mut tt = [0usize; 4];
    let mut ft = [0usize; 4];
    for sa in a {
        let sb = by_id.get(sa.id.as_str()).ok_or_else(|| MetricsError::IdMismatch(format!("`{}` missing", sa.id)))?;
        if sa.label != sb.label {
            return Err(MetricsError::IdMismatch(format!("`{}` labelled differently", sa.id)));
        }
        let cell = match (correct(sa.label, sa.score, t_a), correct(sb.label, sb.score, t_b)) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        match sa.label {
            Label::TT => tt[cell] += 1,
            Label::FT => ft[cell] += 1,
        }
    }
    let pct = |c: [usize; 4]| {
        let n: usize = c.iter().sum();
        c.map(|x| if n == 0 { 0.0 } else { 100.0 * x as f64 / n as f64 })
    };
    Ok(ErrorMatrix { tt: pct(tt), ft: pct(ft), tt_counts: tt, ft_counts: ft })
}

/// Polyline plot of the `FS < fs_max` region for several curves.
pub fn det_svg(curves: &[(&str, &DetCurve)], fs_max: f64) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const M: f64 = 50.0;
    const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#17becf", "#8c564b", "#e377c2"];
    let x = |fs: f64| M + (fs / fs_max).min(1.0) * (W - 2.0 * M);
    let y = |ft: f64| H - M - ft * (H - 2.0 * M);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#).unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - M, W - M, H - M).unwrap();
    writeln!(s, r#"<line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>"#, H - M).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">FS (0 to {})</text>"#, W / 2.0, H - 15.0, fmt_sig9(fs_max)).unwrap();
    writeln!(s, r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">FT</text>"#, H / 2.0, H / 2.0).unwrap();
    for (i, (name, curve)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut pts = String::new();
        for p in curve.points.iter().take_while(|p| p.fs <= fs_max) {
            write!(pts, "{:.2},{:.2} ", x(p.fs), y(p.ft)).unwrap();
        }
        if let Some(next) = curve.points.iter().find(|p| p.fs > fs_max) {
            write!(pts, "{:.2},{:.2}", x(fs_max), y(next.ft)).unwrap();
        }
        writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.trim_end()).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#, W - M - 180.0, M + 18.0 * (i as f64 + 1.0)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}
