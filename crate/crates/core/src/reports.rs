//! Gap histograms, model-pair proportion differences, relative improvements
//! and static SVG/CSV rendering.

use std::fmt::Write as _;
use std::io::Write;

use thiserror::Error;

use crate::dataio::{csv_writer, fmt_ratio, DataError};
use crate::matching::{EvalLevel, EvalReport};
use crate::metrics::MetricKind;

pub const DEFAULT_INTERVAL: (f64, f64) = (0.0, 2.0);
pub const DEFAULT_BINS: usize = 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error("histogram needs at least one bin and lo < hi, got {bins} bins over [{lo}, {hi}]")]
    InvalidBinning { lo: f64, hi: f64, bins: usize },
    #[error("histograms use different binning")]
    BinningMismatch,
    #[error("proportions are undefined for an empty histogram")]
    EmptyHistogram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
    /// All pairs offered, including those outside `[lo, hi]`.
    pub total_pairs: usize,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let w = self.bin_width();
        (self.lo + i as f64 * w, self.lo + (i + 1) as f64 * w)
    }

    /// Per-bin share of all pairs; `None` when there are no pairs.
    pub fn proportions(&self) -> Option<Vec<f64>> {
        if self.total_pairs == 0 {
            return None;
        }
        let n = self.total_pairs as f64;
        Some(self.counts.iter().map(|c| *c as f64 / n).collect())
    }

    pub fn in_interval(&self) -> usize {
        self.counts.iter().sum()
    }

    fn same_binning(&self, other: &Histogram) -> bool {
        self.lo == other.lo && self.hi == other.hi && self.bins() == other.bins()
    }
}

/// Bins gaps over `[lo, hi]` with half-open bins `[a, b)`, the last one closed.
pub fn gcs_histogram(gaps: &[f64], interval: (f64, f64), bins: usize) -> Result<Histogram, ReportError> {
    let (lo, hi) = interval;
    if bins == 0 || lo >= hi || !lo.is_finite() || !hi.is_finite() {
        return Err(ReportError::InvalidBinning { lo, hi, bins });
    }
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &g in gaps {
        if g < lo || g > hi || g.is_nan() {
            continue;
        }
        let idx = (((g - lo) / width).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(Histogram {
        lo,
        hi,
        counts,
        total_pairs: gaps.len(),
    })
}

/// `P_B - P_A` per bin, together with both proportion series.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffSeries {
    pub lo: f64,
    pub hi: f64,
    pub p_a: Vec<f64>,
    pub p_b: Vec<f64>,
    pub values: Vec<f64>,
}

impl DiffSeries {
    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.values.len() as f64;
        (self.lo + i as f64 * w, self.lo + (i + 1) as f64 * w)
    }

    pub fn write_csv(&self, sink: impl Write) -> Result<(), DataError> {
        let mut w = csv_writer(sink);
        let err = |e: csv::Error| DataError::Csv(e.to_string());
        w.write_record(["bin_lo", "bin_hi", "p_a", "p_b", "diff"])
            .map_err(err)?;
        for i in 0..self.values.len() {
            let (lo, hi) = self.bin_edges(i);
            w.write_record([
                format!("{lo:.4}"),
                format!("{hi:.4}"),
                format!("{:.6}", self.p_a[i]),
                format!("{:.6}", self.p_b[i]),
                format!("{:.6}", self.values[i]),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| DataError::Csv(e.to_string()))
    }
}

pub fn proportion_difference(a: &Histogram, b: &Histogram) -> Result<DiffSeries, ReportError> {
    if !a.same_binning(b) {
        return Err(ReportError::BinningMismatch);
    }
    let pa = a.proportions().ok_or(ReportError::EmptyHistogram)?;
    let pb = b.proportions().ok_or(ReportError::EmptyHistogram)?;
    let values = pa.iter().zip(&pb).map(|(x, y)| y - x).collect();
    Ok(DiffSeries {
        lo: a.lo,
        hi: a.hi,
        p_a: pa,
        p_b: pb,
        values,
    })
}

/// Relative change of `new_ap` over `base_ap` in percent; `None` for a zero
/// baseline.
pub fn improvement_percent(base_ap: f64, new_ap: f64) -> Option<f64> {
    if base_ap == 0.0 || !base_ap.is_finite() || !new_ap.is_finite() {
        return None;
    }
    Some(100.0 * (new_ap - base_ap) / base_ap)
}

/// One row of a two-model comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub class: String,
    pub difficulty: EvalLevel,
    pub metric: MetricKind,
    pub ap_a: Option<f64>,
    pub ap_b: Option<f64>,
    pub improvement_pct: Option<f64>,
}

/// Joins two reports on (class, difficulty, metric).
pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Vec<ComparisonRow> {
    let mut rows: Vec<ComparisonRow> = a
        .entries
        .iter()
        .map(|ea| {
            let ap_b = b.get(&ea.class, ea.difficulty, ea.metric).and_then(|e| e.ap);
            ComparisonRow {
                class: ea.class.clone(),
                difficulty: ea.difficulty,
                metric: ea.metric,
                ap_a: ea.ap,
                ap_b,
                improvement_pct: ea.ap.zip(ap_b).and_then(|(x, y)| improvement_percent(x, y)),
            }
        })
        .collect();
    rows.sort_by(|x, y| {
        x.class
            .cmp(&y.class)
            .then(x.difficulty.cmp(&y.difficulty))
            .then(x.metric.cmp(&y.metric))
    });
    rows
}

pub fn write_comparison_csv(rows: &[ComparisonRow], sink: impl Write) -> Result<(), DataError> {
    let mut w = csv_writer(sink);
    let err = |e: csv::Error| DataError::Csv(e.to_string());
    w.write_record(["class", "difficulty", "metric", "ap_a", "ap_b", "improvement_pct"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.class.clone(),
            r.difficulty.to_string(),
            r.metric.to_string(),
            fmt_ratio(r.ap_a),
            fmt_ratio(r.ap_b),
            r.improvement_pct
                .map_or_else(|| "NA".to_string(), |v| format!("{v:.1}")),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| DataError::Csv(e.to_string()))
}

pub fn write_histogram_csv(h: &Histogram, sink: impl Write) -> Result<(), DataError> {
    let mut w = csv_writer(sink);
    let err = |e: csv::Error| DataError::Csv(e.to_string());
    w.write_record(["bin_lo", "bin_hi", "count", "proportion"])
        .map_err(err)?;
    let props = h.proportions();
    for i in 0..h.bins() {
        let (lo, hi) = h.bin_edges(i);
        let p = props.as_ref().map(|p| p[i]);
        w.write_record([
            format!("{lo:.4}"),
            format!("{hi:.4}"),
            h.counts[i].to_string(),
            p.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}")),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| DataError::Csv(e.to_string()))
}

/// Anything that can be drawn as a bar series over an interval.
pub trait BarSeries {
    fn interval(&self) -> (f64, f64);
    fn bar_values(&self) -> Vec<f64>;
}

impl BarSeries for Histogram {
    fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn bar_values(&self) -> Vec<f64> {
        self.proportions().unwrap_or_else(|| vec![0.0; self.bins()])
    }
}

impl BarSeries for DiffSeries {
    fn interval(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    fn bar_values(&self) -> Vec<f64> {
        self.values.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvgStyle {
    pub width: u32,
    pub height: u32,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub positive_fill: String,
    pub negative_fill: String,
}

impl Default for SvgStyle {
    fn default() -> Self {
        Self {
            width: 640,
            height: 360,
            title: String::new(),
            x_label: "G_cs (m)".into(),
            y_label: "proportion".into(),
            positive_fill: "#4472c4".into(),
            negative_fill: "#c0504d".into(),
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders a bar chart with axes and a zero line as a standalone SVG 1.1
/// document. Output depends only on the inputs.
pub fn render_svg(series: &impl BarSeries, style: &SvgStyle) -> String {
    const MARGIN_L: f64 = 60.0;
    const MARGIN_R: f64 = 20.0;
    const MARGIN_T: f64 = 30.0;
    const MARGIN_B: f64 = 45.0;
    let values = series.bar_values();
    let (lo, hi) = series.interval();
    let w = style.width as f64;
    let h = style.height as f64;
    let plot_w = w - MARGIN_L - MARGIN_R;
    let plot_h = h - MARGIN_T - MARGIN_B;

    let max = values.iter().cloned().fold(0.0f64, f64::max);
    let min = values.iter().cloned().fold(0.0f64, f64::min);
    let (y_min, y_max) = if max - min <= 0.0 { (-1.0, 1.0) } else { (min, max) };
    let pad = 0.05 * (y_max - y_min);
    let (y_min, y_max) = (if min < 0.0 { y_min - pad } else { y_min.min(0.0) }, y_max + pad);
    let y_px = |v: f64| MARGIN_T + (y_max - v) / (y_max - y_min) * plot_h;
    let zero = y_px(0.0);
    let bar_w = plot_w / values.len().max(1) as f64;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        style.width, style.height, style.width, style.height
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w:.2}" height="{h:.2}" fill="white"/>"#);
    if !style.title.is_empty() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="18" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
            w / 2.0,
            escape(&style.title)
        );
    }
    let _ = writeln!(s, r#"<g class="bars">"#);
    for (i, v) in values.iter().enumerate() {
        let x = MARGIN_L + i as f64 * bar_w;
        let top = y_px(v.max(0.0));
        let height = (y_px(v.min(0.0)) - top).max(0.0);
        let fill = if *v < 0.0 {
            &style.negative_fill
        } else {
            &style.positive_fill
        };
        let _ = writeln!(
            s,
            r#"<rect class="bar" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            x + 0.5,
            top,
            (bar_w - 1.0).max(0.5),
            height,
            escape(fill)
        );
    }
    let _ = writeln!(s, "</g>");
    // axes
    let x_end = MARGIN_L + plot_w;
    let y_end = MARGIN_T + plot_h;
    let _ = writeln!(
        s,
        r#"<line class="axis" x1="{MARGIN_L:.2}" y1="{MARGIN_T:.2}" x2="{MARGIN_L:.2}" y2="{y_end:.2}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line class="axis" x1="{MARGIN_L:.2}" y1="{y_end:.2}" x2="{x_end:.2}" y2="{y_end:.2}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line class="zero" x1="{MARGIN_L:.2}" y1="{zero:.2}" x2="{x_end:.2}" y2="{zero:.2}" stroke="black" stroke-dasharray="4 2"/>"#
    );
    for k in 0..=4 {
        let frac = k as f64 / 4.0;
        let xv = lo + frac * (hi - lo);
        let xp = MARGIN_L + frac * plot_w;
        let _ = writeln!(
            s,
            r#"<text x="{xp:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="11">{xv:.2}</text>"#,
            y_end + 15.0
        );
        let yv = y_min + frac * (y_max - y_min);
        let yp = y_px(yv);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="11">{yv:.3}</text>"#,
            MARGIN_L - 5.0,
            yp + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        MARGIN_L + plot_w / 2.0,
        h - 8.0,
        escape(&style.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {:.2})">{}</text>"#,
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        escape(&style.y_label)
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn histogram_example() {
        // 1.5 is the lower edge of the last of four bins
        let h = gcs_histogram(&[0.1, 0.1, 1.5], (0.0, 2.0), 4).unwrap();
        assert_eq!(h.counts, vec![2, 0, 0, 1]);
        let p = h.proportions().unwrap();
        assert_eq!(p, vec![2.0 / 3.0, 0.0, 0.0, 1.0 / 3.0]);
        let h = gcs_histogram(&[0.1, 0.1, 1.4], (0.0, 2.0), 4).unwrap();
        assert_eq!(h.counts, vec![2, 0, 1, 0]);
    }

    #[test]
    fn histogram_boundaries() {
        let h = gcs_histogram(&[0.0, 0.0, 0.0], (0.0, 2.0), 40).unwrap();
        assert_eq!(h.counts[0], 3);
        let h = gcs_histogram(&[2.0], (0.0, 2.0), 40).unwrap();
        assert_eq!(h.counts[39], 1);
        let h = gcs_histogram(&[2.5, 0.49, 0.5], (0.0, 2.0), 4).unwrap();
        assert_eq!(h.counts, vec![1, 1, 0, 0]);
        assert_eq!(h.total_pairs, 3);
        assert_eq!(h.proportions().unwrap()[1], 1.0 / 3.0);
        let empty = gcs_histogram(&[], DEFAULT_INTERVAL, DEFAULT_BINS).unwrap();
        assert_eq!(empty.proportions(), None);
        assert!(gcs_histogram(&[1.0], (0.0, 2.0), 0).is_err());
        assert!(gcs_histogram(&[1.0], (2.0, 2.0), 4).is_err());
    }

    #[test]
    fn difference_signature() {
        let a = gcs_histogram(&[1.5, 1.5, 0.5], (0.0, 2.0), 2).unwrap();
        let b = gcs_histogram(&[0.2, 0.4, 1.5], (0.0, 2.0), 2).unwrap();
        let d = proportion_difference(&a, &b).unwrap();
        assert!(d.values[0] > 0.0 && d.values[1] < 0.0);
        let same = proportion_difference(&a, &a).unwrap();
        assert!(same.values.iter().all(|v| *v == 0.0));
        let other = gcs_histogram(&[0.2], (0.0, 2.0), 4).unwrap();
        assert_eq!(proportion_difference(&a, &other), Err(ReportError::BinningMismatch));
        let empty = gcs_histogram(&[], (0.0, 2.0), 2).unwrap();
        assert_eq!(proportion_difference(&a, &empty), Err(ReportError::EmptyHistogram));
    }

    #[test]
    fn improvement_values() {
        assert_eq!(format!("{:.1}", improvement_percent(19.0, 23.7).unwrap()), "24.7");
        assert_eq!(format!("{:.1}", improvement_percent(10.9, 14.7).unwrap()), "34.9");
        assert_eq!(improvement_percent(0.42, 0.42), Some(0.0));
        assert_eq!(improvement_percent(0.0, 0.5), None);
    }

    #[test]
    fn svg_structure() {
        let zero = DiffSeries {
            lo: 0.0,
            hi: 2.0,
            p_a: vec![0.0; 40],
            p_b: vec![0.0; 40],
            values: vec![0.0; 40],
        };
        let svg = render_svg(&zero, &SvgStyle::default());
        assert_eq!(svg.matches(r#"class="bar""#).count(), 40);
        assert!(svg.contains(r#"height="0.00""#));
        assert!(svg.starts_with("<?xml") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg, render_svg(&zero, &SvgStyle::default()));
        let h = gcs_histogram(&[0.1, 0.3], (0.0, 2.0), 10).unwrap();
        let style = SvgStyle {
            title: "a < b & c".into(),
            ..SvgStyle::default()
        };
        let svg = render_svg(&h, &style);
        assert_eq!(svg.matches(r#"class="bar""#).count(), 10);
        assert!(svg.contains("a &lt; b &amp; c"));
    }

    #[test]
    fn diff_csv_layout() {
        let a = gcs_histogram(&[0.1, 1.2], (0.0, 2.0), 2).unwrap();
        let b = gcs_histogram(&[0.1, 0.2], (0.0, 2.0), 2).unwrap();
        let mut out = Vec::new();
        proportion_difference(&a, &b).unwrap().write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "bin_lo,bin_hi,p_a,p_b,diff\n0.0000,1.0000,0.500000,1.000000,0.500000\n1.0000,2.0000,0.500000,0.000000,-0.500000\n"
        );
    }

    proptest! {
        #[test]
        fn proportions_bounded(gaps in prop::collection::vec(0.0..3.0f64, 1..200), bins in 1usize..50) {
            let h = gcs_histogram(&gaps, DEFAULT_INTERVAL, bins).unwrap();
            let p = h.proportions().unwrap();
            let sum: f64 = p.iter().sum();
            prop_assert!(sum <= 1.0 + 1e-12);
            prop_assert!((sum - h.in_interval() as f64 / h.total_pairs as f64).abs() < 1e-12);
        }

        #[test]
        fn difference_antisymmetric(
            a in prop::collection::vec(0.0..2.5f64, 1..100),
            b in prop::collection::vec(0.0..2.5f64, 1..100),
        ) {
            let ha = gcs_histogram(&a, DEFAULT_INTERVAL, DEFAULT_BINS).unwrap();
            let hb = gcs_histogram(&b, DEFAULT_INTERVAL, DEFAULT_BINS).unwrap();
            let ab = proportion_difference(&ha, &hb).unwrap();
            let ba = proportion_difference(&hb, &ha).unwrap();
            for (x, y) in ab.values.iter().zip(&ba.values) {
                prop_assert_eq!(*x, -*y);
                prop_assert!((-1.0..=1.0).contains(x));
            }
            let total: f64 = ab.values.iter().sum();
            let coverage = hb.in_interval() as f64 / hb.total_pairs as f64 - ha.in_interval() as f64 / ha.total_pairs as f64;
            prop_assert!((total - coverage).abs() < 1e-12);
        }
    }
}
