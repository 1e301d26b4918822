//! Self-contained SVG rendering of emitted CSVs. Nothing is recomputed
//! beyond averaging error curves over seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};
use crate::output::{read_histograms, read_rows, HistogramRow};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        MARGIN + (x - self.x0) / span * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        let span = if self.y1 > self.y0 { self.y1 - self.y0 } else { 1.0 };
        HEIGHT - MARGIN - (y - self.y0) / span * (HEIGHT - 2.0 * MARGIN)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(svg: &mut String, title: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
}

fn axes(svg: &mut String, f: &Frame, x_label: &str, y_label: &str, x_ticks: &[f64], y_ticks: &[f64]) {
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(svg, r#"<g class="axes" stroke="black" fill="none">"#);
    let _ = writeln!(svg, r#"<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}"/>"#);
    let _ = writeln!(svg, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}"/>"#);
    let _ = writeln!(svg, "</g>");
    for &t in x_ticks {
        let x = f.px(t);
        let _ = writeln!(svg, r#"<line x1="{x:.2}" y1="{bottom}" x2="{x:.2}" y2="{}" stroke="black"/>"#, bottom + 4.0);
        let _ = writeln!(svg, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, bottom + 18.0, tick_label(t));
    }
    for &t in y_ticks {
        let y = f.py(t);
        let _ = writeln!(svg, r#"<line x1="{}" y1="{y:.2}" x2="{left}" y2="{y:.2}" stroke="black"/>"#, left - 4.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, left - 6.0, y + 4.0, tick_label(t));
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 14.0, escape(x_label));
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        HEIGHT / 2.0,
        escape(y_label)
    );
}

fn tick_label(v: f64) -> String {
    if v == v.round() && v.abs() < 1e6 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn linear_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Line chart of mean target error against round, one labeled polyline per
/// strategy. A single-point series (no selection rounds) is drawn flat
/// across the whole round range.
pub fn error_curves_svg(curves: &BTreeMap<String, Vec<(usize, f64)>>) -> String {
    let max_round = curves.values().flatten().map(|p| p.0).max().unwrap_or(0).max(1);
    let max_err = curves.values().flatten().map(|p| p.1).fold(0.0f64, f64::max);
    let y1 = if max_err > 0.0 { (max_err * 1.1).min(1.0) } else { 1.0 };
    let frame = Frame { x0: 0.0, x1: max_round as f64, y0: 0.0, y1 };
    let mut svg = String::new();
    open(&mut svg, "Target error by round");
    let x_ticks: Vec<f64> = (0..=max_round).map(|r| r as f64).collect();
    axes(&mut svg, &frame, "round", "target error", &x_ticks, &linear_ticks(0.0, y1, 5));
    for (i, (name, points)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts: Vec<(f64, f64)> = points.iter().map(|&(r, e)| (r as f64, e)).collect();
        if pts.len() == 1 {
            pts = vec![(0.0, pts[0].1), (max_round as f64, pts[0].1)];
        }
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="series" data-strategy="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            escape(name),
            coords.join(" ")
        );
        if let Some(&(x, y)) = pts.last() {
            let _ = writeln!(
                svg,
                r#"<text class="label" x="{:.2}" y="{:.2}" fill="{color}">{}</text>"#,
                frame.px(x) + 4.0,
                frame.py(y) - 4.0 - 12.0 * i as f64,
                escape(name)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Bar histogram of one run: per bin, a source and a target bar side by
/// side, each carrying its count in `data-count`.
pub fn histogram_svg(rows: &[HistogramRow], title: &str) -> String {
    let lo = rows.iter().map(|r| r.lo).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.hi).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if rows.is_empty() { (0.0, 1.0) } else { (lo, hi) };
    let max_count = rows.iter().map(|r| r.source_count.max(r.target_count)).max().unwrap_or(0).max(1);
    let frame = Frame { x0: lo, x1: if hi > lo { hi } else { lo + 1.0 }, y0: 0.0, y1: max_count as f64 };
    let mut svg = String::new();
    open(&mut svg, title);
    axes(&mut svg, &frame, "free energy", "count", &linear_ticks(frame.x0, frame.x1, 4), &linear_ticks(0.0, max_count as f64, 4));
    for (domain, color, offset) in [("source", PALETTE[0], 0.0), ("target", PALETTE[1], 0.5)] {
        let _ = writeln!(svg, r#"<g class="bars {domain}" fill="{color}" fill-opacity="0.8">"#);
        for r in rows {
            let count = if domain == "source" { r.source_count } else { r.target_count };
            let (x0, x1) = (frame.px(r.lo), frame.px(if r.hi > r.lo { r.hi } else { r.lo + (frame.x1 - frame.x0) / 64.0 }));
            let w = (x1 - x0) / 2.0;
            let top = frame.py(count as f64);
            let _ = writeln!(
                svg,
                r#"<rect class="bar" data-domain="{domain}" data-bin="{}" data-count="{count}" x="{:.2}" y="{top:.2}" width="{:.2}" height="{:.2}"/>"#,
                r.bin,
                x0 + offset * (x1 - x0),
                w.max(0.0),
                (frame.py(0.0) - top).max(0.0)
            );
        }
        let _ = writeln!(svg, "</g>");
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" fill="{}">source</text>"#, WIDTH - MARGIN - 60.0, MARGIN + 4.0, PALETTE[0]);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" fill="{}">target</text>"#, WIDTH - MARGIN - 60.0, MARGIN + 20.0, PALETTE[1]);
    svg.push_str("</svg>\n");
    svg
}

/// Mean target error per (strategy, round) from a metrics CSV. Only the
/// `strategy`, `round` and `target_error` columns are required.
pub fn read_curves<R: Read>(reader: R) -> Result<BTreeMap<String, Vec<(usize, f64)>>> {
    let cols = ["strategy", "round", "target_error"];
    let rows = read_rows(reader, &cols, |row, p| {
        Ok((row.field::<String>(p[0], cols[0])?, row.field::<usize>(p[1], cols[1])?, row.field::<f64>(p[2], cols[2])?))
    })?;
    let mut acc: BTreeMap<String, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for (s, r, e) in rows {
        let slot = acc.entry(s).or_default().entry(r).or_insert((0.0, 0));
        slot.0 += e;
        slot.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(s, m)| (s, m.into_iter().map(|(r, (sum, n))| (r, sum / n as f64)).collect()))
        .collect())
}

fn open_file(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))
}

fn write_svg(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg).map_err(|e| HarnessError::io(path, e))
}

/// Which run of a histogram file to draw; defaults to the first one listed.
#[derive(Debug, Clone, Default)]
pub struct RunFilter {
    pub strategy: Option<String>,
    pub seed: Option<u64>,
}

/// Renders `error_curves.svg` from the metrics file and one SVG per
/// histogram CSV into `out_dir`.
pub fn plot_files(metrics: &Path, histograms: &[PathBuf], filter: &RunFilter, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let curves = read_curves(open_file(metrics)?)?;
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let mut written = Vec::new();
    let path = out_dir.join("error_curves.svg");
    write_svg(&path, &error_curves_svg(&curves))?;
    written.push(path);

    for hist in histograms {
        let rows = read_histograms(open_file(hist)?)?;
        let strategy = filter.strategy.clone().or_else(|| rows.first().map(|r| r.strategy.name().to_string()));
        let seed = filter.seed.or_else(|| rows.first().map(|r| r.seed));
        let chosen: Vec<HistogramRow> = rows
            .into_iter()
            .filter(|r| strategy.as_deref().is_none_or(|s| r.strategy.name() == s) && seed.is_none_or(|s| r.seed == s))
            .collect();
        let stem = hist.file_stem().and_then(|s| s.to_str()).unwrap_or("histogram");
        let title = match (&strategy, seed) {
            (Some(s), Some(seed)) => format!("{stem}: {s}, seed {seed}"),
            _ => stem.to_string(),
        };
        let path = out_dir.join(format!("{stem}.svg"));
        write_svg(&path, &histogram_svg(&chosen, &title))?;
        written.push(path);
    }
    Ok(written)
}
