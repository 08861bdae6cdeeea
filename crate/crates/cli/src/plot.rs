//! Minimal deterministic PNG figures: grouped bars and box plots drawn
//! directly onto an RGB byte canvas with a 5x7 bitmap font. Byte-identical
//! output for identical inputs is part of the CLI contract, which rules out
//! system font rasterizers.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use aegan_core::{Error, Result};

pub type Color = [u8; 3];

const BG: Color = [255, 255, 255];
const AXIS: Color = [60, 60, 60];
const GRID: Color = [225, 225, 225];

/// Series palette; figures cycle when a caller brings more reports than hues.
pub const SERIES: [Color; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

pub fn series_color(i: usize) -> Color {
    SERIES[i % SERIES.len()]
}

pub struct Canvas {
    w: usize,
    h: usize,
    px: Vec<u8>,
}

impl Canvas {
    pub fn new(w: usize, h: usize) -> Canvas {
        Canvas { w, h, px: vec![BG[0]; w * h * 3] }
    }

    fn put(&mut self, x: i64, y: i64, c: Color) {
        if x < 0 || y < 0 || x >= self.w as i64 || y >= self.h as i64 {
            return;
        }
        let i = (y as usize * self.w + x as usize) * 3;
        self.px[i..i + 3].copy_from_slice(&c);
    }

    pub fn fill(&mut self, x: i64, y: i64, w: i64, h: i64, c: Color) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(xx, yy, c);
            }
        }
    }

    pub fn hline(&mut self, x: i64, y: i64, w: i64, c: Color) {
        self.fill(x, y, w, 1, c);
    }

    pub fn vline(&mut self, x: i64, y: i64, h: i64, c: Color) {
        self.fill(x, y, 1, h, c);
    }

    pub fn frame(&mut self, x: i64, y: i64, w: i64, h: i64, c: Color) {
        self.hline(x, y, w, c);
        self.hline(x, y + h - 1, w, c);
        self.vline(x, y, h, c);
        self.vline(x + w - 1, y, h, c);
    }

    /// 5x7 glyphs on a 6-pixel advance; lowercase is folded to uppercase.
    pub fn text(&mut self, x: i64, y: i64, s: &str, c: Color) {
        let mut cx = x;
        for ch in s.chars() {
            let g = glyph(ch.to_ascii_uppercase());
            for (col, bits) in g.iter().enumerate() {
                for row in 0..7 {
                    if bits >> row & 1 == 1 {
                        self.put(cx + col as i64, y + row, c);
                    }
                }
            }
            cx += 6;
        }
    }

    pub fn text_width(s: &str) -> i64 {
        6 * s.chars().count() as i64 - 1
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.w as u32, self.h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::data(format!("png '{}': {e}", path.display())))?;
        writer
            .write_image_data(&self.px)
            .map_err(|e| Error::data(format!("png '{}': {e}", path.display())))?;
        Ok(())
    }
}

/// Column bitmaps (bit 0 = top row) for the characters the figures use.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [0x3E, 0x51, 0x49, 0x45, 0x3E],
        '1' => [0x00, 0x42, 0x7F, 0x40, 0x00],
        '2' => [0x42, 0x61, 0x51, 0x49, 0x46],
        '3' => [0x21, 0x41, 0x45, 0x4B, 0x31],
        '4' => [0x18, 0x14, 0x12, 0x7F, 0x10],
        '5' => [0x27, 0x45, 0x45, 0x45, 0x39],
        '6' => [0x3C, 0x4A, 0x49, 0x49, 0x30],
        '7' => [0x01, 0x71, 0x09, 0x05, 0x03],
        '8' => [0x36, 0x49, 0x49, 0x49, 0x36],
        '9' => [0x06, 0x49, 0x49, 0x29, 0x1E],
        'A' => [0x7E, 0x11, 0x11, 0x11, 0x7E],
        'B' => [0x7F, 0x49, 0x49, 0x49, 0x36],
        'C' => [0x3E, 0x41, 0x41, 0x41, 0x22],
        'D' => [0x7F, 0x41, 0x41, 0x22, 0x1C],
        'E' => [0x7F, 0x49, 0x49, 0x49, 0x41],
        'F' => [0x7F, 0x09, 0x09, 0x09, 0x01],
        'G' => [0x3E, 0x41, 0x49, 0x49, 0x7A],
        'H' => [0x7F, 0x08, 0x08, 0x08, 0x7F],
        'I' => [0x00, 0x41, 0x7F, 0x41, 0x00],
        'J' => [0x20, 0x40, 0x41, 0x3F, 0x01],
        'K' => [0x7F, 0x08, 0x14, 0x22, 0x41],
        'L' => [0x7F, 0x40, 0x40, 0x40, 0x40],
        'M' => [0x7F, 0x02, 0x0C, 0x02, 0x7F],
        'N' => [0x7F, 0x04, 0x08, 0x10, 0x7F],
        'O' => [0x3E, 0x41, 0x41, 0x41, 0x3E],
        'P' => [0x7F, 0x09, 0x09, 0x09, 0x06],
        'Q' => [0x3E, 0x41, 0x51, 0x21, 0x5E],
        'R' => [0x7F, 0x09, 0x19, 0x29, 0x46],
        'S' => [0x46, 0x49, 0x49, 0x49, 0x31],
        'T' => [0x01, 0x01, 0x7F, 0x01, 0x01],
        'U' => [0x3F, 0x40, 0x40, 0x40, 0x3F],
        'V' => [0x1F, 0x20, 0x40, 0x20, 0x1F],
        'W' => [0x7F, 0x20, 0x18, 0x20, 0x7F],
        'X' => [0x63, 0x14, 0x08, 0x14, 0x63],
        'Y' => [0x07, 0x08, 0x70, 0x08, 0x07],
        'Z' => [0x61, 0x51, 0x49, 0x45, 0x43],
        ' ' => [0x00, 0x00, 0x00, 0x00, 0x00],
        '-' => [0x08, 0x08, 0x08, 0x08, 0x08],
        '.' => [0x00, 0x60, 0x60, 0x00, 0x00],
        ',' => [0x00, 0x50, 0x30, 0x00, 0x00],
        '%' => [0x23, 0x13, 0x08, 0x64, 0x62],
        '/' => [0x20, 0x10, 0x08, 0x04, 0x02],
        ':' => [0x00, 0x36, 0x36, 0x00, 0x00],
        '=' => [0x14, 0x14, 0x14, 0x14, 0x14],
        '(' => [0x00, 0x1C, 0x22, 0x41, 0x00],
        ')' => [0x00, 0x41, 0x22, 0x1C, 0x00],
        '+' => [0x08, 0x08, 0x3E, 0x08, 0x08],
        '_' => [0x40, 0x40, 0x40, 0x40, 0x40],
        // anything else renders as a hollow box rather than vanishing
        _ => [0x7F, 0x41, 0x41, 0x41, 0x7F],
    }
}

/// One cluster of bars: a shared x label and one optional value per series.
pub struct BarGroup {
    pub label: String,
    pub values: Vec<Option<f64>>,
}

/// One cluster of boxes: a shared x label and one sample set per series.
pub struct BoxGroup {
    pub label: String,
    pub samples: Vec<Vec<f64>>,
}

const BAR_W: i64 = 16;
const PAD_IN: i64 = 12;
const MARGIN_L: i64 = 46;
const MARGIN_R: i64 = 12;
const PANEL_H: i64 = 130;
const LABEL_H: i64 = 12;

/// Group pitch: wide enough for the bar cluster and for the longest x label.
fn group_width(n_series: usize, max_label_chars: usize) -> i64 {
    let cluster = n_series as i64 * (BAR_W + 3) + PAD_IN;
    cluster.max(6 * max_label_chars as i64 + 9)
}

fn max_label_chars<'a>(labels: impl Iterator<Item = &'a str>) -> usize {
    labels.map(|l| l.chars().count()).max().unwrap_or(0)
}

fn canvas_width(gw: i64, n_groups: usize) -> usize {
    (MARGIN_L + n_groups as i64 * gw + MARGIN_R) as usize
}

fn fmt_val(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 10.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    }
}

/// Upper axis bound: the data maximum with a little headroom, never zero.
fn scale_max(values: impl Iterator<Item = f64>, floor: f64) -> f64 {
    let mut m = floor;
    for v in values {
        if v.is_finite() && v > m {
            m = v;
        }
    }
    m * 1.08
}

fn legend(canvas: &mut Canvas, x: i64, y: i64, labels: &[String]) {
    let mut cx = x;
    for (i, label) in labels.iter().enumerate() {
        canvas.fill(cx, y, 8, 8, series_color(i));
        canvas.text(cx + 11, y, label, AXIS);
        cx += 11 + Canvas::text_width(label) + 14;
    }
}

/// Draw one framed bar panel with three horizontal guides and per-group
/// clusters. Missing values render as a small "N/A" at the baseline.
fn bar_panel(
    canvas: &mut Canvas,
    x0: i64,
    y0: i64,
    title: &str,
    groups: &[BarGroup],
    n_series: usize,
    gw: i64,
    vmax: f64,
) {
    let w = groups.len() as i64 * gw;
    canvas.text(x0, y0, title, AXIS);
    let py = y0 + LABEL_H;
    canvas.frame(x0 - 1, py - 1, w + 2, PANEL_H + 2, AXIS);
    for tick in 1..=2i64 {
        let gy = py + PANEL_H - (tick * PANEL_H / 3);
        canvas.hline(x0, gy, w, GRID);
        let v = vmax * tick as f64 / 3.0;
        let s = fmt_val(v);
        canvas.text(x0 - Canvas::text_width(&s) - 5, gy - 3, &s, AXIS);
    }
    let s = fmt_val(vmax);
    canvas.text(x0 - Canvas::text_width(&s) - 5, py - 3, &s, AXIS);
    canvas.text(x0 - Canvas::text_width("0") - 5, py + PANEL_H - 4, "0", AXIS);

    let cluster = n_series as i64 * (BAR_W + 3) - 3;
    for (gi, g) in groups.iter().enumerate() {
        let gx = x0 + gi as i64 * gw + (gw - cluster) / 2;
        for si in 0..n_series {
            let bx = gx + si as i64 * (BAR_W + 3);
            match g.values.get(si).copied().flatten() {
                Some(v) if v.is_finite() => {
                    let bh = ((v / vmax).clamp(0.0, 1.0) * (PANEL_H - 2) as f64).round() as i64;
                    canvas.fill(bx, py + PANEL_H - 1 - bh, BAR_W, bh, series_color(si));
                }
                _ => canvas.text(bx, py + PANEL_H - 9, "N/A", AXIS),
            }
        }
        let lw = Canvas::text_width(&g.label);
        canvas.text(x0 + gi as i64 * gw + (gw - lw) / 2, py + PANEL_H + 4, &g.label, AXIS);
    }
}

/// A single-panel grouped bar chart with a legend row on top.
pub fn bar_chart(
    path: &Path,
    title: &str,
    series_labels: &[String],
    groups: &[BarGroup],
    vmax_floor: f64,
) -> Result<()> {
    let n_series = series_labels.len();
    let gw = group_width(n_series, max_label_chars(groups.iter().map(|g| g.label.as_str())));
    let w = canvas_width(gw, groups.len()).max(260);
    let h = (14 + LABEL_H + PANEL_H + 18 + 12) as usize;
    let mut canvas = Canvas::new(w, h);
    legend(&mut canvas, MARGIN_L, 3, series_labels);
    let vmax = scale_max(
        groups.iter().flat_map(|g| g.values.iter().copied().flatten()),
        vmax_floor,
    );
    bar_panel(&mut canvas, MARGIN_L, 14, title, groups, n_series, gw, vmax);
    canvas.save(path)
}

/// Three stacked bar panels (one per metric) sharing x groups and legend.
pub fn metric_panels(
    path: &Path,
    panels: &[(&str, Vec<BarGroup>, f64)],
    series_labels: &[String],
) -> Result<()> {
    let n_series = series_labels.len();
    let n_groups = panels.iter().map(|(_, g, _)| g.len()).max().unwrap_or(0);
    let gw = group_width(
        n_series,
        max_label_chars(panels.iter().flat_map(|(_, g, _)| g.iter().map(|b| b.label.as_str()))),
    );
    let w = canvas_width(gw, n_groups).max(260);
    let step = LABEL_H + PANEL_H + 18 + 10;
    let h = (14 + panels.len() as i64 * step + 4) as usize;
    let mut canvas = Canvas::new(w, h);
    legend(&mut canvas, MARGIN_L, 3, series_labels);
    for (i, (title, groups, floor)) in panels.iter().enumerate() {
        let vmax = scale_max(
            groups.iter().flat_map(|g| g.values.iter().copied().flatten()),
            *floor,
        );
        bar_panel(&mut canvas, MARGIN_L, 14 + i as i64 * step, title, groups, n_series, gw, vmax);
    }
    canvas.save(path)
}

/// Linear-interpolation quantile over an ascending sample.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Grouped box-and-whisker chart: median line, quartile box, min/max
/// whiskers. Empty sample sets leave a gap.
pub fn box_chart(
    path: &Path,
    title: &str,
    series_labels: &[String],
    groups: &[BoxGroup],
) -> Result<()> {
    let n_series = series_labels.len();
    let gw = group_width(n_series, max_label_chars(groups.iter().map(|g| g.label.as_str())));
    let w = canvas_width(gw, groups.len()).max(260);
    let h = (14 + LABEL_H + PANEL_H + 18 + 12) as usize;
    let mut canvas = Canvas::new(w, h);
    legend(&mut canvas, MARGIN_L, 3, series_labels);

    let vmax = scale_max(
        groups.iter().flat_map(|g| g.samples.iter().flatten().copied()),
        1e-12,
    );
    let x0 = MARGIN_L;
    let y0 = 14;
    canvas.text(x0, y0, title, AXIS);
    let py = y0 + LABEL_H;
    let pw = groups.len() as i64 * gw;
    canvas.frame(x0 - 1, py - 1, pw + 2, PANEL_H + 2, AXIS);
    for tick in 1..=2i64 {
        let gy = py + PANEL_H - (tick * PANEL_H / 3);
        canvas.hline(x0, gy, pw, GRID);
        let s = fmt_val(vmax * tick as f64 / 3.0);
        canvas.text(x0 - Canvas::text_width(&s) - 5, gy - 3, &s, AXIS);
    }
    let s = fmt_val(vmax);
    canvas.text(x0 - Canvas::text_width(&s) - 5, py - 3, &s, AXIS);

    let ypix = |v: f64| py + PANEL_H - 1 - ((v / vmax).clamp(0.0, 1.0) * (PANEL_H - 2) as f64).round() as i64;
    let gw = group_width(n_series);
    let cluster = n_series as i64 * (BAR_W + 3) - 3;
    for (gi, g) in groups.iter().enumerate() {
        let gx = x0 + gi as i64 * gw + (gw - cluster) / 2;
        for (si, samples) in g.samples.iter().enumerate() {
            if samples.is_empty() {
                continue;
            }
            let mut sorted = samples.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let (q1, q2, q3) = (quantile(&sorted, 0.25), quantile(&sorted, 0.5), quantile(&sorted, 0.75));
            let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
            let bx = gx + si as i64 * (BAR_W + 3);
            let mid = bx + BAR_W / 2;
            let c = series_color(si);
            canvas.vline(mid, ypix(hi), ypix(q3) - ypix(hi) + 1, c);
            canvas.vline(mid, ypix(q1), ypix(lo) - ypix(q1) + 1, c);
            canvas.hline(bx + 3, ypix(hi), BAR_W - 6, c);
            canvas.hline(bx + 3, ypix(lo), BAR_W - 6, c);
            canvas.frame(bx, ypix(q3), BAR_W, (ypix(q1) - ypix(q3) + 1).max(2), c);
            canvas.hline(bx + 1, ypix(q2), BAR_W - 2, AXIS);
        }
        let lw = Canvas::text_width(&g.label);
        canvas.text(x0 + gi as i64 * gw + (gw - lw) / 2, py + PANEL_H + 4, &g.label, AXIS);
    }
    canvas.save(path)
}
