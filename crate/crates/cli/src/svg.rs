//! Minimal SVG plotting: framed panels with line and marker series, and
//! heat maps. Coordinates are written with fixed precision so output is
//! stable across runs.

use std::fmt::Write;

#[derive(Clone, Copy, Debug)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Clone, Copy, Debug)]
pub enum Style {
    Line { color: &'static str, dashed: bool },
    Markers { color: &'static str, hollow: bool },
    Steps { color: &'static str },
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

impl Series {
    pub fn line(label: impl Into<String>, points: Vec<(f64, f64)>, color: &'static str) -> Self {
        Self { label: label.into(), points, style: Style::Line { color, dashed: false } }
    }

    pub fn dashed(label: impl Into<String>, points: Vec<(f64, f64)>, color: &'static str) -> Self {
        Self { label: label.into(), points, style: Style::Line { color, dashed: true } }
    }

    pub fn markers(label: impl Into<String>, points: Vec<(f64, f64)>, color: &'static str, hollow: bool) -> Self {
        Self { label: label.into(), points, style: Style::Markers { color, hollow } }
    }

    pub fn steps(label: impl Into<String>, points: Vec<(f64, f64)>, color: &'static str) -> Self {
        Self { label: label.into(), points, style: Style::Steps { color } }
    }
}

#[derive(Clone, Debug)]
pub struct Panel {
    pub frame: Rect,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Fixed ranges; `None` fits the data.
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
    /// Logarithmic y axis; non-positive values are dropped.
    pub log_y: bool,
}

impl Panel {
    pub fn new(frame: Rect, title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Self {
            frame,
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            x_range: None,
            y_range: None,
            log_y: false,
        }
    }

    pub fn with(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }
}

pub enum ColorMap {
    /// Black through red to yellow.
    Heat,
    /// Blue at −1, white at 0, red at +1.
    Diverging,
}

impl ColorMap {
    fn color(&self, t: f64) -> (u8, u8, u8) {
        let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
        let c = |v: f64| (255.0 * v.clamp(0.0, 1.0)).round() as u8;
        match self {
            ColorMap::Heat => (c(3.0 * t), c(3.0 * t - 1.0), c(3.0 * t - 2.0)),
            ColorMap::Diverging => {
                let s = 2.0 * t - 1.0;
                if s < 0.0 {
                    (c(1.0 + s), c(1.0 + s), 255)
                } else {
                    (255, c(1.0 - s), c(1.0 - s))
                }
            }
        }
    }
}

pub struct HeatMap<'a> {
    pub frame: Rect,
    pub title: String,
    pub nx: usize,
    pub ny: usize,
    /// Row-major, x fastest.
    pub values: &'a [f64],
    pub range: (f64, f64),
    pub map: ColorMap,
    pub x_extent: (f64, f64),
    pub y_extent: (f64, f64),
}

pub struct Figure {
    width: f64,
    height: f64,
    body: String,
    title: String,
    hash: String,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn span(points: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = points
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        let pad = 0.5 * lo.abs().max(1.0);
        (lo - pad, hi + pad)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// Tick positions at 1, 2 or 5 times a power of ten.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let raw = (hi - lo) / target.max(1) as f64;
    if !(raw > 0.0) || !raw.is_finite() {
        return vec![lo];
    }
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].into_iter().map(|f| f * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn power_label(k: i32) -> String {
    if (-2..=4).contains(&k) {
        let v = 10f64.powi(k);
        tick_label(v, v)
    } else {
        format!("1e{k}")
    }
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    let s = format!("{v:.decimals$}");
    if s.starts_with("-") && s.trim_start_matches(['-', '0', '.']).is_empty() {
        s[1..].to_string()
    } else {
        s
    }
}

impl Figure {
    pub fn new(width: f64, height: f64, title: impl Into<String>, hash: impl Into<String>) -> Self {
        Self {
            width,
            height,
            body: String::new(),
            title: title.into(),
            hash: hash.into(),
        }
    }

    pub fn text(&mut self, x: f64, y: f64, s: &str, anchor: &str, size: f64) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size:.0}" text-anchor="{anchor}">{}</text>"#,
            esc(s)
        );
    }

    pub fn panel(&mut self, p: &Panel) {
        let ty = |y: f64| if p.log_y { if y > 0.0 { y.log10() } else { f64::NAN } } else { y };
        let (x0, x1) = p.x_range.unwrap_or_else(|| span(p.series.iter().flat_map(|s| s.points.iter().map(|q| q.0))));
        let (y0, y1) = match p.y_range {
            Some((a, b)) => (ty(a), ty(b)),
            None => span(p.series.iter().flat_map(|s| s.points.iter().map(|q| ty(q.1)))),
        };
        let f = p.frame;
        let sx = |x: f64| f.x + (x - x0) / (x1 - x0) * f.w;
        let sy = |y: f64| f.y + f.h - (ty(y) - y0) / (y1 - y0) * f.h;
        let b = &mut self.body;
        let _ = writeln!(b, r#"<g class="panel">"#);
        let _ = writeln!(
            b,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#ffffff" stroke="#000000"/>"##,
            f.x, f.y, f.w, f.h
        );
        let xt = nice_ticks(x0, x1, 6);
        let xstep = if xt.len() > 1 { xt[1] - xt[0] } else { 1.0 };
        for &t in &xt {
            let px = sx(t);
            let _ = writeln!(b, r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#000000"/>"##, f.y + f.h, f.y + f.h - 5.0);
            let _ = writeln!(b, r#"<text x="{px:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#, f.y + f.h + 14.0, tick_label(t, xstep));
        }
        let yt: Vec<(f64, String)> = if p.log_y {
            (y0.ceil() as i32..=y1.floor() as i32).map(|k| (10f64.powi(k), power_label(k))).collect()
        } else {
            let t = nice_ticks(y0, y1, 5);
            let step = if t.len() > 1 { t[1] - t[0] } else { 1.0 };
            t.into_iter().map(|v| (v, tick_label(v, step))).collect()
        };
        for (t, label) in &yt {
            let py = sy(*t);
            let _ = writeln!(b, r##"<line x1="{:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#000000"/>"##, f.x, f.x + 5.0);
            let _ = writeln!(b, r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{label}</text>"#, f.x - 4.0, py + 4.0);
        }
        let _ = writeln!(b, r#"<clipPath id="clip{:.0}x{:.0}"><rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/></clipPath>"#, f.x, f.y, f.x, f.y, f.w, f.h);
        let _ = writeln!(b, r#"<g clip-path="url(#clip{:.0}x{:.0})">"#, f.x, f.y);
        for s in &p.series {
            let mapped: Vec<Option<(f64, f64)>> = s
                .points
                .iter()
                .map(|&(x, y)| {
                    let q = (sx(x), sy(y));
                    (q.0.is_finite() && q.1.is_finite()).then_some(q)
                })
                .collect();
            // runs of drawable points; gaps split lines
            let runs: Vec<Vec<(f64, f64)>> = mapped
                .split(|q| q.is_none())
                .filter(|r| !r.is_empty())
                .map(|r| r.iter().flatten().copied().collect())
                .collect();
            let pts: Vec<(f64, f64)> = mapped.iter().flatten().copied().collect();
            let half = 0.5 * s.points.windows(2).next().map_or(1.0, |w| sx(w[1].0) - sx(w[0].0));
            match s.style {
                Style::Line { color, dashed } => {
                    let dash = if dashed { r#" stroke-dasharray="6,4""# } else { "" };
                    for run in &runs {
                        let path: Vec<String> = run.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                        let _ = writeln!(b, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#, path.join(" "));
                    }
                }
                Style::Steps { color } => {
                    for run in &runs {
                        let mut path = Vec::with_capacity(2 * run.len());
                        for (x, y) in run {
                            path.push(format!("{:.2},{y:.2}", x - half));
                            path.push(format!("{:.2},{y:.2}", x + half));
                        }
                        let _ = writeln!(b, r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#, path.join(" "));
                    }
                }
                Style::Markers { color, hollow } => {
                    let fill = if hollow { "none" } else { color };
                    for (x, y) in &pts {
                        let _ = writeln!(b, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{fill}" stroke="{color}"/>"#);
                    }
                }
            }
        }
        let _ = writeln!(b, "</g>");
        let mut ly = f.y + 16.0;
        for s in p.series.iter().filter(|s| !s.label.is_empty()) {
            let color = match s.style {
                Style::Line { color, .. } | Style::Markers { color, .. } | Style::Steps { color } => color,
            };
            let _ = writeln!(
                b,
                r#"<text x="{:.2}" y="{ly:.2}" font-size="11" text-anchor="end" fill="{color}">{}</text>"#,
                f.x + f.w - 6.0,
                esc(&s.label)
            );
            ly += 14.0;
        }
        let _ = writeln!(b, "</g>");
        self.text(f.x + 0.5 * f.w, f.y - 8.0, &p.title, "middle", 13.0);
        self.text(f.x + 0.5 * f.w, f.y + f.h + 32.0, &p.x_label, "middle", 12.0);
        let (lx, ly) = (f.x - 44.0, f.y + 0.5 * f.h);
        let _ = writeln!(
            self.body,
            r#"<text x="{lx:.2}" y="{ly:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 {lx:.2} {ly:.2})">{}</text>"#,
            esc(&p.y_label)
        );
    }

    pub fn heatmap(&mut self, h: &HeatMap) {
        let f = h.frame;
        let (cw, ch) = (f.w / h.nx as f64, f.h / h.ny as f64);
        let span = h.range.1 - h.range.0;
        let b = &mut self.body;
        let _ = writeln!(b, r#"<g class="heatmap" shape-rendering="crispEdges">"#);
        for j in 0..h.ny {
            for i in 0..h.nx {
                let v = h.values[j * h.nx + i];
                let (r, g, bl) = h.map.color(if span > 0.0 { (v - h.range.0) / span } else { 0.5 });
                let _ = writeln!(
                    b,
                    r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#{r:02x}{g:02x}{bl:02x}"/>"##,
                    f.x + i as f64 * cw,
                    f.y + f.h - (j + 1) as f64 * ch,
                    cw + 0.05,
                    ch + 0.05
                );
            }
        }
        let _ = writeln!(
            b,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#000000"/>"##,
            f.x, f.y, f.w, f.h
        );
        let _ = writeln!(b, "</g>");
        self.text(f.x + 0.5 * f.w, f.y - 8.0, &h.title, "middle", 13.0);
        self.text(f.x, f.y + f.h + 14.0, &format!("x {:.2}..{:.2}", h.x_extent.0, h.x_extent.1), "start", 11.0);
        self.text(f.x + f.w, f.y + f.h + 14.0, &format!("y {:.2}..{:.2} (1/k)", h.y_extent.0, h.y_extent.1), "end", 11.0);
        self.text(
            f.x + 0.5 * f.w,
            f.y + f.h + 30.0,
            &format!("color scale {:.3} .. {:.3}", h.range.0, h.range.1),
            "middle",
            11.0,
        );
    }

    pub fn finish(self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.0} {:.0}" font-family="sans-serif">"#,
            self.width, self.height, self.width, self.height
        );
        let _ = writeln!(s, "<title>{}</title>", esc(&self.title));
        let _ = writeln!(s, "<metadata>run-manifest-sha256: {}</metadata>", esc(&self.hash));
        let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
        s.push_str(&self.body);
        s.push_str("</svg>\n");
        s
    }
}
