//! Minimal SVG line charts. Output is a pure function of the inputs.

use std::fmt::Write;

pub(crate) const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub(crate) fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub(crate) struct Point {
    pub x: f64,
    pub y: f64,
    /// `data-*` attributes as `(name, value)`.
    pub data: Vec<(&'static str, String)>,
}

pub(crate) struct Series {
    pub label: String,
    pub points: Vec<Point>,
}

pub(crate) struct Panel<'a> {
    pub title: &'a str,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub series: &'a [Series],
    pub baseline: Option<f64>,
    /// Shown instead of the axes content when there is nothing to plot.
    pub placeholder: Option<(&'a str, Vec<(&'static str, String)>)>,
}

pub(crate) struct Svg {
    buf: String,
}

fn attrs(data: &[(&'static str, String)]) -> String {
    data.iter()
        .map(|(k, v)| format!(" data-{k}=\"{}\"", esc(v)))
        .collect()
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        let mut buf = String::new();
        writeln!(
            buf,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"10\">"
        )
        .unwrap();
        writeln!(buf, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>").unwrap();
        Svg { buf }
    }

    pub fn text(&mut self, x: f64, y: f64, anchor: &str, size: f64, s: &str) {
        writeln!(
            self.buf,
            "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\" font-size=\"{size}\">{}</text>",
            esc(s)
        )
        .unwrap();
    }

    /// Draw one chart panel with its frame at `(x0, y0)`.
    pub fn panel(&mut self, x0: f64, y0: f64, w: f64, h: f64, p: &Panel<'_>) {
        let (l, r, t, b) = (x0 + 34.0, x0 + w - 6.0, y0 + 16.0, y0 + h - 16.0);
        writeln!(
            self.buf,
            "<g class=\"panel\" data-title=\"{}\">",
            esc(p.title)
        )
        .unwrap();
        self.text((l + r) / 2.0, y0 + 11.0, "middle", 10.0, p.title);
        writeln!(
            self.buf,
            "<rect x=\"{l:.1}\" y=\"{t:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#999\"/>",
            r - l,
            b - t
        )
        .unwrap();
        if let Some((msg, data)) = &p.placeholder {
            writeln!(
                self.buf,
                "<text class=\"absent\" x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"#888\"{}>{}</text>",
                (l + r) / 2.0,
                (t + b) / 2.0,
                attrs(data),
                esc(msg)
            )
            .unwrap();
        }
        let (x_lo, x_hi) = if p.x_range.1 > p.x_range.0 {
            p.x_range
        } else {
            (p.x_range.0 - 1.0, p.x_range.0 + 1.0)
        };
        let (y_lo, y_hi) = p.y_range;
        let sx = |x: f64| l + (x - x_lo) / (x_hi - x_lo) * (r - l);
        let sy = |y: f64| b - (y.clamp(y_lo, y_hi) - y_lo) / (y_hi - y_lo) * (b - t);
        self.text(l - 3.0, b, "end", 8.0, &format!("{y_lo}"));
        self.text(l - 3.0, t + 6.0, "end", 8.0, &format!("{y_hi}"));
        self.text(l, b + 11.0, "start", 8.0, &format!("{x_lo}"));
        self.text(r, b + 11.0, "end", 8.0, &format!("{x_hi}"));
        if let Some(base) = p.baseline {
            writeln!(
                self.buf,
                "<line class=\"baseline\" x1=\"{l:.1}\" y1=\"{y:.2}\" x2=\"{r:.1}\" y2=\"{y:.2}\" stroke=\"#555\" stroke-dasharray=\"4 3\" data-value=\"{}\"/>",
                super::fmt_num(base),
                y = sy(base)
            )
            .unwrap();
        }
        for (i, s) in p.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            writeln!(self.buf, "<g class=\"series\" data-label=\"{}\">", esc(&s.label)).unwrap();
            if s.points.len() > 1 {
                let pts: Vec<String> = s
                    .points
                    .iter()
                    .map(|pt| format!("{:.2},{:.2}", sx(pt.x), sy(pt.y)))
                    .collect();
                writeln!(
                    self.buf,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\"/>",
                    pts.join(" ")
                )
                .unwrap();
            }
            for pt in &s.points {
                writeln!(
                    self.buf,
                    "<circle class=\"point\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{color}\"{}/>",
                    sx(pt.x),
                    sy(pt.y),
                    attrs(&pt.data)
                )
                .unwrap();
            }
            writeln!(self.buf, "</g>").unwrap();
        }
        writeln!(self.buf, "</g>").unwrap();
    }

    pub fn legend(&mut self, x: f64, y: f64, labels: &[String]) {
        for (i, label) in labels.iter().enumerate() {
            let yy = y + 12.0 * i as f64;
            writeln!(
                self.buf,
                "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"8\" height=\"8\" fill=\"{}\"/>",
                yy - 7.0,
                COLORS[i % COLORS.len()]
            )
            .unwrap();
            self.text(x + 12.0, yy, "start", 9.0, label);
        }
    }

    pub fn finish(mut self) -> String {
        self.buf.push_str("</svg>\n");
        self.buf
    }
}
