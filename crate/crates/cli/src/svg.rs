//! Minimal static SVG charts. Output is a pure function of the input, so the
//! same data always renders to the same bytes.

use std::fmt::Write;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 300.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 44.0;

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct LinePanel {
    pub title: String,
    pub series: Vec<Series>,
}

pub struct BarPanel {
    pub title: String,
    pub note: String,
    pub values: Vec<f64>,
}

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn tick_label(v: f64, span: f64) -> String {
    if span >= 20.0 {
        format!("{v:.0}")
    } else if span >= 2.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn covering(values: impl Iterator<Item = f64>, include_zero: bool) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Axis { lo: 0.0, hi: 1.0 };
        }
        if include_zero {
            lo = lo.min(0.0);
            hi = hi.max(0.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        Axis { lo, hi }
    }

    fn map(self, v: f64, from: f64, to: f64) -> f64 {
        from + (v - self.lo) / (self.hi - self.lo) * (to - from)
    }

    fn ticks(self) -> impl Iterator<Item = f64> {
        (0..=4).map(move |i| self.lo + (self.hi - self.lo) * i as f64 / 4.0)
    }
}

fn document(title: &str, panels: usize, body: &str) -> String {
    let height = TOP + panels.max(1) as f64 * PANEL_HEIGHT;
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{cx}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{t}</text>\n{body}</svg>\n",
        w = num(WIDTH),
        h = num(height),
        cx = num(WIDTH / 2.0),
        t = escape(title),
    )
}

/// Plot area in pixels; `y0` is the bottom edge.
#[derive(Clone, Copy)]
struct Area {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

fn frame(out: &mut String, area: Area, xs: Axis, ys: Axis, x_label: &str) {
    let Area { x0, x1, y0, y1 } = area;
    let _ = writeln!(
        out,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>",
        num(x0),
        num(y1),
        num(x1 - x0),
        num(y0 - y1)
    );
    for v in ys.ticks() {
        let y = ys.map(v, y0, y1);
        let _ = writeln!(
            out,
            "<line x1=\"{a}\" y1=\"{y}\" x2=\"{b}\" y2=\"{y}\" stroke=\"#ddd\"/><text x=\"{t}\" y=\"{ty}\" text-anchor=\"end\">{l}</text>",
            a = num(x0),
            b = num(x1),
            y = num(y),
            t = num(x0 - 6.0),
            ty = num(y + 4.0),
            l = tick_label(v, ys.hi - ys.lo)
        );
    }
    for v in xs.ticks() {
        let x = xs.map(v, x0, x1);
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            num(x),
            num(y0 + 16.0),
            tick_label(v, xs.hi - xs.lo)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        num((x0 + x1) / 2.0),
        num(y0 + 34.0),
        escape(x_label)
    );
}

/// One line chart per panel, stacked vertically. Every series becomes a
/// `<polyline class="curve">`.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, panels: &[LinePanel]) -> String {
    let mut body = String::new();
    for (p, panel) in panels.iter().enumerate() {
        let top = TOP + p as f64 * PANEL_HEIGHT;
        let (x0, x1) = (LEFT, WIDTH - RIGHT);
        let (y0, y1) = (top + PANEL_HEIGHT - BOTTOM, top + 24.0);
        let _ = writeln!(
            body,
            "<g class=\"panel\">\n<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            num((x0 + x1) / 2.0),
            num(top + 14.0),
            escape(&panel.title)
        );
        let _ = writeln!(
            body,
            "<text transform=\"translate({},{}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
            num(16.0),
            num((y0 + y1) / 2.0),
            escape(y_label)
        );
        let points = || panel.series.iter().flat_map(|s| s.points.iter());
        let xs = Axis::covering(points().map(|p| p.0), false);
        let ys = Axis::covering(points().map(|p| p.1), false);
        frame(&mut body, Area { x0, x1, y0, y1 }, xs, ys, x_label);
        if panel.series.is_empty() {
            let _ = writeln!(
                body,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#888\">no data</text>",
                num((x0 + x1) / 2.0),
                num((y0 + y1) / 2.0)
            );
        }
        for (i, s) in panel.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let coords: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{},{}", num(xs.map(x, x0, x1)), num(ys.map(y, y0, y1))))
                .collect();
            let _ = writeln!(
                body,
                "<polyline class=\"curve\" data-series=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
                escape(&s.name),
                coords.join(" ")
            );
            let ly = y1 + 16.0 * i as f64;
            let _ = writeln!(
                body,
                "<line x1=\"{a}\" y1=\"{y}\" x2=\"{b}\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{t}\" y=\"{ty}\">{n}</text>",
                a = num(x1 + 12.0),
                b = num(x1 + 32.0),
                y = num(ly),
                t = num(x1 + 38.0),
                ty = num(ly + 4.0),
                n = escape(&s.name)
            );
        }
        body.push_str("</g>\n");
    }
    document(title, panels.len(), &body)
}

/// One bar chart per panel, one bar per value, positive bars green and
/// negative bars red around a zero line.
pub fn bar_chart(title: &str, x_label: &str, y_label: &str, panels: &[BarPanel]) -> String {
    let mut body = String::new();
    for (p, panel) in panels.iter().enumerate() {
        let top = TOP + p as f64 * PANEL_HEIGHT;
        let (x0, x1) = (LEFT, WIDTH - RIGHT);
        let (y0, y1) = (top + PANEL_HEIGHT - BOTTOM, top + 24.0);
        let _ = writeln!(
            body,
            "<g class=\"panel\">\n<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            num((x0 + x1) / 2.0),
            num(top + 14.0),
            escape(&panel.title)
        );
        let _ = writeln!(
            body,
            "<text transform=\"translate({},{}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
            num(16.0),
            num((y0 + y1) / 2.0),
            escape(y_label)
        );
        let _ = writeln!(
            body,
            "<text x=\"{}\" y=\"{}\">{}</text>",
            num(x1 + 12.0),
            num(y1 + 4.0),
            escape(&panel.note)
        );
        let n = panel.values.len().max(1);
        let xs = Axis {
            lo: -0.5,
            hi: n as f64 - 0.5,
        };
        let ys = Axis::covering(panel.values.iter().copied(), true);
        let _ = writeln!(
            body,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>",
            num(x0),
            num(y1),
            num(x1 - x0),
            num(y0 - y1)
        );
        for v in ys.ticks() {
            let y = ys.map(v, y0, y1);
            let _ = writeln!(
                body,
                "<line x1=\"{a}\" y1=\"{y}\" x2=\"{b}\" y2=\"{y}\" stroke=\"#ddd\"/><text x=\"{t}\" y=\"{ty}\" text-anchor=\"end\">{l}</text>",
                a = num(x0),
                b = num(x1),
                y = num(y),
                t = num(x0 - 6.0),
                ty = num(y + 4.0),
                l = tick_label(v, ys.hi - ys.lo)
            );
        }
        let zero = ys.map(0.0, y0, y1);
        let slot = (x1 - x0) / n as f64;
        for (i, &v) in panel.values.iter().enumerate() {
            let cx = xs.map(i as f64, x0, x1);
            let y = ys.map(v, y0, y1);
            let color = if v > 0.0 {
                "#2ca02c"
            } else if v < 0.0 {
                "#d62728"
            } else {
                "#999"
            };
            let _ = writeln!(
                body,
                "<rect class=\"bar\" data-class=\"{i}\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{color}\"/>",
                num(cx - 0.35 * slot),
                num(y.min(zero)),
                num(0.7 * slot),
                num((y - zero).abs())
            );
            let _ = writeln!(
                body,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{i}</text>",
                num(cx),
                num(y0 + 16.0)
            );
        }
        let _ = writeln!(
            body,
            "<line x1=\"{}\" y1=\"{z}\" x2=\"{}\" y2=\"{z}\" stroke=\"#444\"/>",
            num(x0),
            num(x1),
            z = num(zero)
        );
        let _ = writeln!(
            body,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n</g>",
            num((x0 + x1) / 2.0),
            num(y0 + 34.0),
            escape(x_label)
        );
    }
    document(title, panels.len(), &body)
}
