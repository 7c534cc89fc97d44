//! Minimal deterministic SVG charts.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn colour(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let pad = |lo: f64, hi: f64| {
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo == 0.0 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        Self {
            x: pad(x0, x1),
            y: pad(y0, y1),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn header(out: &mut String, title: &str, frame: &Frame, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        out,
        r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (v, x, y, anchor) in [
        (frame.x.0, l, b + 14.0, "start"),
        (frame.x.1, r, b + 14.0, "end"),
        (frame.y.0, l - 4.0, b, "end"),
        (frame.y.1, l - 4.0, t + 4.0, "end"),
    ] {
        let _ = writeln!(out, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{v:.3}</text>"#);
    }
}

fn legend(out: &mut String, names: &[String]) {
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN + 14.0 * i as f64;
        let x = WIDTH - MARGIN + 6.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{}" width="8" height="8" fill="{}"/>"#,
            y - 8.0,
            colour(i)
        );
        let _ = writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 11.0, escape(name));
    }
}

/// Scatter plot; `groups[i]` indexes into `group_names` and picks the colour.
pub fn scatter_svg(title: &str, points: &[[f64; 2]], groups: &[usize], group_names: &[String]) -> String {
    let frame = Frame::fit(points.iter().map(|p| (p[0], p[1])));
    let mut out = String::new();
    header(&mut out, title, &frame, "component 1", "component 2");
    for (p, &g) in points.iter().zip(groups) {
        if p[0].is_finite() && p[1].is_finite() {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}" fill-opacity="0.6"/>"#,
                frame.px(p[0]),
                frame.py(p[1]),
                colour(g)
            );
        }
    }
    legend(&mut out, group_names);
    out.push_str("</svg>\n");
    out
}

/// One line of a line chart, with an optional shaded band.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub band: Option<Vec<(f64, f64)>>,
}

pub fn line_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let frame = Frame::fit(series.iter().flat_map(|s| {
        let band = s
            .band
            .iter()
            .flatten()
            .zip(&s.points)
            .flat_map(|(&(lo, hi), &(x, _))| [(x, lo), (x, hi)]);
        s.points.iter().copied().chain(band)
    }));
    let mut out = String::new();
    header(&mut out, title, &frame, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        if let Some(band) = &s.band {
            let mut d = String::new();
            let upper = s.points.iter().zip(band).map(|(&(x, _), &(_, hi))| (x, hi));
            let lower = s.points.iter().zip(band).rev().map(|(&(x, _), &(lo, _))| (x, lo));
            for (j, (x, y)) in upper.chain(lower).enumerate() {
                let _ = write!(
                    d,
                    "{}{:.2} {:.2} ",
                    if j == 0 { "M" } else { "L" },
                    frame.px(x),
                    frame.py(y)
                );
            }
            if !d.is_empty() {
                let _ = writeln!(
                    out,
                    r#"<path d="{}Z" fill="{}" fill-opacity="0.2" stroke="none"/>"#,
                    d,
                    colour(i)
                );
            }
        }
        let mut d = String::new();
        for (j, &(x, y)) in s.points.iter().enumerate() {
            let _ = write!(
                d,
                "{}{:.2} {:.2} ",
                if j == 0 { "M" } else { "L" },
                frame.px(x),
                frame.py(y)
            );
        }
        let _ = writeln!(
            out,
            r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            d.trim_end(),
            colour(i)
        );
    }
    let names: Vec<String> = series.iter().map(|s| s.name.clone()).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scatter_has_one_circle_per_finite_point() {
        let svg = scatter_svg(
            "t",
            &[[0.0, 0.0], [1.0, 2.0], [f64::NAN, 1.0]],
            &[0, 1, 0],
            &["a".into(), "b<".into()],
        );
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("b&lt;"));
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn line_chart_is_deterministic() {
        let s = vec![Series {
            name: "c0".into(),
            points: vec![(1.0, 2.0), (2.0, 3.0)],
            band: Some(vec![(1.5, 2.5), (2.0, 4.0)]),
        }];
        let a = line_svg("x", "i", "v", &s);
        assert_eq!(a, line_svg("x", "i", "v", &s));
        assert_eq!(a.matches("<path").count(), 3);
    }

    #[test]
    fn degenerate_ranges_do_not_divide_by_zero() {
        let svg = scatter_svg("t", &[[1.0, 1.0]], &[0], &[]);
        assert!(!svg.contains("NaN"));
        let svg = line_svg("t", "x", "y", &[]);
        assert!(!svg.contains("NaN"));
    }
}
