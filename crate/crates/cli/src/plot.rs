//! Coefficient paths as an SVG: one panel per time-varying term, with the
//! posterior mean line over a shaded 95% band.

use std::io::{self, Write};

use tvreg::Summary;

use crate::output::coef_path_rows;

const WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 180.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 28.0;
const MARGIN_BOTTOM: f64 = 30.0;

struct Panel {
    term: String,
    points: Vec<(f64, f64, f64, f64)>,
}

fn panels(summary: &Summary) -> Vec<Panel> {
    let mut out: Vec<Panel> = Vec::new();
    for (term, time, mean, lwr, upr) in coef_path_rows(summary) {
        match out.iter_mut().find(|p| p.term == term) {
            Some(p) => p.points.push((time as f64, mean, lwr, upr)),
            None => out.push(Panel {
                term: term.to_string(),
                points: vec![(time as f64, mean, lwr, upr)],
            }),
        }
    }
    out
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Range padded by 5%, widened when degenerate.
fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (-1.0, 1.0);
    }
    let span = hi - lo;
    if span <= 1e-12 * lo.abs().max(1.0) {
        return (lo - 0.5, hi + 0.5);
    }
    (lo - 0.05 * span, hi + 0.05 * span)
}

pub fn write_svg(w: &mut dyn Write, summary: &Summary) -> io::Result<()> {
    let panels = panels(summary);
    let height = PANEL_HEIGHT * panels.len().max(1) as f64;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    )?;
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    for (i, panel) in panels.iter().enumerate() {
        let top = i as f64 * PANEL_HEIGHT;
        let (x0, x1) = padded(
            panel.points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
            panel.points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
        );
        let (y0, y1) = padded(
            panel.points.iter().map(|p| p.2).fold(f64::INFINITY, f64::min),
            panel.points.iter().map(|p| p.3).fold(f64::NEG_INFINITY, f64::max),
        );
        let (left, right) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
        let (upper, lower) = (top + MARGIN_TOP, top + PANEL_HEIGHT - MARGIN_BOTTOM);
        let sx = |x: f64| left + (x - x0) / (x1 - x0) * (right - left);
        let sy = |y: f64| lower - (y - y0) / (y1 - y0) * (lower - upper);

        writeln!(w, r#"<g>"#)?;
        writeln!(
            w,
            r#"<text x="{left}" y="{}" font-weight="bold">{}</text>"#,
            top + 16.0,
            escape(&panel.term)
        )?;
        // axes with end labels
        writeln!(
            w,
            r#"<line x1="{left}" y1="{lower}" x2="{right}" y2="{lower}" stroke="black"/>"#
        )?;
        writeln!(
            w,
            r#"<line x1="{left}" y1="{upper}" x2="{left}" y2="{lower}" stroke="black"/>"#
        )?;
        for (v, anchor) in [(x0, "start"), (x1, "end")] {
            let x = if anchor == "start" { left } else { right };
            writeln!(
                w,
                r#"<text x="{x:.1}" y="{:.1}" text-anchor="{anchor}">{v:.0}</text>"#,
                lower + 14.0
            )?;
        }
        for v in [y0, y1] {
            writeln!(
                w,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
                left - 4.0,
                sy(v) + 4.0
            )?;
        }
        if y0 < 0.0 && y1 > 0.0 {
            writeln!(
                w,
                r#"<line x1="{left}" y1="{0:.2}" x2="{right}" y2="{0:.2}" stroke="grey" stroke-dasharray="3,3"/>"#,
                sy(0.0)
            )?;
        }

        let ribbon: Vec<String> = panel
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.3)))
            .chain(
                panel
                    .points
                    .iter()
                    .rev()
                    .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.2))),
            )
            .collect();
        writeln!(
            w,
            r#"<polygon points="{}" fill="steelblue" fill-opacity="0.3" stroke="none"/>"#,
            ribbon.join(" ")
        )?;
        let line: Vec<String> = panel
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1)))
            .collect();
        writeln!(
            w,
            r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#,
            line.join(" ")
        )?;
        writeln!(w, "</g>")?;
    }
    writeln!(w, "</svg>")
}
