//! Static SVG figures of type I error against ICC, plus a text summary.
//!
//! Each figure covers one (design, outcome, dgm, fitted model) and is split
//! into facets by (K, mean size) rows and CV columns. Within a facet ICC
//! values sit at evenly spaced categorical positions and the y axis runs
//! linearly from 0 to `y_max`. Markers carry `data-*` attributes so the
//! geometry can be checked without a renderer.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::results::ResultRow;

pub const FACET_WIDTH: f64 = 320.0;
pub const FACET_HEIGHT: f64 = 240.0;
const PLOT_LEFT: f64 = 55.0;
const PLOT_RIGHT: f64 = 15.0;
const PLOT_TOP: f64 = 30.0;
const PLOT_BOTTOM: f64 = 45.0;
const TITLE_HEIGHT: f64 = 40.0;
const LEGEND_WIDTH: f64 = 170.0;
const Y_STEP: f64 = 0.05;

/// Colour per DDF kind; Wald lines are solid and LRT lines dashed.
const DDF_COLOURS: [(&str, &str); 4] = [
    ("residual", "#d62728"),
    ("containment", "#ff7f0e"),
    ("bw1", "#1f77b4"),
    ("bw2", "#2ca02c"),
];

fn colour(ddf: &str) -> &'static str {
    DDF_COLOURS.iter().find(|(k, _)| *k == ddf).map_or("#555555", |(_, c)| c)
}

#[derive(Debug, Clone, PartialEq)]
struct FigureKey {
    design: String,
    outcome: String,
    dgm: String,
    fitted_model: u8,
}

pub struct Figure {
    pub file_name: String,
    pub svg: String,
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Smallest multiple of 0.05 at least one step above the largest plotted value.
pub fn y_max(values: impl Iterator<Item = f64>) -> f64 {
    let top = values.filter(|v| v.is_finite()).fold(0.0, f64::max);
    ((top / Y_STEP - 1e-9).ceil() + 1.0) * Y_STEP
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One SVG per (design, outcome, dgm, fitted model), in first-seen order.
pub fn render_figures(rows: &[ResultRow]) -> Vec<Figure> {
    let mut keys: Vec<FigureKey> = Vec::new();
    for r in rows {
        let key = FigureKey {
            design: r.design.clone(),
            outcome: r.outcome.clone(),
            dgm: r.dgm.clone(),
            fitted_model: r.fitted_model,
        };
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.iter()
        .map(|key| {
            let subset: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| {
                    r.design == key.design && r.outcome == key.outcome && r.dgm == key.dgm && r.fitted_model == key.fitted_model
                })
                .collect();
            Figure {
                file_name: format!(
                    "type1_{}_{}_{}_m{}.svg",
                    key.design,
                    key.outcome,
                    key.dgm.to_lowercase(),
                    key.fitted_model
                ),
                svg: render_one(key, &subset),
            }
        })
        .collect()
}

fn render_one(key: &FigureKey, rows: &[&ResultRow]) -> String {
    let mut panels: Vec<(usize, f64)> = Vec::new();
    for r in rows {
        if !panels.contains(&(r.k, r.mean_size)) {
            panels.push((r.k, r.mean_size));
        }
    }
    panels.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let cvs = sorted_unique(rows.iter().map(|r| r.cv).collect());
    let iccs = sorted_unique(rows.iter().map(|r| r.icc).collect());
    let alpha = rows[0].alpha;
    let ymax = y_max(rows.iter().map(|r| r.type1_rate).chain(std::iter::once(alpha)));

    let width = cvs.len() as f64 * FACET_WIDTH + LEGEND_WIDTH;
    let height = TITLE_HEIGHT + panels.len() as f64 * FACET_HEIGHT;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="10" y="24" font-size="14">Type I error: {} {} outcome, dgm {}, fitted model {}</text>"#,
        esc(&key.design),
        esc(&key.outcome),
        esc(&key.dgm),
        key.fitted_model
    );

    for (pi, &(k, s)) in panels.iter().enumerate() {
        for (ci, &cv) in cvs.iter().enumerate() {
            let x0 = ci as f64 * FACET_WIDTH;
            let y0 = TITLE_HEIGHT + pi as f64 * FACET_HEIGHT;
            let facet: Vec<&&ResultRow> = rows.iter().filter(|r| r.k == k && r.mean_size == s && r.cv == cv).collect();
            render_facet(&mut svg, x0, y0, (k, s, cv), &facet, &iccs, alpha, ymax);
        }
    }
    render_legend(&mut svg, cvs.len() as f64 * FACET_WIDTH + 10.0, TITLE_HEIGHT + 10.0);
    svg.push_str("</svg>\n");
    svg
}

#[allow(clippy::too_many_arguments)]
fn render_facet(
    svg: &mut String,
    x0: f64,
    y0: f64,
    (k, s, cv): (usize, f64, f64),
    rows: &[&&ResultRow],
    iccs: &[f64],
    alpha: f64,
    ymax: f64,
) {
    let (px0, px1) = (x0 + PLOT_LEFT, x0 + FACET_WIDTH - PLOT_RIGHT);
    let (top, bottom) = (y0 + PLOT_TOP, y0 + FACET_HEIGHT - PLOT_BOTTOM);
    let y_of = |v: f64| bottom - v / ymax * (bottom - top);
    let x_of = |icc: f64| {
        let i = iccs.iter().position(|&v| v == icc).unwrap_or(0);
        px0 + (i as f64 + 0.5) / iccs.len() as f64 * (px1 - px0)
    };
    let _ = writeln!(
        svg,
        r#"<g class="facet" data-k="{k}" data-mean-size="{s}" data-cv="{cv}" data-plot-left="{px0:.2}" data-plot-right="{px1:.2}" data-plot-top="{top:.2}" data-plot-bottom="{bottom:.2}" data-ymax="{ymax}">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">K = {k}, mean size = {s}, CV = {cv}</text>"#,
        0.5 * (px0 + px1),
        top - 10.0
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{px0:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#999"/>"##,
        px1 - px0,
        bottom - top
    );
    let n_ticks = (ymax / Y_STEP).round() as usize;
    for t in 0..=n_ticks {
        let v = t as f64 * Y_STEP;
        let y = y_of(v);
        let _ = writeln!(
            svg,
            r##"<line class="ytick" data-value="{v:.2}" x1="{:.2}" x2="{px0:.2}" y1="{y:.2}" y2="{y:.2}" stroke="#999"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"##,
            px0 - 4.0,
            px0 - 6.0,
            y + 4.0
        );
    }
    for &icc in iccs {
        let x = x_of(icc);
        let _ = writeln!(
            svg,
            r#"<text class="xtick" data-icc="{icc}" x="{x:.2}" y="{:.2}" text-anchor="middle">{icc}</text>"#,
            bottom + 15.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">ICC</text>"#,
        0.5 * (px0 + px1),
        bottom + 32.0
    );
    let ya = y_of(alpha);
    let _ = writeln!(
        svg,
        r##"<line class="nominal" data-alpha="{alpha}" x1="{px0:.2}" x2="{px1:.2}" y1="{ya:.2}" y2="{ya:.2}" stroke="#000" stroke-dasharray="2,3"/>"##
    );

    // one series per (test, ddf), in first-seen order
    let mut series: Vec<(String, String)> = Vec::new();
    for r in rows {
        let key = (r.test.clone(), r.ddf_kind.clone());
        if !series.contains(&key) {
            series.push(key);
        }
    }
    for (test, ddf) in &series {
        let mut pts: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
        for r in rows.iter().filter(|r| &r.test == test && &r.ddf_kind == ddf && r.type1_rate.is_finite()) {
            let i = iccs.iter().position(|&v| v == r.icc).unwrap_or(0);
            pts.insert(i, (r.icc, r.type1_rate));
        }
        let c = colour(ddf);
        let dash = if test == "lrt-f" { r#" stroke-dasharray="6,3""# } else { "" };
        if pts.len() > 1 {
            let path: Vec<String> = pts.values().map(|&(icc, rate)| format!("{:.2},{:.2}", x_of(icc), y_of(rate))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline class="series" data-test="{}" data-ddf="{}" points="{}" fill="none" stroke="{c}" stroke-width="1.5"{dash}/>"#,
                esc(test),
                esc(ddf),
                path.join(" ")
            );
        }
        for &(icc, rate) in pts.values() {
            let fill = if test == "lrt-f" { "white" } else { c };
            let _ = writeln!(
                svg,
                r#"<circle class="marker" data-test="{}" data-ddf="{}" data-icc="{icc}" data-rate="{rate}" cx="{:.2}" cy="{:.2}" r="3" fill="{fill}" stroke="{c}"/>"#,
                esc(test),
                esc(ddf),
                x_of(icc),
                y_of(rate)
            );
        }
    }
    svg.push_str("</g>\n");
}

fn render_legend(svg: &mut String, x: f64, y: f64) {
    let _ = writeln!(svg, r#"<g class="legend">"#);
    let mut row = 0.0;
    for (test, label, dash) in [("wald-t", "Wald t", ""), ("lrt-f", "LRT F", r#" stroke-dasharray="6,3""#)] {
        for (ddf, c) in DDF_COLOURS {
            let yy = y + row * 16.0;
            let _ = writeln!(
                svg,
                r#"<line data-test="{test}" data-ddf="{ddf}" x1="{x:.2}" x2="{:.2}" y1="{yy:.2}" y2="{yy:.2}" stroke="{c}" stroke-width="1.5"{dash}/><text x="{:.2}" y="{:.2}">{label}, {ddf}</text>"#,
                x + 24.0,
                x + 30.0,
                yy + 4.0
            );
            row += 1.0;
        }
    }
    let yy = y + row * 16.0;
    let _ = writeln!(
        svg,
        r##"<line x1="{x:.2}" x2="{:.2}" y1="{yy:.2}" y2="{yy:.2}" stroke="#000" stroke-dasharray="2,3"/><text x="{:.2}" y="{:.2}">nominal level</text>"##,
        x + 24.0,
        x + 30.0,
        yy + 4.0
    );
    svg.push_str("</g>\n");
}

/// Per scenario, the (test, DDF) whose rate is closest to its nominal level.
/// Ties keep the first row; scenarios with no defined rate are reported as such.
pub fn summary_table(rows: &[ResultRow]) -> String {
    let mut order: Vec<&str> = Vec::new();
    let mut best: BTreeMap<&str, Option<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let entry = best.entry(&r.scenario_id).or_insert_with(|| {
            order.push(&r.scenario_id);
            None
        });
        if !r.type1_rate.is_finite() {
            continue;
        }
        let better = match entry {
            None => true,
            Some(b) => (r.type1_rate - r.alpha).abs() < (b.type1_rate - b.alpha).abs(),
        };
        if better {
            *entry = Some(r);
        }
    }
    let width = order.iter().map(|s| s.len()).max().unwrap_or(8).max(8);
    let mut out = format!("{:<width$}  {:<8} {:<12} {:>9} {:>7}\n", "scenario", "test", "ddf", "rate", "alpha");
    for id in order {
        match best[id] {
            Some(r) => {
                let _ = writeln!(
                    out,
                    "{:<width$}  {:<8} {:<12} {:>9.4} {:>7}",
                    id, r.test, r.ddf_kind, r.type1_rate, r.alpha
                );
            }
            None => {
                let _ = writeln!(out, "{id:<width$}  no defined rate");
            }
        }
    }
    out
}
