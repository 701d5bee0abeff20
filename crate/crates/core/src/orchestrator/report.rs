//! Static report built from the aggregate CSVs: SVG figures, an MMD table
//! and an index page tying every file to the configuration that made it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::aggregate::{provenance, strip_comments, AGGREGATE_DIR};
use super::{hash_bytes, ExperimentPlan, OrchestratorError, RunStore};
use crate::modnets::Architecture;

pub const REPORT_DIR: &str = "report";

const PALETTE: [&str; 4] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a"];
const SHAPE_COLORS: [(&str, &str); 4] = [("disc", "#4575b4"), ("circle", "#91bfdb"), ("torus", "#fc8d59"), ("other", "#bbbbbb")];

/// What the report found for one section.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Section {
    pub title: String,
    /// Report-relative paths; empty means the section had no data.
    pub files: Vec<String>,
    pub note: Option<String>,
}

fn color(arch: Architecture) -> &'static str {
    let i = Architecture::ALL.iter().position(|&a| a == arch).unwrap_or(0);
    PALETTE[i % PALETTE.len()]
}

fn read_csv(store: &RunStore, rel: &str) -> Option<Vec<Vec<String>>> {
    let text = store.read_string(&format!("{AGGREGATE_DIR}/{rel}")).ok()?;
    let rows: Vec<Vec<String>> = strip_comments(&text)
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    (!rows.is_empty()).then_some(rows)
}

fn svg_open(width: f64, height: f64, stamp: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <!-- {} -->\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        stamp.trim_start_matches("# ").trim_end()
    )
}

fn text(x: f64, y: f64, anchor: &str, body: &str) -> String {
    format!("<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\">{}</text>\n", escape(body))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grey-to-blue ramp on `[0, 1]`.
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let mix = |lo: f64, hi: f64| (lo + (hi - lo) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(247.0, 8.0), mix(251.0, 48.0), mix(255.0, 107.0))
}

/// Log-density heatmap of one merged PAD from `a,b,count` rows.
pub fn pad_heatmap_svg(rows: &[(usize, usize, u64)], title: &str, stamp: &str) -> String {
    let n = rows.iter().map(|&(a, b, _)| a.max(b) + 1).max().unwrap_or(1);
    let cell = (360.0 / n as f64).max(2.0);
    let (left, top) = (40.0, 30.0);
    let side = cell * n as f64;
    let max = rows.iter().map(|&(_, _, c)| ((c + 1) as f64).ln()).fold(0.0, f64::max);
    let mut svg = svg_open(left + side + 20.0, top + side + 40.0, stamp);
    svg.push_str(&text(left + side / 2.0, 18.0, "middle", title));
    for &(a, b, c) in rows {
        let t = if max > 0.0 { ((c + 1) as f64).ln() / max } else { 0.0 };
        let _ = writeln!(
            svg,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"{}\"/>",
            left + b as f64 * cell,
            top + a as f64 * cell,
            ramp(t)
        );
    }
    svg.push_str(&text(left + side / 2.0, top + side + 25.0, "middle", "phase b"));
    svg.push_str(&format!(
        "<text x=\"15\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {:.1})\">phase a</text>\n",
        top + side / 2.0,
        top + side / 2.0
    ));
    svg.push_str("</svg>\n");
    svg
}

/// Overlaid per-architecture histograms of torus distance, as fractions.
pub fn distance_histogram_svg(series: &[(Architecture, Vec<u64>)], title: &str, stamp: &str) -> String {
    let (left, top, w, h) = (50.0, 30.0, 420.0, 220.0);
    let bins = series.iter().map(|(_, c)| c.len()).max().unwrap_or(1).max(1);
    let fractions: Vec<(Architecture, Vec<f64>)> = series
        .iter()
        .map(|(a, c)| {
            let total: u64 = c.iter().sum();
            (*a, c.iter().map(|&v| if total > 0 { v as f64 / total as f64 } else { 0.0 }).collect())
        })
        .collect();
    let ymax = fractions.iter().flat_map(|(_, f)| f.iter().copied()).fold(0.0, f64::max).max(1e-9);
    let mut svg = svg_open(left + w + 130.0, top + h + 45.0, stamp);
    svg.push_str(&text(left + w / 2.0, 18.0, "middle", title));
    let _ = writeln!(
        svg,
        "<line x1=\"{left}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        top + h,
        left + w,
        top + h
    );
    let _ = writeln!(svg, "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{:.1}\" stroke=\"black\"/>", top + h);
    let step = w / bins as f64;
    for (k, (arch, f)) in fractions.iter().enumerate() {
        let points: Vec<String> = f
            .iter()
            .enumerate()
            .map(|(d, v)| format!("{:.1},{:.1}", left + (d as f64 + 0.5) * step, top + h - v / ymax * h))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>",
            color(*arch),
            points.join(" ")
        );
        let y = top + 12.0 + 16.0 * k as f64;
        let _ = writeln!(svg, "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/>", left + w + 10.0, y - 9.0, color(*arch));
        svg.push_str(&text(left + w + 25.0, y, "start", &arch.to_string()));
    }
    for d in (0..bins).step_by(5) {
        svg.push_str(&text(left + (d as f64 + 0.5) * step, top + h + 14.0, "middle", &d.to_string()));
    }
    svg.push_str(&text(left + w / 2.0, top + h + 32.0, "middle", "torus distance"));
    svg.push_str(&text(left - 5.0, top + 4.0, "end", &format!("{ymax:.2}")));
    svg.push_str(&text(left - 5.0, top + h, "end", "0"));
    svg.push_str("</svg>\n");
    svg
}

/// One stacked bar per key, split by shape.
pub fn betti_bars_svg(rows: &[(String, [u64; 4])], stamp: &str) -> String {
    let (left, top, bar, gap, h) = (50.0, 30.0, 26.0, 14.0, 200.0);
    let w = rows.len() as f64 * (bar + gap) + gap;
    let mut svg = svg_open(left + w + 90.0, top + h + 150.0, stamp);
    svg.push_str(&text(left + w / 2.0, 18.0, "middle", "Betti verdicts per architecture/depth/layer"));
    for (i, (key, counts)) in rows.iter().enumerate() {
        let total: u64 = counts.iter().sum::<u64>().max(1);
        let x = left + gap + i as f64 * (bar + gap);
        let mut y = top + h;
        for (c, (_, fill)) in counts.iter().zip(SHAPE_COLORS) {
            let height = *c as f64 / total as f64 * h;
            y -= height;
            let _ = writeln!(svg, "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar}\" height=\"{height:.1}\" fill=\"{fill}\"/>");
        }
        let (lx, ly) = (x + bar / 2.0, top + h + 8.0);
        let _ = writeln!(
            svg,
            "<text x=\"{lx:.1}\" y=\"{ly:.1}\" text-anchor=\"end\" transform=\"rotate(-60 {lx:.1} {ly:.1})\">{}</text>",
            escape(key)
        );
    }
    for (k, (name, fill)) in SHAPE_COLORS.iter().enumerate() {
        let y = top + 12.0 + 16.0 * k as f64;
        let _ = writeln!(svg, "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{fill}\"/>", left + w + 10.0, y - 9.0);
        svg.push_str(&text(left + w + 25.0, y, "start", name));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Gradient symmetricity against distance irrelevance, one point per run.
pub fn metric_scatter_svg(points: &[(Architecture, f64, f64)], stamp: &str) -> String {
    let (left, top, w, h) = (55.0, 30.0, 320.0, 320.0);
    let (xlo, xhi) = bounds(points.iter().map(|p| p.1));
    let (ylo, yhi) = bounds(points.iter().map(|p| p.2));
    let sx = |x: f64| left + (x - xlo) / (xhi - xlo) * w;
    let sy = |y: f64| top + h - (y - ylo) / (yhi - ylo) * h;
    let mut svg = svg_open(left + w + 130.0, top + h + 45.0, stamp);
    svg.push_str(&text(left + w / 2.0, 18.0, "middle", "Circuit metrics per run"));
    let _ = writeln!(svg, "<rect x=\"{left}\" y=\"{top}\" width=\"{w}\" height=\"{h}\" fill=\"none\" stroke=\"black\"/>");
    for &(arch, x, y) in points {
        let _ = writeln!(svg, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"{}\" fill-opacity=\"0.8\"/>", sx(x), sy(y), color(arch));
    }
    let mut archs: Vec<Architecture> = points.iter().map(|p| p.0).collect();
    archs.sort();
    archs.dedup();
    for (k, arch) in archs.iter().enumerate() {
        let y = top + 12.0 + 16.0 * k as f64;
        let _ = writeln!(svg, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"{}\"/>", left + w + 15.0, y - 4.0, color(*arch));
        svg.push_str(&text(left + w + 25.0, y, "start", &arch.to_string()));
    }
    svg.push_str(&text(left, top + h + 14.0, "middle", &format!("{xlo:.2}")));
    svg.push_str(&text(left + w, top + h + 14.0, "middle", &format!("{xhi:.2}")));
    svg.push_str(&text(left + w / 2.0, top + h + 32.0, "middle", "gradient symmetricity"));
    svg.push_str(&text(left - 5.0, top + h, "end", &format!("{ylo:.2}")));
    svg.push_str(&text(left - 5.0, top + 4.0, "end", &format!("{yhi:.2}")));
    let mid = top + h / 2.0;
    let _ = writeln!(
        svg,
        "<text x=\"15\" y=\"{mid:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {mid:.1})\">distance irrelevance</text>"
    );
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(0.01);
    (lo - pad, hi + pad)
}

fn arch_of(name: &str) -> Option<Architecture> {
    Architecture::ALL.into_iter().find(|a| a.to_string() == name)
}

/// Writes the report directory and returns its sections in display order.
/// Missing aggregates produce sections with no files.
pub fn report_stage(plan: &ExperimentPlan, store: &RunStore) -> Result<Vec<Section>, OrchestratorError> {
    let stamp = provenance(plan);
    let mut outputs: Vec<(String, String)> = Vec::new();
    let mut sections = Vec::new();
    let mut section = |title: &str, made: Vec<(String, String)>, note: Option<String>, outputs: &mut Vec<(String, String)>| {
        sections.push(Section {
            title: title.to_string(),
            files: made.iter().map(|(rel, _)| rel.clone()).collect(),
            note,
        });
        outputs.extend(made);
    };

    let mut heatmaps = Vec::new();
    let mut histograms = Vec::new();
    for arch in Architecture::ALL {
        for estimator in ["max", "com"] {
            let stem = format!("pad/{arch}-{estimator}");
            if let Some(rows) = read_csv(store, &format!("{stem}.csv")) {
                let cells: Vec<(usize, usize, u64)> = rows
                    .iter()
                    .filter_map(|r| Some((r.first()?.parse().ok()?, r.get(1)?.parse().ok()?, r.get(2)?.parse().ok()?)))
                    .collect();
                heatmaps.push((format!("pad-{arch}-{estimator}.svg"), pad_heatmap_svg(&cells, &format!("{arch} ({estimator})"), &stamp)));
            }
            if estimator == "max" {
                if let Some(rows) = read_csv(store, &format!("{stem}-distance.csv")) {
                    histograms.push((arch, rows.iter().filter_map(|r| r.get(1)?.parse().ok()).collect::<Vec<u64>>()));
                }
            }
        }
    }
    section("Phase alignment heatmaps", heatmaps, None, &mut outputs);
    let hist = if histograms.is_empty() {
        vec![]
    } else {
        vec![("torus-distance.svg".to_string(), distance_histogram_svg(&histograms, "Max-activation torus distance", &stamp))]
    };
    section("Torus-distance histograms", hist, None, &mut outputs);

    let betti = read_csv(store, "betti-distribution.csv").map(|rows| {
        let bars: Vec<(String, [u64; 4])> = rows
            .iter()
            .map(|r| {
                let c = |i: usize| r.get(i).and_then(|v| v.parse().ok()).unwrap_or(0);
                (r[0].clone(), [c(1), c(2), c(3), c(4)])
            })
            .collect();
        vec![("betti.svg".to_string(), betti_bars_svg(&bars, &stamp))]
    });
    section("Betti distributions", betti.unwrap_or_default(), None, &mut outputs);

    let scatter = read_csv(store, "metrics.csv").and_then(|rows| {
        let mut by_run: BTreeMap<(String, String), (Option<f64>, Option<f64>)> = BTreeMap::new();
        for r in &rows {
            let (Some(arch), Some(seed), Some(metric), Some(avg)) = (r.first(), r.get(1), r.get(2), r.get(3)) else { continue };
            let entry = by_run.entry((arch.clone(), seed.clone())).or_default();
            let v = avg.parse().ok();
            match metric.as_str() {
                "gradient_symmetricity" => entry.0 = v,
                "distance_irrelevance" => entry.1 = v,
                _ => {}
            }
        }
        let points: Vec<(Architecture, f64, f64)> = by_run
            .into_iter()
            .filter_map(|((arch, _), (x, y))| Some((arch_of(&arch)?, x?, y?)))
            .collect();
        (!points.is_empty()).then(|| vec![("metrics.svg".to_string(), metric_scatter_svg(&points, &stamp))])
    });
    section("Circuit metrics", scatter.unwrap_or_default(), None, &mut outputs);

    let mmd = read_csv(store, "mmd.csv").map(|rows| {
        let mut csv = format!("{stamp}comparison,mmd,p_value,bandwidth,permutations\n");
        for r in &rows {
            csv.push_str(&r.join(","));
            csv.push('\n');
        }
        (vec![("mmd.csv".to_string(), csv)], mmd_table_html(&rows))
    });
    let (mmd_files, mmd_html) = mmd.map_or((vec![], None), |(f, h)| (f, Some(h)));
    section("MMD comparisons", mmd_files, mmd_html, &mut outputs);

    let index = index_html(plan, &sections, &outputs);
    outputs.push(("index.html".to_string(), index));
    for (rel, body) in &outputs {
        store.write(&format!("{REPORT_DIR}/{rel}"), body.as_bytes())?;
    }
    let artifacts: Vec<String> = outputs.iter().map(|(rel, _)| format!("{REPORT_DIR}/{rel}")).collect();
    store.record("report", &super::hash_json(&plan.config_hash()), &artifacts)?;
    Ok(sections)
}

fn mmd_table_html(rows: &[Vec<String>]) -> String {
    let mut html = String::from("<table>\n<tr><th>comparison</th><th>MMD²</th><th>p</th><th>bandwidth</th><th>permutations</th></tr>\n");
    for r in rows {
        html.push_str("<tr>");
        for cell in r {
            let _ = write!(html, "<td>{}</td>", escape(cell));
        }
        html.push_str("</tr>\n");
    }
    html.push_str("</table>\n");
    html
}

fn index_html(plan: &ExperimentPlan, sections: &[Section], outputs: &[(String, String)]) -> String {
    let digests: BTreeMap<&str, String> = outputs.iter().map(|(rel, body)| (rel.as_str(), hash_bytes(body.as_bytes()))).collect();
    let seeds: Vec<String> = plan.seeds.iter().map(u64::to_string).collect();
    let archs: Vec<String> = plan.architectures.iter().map(Architecture::to_string).collect();
    let mut html = String::from("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>modgeo report</title>\n");
    html.push_str("<style>body{font-family:sans-serif;margin:2em}td,th{padding:2px 8px;border-bottom:1px solid #ddd}code{font-size:90%}</style></head><body>\n");
    let _ = writeln!(html, "<h1>modgeo report</h1>\n<p>config <code>{}</code><br>", plan.config_hash());
    let _ = writeln!(html, "architectures {}<br>seeds {}<br>modulus {}</p>", archs.join(", "), seeds.join(" "), plan.modulus);
    for s in sections {
        let _ = writeln!(html, "<h2>{}</h2>", escape(&s.title));
        if s.files.is_empty() {
            html.push_str("<p><em>no data</em></p>\n");
            continue;
        }
        if let Some(note) = &s.note {
            html.push_str(note);
        }
        for f in &s.files {
            if f.ends_with(".svg") {
                let _ = writeln!(html, "<p><img src=\"{f}\" alt=\"{f}\"><br>");
            } else {
                html.push_str("<p>");
            }
            let _ = writeln!(html, "<a href=\"{f}\">{f}</a> <code>{}</code></p>", &digests[f.as_str()][..16]);
        }
    }
    html.push_str("</body></html>\n");
    html
}
