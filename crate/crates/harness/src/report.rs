//! Summary tables and hand-written SVG charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{HarnessError, Result};
use crate::grid::AXES;
use crate::runner::{median, write_atomic, ReportRow};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const TOP_FILE: &str = "top15.csv";
pub const TOP_FRACTION: f64 = 0.15;

/// `ceil(0.15 n)`, computed in integers so that e.g. n = 20 gives 3.
pub fn top_count(n: usize) -> usize {
    (n * 15).div_ceil(100)
}

/// Indices of the `top_count(n)` rows with the lowest best FD. Rows without
/// an FD rank last; ties keep input order.
pub fn top_fraction(rows: &[&ReportRow]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.sort_by(|&a, &b| {
        let fa = rows[a].best_fd.unwrap_or(f64::INFINITY);
        let fb = rows[b].best_fd.unwrap_or(f64::INFINITY);
        fa.total_cmp(&fb)
    });
    idx.truncate(top_count(rows.len()));
    idx
}

/// Axis columns reported per value group, in file order.
pub fn report_axes() -> Vec<&'static str> {
    std::iter::once("dataset").chain(AXES.iter().map(|a| a.0)).collect()
}

/// Distinct values of `axis` in display order: numeric when every value
/// parses as a number, lexicographic otherwise.
pub fn axis_values(rows: &[ReportRow], axis: &str) -> Vec<String> {
    let mut vals: Vec<String> = rows.iter().filter_map(|r| r.axis_value(axis)).collect();
    vals.sort();
    vals.dedup();
    if vals.iter().all(|v| v.parse::<f64>().is_ok()) {
        vals.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    vals
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn finite_fds<'a>(rows: impl Iterator<Item = &'a ReportRow>) -> Vec<f64> {
    rows.filter_map(|r| r.best_fd).filter(|v| v.is_finite()).collect()
}

/// Writes `summary.csv`, `top15.csv`, and for every axis with more than one
/// value an `axis_<name>.csv` and `box_<name>.svg`. A varying `lambda` also
/// gets `line_lambda.svg`.
pub fn emit_report(rows: &[ReportRow], out: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(HarnessError::Report("no rows to report".into()));
    }
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| (&a.run_id, a.seed).cmp(&(&b.run_id, b.seed)));

    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    write_atomic(&out.join(SUMMARY_FILE), &w.into_inner().map_err(|e| HarnessError::Report(e.to_string()))?)?;

    write_atomic(&out.join(TOP_FILE), top_csv(&rows)?.as_bytes())?;

    for axis in report_axes() {
        let values = axis_values(&rows, axis);
        if values.len() < 2 {
            continue;
        }
        write_atomic(&out.join(format!("axis_{axis}.csv")), axis_csv(&rows, axis, &values)?.as_bytes())?;
        write_atomic(&out.join(format!("box_{axis}.svg")), box_svg(&rows, axis, &values).as_bytes())?;
    }
    if axis_values(&rows, "lambda").len() >= 2 {
        write_atomic(&out.join("line_lambda.svg"), lambda_svg(&rows).as_bytes())?;
    }
    Ok(())
}

fn top_csv(rows: &[ReportRow]) -> Result<String> {
    let mut groups: BTreeMap<(String, String), Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.dataset.clone(), r.loss.clone())).or_default().push(r);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", "loss", "runs", "selected", "rank", "run_id", "seed", "best_fd"])?;
    for ((dataset, loss), members) in &groups {
        let picked = top_fraction(members);
        for (rank, &i) in picked.iter().enumerate() {
            let r = members[i];
            w.write_record([
                dataset.clone(),
                loss.clone(),
                members.len().to_string(),
                picked.len().to_string(),
                (rank + 1).to_string(),
                r.run_id.clone(),
                r.seed.to_string(),
                opt(r.best_fd),
            ])?;
        }
    }
    String::from_utf8(w.into_inner().map_err(|e| HarnessError::Report(e.to_string()))?).map_err(|e| HarnessError::Report(e.to_string()))
}

fn axis_csv(rows: &[ReportRow], axis: &str, values: &[String]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "axis",
        "value",
        "runs",
        "diverged",
        "median_best_fd",
        "median_final_fd",
        "median_coverage",
        "median_step_seconds",
        "top15_runs",
        "top15_median_best_fd",
    ])?;
    for v in values {
        let members: Vec<&ReportRow> = rows.iter().filter(|r| r.axis_value(axis).as_ref() == Some(v)).collect();
        let top: Vec<&ReportRow> = top_fraction(&members).into_iter().map(|i| members[i]).collect();
        let med = |f: &dyn Fn(&ReportRow) -> Option<f64>, set: &[&ReportRow]| {
            let mut xs: Vec<f64> = set.iter().filter_map(|r| f(r)).collect();
            opt(median(&mut xs))
        };
        w.write_record([
            axis.to_string(),
            v.clone(),
            members.len().to_string(),
            members.iter().filter(|r| r.diverged).count().to_string(),
            med(&|r| r.best_fd, &members),
            med(&|r| r.final_fd, &members),
            med(&|r| r.coverage.map(|c| c as f64), &members),
            med(&|r| r.median_step_seconds, &members),
            top.len().to_string(),
            med(&|r| r.best_fd, &top),
        ])?;
    }
    String::from_utf8(w.into_inner().map_err(|e| HarnessError::Report(e.to_string()))?).map_err(|e| HarnessError::Report(e.to_string()))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;

struct YScale {
    lo: f64,
    hi: f64,
}

impl YScale {
    fn new(values: &[f64]) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            return YScale { lo: 0.0, hi: 1.0 };
        }
        let span = (hi - lo).max(1e-12);
        YScale {
            lo: lo - 0.05 * span,
            hi: hi + 0.05 * span,
        }
    }

    fn y(&self, v: f64) -> f64 {
        H - PAD - (v - self.lo) / (self.hi - self.lo) * (H - 2.0 * PAD)
    }
}

fn svg_open(title: &str, ys: &YScale) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#, H - PAD);
    let _ = writeln!(s, r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - PAD, W - PAD, H - PAD);
    for t in 0..=4 {
        let v = ys.lo + (ys.hi - ys.lo) * t as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#, PAD - 4.0, ys.y(v) + 4.0, v);
    }
    s
}

/// Best-FD distribution per axis value; one `<g class="box">` per value.
pub fn box_svg(rows: &[ReportRow], axis: &str, values: &[String]) -> String {
    let groups: Vec<Vec<f64>> = values
        .iter()
        .map(|v| {
            let mut xs = finite_fds(rows.iter().filter(|r| r.axis_value(axis).as_ref() == Some(v)));
            xs.sort_by(f64::total_cmp);
            xs
        })
        .collect();
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let ys = YScale::new(&all);
    let mut s = svg_open(&format!("best FD by {axis}"), &ys);
    let slot = (W - 2.0 * PAD) / values.len() as f64;
    for (i, (v, xs)) in values.iter().zip(&groups).enumerate() {
        let cx = PAD + slot * (i as f64 + 0.5);
        let half = (slot * 0.3).min(30.0);
        let _ = writeln!(s, r#"<g class="box" data-value="{}">"#, escape(v));
        if !xs.is_empty() {
            let (q0, q1, q2, q3, q4) = (
                quantile(xs, 0.0),
                quantile(xs, 0.25),
                quantile(xs, 0.5),
                quantile(xs, 0.75),
                quantile(xs, 1.0),
            );
            let _ = writeln!(s, r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#, ys.y(q0), ys.y(q4));
            let _ = writeln!(
                s,
                r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#9ecae1" stroke="black"/>"##,
                cx - half,
                ys.y(q3),
                2.0 * half,
                (ys.y(q1) - ys.y(q3)).max(0.5)
            );
            let _ = writeln!(s, r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>"#, cx - half, ys.y(q2), cx + half, ys.y(q2));
        }
        let _ = writeln!(s, r#"<text x="{cx:.1}" y="{}" text-anchor="middle">{} (n={})</text>"#, H - PAD + 16.0, escape(v), xs.len());
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

/// Median best FD against log10(lambda), one polyline per regularizer.
pub fn lambda_svg(rows: &[ReportRow]) -> String {
    let lambdas: Vec<f64> = axis_values(rows, "lambda").iter().map(|v| v.parse().unwrap()).filter(|&l: &f64| l > 0.0).collect();
    let regs = axis_values(rows, "reg");
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for reg in &regs {
        let mut pts = Vec::new();
        for &l in &lambdas {
            let mut xs = finite_fds(rows.iter().filter(|r| &r.reg == reg && r.lambda == l));
            if let Some(m) = median(&mut xs) {
                pts.push((l.log10(), m));
            }
        }
        if !pts.is_empty() {
            series.push((reg.clone(), pts));
        }
    }
    let all: Vec<f64> = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)).collect();
    let ys = YScale::new(&all);
    let (xlo, xhi) = match (lambdas.first(), lambdas.last()) {
        (Some(a), Some(b)) if b > a => (a.log10(), b.log10()),
        (Some(a), _) => (a.log10() - 1.0, a.log10() + 1.0),
        _ => (0.0, 1.0),
    };
    let x = |v: f64| PAD + (v - xlo) / (xhi - xlo) * (W - 2.0 * PAD);
    let mut s = svg_open("median best FD vs lambda", &ys);
    for &l in &lambdas {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{l}</text>"#, x(l.log10()), H - PAD + 16.0);
    }
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    for (i, (reg, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|(a, b)| format!("{:.1},{:.1}", x(*a), ys.y(*b))).collect();
        let _ = writeln!(s, r#"<g class="series" data-reg="{}">"#, escape(reg));
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"##, path.join(" "));
        let _ = writeln!(s, r##"<text x="{}" y="{}" fill="{color}">{}</text>"##, W - PAD + 4.0, PAD + 14.0 * i as f64, escape(reg));
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}
