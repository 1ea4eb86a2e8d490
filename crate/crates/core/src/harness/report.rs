//! CSV traces and SVG line plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use super::runner::{RunTrace, TraceRow};
use super::HarnessError;
use crate::dynamics::FlowTrajectory;

pub const CSV_HEADER: &str = "k,epoch,gamma,J_train,E_min,E_max,E,residual_S,test_acc,wall_ms";
pub const FLOW_HEADER: &str = "t,J,E_min,E_max,E,residual_S";

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.k,
            r.epoch,
            fmt_f64(r.gamma),
            fmt_f64(r.j_train),
            fmt_opt(r.e_min),
            fmt_opt(r.e_max),
            fmt_opt(r.e),
            fmt_opt(r.residual_s),
            fmt_opt(r.test_acc),
            fmt_opt(r.wall_ms),
        );
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| HarnessError::io(path, e))
}

pub fn emit_csv(trace: &RunTrace, path: &Path) -> Result<(), HarnessError> {
    write_file(path, &trace_csv(&trace.rows))
}

fn parse_opt(field: &str, line: usize) -> Result<Option<f64>, HarnessError> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| HarnessError::Data(format!("line {line}: cannot parse {field:?} as a number")))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>, HarnessError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    let header = rdr
        .headers()
        .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != CSV_HEADER {
        return Err(HarnessError::Data(format!("{}: unexpected header {header:?}", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
        let num = |j: usize| parse_opt(&rec[j], line);
        let req = |j: usize| {
            num(j)?.ok_or_else(|| HarnessError::Data(format!("line {line}: missing required field {j}")))
        };
        let int = |j: usize| {
            rec[j]
                .parse::<u64>()
                .map_err(|_| HarnessError::Data(format!("line {line}: bad integer {:?}", &rec[j])))
        };
        rows.push(TraceRow {
            k: int(0)?,
            epoch: int(1)?,
            gamma: req(2)?,
            j_train: req(3)?,
            e_min: num(4)?,
            e_max: num(5)?,
            e: num(6)?,
            residual_s: num(7)?,
            test_acc: num(8)?,
            wall_ms: num(9)?,
        });
    }
    Ok(rows)
}

/// File name of a trace inside an output directory.
pub fn trace_file_name(trace: &RunTrace, index: usize) -> String {
    format!("{index:02}_{}_seed{}.csv", trace.label, trace.seed)
}

/// Writes one CSV per trace plus `summary.csv`, returning the trace paths.
pub fn write_experiment(traces: &[RunTrace], dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut paths = Vec::new();
    let mut summary = String::from("file,optimizer,seed,gamma0,theta0_sha256,final_k,final_J_train,final_test_acc,status\n");
    for (i, t) in traces.iter().enumerate() {
        let name = trace_file_name(t, i);
        let path = dir.join(&name);
        emit_csv(t, &path)?;
        let last = t.last();
        let _ = writeln!(
            summary,
            "{name},{},{},{},{},{},{},{},{}",
            t.label,
            t.seed,
            fmt_f64(t.gamma0),
            t.theta0_hash,
            last.map(|r| r.k.to_string()).unwrap_or_default(),
            fmt_opt(last.map(|r| r.j_train)),
            fmt_opt(last.and_then(|r| r.test_acc)),
            t.failed.as_deref().map_or("ok".to_string(), |m| format!("failed: {}", m.replace(',', ";"))),
        );
        paths.push(path);
    }
    write_file(&dir.join("summary.csv"), &summary)?;
    Ok(paths)
}

pub fn flow_csv(traj: &FlowTrajectory, stride: usize) -> String {
    let mut out = String::from(FLOW_HEADER);
    out.push('\n');
    let (a, b) = (traj.hp.alpha, traj.hp.beta);
    let last = traj.len() - 1;
    let mut idx: Vec<usize> = (0..traj.len()).step_by(stride.max(1)).collect();
    if idx.last() != Some(&last) {
        idx.push(last);
    }
    for i in idx {
        let s = traj.state(i);
        let res = crate::objective::residual_to_s(&s.theta, &s.psi, traj.subgrad_norms[i], a, b);
        let en = traj.energies[i];
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(traj.times[i]),
            fmt_f64(traj.values[i]),
            fmt_f64(en.e_min),
            fmt_f64(en.e_max),
            fmt_f64(en.e),
            fmt_f64(res),
        );
    }
    out
}

pub fn emit_flow_csv(traj: &FlowTrajectory, stride: usize, path: &Path) -> Result<(), HarnessError> {
    if traj.is_empty() {
        return Err(HarnessError::Data("empty trajectory".into()));
    }
    write_file(path, &flow_csv(traj, stride))
}

/// Plottable columns of a trace.
pub const PLOT_FIELDS: [&str; 9] = [
    "epoch",
    "gamma",
    "J_train",
    "E_min",
    "E_max",
    "E",
    "residual_S",
    "test_acc",
    "wall_ms",
];

pub fn field_value(row: &TraceRow, field: &str) -> Result<Option<f64>, HarnessError> {
    Ok(match field {
        "epoch" => Some(row.epoch as f64),
        "gamma" => Some(row.gamma),
        "J_train" => Some(row.j_train),
        "E_min" => row.e_min,
        "E_max" => row.e_max,
        "E" => row.e,
        "residual_S" => row.residual_s,
        "test_acc" => row.test_acc,
        "wall_ms" => row.wall_ms,
        other => {
            return Err(HarnessError::Config(format!(
                "unknown plot field {other:?}; expected one of {}",
                PLOT_FIELDS.join(", ")
            )))
        }
    })
}

/// A named series of trace rows, e.g. one seed of one optimizer.
#[derive(Debug, Clone)]
pub struct PlotSeries {
    pub group: String,
    pub rows: Vec<TraceRow>,
}

impl From<&RunTrace> for PlotSeries {
    fn from(t: &RunTrace) -> Self {
        PlotSeries {
            group: t.label.clone(),
            rows: t.rows.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotReport {
    pub warnings: Vec<String>,
    pub polylines: usize,
    pub mean_lines: usize,
    pub bands: usize,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        MARGIN_L + (x - self.x0) / span * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        let span = if self.y1 > self.y0 { self.y1 - self.y0 } else { 1.0 };
        let mid = if self.y1 > self.y0 { 0.0 } else { 0.5 };
        HEIGHT - MARGIN_B - ((y - self.y0) / span + mid) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn points(frame: &Frame, xs: &[f64], ys: &[f64]) -> String {
    let mut s = String::new();
    for (x, y) in xs.iter().zip(ys) {
        let _ = write!(s, "{:.2},{:.2} ", frame.px(*x), frame.py(*y));
    }
    s.trim_end().to_string()
}

/// Extracts `(k, y)` pairs, clamping non-positive values on a log axis.
fn series_values(
    rows: &[TraceRow],
    field: &str,
    log_scale: bool,
    name: &str,
    warnings: &mut Vec<String>,
) -> Result<(Vec<f64>, Vec<f64>), HarnessError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in rows {
        if let Some(y) = field_value(r, field)? {
            if y.is_finite() {
                xs.push(r.k as f64);
                ys.push(y);
            }
        }
    }
    if log_scale {
        let floor = ys.iter().cloned().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
        let clamped = ys.iter().filter(|v| **v <= 0.0).count();
        if clamped > 0 {
            if floor.is_finite() {
                let msg = format!("{name}: {clamped} non-positive {field} values clamped to {floor:e} on the log axis");
                log::warn!("{msg}");
                warnings.push(msg);
                for v in ys.iter_mut().filter(|v| **v <= 0.0) {
                    *v = floor;
                }
            } else {
                return Err(HarnessError::Data(format!("{name}: no positive {field} values for a log axis")));
            }
        }
        for v in &mut ys {
            *v = v.log10();
        }
    }
    Ok((xs, ys))
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(t);
        t += step;
    }
    out
}

fn tick_label(v: f64, log_scale: bool) -> String {
    if log_scale {
        format!("1e{}", v.round() as i64)
    } else if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Renders `y_field` against the iteration count. Every series becomes a thin
/// polyline; groups holding several series also get their mean as a thick
/// line over a shaded min/max band.
pub fn emit_svg_plot(series: &[PlotSeries], y_field: &str, log_scale: bool, path: &Path) -> Result<PlotReport, HarnessError> {
    let (svg, report) = render_svg(series, y_field, log_scale)?;
    write_file(path, &svg)?;
    Ok(report)
}

pub fn render_svg(series: &[PlotSeries], y_field: &str, log_scale: bool) -> Result<(String, PlotReport), HarnessError> {
    if series.is_empty() {
        return Err(HarnessError::Data("no traces to plot".into()));
    }
    let mut report = PlotReport::default();
    let mut data = Vec::new();
    for (i, s) in series.iter().enumerate() {
        if s.rows.is_empty() {
            return Err(HarnessError::Data(format!("trace {i} ({}) is empty", s.group)));
        }
        let (xs, ys) = series_values(&s.rows, y_field, log_scale, &s.group, &mut report.warnings)?;
        if xs.is_empty() {
            return Err(HarnessError::Data(format!("trace {i} ({}) has no {y_field} values", s.group)));
        }
        data.push((s.group.clone(), xs, ys));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (g, _, _)) in data.iter().enumerate() {
        groups.entry(g.as_str()).or_default().push(i);
    }
    let all_x = data.iter().flat_map(|d| d.1.iter());
    let all_y = data.iter().flat_map(|d| d.2.iter());
    let frame = Frame {
        x0: all_x.clone().cloned().fold(f64::INFINITY, f64::min),
        x1: all_x.cloned().fold(f64::NEG_INFINITY, f64::max),
        y0: all_y.clone().cloned().fold(f64::INFINITY, f64::min),
        y1: all_y.cloned().fold(f64::NEG_INFINITY, f64::max),
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (l, r, t, b) = (MARGIN_L, WIDTH - MARGIN_R, MARGIN_T, HEIGHT - MARGIN_B);
    let _ = writeln!(svg, r#"<g class="axes" stroke="black" fill="none"><line x1="{l}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{l}" y1="{t}" x2="{l}" y2="{b}"/></g>"#);
    for x in nice_ticks(frame.x0, frame.x1) {
        let px = frame.px(x);
        let _ = writeln!(
            svg,
            r#"<line x1="{px:.2}" y1="{b}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            b + 5.0,
            b + 18.0,
            tick_label(x, false)
        );
    }
    for y in nice_ticks(frame.y0, frame.y1) {
        let py = frame.py(y);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{l}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            l - 5.0,
            l - 8.0,
            py + 4.0,
            tick_label(y, log_scale)
        );
    }
    let _ = writeln!(svg, r#"<text class="xlabel" x="{:.2}" y="{:.2}" text-anchor="middle">k</text>"#, (l + r) / 2.0, HEIGHT - 12.0);
    let ylabel = if log_scale { format!("{y_field} (log scale)") } else { y_field.to_string() };
    let _ = writeln!(
        svg,
        r#"<text class="ylabel" x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{ylabel}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0
    );

    for (gi, (name, members)) in groups.iter().enumerate() {
        let color = PALETTE[gi % PALETTE.len()];
        if members.len() > 1 {
            let n = members.iter().map(|&i| data[i].1.len()).min().unwrap_or(0);
            let xs: Vec<f64> = data[members[0]].1[..n].to_vec();
            let cols: Vec<Vec<f64>> = (0..n).map(|j| members.iter().map(|&i| data[i].2[j]).collect()).collect();
            let lo: Vec<f64> = cols.iter().map(|c| c.iter().cloned().fold(f64::INFINITY, f64::min)).collect();
            let hi: Vec<f64> = cols.iter().map(|c| c.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
            let mean: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
            let mut band_x = xs.clone();
            band_x.extend(xs.iter().rev());
            let mut band_y = hi.clone();
            band_y.extend(lo.iter().rev());
            let _ = writeln!(
                svg,
                r#"<polygon class="band" fill="{color}" fill-opacity="0.2" stroke="none" points="{}"/>"#,
                points(&frame, &band_x, &band_y)
            );
            report.bands += 1;
            let _ = writeln!(
                svg,
                r#"<polyline class="mean" fill="none" stroke="{color}" stroke-width="2.5" points="{}"/>"#,
                points(&frame, &xs, &mean)
            );
            report.mean_lines += 1;
        }
        for &i in members {
            let _ = writeln!(
                svg,
                r#"<polyline class="trace" fill="none" stroke="{color}" stroke-width="0.8" stroke-opacity="0.6" points="{}"/>"#,
                points(&frame, &data[i].1, &data[i].2)
            );
            report.polylines += 1;
        }
        let ly = t + 16.0 * gi as f64 + 8.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2.5"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            r + 10.0,
            r + 30.0,
            r + 35.0,
            ly + 4.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    Ok((svg, report))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: u64, j: f64) -> TraceRow {
        TraceRow {
            k,
            epoch: k / 10,
            gamma: 0.1,
            j_train: j,
            e_min: Some(j * 0.5),
            e_max: None,
            e: Some(1.0 / 3.0),
            residual_s: None,
            test_acc: None,
            wall_ms: None,
        }
    }

    #[test]
    fn empty_trace_is_header_only() {
        assert_eq!(trace_csv(&[]), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn one_row_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let rows = vec![row(3, std::f64::consts::PI)];
        write_file(&p, &trace_csv(&rows)).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(!text.contains('\r'));
        assert_eq!(read_trace_csv(&p).unwrap(), rows);
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        for x in [1.0 / 3.0, 1e-300, -2.5e17, 0.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn constant_series_is_horizontal() {
        let s = PlotSeries {
            group: "c".into(),
            rows: (0..5).map(|k| row(k, 2.0)).collect(),
        };
        let (svg, rep) = render_svg(&[s], "J_train", false).unwrap();
        assert_eq!((rep.polylines, rep.mean_lines), (1, 0));
        let line = svg.lines().find(|l| l.contains("class=\"trace\"")).unwrap();
        let pts = line.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
        let ys: Vec<&str> = pts.split(' ').map(|p| p.split(',').nth(1).unwrap()).collect();
        assert!(ys.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn log_axis_clamps_zero_with_warning() {
        let s = PlotSeries {
            group: "z".into(),
            rows: vec![row(0, 1.0), row(1, 0.0), row(2, 0.01)],
        };
        let (_, rep) = render_svg(&[s], "J_train", true).unwrap();
        assert_eq!(rep.warnings.len(), 1);
        assert!(rep.warnings[0].contains("1e-2"));
    }

    #[test]
    fn multiple_seeds_get_mean_and_band() {
        let series: Vec<PlotSeries> = (0..5)
            .map(|s| PlotSeries {
                group: "indian".into(),
                rows: (0..20).map(|k| row(k, 1.0 / (k as f64 + 1.0 + s as f64))).collect(),
            })
            .collect();
        let (svg, rep) = render_svg(&series, "J_train", true).unwrap();
        assert_eq!((rep.polylines, rep.mean_lines, rep.bands), (5, 1, 1));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("J_train (log scale)"));
    }

    #[test]
    fn empty_input_rejected() {
        assert!(render_svg(&[], "J_train", false).is_err());
        let s = PlotSeries {
            group: "e".into(),
            rows: vec![],
        };
        assert!(render_svg(&[s], "J_train", false).is_err());
        let s = PlotSeries {
            group: "e".into(),
            rows: vec![row(0, 1.0)],
        };
        assert!(render_svg(std::slice::from_ref(&s), "E_max", false).is_err());
        assert!(render_svg(&[s], "nope", false).is_err());
    }
}
