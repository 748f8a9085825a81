//! CSV tables, SVG charts and the run manifest.
//!
//! SVG output is a pure function of the parsed CSV rows, so charts can be
//! re-rendered from stored tables byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::canonical_config;
use crate::error::{Error, Result};
use crate::harness::{CycleAggregate, CycleRecord, ExperimentConfig, OracleResult, RunOutcome};
use crate::instrument::{DistributionSnapshot, HistogramReport};

pub const RECORDS_HEADER: &str = "cycle,m,lambda,max_lr,best_val_acc,early_stop_test_acc,grad_std,grad_tail_mass,seed";

pub fn write_csv<W: Write, R: Serialize>(writer: W, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn read_csv<Rd: Read, R: DeserializeOwned>(reader: Rd) -> Result<Vec<R>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(Error::from)
}

pub fn to_csv_string<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Writes rows to `path`; an empty table still gets its header.
pub fn write_csv_file<R: Serialize>(path: &Path, rows: &[R], header: &str) -> Result<()> {
    if rows.is_empty() {
        return fs::write(path, format!("{header}\n")).map_err(|e| Error::io(path, e));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(file, rows)
}

pub fn read_csv_file<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

/// One histogram bin of a stored distribution snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub seed: u64,
    pub cycle: u32,
    pub lambda: f64,
    pub kind: String,
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
    pub n: u64,
    pub sample_std: f64,
    pub tail_lo: f64,
    pub tail_hi: f64,
    pub tail_mass: f64,
}

pub const HISTOGRAM_HEADER: &str = "seed,cycle,lambda,kind,bin,lo,hi,count,n,sample_std,tail_lo,tail_hi,tail_mass";

fn report_rows(seed: u64, cycle: u32, lambda: f64, kind: &str, h: &HistogramReport) -> Vec<HistogramRow> {
    h.counts
        .iter()
        .enumerate()
        .map(|(bin, &count)| HistogramRow {
            seed,
            cycle,
            lambda,
            kind: kind.to_string(),
            bin,
            lo: h.bin_edges[bin],
            hi: h.bin_edges[bin + 1],
            count,
            n: h.n,
            sample_std: h.sample_std,
            tail_lo: h.tail_lo,
            tail_hi: h.tail_hi,
            tail_mass: h.tail_mass,
        })
        .collect()
}

pub fn histogram_rows(seed: u64, snapshot: &DistributionSnapshot) -> Vec<HistogramRow> {
    let mut rows = report_rows(seed, snapshot.cycle, snapshot.lambda, "gradient", &snapshot.gradients);
    rows.extend(report_rows(
        seed,
        snapshot.cycle,
        snapshot.lambda,
        "hidden",
        &snapshot.hidden,
    ));
    rows
}

/// Histogram rows regrouped by `(seed, kind, cycle)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramGroup {
    pub seed: u64,
    pub kind: String,
    pub cycle: u32,
    pub lambda: f64,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub sample_std: f64,
    pub tail_mass: f64,
}

pub fn group_histograms(rows: &[HistogramRow]) -> Vec<HistogramGroup> {
    let mut groups: BTreeMap<(u64, String, u32), HistogramGroup> = BTreeMap::new();
    for r in rows {
        let g = groups
            .entry((r.seed, r.kind.clone(), r.cycle))
            .or_insert_with(|| HistogramGroup {
                seed: r.seed,
                kind: r.kind.clone(),
                cycle: r.cycle,
                lambda: r.lambda,
                edges: vec![r.lo],
                counts: Vec::new(),
                sample_std: r.sample_std,
                tail_mass: r.tail_mass,
            });
        g.edges.push(r.hi);
        g.counts.push(r.count);
    }
    groups.into_values().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub m: u32,
    pub runs: usize,
    pub lambda_mean: f64,
    pub max_lr_mean: f64,
    pub best_val_acc_mean: f64,
    pub best_val_acc_std: Option<f64>,
    pub early_stop_test_acc_mean: f64,
    pub early_stop_test_acc_std: Option<f64>,
}

impl From<&CycleAggregate> for AggregateRow {
    fn from(a: &CycleAggregate) -> Self {
        Self {
            m: a.m,
            runs: a.runs,
            lambda_mean: a.lambda.mean,
            max_lr_mean: a.max_lr.mean,
            best_val_acc_mean: a.best_val_acc.mean,
            best_val_acc_std: a.best_val_acc.std,
            early_stop_test_acc_mean: a.early_stop_test_acc.mean,
            early_stop_test_acc_std: a.early_stop_test_acc.std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub seed: u64,
    pub m: u32,
    pub lambda: f64,
    pub well_tuned_max_lr: f64,
    pub region_lo: f64,
    pub region_hi: f64,
    pub scyc_estimate: Option<f64>,
    pub scyc_in_region: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleBranchRow {
    pub seed: u64,
    pub m: u32,
    pub max_lr: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

pub fn oracle_rows(result: &OracleResult) -> (Vec<OracleRow>, Vec<OracleBranchRow>) {
    let mut summary = Vec::new();
    let mut branches = Vec::new();
    for c in &result.cycles {
        summary.push(OracleRow {
            seed: result.seed,
            m: c.m,
            lambda: c.lambda,
            well_tuned_max_lr: c.well_tuned_max_lr,
            region_lo: c.region_lo,
            region_hi: c.region_hi,
            scyc_estimate: c.scyc_estimate,
            scyc_in_region: c.scyc_in_region(),
        });
        branches.extend(c.branches.iter().map(|b| OracleBranchRow {
            seed: result.seed,
            m: c.m,
            max_lr: b.max_lr,
            val_acc: b.val_acc,
            test_acc: b.test_acc,
        }));
    }
    (summary, branches)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleCycleRow {
    pub cycle: u32,
    /// Nominal `100 (1 - p)^m`.
    pub lambda: f64,
    pub max_lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSampleRow {
    pub cycle: u32,
    pub iteration: u64,
    pub lr: f64,
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e-2 && v.abs() < 1e4 {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn svg_axes(out: &mut String, x_range: (f64, f64), y_range: (f64, f64), x_label: &str, y_label: &str) {
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN / 2.0, MARGIN);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let x = x0 + f * (x1 - x0);
        let y = y0 - f * (y0 - y1);
        let xv = x_range.0 + f * (x_range.1 - x_range.0);
        let yv = y_range.0 + f * (y_range.1 - y_range.0);
        let _ = writeln!(
            out,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            y0 + 16.0,
            fmt_num(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{y:.1}" text-anchor="end">{}</text>"#,
            x0 - 4.0,
            fmt_num(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

/// Bar chart of one histogram.
pub fn histogram_svg(group: &HistogramGroup) -> String {
    let mut out = String::new();
    let title = format!(
        "{} distribution, seed {}, cycle {} (lambda = {:.2}, std = {:.3e}, tail mass = {:.3})",
        group.kind, group.seed, group.cycle, group.lambda, group.sample_std, group.tail_mass
    );
    svg_open(&mut out, &title);
    let lo = group.edges[0];
    let hi = *group.edges.last().expect("edges");
    let total: u64 = group.counts.iter().sum();
    let peak = group.counts.iter().copied().max().unwrap_or(0).max(1) as f64 / total.max(1) as f64;
    svg_axes(
        &mut out,
        (lo, hi),
        (0.0, peak),
        group.kind.as_str(),
        "fraction of samples",
    );
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN / 2.0, MARGIN);
    let sx = |v: f64| x0 + (v - lo) / (hi - lo) * (x1 - x0);
    for (i, &c) in group.counts.iter().enumerate() {
        let frac = c as f64 / total.max(1) as f64;
        let h = frac / peak * (y0 - y1);
        let left = sx(group.edges[i]);
        let right = sx(group.edges[i + 1]);
        let _ = writeln!(
            out,
            r##"<rect x="{left:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="#4c72b0" stroke="white"/>"##,
            y0 - h,
            (right - left).max(0.5)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Multi-series line chart.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut out = String::new();
    svg_open(&mut out, title);
    let pts = series.iter().flat_map(|(_, s)| s.iter());
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    if !xmin.is_finite() {
        (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
    }
    if xmax == xmin {
        xmax = xmin + 1.0;
    }
    if ymax == ymin {
        ymax = ymin + 1.0;
    }
    svg_axes(&mut out, (xmin, xmax), (ymin, ymax), x_label, y_label);
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN / 2.0, MARGIN);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                format!(
                    "{:.2},{:.2}",
                    x0 + (x - xmin) / (xmax - xmin) * (x1 - x0),
                    y0 - (y - ymin) / (ymax - ymin) * (y0 - y1)
                )
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            x0 + 10.0,
            y1 + 14.0 + 14.0 * i as f64,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Test accuracy against cycle, one series per seed.
pub fn records_svg(records: &[CycleRecord]) -> String {
    let mut by_seed: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        by_seed
            .entry(r.seed)
            .or_default()
            .push((r.m as f64, 100.0 * r.early_stop_test_acc));
    }
    let series: Vec<(String, Vec<(f64, f64)>)> = by_seed.into_iter().map(|(s, p)| (format!("seed {s}"), p)).collect();
    line_chart_svg(
        "Early-stop test accuracy per pruning cycle",
        "pruning cycle m",
        "test accuracy (%)",
        &series,
    )
}

pub fn histogram_svg_name(group: &HistogramGroup) -> String {
    format!("hist_{}_seed{}_cycle{:02}.svg", group.kind, group.seed, group.cycle)
}

/// Renders every histogram group in `rows` into `dir`; returns the paths.
pub fn render_histograms(rows: &[HistogramRow], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    group_histograms(rows)
        .iter()
        .map(|g| {
            let path = dir.join(histogram_svg_name(g));
            fs::write(&path, histogram_svg(g)).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub records_csv: PathBuf,
    pub histograms_csv: PathBuf,
    pub aggregates_csv: PathBuf,
    pub svg_dir: PathBuf,
    pub tool_version: String,
    pub failures: Vec<String>,
}

/// SHA-256 of the canonical config text; independent of key order in the
/// source file.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(canonical_config(cfg).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes records, histograms, aggregates, SVGs and the manifest of a
/// multi-seed run into `out_dir`.
pub fn write_run_artifacts(out_dir: &Path, cfg: &ExperimentConfig, runs: &[RunOutcome]) -> Result<RunManifest> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records: Vec<CycleRecord> = runs.iter().flat_map(|r| r.records()).collect();
    let hist: Vec<HistogramRow> = runs
        .iter()
        .flat_map(|r| r.cycles.iter().flat_map(move |c| histogram_rows(r.seed, &c.snapshot)))
        .collect();
    let per_seed: Vec<Vec<CycleRecord>> = runs.iter().map(RunOutcome::records).collect();
    let aggregates: Vec<AggregateRow> = crate::harness::aggregate_runs(&per_seed)
        .iter()
        .map(AggregateRow::from)
        .collect();

    let records_csv = out_dir.join("records.csv");
    let histograms_csv = out_dir.join("histograms.csv");
    let aggregates_csv = out_dir.join("aggregates.csv");
    let svg_dir = out_dir.join("svg");
    write_csv_file(&records_csv, &records, RECORDS_HEADER)?;
    write_csv_file(&histograms_csv, &hist, HISTOGRAM_HEADER)?;
    write_csv_file(
        &aggregates_csv,
        &aggregates,
        "m,runs,lambda_mean,max_lr_mean,best_val_acc_mean,best_val_acc_std,early_stop_test_acc_mean,early_stop_test_acc_std",
    )?;

    // charts come from the stored tables, not the in-memory runs
    let stored_hist: Vec<HistogramRow> = read_csv_file(&histograms_csv)?;
    render_histograms(&stored_hist, &svg_dir)?;
    let stored_records: Vec<CycleRecord> = read_csv_file(&records_csv)?;
    let acc_path = svg_dir.join("accuracy.svg");
    fs::write(&acc_path, records_svg(&stored_records)).map_err(|e| Error::io(&acc_path, e))?;

    let manifest = RunManifest {
        config_hash: config_hash(cfg),
        seeds: cfg.seeds.clone(),
        records_csv,
        histograms_csv,
        aggregates_csv,
        svg_dir,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        failures: runs
            .iter()
            .filter_map(|r| {
                r.failure
                    .as_ref()
                    .map(|f| format!("seed {} cycle {}: {:?}: {}", r.seed, f.cycle, f.kind, f.message))
            })
            .collect(),
    };
    write_manifest(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::build_histogram;
    use proptest::prelude::*;

    fn record_strategy() -> impl Strategy<Value = CycleRecord> {
        (
            0u32..30,
            0.0f64..=100.0,
            0.0f64..1.0,
            0.0f64..=1.0,
            0.0f64..=1.0,
            0.0f64..1.0,
            0.0f64..=1.0,
            any::<u64>(),
        )
            .prop_map(|(m, lambda, max_lr, val, test, std, tail, seed)| CycleRecord {
                cycle: m,
                m,
                lambda,
                max_lr,
                best_val_acc: val,
                early_stop_test_acc: test,
                grad_std: std,
                grad_tail_mass: tail,
                seed,
            })
    }

    proptest! {
        #[test]
        fn records_roundtrip_through_csv(rows in prop::collection::vec(record_strategy(), 1..20)) {
            let text = to_csv_string(&rows).unwrap();
            prop_assert!(text.starts_with(RECORDS_HEADER));
            let back: Vec<CycleRecord> = read_csv(text.as_bytes()).unwrap();
            prop_assert_eq!(back, rows);
        }
    }

    #[test]
    fn histogram_rows_regroup() {
        let h = build_histogram(&[0.1, -0.2, 0.3, 0.05, 0.0], -0.15, 0.15).unwrap();
        let snap = DistributionSnapshot {
            cycle: 3,
            lambda: 51.2,
            gradients: h.clone(),
            hidden: h.clone(),
        };
        let rows = histogram_rows(9, &snap);
        let text = to_csv_string(&rows).unwrap();
        assert!(text.starts_with(HISTOGRAM_HEADER));
        let back: Vec<HistogramRow> = read_csv(text.as_bytes()).unwrap();
        let groups = group_histograms(&back);
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].edges, h.bin_edges);
        assert_eq!(groups[0].counts, h.counts);
        assert!(histogram_svg(&groups[0]).starts_with("<svg"));
    }

    #[test]
    fn optional_fields_survive_csv() {
        let rows = vec![OracleRow {
            seed: 1,
            m: 0,
            lambda: 100.0,
            well_tuned_max_lr: 0.04,
            region_lo: 0.036,
            region_hi: 0.042,
            scyc_estimate: None,
            scyc_in_region: None,
        }];
        let back: Vec<OracleRow> = read_csv(to_csv_string(&rows).unwrap().as_bytes()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn line_chart_is_deterministic() {
        let s = vec![("a".to_string(), vec![(0.0, 1.0), (1.0, 2.0)])];
        assert_eq!(line_chart_svg("t", "x", "y", &s), line_chart_svg("t", "x", "y", &s));
        assert!(line_chart_svg("t <&>", "x", "y", &[]).contains("t &lt;&amp;&gt;"));
    }

    #[test]
    fn config_hash_ignores_key_order() {
        let a = crate::config::parse_config_str("epochs = 3\ncycles = 2\n", Path::new(".")).unwrap();
        let b = crate::config::parse_config_str("cycles = 2\n\nepochs = 3 # same\n", Path::new(".")).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        let c = crate::config::parse_config_str("cycles = 3\nepochs = 3\n", Path::new(".")).unwrap();
        assert_ne!(config_hash(&a), config_hash(&c));
    }
}
