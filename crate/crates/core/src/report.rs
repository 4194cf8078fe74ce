//! Report files: run tables, per-cell aggregates, interval series and a
//! JSON summary. Output depends only on its inputs, so re-emitting the same
//! reports gives byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{confidence_interval_95, mean, RunSummary, SimulationReport};
use crate::simulator::RunConfig;

pub const RUNS_SCHEMA: &str = "brownsim.runs.v1";
pub const AGGREGATES_SCHEMA: &str = "brownsim.aggregates.v1";
pub const INTERVALS_SCHEMA: &str = "brownsim.intervals.v1";
pub const SUMMARY_SCHEMA: &str = "brownsim.summary.v1";

pub const RUNS_FILE: &str = "runs.csv";
pub const AGGREGATES_FILE: &str = "aggregates.csv";
pub const INTERVALS_FILE: &str = "intervals.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    /// Tables plus the JSON summary.
    #[default]
    Csv,
    /// The JSON summary only.
    Summary,
}

/// Mean and 95% interval of one metric over seeds. The interval is absent
/// for a single seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

impl Stat {
    pub fn of(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let ci = confidence_interval_95(samples).ok();
        Some(Self {
            mean: mean(samples),
            ci_lo: ci.map(|c| c.0),
            ci_hi: ci.map(|c| c.1),
        })
    }
}

/// Seed-aggregated figures for one (cell, algorithm) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub cell: String,
    pub label: String,
    pub runs: usize,
    pub energy_kwh: Stat,
    pub discount_fraction: Stat,
    pub disabled_utilization_total: Stat,
    pub mean_shutdown_hosts: Stat,
    pub migrations: Stat,
    pub efficiency: Option<Stat>,
}

/// Groups rows by (cell, label) in sorted order.
pub fn group_rows(rows: &[RunSummary]) -> BTreeMap<(String, String), Vec<&RunSummary>> {
    let mut groups: BTreeMap<(String, String), Vec<&RunSummary>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.cell.clone(), r.label.clone()))
            .or_default()
            .push(r);
    }
    groups
}

pub fn aggregate(rows: &[RunSummary]) -> Vec<Aggregate> {
    group_rows(rows)
        .into_iter()
        .map(|((cell, label), rs)| {
            let col = |f: fn(&RunSummary) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let effs: Option<Vec<f64>> = rs.iter().map(|r| r.efficiency).collect();
            Aggregate {
                cell,
                label,
                runs: rs.len(),
                energy_kwh: Stat::of(&col(|r| r.energy_kwh)).expect("group is non-empty"),
                discount_fraction: Stat::of(&col(|r| r.discount_fraction)).expect("non-empty"),
                disabled_utilization_total: Stat::of(&col(|r| r.disabled_utilization_total))
                    .expect("non-empty"),
                mean_shutdown_hosts: Stat::of(&col(|r| r.mean_shutdown_hosts)).expect("non-empty"),
                migrations: Stat::of(&col(|r| r.migrations as f64)).expect("non-empty"),
                efficiency: effs.and_then(|e| Stat::of(&e)),
            }
        })
        .collect()
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn schema_line(file: &mut fs::File, path: &Path, schema: &str) -> Result<()> {
    writeln!(file, "#schema={schema}").map_err(|e| Error::io(path, e))
}

/// Writes `rows` with a leading `#schema=` comment line.
pub fn write_runs_csv(path: &Path, rows: &[RunSummary]) -> Result<()> {
    let mut file = create(path)?;
    schema_line(&mut file, path, RUNS_SCHEMA)?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_runs_csv(path: &Path) -> Result<Vec<RunSummary>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(file);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_aggregates_csv(path: &Path, aggs: &[Aggregate]) -> Result<()> {
    let mut file = create(path)?;
    schema_line(&mut file, path, AGGREGATES_SCHEMA)?;
    let mut w = csv::Writer::from_writer(file);
    let stats = [
        "energy_kwh",
        "discount_fraction",
        "disabled_utilization_total",
        "mean_shutdown_hosts",
        "migrations",
        "efficiency",
    ];
    let mut header = vec!["cell".to_string(), "label".into(), "runs".into()];
    for s in stats {
        header.extend([format!("{s}_mean"), format!("{s}_ci_lo"), format!("{s}_ci_hi")]);
    }
    w.write_record(&header)?;
    for a in aggs {
        let mut rec = vec![a.cell.clone(), a.label.clone(), a.runs.to_string()];
        let all = [
            Some(a.energy_kwh),
            Some(a.discount_fraction),
            Some(a.disabled_utilization_total),
            Some(a.mean_shutdown_hosts),
            Some(a.migrations),
            a.efficiency,
        ];
        for s in all {
            rec.push(opt(s.map(|s| s.mean)));
            rec.push(opt(s.and_then(|s| s.ci_lo)));
            rec.push(opt(s.and_then(|s| s.ci_hi)));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Per-interval series of one run.
pub fn write_intervals_csv(path: &Path, report: &SimulationReport) -> Result<()> {
    let mut file = create(path)?;
    schema_line(&mut file, path, INTERVALS_SCHEMA)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "t",
        "power_w",
        "energy_kwh",
        "overloaded",
        "overloaded_after_brownout",
        "deactivations",
        "reactivated",
        "migrations",
        "unresolved_evictions",
        "active_hosts",
        "off_hosts",
        "discount_sum",
        "disabled_utilization",
        "violations",
        "t_b",
        "t_m",
        "t_0",
    ])?;
    for s in &report.intervals {
        w.write_record([
            s.t.to_string(),
            s.total_power().to_string(),
            s.energy_kwh.to_string(),
            s.overloaded_count.to_string(),
            s.overloaded_after_brownout.to_string(),
            s.deactivations.len().to_string(),
            s.reactivated.to_string(),
            s.migrations.to_string(),
            s.unresolved_evictions.to_string(),
            s.active_hosts.to_string(),
            s.off_hosts.to_string(),
            s.discount_sum.to_string(),
            s.disabled_utilization.to_string(),
            s.violations.to_string(),
            s.phase.t_b.to_string(),
            s.phase.t_m.to_string(),
            s.phase.t_0.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct Summary<'a> {
    schema: &'static str,
    runs: usize,
    config: &'a RunConfig,
    rows: &'a [RunSummary],
    aggregates: Vec<Aggregate>,
}

/// Writes the report set for `rows` into `dir` and returns the paths
/// written. `config` is echoed into the summary so runs can be replayed.
pub fn emit_report(
    dir: &Path,
    rows: &[RunSummary],
    config: &RunConfig,
    format: OutputFormat,
) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::Config("nothing to report".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let aggregates = aggregate(rows);
    let mut written = Vec::new();
    if format == OutputFormat::Csv {
        let p = dir.join(RUNS_FILE);
        write_runs_csv(&p, rows)?;
        written.push(p);
        let p = dir.join(AGGREGATES_FILE);
        write_aggregates_csv(&p, &aggregates)?;
        written.push(p);
    }
    let summary = Summary {
        schema: SUMMARY_SCHEMA,
        runs: rows.len(),
        config,
        rows,
        aggregates,
    };
    let p = dir.join(SUMMARY_FILE);
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    written.push(p);
    Ok(written)
}

/// One-line human summary of a run.
pub fn summary_line(row: &RunSummary) -> String {
    let eff = row
        .efficiency
        .map(|e| format!("{e:.4}"))
        .unwrap_or_else(|| "n/a".into());
    format!(
        "{} seed={} energy={:.3} kWh discount={:.2}% eff={} migrations={} shutdown_hosts={:.2}",
        row.label,
        row.seed,
        row.energy_kwh,
        row.discount_fraction * 100.0,
        eff,
        row.migrations,
        row.mean_shutdown_hosts
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{run, Algorithm};

    fn row(label: &str, seed: u64, energy: f64) -> RunSummary {
        let mut r = run(&RunConfig {
            hosts: vec![1, 1],
            vms: vec![1, 1, 1, 1],
            horizon_intervals: 2,
            algorithm: Algorithm::Pco,
            ..Default::default()
        })
        .unwrap()
        .summary();
        r.label = label.into();
        r.seed = seed;
        r.energy_kwh = energy;
        r
    }

    #[test]
    fn runs_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = vec![row("pco", 1, 2.0), row("lufcs", 1, 1.5)];
        rows[1].set_baseline(2.0).unwrap();
        let p = dir.path().join("r.csv");
        write_runs_csv(&p, &rows).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("#schema=brownsim.runs.v1\n"));
        assert_eq!(read_runs_csv(&p).unwrap(), rows);
    }

    #[test]
    fn aggregates_over_seeds() {
        let rows: Vec<RunSummary> = (0..10).map(|s| row("pco", s, 10.0 + s as f64)).collect();
        let aggs = aggregate(&rows);
        assert_eq!(aggs.len(), 1);
        assert_eq!(aggs[0].runs, 10);
        assert_eq!(aggs[0].energy_kwh.mean, 14.5);
        assert!(aggs[0].energy_kwh.ci_lo.unwrap() < 14.5);
        assert!(aggs[0].efficiency.is_none());
        let single = aggregate(&rows[..1]);
        assert!(single[0].energy_kwh.ci_lo.is_none());
    }

    #[test]
    fn emit_is_deterministic_and_respects_format() {
        let rows: Vec<RunSummary> = (0..3).map(|s| row("pco", s, 1.0)).collect();
        let cfg = RunConfig::default();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let files = emit_report(a.path(), &rows, &cfg, OutputFormat::Csv).unwrap();
        emit_report(b.path(), &rows, &cfg, OutputFormat::Csv).unwrap();
        assert_eq!(files.len(), 3);
        for f in &files {
            let name = f.file_name().unwrap();
            assert_eq!(fs::read(f).unwrap(), fs::read(b.path().join(name)).unwrap());
        }
        let c = tempfile::tempdir().unwrap();
        let files = emit_report(c.path(), &rows, &cfg, OutputFormat::Summary).unwrap();
        assert_eq!(files, vec![c.path().join(SUMMARY_FILE)]);
        assert!(emit_report(c.path(), &[], &cfg, OutputFormat::Csv).is_err());
    }

    #[test]
    fn unwritable_dir_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let e = emit_report(&blocker.join("sub"), &[row("pco", 1, 1.0)], &RunConfig::default(), OutputFormat::Csv)
            .unwrap_err();
        assert!(matches!(e, Error::Io { .. }));
    }
}
