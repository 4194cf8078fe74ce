//! Parameter sweeps over the component-generation grid, and policy
//! recommendation from sweep results.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{RunSummary, SimulationReport};
use crate::report::{self, OutputFormat, Stat};
use crate::simulator::{self, RunConfig};

/// The four levels every grid parameter takes by default.
pub const GRID_LEVELS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Label of the run every efficiency score is measured against.
pub const BASELINE_LABEL: &str = "pco";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridParam {
    OptionalUtilizationThreshold,
    OptionalPercentage,
    ConnectedPercentage,
    Discount,
}

/// One grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub optional_utilization_threshold: f64,
    pub optional_percentage: f64,
    pub connected_percentage: f64,
    pub discount: f64,
}

impl Cell {
    /// Stable key such as `u0.50_o0.50_c0.25_d0.50`.
    pub fn key(&self) -> String {
        format!(
            "u{:.2}_o{:.2}_c{:.2}_d{:.2}",
            self.optional_utilization_threshold,
            self.optional_percentage,
            self.connected_percentage,
            self.discount
        )
    }

    pub fn apply(&self, config: &mut RunConfig) {
        let c = &mut config.components;
        c.optional_utilization_threshold = self.optional_utilization_threshold;
        c.optional_percentage = self.optional_percentage;
        c.connected_percentage = self.connected_percentage;
        c.discount_total = Some(self.discount);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Labels as accepted by [`RunConfig::set_algorithm_label`].
    pub algorithms: Vec<String>,
    pub seeds: Vec<u64>,
    /// Levels of the varied parameters.
    pub grid: BTreeMap<GridParam, Vec<f64>>,
    /// Level of every parameter not in `grid`. Discount follows the
    /// optional utilization threshold unless varied itself.
    pub fixed_level: f64,
    pub base: RunConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            algorithms: ["pco", "ubp", "lufcs", "lpfcs", "huprfcs"]
                .map(String::from)
                .to_vec(),
            seeds: vec![1, 2],
            grid: [
                GridParam::OptionalUtilizationThreshold,
                GridParam::OptionalPercentage,
                GridParam::ConnectedPercentage,
            ]
            .into_iter()
            .map(|p| (p, GRID_LEVELS.to_vec()))
            .collect(),
            fixed_level: 0.5,
            base: RunConfig::default(),
        }
    }
}

impl SweepSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("a sweep needs algorithms and seeds".into()));
        }
        if self.grid.values().any(Vec::is_empty) {
            return Err(Error::Config("every grid parameter needs at least one level".into()));
        }
        for v in self.grid.values().flatten().chain([&self.fixed_level]) {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::Config(format!("grid level {v} is outside [0, 1]")));
            }
        }
        let mut probe = self.base.clone();
        for a in &self.algorithms {
            probe.set_algorithm_label(a)?;
        }
        Ok(())
    }

    /// Cartesian product of the grid, in parameter then level order.
    pub fn cells(&self) -> Vec<Cell> {
        let levels = |p: GridParam| {
            self.grid
                .get(&p)
                .cloned()
                .unwrap_or_else(|| vec![self.fixed_level])
        };
        let mut out = Vec::new();
        for &u in &levels(GridParam::OptionalUtilizationThreshold) {
            for &o in &levels(GridParam::OptionalPercentage) {
                for &c in &levels(GridParam::ConnectedPercentage) {
                    let discounts = self
                        .grid
                        .get(&GridParam::Discount)
                        .cloned()
                        .unwrap_or_else(|| vec![u]);
                    for d in discounts {
                        out.push(Cell {
                            optional_utilization_threshold: u,
                            optional_percentage: o,
                            connected_percentage: c,
                            discount: d,
                        });
                    }
                }
            }
        }
        out
    }

    /// Every (cell, algorithm, seed) configuration.
    pub fn jobs(&self) -> Result<Vec<(Cell, RunConfig)>> {
        self.validate()?;
        let mut jobs = Vec::new();
        for cell in self.cells() {
            for alg in &self.algorithms {
                for &seed in &self.seeds {
                    let mut cfg = self.base.clone();
                    cell.apply(&mut cfg);
                    cfg.set_algorithm_label(alg)?;
                    cfg.seed = seed;
                    jobs.push((cell, cfg));
                }
            }
        }
        Ok(jobs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: String,
    pub label: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<RunSummary>,
    pub failures: Vec<CellFailure>,
}

/// Sets baseline energy and efficiency on every row that has a baseline
/// run with the same cell and seed.
pub fn attach_baselines(rows: &mut [RunSummary]) {
    let baselines: BTreeMap<(String, u64), f64> = rows
        .iter()
        .filter(|r| r.label == BASELINE_LABEL)
        .map(|r| ((r.cell.clone(), r.seed), r.energy_kwh))
        .collect();
    for r in rows.iter_mut() {
        if let Some(&b) = baselines.get(&(r.cell.clone(), r.seed)) {
            if let Err(e) = r.set_baseline(b) {
                log::warn!("no efficiency for {} {} seed {}: {e}", r.cell, r.label, r.seed);
            }
        }
    }
}

/// Runs every job of `spec` in parallel. Failed runs are recorded and the
/// sweep carries on.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutcome> {
    let jobs = spec.jobs()?;
    let results: Vec<(Cell, RunConfig, Result<SimulationReport>)> = jobs
        .into_par_iter()
        .map(|(cell, cfg)| {
            let r = simulator::run(&cfg);
            (cell, cfg, r)
        })
        .collect();
    let mut out = SweepOutcome::default();
    for (cell, cfg, result) in results {
        match result {
            Ok(report) => {
                let mut row = report.summary();
                row.cell = cell.key();
                out.rows.push(row);
            }
            Err(e) => {
                log::error!("{} {} seed {}: {e}", cell.key(), cfg.label(), cfg.seed);
                out.failures.push(CellFailure {
                    cell: cell.key(),
                    label: cfg.label(),
                    seed: cfg.seed,
                    error: e.to_string(),
                });
            }
        }
    }
    attach_baselines(&mut out.rows);
    Ok(out)
}

/// Runs one configuration and, unless it is the baseline itself, the
/// baseline on the same workload so the summary carries an efficiency.
pub fn run_single(config: &RunConfig) -> Result<(SimulationReport, RunSummary)> {
    let report = simulator::run(config)?;
    let mut row = report.summary();
    let baseline_kwh = if config.label() == BASELINE_LABEL {
        row.energy_kwh
    } else {
        let mut base = config.clone();
        base.set_algorithm_label(BASELINE_LABEL)?;
        simulator::run(&base)?.total_energy_kwh
    };
    if let Err(e) = row.set_baseline(baseline_kwh) {
        log::warn!("no efficiency for {}: {e}", row.label);
    }
    Ok((report, row))
}

pub const CELLS_DIR: &str = "cells";
pub const FAILURES_FILE: &str = "failures.csv";

/// Writes sweep results: the combined report set, one run table per cell
/// under `cells/`, and `failures.csv` when any run failed.
pub fn write_sweep(
    dir: &Path,
    spec: &SweepSpec,
    outcome: &SweepOutcome,
    format: OutputFormat,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    if !outcome.rows.is_empty() {
        written.extend(report::emit_report(dir, &outcome.rows, &spec.base, format)?);
    }
    if format == OutputFormat::Csv {
        let cells_dir = dir.join(CELLS_DIR);
        fs::create_dir_all(&cells_dir).map_err(|e| Error::io(&cells_dir, e))?;
        let mut by_cell: BTreeMap<&str, Vec<RunSummary>> = BTreeMap::new();
        for r in &outcome.rows {
            by_cell.entry(&r.cell).or_default().push(r.clone());
        }
        for (cell, rows) in by_cell {
            let p = cells_dir.join(format!("{cell}.csv"));
            report::write_runs_csv(&p, &rows)?;
            written.push(p);
        }
    }
    let failures = dir.join(FAILURES_FILE);
    if outcome.failures.is_empty() {
        // stale failures from an earlier sweep into the same directory
        let _ = fs::remove_file(&failures);
    } else {
        let mut w = csv::Writer::from_path(&failures)?;
        for f in &outcome.failures {
            w.serialize(f)?;
        }
        w.flush().map_err(|e| Error::io(&failures, e))?;
        written.push(failures);
    }
    Ok(written)
}

/// Argmin-efficiency choice for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub cell: String,
    pub pattern: String,
    pub optional_utilization_threshold: f64,
    pub optional_percentage: f64,
    pub connected_percentage: f64,
    pub discount: f64,
    pub policy: String,
    /// Absent when the cell holds one algorithm and no baseline.
    pub efficiency: Option<Stat>,
    pub discount_fraction: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncompleteCell {
    pub cell: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub recommendations: Vec<Recommendation>,
    pub incomplete: Vec<IncompleteCell>,
}

/// Recommends, per cell, the algorithm with the lowest mean efficiency.
/// Brownout policies compete among themselves; baselines are only
/// recommended when a cell has no policy runs. A cell is incomplete, and
/// skipped, when its algorithms ran on different seeds or a seed lacks the
/// baseline run.
pub fn compare(rows: &[RunSummary]) -> Comparison {
    let mut cells: BTreeMap<&str, Vec<&RunSummary>> = BTreeMap::new();
    for r in rows {
        cells.entry(&r.cell).or_default().push(r);
    }
    let mut out = Comparison::default();
    for (cell, rs) in cells {
        let mut by_label: BTreeMap<&str, Vec<&RunSummary>> = BTreeMap::new();
        for r in &rs {
            by_label.entry(&r.label).or_default().push(r);
        }
        let all_seeds: BTreeSet<u64> = rs.iter().map(|r| r.seed).collect();
        let first = rs[0];
        let recommend = |label: &str, group: &[&RunSummary], efficiency: Option<Stat>| Recommendation {
            cell: cell.to_string(),
            pattern: format!("{:?}", first.pattern).to_ascii_lowercase(),
            optional_utilization_threshold: first.optional_utilization_threshold,
            optional_percentage: first.optional_percentage,
            connected_percentage: first.connected_percentage,
            discount: first.discount_total,
            policy: label.to_string(),
            efficiency,
            discount_fraction: crate::metrics::mean(
                &group.iter().map(|r| r.discount_fraction).collect::<Vec<_>>(),
            ),
            seeds: group.len(),
        };

        if by_label.len() == 1 && rs.iter().any(|r| r.efficiency.is_none()) {
            let (label, group) = by_label.into_iter().next().expect("one label");
            out.recommendations.push(recommend(label, &group, None));
            continue;
        }
        let mut problems = Vec::new();
        for (label, group) in &by_label {
            let seeds: BTreeSet<u64> = group.iter().map(|r| r.seed).collect();
            if seeds != all_seeds || seeds.len() != group.len() {
                problems.push(format!("{label} ran on seeds {seeds:?}, cell has {all_seeds:?}"));
            }
            if group.iter().any(|r| r.efficiency.is_none()) {
                problems.push(format!("{label} lacks a {BASELINE_LABEL} baseline for some seed"));
            }
        }
        if !problems.is_empty() {
            out.incomplete.push(IncompleteCell {
                cell: cell.to_string(),
                reason: problems.join("; "),
            });
            continue;
        }
        let has_policy = by_label
            .keys()
            .any(|l| *l != BASELINE_LABEL && *l != "ubp");
        let best = by_label
            .iter()
            .filter(|(l, _)| !has_policy || (**l != BASELINE_LABEL && **l != "ubp"))
            .map(|(l, g)| {
                let effs: Vec<f64> = g.iter().filter_map(|r| r.efficiency).collect();
                (*l, g, Stat::of(&effs).expect("complete group has efficiencies"))
            })
            .min_by(|a, b| a.2.mean.total_cmp(&b.2.mean).then(a.0.cmp(b.0)));
        if let Some((label, group, stat)) = best {
            out.recommendations.push(recommend(label, group, Some(stat)));
        }
    }
    out
}

pub const COMPARISON_FILE: &str = "comparison.csv";

/// Writes the recommendation table and returns its path.
pub fn write_comparison(dir: &Path, cmp: &Comparison) -> Result<PathBuf> {
    let p = dir.join(COMPARISON_FILE);
    let file = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "cell",
        "pattern",
        "discount",
        "optional_utilization_threshold",
        "optional_percentage",
        "connected_percentage",
        "policy",
        "efficiency_mean",
        "efficiency_ci_lo",
        "efficiency_ci_hi",
        "discount_fraction",
        "seeds",
    ])?;
    let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &cmp.recommendations {
        w.write_record([
            r.cell.clone(),
            r.pattern.clone(),
            r.discount.to_string(),
            r.optional_utilization_threshold.to_string(),
            r.optional_percentage.to_string(),
            r.connected_percentage.to_string(),
            r.policy.clone(),
            o(r.efficiency.map(|s| s.mean)),
            o(r.efficiency.and_then(|s| s.ci_lo)),
            o(r.efficiency.and_then(|s| s.ci_hi)),
            r.discount_fraction.to_string(),
            r.seeds.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;
    Ok(p)
}

pub const COMPARISON_JSON_FILE: &str = "comparison.json";

pub fn write_comparison_json(dir: &Path, cmp: &Comparison) -> Result<PathBuf> {
    let p = dir.join(COMPARISON_JSON_FILE);
    let mut text = serde_json::to_string_pretty(cmp)?;
    text.push('\n');
    fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    Ok(p)
}

/// Reads `runs.csv` from a sweep directory and compares it.
pub fn compare_dir(dir: &Path) -> Result<Comparison> {
    let rows = report::read_runs_csv(&dir.join(report::RUNS_FILE))?;
    Ok(compare(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::DesignPattern;

    fn row(cell: &str, label: &str, seed: u64, energy: f64, discount: f64) -> RunSummary {
        RunSummary {
            cell: cell.into(),
            label: label.into(),
            seed,
            pattern: DesignPattern::Approximate,
            optional_utilization_threshold: 0.5,
            optional_percentage: 0.5,
            connected_percentage: 0.25,
            discount_total: 0.5,
            hosts: 20,
            vms: 40,
            energy_kwh: energy,
            discount_fraction: discount,
            disabled_utilization_total: 0.0,
            mean_shutdown_hosts: 0.0,
            migrations: 0,
            deactivations: 0,
            violations: 0,
            max_overloaded: 0,
            alpha: 1.0,
            baseline_energy_kwh: None,
            efficiency: None,
        }
    }

    #[test]
    fn default_grid_is_four_cubed() {
        let spec = SweepSpec::default();
        let cells = spec.cells();
        assert_eq!(cells.len(), 64);
        assert!(cells.iter().all(|c| c.discount == c.optional_utilization_threshold));
        assert_eq!(spec.jobs().unwrap().len(), 64 * 5 * 2);
    }

    #[test]
    fn two_parameter_grid_counts() {
        let spec = SweepSpec {
            algorithms: vec!["lufcs".into(), "lpfcs".into(), "huprfcs".into()],
            grid: [
                (GridParam::OptionalUtilizationThreshold, GRID_LEVELS.to_vec()),
                (GridParam::OptionalPercentage, GRID_LEVELS.to_vec()),
            ]
            .into(),
            ..Default::default()
        };
        assert_eq!(spec.jobs().unwrap().len(), 96);
        assert!(spec.cells().iter().all(|c| c.connected_percentage == 0.5));
    }

    #[test]
    fn cell_keys() {
        let c = Cell {
            optional_utilization_threshold: 0.5,
            optional_percentage: 0.5,
            connected_percentage: 0.25,
            discount: 0.5,
        };
        assert_eq!(c.key(), "u0.50_o0.50_c0.25_d0.50");
    }

    #[test]
    fn bad_specs() {
        let s = SweepSpec {
            algorithms: vec!["best".into()],
            ..Default::default()
        };
        assert!(s.validate().is_err());
        let mut s = SweepSpec::default();
        s.grid.insert(GridParam::Discount, vec![]);
        assert!(s.validate().is_err());
        assert!(SweepSpec::from_toml_str("algorithms = [\"pco\"]\nseeds = [1]\n").is_ok());
        assert!(SweepSpec::from_toml_str("colour = 1").is_err());
    }

    #[test]
    fn argmin_matches_hand_computation() {
        let mut rows = vec![];
        for seed in [1, 2] {
            rows.push(row("a", "pco", seed, 100.0, 0.0));
            rows.push(row("a", "lufcs", seed, 80.0, 0.15)); // 0.95
            rows.push(row("a", "lpfcs", seed, 85.0, 0.05)); // 0.90
            rows.push(row("a", "ubp", seed, 70.0, 0.0)); // 0.70, baseline-only
        }
        attach_baselines(&mut rows);
        let cmp = compare(&rows);
        assert!(cmp.incomplete.is_empty());
        let rec = &cmp.recommendations[0];
        assert_eq!(rec.policy, "lpfcs");
        let eff = rec.efficiency.unwrap();
        assert!((eff.mean - 0.90).abs() < 1e-12);
        assert_eq!((eff.ci_lo, eff.ci_hi), (Some(eff.mean), Some(eff.mean)));
    }

    #[test]
    fn single_policy_is_recommended_trivially() {
        let rows = vec![row("b", "nufcs", 1, 10.0, 0.1)];
        let cmp = compare(&rows);
        assert_eq!(cmp.recommendations[0].policy, "nufcs");
        assert!(cmp.recommendations[0].efficiency.is_none());
    }

    #[test]
    fn incomplete_cells_are_listed() {
        let mut rows = vec![
            row("c", "pco", 1, 100.0, 0.0),
            row("c", "lufcs", 1, 90.0, 0.0),
            row("c", "lufcs", 2, 90.0, 0.0),
        ];
        attach_baselines(&mut rows);
        let cmp = compare(&rows);
        assert!(cmp.recommendations.is_empty());
        assert_eq!(cmp.incomplete[0].cell, "c");
    }

    #[test]
    fn small_sweep_end_to_end() {
        let spec = SweepSpec {
            algorithms: vec!["pco".into(), "lufcs".into()],
            seeds: vec![1, 2],
            grid: [(GridParam::OptionalUtilizationThreshold, vec![0.5])].into(),
            base: RunConfig {
                hosts: vec![2, 2],
                vms: vec![2, 2, 2, 2],
                horizon_intervals: 12,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = run_sweep(&spec).unwrap();
        assert_eq!(out.rows.len(), 4);
        assert!(out.failures.is_empty());
        assert!(out.rows.iter().all(|r| r.efficiency.is_some()));
        let dir = tempfile::tempdir().unwrap();
        write_sweep(dir.path(), &spec, &out, OutputFormat::Csv).unwrap();
        assert!(dir.path().join(CELLS_DIR).join("u0.50_o0.50_c0.50_d0.50.csv").exists());
        let cmp = compare_dir(dir.path()).unwrap();
        assert_eq!(cmp.recommendations.len(), 1);
        assert_eq!(cmp.recommendations[0].policy, "lufcs");
    }
}
