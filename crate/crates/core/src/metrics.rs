//! Reported quantities, run statistics and the overload cost-ratio check.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::simulator::{IntervalSample, RunConfig};
use crate::workload::DesignPattern;

/// Energy relative to a baseline plus weighted discount. Lower is better.
pub fn efficiency(energy_kwh: f64, baseline_kwh: f64, discount: f64, alpha: f64) -> Result<f64> {
    if !(baseline_kwh > 0.0) {
        return Err(Error::Domain {
            what: "baseline energy must be positive",
            value: baseline_kwh,
        });
    }
    if !(0.0..=1.0).contains(&discount) {
        return Err(Error::Domain {
            what: "discount fraction must lie in [0, 1]",
            value: discount,
        });
    }
    if !(alpha >= 0.0) {
        return Err(Error::Domain {
            what: "alpha must be non-negative",
            value: alpha,
        });
    }
    Ok(energy_kwh / baseline_kwh + alpha * discount)
}

/// Mean refunded fraction per VM per interval, from each interval's sum of
/// per-VM discounts.
pub fn discount_fraction(per_interval_sums: &[f64], vms: usize) -> f64 {
    if per_interval_sums.is_empty() || vms == 0 {
        return 0.0;
    }
    per_interval_sums.iter().sum::<f64>() / (vms * per_interval_sums.len()) as f64
}

/// How one interval divides between the brownout phase, the migration
/// phase and idle time, with the overloaded-host count seen in each phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseSplit {
    pub t_b: f64,
    pub t_m: f64,
    pub t_0: f64,
    pub overloaded_brownout: usize,
    pub overloaded_migration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostAccounting {
    /// Cost of a running host per unit time.
    pub c_e: f64,
    /// Extra cost of an overloaded host per unit time.
    pub c_o: f64,
    pub homogeneous: bool,
    pub phases: Vec<PhaseSplit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRatio {
    pub ratio: f64,
    pub bound: f64,
    /// Largest overloaded-host count seen in either phase.
    pub max_overloaded: usize,
    /// Whether `max_overloaded` stays within the bound's precondition.
    pub precondition_holds: bool,
}

impl CostRatio {
    pub fn within_bound(&self) -> bool {
        self.ratio <= self.bound + 1e-12
    }
}

/// Cost of the run against an offline optimum that never overloads:
/// `sum(t_b (M c_e + M_o c_o) + t_m (M c_e + M_o' c_o)) / sum((t_b + t_m) M c_e)`,
/// and the bound `1 + N eps / (N + M)` with `eps = c_o / c_e`.
pub fn empirical_cost_ratio(acct: &CostAccounting, hosts: usize, vms: usize) -> Result<CostRatio> {
    if !acct.homogeneous {
        return Err(Error::Config("cost ratio needs a homogeneous fleet".into()));
    }
    if hosts == 0 || vms == 0 {
        return Err(Error::Degenerate("cost ratio needs hosts and vms".into()));
    }
    if !(acct.c_e > 0.0) || !(acct.c_o >= 0.0) {
        return Err(Error::Domain {
            what: "cost ratio needs c_e > 0 and c_o >= 0",
            value: acct.c_o.min(acct.c_e),
        });
    }
    let m = hosts as f64;
    let n = vms as f64;
    let mut cost = 0.0;
    let mut opt = 0.0;
    let mut max_overloaded = 0;
    for p in &acct.phases {
        cost += p.t_b * (m * acct.c_e + p.overloaded_brownout as f64 * acct.c_o)
            + p.t_m * (m * acct.c_e + p.overloaded_migration as f64 * acct.c_o);
        opt += (p.t_b + p.t_m) * m * acct.c_e;
        max_overloaded = max_overloaded
            .max(p.overloaded_brownout)
            .max(p.overloaded_migration);
    }
    if opt == 0.0 {
        return Err(Error::Degenerate(
            "no brownout or migration phase occurred, so the optimum costs nothing".into(),
        ));
    }
    let eps = acct.c_o / acct.c_e;
    Ok(CostRatio {
        ratio: cost / opt,
        bound: 1.0 + n * eps / (n + m),
        max_overloaded,
        precondition_holds: max_overloaded <= hosts * vms / (hosts + vms),
    })
}

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

fn sample_sd(samples: &[f64]) -> f64 {
    let m = mean(samples);
    let ss: f64 = samples.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (samples.len() - 1) as f64).sqrt()
}

/// Two-sided 95% Student-t interval for the mean.
pub fn confidence_interval_95(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::Statistics(format!(
            "a confidence interval needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let m = mean(samples);
    let se = sample_sd(samples) / (samples.len() as f64).sqrt();
    if se == 0.0 {
        return Ok((m, m));
    }
    let t = StudentsT::new(0.0, 1.0, (samples.len() - 1) as f64)
        .map_err(|e| Error::Statistics(e.to_string()))?
        .inverse_cdf(0.975);
    Ok((m - t * se, m + t * se))
}

/// Two-sided paired t-test p-value.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Statistics(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Statistics("a paired t-test needs at least 2 pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let md = mean(&d);
    let sd = sample_sd(&d);
    if sd == 0.0 {
        return Ok(if md == 0.0 { 1.0 } else { 0.0 });
    }
    let t = md / (sd / (d.len() as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (d.len() - 1) as f64)
        .map_err(|e| Error::Statistics(e.to_string()))?;
    Ok((2.0 * dist.cdf(-t.abs())).min(1.0))
}

/// Everything measured in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub label: String,
    pub seed: u64,
    pub config: RunConfig,
    pub total_energy_kwh: f64,
    pub discount_fraction: f64,
    /// Sum over intervals and VMs of disabled utilization.
    pub disabled_utilization_total: f64,
    pub mean_shutdown_hosts: f64,
    pub migration_count: usize,
    pub deactivation_count: usize,
    pub violation_count: usize,
    pub intervals: Vec<IntervalSample>,
}

impl SimulationReport {
    pub fn from_intervals(config: RunConfig, intervals: Vec<IntervalSample>) -> Self {
        let mut report = Self {
            label: config.label(),
            seed: config.seed,
            config,
            total_energy_kwh: 0.0,
            discount_fraction: 0.0,
            disabled_utilization_total: 0.0,
            mean_shutdown_hosts: 0.0,
            migration_count: 0,
            deactivation_count: 0,
            violation_count: 0,
            intervals,
        };
        report.fill_aggregates();
        report
    }

    fn fill_aggregates(&mut self) {
        let s = &self.intervals;
        let sums: Vec<f64> = s.iter().map(|i| i.discount_sum).collect();
        self.total_energy_kwh = s.iter().map(|i| i.energy_kwh).sum();
        self.discount_fraction = discount_fraction(&sums, self.config.vm_count());
        self.disabled_utilization_total = s.iter().map(|i| i.disabled_utilization).sum();
        self.mean_shutdown_hosts = if s.is_empty() {
            0.0
        } else {
            s.iter().map(|i| i.off_hosts as f64).sum::<f64>() / s.len() as f64
        };
        self.migration_count = s.iter().map(|i| i.migrations).sum();
        self.deactivation_count = s.iter().map(|i| i.deactivations.len()).sum();
        self.violation_count = s.iter().map(|i| i.violations).sum();
    }

    /// Recomputes every aggregate from the interval series.
    pub fn check_consistency(&self) -> Result<()> {
        let mut fresh = self.clone();
        fresh.fill_aggregates();
        let pairs = [
            ("total_energy_kwh", self.total_energy_kwh, fresh.total_energy_kwh),
            ("discount_fraction", self.discount_fraction, fresh.discount_fraction),
            (
                "disabled_utilization_total",
                self.disabled_utilization_total,
                fresh.disabled_utilization_total,
            ),
            ("mean_shutdown_hosts", self.mean_shutdown_hosts, fresh.mean_shutdown_hosts),
        ];
        for (name, have, want) in pairs {
            if (have - want).abs() > 1e-9 {
                return Err(Error::Degenerate(format!(
                    "{name} is {have} but the series gives {want}"
                )));
            }
        }
        if (self.migration_count, self.deactivation_count, self.violation_count)
            != (fresh.migration_count, fresh.deactivation_count, fresh.violation_count)
        {
            return Err(Error::Degenerate("event counts disagree with the series".into()));
        }
        for (i, s) in self.intervals.iter().enumerate() {
            if s.t != i {
                return Err(Error::Degenerate(format!("sample {i} is stamped t = {}", s.t)));
            }
            if (s.phase.t_b + s.phase.t_m + s.phase.t_0 - self.config.interval_seconds).abs() > 1e-9 {
                return Err(Error::Degenerate(format!("phases of interval {i} do not fill it")));
            }
        }
        Ok(())
    }

    pub fn cost_accounting(&self) -> CostAccounting {
        CostAccounting {
            c_e: 1.0,
            c_o: self.config.epsilon,
            homogeneous: self.config.is_homogeneous(),
            phases: self.intervals.iter().map(|i| i.phase).collect(),
        }
    }

    pub fn cost_ratio(&self) -> Result<CostRatio> {
        empirical_cost_ratio(
            &self.cost_accounting(),
            self.config.host_count(),
            self.config.vm_count(),
        )
    }

    pub fn max_overloaded(&self) -> usize {
        self.intervals
            .iter()
            .map(|i| i.overloaded_count)
            .max()
            .unwrap_or(0)
    }

    /// Flat row without the interval series.
    pub fn summary(&self) -> RunSummary {
        let c = &self.config.components;
        RunSummary {
            cell: String::new(),
            label: self.label.clone(),
            seed: self.seed,
            pattern: c.pattern,
            optional_utilization_threshold: c.optional_utilization_threshold,
            optional_percentage: c.optional_percentage,
            connected_percentage: c.connected_percentage,
            discount_total: c.discount_total(),
            hosts: self.config.host_count(),
            vms: self.config.vm_count(),
            energy_kwh: self.total_energy_kwh,
            discount_fraction: self.discount_fraction,
            disabled_utilization_total: self.disabled_utilization_total,
            mean_shutdown_hosts: self.mean_shutdown_hosts,
            migrations: self.migration_count,
            deactivations: self.deactivation_count,
            violations: self.violation_count,
            max_overloaded: self.max_overloaded(),
            alpha: self.config.alpha,
            baseline_energy_kwh: None,
            efficiency: None,
        }
    }
}

/// One row of a run table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Sweep cell key; empty for standalone runs.
    pub cell: String,
    pub label: String,
    pub seed: u64,
    pub pattern: DesignPattern,
    pub optional_utilization_threshold: f64,
    pub optional_percentage: f64,
    pub connected_percentage: f64,
    pub discount_total: f64,
    pub hosts: usize,
    pub vms: usize,
    pub energy_kwh: f64,
    pub discount_fraction: f64,
    pub disabled_utilization_total: f64,
    pub mean_shutdown_hosts: f64,
    pub migrations: usize,
    pub deactivations: usize,
    pub violations: usize,
    pub max_overloaded: usize,
    pub alpha: f64,
    /// Energy of the `pco` run with the same cell and seed.
    pub baseline_energy_kwh: Option<f64>,
    pub efficiency: Option<f64>,
}

impl RunSummary {
    /// Fills baseline energy and efficiency.
    pub fn set_baseline(&mut self, baseline_kwh: f64) -> Result<()> {
        self.efficiency = Some(efficiency(
            self.energy_kwh,
            baseline_kwh,
            self.discount_fraction,
            self.alpha,
        )?);
        self.baseline_energy_kwh = Some(baseline_kwh);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn efficiency_examples() {
        assert_eq!(efficiency(345.3, 345.3, 0.0, 1.0).unwrap(), 1.0);
        assert_abs_diff_eq!(efficiency(321.1, 345.3, 0.0, 1.0).unwrap(), 0.930, epsilon = 1e-3);
        assert_eq!(efficiency(100.0, 200.0, 0.5, 1.0).unwrap(), 1.0);
        assert!(efficiency(1.0, 0.0, 0.0, 1.0).is_err());
        assert!(efficiency(1.0, 1.0, 1.5, 1.0).is_err());
    }

    #[test]
    fn discount_fraction_examples() {
        assert_eq!(discount_fraction(&[0.0; 10], 4), 0.0);
        assert_eq!(discount_fraction(&[2.0; 10], 4), 0.5);
        // 2 of 4 VMs at 0.2 for 5 of 10 intervals
        let mut sums = vec![0.4; 5];
        sums.extend([0.0; 5]);
        assert_abs_diff_eq!(discount_fraction(&sums, 4), 0.05, epsilon = 1e-12);
    }

    fn acct(c_o: f64, phases: Vec<PhaseSplit>) -> CostAccounting {
        CostAccounting {
            c_e: 1.0,
            c_o,
            homogeneous: true,
            phases,
        }
    }

    fn phase(t_b: f64, t_m: f64, mo: usize, mo2: usize) -> PhaseSplit {
        PhaseSplit {
            t_b,
            t_m,
            t_0: 300.0 - t_b - t_m,
            overloaded_brownout: mo,
            overloaded_migration: mo2,
        }
    }

    #[test]
    fn cost_ratio_examples() {
        let r = empirical_cost_ratio(&acct(0.0, vec![phase(150.0, 150.0, 3, 2)]), 10, 10).unwrap();
        assert_eq!((r.ratio, r.bound), (1.0, 1.0));
        let r = empirical_cost_ratio(&acct(1.0, vec![phase(300.0, 0.0, 0, 0)]), 10, 10).unwrap();
        assert_eq!(r.ratio, 1.0);
        let r = empirical_cost_ratio(&acct(1.0, vec![phase(150.0, 150.0, 5, 5)]), 10, 10).unwrap();
        assert_eq!(r.bound, 1.5);
        assert!(r.precondition_holds && r.within_bound());
        assert_abs_diff_eq!(r.ratio, 1.5, epsilon = 1e-12);
        let idle = acct(1.0, vec![phase(0.0, 0.0, 0, 0)]);
        assert!(matches!(
            empirical_cost_ratio(&idle, 10, 10),
            Err(Error::Degenerate(_))
        ));
        let mixed = CostAccounting {
            homogeneous: false,
            ..idle
        };
        assert!(empirical_cost_ratio(&mixed, 10, 10).is_err());
    }

    #[test]
    fn confidence_intervals() {
        assert_eq!(confidence_interval_95(&[3.0, 3.0, 3.0]).unwrap(), (3.0, 3.0));
        let (lo, hi) = confidence_interval_95(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        // t(0.975, 4) = 2.776, standard error sqrt(2.5 / 5)
        assert_abs_diff_eq!(lo, 1.0368, epsilon = 1e-3);
        assert_abs_diff_eq!(hi, 4.9632, epsilon = 1e-3);
        assert_abs_diff_eq!((lo + hi) / 2.0, 3.0, epsilon = 1e-12);
        assert!(confidence_interval_95(&[1.0]).is_err());
    }

    #[test]
    fn paired_t_tests() {
        let a = [12.1, 11.8, 13.0, 12.6, 12.9, 11.7, 12.4, 13.2];
        let b = [11.6, 11.9, 12.1, 12.0, 12.2, 11.5, 11.8, 12.3];
        assert_eq!(paired_t_test(&a, &a).unwrap(), 1.0);
        // t = 4.4453 on 7 degrees of freedom
        assert_abs_diff_eq!(paired_t_test(&a, &b).unwrap(), 0.00299, epsilon = 1e-3);
        let shifted: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + 10.0 + 1e-3 * i as f64).collect();
        assert!(paired_t_test(&shifted, &a).unwrap() < 0.001);
        assert!(paired_t_test(&a, &b[..3]).is_err());
    }
}
