//! Discrete-time engine.
//!
//! Per interval: advance the clock (which updates every VM's requested
//! utilization), run the brownout controller if configured, run the
//! consolidation strategy, apply its plan, then sample power. Power is held
//! constant across the interval.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::brownout::{self, DeactivationRecord};
use crate::domain::{DataCenterState, HostInstance, HostState, HostType, VmInstance, VmType, EPS};
use crate::error::{Error, Result};
use crate::metrics::{PhaseSplit, SimulationReport};
use crate::placement::{self, ConsolidationThresholds, MigrationPlan};
use crate::power::{self, LinearIdle, PowerModel, PowerModelKind, PowerTable, SleepPower};
use crate::workload::{generate_application, ComponentGenConfig, TraceSource};
use crate::SimRng;

const APP_STREAM: u64 = u64::MAX;
const CONSOLIDATION_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Pco,
    Ubp,
    #[default]
    Eeba,
}

/// One simulation's full configuration. Every field has a default, so a
/// config file only needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Host count per standard host type.
    pub hosts: Vec<usize>,
    /// VM count per standard VM type.
    pub vms: Vec<usize>,
    pub horizon_intervals: usize,
    pub interval_seconds: f64,
    pub algorithm: Algorithm,
    /// Selection policy used when `algorithm` is `eeba`.
    pub policy: String,
    /// Consolidation strategy run after the controller when `algorithm` is `eeba`.
    pub eeba_consolidation: String,
    /// Fraction of peak power above which a host counts as overloaded.
    pub power_threshold: f64,
    pub thresholds: ConsolidationThresholds,
    pub components: ComponentGenConfig,
    pub trace: TraceSource,
    pub seed: u64,
    /// Weight of discount in the efficiency score.
    pub alpha: f64,
    /// Relative cost of an overloaded host in the cost-ratio check.
    pub epsilon: f64,
    pub power_model: PowerModelKind,
    pub linear_idle: LinearIdle,
    pub sleep_power: SleepPower,
    /// Extra power tables. A table named `x5670` or `x5675` replaces the
    /// built-in curve of that host type.
    pub power_table_file: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hosts: vec![10, 10],
            vms: vec![10, 10, 10, 10],
            horizon_intervals: 288,
            interval_seconds: 300.0,
            algorithm: Algorithm::Eeba,
            policy: "lufcs".into(),
            eeba_consolidation: "pco".into(),
            power_threshold: 0.8,
            thresholds: ConsolidationThresholds::default(),
            components: ComponentGenConfig::default(),
            trace: TraceSource::default(),
            seed: 42,
            alpha: 1.0,
            epsilon: 1.0,
            power_model: PowerModelKind::Table,
            linear_idle: LinearIdle::default(),
            sleep_power: SleepPower::Zero,
            power_table_file: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn consolidation_name(&self) -> &str {
        match self.algorithm {
            Algorithm::Pco => "pco",
            Algorithm::Ubp => "ubp",
            Algorithm::Eeba => &self.eeba_consolidation,
        }
    }

    /// Short name: `pco`, `ubp`, or the policy name for brownout runs.
    pub fn label(&self) -> String {
        match self.algorithm {
            Algorithm::Pco => "pco".into(),
            Algorithm::Ubp => "ubp".into(),
            Algorithm::Eeba => self.policy.to_ascii_lowercase(),
        }
    }

    /// Sets algorithm and policy from a label: `pco`, `ubp`, `eeba`, a
    /// policy name, or `eeba-<policy>`.
    pub fn set_algorithm_label(&mut self, label: &str) -> Result<()> {
        let l = label.to_ascii_lowercase();
        let policies = brownout::policy::registry();
        match l.as_str() {
            "pco" => self.algorithm = Algorithm::Pco,
            "ubp" => self.algorithm = Algorithm::Ubp,
            "eeba" => self.algorithm = Algorithm::Eeba,
            _ => {
                let name = l.strip_prefix("eeba-").unwrap_or(&l);
                policies.create(name)?;
                self.algorithm = Algorithm::Eeba;
                self.policy = name.to_string();
            }
        }
        Ok(())
    }

    pub fn vm_count(&self) -> usize {
        self.vms.iter().sum()
    }

    pub fn host_count(&self) -> usize {
        self.hosts.iter().sum()
    }

    /// One host type and one VM type in use.
    pub fn is_homogeneous(&self) -> bool {
        self.hosts.iter().filter(|&&n| n > 0).count() == 1
            && self.vms.iter().filter(|&&n| n > 0).count() == 1
    }

    pub fn validate(&self) -> Result<()> {
        let host_types = HostType::standard_types().len();
        let vm_types = VmType::standard_types().len();
        if self.hosts.len() > host_types || self.vms.len() > vm_types {
            return Err(Error::Config(format!(
                "at most {host_types} host counts and {vm_types} vm counts may be given"
            )));
        }
        if self.host_count() == 0 || self.vm_count() == 0 {
            return Err(Error::Config("need at least one host and one vm".into()));
        }
        if self.horizon_intervals == 0 {
            return Err(Error::Config("horizon_intervals must be at least 1".into()));
        }
        if !(self.interval_seconds > 0.0) {
            return Err(Error::Config("interval_seconds must be positive".into()));
        }
        if !(self.alpha >= 0.0) || !(self.epsilon >= 0.0) {
            return Err(Error::Config("alpha and epsilon must be non-negative".into()));
        }
        if !(self.power_threshold > 0.0 && self.power_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "power_threshold must lie in (0, 1], got {}",
                self.power_threshold
            )));
        }
        self.thresholds.validate()?;
        self.components.validate()?;
        self.trace.validate()?;
        placement::registry().create(self.consolidation_name())?;
        if self.algorithm == Algorithm::Eeba {
            brownout::policy::registry().create(&self.policy)?;
        }
        Ok(())
    }

    /// Power tables by host-type key.
    fn power_tables(&self) -> Result<Vec<(String, PowerTable)>> {
        let mut tables: Vec<(String, PowerTable)> = ["x5670", "x5675"]
            .iter()
            .map(|k| (k.to_string(), PowerTable::builtin(k).expect("built-in key")))
            .collect();
        if let Some(path) = &self.power_table_file {
            for t in PowerTable::load(path)? {
                let key = t.name().to_ascii_lowercase();
                tables.retain(|(k, _)| *k != key);
                tables.push((key, t));
            }
        }
        Ok(tables)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSample {
    pub t: usize,
    /// Draw of every host after consolidation, in watts.
    pub host_power: Vec<f64>,
    pub energy_kwh: f64,
    /// Power-overloaded hosts before the controller ran.
    pub overloaded_count: usize,
    /// Power-overloaded hosts after the controller, before consolidation.
    pub overloaded_after_brownout: usize,
    pub deactivations: Vec<DeactivationRecord>,
    pub reactivated: usize,
    pub migrations: usize,
    pub unresolved_evictions: usize,
    pub active_hosts: usize,
    pub off_hosts: usize,
    /// Sum over VMs of the discount of their deactivated components.
    pub discount_sum: f64,
    /// Sum over VMs of requested utilization times disabled fraction.
    pub disabled_utilization: f64,
    pub violations: usize,
    pub phase: PhaseSplit,
}

impl IntervalSample {
    pub fn total_power(&self) -> f64 {
        self.host_power.iter().sum()
    }
}

/// Builds the fleet, generates applications and traces, and places VMs.
pub fn build_state(config: &RunConfig) -> Result<DataCenterState> {
    config.validate()?;
    let tables = config.power_tables()?;
    let mut hosts = Vec::with_capacity(config.host_count());
    for (ty, &count) in HostType::standard_types().iter().zip(&config.hosts) {
        let (_, table) = tables
            .iter()
            .find(|(k, _)| *k == ty.power_table)
            .ok_or_else(|| Error::Config(format!("no power table named {}", ty.power_table)))?;
        let model = config.power_model.build(table, config.linear_idle);
        for _ in 0..count {
            hosts.push(HostInstance::new(hosts.len(), ty.clone(), model.clone()));
        }
    }

    let series = config
        .trace
        .series(config.vm_count(), config.horizon_intervals, config.seed)?;
    let mut app_rng = SimRng::seed_from_u64(config.seed);
    app_rng.set_stream(APP_STREAM);
    let mut vms = Vec::with_capacity(config.vm_count());
    for (ty, &count) in VmType::standard_types().iter().zip(&config.vms) {
        for _ in 0..count {
            let id = vms.len();
            let app = generate_application(&config.components, &mut app_rng)?;
            vms.push(VmInstance::new(id, ty.clone(), app, Arc::clone(&series[id])));
        }
    }
    placement::initial_placement(hosts, vms, config.interval_seconds)
}

/// Applies `plan` to `state`. Moves must name distinct VMs currently on
/// their `from` host, and no destination may end above full capacity.
/// Hosts left empty are switched off.
pub fn apply_plan(state: &mut DataCenterState, plan: &MigrationPlan) -> Result<()> {
    let mut seen = BTreeSet::new();
    for m in &plan.moves {
        if !seen.insert(m.vm_id) {
            return Err(Error::Plan(format!("vm {} moves twice", m.vm_id)));
        }
        let vm = state
            .vms
            .get(m.vm_id)
            .ok_or_else(|| Error::Plan(format!("unknown vm {}", m.vm_id)))?;
        if vm.host_id != Some(m.from) {
            return Err(Error::Plan(format!(
                "vm {} is not on host {}",
                m.vm_id, m.from
            )));
        }
        if m.to >= state.hosts.len() {
            return Err(Error::Plan(format!("unknown host {}", m.to)));
        }
    }
    for m in &plan.moves {
        state.hosts[m.from].vm_ids.retain(|&v| v != m.vm_id);
        state.hosts[m.to].vm_ids.push(m.vm_id);
        state.hosts[m.to].state = HostState::Active;
        state.vms[m.vm_id].host_id = Some(m.to);
    }
    let destinations: BTreeSet<usize> = plan.moves.iter().map(|m| m.to).collect();
    for h in destinations {
        let u = state.host_utilization(h);
        if u > 1.0 + EPS {
            return Err(Error::Plan(format!("host {h} would run at {u:.4} of capacity")));
        }
    }
    for &h in &plan.hosts_to_switch_off {
        if !state.hosts[h].vm_ids.is_empty() {
            return Err(Error::Plan(format!("host {h} still holds vms")));
        }
    }
    for host in &mut state.hosts {
        if host.vm_ids.is_empty() {
            host.state = HostState::Off;
        }
    }
    Ok(())
}

fn split_phases(
    interval_seconds: f64,
    brownout: bool,
    migration: bool,
    m_o: usize,
    m_o_after: usize,
) -> PhaseSplit {
    let (t_b, t_m) = match (brownout, migration) {
        (true, true) => (interval_seconds / 2.0, interval_seconds / 2.0),
        (true, false) => (interval_seconds, 0.0),
        (false, true) => (0.0, interval_seconds),
        (false, false) => (0.0, 0.0),
    };
    PhaseSplit {
        t_b,
        t_m,
        t_0: interval_seconds - t_b - t_m,
        overloaded_brownout: m_o,
        overloaded_migration: m_o_after,
    }
}

/// Runs one simulation.
pub fn run(config: &RunConfig) -> Result<SimulationReport> {
    let mut state = build_state(config)?;
    let strategy = placement::registry().create(config.consolidation_name())?;
    let policy = match config.algorithm {
        Algorithm::Eeba => Some(brownout::policy::registry().create(&config.policy)?),
        _ => None,
    };
    let mut rng = SimRng::seed_from_u64(config.seed);
    rng.set_stream(CONSOLIDATION_STREAM);

    let mut intervals = Vec::with_capacity(config.horizon_intervals);
    for t in 0..config.horizon_intervals {
        let at = |e: Error| Error::AtInterval { t, source: Box::new(e) };
        state.clock = t;
        let overloaded = brownout::count_overloaded_hosts(&state, config.power_threshold);
        let (deactivations, reactivated) = match &policy {
            Some(p) => {
                let out =
                    brownout::eeba_step(&mut state, config.power_threshold, p.as_ref()).map_err(at)?;
                (out.records, out.reactivated)
            }
            None => (Vec::new(), 0),
        };
        let overloaded_after = brownout::count_overloaded_hosts(&state, config.power_threshold);
        let plan = strategy
            .plan(&state, &config.thresholds, &mut rng)
            .map_err(at)?;
        apply_plan(&mut state, &plan).map_err(at)?;

        let host_power: Vec<f64> = (0..state.host_count())
            .map(|h| state.host_power(h, config.sleep_power))
            .collect();
        let watts: f64 = host_power.iter().sum();
        let energy_kwh =
            power::energy_of_interval(watts, watts, config.interval_seconds).map_err(at)?;
        let discount_sum = state.vms.iter().map(VmInstance::discount).sum();
        let disabled_utilization = state
            .vms
            .iter()
            .map(|vm| vm.requested_utilization(t).unwrap_or(0.0) * vm.disabled_fraction())
            .sum();
        let active_hosts = state.active_hosts();
        let violations = state.check_invariants(1.0);
        for v in &violations {
            log::warn!("interval {t}: {v:?}");
        }
        intervals.push(IntervalSample {
            t,
            host_power,
            energy_kwh,
            overloaded_count: overloaded,
            overloaded_after_brownout: overloaded_after,
            phase: split_phases(
                config.interval_seconds,
                !deactivations.is_empty(),
                !plan.moves.is_empty(),
                overloaded,
                overloaded_after,
            ),
            deactivations,
            reactivated,
            migrations: plan.moves.len(),
            unresolved_evictions: plan.unresolved.len(),
            active_hosts,
            off_hosts: state.host_count() - active_hosts,
            discount_sum,
            disabled_utilization,
            violations: violations.len(),
        });
    }
    Ok(SimulationReport::from_intervals(config.clone(), intervals))
}
