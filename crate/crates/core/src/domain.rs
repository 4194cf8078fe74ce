//! Entity model: hosts, VMs, the application each VM runs and its
//! mandatory/optional components, and the data-center snapshot.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::power::{PowerModel, SleepPower};

/// Slack used when comparing utilization sums and capacity limits.
pub const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComponentKind {
    Mandatory,
    Optional,
}

/// One application component. `utilization` and `discount` are fractions of
/// the hosting VM's requested utilization and price respectively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub id: usize,
    pub kind: ComponentKind,
    pub utilization: f64,
    pub discount: f64,
    pub connection_tag: Option<u32>,
}

impl ComponentSpec {
    pub fn is_optional(&self) -> bool {
        self.kind == ComponentKind::Optional
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationSpec {
    components: Vec<ComponentSpec>,
}

impl ApplicationSpec {
    /// Validates ranges and that utilization fractions sum to one.
    /// Component ids are reassigned to their position.
    pub fn new(mut components: Vec<ComponentSpec>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("an application needs at least one component".into()));
        }
        for (i, c) in components.iter_mut().enumerate() {
            c.id = i;
            if !(0.0..=1.0).contains(&c.utilization) {
                return Err(Error::Domain {
                    what: "component utilization must lie in [0, 1]",
                    value: c.utilization,
                });
            }
            if !(0.0..=1.0).contains(&c.discount) {
                return Err(Error::Domain {
                    what: "component discount must lie in [0, 1]",
                    value: c.discount,
                });
            }
        }
        let total: f64 = components.iter().map(|c| c.utilization).sum();
        if (total - 1.0).abs() > EPS {
            return Err(Error::Domain {
                what: "component utilizations must sum to 1",
                value: total,
            });
        }
        Ok(Self { components })
    }

    /// The eight-component application used as a worked example: four
    /// mandatory components and four optional ones with 5/10/15/20%
    /// utilization, two connected pairs (5-8 and 6-7, 1-based).
    pub fn reference_example() -> Self {
        use ComponentKind::*;
        let spec = [
            (Mandatory, 0.10, 0.10, None),
            (Mandatory, 0.10, 0.10, None),
            (Mandatory, 0.20, 0.20, None),
            (Mandatory, 0.10, 0.10, None),
            (Optional, 0.05, 0.05, Some(1)),
            (Optional, 0.10, 0.10, Some(2)),
            (Optional, 0.15, 0.20, Some(2)),
            (Optional, 0.20, 0.15, Some(1)),
        ];
        let components = spec
            .iter()
            .enumerate()
            .map(|(id, &(kind, utilization, discount, connection_tag))| ComponentSpec {
                id,
                kind,
                utilization,
                discount,
                connection_tag,
            })
            .collect();
        Self::new(components).expect("reference application is valid")
    }

    pub fn components(&self) -> &[ComponentSpec] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn optional(&self) -> impl Iterator<Item = &ComponentSpec> {
        self.components.iter().filter(|c| c.is_optional())
    }

    /// Sum of optional components' utilization.
    pub fn optional_utilization_threshold(&self) -> f64 {
        self.optional().map(|c| c.utilization).sum()
    }

    /// Sum of optional components' discount.
    pub fn total_discount(&self) -> f64 {
        self.optional().map(|c| c.discount).sum()
    }

    /// Ids of optional components sharing a tag with any of `ids`, plus
    /// `ids` themselves.
    pub fn close_under_tags(&self, ids: &BTreeSet<usize>) -> BTreeSet<usize> {
        let tags: BTreeSet<u32> = ids
            .iter()
            .filter_map(|&i| self.components[i].connection_tag)
            .collect();
        let mut closed = ids.clone();
        closed.extend(
            self.optional()
                .filter(|c| c.connection_tag.is_some_and(|t| tags.contains(&t)))
                .map(|c| c.id),
        );
        closed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComponentState {
    Active,
    Deactivated,
}

/// VM capacity class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmType {
    pub name: String,
    pub mips: f64,
    pub cores: u32,
    pub memory_mb: u32,
    pub bandwidth_mbps: u32,
    pub storage_gb: u32,
}

impl VmType {
    fn new(name: &str, mips: f64, memory_mb: u32) -> Self {
        Self {
            name: name.into(),
            mips,
            cores: 1,
            memory_mb,
            bandwidth_mbps: 100,
            storage_gb: 1,
        }
    }

    /// The four EC2-like VM classes.
    pub fn standard_types() -> [VmType; 4] {
        [
            Self::new("vm-type-1", 2500.0, 870),
            Self::new("vm-type-2", 2000.0, 1740),
            Self::new("vm-type-3", 1000.0, 1740),
            Self::new("vm-type-4", 500.0, 613),
        ]
    }

    pub fn capacity_mips(&self) -> f64 {
        self.mips * self.cores as f64
    }
}

/// Physical server class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostType {
    pub name: String,
    pub mips_per_core: f64,
    pub cores: u32,
    pub memory_mb: u32,
    pub bandwidth_mbps: u32,
    pub storage_gb: u32,
    /// Key of the power table backing this type.
    pub power_table: String,
}

impl HostType {
    fn new(name: &str, mips_per_core: f64, power_table: &str) -> Self {
        Self {
            name: name.into(),
            mips_per_core,
            cores: 2,
            memory_mb: 4096,
            bandwidth_mbps: 1000,
            storage_gb: 100,
            power_table: power_table.into(),
        }
    }

    /// 1.86 GHz and 2.66 GHz dual-core servers.
    pub fn standard_types() -> [HostType; 2] {
        [
            Self::new("host-type-1", 1860.0, "x5670"),
            Self::new("host-type-2", 2660.0, "x5675"),
        ]
    }

    pub fn capacity_mips(&self) -> f64 {
        self.mips_per_core * self.cores as f64
    }
}

#[derive(Debug, Clone)]
pub struct VmInstance {
    pub id: usize,
    pub vm_type: VmType,
    pub app: ApplicationSpec,
    /// Requested utilization per interval.
    pub demand: Arc<[f64]>,
    pub states: Vec<ComponentState>,
    pub host_id: Option<usize>,
}

impl VmInstance {
    pub fn new(id: usize, vm_type: VmType, app: ApplicationSpec, demand: Arc<[f64]>) -> Self {
        let states = vec![ComponentState::Active; app.len()];
        Self {
            id,
            vm_type,
            app,
            demand,
            states,
            host_id: None,
        }
    }

    pub fn requested_utilization(&self, t: usize) -> Result<f64> {
        self.demand.get(t).copied().ok_or(Error::Horizon {
            t,
            horizon: self.demand.len(),
        })
    }

    /// Sum of utilization fractions of active components.
    pub fn active_fraction(&self) -> f64 {
        self.app
            .components()
            .iter()
            .zip(&self.states)
            .filter(|(_, s)| **s == ComponentState::Active)
            .fold(0.0, |acc, (c, _)| acc + c.utilization)
    }

    /// Requested utilization scaled by the active components' share.
    pub fn effective_utilization(&self, t: usize) -> Result<f64> {
        let requested = self.requested_utilization(t)?;
        Ok((requested * self.active_fraction()).min(requested))
    }

    /// Demand in MIPS at interval `t`.
    pub fn demand_mips(&self, t: usize) -> Result<f64> {
        Ok(self.effective_utilization(t)? * self.vm_type.capacity_mips())
    }

    /// Sum of discounts over currently deactivated components.
    pub fn discount(&self) -> f64 {
        self.deactivated().fold(0.0, |acc, c| acc + c.discount)
    }

    /// Sum of utilization fractions over currently deactivated components.
    pub fn disabled_fraction(&self) -> f64 {
        self.deactivated().fold(0.0, |acc, c| acc + c.utilization)
    }

    pub fn deactivated(&self) -> impl Iterator<Item = &ComponentSpec> {
        self.app
            .components()
            .iter()
            .zip(&self.states)
            .filter(|(_, s)| **s == ComponentState::Deactivated)
            .map(|(c, _)| c)
    }

    pub fn is_deactivated(&self, component: usize) -> bool {
        self.states[component] == ComponentState::Deactivated
    }

    /// Deactivates the given components. Mandatory components are refused.
    pub fn deactivate(&mut self, ids: impl IntoIterator<Item = usize>) -> Result<()> {
        for id in ids {
            let c = self.app.components().get(id).ok_or_else(|| {
                Error::Config(format!("vm {} has no component {id}", self.id))
            })?;
            if !c.is_optional() {
                return Err(Error::Config(format!(
                    "component {id} of vm {} is mandatory",
                    self.id
                )));
            }
            self.states[id] = ComponentState::Deactivated;
        }
        Ok(())
    }

    /// Reactivates every component; returns how many changed state.
    pub fn reactivate_all(&mut self) -> usize {
        let mut n = 0;
        for s in &mut self.states {
            if *s == ComponentState::Deactivated {
                *s = ComponentState::Active;
                n += 1;
            }
        }
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HostState {
    Active,
    Off,
}

#[derive(Debug, Clone)]
pub struct HostInstance {
    pub id: usize,
    pub host_type: HostType,
    pub power: Arc<dyn PowerModel>,
    pub vm_ids: Vec<usize>,
    pub state: HostState,
}

impl HostInstance {
    pub fn new(id: usize, host_type: HostType, power: Arc<dyn PowerModel>) -> Self {
        Self {
            id,
            host_type,
            power,
            vm_ids: Vec::new(),
            state: HostState::Off,
        }
    }

    pub fn capacity_mips(&self) -> f64 {
        self.host_type.capacity_mips()
    }

    pub fn is_active(&self) -> bool {
        self.state == HostState::Active
    }
}

/// An invariant breach found by [`DataCenterState::check_invariants`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Unplaced { vm_id: usize },
    Misplaced { vm_id: usize },
    Overcommitted { host_id: usize, utilization: f64 },
    OffWithVms { host_id: usize },
    ActiveButEmpty { host_id: usize },
    OpenConnectionGroup { vm_id: usize, tag: u32 },
    MandatoryDeactivated { vm_id: usize, component: usize },
}

#[derive(Debug, Clone)]
pub struct DataCenterState {
    pub hosts: Vec<HostInstance>,
    pub vms: Vec<VmInstance>,
    pub clock: usize,
    pub interval_seconds: f64,
}

impl DataCenterState {
    pub fn new(hosts: Vec<HostInstance>, vms: Vec<VmInstance>, interval_seconds: f64) -> Self {
        Self {
            hosts,
            vms,
            clock: 0,
            interval_seconds,
        }
    }

    pub fn host_count(&self) -> usize {
        self.hosts.len()
    }

    pub fn vm_demand_mips(&self, vm_id: usize) -> f64 {
        // The clock never passes the trace horizon while a run is live.
        self.vms[vm_id].demand_mips(self.clock).unwrap_or(0.0)
    }

    pub fn host_demand_mips(&self, host_id: usize) -> f64 {
        self.hosts[host_id]
            .vm_ids
            .iter()
            .fold(0.0, |acc, &v| acc + self.vm_demand_mips(v))
    }

    /// Hosted demand as a fraction of host capacity. Can exceed 1 between a
    /// demand update and the next consolidation.
    pub fn host_utilization(&self, host_id: usize) -> f64 {
        self.host_demand_mips(host_id) / self.hosts[host_id].capacity_mips()
    }

    /// Current draw of a host; saturated hosts are billed at 100%.
    pub fn host_power(&self, host_id: usize, sleep: SleepPower) -> f64 {
        let host = &self.hosts[host_id];
        match host.state {
            HostState::Off => match sleep {
                SleepPower::Zero => 0.0,
                SleepPower::Table => host.power.sleep_power(),
            },
            HostState::Active => {
                let u = self.host_utilization(host_id).clamp(0.0, 1.0);
                host.power.power_at(u).unwrap_or_else(|_| host.power.max_power())
            }
        }
    }

    /// Deactivated-component discount of a VM.
    pub fn vm_discount(&self, vm_id: usize) -> f64 {
        self.vms[vm_id].discount()
    }

    pub fn active_hosts(&self) -> usize {
        self.hosts.iter().filter(|h| h.is_active()).count()
    }

    /// Checks placement totality, capacity (`<= capacity_limit`), host
    /// power-state consistency, connection closure and mandatory safety.
    pub fn check_invariants(&self, capacity_limit: f64) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = vec![0usize; self.vms.len()];
        for host in &self.hosts {
            for &v in &host.vm_ids {
                seen[v] += 1;
                if self.vms[v].host_id != Some(host.id) {
                    out.push(Violation::Misplaced { vm_id: v });
                }
            }
            match host.state {
                HostState::Off if !host.vm_ids.is_empty() => {
                    out.push(Violation::OffWithVms { host_id: host.id })
                }
                HostState::Active if host.vm_ids.is_empty() => {
                    out.push(Violation::ActiveButEmpty { host_id: host.id })
                }
                _ => {}
            }
            let u = self.host_utilization(host.id);
            if u > capacity_limit + EPS {
                out.push(Violation::Overcommitted {
                    host_id: host.id,
                    utilization: u,
                });
            }
        }
        for (vm_id, &n) in seen.iter().enumerate() {
            if n == 0 {
                out.push(Violation::Unplaced { vm_id });
            } else if n > 1 {
                out.push(Violation::Misplaced { vm_id });
            }
        }
        for vm in &self.vms {
            for (c, s) in vm.app.components().iter().zip(&vm.states) {
                if !c.is_optional() && *s == ComponentState::Deactivated {
                    out.push(Violation::MandatoryDeactivated {
                        vm_id: vm.id,
                        component: c.id,
                    });
                }
            }
            let mut tags: BTreeSet<u32> = BTreeSet::new();
            tags.extend(vm.app.optional().filter_map(|c| c.connection_tag));
            for tag in tags {
                let mut members = vm
                    .app
                    .optional()
                    .filter(|c| c.connection_tag == Some(tag))
                    .map(|c| vm.states[c.id]);
                let first = members.next();
                if members.any(|s| Some(s) != first) {
                    out.push(Violation::OpenConnectionGroup { vm_id: vm.id, tag });
                }
            }
        }
        out
    }
}
