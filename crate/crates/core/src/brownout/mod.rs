//! Brownout controller.
//!
//! Each interval the controller counts hosts drawing more than
//! `power_threshold` of their peak power. If any are overloaded, a dimmer
//! `sqrt(overloaded / hosts)` sets how much of each such host's power to
//! shed; the power target is mapped back to a utilization reduction through
//! the host's power curve, and on every VM of the host the selection policy
//! deactivates optional components worth that fraction of the application.
//! When no host is overloaded, every deactivated component comes back.

pub mod policy;

use serde::{Deserialize, Serialize};

pub use policy::{select_components, Selection, SelectionPolicy};

use crate::domain::{ComponentSpec, DataCenterState};
use crate::error::{Error, Result};
use crate::power::{PowerModel, SleepPower};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimmerState {
    pub theta: f64,
    pub overloaded_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeactivationRecord {
    pub interval: usize,
    pub host_id: usize,
    pub vm_id: usize,
    pub components: Vec<usize>,
    pub discount_added: f64,
    pub utilization_disabled: f64,
}

/// Work done by one controller step, for complexity checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepCounters {
    pub hosts_visited: usize,
    pub components_touched: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub overloaded: usize,
    pub theta: f64,
    pub records: Vec<DeactivationRecord>,
    pub reactivated: usize,
    pub counters: StepCounters,
}

fn power_now(state: &DataCenterState, host_id: usize) -> f64 {
    state.host_power(host_id, SleepPower::Zero)
}

fn is_overloaded(state: &DataCenterState, host_id: usize, power_threshold: f64) -> bool {
    let host = &state.hosts[host_id];
    host.is_active() && power_now(state, host_id) > host.power.max_power() * power_threshold
}

/// Active hosts drawing strictly more than `power_threshold` of peak power.
pub fn count_overloaded_hosts(state: &DataCenterState, power_threshold: f64) -> usize {
    (0..state.host_count())
        .filter(|&h| is_overloaded(state, h, power_threshold))
        .count()
}

/// `sqrt(overloaded / hosts)`.
pub fn compute_dimmer(overloaded: usize, hosts: usize) -> Result<f64> {
    if hosts == 0 {
        return Err(Error::Domain {
            what: "dimmer needs at least one host",
            value: 0.0,
        });
    }
    if overloaded > hosts {
        return Err(Error::Domain {
            what: "overloaded hosts cannot exceed total hosts",
            value: overloaded as f64,
        });
    }
    Ok((overloaded as f64 / hosts as f64).sqrt())
}

/// Utilization a host at `utilization` must shed to cut `theta` of its
/// power, read off `model`. The power target never drops below the
/// curve's 0% value.
pub fn utilization_reduction(model: &dyn PowerModel, utilization: f64, theta: f64) -> f64 {
    let u = utilization.clamp(0.0, 1.0);
    let power = model.power_at(u).unwrap_or_else(|_| model.max_power());
    let target = (power - theta.clamp(0.0, 1.0) * power).max(model.min_power());
    let reached = model.utilization_for_power(target).utilization;
    (u - reached).clamp(0.0, u)
}

/// [`utilization_reduction`] for a host in `state`.
pub fn expected_host_utilization_reduction(state: &DataCenterState, host_id: usize, theta: f64) -> f64 {
    utilization_reduction(
        state.hosts[host_id].power.as_ref(),
        state.host_utilization(host_id),
        theta,
    )
}

/// Fraction of a VM's application to deactivate for a host-level
/// reduction. The VM's demand factor cancels because component fractions
/// are themselves relative to that demand, so the target is the host
/// reduction itself.
pub fn expected_vm_utilization_reduction(host_reduction: f64) -> f64 {
    host_reduction.clamp(0.0, 1.0)
}

/// One controller pass over `state`. Consolidation is left to the caller.
pub fn eeba_step(
    state: &mut DataCenterState,
    power_threshold: f64,
    policy: &dyn SelectionPolicy,
) -> Result<StepOutcome> {
    if !(power_threshold > 0.0 && power_threshold <= 1.0) {
        return Err(Error::Config(format!(
            "power threshold must lie in (0, 1], got {power_threshold}"
        )));
    }
    let mut out = StepOutcome::default();
    let overloaded: Vec<usize> = (0..state.host_count())
        .filter(|&h| is_overloaded(state, h, power_threshold))
        .collect();
    out.overloaded = overloaded.len();
    out.counters.hosts_visited = state.host_count();

    if overloaded.is_empty() {
        for vm in &mut state.vms {
            out.reactivated += vm.reactivate_all();
            out.counters.components_touched += vm.app.len();
        }
        return Ok(out);
    }

    let theta = compute_dimmer(overloaded.len(), state.host_count())?;
    out.theta = theta;
    let clock = state.clock;
    for host_id in overloaded {
        let target = expected_vm_utilization_reduction(expected_host_utilization_reduction(
            state, host_id, theta,
        ));
        if target <= 0.0 {
            continue;
        }
        let mut vm_ids = state.hosts[host_id].vm_ids.clone();
        vm_ids.sort_unstable();
        for vm_id in vm_ids {
            let vm = &mut state.vms[vm_id];
            let candidates: Vec<ComponentSpec> = vm
                .app
                .optional()
                .filter(|c| !vm.is_deactivated(c.id))
                .cloned()
                .collect();
            out.counters.components_touched += vm.app.len() + 2 * candidates.len();
            let selection = select_components(policy, &candidates, target);
            if selection.is_empty() {
                continue;
            }
            vm.deactivate(selection.components.iter().copied())?;
            out.records.push(DeactivationRecord {
                interval: clock,
                host_id,
                vm_id,
                components: selection.components,
                discount_added: selection.discount,
                utilization_disabled: selection.utilization,
            });
        }
    }
    Ok(out)
}
