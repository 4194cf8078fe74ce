use super::{ConsolidationStrategy, ConsolidationThresholds, PlanView};
use crate::domain::EPS;
use crate::error::Result;
use crate::SimRng;

/// Threshold-driven consolidation: evicts the largest VMs from each
/// overloaded host until it is back under the upper threshold.
#[derive(Debug, Clone, Copy, Default)]
pub struct Pco;

impl ConsolidationStrategy for Pco {
    fn name(&self) -> &'static str {
        "pco"
    }

    fn select_evictions(
        &self,
        view: &PlanView<'_>,
        host_id: usize,
        thresholds: &ConsolidationThresholds,
        _rng: &mut SimRng,
    ) -> Result<Vec<usize>> {
        let cap = view.capacity_mips(host_id);
        let mut load = view.utilization(host_id) * cap;
        let mut chosen = Vec::new();
        for vm in view.vms_by_demand_desc(host_id) {
            if load / cap <= thresholds.upper + EPS {
                break;
            }
            load -= view.vm_mips(vm);
            chosen.push(vm);
        }
        Ok(chosen)
    }
}
