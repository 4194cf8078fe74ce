use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ConsolidationStrategy, ConsolidationThresholds, PlanView};
use crate::error::{Error, Result};
use crate::SimRng;

/// Which form of the migration-probability function to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UbpFormula {
    /// `(1 - (1 - u) / (1 - T))^lambda`: 0 at the threshold, 1 at full load.
    #[default]
    Corrected,
    /// `(1 - (u - 1) / (1 - T))^lambda`, clamped; saturates at 1 below full load.
    AsPrinted,
}

/// Probability that a VM on a host at utilization `u` is picked for
/// migration. Always in `[0, 1]`.
pub fn ubp_migration_probability(u: f64, thresholds: &ConsolidationThresholds) -> Result<f64> {
    let span = 1.0 - thresholds.upper;
    if span.abs() < 1e-12 {
        return Err(Error::Degenerate(
            "migration probability needs an upper threshold below 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Domain {
            what: "utilization must lie in [0, 1]",
            value: u,
        });
    }
    let base = match thresholds.ubp_formula {
        UbpFormula::Corrected => 1.0 - (1.0 - u) / span,
        UbpFormula::AsPrinted => 1.0 - (u - 1.0) / span,
    };
    Ok(base.clamp(0.0, 1.0).powf(thresholds.lambda).clamp(0.0, 1.0))
}

/// Utilization-based probabilistic consolidation: every VM on an overloaded
/// host leaves independently with the host's migration probability.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ubp;

impl ConsolidationStrategy for Ubp {
    fn name(&self) -> &'static str {
        "ubp"
    }

    fn select_evictions(
        &self,
        view: &PlanView<'_>,
        host_id: usize,
        thresholds: &ConsolidationThresholds,
        rng: &mut SimRng,
    ) -> Result<Vec<usize>> {
        // Saturated hosts are evaluated at full load.
        let u = view.utilization(host_id).min(1.0);
        let p = ubp_migration_probability(u, thresholds)?;
        let mut vms = view.vms_on(host_id).to_vec();
        vms.sort_unstable();
        // One draw per VM regardless of outcome keeps the stream aligned.
        Ok(vms
            .into_iter()
            .filter(|_| rng.random::<f64>() < p)
            .collect())
    }
}
