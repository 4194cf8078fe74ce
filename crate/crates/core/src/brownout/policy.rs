//! Component selection policies.
//!
//! Candidates are grouped into units: every connection group's optional
//! members form one unit, every untagged optional component is a unit of
//! its own. Multi-component policies order units by the mean of a
//! per-component key and deactivate the prefix whose utilization sum lies
//! nearest the target; NUFCS deactivates the single nearest component.

use std::collections::{BTreeMap, BTreeSet};

use crate::domain::ComponentSpec;
use crate::registry::Registry;

/// Optional components that move together.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    /// Component ids, ascending.
    pub members: Vec<usize>,
    pub utilization: f64,
    pub discount: f64,
}

impl Unit {
    fn first_id(&self) -> usize {
        self.members[0]
    }
}

/// Groups optional candidates by connection tag. Units come out ordered by
/// their smallest member id.
pub fn build_units(candidates: &[ComponentSpec]) -> Vec<Unit> {
    let mut tagged: BTreeMap<u32, Vec<&ComponentSpec>> = BTreeMap::new();
    let mut units = Vec::new();
    for c in candidates.iter().filter(|c| c.is_optional()) {
        match c.connection_tag {
            Some(tag) => tagged.entry(tag).or_default().push(c),
            None => units.push(vec![c]),
        }
    }
    units.extend(tagged.into_values());
    let mut units: Vec<Unit> = units
        .into_iter()
        .map(|group| {
            let mut members: Vec<usize> = group.iter().map(|c| c.id).collect();
            members.sort_unstable();
            Unit {
                members,
                utilization: group.iter().map(|c| c.utilization).sum(),
                discount: group.iter().map(|c| c.discount).sum(),
            }
        })
        .collect();
    units.sort_by_key(Unit::first_id);
    units
}

pub trait SelectionPolicy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Per-component ordering key; smaller keys are deactivated first.
    fn sort_key(&self, component: &ComponentSpec) -> f64;

    /// Component ids to deactivate (before tag closure) given the
    /// candidate components and the utilization target.
    fn choose(&self, candidates: &[ComponentSpec], target: f64) -> Vec<usize> {
        let by_id: BTreeMap<usize, &ComponentSpec> = candidates.iter().map(|c| (c.id, c)).collect();
        let mut keyed: Vec<(f64, Unit)> = build_units(candidates)
            .into_iter()
            .map(|u| {
                let mean = u
                    .members
                    .iter()
                    .map(|id| self.sort_key(by_id[id]))
                    .sum::<f64>()
                    / u.members.len() as f64;
                (mean, u)
            })
            .collect();
        keyed.sort_by(|(ka, ua), (kb, ub)| {
            ka.total_cmp(kb).then(ua.first_id().cmp(&ub.first_id()))
        });
        let utils: Vec<f64> = keyed.iter().map(|(_, u)| u.utilization).collect();
        let len = nearest_prefix(&utils, target);
        keyed
            .into_iter()
            .take(len)
            .flat_map(|(_, u)| u.members)
            .collect()
    }
}

/// Length of the prefix of `utils` to deactivate for `target`.
///
/// If the first entry already covers the target it is taken alone.
/// Otherwise the scan stops at the first prefix whose sum reaches the
/// target and keeps whichever of it and its predecessor lies closer,
/// preferring the shorter one on a tie. If no prefix reaches the target
/// everything is taken.
pub fn nearest_prefix(utils: &[f64], target: f64) -> usize {
    if utils.is_empty() || target <= 0.0 {
        return 0;
    }
    if utils[0] >= target {
        return 1;
    }
    let mut sum = 0.0;
    for (k, u) in utils.iter().enumerate() {
        let below = sum;
        sum += u;
        if sum >= target {
            return if target - below <= sum - target { k } else { k + 1 };
        }
    }
    utils.len()
}

/// Nearest utilization first: one component, the one closest to the target.
#[derive(Debug, Clone, Copy, Default)]
pub struct Nufcs;

impl SelectionPolicy for Nufcs {
    fn name(&self) -> &'static str {
        "nufcs"
    }

    fn sort_key(&self, component: &ComponentSpec) -> f64 {
        component.utilization
    }

    fn choose(&self, candidates: &[ComponentSpec], target: f64) -> Vec<usize> {
        if target <= 0.0 {
            return Vec::new();
        }
        candidates
            .iter()
            .filter(|c| c.is_optional())
            .min_by(|a, b| {
                (a.utilization - target)
                    .abs()
                    .total_cmp(&(b.utilization - target).abs())
                    .then(a.id.cmp(&b.id))
            })
            .map(|c| vec![c.id])
            .unwrap_or_default()
    }
}

/// Lowest utilization first.
#[derive(Debug, Clone, Copy, Default)]
pub struct Lufcs;

impl SelectionPolicy for Lufcs {
    fn name(&self) -> &'static str {
        "lufcs"
    }

    fn sort_key(&self, component: &ComponentSpec) -> f64 {
        component.utilization
    }
}

/// Lowest price (discount) first.
#[derive(Debug, Clone, Copy, Default)]
pub struct Lpfcs;

impl SelectionPolicy for Lpfcs {
    fn name(&self) -> &'static str {
        "lpfcs"
    }

    fn sort_key(&self, component: &ComponentSpec) -> f64 {
        component.discount
    }
}

/// Highest utilization-to-price ratio first.
#[derive(Debug, Clone, Copy, Default)]
pub struct Huprfcs;

impl SelectionPolicy for Huprfcs {
    fn name(&self) -> &'static str {
        "huprfcs"
    }

    fn sort_key(&self, component: &ComponentSpec) -> f64 {
        let ratio = match (component.utilization, component.discount) {
            (u, d) if d > 0.0 => u / d,
            (u, _) if u > 0.0 => f64::INFINITY,
            _ => 0.0,
        };
        -ratio
    }
}

/// Built-in policies: `nufcs`, `lufcs`, `lpfcs`, `huprfcs`.
pub fn registry() -> Registry<dyn SelectionPolicy> {
    let mut r: Registry<dyn SelectionPolicy> = Registry::new("selection policy");
    r.register("nufcs", || Box::new(Nufcs));
    r.register("lufcs", || Box::new(Lufcs));
    r.register("lpfcs", || Box::new(Lpfcs));
    r.register("huprfcs", || Box::new(Huprfcs));
    r
}

/// Components picked for deactivation, closed under connection tags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Selection {
    pub components: Vec<usize>,
    pub utilization: f64,
    pub discount: f64,
}

impl Selection {
    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Runs `policy` over the optional `candidates` and closes the result
/// under connection tags among them.
pub fn select_components(
    policy: &dyn SelectionPolicy,
    candidates: &[ComponentSpec],
    target: f64,
) -> Selection {
    if target <= 0.0 || !candidates.iter().any(ComponentSpec::is_optional) {
        return Selection::default();
    }
    let chosen: BTreeSet<usize> = policy.choose(candidates, target).into_iter().collect();
    let tags: BTreeSet<u32> = candidates
        .iter()
        .filter(|c| chosen.contains(&c.id))
        .filter_map(|c| c.connection_tag)
        .collect();
    let selected: Vec<&ComponentSpec> = candidates
        .iter()
        .filter(|c| c.is_optional())
        .filter(|c| chosen.contains(&c.id) || c.connection_tag.is_some_and(|t| tags.contains(&t)))
        .collect();
    Selection {
        components: selected.iter().map(|c| c.id).collect(),
        utilization: selected.iter().map(|c| c.utilization).sum(),
        discount: selected.iter().map(|c| c.discount).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ApplicationSpec, ComponentKind};

    fn plain(utils: &[f64]) -> Vec<ComponentSpec> {
        utils
            .iter()
            .enumerate()
            .map(|(id, &u)| ComponentSpec {
                id,
                kind: ComponentKind::Optional,
                utilization: u,
                discount: u,
                connection_tag: None,
            })
            .collect()
    }

    fn utils_of(sel: &Selection, comps: &[ComponentSpec]) -> Vec<f64> {
        sel.components.iter().map(|&i| comps[i].utilization).collect()
    }

    #[test]
    fn lufcs_picks_nearest_prefix() {
        let comps = plain(&[0.05, 0.10, 0.15, 0.20]);
        let sel = select_components(&Lufcs, &comps, 0.12);
        // prefix sums 0.05 and 0.15 bracket 0.12; 0.15 is closer
        assert_eq!(utils_of(&sel, &comps), vec![0.05, 0.10]);
    }

    #[test]
    fn nufcs_picks_single_nearest() {
        let comps = plain(&[0.05, 0.10, 0.15, 0.20]);
        let sel = select_components(&Nufcs, &comps, 0.12);
        assert_eq!(utils_of(&sel, &comps), vec![0.10]);
    }

    #[test]
    fn connected_groups_move_as_units() {
        let app = ApplicationSpec::reference_example();
        let optional: Vec<ComponentSpec> = app.optional().cloned().collect();
        let sel = select_components(&Lufcs, &optional, 0.05);
        assert_eq!(sel.components, vec![4, 7]);
        assert!((sel.discount - 0.20).abs() < 1e-12);
        assert!((sel.utilization - 0.25).abs() < 1e-12);
    }

    #[test]
    fn nufcs_closes_over_tags() {
        let app = ApplicationSpec::reference_example();
        let optional: Vec<ComponentSpec> = app.optional().cloned().collect();
        // 0.15 is nearest to 0.14; its partner (0.10) follows it
        let sel = select_components(&Nufcs, &optional, 0.14);
        assert_eq!(sel.components, vec![5, 6]);
    }

    #[test]
    fn first_unit_covering_target_is_taken_alone() {
        let comps = plain(&[0.3, 0.4]);
        let sel = select_components(&Lufcs, &comps, 0.01);
        assert_eq!(sel.components, vec![0]);
    }

    #[test]
    fn target_beyond_total_takes_all() {
        let comps = plain(&[0.1, 0.2]);
        assert_eq!(select_components(&Lufcs, &comps, 0.9).components, vec![0, 1]);
    }

    #[test]
    fn degenerate_inputs_give_empty_selection() {
        assert!(select_components(&Lufcs, &[], 0.3).is_empty());
        assert!(select_components(&Lufcs, &plain(&[0.2]), 0.0).is_empty());
        assert!(select_components(&Nufcs, &plain(&[0.2]), 0.0).is_empty());
    }

    #[test]
    fn tie_prefers_shorter_prefix() {
        // sums 0.1 and 0.3 are equally far from 0.2
        assert_eq!(nearest_prefix(&[0.1, 0.2], 0.2), 1);
        assert_eq!(nearest_prefix(&[0.25, 0.5], 0.5), 1);
    }

    #[test]
    fn sort_keys_follow_policy() {
        let comps = vec![
            ComponentSpec {
                id: 0,
                kind: ComponentKind::Optional,
                utilization: 0.3,
                discount: 0.05,
                connection_tag: None,
            },
            ComponentSpec {
                id: 1,
                kind: ComponentKind::Optional,
                utilization: 0.1,
                discount: 0.2,
                connection_tag: None,
            },
        ];
        // target below both: the first unit in policy order is taken
        assert_eq!(select_components(&Lufcs, &comps, 0.01).components, vec![1]);
        assert_eq!(select_components(&Lpfcs, &comps, 0.01).components, vec![0]);
        assert_eq!(select_components(&Huprfcs, &comps, 0.01).components, vec![0]);
    }

    #[test]
    fn zero_discount_ranks_first_for_ratio_policy() {
        let mut comps = plain(&[0.2, 0.1]);
        comps[1].discount = 0.0;
        assert_eq!(select_components(&Huprfcs, &comps, 0.01).components, vec![1]);
    }

    #[test]
    fn registry_has_four_policies() {
        let r = registry();
        assert_eq!(r.names(), vec!["nufcs", "lufcs", "lpfcs", "huprfcs"]);
        for n in r.names() {
            assert_eq!(r.create(n).unwrap().name(), n);
        }
    }
}
