//! Merging of coherent states that come closer than a threshold.
//!
//! Groups with any pair of members closer than the threshold are joined into
//! connected components. Each component keeps one representative; the
//! other members follow it rigidly with frozen offsets, while their
//! coefficients stay free.

use serde::{Deserialize, Serialize};

use crate::ensemble::{EnsembleState, Group, Member, MergeEvent, PairDistance};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentativeRule {
    LowestIndex,
    /// Largest coefficient column norm; ties go to the lowest index.
    #[default]
    LargestCoefficientNorm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApoptosisPolicy {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub representative: RepresentativeRule,
}

fn default_true() -> bool {
    true
}

fn default_epsilon() -> f64 {
    0.05
}

impl Default for ApoptosisPolicy {
    fn default() -> Self {
        ApoptosisPolicy {
            enabled: true,
            epsilon: default_epsilon(),
            representative: RepresentativeRule::LargestCoefficientNorm,
        }
    }
}

impl ApoptosisPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("apoptosis epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Pairs of groups with some pair of members closer than `threshold`
/// (strictly), expressed via their representatives.
pub fn detect_within(state: &EnsembleState, threshold: f64) -> Vec<PairDistance> {
    state
        .group_distances()
        .into_iter()
        .filter(|&(_, _, d)| d < threshold)
        .map(|(a, b, distance)| PairDistance { pair: (a, b), distance })
        .collect()
}

/// Pairs of groups closer than the policy threshold.
pub fn detect(state: &EnsembleState, policy: &ApoptosisPolicy) -> Vec<PairDistance> {
    detect_within(state, policy.epsilon)
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Joins the groups connected by `pairs`. Member rows are re-synchronized to
/// their representative, so the wave function is unchanged up to round-off.
pub fn merge(state: &EnsembleState, pairs: &[PairDistance], policy: &ApoptosisPolicy) -> Result<EnsembleState> {
    merge_tagged(state, pairs, policy, false)
}

pub(crate) fn merge_tagged(
    state: &EnsembleState,
    pairs: &[PairDistance],
    policy: &ApoptosisPolicy,
    forced: bool,
) -> Result<EnsembleState> {
    if pairs.is_empty() {
        return Ok(state.clone());
    }
    let m = state.multiplicity();
    let labels = state.partition.labels();
    let old_groups = state.partition.groups();
    let mut parent: Vec<usize> = (0..old_groups.len()).collect();
    for p in pairs {
        let (a, b) = p.pair;
        if a >= m || b >= m {
            return Err(Error::Partition(format!("pair ({a}, {b}) out of range {m}")));
        }
        let ra = find(&mut parent, labels[a]);
        let rb = find(&mut parent, labels[b]);
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut components: Vec<Vec<usize>> = vec![Vec::new(); old_groups.len()];
    for gi in 0..old_groups.len() {
        let root = find(&mut parent, gi);
        components[root].push(gi);
    }

    let column_norm = |k: usize| -> f64 { state.coefficients.column(k).iter().map(|z| z.norm_sqr()).sum() };
    let mut next = state.clone();
    let mut new_groups = Vec::new();
    let mut events = Vec::new();
    for comp in components.into_iter().filter(|c| !c.is_empty()) {
        if comp.len() == 1 {
            new_groups.push(old_groups[comp[0]].clone());
            continue;
        }
        let mut indices: Vec<usize> = comp.iter().flat_map(|&gi| old_groups[gi].indices()).collect();
        indices.sort_unstable();
        let rep = match policy.representative {
            RepresentativeRule::LowestIndex => indices[0],
            RepresentativeRule::LargestCoefficientNorm => {
                let mut best = indices[0];
                let mut best_norm = column_norm(best);
                for &i in &indices[1..] {
                    let v = column_norm(i);
                    if v > best_norm {
                        best = i;
                        best_norm = v;
                    }
                }
                best
            }
        };
        let rep_row = state.displacements.row(rep).to_owned();
        let members: Vec<Member> = indices
            .iter()
            .filter(|&&i| i != rep)
            .map(|&i| Member {
                index: i,
                offset: state.displacements.row(i).iter().zip(rep_row.iter()).map(|(a, b)| a - b).collect(),
            })
            .collect();
        let distances = pairs
            .iter()
            .filter(|p| indices.binary_search(&p.pair.0).is_ok())
            .cloned()
            .collect();
        events.push(MergeEvent {
            time: state.time,
            indices: indices.clone(),
            representative: rep,
            distances,
            forced,
        });
        new_groups.push(Group {
            representative: rep,
            members,
        });
    }
    next.partition.replace_groups(new_groups)?;
    for e in events {
        next.partition.push_event(e);
    }
    next.sync_members();
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::c64;
    use ndarray::Array2;

    fn line_state(xs: &[f64]) -> EnsembleState {
        let m = xs.len();
        let f = Array2::from_shape_fn((m, 1), |(k, _)| c64::new(xs[k], 0.0));
        let a = Array2::from_shape_fn((1, m), |(_, k)| c64::new(1.0 + k as f64, 0.0));
        EnsembleState::new(a, f, 0.5).unwrap()
    }

    #[test]
    fn strict_threshold() {
        let s = line_state(&[0.0, 0.049, 1.0]);
        let pairs = detect(&s, &ApoptosisPolicy::default());
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].pair, (0, 1));
        let s = line_state(&[0.0, 0.05, 1.0]);
        assert!(detect(&s, &ApoptosisPolicy::default()).is_empty());
    }

    #[test]
    fn chain_forms_one_group() {
        let s = line_state(&[0.0, 0.04, 0.08, 2.0]);
        let pol = ApoptosisPolicy::default();
        let pairs = detect(&s, &pol);
        assert_eq!(pairs.iter().map(|p| p.pair).collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
        let merged = merge(&s, &pairs, &pol).unwrap();
        assert_eq!(merged.partition.group_count(), 2);
        let g = merged.partition.groups().iter().find(|g| g.len() == 3).unwrap();
        assert_eq!(g.representative, 2);
        assert_eq!(merged.partition.events()[0].indices, vec![0, 1, 2]);
        assert!(detect(&merged, &pol).is_empty());
    }
}
