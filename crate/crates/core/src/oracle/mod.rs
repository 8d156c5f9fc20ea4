//! Brute-force reference implementations used by the test suites.
//!
//! Everything here is a straight-line enumeration over raw triple lists or
//! score vectors, deliberately independent of the indexed and tape-based
//! code paths it is used to check. Compiled only with the `oracles`
//! feature.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::kg::{EntityId, Query, RelationId, Triple};

/// Mirror a possibly-inverse query onto its base-direction triple.
fn mirror(n_base_relations: usize, q: Query) -> (Triple, bool) {
    let inverse = q.rel as usize >= n_base_relations;
    if inverse {
        (
            Triple::new(q.answer, q.rel - n_base_relations as RelationId, q.head),
            true,
        )
    } else {
        (Triple::new(q.head, q.rel, q.answer), false)
    }
}

/// Relation-level evidence by full scan.
pub fn s_rel(train: &[Triple], n_base_relations: usize, q: Query) -> u64 {
    let (base, inverse) = mirror(n_base_relations, q);
    train
        .iter()
        .filter(|t| {
            if inverse {
                // Pattern (answer, r, *): co-occurrence in head position.
                t.head == base.head && t.rel == base.rel
            } else {
                // Pattern (*, r, answer): co-occurrence in tail position.
                t.rel == base.rel && t.tail == base.tail
            }
        })
        .count() as u64
}

/// Entity-level evidence by double loop over the train list.
pub fn s_ent(train: &[Triple], n_base_relations: usize, q: Query, inverse_paths: bool) -> u64 {
    let (base, _) = mirror(n_base_relations, q);
    let edges: Vec<Triple> = if inverse_paths {
        let inv = n_base_relations as RelationId;
        train
            .iter()
            .flat_map(|t| [*t, Triple::new(t.tail, t.rel + inv, t.head)])
            .collect()
    } else {
        train.to_vec()
    };
    let mut count = 0u64;
    for a in &edges {
        if a.head == base.head && a.tail == base.tail {
            count += 1;
        }
    }
    for a in &edges {
        if a.head != base.head {
            continue;
        }
        for b in &edges {
            if b.head == a.tail && b.tail == base.tail {
                count += 1;
            }
        }
    }
    count
}

/// Incoming-pair similarity by set intersection.
pub fn sim(train: &[Triple], a: EntityId, b: EntityId) -> u64 {
    let pairs = |e: EntityId| -> BTreeSet<(EntityId, RelationId)> {
        train
            .iter()
            .filter(|t| t.tail == e)
            .map(|t| (t.head, t.rel))
            .collect()
    };
    pairs(a).intersection(&pairs(b)).count() as u64
}

/// Triple-level evidence by nested enumeration.
pub fn s_tri(train: &[Triple], n_base_relations: usize, q: Query) -> u64 {
    let inverse = q.rel as usize >= n_base_relations;
    let base_rel = if inverse {
        q.rel - n_base_relations as RelationId
    } else {
        q.rel
    };
    let mut answers: BTreeSet<EntityId> = BTreeSet::new();
    for t in train {
        if inverse {
            if t.rel == base_rel && t.tail == q.head {
                answers.insert(t.head);
            }
        } else if t.head == q.head && t.rel == base_rel {
            answers.insert(t.tail);
        }
    }
    answers.remove(&q.answer);
    answers.iter().map(|&other| sim(train, q.answer, other)).sum()
}

/// Tie-averaged filtered rank by explicit sorting of both bounds.
///
/// `filtered[i]` marks candidates excluded by the filtered setting; the
/// target is always admitted.
pub fn filtered_rank(scores: &[f64], target: usize, filtered: &[bool]) -> f64 {
    let rank_with = |target_first: bool| -> f64 {
        let mut order: Vec<usize> = (0..scores.len())
            .filter(|&i| i == target || !filtered[i])
            .collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap()
                .then_with(|| {
                    let key = |i: usize| {
                        if target_first {
                            usize::from(i != target)
                        } else {
                            usize::from(i == target)
                        }
                    };
                    key(a).cmp(&key(b))
                })
        });
        (order.iter().position(|&i| i == target).unwrap() + 1) as f64
    };
    (rank_with(true) + rank_with(false)) / 2.0
}

/// Central finite differences of a scalar function.
pub fn finite_difference(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    step: f64,
) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let hi = f(&probe);
        probe[i] = orig - step;
        let lo = f(&probe);
        probe[i] = orig;
        out.push((hi - lo) / (2.0 * step));
    }
    out
}

/// Relative error with an absolute floor for near-zero pairs.
pub fn rel_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / denom
    }
}

pub mod gradcheck;
