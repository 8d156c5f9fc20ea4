//! Semantic-evidence metrics and evidence-range bucketing.
//!
//! Three train-set signals quantify how much observable evidence supports
//! a prediction `(head, rel, ?) -> answer`:
//!
//! - relation level: co-occurrence count of the query relation with the
//!   answer entity;
//! - entity level: directed paths of length <= 2 from head to tail of the
//!   underlying base triple;
//! - triple level: neighbor-structure similarity between the answer and
//!   the other known answers of the same query.
//!
//! Inverse-unified queries (`rel >= |R|`) are scored by mirroring to the
//! base-direction pattern, so the evidence semantics of a triple do not
//! depend on which direction is being predicted.

use alloc::vec::Vec;

use core::fmt;

use crate::kg::{base_triple, EntityId, Query, QuerySet, TripleStore};

/// The three evidence values of one query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SeScores {
    pub s_rel: u64,
    pub s_ent: u64,
    pub s_tri: u64,
}

/// Metric variants toggled for analysis.
#[derive(Debug, Clone, Copy, Default)]
pub struct SeOptions {
    /// Count entity-level paths over the inverse-augmented graph instead of
    /// original edge directions only.
    pub inverse_paths: bool,
}

/// Relation-level evidence: triples in train co-occurring the query
/// relation with the answer (tail position for base queries, head position
/// for inverse queries).
pub fn s_rel(store: &TripleStore, q: Query) -> u64 {
    let v = store.vocab();
    if v.is_inverse(q.rel) {
        store.out_count_rel(q.answer, v.base_relation(q.rel)) as u64
    } else {
        store.in_count_rel(q.answer, q.rel) as u64
    }
}

/// Entity-level evidence: directed train paths of length <= 2 from the
/// base triple's head to its tail.
pub fn s_ent(store: &TripleStore, q: Query, opts: SeOptions) -> u64 {
    let t = base_triple(store.vocab(), q);
    if opts.inverse_paths {
        s_ent_augmented(store, t.head, t.tail)
    } else {
        let direct = store.edge_count(t.head, t.tail) as u64;
        let mut paths = 0u64;
        for &(_, mid) in store.outgoing(t.head) {
            paths += store.edge_count(mid, t.tail) as u64;
        }
        direct + paths
    }
}

fn s_ent_augmented(store: &TripleStore, from: EntityId, to: EntityId) -> u64 {
    let aug_count =
        |a: EntityId, b: EntityId| (store.edge_count(a, b) + store.edge_count(b, a)) as u64;
    let mut total = aug_count(from, to);
    for &(_, mid) in store.outgoing(from) {
        total += aug_count(mid, to);
    }
    for &(_, mid) in store.incoming(from) {
        total += aug_count(mid, to);
    }
    total
}

/// Common incoming (head, relation) neighbor pairs of two entities.
pub fn sim(store: &TripleStore, a: EntityId, b: EntityId) -> u64 {
    let (mut xs, mut ys) = (store.incoming(a), store.incoming(b));
    let mut count = 0u64;
    while let (Some(x), Some(y)) = (xs.first(), ys.first()) {
        match x.cmp(y) {
            core::cmp::Ordering::Less => xs = &xs[1..],
            core::cmp::Ordering::Greater => ys = &ys[1..],
            core::cmp::Ordering::Equal => {
                count += 1;
                xs = &xs[1..];
                ys = &ys[1..];
            }
        }
    }
    count
}

/// Triple-level evidence: summed similarity between the answer and the
/// other train answers of the query.
pub fn s_tri(store: &TripleStore, q: Query) -> u64 {
    store
        .train_answers(q.head, q.rel)
        .into_iter()
        .filter(|&other| other != q.answer)
        .map(|other| sim(store, q.answer, other))
        .sum()
}

/// All three metrics for one query.
pub fn score_query(store: &TripleStore, q: Query, opts: SeOptions) -> SeScores {
    SeScores {
        s_rel: s_rel(store, q),
        s_ent: s_ent(store, q, opts),
        s_tri: s_tri(store, q),
    }
}

/// Metrics for a whole query set, aligned with `queries.queries`.
pub fn score_query_set(store: &TripleStore, queries: &QuerySet, opts: SeOptions) -> Vec<SeScores> {
    queries
        .queries
        .iter()
        .map(|&q| score_query(store, q, opts))
        .collect()
}

/// Evidence-range partitioning scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BucketMode {
    /// Ascending thirds, never splitting a group of equal values; when a
    /// dominant group (typically the zeros) swallows a boundary, the
    /// remainder is split evenly among the remaining buckets.
    ThreeEven,
    /// Two ranges: values equal to zero, and values >= 1.
    TwoZeroSplit,
}

impl BucketMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BucketMode::ThreeEven => "three_even",
            BucketMode::TwoZeroSplit => "two_zero_split",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "three_even" => Some(BucketMode::ThreeEven),
            "two_zero_split" => Some(BucketMode::TwoZeroSplit),
            _ => None,
        }
    }
}

/// One evidence range: empirical value interval and member count. The
/// interval is meaningful only when `count > 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Bucket {
    pub lo: u64,
    pub hi: u64,
    pub count: usize,
}

/// Bucket membership for a value list.
#[derive(Debug, Clone)]
pub struct BucketAssignment {
    pub mode: BucketMode,
    /// Bucket index per input value.
    pub assignment: Vec<usize>,
    pub buckets: Vec<Bucket>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeError {
    EmptyValues,
}

impl fmt::Display for SeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeError::EmptyValues => f.write_str("bucketize: empty value list"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SeError {}

/// Partition values into evidence ranges.
pub fn bucketize(values: &[u64], mode: BucketMode) -> Result<BucketAssignment, SeError> {
    if values.is_empty() {
        return Err(SeError::EmptyValues);
    }
    match mode {
        BucketMode::TwoZeroSplit => {
            let mut buckets = [Bucket::default(), Bucket::default()];
            buckets[0].lo = 0;
            let mut assignment = Vec::with_capacity(values.len());
            for &v in values {
                let b = usize::from(v >= 1);
                assignment.push(b);
                let bucket = &mut buckets[b];
                if bucket.count == 0 {
                    bucket.lo = v;
                    bucket.hi = v;
                } else {
                    bucket.lo = bucket.lo.min(v);
                    bucket.hi = bucket.hi.max(v);
                }
                bucket.count += 1;
            }
            Ok(BucketAssignment {
                mode,
                assignment,
                buckets: buckets.to_vec(),
            })
        }
        BucketMode::ThreeEven => {
            let n = values.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by_key(|&i| (values[i], i));
            let n_buckets = 3;
            let mut cuts = Vec::with_capacity(n_buckets);
            let mut start = 0usize;
            for b in 0..n_buckets - 1 {
                let remaining = n - start;
                let left = n_buckets - b;
                let mut target = start + remaining.div_ceil(left);
                // Advance past any tie group straddling the boundary.
                while target > 0 && target < n && values[order[target]] == values[order[target - 1]]
                {
                    target += 1;
                }
                cuts.push(target);
                start = target;
            }
            cuts.push(n);
            let mut assignment = alloc::vec![0usize; n];
            let mut buckets = alloc::vec![Bucket::default(); n_buckets];
            let mut lo = 0usize;
            for (b, &hi) in cuts.iter().enumerate() {
                for &i in &order[lo..hi] {
                    assignment[i] = b;
                }
                if hi > lo {
                    buckets[b] = Bucket {
                        lo: values[order[lo]],
                        hi: values[order[hi - 1]],
                        count: hi - lo,
                    };
                }
                lo = hi;
            }
            Ok(BucketAssignment {
                mode,
                assignment,
                buckets,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Split, StoreOptions, TripleStore};
    use alloc::string::ToString;
    use alloc::vec;

    fn store(train: &[(&str, &str, &str)]) -> TripleStore {
        let train: Vec<_> = train
            .iter()
            .map(|(h, r, t)| (h.to_string(), r.to_string(), t.to_string()))
            .collect();
        TripleStore::build(&train, &[], &[], StoreOptions::default()).unwrap()
    }

    fn q(store: &TripleStore, h: &str, r: &str, inverse: bool, a: &str) -> Query {
        let v = store.vocab();
        let mut rel = v.relation_id(r).unwrap();
        if inverse {
            rel = v.invert(rel);
        }
        Query {
            head: v.entity_id(h).unwrap(),
            rel,
            answer: v.entity_id(a).unwrap(),
        }
    }

    #[test]
    fn s_rel_counts_relation_answer_cooccurrence() {
        let s = store(&[("a", "r", "t"), ("b", "r", "t"), ("a", "r", "u")]);
        assert_eq!(s_rel(&s, q(&s, "u", "r", false, "t")), 2);
        // No co-occurrence at all scores zero.
        assert_eq!(s_rel(&s, q(&s, "t", "r", false, "a")), 0);
        // Inverse direction counts head-position co-occurrence.
        assert_eq!(s_rel(&s, q(&s, "t", "r", true, "a")), 2);
    }

    #[test]
    fn s_ent_counts_short_paths() {
        let s = store(&[("h", "r1", "m"), ("m", "r2", "t")]);
        assert_eq!(s_ent(&s, q(&s, "h", "r1", false, "t"), SeOptions::default()), 1);
        let s = store(&[("h", "r1", "t"), ("h", "r2", "t")]);
        assert_eq!(s_ent(&s, q(&s, "h", "r1", false, "t"), SeOptions::default()), 2);
    }

    #[test]
    fn s_ent_is_direction_sensitive_by_default() {
        // Path t -> m -> h exists, but not h -> .. -> t.
        let s = store(&[("t", "r1", "m"), ("m", "r2", "h")]);
        assert_eq!(s_ent(&s, q(&s, "h", "r1", false, "t"), SeOptions::default()), 0);
        // The augmented variant sees it through inverse edges.
        let opts = SeOptions {
            inverse_paths: true,
        };
        assert!(s_ent(&s, q(&s, "h", "r1", false, "t"), opts) > 0);
    }

    #[test]
    fn s_ent_mirrors_inverse_queries_to_base_triple() {
        let s = store(&[("h", "r1", "m"), ("m", "r2", "t"), ("x", "r2", "t")]);
        let base = q(&s, "h", "r2", false, "t");
        let inv = q(&s, "t", "r2", true, "h");
        assert_eq!(
            s_ent(&s, base, SeOptions::default()),
            s_ent(&s, inv, SeOptions::default())
        );
    }

    #[test]
    fn sim_self_is_in_degree() {
        let s = store(&[("a", "r", "t"), ("b", "r", "t"), ("b", "q", "t"), ("t", "r", "a")]);
        let v = s.vocab();
        let t = v.entity_id("t").unwrap();
        assert_eq!(sim(&s, t, t), 3);
        // Disjoint in-neighborhoods share nothing.
        let a = v.entity_id("a").unwrap();
        assert_eq!(sim(&s, t, a), 0);
    }

    #[test]
    fn s_tri_sums_similarity_to_known_answers() {
        // (h, r) answers t' = {y}; sim(t, y) = 3 via three shared in-pairs.
        let s = store(&[
            ("h", "r", "y"),
            ("p1", "s1", "y"),
            ("p2", "s2", "y"),
            ("p3", "s3", "y"),
            ("p1", "s1", "t"),
            ("p2", "s2", "t"),
            ("p3", "s3", "t"),
        ]);
        assert_eq!(s_tri(&s, q(&s, "h", "r", false, "t")), 3);
        // No train answers for the query pattern: zero.
        assert_eq!(s_tri(&s, q(&s, "p1", "r", false, "t")), 0);
        // The target itself is excluded from the sum.
        let s2 = store(&[("h", "r", "t"), ("a", "s", "t")]);
        assert_eq!(s_tri(&s2, q(&s2, "h", "r", false, "t")), 0);
    }

    #[test]
    fn metrics_ignore_valid_and_test() {
        let train: Vec<_> = [("a", "r", "b"), ("b", "r", "c")]
            .iter()
            .map(|(h, r, t)| (h.to_string(), r.to_string(), t.to_string()))
            .collect();
        let noise: Vec<_> = [("a", "r", "c")]
            .iter()
            .map(|(h, r, t)| (h.to_string(), r.to_string(), t.to_string()))
            .collect();
        let bare = TripleStore::build(&train, &[], &[], StoreOptions::default()).unwrap();
        let noisy = TripleStore::build(&train, &noise, &noise, StoreOptions::default()).unwrap();
        let queries = crate::kg::build_query_set(&bare, Split::Train);
        for &query in &queries.queries {
            assert_eq!(
                score_query(&bare, query, SeOptions::default()),
                score_query(&noisy, query, SeOptions::default())
            );
        }
    }

    #[test]
    fn bucketize_preserves_zero_tie_group() {
        let values = vec![0, 0, 0, 0, 0, 0, 1, 2, 3, 4];
        let b = bucketize(&values, BucketMode::ThreeEven).unwrap();
        let counts: Vec<usize> = b.buckets.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![6, 2, 2]);
        assert_eq!((b.buckets[0].lo, b.buckets[0].hi), (0, 0));
        assert_eq!((b.buckets[1].lo, b.buckets[1].hi), (1, 2));
        assert_eq!((b.buckets[2].lo, b.buckets[2].hi), (3, 4));
    }

    #[test]
    fn bucketize_exact_thirds_on_distinct_values() {
        let values: Vec<u64> = (1..=9).collect();
        let b = bucketize(&values, BucketMode::ThreeEven).unwrap();
        let counts: Vec<usize> = b.buckets.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![3, 3, 3]);
    }

    #[test]
    fn bucketize_two_zero_split() {
        let b = bucketize(&[0, 0, 1, 5], BucketMode::TwoZeroSplit).unwrap();
        let counts: Vec<usize> = b.buckets.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![2, 2]);
        assert_eq!(b.assignment, vec![0, 0, 1, 1]);
        assert_eq!((b.buckets[1].lo, b.buckets[1].hi), (1, 5));
    }

    #[test]
    fn bucketize_empty_is_fatal() {
        assert_eq!(
            bucketize(&[], BucketMode::ThreeEven).unwrap_err(),
            SeError::EmptyValues
        );
    }

    #[test]
    fn bucketize_never_splits_tie_groups() {
        let values = vec![5, 5, 5, 5, 1, 1, 9, 9, 9, 2];
        let b = bucketize(&values, BucketMode::ThreeEven).unwrap();
        for (i, &vi) in values.iter().enumerate() {
            for (j, &vj) in values.iter().enumerate() {
                if vi == vj {
                    assert_eq!(b.assignment[i], b.assignment[j]);
                }
            }
        }
    }
}
