//! Triple store: vocabularies, splits, neighbor indices and the
//! inverse-augmented aggregation graph.
//!
//! Entity ids are dense in `[0, |E|)`. Relation ids are dense in
//! `[0, 2|R|)` where `r + |R|` denotes the inverse of base relation `r`,
//! so inversion is O(1) and never touches the name table.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use core::fmt;

pub type EntityId = u32;
pub type RelationId = u32;

/// A (head, relation, tail) fact over id space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, rel: RelationId, tail: EntityId) -> Self {
        Triple { head, rel, tail }
    }
}

/// Dataset partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    fn index(self) -> usize {
        match self {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NameKind {
    Entity,
    Relation,
}

/// Construction and lookup failures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KgError {
    EmptySplit(Split),
    /// Entity or relation in valid/test that never occurs in train.
    UnseenName {
        split: Split,
        /// Zero-based triple index within the split input.
        index: usize,
        kind: NameKind,
        name: String,
    },
    UnknownEntity(String),
    UnknownRelation(String),
    EntityIdOutOfRange(EntityId),
    RelationIdOutOfRange(RelationId),
}

impl fmt::Display for KgError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KgError::EmptySplit(s) => write!(f, "empty split: {s}"),
            KgError::UnseenName {
                split,
                index,
                kind,
                name,
            } => {
                let kind = match kind {
                    NameKind::Entity => "entity",
                    NameKind::Relation => "relation",
                };
                write!(
                    f,
                    "{kind} '{name}' in {split} triple #{} does not occur in train",
                    index + 1
                )
            }
            KgError::UnknownEntity(n) => write!(f, "unknown entity '{n}'"),
            KgError::UnknownRelation(n) => write!(f, "unknown relation '{n}'"),
            KgError::EntityIdOutOfRange(id) => write!(f, "entity id {id} out of range"),
            KgError::RelationIdOutOfRange(id) => write!(f, "relation id {id} out of range"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for KgError {}

/// Entity and relation name tables with dense id assignment.
///
/// Ids are assigned in first-appearance order scanning train, then valid,
/// then test, so byte-identical inputs always produce identical ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    entity_ids: BTreeMap<String, EntityId>,
    relation_ids: BTreeMap<String, RelationId>,
}

impl Vocab {
    pub fn n_entities(&self) -> usize {
        self.entity_names.len()
    }

    /// Number of base relations.
    pub fn n_relations(&self) -> usize {
        self.relation_names.len()
    }

    /// Size of the augmented relation id space (`2 * |R|`).
    pub fn n_relations_aug(&self) -> usize {
         2 * self.relation_names.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_ids.get(name).copied()
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entity_names[id as usize]
    }

    /// Base name of a possibly-inverse relation id.
    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relation_names[self.base_relation(id) as usize]
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn is_inverse(&self, rel: RelationId) -> bool {
        rel as usize >= self.n_relations()
    }

    /// Inverse of a relation id; an involution over `[0, 2|R|)`.
    pub fn invert(&self, rel: RelationId) -> RelationId {
        let r = self.n_relations() as RelationId;
        if rel < r {
            rel + r
        } else {
            rel - r
        }
    }

    pub fn base_relation(&self, rel: RelationId) -> RelationId {
        if self.is_inverse(rel) {
            rel - self.n_relations() as RelationId
        } else {
            rel
        }
    }

    fn intern_entity(&mut self, name: &str) -> EntityId {
        if let Some(&id) = self.entity_ids.get(name) {
            return id;
        }
        let id = self.entity_names.len() as EntityId;
        self.entity_names.push(String::from(name));
        self.entity_ids.insert(String::from(name), id);
        id
    }

    fn intern_relation(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.relation_ids.get(name) {
            return id;
        }
        let id = self.relation_names.len() as RelationId;
        self.relation_names.push(String::from(name));
        self.relation_ids.insert(String::from(name), id);
        id
    }

    /// FNV-1a fingerprints of the entity and relation name sequences; used
    /// to bind checkpoints to the vocabulary they were trained with.
    pub fn fingerprint(&self) -> (u64, u64) {
        (fnv1a(&self.entity_names), fnv1a(&self.relation_names))
    }
}

fn fnv1a(names: &[String]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for name in names {
        for &b in name.as_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// One split's triples plus sorted views for range queries.
#[derive(Debug, Clone, Default)]
struct SplitData {
    /// First-appearance order, duplicates dropped.
    triples: Vec<Triple>,
    /// Sorted by (head, rel, tail).
    by_hrt: Vec<Triple>,
    /// Sorted by (tail, rel, head).
    by_trh: Vec<Triple>,
    duplicates_dropped: usize,
    entities_seen: usize,
    relations_seen: usize,
}

impl SplitData {
    fn build(triples: Vec<Triple>, n_entities: usize, n_relations: usize) -> Self {
        let mut order: Vec<usize> = (0..triples.len()).collect();
        order.sort_by_key(|&i| (triples[i], i));
        let mut keep = alloc::vec![true; triples.len()];
        let mut dropped = 0;
        for w in order.windows(2) {
            if triples[w[0]] == triples[w[1]] {
                keep[w[1]] = false;
                dropped += 1;
            }
        }
        let triples: Vec<Triple> = triples
            .into_iter()
            .zip(keep)
            .filter_map(|(t, k)| k.then_some(t))
            .collect();
        let mut by_hrt = triples.clone();
        by_hrt.sort_unstable();
        let mut by_trh = triples.clone();
        by_trh.sort_unstable_by_key(|t| (t.tail, t.rel, t.head));
        let mut ent_seen = alloc::vec![false; n_entities];
        let mut rel_seen = alloc::vec![false; n_relations];
        for t in &triples {
            ent_seen[t.head as usize] = true;
            ent_seen[t.tail as usize] = true;
            rel_seen[t.rel as usize] = true;
        }
        SplitData {
            triples,
            by_hrt,
            by_trh,
            duplicates_dropped: dropped,
            entities_seen: ent_seen.iter().filter(|&&b| b).count(),
            relations_seen: rel_seen.iter().filter(|&&b| b).count(),
        }
    }
}

/// Per-split ingest outcome surfaced by stats reporting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SplitStats {
    pub triples: usize,
    pub entities_seen: usize,
    pub relations_seen: usize,
    pub duplicates_dropped: usize,
}

/// Options for [`TripleStore::build`].
#[derive(Debug, Clone, Copy, Default)]
pub struct StoreOptions {
    /// Admit valid/test entities and relations that never occur in train
    /// (they get ids after all train names) instead of failing. Some
    /// published benchmark files contain a handful of such names.
    pub allow_unseen: bool,
}

/// Deduplicated, indexed triple sets with vocabulary and neighbor indices.
/// Immutable after construction and safe to share across threads.
#[derive(Debug, Clone)]
pub struct TripleStore {
    vocab: Vocab,
    splits: [SplitData; 3],
    /// Per entity: incoming (relation, head) pairs from train, sorted.
    in_index: Vec<Vec<(RelationId, EntityId)>>,
    /// Per entity: outgoing (relation, tail) pairs from train, sorted.
    out_index: Vec<Vec<(RelationId, EntityId)>>,
    /// Per entity: outgoing (tail, relation) pairs from train, sorted.
    out_by_tail: Vec<Vec<(EntityId, RelationId)>>,
    /// Count of valid/test names admitted without train occurrence
    /// (non-zero only with `allow_unseen`).
    unseen_admitted: usize,
}

impl TripleStore {
    /// Build from name triples, one list per split.
    pub fn build(
        train: &[(String, String, String)],
        valid: &[(String, String, String)],
        test: &[(String, String, String)],
        options: StoreOptions,
    ) -> Result<TripleStore, KgError> {
        if train.is_empty() {
            return Err(KgError::EmptySplit(Split::Train));
        }
        let mut vocab = Vocab::default();
        let mut ids: [Vec<Triple>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        ids[0] = train
            .iter()
            .map(|(h, r, t)| {
                Triple::new(
                    vocab.intern_entity(h),
                    vocab.intern_relation(r),
                    vocab.intern_entity(t),
                )
            })
            .collect();
        let mut unseen = 0;
        for (split, raw) in [(Split::Valid, valid), (Split::Test, test)] {
            let out = &mut ids[split.index()];
            for (index, (h, r, t)) in raw.iter().enumerate() {
                let mut resolve_ent = |name: &str| -> Result<EntityId, KgError> {
                    match vocab.entity_id(name) {
                        Some(id) => Ok(id),
                        None if options.allow_unseen => {
                            unseen += 1;
                            Ok(vocab.intern_entity(name))
                        }
                        None => Err(KgError::UnseenName {
                            split,
                            index,
                            kind: NameKind::Entity,
                            name: String::from(name),
                        }),
                    }
                };
                let head = resolve_ent(h)?;
                let tail = resolve_ent(t)?;
                let rel = match vocab.relation_id(r) {
                    Some(id) => id,
                    None if options.allow_unseen => {
                        unseen += 1;
                        vocab.intern_relation(r)
                    }
                    None => {
                        return Err(KgError::UnseenName {
                            split,
                            index,
                            kind: NameKind::Relation,
                            name: String::from(r),
                        })
                    }
                };
                out.push(Triple::new(head, rel, tail));
            }
        }
        let [train_ids, valid_ids, test_ids] = ids;
        let ne = vocab.n_entities();
        let nr = vocab.n_relations();
        let splits = [
            SplitData::build(train_ids, ne, nr),
            SplitData::build(valid_ids, ne, nr),
            SplitData::build(test_ids, ne, nr),
        ];

        let mut in_index: Vec<Vec<(RelationId, EntityId)>> = alloc::vec![Vec::new(); ne];
        let mut out_index: Vec<Vec<(RelationId, EntityId)>> = alloc::vec![Vec::new(); ne];
        let mut out_by_tail: Vec<Vec<(EntityId, RelationId)>> = alloc::vec![Vec::new(); ne];
        for t in &splits[0].triples {
            in_index[t.tail as usize].push((t.rel, t.head));
            out_index[t.head as usize].push((t.rel, t.tail));
            out_by_tail[t.head as usize].push((t.tail, t.rel));
        }
        for list in in_index.iter_mut() {
            list.sort_unstable();
        }
        for list in out_index.iter_mut() {
            list.sort_unstable();
        }
        for list in out_by_tail.iter_mut() {
            list.sort_unstable();
        }

        Ok(TripleStore {
            vocab,
            splits,
            in_index,
            out_index,
            out_by_tail,
            unseen_admitted: unseen,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn triples(&self, split: Split) -> &[Triple] {
        &self.splits[split.index()].triples
    }

    pub fn stats(&self, split: Split) -> SplitStats {
        let s = &self.splits[split.index()];
        SplitStats {
            triples: s.triples.len(),
            entities_seen: s.entities_seen,
            relations_seen: s.relations_seen,
            duplicates_dropped: s.duplicates_dropped,
        }
    }

    pub fn unseen_admitted(&self) -> usize {
        self.unseen_admitted
    }

    /// Train membership test over base-direction triples.
    pub fn train_contains(&self, t: Triple) -> bool {
        self.splits[0].by_hrt.binary_search(&t).is_ok()
    }

    /// Incoming train pairs of `e`: (relation, head), sorted.
    pub fn incoming(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.in_index[e as usize]
    }

    /// Outgoing train pairs of `e`: (relation, tail), sorted.
    pub fn outgoing(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.out_index[e as usize]
    }

    /// Count of train triples `(*, rel, tail)`.
    pub fn in_count_rel(&self, tail: EntityId, rel: RelationId) -> usize {
        range_by_first(&self.in_index[tail as usize], rel).len()
    }

    /// Count of train triples `(head, rel, *)`.
    pub fn out_count_rel(&self, head: EntityId, rel: RelationId) -> usize {
        range_by_first(&self.out_index[head as usize], rel).len()
    }

    /// Count of train edges `head -> tail` (distinct relations).
    pub fn edge_count(&self, head: EntityId, tail: EntityId) -> usize {
        range_by_first(&self.out_by_tail[head as usize], tail).len()
    }

    /// Train answers of an inverse-unified query `(head, rel)`, where `rel`
    /// may be an inverse id. Distinct, ascending.
    pub fn train_answers(&self, head: EntityId, rel: RelationId) -> Vec<EntityId> {
        let mut out: Vec<EntityId> = if self.vocab.is_inverse(rel) {
            let base = self.vocab.base_relation(rel);
            range_by_first(&self.in_index[head as usize], base)
                .iter()
                .map(|&(_, h)| h)
                .collect()
        } else {
            range_by_first(&self.out_index[head as usize], rel)
                .iter()
                .map(|&(_, t)| t)
                .collect()
        };
        out.dedup();
        out
    }

    /// All entities answering `(head, rel)` across train, valid and test —
    /// the filtered-setting exclusion set. Distinct, ascending.
    pub fn filtered_candidates(
        &self,
        head: EntityId,
        rel: RelationId,
    ) -> Result<Vec<EntityId>, KgError> {
        if head as usize >= self.vocab.n_entities() {
            return Err(KgError::EntityIdOutOfRange(head));
        }
        if rel as usize >= self.vocab.n_relations_aug() {
            return Err(KgError::RelationIdOutOfRange(rel));
        }
        let mut out = Vec::new();
        let inverse = self.vocab.is_inverse(rel);
        let base = self.vocab.base_relation(rel);
        for split in &self.splits {
            if inverse {
                let lo = split
                    .by_trh
                    .partition_point(|t| (t.tail, t.rel) < (head, base));
                for t in &split.by_trh[lo..] {
                    if (t.tail, t.rel) != (head, base) {
                        break;
                    }
                    out.push(t.head);
                }
            } else {
                let lo = split
                    .by_hrt
                    .partition_point(|t| (t.head, t.rel) < (head, base));
                for t in &split.by_hrt[lo..] {
                    if (t.head, t.rel) != (head, base) {
                        break;
                    }
                    out.push(t.tail);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// The inverse-augmented train graph used for aggregation.
    pub fn aug_graph(&self) -> AugGraph {
        AugGraph::from_train(self)
    }
}

fn range_by_first<B: Ord + Copy, A: Ord + Copy>(list: &[(A, B)], key: A) -> &[(A, B)] {
    let lo = list.partition_point(|&(a, _)| a < key);
    let hi = lo + list[lo..].partition_point(|&(a, _)| a == key);
    &list[lo..hi]
}

/// A single prediction query: answer `answer` from `(head, rel, ?)`.
/// `rel >= |R|` encodes the head-prediction direction of a base triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    pub head: EntityId,
    pub rel: RelationId,
    pub answer: EntityId,
}

/// Queries of one split with both directions unified as tail prediction.
#[derive(Debug, Clone)]
pub struct QuerySet {
    pub split: Split,
    pub queries: Vec<Query>,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Emit `(h, r, t)` and `(t, r^-1, h)` for every triple of the split, in
/// split order.
pub fn build_query_set(store: &TripleStore, split: Split) -> QuerySet {
    let inv = store.vocab().n_relations() as RelationId;
    let mut queries = Vec::with_capacity(2 * store.triples(split).len());
    for t in store.triples(split) {
        queries.push(Query {
            head: t.head,
            rel: t.rel,
            answer: t.tail,
        });
        queries.push(Query {
            head: t.tail,
            rel: t.rel + inv,
            answer: t.head,
        });
    }
    QuerySet { split, queries }
}

/// The base-direction triple a query was derived from.
pub fn base_triple(vocab: &Vocab, q: Query) -> Triple {
    if vocab.is_inverse(q.rel) {
        Triple::new(q.answer, vocab.base_relation(q.rel), q.head)
    } else {
        Triple::new(q.head, q.rel, q.answer)
    }
}

/// Train edges plus inverse twins; aggregation edge `(s, r, d)` carries a
/// message from `s` into `d`. Edge `2j` is train triple `j` (in sorted
/// order), edge `2j + 1` its inverse; exact duplicates after inversion
/// cannot arise because inverse relation ids are disjoint from base ids.
#[derive(Debug, Clone)]
pub struct AugGraph {
    edges: Vec<Triple>,
    n_entities: usize,
    n_base_triples: usize,
    n_base_relations: usize,
}

impl AugGraph {
    fn from_train(store: &TripleStore) -> Self {
        let inv = store.vocab().n_relations() as RelationId;
        let base = &store.splits[0].by_hrt;
        let mut edges = Vec::with_capacity(2 * base.len());
        for t in base {
            edges.push(*t);
            edges.push(Triple::new(t.tail, t.rel + inv, t.head));
        }
        AugGraph {
            edges,
            n_entities: store.vocab().n_entities(),
            n_base_triples: base.len(),
            n_base_relations: store.vocab().n_relations(),
        }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn edges(&self) -> &[Triple] {
        &self.edges
    }

    /// Index of the inverse twin of edge `i`.
    pub fn twin(&self, i: usize) -> usize {
        i ^ 1
    }

    /// Locate an augmented edge by content. Even slots hold the sorted base
    /// triples, so the lookup is a binary search over the even stride.
    pub fn find(&self, edge: Triple) -> Option<usize> {
        let inverse = edge.rel as usize >= self.n_base_relations;
        let base = if inverse {
            Triple::new(
                edge.tail,
                edge.rel - self.n_base_relations as RelationId,
                edge.head,
            )
        } else {
            edge
        };
        let mut lo = 0usize;
        let mut hi = self.n_base_triples;
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.edges[2 * mid].cmp(&base) {
                core::cmp::Ordering::Less => lo = mid + 1,
                core::cmp::Ordering::Greater => hi = mid,
                core::cmp::Ordering::Equal => return Some(2 * mid + usize::from(inverse)),
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    pub(crate) fn name_triples(raw: &[(&str, &str, &str)]) -> Vec<(String, String, String)> {
        raw.iter()
            .map(|(h, r, t)| (h.to_string(), r.to_string(), t.to_string()))
            .collect()
    }

    fn small_store() -> TripleStore {
        let train = name_triples(&[
            ("a", "r1", "b"),
            ("b", "r1", "c"),
            ("a", "r2", "c"),
            ("c", "r2", "a"),
        ]);
        let valid = name_triples(&[("a", "r1", "c")]);
        let test = name_triples(&[("b", "r2", "a")]);
        TripleStore::build(&train, &valid, &test, StoreOptions::default()).unwrap()
    }

    #[test]
    fn first_appearance_ids() {
        let store = small_store();
        let v = store.vocab();
        assert_eq!(v.entity_id("a"), Some(0));
        assert_eq!(v.entity_id("b"), Some(1));
        assert_eq!(v.entity_id("c"), Some(2));
        assert_eq!(v.relation_id("r1"), Some(0));
        assert_eq!(v.relation_id("r2"), Some(1));
        // lookup . name is the identity
        for id in 0..v.n_entities() as EntityId {
            assert_eq!(v.entity_id(v.entity_name(id)), Some(id));
        }
    }

    #[test]
    fn inverse_involution() {
        let store = small_store();
        let v = store.vocab();
        for r in 0..v.n_relations_aug() as RelationId {
            assert_eq!(v.invert(v.invert(r)), r);
        }
        assert!(v.is_inverse(v.invert(0)));
    }

    #[test]
    fn unseen_name_is_fatal_by_default() {
        let train = name_triples(&[("a", "r", "b")]);
        let valid = name_triples(&[("a", "r", "z")]);
        let err = TripleStore::build(&train, &valid, &[], StoreOptions::default()).unwrap_err();
        match err {
            KgError::UnseenName { split, kind, name, .. } => {
                assert_eq!(split, Split::Valid);
                assert_eq!(kind, NameKind::Entity);
                assert_eq!(name, "z");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unseen_name_admitted_when_allowed() {
        let train = name_triples(&[("a", "r", "b")]);
        let valid = name_triples(&[("a", "r", "z")]);
        let store =
            TripleStore::build(&train, &valid, &[], StoreOptions { allow_unseen: true }).unwrap();
        assert_eq!(store.unseen_admitted(), 1);
        assert_eq!(store.vocab().entity_id("z"), Some(2));
    }

    #[test]
    fn empty_train_is_fatal() {
        let err = TripleStore::build(&[], &[], &[], StoreOptions::default()).unwrap_err();
        assert_eq!(err, KgError::EmptySplit(Split::Train));
    }

    #[test]
    fn duplicates_dropped_and_counted() {
        let train = name_triples(&[("a", "r", "b"), ("a", "r", "b"), ("b", "r", "a")]);
        let store = TripleStore::build(&train, &[], &[], StoreOptions::default()).unwrap();
        assert_eq!(store.stats(Split::Train).triples, 2);
        assert_eq!(store.stats(Split::Train).duplicates_dropped, 1);
    }

    #[test]
    fn query_set_emits_both_directions() {
        let store = small_store();
        let qs = build_query_set(&store, Split::Valid);
        assert_eq!(qs.len(), 2);
        let v = store.vocab();
        let a = v.entity_id("a").unwrap();
        let c = v.entity_id("c").unwrap();
        let r1 = v.relation_id("r1").unwrap();
        assert_eq!(
            qs.queries[0],
            Query {
                head: a,
                rel: r1,
                answer: c
            }
        );
        assert_eq!(
            qs.queries[1],
            Query {
                head: c,
                rel: v.invert(r1),
                answer: a
            }
        );
        assert!(build_query_set(&store, Split::Test).len() == 2);
    }

    #[test]
    fn filtered_candidates_match_scan() {
        let store = small_store();
        let v = store.vocab();
        let a = v.entity_id("a").unwrap();
        let r1 = v.relation_id("r1").unwrap();
        // (a, r1, ?) holds for b (train) and c (valid).
        assert_eq!(store.filtered_candidates(a, r1).unwrap(), alloc::vec![1, 2]);
        // Inverse direction: (?, r2, a) holds for c (train) and b (test).
        let r2inv = v.invert(v.relation_id("r2").unwrap());
        assert_eq!(
            store.filtered_candidates(a, r2inv).unwrap(),
            alloc::vec![1, 2]
        );
        assert!(store.filtered_candidates(a, 99).is_err());
    }

    #[test]
    fn aug_graph_doubles_train() {
        let store = small_store();
        let g = store.aug_graph();
        assert_eq!(g.len(), 2 * store.triples(Split::Train).len());
        for j in 0..g.len() {
            let e = g.edges()[j];
            let t = g.edges()[g.twin(j)];
            assert_eq!(t.head, e.tail);
            assert_eq!(t.tail, e.head);
            assert_eq!(store.vocab().invert(e.rel), t.rel);
            assert_eq!(g.find(e), Some(j));
        }
    }

    #[test]
    fn index_consistency() {
        let store = small_store();
        for t in store.triples(Split::Train) {
            assert!(store.incoming(t.tail).contains(&(t.rel, t.head)));
            assert!(store.outgoing(t.head).contains(&(t.rel, t.tail)));
        }
        let total_in: usize = (0..store.vocab().n_entities() as EntityId)
            .map(|e| store.incoming(e).len())
            .sum();
        assert_eq!(total_in, store.triples(Split::Train).len());
    }
}
