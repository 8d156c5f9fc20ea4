//! Filtered-ranking evaluation with tie-averaged ranks, the standard
//! link-prediction metrics, and evidence-stratified rank reports.

use alloc::rc::Rc;
use alloc::vec::Vec;

use core::fmt;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::decoder::{self};
use crate::encoder::{self, EdgeArrays, Phase};
use crate::kg::{EntityId, KgError, Query, QuerySet, TripleStore};
use crate::model::{ModelConfig, ModelState};
use crate::scalar::Scalar;
use crate::se::{bucketize, Bucket, BucketMode, SeError, SeScores};

/// One scored query. Ranks are tie-averaged, so half-integers occur.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankRecord {
    pub query_index: usize,
    pub query: Query,
    pub rank: f64,
}

/// Aggregate link-prediction metrics over a record set.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricReport {
    pub count: usize,
    pub mrr: f64,
    pub mr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

impl MetricReport {
    pub fn from_ranks<I: IntoIterator<Item = f64>>(ranks: I) -> Self {
        let mut r = MetricReport::default();
        let mut rr_sum = 0.0;
        let mut rank_sum = 0.0;
        let mut hits = [0usize; 3];
        for rank in ranks {
            r.count += 1;
            rr_sum += 1.0 / rank;
            rank_sum += rank;
            for (slot, k) in hits.iter_mut().zip([1.0, 3.0, 10.0]) {
                if rank <= k {
                    *slot += 1;
                }
            }
        }
        if r.count > 0 {
            let n = r.count as f64;
            r.mrr = rr_sum / n;
            r.mr = rank_sum / n;
            r.hits1 = hits[0] as f64 / n;
            r.hits3 = hits[1] as f64 / n;
            r.hits10 = hits[2] as f64 / n;
        }
        r
    }
}

/// Tie-averaged filtered rank of `target` within `scores`.
///
/// `filter_out` is the ascending list of other true answers to exclude;
/// the target itself must not be in it. With `g` admitted candidates
/// scoring strictly higher and `q` non-target candidates scoring equal,
/// the rank is `g + q/2 + 1`.
pub fn filtered_rank<F: Scalar>(scores: &[F], target: EntityId, filter_out: &[EntityId]) -> f64 {
    filtered_rank_eps(scores, target, filter_out, 0.0)
}

/// [`filtered_rank`] with an equality tolerance for tie detection.
pub fn filtered_rank_eps<F: Scalar>(
    scores: &[F],
    target: EntityId,
    filter_out: &[EntityId],
    tie_epsilon: f64,
) -> f64 {
    assert!(
        filter_out.binary_search(&target).is_err(),
        "target entity {target} present in filter set"
    );
    let st = scores[target as usize].as_f64();
    let mut greater = 0usize;
    let mut equal = 0usize;
    let mut filter = filter_out.iter().peekable();
    for (i, s) in scores.iter().enumerate() {
        let i = i as EntityId;
        while let Some(&&f) = filter.peek() {
            if f < i {
                filter.next();
            } else {
                break;
            }
        }
        if i == target {
            continue;
        }
        if filter.peek() == Some(&&i) {
            continue;
        }
        let s = s.as_f64();
        if s - st > tie_epsilon {
            greater += 1;
        } else if (s - st).abs() <= tie_epsilon {
            equal += 1;
        }
    }
    greater as f64 + equal as f64 / 2.0 + 1.0
}

/// Per-metric, per-bucket mean rank row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketRow {
    pub metric: &'static str,
    pub bucket: usize,
    pub info: Bucket,
    pub mean_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalError {
    LengthMismatch { se: usize, ranks: usize },
    Bucketing(SeError),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::LengthMismatch { se, ranks } => {
                write!(f, "{se} evidence rows vs {ranks} rank rows")
            }
            EvalError::Bucketing(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for EvalError {}

impl From<SeError> for EvalError {
    fn from(e: SeError) -> Self {
        EvalError::Bucketing(e)
    }
}

pub const SE_METRIC_NAMES: [&str; 3] = ["s_rel", "s_ent", "s_tri"];

/// For each evidence metric independently: bucket the queries by evidence
/// value and average the ranks per bucket.
pub fn bucket_report(
    scores: &[SeScores],
    ranks: &[f64],
    mode: BucketMode,
) -> Result<Vec<BucketRow>, EvalError> {
    if scores.len() != ranks.len() {
        return Err(EvalError::LengthMismatch {
            se: scores.len(),
            ranks: ranks.len(),
        });
    }
    let mut rows = Vec::new();
    for (mi, name) in SE_METRIC_NAMES.iter().enumerate() {
        let values: Vec<u64> = scores
            .iter()
            .map(|s| match mi {
                0 => s.s_rel,
                1 => s.s_ent,
                _ => s.s_tri,
            })
            .collect();
        let assignment = bucketize(&values, mode)?;
        let mut sums = alloc::vec![0.0f64; assignment.buckets.len()];
        for (qi, &b) in assignment.assignment.iter().enumerate() {
            sums[b] += ranks[qi];
        }
        for (b, info) in assignment.buckets.iter().enumerate() {
            rows.push(BucketRow {
                metric: name,
                bucket: b,
                info: *info,
                mean_rank: if info.count > 0 {
                    sums[b] / info.count as f64
                } else {
                    0.0
                },
            });
        }
    }
    Ok(rows)
}

/// Score every query of a set against a trained model under the filtered
/// protocol: encode once on the full augmented graph in eval mode, then
/// rank each query's answer among the non-filtered candidates.
pub fn evaluate_queries<F: Scalar>(
    model: &ModelState<F>,
    cfg: &ModelConfig,
    store: &TripleStore,
    queries: &QuerySet,
    eval_batch: usize,
) -> Result<(Vec<RankRecord>, MetricReport), KgError> {
    let n_entities = store.vocab().n_entities();
    let aug = store.aug_graph();
    let edges = EdgeArrays::from_triples(aug.edges(), n_entities);
    let (e_out, r_out) = {
        let mut tape: Tape<F> = Tape::new();
        let vars = model.bind(&mut tape, false);
        let out = encoder::encode(
            &mut tape,
            &vars.encoder,
            &edges,
            &cfg.encoder,
            &mut Phase::<ChaCha8Rng>::Eval,
        );
        (tape.value(out.e_out).clone(), tape.value(out.r_out).clone())
    };
    let mut buffers = model.buffers.clone();
    let mut records = Vec::with_capacity(queries.len());
    let batch = eval_batch.max(1);
    for (chunk_index, chunk) in queries.queries.chunks(batch).enumerate() {
        let mut tape: Tape<F> = Tape::new();
        let e_table = tape.constant(e_out.clone());
        let r_table = tape.constant(r_out.clone());
        let dec_vars = crate::decoder::DecoderVars::bind(&mut tape, &model.decoder, false);
        let heads: Vec<u32> = chunk.iter().map(|q| q.head).collect();
        let rels: Vec<u32> = chunk.iter().map(|q| q.rel).collect();
        let h_rows = tape.gather_rows(e_table, Rc::new(heads));
        let r_rows = tape.gather_rows(r_table, Rc::new(rels));
        let q = decoder::query_embed(
            &mut tape,
            h_rows,
            r_rows,
            &dec_vars,
            &mut buffers,
            &cfg.decoder,
            &mut Phase::<ChaCha8Rng>::Eval,
        );
        let logits = decoder::score_all(&mut tape, q, e_table, dec_vars.score_bias);
        for (row, query) in chunk.iter().enumerate() {
            let mut filter = store.filtered_candidates(query.head, query.rel)?;
            if let Ok(pos) = filter.binary_search(&query.answer) {
                filter.remove(pos);
            }
            let rank = filtered_rank(tape.value(logits).row(row), query.answer, &filter);
            records.push(RankRecord {
                query_index: chunk_index * batch + row,
                query: *query,
                rank,
            });
        }
    }
    let report = MetricReport::from_ranks(records.iter().map(|r| r.rank));
    Ok((records, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn strictly_best_target_ranks_first() {
        let scores = vec![0.1f64, 0.9, 0.3, 0.2];
        assert_eq!(filtered_rank(&scores, 1, &[]), 1.0);
    }

    #[test]
    fn full_tie_gives_midpoint_rank() {
        let scores = vec![0.5f64; 7];
        assert_eq!(filtered_rank(&scores, 3, &[]), 4.0); // (7 + 1) / 2
    }

    #[test]
    fn filtering_removes_competitors() {
        let scores = vec![0.9f64, 0.8, 0.7, 0.1];
        assert_eq!(filtered_rank(&scores, 2, &[]), 3.0);
        assert_eq!(filtered_rank(&scores, 2, &[0]), 2.0);
        assert_eq!(filtered_rank(&scores, 2, &[0, 1]), 1.0);
    }

    #[test]
    #[should_panic(expected = "present in filter set")]
    fn filtered_target_is_fatal() {
        let scores = vec![0.9f64, 0.8];
        filtered_rank(&scores, 1, &[1]);
    }

    #[test]
    fn rank_invariant_under_monotone_transform() {
        let scores = vec![0.3f64, -0.7, 0.3, 1.2, 0.0];
        let transformed: Vec<f64> = scores.iter().map(|&s| (2.0 * s + 1.0).exp()).collect();
        for target in 0..scores.len() as u32 {
            assert_eq!(
                filtered_rank(&scores, target, &[]),
                filtered_rank(&transformed, target, &[])
            );
        }
    }

    #[test]
    fn metric_arithmetic_from_two_ranks() {
        let report = MetricReport::from_ranks([1.0, 4.0]);
        assert!((report.mrr - 0.625).abs() < 1e-12);
        assert!((report.mr - 2.5).abs() < 1e-12);
        assert!((report.hits1 - 0.5).abs() < 1e-12);
        assert!((report.hits3 - 0.5).abs() < 1e-12);
        assert!((report.hits10 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hits_are_monotone() {
        let report = MetricReport::from_ranks([1.0, 2.5, 3.5, 11.0, 7.0]);
        assert!(report.hits1 <= report.hits3 && report.hits3 <= report.hits10);
        assert!(report.mr >= 1.0);
        assert!(report.mrr <= 1.0);
    }

    #[test]
    fn uniform_ranks_give_equal_bucket_means() {
        let scores: Vec<SeScores> = (0..9)
            .map(|i| SeScores {
                s_rel: i as u64,
                s_ent: (i * 2) as u64,
                s_tri: (i % 3) as u64,
            })
            .collect();
        let ranks = vec![5.0; 9];
        let rows = bucket_report(&scores, &ranks, BucketMode::ThreeEven).unwrap();
        for row in rows {
            if row.info.count > 0 {
                assert!((row.mean_rank - 5.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hand_built_fixture_bucket_means() {
        // Nine queries with distinct s_rel 1..9: buckets {1,2,3}, {4,5,6},
        // {7,8,9}. Ranks chosen so the means are 10, 5, 2.
        let scores: Vec<SeScores> = (1..=9)
            .map(|i| SeScores {
                s_rel: i,
                s_ent: 0,
                s_tri: 0,
            })
            .collect();
        let ranks = vec![12.0, 10.0, 8.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0];
        let rows = bucket_report(&scores, &ranks, BucketMode::ThreeEven).unwrap();
        let rel_rows: Vec<&BucketRow> = rows.iter().filter(|r| r.metric == "s_rel").collect();
        assert_eq!(rel_rows[0].mean_rank, 10.0);
        assert_eq!(rel_rows[1].mean_rank, 5.0);
        assert_eq!(rel_rows[2].mean_rank, 2.0);
        assert_eq!((rel_rows[0].info.lo, rel_rows[0].info.hi), (1, 3));
    }

    #[test]
    fn mismatched_inputs_are_fatal() {
        let scores = vec![SeScores::default(); 3];
        let ranks = vec![1.0; 2];
        assert!(matches!(
            bucket_report(&scores, &ranks, BucketMode::ThreeEven),
            Err(EvalError::LengthMismatch { se: 3, ranks: 2 })
        ));
    }
}
