//! Multi-layer attention aggregation over the inverse-augmented train graph.
//!
//! Each layer builds three evidence representations per entity — from
//! neighbor relations, neighbor entities, and fused neighbor/relation
//! features — each as an attention-weighted sum over the incoming edges,
//! and adds them onto the entity embedding as a residual. Relations get a
//! fresh table per layer; the output relation embedding is a learned
//! linear blend of all per-layer tables.

use alloc::rc::Rc;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{ComposeMode, Tape, Tensor, Var};
use crate::kg::Triple;
use crate::scalar::Scalar;

/// Nonlinearity applied to branch outputs (and the MLP composition).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }

    fn apply<F: Scalar>(self, tape: &mut Tape<F>, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
        }
    }
}

/// Composition fusing a neighbor entity with its connecting relation in
/// the triple-level branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Composition {
    Add,
    Mult,
    Mlp,
}

impl Composition {
    pub fn as_str(self) -> &'static str {
        match self {
            Composition::Add => "add",
            Composition::Mult => "mult",
            Composition::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "add" => Some(Composition::Add),
            "mult" => Some(Composition::Mult),
            "mlp" => Some(Composition::Mlp),
            _ => None,
        }
    }
}

/// The three evidence branches of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Rel,
    Ent,
    Tri,
}

/// Encoder hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct EncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub composition: Composition,
    pub activation: Activation,
    /// Dropout on each branch output during training.
    pub message_dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 200,
            layers: 2,
            composition: Composition::Mult,
            activation: Activation::Tanh,
            message_dropout: 0.1,
        }
    }
}

/// Learnable encoder state. All maps are bias-free.
#[derive(Debug, Clone)]
pub struct EncoderParams<F> {
    /// `|E| x n`, the layer-1 entity embedding.
    pub entity_emb: Tensor<F>,
    /// Per layer: `2|R| x n` relation table.
    pub rel_emb: Vec<Tensor<F>>,
    /// Per layer: `n x n` per-branch transforms.
    pub w_rel: Vec<Tensor<F>>,
    pub w_ent: Vec<Tensor<F>>,
    pub w_tri: Vec<Tensor<F>>,
    /// Per layer: `2n x n` MLP composition map (empty unless `Mlp`).
    pub w_phi: Vec<Tensor<F>>,
    /// `K*n x n` output blend of the per-layer relation tables.
    pub w_out: Tensor<F>,
}

impl<F: Scalar> EncoderParams<F> {
    pub fn init<R: Rng>(
        cfg: &EncoderConfig,
        n_entities: usize,
        n_relations_aug: usize,
        rng: &mut R,
    ) -> Self {
        let n = cfg.dim;
        let k = cfg.layers;
        assert!(n > 0 && k >= 1, "encoder needs dim > 0 and layers >= 1");
        let square = |rng: &mut R| Tensor::xavier_uniform(&[n, n], n, n, rng);
        EncoderParams {
            entity_emb: Tensor::xavier_uniform(&[n_entities, n], n_entities, n, rng),
            rel_emb: (0..k)
                .map(|_| Tensor::xavier_uniform(&[n_relations_aug, n], n_relations_aug, n, rng))
                .collect(),
            w_rel: (0..k).map(|_| square(rng)).collect(),
            w_ent: (0..k).map(|_| square(rng)).collect(),
            w_tri: (0..k).map(|_| square(rng)).collect(),
            w_phi: match cfg.composition {
                Composition::Mlp => (0..k)
                    .map(|_| Tensor::xavier_uniform(&[2 * n, n], 2 * n, n, rng))
                    .collect(),
                _ => Vec::new(),
            },
            w_out: Tensor::xavier_uniform(&[k * n, n], k * n, n, rng),
        }
    }
}

/// Tape handles for bound encoder parameters.
pub struct EncoderVars {
    pub entity_emb: Var,
    pub rel_emb: Vec<Var>,
    pub w_rel: Vec<Var>,
    pub w_ent: Vec<Var>,
    pub w_tri: Vec<Var>,
    pub w_phi: Vec<Var>,
    pub w_out: Var,
}

impl EncoderVars {
    pub fn bind<F: Scalar>(tape: &mut Tape<F>, p: &EncoderParams<F>, trainable: bool) -> Self {
        EncoderVars {
            entity_emb: tape.leaf(p.entity_emb.clone(), trainable),
            rel_emb: p.rel_emb.iter().map(|t| tape.leaf(t.clone(), trainable)).collect(),
            w_rel: p.w_rel.iter().map(|t| tape.leaf(t.clone(), trainable)).collect(),
            w_ent: p.w_ent.iter().map(|t| tape.leaf(t.clone(), trainable)).collect(),
            w_tri: p.w_tri.iter().map(|t| tape.leaf(t.clone(), trainable)).collect(),
            w_phi: p.w_phi.iter().map(|t| tape.leaf(t.clone(), trainable)).collect(),
            w_out: tape.leaf(p.w_out.clone(), trainable),
        }
    }

    /// Leaf handles in the canonical parameter order (see `model`).
    pub fn leaves(&self) -> Vec<Var> {
        let mut out = alloc::vec![self.entity_emb];
        for l in 0..self.rel_emb.len() {
            out.push(self.rel_emb[l]);
            out.push(self.w_rel[l]);
            out.push(self.w_ent[l]);
            out.push(self.w_tri[l]);
            if l < self.w_phi.len() {
                out.push(self.w_phi[l]);
            }
        }
        out.push(self.w_out);
        out
    }
}

/// Aggregation edge list in struct-of-arrays form, sorted by destination
/// so attention softmax can run over contiguous segments. The stable
/// counting sort keeps construction deterministic.
#[derive(Debug, Clone)]
pub struct EdgeArrays {
    pub src: Rc<Vec<u32>>,
    pub rel: Rc<Vec<u32>>,
    pub dst: Rc<Vec<u32>>,
    pub n_entities: usize,
}

impl EdgeArrays {
    pub fn from_triples<'a>(
        edges: impl IntoIterator<Item = &'a Triple>,
        n_entities: usize,
    ) -> Self {
        let edges: Vec<&Triple> = edges.into_iter().collect();
        let mut counts = alloc::vec![0usize; n_entities + 1];
        for e in &edges {
            counts[e.tail as usize + 1] += 1;
        }
        for i in 0..n_entities {
            counts[i + 1] += counts[i];
        }
        let m = edges.len();
        let (mut src, mut rel, mut dst) = (
            alloc::vec![0u32; m],
            alloc::vec![0u32; m],
            alloc::vec![0u32; m],
        );
        for e in &edges {
            let slot = counts[e.tail as usize];
            counts[e.tail as usize] += 1;
            src[slot] = e.head;
            rel[slot] = e.rel;
            dst[slot] = e.tail;
        }
        EdgeArrays {
            src: Rc::new(src),
            rel: Rc::new(rel),
            dst: Rc::new(dst),
            n_entities,
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Iterate edges as (src, rel, dst).
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32, u32)> + '_ {
        self.src
            .iter()
            .zip(self.rel.iter())
            .zip(self.dst.iter())
            .map(|((&s, &r), &d)| (s, r, d))
    }
}

/// Dropout source during training; `Eval` disables dropout and batch-stat
/// updates everywhere downstream.
pub enum Phase<'a, R> {
    Train(&'a mut R),
    Eval,
}

impl<'a, R: Rng> Phase<'a, R> {
    pub fn is_training(&self) -> bool {
        matches!(self, Phase::Train(_))
    }

    pub fn dropout<F: Scalar>(&mut self, tape: &mut Tape<F>, x: Var, p: f64) -> Var {
        match self {
            Phase::Train(rng) if p > 0.0 => tape.dropout(x, p, rng),
            _ => x,
        }
    }
}

/// One branch's aggregation: attention weights over each destination's
/// incoming edges and the transformed, activated sum of weighted features.
/// Entities with no incoming edges get the zero vector.
///
/// Returns `(s, alpha)` where `s` is `|E| x n` and `alpha` is per-edge.
#[allow(clippy::too_many_arguments)]
pub fn aggregate_branch<F: Scalar>(
    tape: &mut Tape<F>,
    branch: Branch,
    e: Var,
    r: Var,
    edges: &EdgeArrays,
    w: Var,
    w_phi: Option<Var>,
    cfg: &EncoderConfig,
) -> (Var, Var) {
    let rows = edges.n_entities;
    let (keys, feat) = match branch {
        Branch::Rel => (
            tape.edge_dot(r, Some(edges.rel.clone()), e, Some(edges.dst.clone())),
            BranchFeature::Table {
                table: r,
                idx: edges.rel.clone(),
            },
        ),
        Branch::Ent => (
            tape.edge_dot(e, Some(edges.src.clone()), e, Some(edges.dst.clone())),
            BranchFeature::Table {
                table: e,
                idx: edges.src.clone(),
            },
        ),
        Branch::Tri => match cfg.composition {
            Composition::Add | Composition::Mult => {
                let mode = if cfg.composition == Composition::Add {
                    ComposeMode::Add
                } else {
                    ComposeMode::Mult
                };
                let keys = tape.compose_dot(
                    e,
                    edges.src.clone(),
                    r,
                    edges.rel.clone(),
                    e,
                    edges.dst.clone(),
                    mode,
                );
                (keys, BranchFeature::Composed { mode })
            }
            Composition::Mlp => {
                let cat = tape.edge_concat(e, edges.src.clone(), r, edges.rel.clone());
                let w_phi = w_phi.expect("mlp composition requires w_phi");
                let lin = tape.matmul(cat, w_phi);
                let phi = cfg.activation.apply(tape, lin);
                let keys = tape.edge_dot(phi, None, e, Some(edges.dst.clone()));
                (keys, BranchFeature::PerEdge { phi })
            }
        },
    };
    let alpha = tape.segment_softmax(keys, edges.dst.clone());
    let agg = match feat {
        BranchFeature::Table { table, idx } => {
            tape.attn_scatter(table, Some(idx), alpha, edges.dst.clone(), rows)
        }
        BranchFeature::PerEdge { phi } => {
            tape.attn_scatter(phi, None, alpha, edges.dst.clone(), rows)
        }
        BranchFeature::Composed { mode } => tape.compose_attn_scatter(
            e,
            edges.src.clone(),
            r,
            edges.rel.clone(),
            alpha,
            edges.dst.clone(),
            rows,
            mode,
        ),
    };
    let lin = tape.matmul(agg, w);
    let s = cfg.activation.apply(tape, lin);
    (s, alpha)
}

enum BranchFeature {
    Table { table: Var, idx: Rc<Vec<u32>> },
    PerEdge { phi: Var },
    Composed { mode: ComposeMode },
}

/// Attention weights cached per layer for inspection.
pub struct LayerAttention {
    pub rel: Var,
    pub ent: Var,
    pub tri: Var,
}

/// One residual aggregation layer: `e' = e + s_rel + s_ent + s_tri`.
pub fn layer_forward<F: Scalar, R: Rng>(
    tape: &mut Tape<F>,
    layer: usize,
    e: Var,
    vars: &EncoderVars,
    edges: &EdgeArrays,
    cfg: &EncoderConfig,
    phase: &mut Phase<'_, R>,
) -> (Var, LayerAttention) {
    let r = vars.rel_emb[layer];
    let w_phi = vars.w_phi.get(layer).copied();
    let (s_rel, a_rel) =
        aggregate_branch(tape, Branch::Rel, e, r, edges, vars.w_rel[layer], None, cfg);
    let (s_ent, a_ent) =
        aggregate_branch(tape, Branch::Ent, e, r, edges, vars.w_ent[layer], None, cfg);
    let (s_tri, a_tri) =
        aggregate_branch(tape, Branch::Tri, e, r, edges, vars.w_tri[layer], w_phi, cfg);
    let s_rel = phase.dropout(tape, s_rel, cfg.message_dropout);
    let s_ent = phase.dropout(tape, s_ent, cfg.message_dropout);
    let s_tri = phase.dropout(tape, s_tri, cfg.message_dropout);
    let sum = tape.add(s_rel, s_ent);
    let sum = tape.add(sum, s_tri);
    let e_next = tape.add(e, sum);
    (
        e_next,
        LayerAttention {
            rel: a_rel,
            ent: a_ent,
            tri: a_tri,
        },
    )
}

/// Encoder output handles plus cached attention per layer.
pub struct EncodeOutput {
    /// `|E| x n` output entity table.
    pub e_out: Var,
    /// `2|R| x n` output relation table.
    pub r_out: Var,
    pub attention: Vec<LayerAttention>,
}

/// Run all layers and assemble output embeddings.
pub fn encode<F: Scalar, R: Rng>(
    tape: &mut Tape<F>,
    vars: &EncoderVars,
    edges: &EdgeArrays,
    cfg: &EncoderConfig,
    phase: &mut Phase<'_, R>,
) -> EncodeOutput {
    let mut e = vars.entity_emb;
    let mut attention = Vec::with_capacity(cfg.layers);
    for layer in 0..cfg.layers {
        let (e_next, attn) = layer_forward(tape, layer, e, vars, edges, cfg, phase);
        e = e_next;
        attention.push(attn);
    }
    let r_cat = if cfg.layers == 1 {
        vars.rel_emb[0]
    } else {
        tape.concat_cols(&vars.rel_emb)
    };
    let r_out = tape.matmul(r_cat, vars.w_out);
    EncodeOutput {
        e_out: e,
        r_out,
        attention,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_edges() -> (Vec<Triple>, usize) {
        let edges = vec![
            Triple::new(0, 0, 1),
            Triple::new(2, 1, 1),
            Triple::new(1, 0, 3),
            Triple::new(3, 2, 0),
            Triple::new(4, 1, 0),
        ];
        (edges, 5)
    }

    fn setup(composition: Composition) -> (EncoderConfig, EncoderParams<f64>, EdgeArrays) {
        let cfg = EncoderConfig {
            dim: 8,
            layers: 2,
            composition,
            activation: Activation::Tanh,
            message_dropout: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = EncoderParams::init(&cfg, 5, 6, &mut rng);
        let (edges, n) = toy_edges();
        (cfg, params, EdgeArrays::from_triples(&edges, n))
    }

    #[test]
    fn attention_sums_to_one_per_entity() {
        for comp in [Composition::Add, Composition::Mult, Composition::Mlp] {
            let (cfg, params, edges) = setup(comp);
            let mut tape = Tape::new();
            let vars = EncoderVars::bind(&mut tape, &params, false);
            let out = encode(&mut tape, &vars, &edges, &cfg, &mut Phase::<ChaCha8Rng>::Eval);
            for layer in &out.attention {
                for alpha in [layer.rel, layer.ent, layer.tri] {
                    let mut sums = vec![0.0f64; edges.n_entities];
                    for (i, &d) in edges.dst.iter().enumerate() {
                        sums[d as usize] += tape.value(alpha).data()[i];
                    }
                    for (e, &s) in sums.iter().enumerate() {
                        let deg = edges.dst.iter().filter(|&&d| d as usize == e).count();
                        if deg > 0 {
                            assert!((s - 1.0).abs() < 1e-6, "entity {e} attn sum {s}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn single_neighbor_gets_full_attention() {
        let (cfg, params, _) = setup(Composition::Mult);
        let edges = EdgeArrays::from_triples(&[Triple::new(0, 0, 1)], 5);
        let mut tape = Tape::new();
        let vars = EncoderVars::bind(&mut tape, &params, false);
        let out = encode(&mut tape, &vars, &edges, &cfg, &mut Phase::<ChaCha8Rng>::Eval);
        for a in [out.attention[0].rel, out.attention[0].ent, out.attention[0].tri] {
            assert_eq!(tape.value(a).data(), &[1.0]);
        }
    }

    #[test]
    fn equal_keys_split_attention_evenly() {
        let (cfg, params, _) = setup(Composition::Mult);
        let edges = EdgeArrays::from_triples(&[Triple::new(0, 0, 1), Triple::new(0, 0, 1)], 5);
        let mut tape = Tape::new();
        let vars = EncoderVars::bind(&mut tape, &params, false);
        let out = encode(&mut tape, &vars, &edges, &cfg, &mut Phase::<ChaCha8Rng>::Eval);
        for a in [out.attention[0].rel, out.attention[0].ent, out.attention[0].tri] {
            assert_eq!(tape.value(a).data(), &[0.5, 0.5]);
        }
    }

    #[test]
    fn isolated_entities_keep_their_embedding() {
        let (cfg, params, edges) = setup(Composition::Mult);
        // Entity 4 has no incoming edges.
        assert!(edges.dst.iter().all(|&d| d != 4));
        let mut tape = Tape::new();
        let vars = EncoderVars::bind(&mut tape, &params, false);
        let out = encode(&mut tape, &vars, &edges, &cfg, &mut Phase::<ChaCha8Rng>::Eval);
        assert_eq!(
            tape.value(out.e_out).row(4),
            &params.entity_emb.row(4)[..],
            "isolated entity drifted"
        );
    }

    #[test]
    fn empty_graph_is_residual_identity() {
        let (cfg, params, _) = setup(Composition::Mult);
        let edges = EdgeArrays::from_triples(&[], 5);
        let mut tape = Tape::new();
        let vars = EncoderVars::bind(&mut tape, &params, false);
        let out = encode(&mut tape, &vars, &edges, &cfg, &mut Phase::<ChaCha8Rng>::Eval);
        assert_eq!(tape.value(out.e_out), &params.entity_emb);
    }

    #[test]
    fn neighbor_permutation_leaves_output_unchanged() {
        let (cfg, params, edges) = setup(Composition::Mult);
        let mut shuffled: Vec<Triple> =
            edges.iter().map(|(s, r, d)| Triple::new(s, r, d)).collect();
        shuffled.reverse();
        let edges2 = EdgeArrays::from_triples(&shuffled, edges.n_entities);
        let mut t1 = Tape::new();
        let v1 = EncoderVars::bind(&mut t1, &params, false);
        let o1 = encode(&mut t1, &v1, &edges, &cfg, &mut Phase::<ChaCha8Rng>::Eval);
        let mut t2 = Tape::new();
        let v2 = EncoderVars::bind(&mut t2, &params, false);
        let o2 = encode(&mut t2, &v2, &edges2, &cfg, &mut Phase::<ChaCha8Rng>::Eval);
        for (a, b) in t1
            .value(o1.e_out)
            .data()
            .iter()
            .zip(t2.value(o2.e_out).data())
        {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn identity_w_out_reproduces_relation_table_for_one_layer() {
        let cfg = EncoderConfig {
            dim: 8,
            layers: 1,
            composition: Composition::Mult,
            activation: Activation::Tanh,
            message_dropout: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = EncoderParams::init(&cfg, 5, 6, &mut rng);
        let n = cfg.dim;
        let mut eye = Tensor::zeros(&[n, n]);
        for i in 0..n {
            eye.data_mut()[i * n + i] = 1.0;
        }
        params.w_out = eye;
        let (edges, ne) = toy_edges();
        let edges = EdgeArrays::from_triples(&edges, ne);
        let mut tape = Tape::new();
        let vars = EncoderVars::bind(&mut tape, &params, false);
        let out = encode(&mut tape, &vars, &edges, &cfg, &mut Phase::<ChaCha8Rng>::Eval);
        assert_eq!(tape.value(out.r_out), &params.rel_emb[0]);
    }

    #[test]
    fn output_shapes_match_contract() {
        let (cfg, params, edges) = setup(Composition::Mult);
        let mut tape = Tape::new();
        let vars = EncoderVars::bind(&mut tape, &params, false);
        let out = encode(&mut tape, &vars, &edges, &cfg, &mut Phase::<ChaCha8Rng>::Eval);
        assert_eq!(tape.value(out.e_out).shape(), &[5, 8]);
        assert_eq!(tape.value(out.r_out).shape(), &[6, 8]);
    }
}
