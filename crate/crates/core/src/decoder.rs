//! ConvE-style decoder: a 2D convolution over the stacked query images
//! builds the query embedding, and a dot product against the entity table
//! plus a per-entity bias scores every candidate at once.

use rand::Rng;

use crate::autodiff::{BnState, Tape, Tensor, Var};
use crate::encoder::Phase;
use crate::scalar::Scalar;

/// Decoder hyperparameters. `d1 * d2` must equal the embedding dimension;
/// head and relation images are stacked vertically into a `2*d1 x d2` map.
#[derive(Debug, Clone, Copy)]
pub struct DecoderConfig {
    pub dim: usize,
    pub d1: usize,
    pub d2: usize,
    pub channels: usize,
    pub kernel: usize,
    pub input_dropout: f64,
    pub feature_dropout: f64,
    pub hidden_dropout: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            dim: 200,
            d1: 10,
            d2: 20,
            channels: 32,
            kernel: 3,
            input_dropout: 0.2,
            feature_dropout: 0.2,
            hidden_dropout: 0.3,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) {
        assert!(
            self.d1 * self.d2 == self.dim,
            "decoder reshape {}x{} does not cover dim {}",
            self.d1,
            self.d2,
            self.dim
        );
        assert!(self.channels > 0 && self.kernel > 0, "decoder needs channels, kernel > 0");
        assert!(
            self.kernel % 2 == 1,
            "extent-preserving zero padding needs an odd kernel, got {}",
            self.kernel
        );
    }

    /// Zero padding that preserves the feature-map extent at stride 1.
    pub fn padding(&self) -> usize {
        (self.kernel - 1) / 2
    }

    /// Flattened feature size entering the projection.
    pub fn flat_features(&self) -> usize {
        self.channels * 2 * self.d1 * self.d2
    }
}

/// Learnable decoder state.
#[derive(Debug, Clone)]
pub struct DecoderParams<F> {
    /// `[channels, 1, k, k]` convolution filters.
    pub conv_w: Tensor<F>,
    pub conv_b: Tensor<F>,
    /// `[flat_features, n]` projection.
    pub fc_w: Tensor<F>,
    pub fc_b: Tensor<F>,
    /// Per-entity score bias, length `|E|`.
    pub score_bias: Tensor<F>,
    pub bn0_gamma: Tensor<F>,
    pub bn0_beta: Tensor<F>,
    pub bn1_gamma: Tensor<F>,
    pub bn1_beta: Tensor<F>,
    pub bn2_gamma: Tensor<F>,
    pub bn2_beta: Tensor<F>,
}

/// Non-learnable batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderBuffers<F> {
    pub bn0: BnState<F>,
    pub bn1: BnState<F>,
    pub bn2: BnState<F>,
}

impl<F: Scalar> DecoderParams<F> {
    pub fn init<R: Rng>(cfg: &DecoderConfig, n_entities: usize, rng: &mut R) -> Self {
        cfg.validate();
        let k = cfg.kernel;
        let fan_k = k * k;
        DecoderParams {
            conv_w: Tensor::xavier_uniform(
                &[cfg.channels, 1, k, k],
                fan_k,
                cfg.channels * fan_k,
                rng,
            ),
            conv_b: Tensor::zeros(&[cfg.channels]),
            fc_w: Tensor::xavier_uniform(
                &[cfg.flat_features(), cfg.dim],
                cfg.flat_features(),
                cfg.dim,
                rng,
            ),
            fc_b: Tensor::zeros(&[cfg.dim]),
            score_bias: Tensor::zeros(&[n_entities]),
            bn0_gamma: Tensor::full(&[1], F::one()),
            bn0_beta: Tensor::zeros(&[1]),
            bn1_gamma: Tensor::full(&[cfg.channels], F::one()),
            bn1_beta: Tensor::zeros(&[cfg.channels]),
            bn2_gamma: Tensor::full(&[cfg.dim], F::one()),
            bn2_beta: Tensor::zeros(&[cfg.dim]),
        }
    }
}

impl<F: Scalar> DecoderBuffers<F> {
    pub fn new(cfg: &DecoderConfig) -> Self {
        DecoderBuffers {
            bn0: BnState::new(1),
            bn1: BnState::new(cfg.channels),
            bn2: BnState::new(cfg.dim),
        }
    }
}

/// Tape handles for bound decoder parameters.
pub struct DecoderVars {
    pub conv_w: Var,
    pub conv_b: Var,
    pub fc_w: Var,
    pub fc_b: Var,
    pub score_bias: Var,
    pub bn0_gamma: Var,
    pub bn0_beta: Var,
    pub bn1_gamma: Var,
    pub bn1_beta: Var,
    pub bn2_gamma: Var,
    pub bn2_beta: Var,
}

impl DecoderVars {
    pub fn bind<F: Scalar>(tape: &mut Tape<F>, p: &DecoderParams<F>, trainable: bool) -> Self {
        DecoderVars {
            conv_w: tape.leaf(p.conv_w.clone(), trainable),
            conv_b: tape.leaf(p.conv_b.clone(), trainable),
            fc_w: tape.leaf(p.fc_w.clone(), trainable),
            fc_b: tape.leaf(p.fc_b.clone(), trainable),
            score_bias: tape.leaf(p.score_bias.clone(), trainable),
            bn0_gamma: tape.leaf(p.bn0_gamma.clone(), trainable),
            bn0_beta: tape.leaf(p.bn0_beta.clone(), trainable),
            bn1_gamma: tape.leaf(p.bn1_gamma.clone(), trainable),
            bn1_beta: tape.leaf(p.bn1_beta.clone(), trainable),
            bn2_gamma: tape.leaf(p.bn2_gamma.clone(), trainable),
            bn2_beta: tape.leaf(p.bn2_beta.clone(), trainable),
        }
    }

    pub fn leaves(&self) -> alloc::vec::Vec<Var> {
        alloc::vec![
            self.conv_w,
            self.conv_b,
            self.fc_w,
            self.fc_b,
            self.score_bias,
            self.bn0_gamma,
            self.bn0_beta,
            self.bn1_gamma,
            self.bn1_beta,
            self.bn2_gamma,
            self.bn2_beta,
        ]
    }
}

/// Build query embeddings for a batch: stack the head and relation images,
/// convolve, and project back to the embedding dimension.
///
/// `h` and `r` are `[B, n]`; the result is `[B, n]`.
pub fn query_embed<F: Scalar, R: Rng>(
    tape: &mut Tape<F>,
    h: Var,
    r: Var,
    vars: &DecoderVars,
    buffers: &mut DecoderBuffers<F>,
    cfg: &DecoderConfig,
    phase: &mut Phase<'_, R>,
) -> Var {
    let batch = tape.value(h).rows();
    let training = phase.is_training();
    let stacked = tape.concat_cols(&[h, r]);
    let image = tape.reshape(stacked, &[batch, 1, 2 * cfg.d1, cfg.d2]);
    let x = tape.batch_norm(
        image,
        vars.bn0_gamma,
        vars.bn0_beta,
        &mut buffers.bn0,
        training,
        cfg.bn_momentum,
        cfg.bn_eps,
    );
    let x = phase.dropout(tape, x, cfg.input_dropout);
    let x = tape.conv2d(x, vars.conv_w, vars.conv_b, cfg.padding());
    let x = tape.batch_norm(
        x,
        vars.bn1_gamma,
        vars.bn1_beta,
        &mut buffers.bn1,
        training,
        cfg.bn_momentum,
        cfg.bn_eps,
    );
    let x = tape.relu(x);
    let x = phase.dropout(tape, x, cfg.feature_dropout);
    let flat = tape.reshape(x, &[batch, cfg.flat_features()]);
    let x = tape.matmul(flat, vars.fc_w);
    let x = tape.add_row_bias(x, vars.fc_b);
    let x = phase.dropout(tape, x, cfg.hidden_dropout);
    let x = tape.batch_norm(
        x,
        vars.bn2_gamma,
        vars.bn2_beta,
        &mut buffers.bn2,
        training,
        cfg.bn_momentum,
        cfg.bn_eps,
    );
    tape.relu(x)
}

/// Logits of every entity for each query row: `q . e_t + bias[t]`.
/// Ranking may use these directly; matching probabilities are their
/// sigmoid.
pub fn score_all<F: Scalar>(tape: &mut Tape<F>, q: Var, entity_table: Var, bias: Var) -> Var {
    let logits = tape.matmul_nt(q, entity_table);
    tape.add_row_bias(logits, bias)
}
