//! Combined encoder + decoder state with a canonical parameter walk used
//! by the optimizer, checkpointing and gradient checking.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::decoder::{DecoderBuffers, DecoderConfig, DecoderParams, DecoderVars};
use crate::encoder::{EncoderConfig, EncoderParams, EncoderVars};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    pub fn validate(&self) {
        assert!(
            self.encoder.dim == self.decoder.dim,
            "encoder dim {} != decoder dim {}",
            self.encoder.dim,
            self.decoder.dim
        );
        self.decoder.validate();
    }
}

/// All learnable parameters plus batch-norm buffers.
#[derive(Debug, Clone)]
pub struct ModelState<F> {
    pub encoder: EncoderParams<F>,
    pub decoder: DecoderParams<F>,
    pub buffers: DecoderBuffers<F>,
}

/// Bound tape handles in canonical order.
pub struct ModelVars {
    pub encoder: EncoderVars,
    pub decoder: DecoderVars,
}

impl ModelVars {
    /// Leaf handles aligned with [`ModelState::params`] order.
    pub fn leaves(&self) -> Vec<Var> {
        let mut out = self.encoder.leaves();
        out.extend(self.decoder.leaves());
        out
    }
}

impl<F: Scalar> ModelState<F> {
    pub fn init<R: Rng>(
        cfg: &ModelConfig,
        n_entities: usize,
        n_relations_aug: usize,
        rng: &mut R,
    ) -> Self {
        cfg.validate();
        ModelState {
            encoder: EncoderParams::init(&cfg.encoder, n_entities, n_relations_aug, rng),
            decoder: DecoderParams::init(&cfg.decoder, n_entities, rng),
            buffers: DecoderBuffers::new(&cfg.decoder),
        }
    }

    pub fn bind(&self, tape: &mut Tape<F>, trainable: bool) -> ModelVars {
        ModelVars {
            encoder: EncoderVars::bind(tape, &self.encoder, trainable),
            decoder: DecoderVars::bind(tape, &self.decoder, trainable),
        }
    }

    /// Named parameters in canonical order.
    pub fn params(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out: Vec<(String, &Tensor<F>)> = Vec::new();
        out.push((String::from("entity_emb"), &self.encoder.entity_emb));
        for l in 0..self.encoder.rel_emb.len() {
            out.push((format!("rel_emb_l{l}"), &self.encoder.rel_emb[l]));
            out.push((format!("w_rel_l{l}"), &self.encoder.w_rel[l]));
            out.push((format!("w_ent_l{l}"), &self.encoder.w_ent[l]));
            out.push((format!("w_tri_l{l}"), &self.encoder.w_tri[l]));
            if l < self.encoder.w_phi.len() {
                out.push((format!("w_phi_l{l}"), &self.encoder.w_phi[l]));
            }
        }
        out.push((String::from("w_out"), &self.encoder.w_out));
        let d = &self.decoder;
        out.push((String::from("conv_w"), &d.conv_w));
        out.push((String::from("conv_b"), &d.conv_b));
        out.push((String::from("fc_w"), &d.fc_w));
        out.push((String::from("fc_b"), &d.fc_b));
        out.push((String::from("score_bias"), &d.score_bias));
        out.push((String::from("bn0_gamma"), &d.bn0_gamma));
        out.push((String::from("bn0_beta"), &d.bn0_beta));
        out.push((String::from("bn1_gamma"), &d.bn1_gamma));
        out.push((String::from("bn1_beta"), &d.bn1_beta));
        out.push((String::from("bn2_gamma"), &d.bn2_gamma));
        out.push((String::from("bn2_beta"), &d.bn2_beta));
        out
    }

    /// Mutable counterpart of [`ModelState::params`]; identical order.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out: Vec<(String, &mut Tensor<F>)> = Vec::new();
        out.push((String::from("entity_emb"), &mut self.encoder.entity_emb));
        let layers = self.encoder.rel_emb.len();
        let has_phi = !self.encoder.w_phi.is_empty();
        let mut rel = self.encoder.rel_emb.iter_mut();
        let mut wr = self.encoder.w_rel.iter_mut();
        let mut we = self.encoder.w_ent.iter_mut();
        let mut wt = self.encoder.w_tri.iter_mut();
        let mut wp = self.encoder.w_phi.iter_mut();
        for l in 0..layers {
            out.push((format!("rel_emb_l{l}"), rel.next().unwrap()));
            out.push((format!("w_rel_l{l}"), wr.next().unwrap()));
            out.push((format!("w_ent_l{l}"), we.next().unwrap()));
            out.push((format!("w_tri_l{l}"), wt.next().unwrap()));
            if has_phi {
                out.push((format!("w_phi_l{l}"), wp.next().unwrap()));
            }
        }
        out.push((String::from("w_out"), &mut self.encoder.w_out));
        let d = &mut self.decoder;
        out.push((String::from("conv_w"), &mut d.conv_w));
        out.push((String::from("conv_b"), &mut d.conv_b));
        out.push((String::from("fc_w"), &mut d.fc_w));
        out.push((String::from("fc_b"), &mut d.fc_b));
        out.push((String::from("score_bias"), &mut d.score_bias));
        out.push((String::from("bn0_gamma"), &mut d.bn0_gamma));
        out.push((String::from("bn0_beta"), &mut d.bn0_beta));
        out.push((String::from("bn1_gamma"), &mut d.bn1_gamma));
        out.push((String::from("bn1_beta"), &mut d.bn1_beta));
        out.push((String::from("bn2_gamma"), &mut d.bn2_gamma));
        out.push((String::from("bn2_beta"), &mut d.bn2_beta));
        out
    }

    /// Named batch-norm buffers (running statistics).
    pub fn buffers(&self) -> Vec<(String, Vec<F>)> {
        let b = &self.buffers;
        alloc::vec![
            (String::from("bn0_mean"), b.bn0.running_mean.clone()),
            (String::from("bn0_var"), b.bn0.running_var.clone()),
            (String::from("bn1_mean"), b.bn1.running_mean.clone()),
            (String::from("bn1_var"), b.bn1.running_var.clone()),
            (String::from("bn2_mean"), b.bn2.running_mean.clone()),
            (String::from("bn2_var"), b.bn2.running_var.clone()),
        ]
    }

    pub fn set_buffer(&mut self, name: &str, data: Vec<F>) -> bool {
        let b = &mut self.buffers;
        let slot = match name {
            "bn0_mean" => &mut b.bn0.running_mean,
            "bn0_var" => &mut b.bn0.running_var,
            "bn1_mean" => &mut b.bn1.running_mean,
            "bn1_var" => &mut b.bn1.running_var,
            "bn2_mean" => &mut b.bn2.running_mean,
            "bn2_var" => &mut b.bn2.running_var,
            _ => return false,
        };
        if slot.len() != data.len() {
            return false;
        }
        *slot = data;
        true
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{Activation, Composition};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(composition: Composition) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                dim: 8,
                layers: 2,
                composition,
                activation: Activation::Tanh,
                message_dropout: 0.1,
            },
            decoder: DecoderConfig {
                dim: 8,
                d1: 2,
                d2: 4,
                channels: 2,
                kernel: 3,
                ..DecoderConfig::default()
            },
        }
    }

    #[test]
    fn leaves_align_with_param_walk() {
        for comp in [Composition::Mult, Composition::Mlp] {
            let cfg = cfg(comp);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut model = ModelState::<f64>::init(&cfg, 6, 4, &mut rng);
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true);
            let leaves = vars.leaves();
            let shapes: Vec<_> = model
                .params()
                .iter()
                .map(|(_, t)| t.shape().to_vec())
                .collect();
            assert_eq!(leaves.len(), shapes.len());
            for (v, s) in leaves.iter().zip(&shapes) {
                assert_eq!(tape.value(*v).shape(), &s[..]);
            }
            let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
            let names_mut: Vec<String> =
                model.params_mut().into_iter().map(|(n, _)| n).collect();
            assert_eq!(names, names_mut);
        }
    }
}
