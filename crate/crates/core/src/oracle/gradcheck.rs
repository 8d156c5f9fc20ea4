//! Finite-difference gradient checking for every tape primitive and for
//! the composed encoder + decoder forward pass.
//!
//! Each case rebuilds its graph from scratch per evaluation, so the checked
//! function is exactly "inputs in, scalar loss out"; the analytic gradients
//! from one reverse sweep are compared coordinate by coordinate against
//! central differences (64-bit, step 1e-5).

use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::decoder::{self, DecoderConfig};
use crate::encoder::{self, Activation, Composition, EdgeArrays, EncoderConfig, Phase};
use crate::kg::Triple;
use crate::model::{ModelConfig, ModelState};
use crate::training;

use super::{finite_difference, rel_error};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

/// Outcome of one checked case.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub probes: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < REL_TOL
    }
}

/// A differentiable case: fixed auxiliary data plus a graph builder that
/// maps bound input leaves to a scalar loss.
struct Case {
    name: String,
    inputs: Vec<Tensor<f64>>,
    build: alloc::boxed::Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>,
}

fn run_case(case: &Case) -> CheckResult {
    // Analytic gradients from one reverse sweep.
    let mut tape = Tape::new();
    let vars: Vec<Var> = case
        .inputs
        .iter()
        .map(|t| tape.leaf(t.clone(), true))
        .collect();
    let loss = (case.build)(&mut tape, &vars);
    let mut grads = tape.backward(loss);
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(&case.inputs)
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut max_err = 0.0f64;
    let mut probes = 0usize;
    for which in 0..case.inputs.len() {
        let f = |x: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let vars: Vec<Var> = case
                .inputs
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    if i == which {
                        tape.leaf(Tensor::new(t.shape().to_vec(), x.to_vec()), false)
                    } else {
                        tape.leaf(t.clone(), false)
                    }
                })
                .collect();
            let loss = (case.build)(&mut tape, &vars);
            tape.value(loss).item()
        };
        let numeric = finite_difference(f, case.inputs[which].data(), FD_STEP);
        for (&a, &n) in analytic[which].data().iter().zip(&numeric) {
            max_err = max_err.max(rel_error(a, n));
            probes += 1;
        }
    }
    CheckResult {
        name: case.name.clone(),
        max_rel_err: max_err,
        probes,
    }
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::uniform(shape, -1.5, 1.5, rng)
}

/// Random values bounded away from zero, for kinked ops like relu.
fn tensor_off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let t = tensor(rng, shape);
    let data = t
        .data()
        .iter()
        .map(|&v| if v.abs() < 0.05 { v + 0.1 } else { v })
        .collect();
    Tensor::new(t.shape().to_vec(), data)
}

fn idx(rng: &mut ChaCha8Rng, len: usize, upper: u32) -> Rc<Vec<u32>> {
    Rc::new((0..len).map(|_| rng.gen_range(0..upper)).collect())
}

fn sorted_idx(rng: &mut ChaCha8Rng, len: usize, upper: u32) -> Rc<Vec<u32>> {
    let mut v: Vec<u32> = (0..len).map(|_| rng.gen_range(0..upper)).collect();
    v.sort_unstable();
    Rc::new(v)
}

/// Probe a non-scalar output with a fixed random weighting.
fn probed(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Var + 'static,
) -> alloc::boxed::Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var> {
    let w = tensor(rng, shape);
    alloc::boxed::Box::new(move |tape, vars| {
        let y = build(tape, vars);
        let wv = tape.constant(w.clone());
        let p = tape.mul(y, wv);
        tape.sum(p)
    })
}

pub const PRIMITIVES: [&str; 25] = [
    "add",
    "mul",
    "scale",
    "matmul",
    "matmul_nt",
    "reshape",
    "concat_cols",
    "sum",
    "gather_rows",
    "scatter_add_rows",
    "add_row_bias",
    "edge_concat",
    "edge_dot",
    "edge_dot_identity",
    "softmax",
    "segment_softmax",
    "attn_scatter",
    "compose_dot",
    "compose_attn_scatter",
    "sigmoid",
    "tanh",
    "relu",
    "conv2d",
    "batch_norm",
    "dropout",
];

#[allow(clippy::too_many_lines)]
fn make_case(name: &str, rng: &mut ChaCha8Rng) -> Case {
    let case = |inputs: Vec<Tensor<f64>>,
                build: alloc::boxed::Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>| Case {
        name: String::from(name),
        inputs,
        build,
    };
    match name {
        "add" => {
            let inputs = alloc::vec![tensor(rng, &[3, 4]), tensor(rng, &[3, 4])];
            case(inputs, probed(rng, &[3, 4], |t, v| t.add(v[0], v[1])))
        }
        "mul" => {
            let inputs = alloc::vec![tensor(rng, &[3, 4]), tensor(rng, &[3, 4])];
            case(inputs, probed(rng, &[3, 4], |t, v| t.mul(v[0], v[1])))
        }
        "scale" => {
            let inputs = alloc::vec![tensor(rng, &[7])];
            case(inputs, probed(rng, &[7], |t, v| t.scale(v[0], -0.7)))
        }
        "matmul" => {
            let inputs = alloc::vec![tensor(rng, &[3, 4]), tensor(rng, &[4, 2])];
            case(inputs, probed(rng, &[3, 2], |t, v| t.matmul(v[0], v[1])))
        }
        "matmul_nt" => {
            let inputs = alloc::vec![tensor(rng, &[3, 4]), tensor(rng, &[2, 4])];
            case(inputs, probed(rng, &[3, 2], |t, v| t.matmul_nt(v[0], v[1])))
        }
        "reshape" => {
            let inputs = alloc::vec![tensor(rng, &[2, 6])];
            case(
                inputs,
                probed(rng, &[3, 4], |t, v| t.reshape(v[0], &[3, 4])),
            )
        }
        "concat_cols" => {
            let inputs = alloc::vec![tensor(rng, &[3, 2]), tensor(rng, &[3, 4])];
            case(
                inputs,
                probed(rng, &[3, 6], |t, v| t.concat_cols(&[v[0], v[1]])),
            )
        }
        "sum" => {
            let inputs = alloc::vec![tensor(rng, &[8])];
            case(inputs, alloc::boxed::Box::new(|t, v| t.sum(v[0])))
        }
        "gather_rows" => {
            let rows = idx(rng, 6, 4);
            let inputs = alloc::vec![tensor(rng, &[4, 3])];
            case(
                inputs,
                probed(rng, &[6, 3], move |t, v| t.gather_rows(v[0], rows.clone())),
            )
        }
        "scatter_add_rows" => {
            let rows = idx(rng, 6, 4);
            let inputs = alloc::vec![tensor(rng, &[6, 3])];
            case(
                inputs,
                probed(rng, &[4, 3], move |t, v| {
                    t.scatter_add_rows(v[0], rows.clone(), 4)
                }),
            )
        }
        "add_row_bias" => {
            let inputs = alloc::vec![tensor(rng, &[3, 4]), tensor(rng, &[4])];
            case(
                inputs,
                probed(rng, &[3, 4], |t, v| t.add_row_bias(v[0], v[1])),
            )
        }
        "edge_concat" => {
            let (a_idx, b_idx) = (idx(rng, 5, 4), idx(rng, 5, 3));
            let inputs = alloc::vec![tensor(rng, &[4, 3]), tensor(rng, &[3, 3])];
            case(
                inputs,
                probed(rng, &[5, 6], move |t, v| {
                    t.edge_concat(v[0], a_idx.clone(), v[1], b_idx.clone())
                }),
            )
        }
        "edge_dot" => {
            let (a_idx, b_idx) = (idx(rng, 5, 4), idx(rng, 5, 3));
            let inputs = alloc::vec![tensor(rng, &[4, 3]), tensor(rng, &[3, 3])];
            case(
                inputs,
                probed(rng, &[5], move |t, v| {
                    t.edge_dot(v[0], Some(a_idx.clone()), v[1], Some(b_idx.clone()))
                }),
            )
        }
        "edge_dot_identity" => {
            let b_idx = idx(rng, 5, 3);
            let inputs = alloc::vec![tensor(rng, &[5, 3]), tensor(rng, &[3, 3])];
            case(
                inputs,
                probed(rng, &[5], move |t, v| {
                    t.edge_dot(v[0], None, v[1], Some(b_idx.clone()))
                }),
            )
        }
        "softmax" => {
            let inputs = alloc::vec![tensor(rng, &[7])];
            case(inputs, probed(rng, &[7], |t, v| t.softmax(v[0])))
        }
        "segment_softmax" => {
            let seg = sorted_idx(rng, 8, 3);
            let inputs = alloc::vec![tensor(rng, &[8])];
            case(
                inputs,
                probed(rng, &[8], move |t, v| t.segment_softmax(v[0], seg.clone())),
            )
        }
        "attn_scatter" => {
            let fi = idx(rng, 6, 4);
            let dst = sorted_idx(rng, 6, 5);
            let inputs = alloc::vec![tensor(rng, &[4, 3]), tensor(rng, &[6])];
            case(
                inputs,
                probed(rng, &[5, 3], move |t, v| {
                    t.attn_scatter(v[0], Some(fi.clone()), v[1], dst.clone(), 5)
                }),
            )
        }
        "compose_dot" => {
            let (src, rl, dst) = (idx(rng, 6, 4), idx(rng, 6, 3), idx(rng, 6, 4));
            let inputs = alloc::vec![tensor(rng, &[4, 3]), tensor(rng, &[3, 3])];
            let mode = if rng.gen::<bool>() {
                crate::autodiff::ComposeMode::Add
            } else {
                crate::autodiff::ComposeMode::Mult
            };
            case(
                inputs,
                probed(rng, &[6], move |t, v| {
                    t.compose_dot(
                        v[0],
                        src.clone(),
                        v[1],
                        rl.clone(),
                        v[0],
                        dst.clone(),
                        mode,
                    )
                }),
            )
        }
        "compose_attn_scatter" => {
            let (src, rl, dst) = (idx(rng, 6, 4), idx(rng, 6, 3), idx(rng, 6, 4));
            let inputs = alloc::vec![
                tensor(rng, &[4, 3]),
                tensor(rng, &[3, 3]),
                tensor(rng, &[6])
            ];
            let mode = if rng.gen::<bool>() {
                crate::autodiff::ComposeMode::Add
            } else {
                crate::autodiff::ComposeMode::Mult
            };
            case(
                inputs,
                probed(rng, &[4, 3], move |t, v| {
                    t.compose_attn_scatter(
                        v[0],
                        src.clone(),
                        v[1],
                        rl.clone(),
                        v[2],
                        dst.clone(),
                        4,
                        mode,
                    )
                }),
            )
        }
        "sigmoid" => {
            let inputs = alloc::vec![tensor(rng, &[3, 4])];
            case(inputs, probed(rng, &[3, 4], |t, v| t.sigmoid(v[0])))
        }
        "tanh" => {
            let inputs = alloc::vec![tensor(rng, &[3, 4])];
            case(inputs, probed(rng, &[3, 4], |t, v| t.tanh(v[0])))
        }
        "relu" => {
            let inputs = alloc::vec![tensor_off_zero(rng, &[3, 4])];
            case(inputs, probed(rng, &[3, 4], |t, v| t.relu(v[0])))
        }
        "conv2d" => {
            let inputs = alloc::vec![
                tensor(rng, &[2, 2, 4, 5]),
                tensor(rng, &[3, 2, 3, 3]),
                tensor(rng, &[3])
            ];
            case(
                inputs,
                probed(rng, &[2, 3, 4, 5], |t, v| t.conv2d(v[0], v[1], v[2], 1)),
            )
        }
        "batch_norm" => {
            // Train mode: batch statistics enter the gradient.
            let inputs = alloc::vec![
                tensor(rng, &[5, 3]),
                tensor(rng, &[3]),
                tensor(rng, &[3])
            ];
            case(
                inputs,
                probed(rng, &[5, 3], |t, v| {
                    let mut state = crate::autodiff::BnState::new(3);
                    t.batch_norm(v[0], v[1], v[2], &mut state, true, 0.1, 1e-5)
                }),
            )
        }
        "dropout" => {
            let mask_seed = rng.gen::<u64>();
            let inputs = alloc::vec![tensor(rng, &[4, 5])];
            case(
                inputs,
                probed(rng, &[4, 5], move |t, v| {
                    let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
                    t.dropout(v[0], 0.3, &mut mask_rng)
                }),
            )
        }
        other => panic!("unknown primitive case '{other}'"),
    }
}

/// Check one primitive over `instances` random instantiations.
pub fn check_primitive(name: &str, seed: u64, instances: usize) -> CheckResult {
    let mut worst = CheckResult {
        name: String::from(name),
        max_rel_err: 0.0,
        probes: 0,
    };
    for k in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9e3779b97f4a7c15));
        let case = make_case(name, &mut rng);
        let r = run_case(&case);
        worst.max_rel_err = worst.max_rel_err.max(r.max_rel_err);
        worst.probes += r.probes;
    }
    worst
}

/// The eval-mode batch-norm variant, checked separately because it reads
/// running statistics instead of batch statistics.
pub fn check_batch_norm_eval(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let running_mean: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() - 0.5).collect();
    let running_var: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() + 0.5).collect();
    let inputs = alloc::vec![
        tensor(&mut rng, &[5, 3]),
        tensor(&mut rng, &[3]),
        tensor(&mut rng, &[3])
    ];
    let rm = running_mean.clone();
    let rv = running_var.clone();
    let case = Case {
        name: String::from("batch_norm_eval"),
        inputs,
        build: probed(&mut rng, &[5, 3], move |t, v| {
            let mut state = crate::autodiff::BnState {
                running_mean: rm.clone(),
                running_var: rv.clone(),
            };
            t.batch_norm(v[0], v[1], v[2], &mut state, false, 0.1, 1e-5)
        }),
    };
    run_case(&case)
}

/// The loss primitive is already scalar, so it gets a dedicated case.
pub fn check_bce_with_logits(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets = Rc::new(Tensor::uniform(&[3, 5], 0.0, 1.0, &mut rng));
    let case = Case {
        name: String::from("bce_with_logits"),
        inputs: alloc::vec![tensor(&mut rng, &[3, 5])],
        build: alloc::boxed::Box::new(move |t, v| t.bce_with_logits(v[0], targets.clone())),
    };
    run_case(&case)
}

/// Gradient of the full encoder + decoder + loss composition with respect
/// to every model parameter, in eval-mode batch norm with dropout off.
pub fn check_composed_model(seed: u64, composition: Composition) -> CheckResult {
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            dim: 8,
            layers: 2,
            composition,
            activation: Activation::Tanh,
            message_dropout: 0.0,
        },
        decoder: DecoderConfig {
            dim: 8,
            d1: 2,
            d2: 4,
            channels: 2,
            kernel: 3,
            input_dropout: 0.0,
            feature_dropout: 0.0,
            hidden_dropout: 0.0,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        },
    };
    let n_entities = 6;
    let n_rel_aug = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = ModelState::<f64>::init(&cfg, n_entities, n_rel_aug, &mut rng);
    let triples = alloc::vec![
        Triple::new(0, 0, 1),
        Triple::new(1, 1, 2),
        Triple::new(2, 0, 3),
        Triple::new(3, 2, 4),
        Triple::new(4, 1, 0),
        Triple::new(1, 5, 5),
        Triple::new(5, 4, 2),
    ];
    let edges = EdgeArrays::from_triples(&triples, n_entities);
    let batch: Vec<(u32, u32)> = alloc::vec![(0, 0), (2, 4), (5, 1)];
    let answers: Vec<Vec<u32>> = alloc::vec![alloc::vec![1], alloc::vec![0, 3], alloc::vec![2]];

    let forward = |model: &ModelState<f64>, trainable: bool| -> (Tape<f64>, Var, Vec<Var>) {
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, trainable);
        let mut buffers = model.buffers.clone();
        let out = encoder::encode(
            &mut tape,
            &vars.encoder,
            &edges,
            &cfg.encoder,
            &mut Phase::<ChaCha8Rng>::Eval,
        );
        let heads: Vec<u32> = batch.iter().map(|&(h, _)| h).collect();
        let rels: Vec<u32> = batch.iter().map(|&(_, r)| r).collect();
        let h_rows = tape.gather_rows(out.e_out, Rc::new(heads));
        let r_rows = tape.gather_rows(out.r_out, Rc::new(rels));
        let q = decoder::query_embed(
            &mut tape,
            h_rows,
            r_rows,
            &vars.decoder,
            &mut buffers,
            &cfg.decoder,
            &mut Phase::<ChaCha8Rng>::Eval,
        );
        let logits = decoder::score_all(&mut tape, q, out.e_out, vars.decoder.score_bias);
        let answer_rows: Vec<&[u32]> = answers.iter().map(|a| a.as_slice()).collect();
        let loss =
            training::bce_loss(&mut tape, logits, &answer_rows, n_entities, 0.1).unwrap();
        (tape, loss, vars.leaves())
    };

    let (tape, loss, leaves) = forward(&base, true);
    let mut grads = tape.backward(loss);
    let analytic: Vec<Tensor<f64>> = leaves
        .iter()
        .zip(base.params().iter())
        .map(|(&v, (_, t))| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut max_err = 0.0f64;
    let mut probes = 0usize;
    for pi in 0..base.params().len() {
        let x0: Vec<f64> = base.params()[pi].1.data().to_vec();
        let f = |x: &[f64]| -> f64 {
            let mut m = base.clone();
            m.params_mut()[pi].1.data_mut().copy_from_slice(x);
            let (tape, loss, _) = forward(&m, false);
            tape.value(loss).item()
        };
        let numeric = finite_difference(f, &x0, FD_STEP);
        for (&a, &n) in analytic[pi].data().iter().zip(&numeric) {
            let e = rel_error(a, n);
            if e > max_err {
                max_err = e;
            }
            probes += 1;
        }
    }
    CheckResult {
        name: format!("composed_model_{}", composition.as_str()),
        max_rel_err: max_err,
        probes,
    }
}
