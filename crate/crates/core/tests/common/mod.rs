//! Shared test fixtures: finite-difference probes and micro configs.
//!
//! The finite-difference machinery here is the independent oracle for
//! every analytic gradient in the crate; it never calls backward.

#![allow(dead_code)]

pub mod oracles;

use multigrain::data::{generate_dataset, Dataset, GenConfig};
use multigrain::model::ModelConfig;
use multigrain::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

/// Check analytic gradients of a scalar-valued tape program against
/// central finite differences at `probes` random input entries.
///
/// `build` must be a pure function of the leaf values.
pub fn check_gradients<F>(build: F, inputs: &[Tensor], probes: usize, seed: u64)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    assert!(tape.value(loss).is_scalar(), "loss must be scalar");
    tape.backward(loss).unwrap();
    let grads: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v)).collect();

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for probe in 0..probes {
        let which = rng.gen_range(0..inputs.len());
        if inputs[which].numel() == 0 {
            continue;
        }
        let idx = rng.gen_range(0..inputs[which].numel());
        let eval = |delta: f64| -> f64 {
            let mut shifted: Vec<Tensor> = inputs.to_vec();
            shifted[which].data_mut()[idx] += delta;
            let mut t = Tape::new();
            let vs: Vec<Var> = shifted.iter().map(|x| t.leaf(x.clone())).collect();
            let l = build(&mut t, &vs);
            t.value(l).scalar_value()
        };
        let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
        let analytic = grads[which].data()[idx];
        let err = rel_err(analytic, numeric);
        assert!(
            err < FD_TOLERANCE,
            "probe {probe}: input {which} entry {idx}: analytic {analytic:.3e} vs numeric {numeric:.3e} (rel {err:.3e})"
        );
    }
}

pub fn random_tensor<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(-1.5..1.5)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Small model for fast end-to-end checks.
pub fn micro_model_cfg() -> ModelConfig {
    ModelConfig {
        vocab_size: 512,
        d_model: 32,
        n_layers: 2,
        n_heads: 4,
        d_ff: 48,
        max_seq_len: 96,
        patch_size: 8,
        image_channels: 1,
        n_granularity_experts: 3,
        moe_baseline_experts: 4,
        lora_rank: 2,
        lora_alpha: 4.0,
        grid_n: 4,
    }
}

/// Matching data: 16x16 canvas (4 image tokens), small shapes, grid 4.
pub fn micro_gen_cfg(n_scenes: usize, n_change_pairs: usize) -> GenConfig {
    GenConfig {
        n_scenes,
        n_change_pairs,
        canvas: 16,
        min_shapes: 1,
        max_shapes: 2,
        min_size: 4,
        max_size: 7,
        grid_n: 4,
    }
}

pub fn micro_dataset(seed: u64, n_scenes: usize, n_change_pairs: usize) -> Dataset {
    generate_dataset(seed, &micro_gen_cfg(n_scenes, n_change_pairs))
        .unwrap()
        .to_dataset()
        .unwrap()
}
