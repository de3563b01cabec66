//! Model configuration, named parameter tensors, and parameter accounting.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which parameterization a set of weights belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Dense,
    GMoe,
    Moe,
    Lora,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Dense => "dense",
            Variant::GMoe => "gmoe",
            Variant::Moe => "moe",
            Variant::Lora => "lora",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub patch_size: usize,
    pub image_channels: usize,
    #[serde(default = "default_granularity_experts")]
    pub n_granularity_experts: usize,
    #[serde(default = "default_moe_experts")]
    pub moe_baseline_experts: usize,
    #[serde(default = "default_lora_rank")]
    pub lora_rank: usize,
    #[serde(default = "default_lora_alpha")]
    pub lora_alpha: f64,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
}

fn default_granularity_experts() -> usize {
    3
}
fn default_moe_experts() -> usize {
    8
}
fn default_lora_rank() -> usize {
    4
}
fn default_lora_alpha() -> f64 {
    8.0
}
fn default_grid_n() -> usize {
    24
}

impl ModelConfig {
    /// The configuration the desk-scale runs and most tests use.
    pub fn toy() -> Self {
        ModelConfig {
            vocab_size: 2048,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            max_seq_len: 256,
            patch_size: 8,
            image_channels: 1,
            n_granularity_experts: 3,
            moe_baseline_experts: 8,
            lora_rank: 4,
            lora_alpha: 8.0,
            grid_n: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_granularity_experts != 3 {
            return Err(Error::Config(
                "n_granularity_experts is fixed at 3 (image, region, pixel)".into(),
            ));
        }
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
            ("patch_size", self.patch_size),
            ("image_channels", self.image_channels),
            ("moe_baseline_experts", self.moe_baseline_experts),
            ("lora_rank", self.lora_rank),
            ("grid_n", self.grid_n),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.image_channels
    }
}

/// Named parameter tensors with per-tensor trainable flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub variant: Variant,
    tensors: BTreeMap<String, Tensor>,
    trainable: BTreeMap<String, bool>,
}

pub const INIT_STD: f64 = 0.02;

impl ModelParams {
    /// Fresh dense model: Gaussian(0, 0.02) projections, zero biases,
    /// unit layer-norm gains. Everything trainable.
    pub fn init_dense<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let mut p = ModelParams {
            variant: Variant::Dense,
            tensors: BTreeMap::new(),
            trainable: BTreeMap::new(),
        };
        p.insert("patch.w", Tensor::randn(&[cfg.patch_dim(), d], INIT_STD, rng));
        p.insert("patch.b", Tensor::zeros(&[d]));
        p.insert(
            "embed.tok",
            Tensor::randn(&[cfg.vocab_size, d], INIT_STD, rng),
        );
        p.insert(
            "embed.pos",
            Tensor::randn(&[cfg.max_seq_len, d], INIT_STD, rng),
        );
        for i in 0..cfg.n_layers {
            p.insert(&format!("block{i}.ln1.g"), Tensor::full(&[d], 1.0));
            p.insert(&format!("block{i}.ln1.b"), Tensor::zeros(&[d]));
            for proj in ["wq", "wk", "wv", "wo"] {
                p.insert(
                    &format!("block{i}.attn.{proj}"),
                    Tensor::randn(&[d, d], INIT_STD, rng),
                );
                p.insert(
                    &format!("block{i}.attn.b{}", &proj[1..]),
                    Tensor::zeros(&[d]),
                );
            }
            p.insert(&format!("block{i}.ln2.g"), Tensor::full(&[d], 1.0));
            p.insert(&format!("block{i}.ln2.b"), Tensor::zeros(&[d]));
            p.insert(
                &format!("block{i}.ffn.w1"),
                Tensor::randn(&[d, cfg.d_ff], INIT_STD, rng),
            );
            p.insert(&format!("block{i}.ffn.b1"), Tensor::zeros(&[cfg.d_ff]));
            p.insert(
                &format!("block{i}.ffn.w2"),
                Tensor::randn(&[cfg.d_ff, d], INIT_STD, rng),
            );
            p.insert(&format!("block{i}.ffn.b2"), Tensor::zeros(&[d]));
        }
        p.insert("ln_f.g", Tensor::full(&[d], 1.0));
        p.insert("ln_f.b", Tensor::zeros(&[d]));
        p.insert("head.w", Tensor::randn(&[d, cfg.vocab_size], INIT_STD, rng));
        p.insert("head.b", Tensor::zeros(&[cfg.vocab_size]));
        Ok(p)
    }

    fn insert(&mut self, name: &str, tensor: Tensor) {
        self.tensors.insert(name.to_string(), tensor);
        self.trainable.insert(name.to_string(), true);
    }

    pub fn insert_tensor(&mut self, name: &str, tensor: Tensor, trainable: bool) {
        self.tensors.insert(name.to_string(), tensor);
        self.trainable.insert(name.to_string(), trainable);
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.trainable.remove(name);
        self.tensors.remove(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::State(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.trainable.get(name).copied().unwrap_or(false)
    }

    pub fn set_trainable(&mut self, name: &str, flag: bool) {
        if let Some(slot) = self.trainable.get_mut(name) {
            *slot = flag;
        }
    }

    pub fn freeze_all(&mut self) {
        for flag in self.trainable.values_mut() {
            *flag = false;
        }
    }

    /// Names in sorted order; the iteration order every consumer uses.
    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.tensors
            .keys()
            .filter(|n| self.is_trainable(n))
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub trainable: u64,
    /// Parameters touched in one forward pass: one expert per MoE block.
    pub runtime_active: u64,
}

pub fn count_parameters(params: &ModelParams) -> ParamCounts {
    let mut trainable = 0u64;
    let mut runtime = 0u64;
    for (name, tensor) in params.iter() {
        let numel = tensor.numel() as u64;
        if params.is_trainable(name) {
            trainable += numel;
        }
        if runtime_active_name(name) {
            runtime += numel;
        }
    }
    ParamCounts {
        trainable,
        runtime_active: runtime,
    }
}

/// A forward pass touches every tensor except the experts that were not
/// selected; expert 0 stands in for "the one expert that ran".
fn runtime_active_name(name: &str) -> bool {
    match name.find(".expert") {
        None => true,
        Some(pos) => name[pos + ".expert".len()..].starts_with("0."),
    }
}
