//! Four-way fine-tuning comparison on shared data, seed, and order.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::TaskToken;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::count_parameters;
use crate::train::{adapt_checkpoint, train_stage2, Checkpoint, TrainConfig, TuningMethod};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub train: TrainConfig,
    #[serde(default = "default_max_new")]
    pub max_new: usize,
}

fn default_max_new() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub trainable_params: u64,
    pub runtime_params: u64,
    /// Accuracy on the question-answering split, in percent.
    pub vqa_score: Option<f64>,
    /// acc@0.5 on the grounding split, in percent.
    pub vg_score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// Hash of (seed, sample ids in order); equal across variants by
    /// construction, recorded so reruns can prove it.
    pub data_order_hash: String,
    /// trainable(lora) < trainable(gmoe) < trainable(moe) < trainable(full)
    /// and runtime(gmoe) == runtime(full).
    pub parameter_ordering_ok: bool,
    pub seed: u64,
}

impl AblationReport {
    pub fn render_table(&self) -> String {
        let mut out = String::from(
            "variant  trainable  runtime   vqa      vg\n\
             ------------------------------------------------\n",
        );
        for row in &self.rows {
            let fmt_score = |s: Option<f64>| match s {
                Some(v) => format!("{v:6.2}"),
                None => "     -".to_string(),
            };
            out.push_str(&format!(
                "{:<8} {:>9} {:>8}  {}  {}{}\n",
                row.variant,
                row.trainable_params,
                row.runtime_params,
                fmt_score(row.vqa_score),
                fmt_score(row.vg_score),
                row.error
                    .as_ref()
                    .map(|e| format!("  FAILED: {e}"))
                    .unwrap_or_default(),
            ));
        }
        out.push_str(&format!(
            "parameter ordering ok: {}\ndata order hash: {}\n",
            self.parameter_ordering_ok, self.data_order_hash
        ));
        out
    }
}

/// Train all four methods from the same dense stage-1 checkpoint on the
/// same data and seed, then score accuracy-style metrics per method.
/// A variant that fails to train yields an annotated row, not an abort.
pub fn run_ablation(
    base: &Checkpoint,
    stage2_data: &Dataset,
    eval_vqa: &Dataset,
    eval_vg: &Dataset,
    cfg: &AblationConfig,
) -> Result<AblationReport> {
    if base.params.variant != crate::model::Variant::Dense {
        return Err(Error::State(
            "ablation expects a dense stage-1 checkpoint".into(),
        ));
    }
    if cfg.train.stage != 2 {
        return Err(Error::Config("ablation training config must be stage 2".into()));
    }
    let mut hasher = Sha256::new();
    hasher.update(cfg.train.seed.to_le_bytes());
    for sample in &stage2_data.samples {
        hasher.update(sample.id.as_bytes());
        hasher.update([0]);
    }
    let data_order_hash: String = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();

    let mut rows = Vec::new();
    let mut counts_by_method = Vec::new();
    for method in TuningMethod::ALL {
        let row = run_variant(base, stage2_data, eval_vqa, eval_vg, cfg, method);
        match row {
            Ok((row, counts)) => {
                counts_by_method.push((method, counts));
                rows.push(row);
            }
            Err(e) => rows.push(AblationRow {
                variant: method.to_string(),
                trainable_params: 0,
                runtime_params: 0,
                vqa_score: None,
                vg_score: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let counts = |m: TuningMethod| {
        counts_by_method
            .iter()
            .find(|(method, _)| *method == m)
            .map(|(_, c)| *c)
    };
    let parameter_ordering_ok = match (
        counts(TuningMethod::Lora),
        counts(TuningMethod::Gmoe),
        counts(TuningMethod::Moe),
        counts(TuningMethod::Full),
    ) {
        (Some(lora), Some(gmoe), Some(moe), Some(full)) => {
            lora.trainable < gmoe.trainable
                && gmoe.trainable < moe.trainable
                && moe.trainable < full.trainable
                && gmoe.runtime_active == full.runtime_active
        }
        _ => false,
    };
    Ok(AblationReport {
        rows,
        data_order_hash,
        parameter_ordering_ok,
        seed: cfg.train.seed,
    })
}

fn run_variant(
    base: &Checkpoint,
    stage2_data: &Dataset,
    eval_vqa: &Dataset,
    eval_vg: &Dataset,
    cfg: &AblationConfig,
    method: TuningMethod,
) -> Result<(AblationRow, crate::model::ParamCounts)> {
    let adapted = adapt_checkpoint(base, method, cfg.train.seed)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.variant = method;
    let outcome = train_stage2(&adapted, stage2_data, &train_cfg)?;
    let ckpt = outcome.checkpoint;
    let counts = count_parameters(&ckpt.params);
    let options = crate::eval::EvalOptions {
        max_new: cfg.max_new,
        ..Default::default()
    };
    let (vqa_report, _) = crate::eval::evaluate_split(&ckpt, eval_vqa, TaskToken::Vqa, &options)?;
    let (vg_report, _) = crate::eval::evaluate_split(&ckpt, eval_vg, TaskToken::Vg, &options)?;
    Ok((
        AblationRow {
            variant: method.to_string(),
            trainable_params: counts.trainable,
            runtime_params: counts.runtime_active,
            vqa_score: vqa_report.get("accuracy").map(|v| v * 100.0),
            vg_score: vg_report.get("acc@0.5").map(|v| v * 100.0),
            error: None,
        },
        counts,
    ))
}
