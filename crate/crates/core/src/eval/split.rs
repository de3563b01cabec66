//! Scoring decoded text against targets, per task family.

use serde::{Deserialize, Serialize};

use crate::codec::{
    decode_mask, parse_bbox_text, parse_descriptor_text, LabelSet, Mask, TaskToken,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{
    classification_accuracy, cider, corpus_bleu, grounding_accuracy, iou_bbox, meteor_exact,
    rouge_l, segmentation_scores, tokenize_for_metrics, BleuSmoothing, MetricConfig,
    MetricReport,
};
use crate::model::Vocab;
use crate::train::Checkpoint;

/// Persisted decode line: {id, prompt, output, parse_status}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub id: String,
    pub prompt: String,
    pub output: String,
    /// "ok", "failed", or "na" for tasks without structured output.
    pub parse_status: String,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub max_new: usize,
    pub labels: LabelSet,
    pub iou_thresholds: Vec<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            max_new: 96,
            labels: crate::data::catalog_label_set(),
            iou_thresholds: vec![0.5, 0.7],
        }
    }
}

/// Decode every sample of a single-task split and score it.
pub fn evaluate_split(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    task: TaskToken,
    options: &EvalOptions,
) -> Result<(MetricReport, Vec<DecodeRecord>)> {
    if dataset.is_empty() {
        return Err(Error::Eval(format!("empty split for task {task}")));
    }
    if let Some(stranger) = dataset.samples.iter().find(|s| s.task != task) {
        return Err(Error::Eval(format!(
            "sample {} has task {}, split expects {task}",
            stranger.id, stranger.task
        )));
    }
    let vocab = Vocab::from_names(ckpt.vocab.clone());
    let mut outputs = Vec::with_capacity(dataset.len());
    for (sample, images) in dataset.samples.iter().zip(&dataset.images) {
        let out = crate::eval::greedy_decode(
            &ckpt.params,
            &ckpt.model_config,
            &vocab,
            sample,
            images,
            options.max_new,
        )?;
        outputs.push(out.text);
    }
    score_texts(dataset, task, &outputs, options)
}

/// Pure scoring of decoded texts against the split's targets. Re-running
/// this on saved decode outputs reproduces the report exactly.
pub fn score_texts(
    dataset: &Dataset,
    task: TaskToken,
    outputs: &[String],
    options: &EvalOptions,
) -> Result<(MetricReport, Vec<DecodeRecord>)> {
    if outputs.len() != dataset.len() {
        return Err(Error::Eval(format!(
            "{} outputs for {} samples",
            outputs.len(),
            dataset.len()
        )));
    }
    let mut config = MetricConfig {
        iou_thresholds: options.iou_thresholds.clone(),
        ..MetricConfig::default()
    };
    let mut records: Vec<DecodeRecord> = dataset
        .samples
        .iter()
        .zip(outputs)
        .map(|(s, o)| DecodeRecord {
            id: s.id.clone(),
            prompt: s.prompt.clone(),
            output: o.clone(),
            parse_status: "na".into(),
        })
        .collect();

    let mut report = match task {
        TaskToken::Vg => score_grounding(dataset, outputs, options, &mut records)?,
        TaskToken::Seg => {
            let grid_n = grid_of_targets(dataset, options)?;
            config.grid_n = Some(grid_n);
            score_segmentation(dataset, outputs, options, grid_n, &mut records)?
        }
        TaskToken::Cls | TaskToken::Vqa => {
            let targets: Vec<String> = dataset.samples.iter().map(|s| s.target.clone()).collect();
            let accuracy = classification_accuracy(outputs, &targets)?;
            let mut r = MetricReport::new(task.as_str(), MetricConfig::default());
            r.set("accuracy", accuracy);
            for (record, (sample, output)) in records
                .iter()
                .zip(dataset.samples.iter().zip(outputs))
                .map(|(r, so)| (r, so))
            {
                let hit = crate::metrics::normalize_class_text(output)
                    == crate::metrics::normalize_class_text(&sample.target);
                r.per_sample.push((
                    record.id.clone(),
                    [("correct".to_string(), f64::from(hit))].into_iter().collect(),
                ));
            }
            r
        }
        TaskToken::Cap | TaskToken::Ccd | TaskToken::Ref => {
            score_text_generation(dataset, outputs, task)?
        }
    };
    report.task = task.as_str().to_string();
    report.sample_count = dataset.len();
    report.config.iou_thresholds = options.iou_thresholds.clone();
    Ok((report, records))
}

fn grid_of_targets(dataset: &Dataset, options: &EvalOptions) -> Result<usize> {
    // Targets are trusted; infer the grid from the first one by trying the
    // total cell count. Every generated target sums to grid_n^2.
    let first = &dataset.samples[0].target;
    let mut total = 0usize;
    for token in first.split_whitespace() {
        if token == "|" {
            continue;
        }
        let (_, count) = token.rsplit_once('*').ok_or_else(|| {
            Error::Eval(format!("target is not descriptor text: {first:?}"))
        })?;
        total += count.parse::<usize>().map_err(|_| {
            Error::Eval(format!("target is not descriptor text: {first:?}"))
        })?;
    }
    let grid = (total as f64).sqrt().round() as usize;
    if grid * grid != total {
        return Err(Error::Eval(format!(
            "target cell count {total} is not a square"
        )));
    }
    let _ = options;
    Ok(grid)
}

fn score_grounding(
    dataset: &Dataset,
    outputs: &[String],
    options: &EvalOptions,
    records: &mut [DecodeRecord],
) -> Result<MetricReport> {
    let mut predictions = Vec::with_capacity(outputs.len());
    let mut ground_truth = Vec::with_capacity(outputs.len());
    for ((sample, output), record) in
        dataset.samples.iter().zip(outputs).zip(records.iter_mut())
    {
        let gt = parse_bbox_text(&sample.target).map_err(|e| {
            Error::Eval(format!("unparseable ground truth for {}: {e}", sample.id))
        })?;
        ground_truth.push(gt);
        match parse_bbox_text(output) {
            Ok(p) => {
                predictions.push(Some(p));
                record.parse_status = "ok".into();
            }
            Err(_) => {
                predictions.push(None);
                record.parse_status = "failed".into();
            }
        }
    }
    let accs = grounding_accuracy(&predictions, &ground_truth, &options.iou_thresholds)?;
    let ious: Vec<f64> = predictions
        .iter()
        .zip(&ground_truth)
        .map(|(p, g)| p.map_or(0.0, |p| iou_bbox(p, *g)))
        .collect();
    let mut report = MetricReport::new("[VG]", MetricConfig::default());
    for (t, a) in options.iou_thresholds.iter().zip(&accs) {
        report.set(&format!("acc@{t}"), *a);
    }
    report.set("mean_iou", ious.iter().sum::<f64>() / ious.len() as f64);
    report.set(
        "parse_failure_rate",
        predictions.iter().filter(|p| p.is_none()).count() as f64 / predictions.len() as f64,
    );
    for ((sample, iou), record) in dataset.samples.iter().zip(&ious).zip(records.iter()) {
        let _ = sample;
        report
            .per_sample
            .push((record.id.clone(), [("iou".to_string(), *iou)].into_iter().collect()));
    }
    Ok(report)
}

fn score_segmentation(
    dataset: &Dataset,
    outputs: &[String],
    options: &EvalOptions,
    grid_n: usize,
    records: &mut [DecodeRecord],
) -> Result<MetricReport> {
    let labels = &options.labels;
    let mut pred_cells: Vec<u32> = Vec::new();
    let mut gt_cells: Vec<u32> = Vec::new();
    let mut failures = 0usize;
    let mut report = MetricReport::new("[SEG]", MetricConfig::default());
    for ((sample, output), record) in
        dataset.samples.iter().zip(outputs).zip(records.iter_mut())
    {
        let gt = parse_descriptor_text(&sample.target, grid_n, labels).map_err(|e| {
            Error::Eval(format!("unparseable ground truth for {}: {e}", sample.id))
        })?;
        let gt_mask = decode_mask(&gt, grid_n, grid_n)?;
        let pred_mask = match parse_descriptor_text(output, grid_n, labels) {
            Ok(d) => {
                record.parse_status = "ok".into();
                decode_mask(&d, grid_n, grid_n)?
            }
            Err(_) => {
                // Scored as an all-background miss.
                record.parse_status = "failed".into();
                failures += 1;
                Mask::filled(grid_n, grid_n, LabelSet::BACKGROUND)?
            }
        };
        let per = segmentation_scores(&pred_mask, &gt_mask, labels)?;
        report.per_sample.push((
            sample.id.clone(),
            [
                ("miou".to_string(), per.miou),
                ("overall_accuracy".to_string(), per.overall_accuracy),
            ]
            .into_iter()
            .collect(),
        ));
        pred_cells.extend(pred_mask.labels);
        gt_cells.extend(gt_mask.labels);
    }
    // Corpus-level scores from the pooled pixel confusion.
    let rows = dataset.len() * grid_n;
    let pred_all = Mask::new(grid_n, rows, pred_cells)?;
    let gt_all = Mask::new(grid_n, rows, gt_cells)?;
    let pooled = segmentation_scores(&pred_all, &gt_all, labels)?;
    report.set("miou", pooled.miou);
    report.set("overall_accuracy", pooled.overall_accuracy);
    // Foreground summary: every class except background, pooled.
    let mut fg = (0.0, 0.0, 0.0, 0.0);
    let mut fg_classes = 0usize;
    for (name, scores) in &pooled.per_class {
        if name == "background" {
            continue;
        }
        fg.0 += scores.f1;
        fg.1 += scores.precision;
        fg.2 += scores.recall;
        fg.3 += scores.iou;
        fg_classes += 1;
    }
    if fg_classes > 0 {
        let k = fg_classes as f64;
        report.set("f1", fg.0 / k);
        report.set("precision", fg.1 / k);
        report.set("recall", fg.2 / k);
        report.set("iou", fg.3 / k);
    }
    report.set(
        "parse_failure_rate",
        failures as f64 / dataset.len() as f64,
    );
    Ok(report)
}

fn score_text_generation(
    dataset: &Dataset,
    outputs: &[String],
    task: TaskToken,
) -> Result<MetricReport> {
    let pairs: Vec<(Vec<String>, Vec<Vec<String>>)> = dataset
        .samples
        .iter()
        .zip(outputs)
        .map(|(s, o)| {
            (
                tokenize_for_metrics(o),
                vec![tokenize_for_metrics(&s.target)],
            )
        })
        .collect();
    let corpus = corpus_bleu(&pairs, 4, BleuSmoothing::Off)?;
    let mut report = MetricReport::new(task.as_str(), MetricConfig::default());
    for (n, v) in corpus.per_n.iter().enumerate() {
        report.set(&format!("bleu{}", n + 1), *v);
    }
    // Both reductions, labeled: corpus-level above, mean-of-sentence here.
    let mut sentence_bleu4 = 0.0;
    let mut meteor_sum = 0.0;
    let mut rouge_sum = 0.0;
    for ((candidate, refs), sample) in pairs.iter().zip(&dataset.samples) {
        let sent = corpus_bleu(
            &[(candidate.clone(), refs.clone())],
            4,
            BleuSmoothing::Off,
        )?;
        sentence_bleu4 += sent.per_n[3];
        let m = meteor_exact(candidate, &refs[0]);
        let r = rouge_l(candidate, &refs[0]);
        meteor_sum += m;
        rouge_sum += r;
        report.per_sample.push((
            sample.id.clone(),
            [
                ("bleu4".to_string(), sent.per_n[3]),
                ("meteor_exact".to_string(), m),
                ("rouge_l".to_string(), r),
            ]
            .into_iter()
            .collect(),
        ));
    }
    let n = pairs.len() as f64;
    report.set("bleu4_sentence_avg", sentence_bleu4 / n);
    report.set("meteor_exact", meteor_sum / n);
    report.set("rouge_l", rouge_sum / n);
    let candidates: Vec<Vec<String>> = pairs.iter().map(|(c, _)| c.clone()).collect();
    let references: Vec<Vec<Vec<String>>> = pairs.iter().map(|(_, r)| r.clone()).collect();
    let cider_report = cider(&candidates, &references, 4)?;
    report.set("cider", cider_report.score);
    report.set("cider_degenerate", f64::from(cider_report.degenerate));
    Ok(report)
}
