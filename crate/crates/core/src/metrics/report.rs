//! Named metric values with per-sample breakdown for a dataset split.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Echo of the knobs the metrics were computed under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub max_ngram_order: usize,
    pub iou_thresholds: Vec<f64>,
    pub grid_n: Option<usize>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            max_ngram_order: 4,
            iou_thresholds: vec![0.5, 0.7],
            grid_n: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub sample_count: usize,
    /// Aggregate values; keys sorted for stable serialization.
    pub metrics: BTreeMap<String, f64>,
    /// Per-sample values keyed by sample id, in evaluation order.
    pub per_sample: Vec<(String, BTreeMap<String, f64>)>,
    pub config: MetricConfig,
}

impl MetricReport {
    pub fn new(task: &str, config: MetricConfig) -> Self {
        MetricReport {
            task: task.to_string(),
            sample_count: 0,
            metrics: BTreeMap::new(),
            per_sample: Vec::new(),
            config,
        }
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    /// Aligned two-column text table, one metric per line.
    pub fn render_table(&self) -> String {
        let width = self
            .metrics
            .keys()
            .map(String::len)
            .max()
            .unwrap_or(6)
            .max(6);
        let mut out = format!(
            "task {}  samples {}\n{:-<rule$}\n",
            self.task,
            self.sample_count,
            "",
            rule = width + 10
        );
        for (name, value) in &self.metrics {
            out.push_str(&format!("{name:<width$}  {value:.4}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_field_order_is_stable() {
        let mut r = MetricReport::new("[VG]", MetricConfig::default());
        r.set("acc@0.5", 0.75);
        r.set("acc@0.7", 0.5);
        r.sample_count = 4;
        let a = serde_json::to_string(&r).unwrap();
        let b = serde_json::to_string(&r).unwrap();
        assert_eq!(a, b);
        assert!(a.find("acc@0.5").unwrap() < a.find("acc@0.7").unwrap());
    }

    #[test]
    fn table_renders_every_metric() {
        let mut r = MetricReport::new("[CAP]", MetricConfig::default());
        r.set("bleu4", 0.5);
        r.set("rouge_l", 0.25);
        let table = r.render_table();
        assert!(table.contains("bleu4") && table.contains("rouge_l"));
    }
}
