//! Structured and plain-text evaluation reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::confusion::{class_metrics, confusion, kappa, ConfusionMatrix};
use super::sleep::{MeasuresMae, MEASURE_NAMES};
use crate::data::hypnogram::Stage;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageScores {
    pub stage: String,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub kappa: f64,
    pub accuracy: f64,
    pub epochs: u64,
    pub per_stage: Vec<StageScores>,
    pub confusion: ConfusionMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub infer_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measures_mae: Option<MeasuresMae>,
}

impl EvalReport {
    pub fn from_confusion(model: impl Into<String>, cm: ConfusionMatrix) -> Result<Self> {
        let k = kappa(&cm)?;
        let cls = class_metrics(&cm);
        let per_stage = Stage::ALL
            .iter()
            .zip(&cls.per_class)
            .map(|(s, c)| StageScores {
                stage: s.name().to_string(),
                recall: c.recall,
                precision: c.precision,
                f1: c.f1,
                degenerate: c.degenerate,
            })
            .collect();
        Ok(Self {
            model: model.into(),
            kappa: k,
            accuracy: cls.accuracy,
            epochs: cm.total(),
            per_stage,
            confusion: cm,
            params: None,
            infer_ms: None,
            measures_mae: None,
        })
    }

    pub fn from_predictions(model: impl Into<String>, pred: &[Stage], truth: &[Stage]) -> Result<Self> {
        Self::from_confusion(model, confusion(pred, truth)?)
    }

    pub fn recall(&self, stage: Stage) -> f64 {
        self.per_stage[stage.index()].recall
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-stage scores and confusion counts as aligned text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model {}  kappa {:.4}  acc {:.4}  epochs {}", self.model, self.kappa, self.accuracy, self.epochs);
        let _ = writeln!(s, "{:<6} {:>7} {:>9} {:>7}", "stage", "recall", "precision", "f1");
        for st in &self.per_stage {
            let flag = if st.degenerate { " *" } else { "" };
            let _ = writeln!(s, "{:<6} {:>7.4} {:>9.4} {:>7.4}{}", st.stage, st.recall, st.precision, st.f1, flag);
        }
        s.push_str(&confusion_table(&self.confusion));
        if let Some(m) = &self.measures_mae {
            let _ = writeln!(s, "sleep-measure MAE over {} subjects", m.subjects);
            for (name, v) in MEASURE_NAMES.iter().zip(m.values()) {
                let _ = writeln!(s, "  {:<9} {:>8.3}", name, v);
            }
        }
        s
    }
}

pub fn confusion_table(cm: &ConfusionMatrix) -> String {
    let mut s = String::new();
    let names: Vec<&str> = if cm.classes() == 4 {
        Stage::ALL.iter().map(|st| st.name()).collect()
    } else {
        (0..cm.classes()).map(|_| "?").collect()
    };
    let _ = write!(s, "{:<10}", "true\\pred");
    for n in &names {
        let _ = write!(s, " {:>7}", n);
    }
    s.push('\n');
    for (n, row) in names.iter().zip(&cm.counts) {
        let _ = write!(s, "{:<10}", n);
        for v in row {
            let _ = write!(s, " {:>7}", v);
        }
        s.push('\n');
    }
    s
}

/// Model comparison with columns κ, Acc, model size and inference time.
pub fn comparison_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:>6}  {:>6}  {:>10}  {:>9}",
        "Model", "kappa", "Acc", "Model Size", "Infer. ms"
    );
    for r in reports {
        let size = r.params.map(format_params).unwrap_or_else(|| "-".into());
        let ms = r.infer_ms.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:<width$}  {:>6.3}  {:>6.3}  {:>10}  {:>9}",
            r.model, r.kappa, r.accuracy, size, ms
        );
    }
    s
}

/// Parameter count with an M or K suffix.
pub fn format_params(n: usize) -> String {
    if n >= 1_000_000 {
        format!("{:.2}M", n as f64 / 1e6)
    } else if n >= 1_000 {
        format!("{:.1}K", n as f64 / 1e3)
    } else {
        n.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_has_header_and_rows() {
        let truth = [Stage::Wake, Stage::Light, Stage::Deep, Stage::Rem];
        let mut r = EvalReport::from_predictions("fusion", &truth, &truth).unwrap();
        r.params = Some(3_460_000);
        let t = comparison_table(&[r.clone(), r]);
        assert_eq!(t.lines().count(), 3);
        assert!(t.contains("3.46M"));
        assert!(t.lines().next().unwrap().contains("Infer. ms"));
    }

    #[test]
    fn json_round_trip() {
        let truth = [Stage::Wake, Stage::Light, Stage::Light];
        let pred = [Stage::Wake, Stage::Wake, Stage::Light];
        let r = EvalReport::from_predictions("m", &pred, &truth).unwrap();
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_text().contains("true\\pred"));
    }
}
