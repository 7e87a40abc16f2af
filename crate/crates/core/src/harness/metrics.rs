use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const METRICS_CSV_HEADER: &str =
    "step,train_loss,eval_loss,ppl,lr_emb,lr_head,lr_qk,lr_vo,lr_mlp,wallclock_ms";

/// One logged training step. `eval_loss`/`ppl` are present on eval steps only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub train_loss: f64,
    pub eval_loss: Option<f64>,
    pub ppl: Option<f64>,
    /// Effective learning rate of the embedding, head, QK, VO and MLP parameters.
    pub lr: [f64; 5],
    pub wallclock_ms: u64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut s = format!(
            "{},{},{},{}",
            self.step,
            self.train_loss,
            opt(self.eval_loss),
            opt(self.ppl)
        );
        for lr in self.lr {
            let _ = write!(s, ",{lr}");
        }
        let _ = write!(s, ",{}", self.wallclock_ms);
        s
    }
}

pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}
