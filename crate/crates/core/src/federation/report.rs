use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "t,n_selected,loss_bef,loss_aft,acc_mean,acc_std,acc_best,pir_mean";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundReport {
    pub t: usize,
    pub selected: Vec<usize>,
    /// Selected clients that failed and were left out of aggregation.
    pub skipped: Vec<usize>,
    pub loss_bef: f64,
    pub loss_aft: f64,
    /// Test accuracy per client id; `None` for an empty test shard.
    pub accuracy: Vec<Option<f64>>,
    pub acc_mean: f64,
    pub acc_std: f64,
    /// Running maximum of `acc_mean` up to and including this round.
    pub acc_best: f64,
    /// Per-client PIR; all `None` for variants without a CPN.
    pub pir: Vec<Option<f64>>,
    pub pir_mean: Option<f64>,
    /// Weighted mean of the λ·MMD² term over the selected clients.
    pub align_term: f64,
    #[serde(skip)]
    pub wall_time: f64,
}

fn num(x: f64) -> String {
    format!("{x}")
}

impl RoundReport {
    pub fn csv_row(&self) -> String {
        [
            self.t.to_string(),
            self.selected.len().to_string(),
            num(self.loss_bef),
            num(self.loss_aft),
            num(self.acc_mean),
            num(self.acc_std),
            num(self.acc_best),
            self.pir_mean.map(num).unwrap_or_default(),
        ]
        .join(",")
    }
}

pub fn rounds_csv(reports: &[RoundReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct ClientLine {
    round: usize,
    client_id: usize,
    acc: Option<f64>,
    pir: Option<f64>,
}

/// One JSON object per (round, client).
pub fn clients_jsonl(reports: &[RoundReport]) -> Result<String> {
    let mut out = String::new();
    for r in reports {
        for (id, acc) in r.accuracy.iter().enumerate() {
            let line = ClientLine {
                round: r.t,
                client_id: id,
                acc: *acc,
                pir: r.pir.get(id).copied().flatten(),
            };
            let json = serde_json::to_string(&line).map_err(|e| Error::Input(e.to_string()))?;
            writeln!(out, "{json}").expect("writing to a String");
        }
    }
    Ok(out)
}
