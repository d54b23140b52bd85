//! Evaluation reports and the change-imbalance table.

use std::path::Path;

use semcd_core::change::compare_lcms;
use semcd_core::inference::{score_pair, Decoded};
use semcd_core::metrics::{ConfusionMatrix, MetricReport};
use semcd_core::nomenclature::Nomenclature;
use semcd_core::raster::{ImagePair, LabelMap};
use semcd_core::weights::ImbalanceTable;

use crate::error::{Error, Result};
use crate::layout::{DatasetIndex, Split};
use crate::raster_io::read_labels;

/// Report columns, in order.
pub const COLUMNS: [&str; 5] = ["cd_kappa", "cd_dice", "cd_total_accuracy", "lcm_kappa", "lcm_total_accuracy"];

/// Label of the aggregate row.
pub const ALL: &str = "ALL";

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub pair_id: String,
    pub cd: MetricReport,
    pub lcm: Option<MetricReport>,
}

impl EvalRow {
    pub fn values(&self) -> [Option<f64>; 5] {
        let l = self.lcm;
        [
            self.cd.kappa,
            self.cd.dice,
            self.cd.total_accuracy,
            l.and_then(|r| r.kappa),
            l.and_then(|r| r.total_accuracy),
        ]
    }
}

/// Per-pair rows and the aggregate over the pooled confusion matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<EvalRow>,
    pub aggregate: EvalRow,
}

fn metrics_or_empty(cm: &ConfusionMatrix) -> MetricReport {
    cm.metrics().unwrap_or(MetricReport { total_accuracy: None, precision: None, recall: None, dice: None, kappa: None })
}

/// Scores decoded predictions against their ground-truth pairs.
pub fn evaluate(items: &[(Decoded, ImagePair)], land_cover: &Nomenclature) -> Result<Evaluation> {
    let mut cd_all = ConfusionMatrix::new(&Nomenclature::binary_change());
    let mut lc_all: Option<ConfusionMatrix> = None;
    let mut rows = Vec::new();
    for (d, p) in items {
        let (cd, lc) = score_pair(d, p, land_cover)?;
        cd_all = cd_all.merge(&cd)?;
        if let Some(lc) = &lc {
            lc_all = Some(match lc_all {
                Some(a) => a.merge(lc)?,
                None => lc.clone(),
            });
        }
        rows.push(EvalRow { pair_id: p.pair_id.clone(), cd: metrics_or_empty(&cd), lcm: lc.as_ref().map(metrics_or_empty) });
    }
    let aggregate = EvalRow { pair_id: ALL.into(), cd: metrics_or_empty(&cd_all), lcm: lc_all.as_ref().map(metrics_or_empty) };
    Ok(Evaluation { rows, aggregate })
}

impl Evaluation {
    /// One header line, one row per pair, then the aggregate row. Undefined
    /// values are written `NA`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("pair_id");
        for c in COLUMNS {
            s.push('\t');
            s.push_str(c);
        }
        s.push('\n');
        for r in self.rows.iter().chain([&self.aggregate]) {
            s.push_str(&r.pair_id);
            for v in r.values() {
                match v {
                    Some(v) => s.push_str(&format!("\t{v:.6}")),
                    None => s.push_str("\tNA"),
                }
            }
            s.push('\n');
        }
        s
    }

    /// Human-readable table, values in percent.
    pub fn render(&self) -> String {
        let id_w = self.rows.iter().map(|r| r.pair_id.len()).chain([ALL.len(), 4]).max().unwrap_or(4);
        let mut s = format!("{:id_w$}  {:^26}  {:^17}\n", "", "CD", "LCM");
        s.push_str(&format!(
            "{:id_w$}  {:>8} {:>8} {:>8}  {:>8} {:>8}\n",
            "pair", "Kappa", "Dice", "Tot.acc", "Kappa", "Tot.acc"
        ));
        let line = |r: &EvalRow| {
            let mut l = format!("{:id_w$} ", r.pair_id);
            for (i, v) in r.values().into_iter().enumerate() {
                if i == 3 {
                    l.push(' ');
                }
                match v {
                    Some(v) => l.push_str(&format!(" {:>8.2}", 100.0 * v)),
                    None => l.push_str(&format!(" {:>8}", "-")),
                }
            }
            l.push('\n');
            l
        };
        for r in &self.rows {
            s.push_str(&line(r));
        }
        s.push_str(&line(&self.aggregate));
        s
    }
}

/// Predictions written by `semcd predict` or `semcd baseline`:
/// `<dir>/<pair_id>/change.png`, plus `lcm1.png` and `lcm2.png` when the
/// strategy produces land cover.
pub fn read_predictions(dir: &Path, pair_id: &str, land_cover: &Nomenclature) -> Result<Decoded> {
    let d = dir.join(pair_id);
    let err = |role: &str, e: Error| Error::Pair { pair_id: pair_id.into(), role: role.into(), msg: e.to_string() };
    let change_path = d.join("change.png");
    if !change_path.exists() {
        return Err(Error::Pair { pair_id: pair_id.into(), role: "change prediction".into(), msg: format!("{} not found", change_path.display()) });
    }
    let change = read_labels(&change_path, &Nomenclature::binary_change()).map_err(|e| err("change prediction", e))?;
    let lcm = |role: &str| -> Result<Option<LabelMap>> {
        let p = d.join(format!("{role}.png"));
        if !p.exists() {
            return Ok(None);
        }
        read_labels(&p, land_cover).map(Some).map_err(|e| err(&format!("{role} prediction"), e))
    };
    let (lcm1, lcm2) = (lcm("lcm1")?, lcm("lcm2")?);
    Ok(Decoded { change, lcm1, lcm2, semantic: None })
}

/// Evaluates a prediction directory against one split of a dataset.
pub fn evaluate_dir(index: &DatasetIndex, split: Option<Split>, pred_dir: &Path) -> Result<Evaluation> {
    let mut items = Vec::new();
    for e in index.entries(split) {
        let decoded = read_predictions(pred_dir, &e.pair_id, &index.nomenclature)?;
        items.push((decoded, index.load(e)?));
    }
    evaluate(&items, &index.nomenclature)
}

/// Accumulates the transition table over pairs carrying both land-cover
/// maps; the change map is derived from them when absent.
pub fn imbalance(pairs: &[ImagePair], land_cover: &Nomenclature) -> Result<ImbalanceTable> {
    let mut t = ImbalanceTable::new(land_cover);
    for p in pairs {
        let (Some(a), Some(b)) = (&p.lcm1, &p.lcm2) else {
            return Err(Error::Pair { pair_id: p.pair_id.clone(), role: "lcm1/lcm2".into(), msg: "change statistics need both land-cover maps".into() });
        };
        let derived;
        let change = match &p.change {
            Some(c) => c,
            None => {
                derived = compare_lcms(land_cover, a, b)?;
                &derived
            }
        };
        t.add(land_cover, a, b, change)?;
    }
    Ok(t)
}

/// The transition matrix (rows: first date, columns: second date) with the
/// no-change row, followed by one `from→to pct` line per transition.
pub fn render_imbalance(t: &ImbalanceTable, land_cover: &Nomenclature) -> String {
    let name = |c: u8| land_cover.name(c).unwrap_or("?").to_string();
    let row_w = t.classes.iter().map(|&c| name(c).len() + 4).chain(["No change".len()]).max().unwrap_or(9);
    let mut s = format!("Change class imbalance over {} labelled pixels\n", t.labelled);
    s.push_str(&format!("{:row_w$}", "from \\ to"));
    for c in &t.classes {
        s.push_str(&format!(" {c:>9}"));
    }
    s.push('\n');
    for &from in &t.classes {
        s.push_str(&format!("{:row_w$}", format!("{from} {}", name(from))));
        for &to in &t.classes {
            s.push_str(&format!(" {:>8.3}%", t.transition_percent(from, to).unwrap_or(0.0)));
        }
        s.push('\n');
    }
    s.push_str(&format!("No change {:.3}%\n\n", t.no_change_percent()));
    for &from in &t.classes {
        for &to in &t.classes {
            s.push_str(&format!("{from}→{to} {:.3}%\n", t.transition_percent(from, to).unwrap_or(0.0)));
        }
    }
    s
}
