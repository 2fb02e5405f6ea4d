//! Image- and pixel-level evaluation: AUROC (Mann-Whitney), F1-max, and the
//! per-category report.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::ScoreRecord;
use crate::error::{Error, Result};
use crate::interchange::{Label, Manifest, Split};
use crate::interest::GridMask;
use crate::patch::{upsample_map, AnomalyMap};

/// Side length maps and ground truth are resized to for pixel AUROC.
pub const PIXEL_EVAL_SIDE: usize = 256;

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "scores vs labels".into(),
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::MetricUndefined("NaN score"));
    }
    Ok(())
}

/// Area under the ROC curve as the Mann-Whitney statistic
/// `P(anomalous > normal) + P(tie) / 2`, via tie-averaged ranks.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::MetricUndefined("AUROC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum = 0.0f64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share their average
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum += avg_rank * pos_in_group as f64;
        start = end;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Max {
    pub value: f64,
    pub threshold: f64,
}

/// F1 of the anomalous class from confusion counts; 0 when nothing is
/// predicted correctly.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Best F1 over thresholds at every observed score, predicting anomalous
/// when `score >= t`. The lowest maximizing threshold is returned.
pub fn f1_max(scores: &[f64], labels: &[bool]) -> Result<F1Max> {
    check_inputs(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::MetricUndefined("F1 needs at least one positive"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = F1Max {
        value: -1.0,
        threshold: f64::INFINITY,
    };
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let f1 = f1_from_counts(tp, fp, positives - tp);
        // descending sweep: ">=" moves ties to the lower threshold
        if f1 >= best.value {
            best = F1Max {
                value: f1,
                threshold: t,
            };
        }
    }
    Ok(best)
}

/// Nearest-neighbor resize of a binary mask, half-pixel centers.
pub fn upsample_mask(mask: &GridMask, side: usize) -> GridMask {
    let index = |dst: usize, len: usize| {
        (((dst as f64 + 0.5) * len as f64 / side as f64).floor() as usize).min(len - 1)
    };
    let mut cells = Vec::with_capacity(side * side);
    for r in 0..side {
        let sr = index(r, mask.height);
        for c in 0..side {
            cells.push(mask.cells[sr * mask.width + index(c, mask.width)]);
        }
    }
    GridMask {
        height: side,
        width: side,
        cells,
    }
}

/// Pixel AUROC over maps and ground-truth masks resized to `side x side`.
/// A missing mask means no anomalous pixels.
pub fn pixel_auroc(pairs: &[(&AnomalyMap, Option<&GridMask>)], side: usize) -> Result<f64> {
    let mut scores = Vec::with_capacity(pairs.len() * side * side);
    let mut labels = Vec::with_capacity(scores.capacity());
    for (map, gt) in pairs {
        let up = upsample_map(map, side)?;
        scores.extend_from_slice(&up.data);
        match gt {
            Some(m) => labels.extend(upsample_mask(m, side).cells),
            None => labels.extend(std::iter::repeat_n(false, side * side)),
        }
    }
    auroc(&scores, &labels)
}

/// Arithmetic mean of per-category values.
pub fn category_mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub category: String,
    pub n_test: usize,
    pub n_normal: usize,
    pub n_structural: usize,
    pub n_logical: usize,
    pub auroc: Option<f64>,
    pub f1_max: Option<f64>,
    pub f1_threshold: Option<f64>,
    pub auroc_logical: Option<f64>,
    pub auroc_structural: Option<f64>,
    pub pixel_auroc: Option<f64>,
    /// Why any metric above is null.
    pub notes: Vec<String>,
}

/// Metrics over the manifest's test split. Labels come from the manifest.
pub fn report(per_image: &[ScoreRecord], manifest: &Manifest) -> Result<Report> {
    let by_id: HashMap<&str, &ScoreRecord> =
        per_image.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let test: Vec<_> = manifest.split(Split::Test).collect();
    let unscored: Vec<String> = test
        .iter()
        .filter(|r| !by_id.contains_key(r.image_id.as_str()))
        .map(|r| r.image_id.clone())
        .collect();
    if !unscored.is_empty() {
        return Err(Error::Unscored(unscored));
    }

    let mut notes = Vec::new();
    let rows: Vec<(f64, Label)> = test
        .iter()
        .map(|r| (by_id[r.image_id.as_str()].s, r.label))
        .collect();
    let subset = |keep: &dyn Fn(Label) -> bool| -> (Vec<f64>, Vec<bool>) {
        rows.iter()
            .filter(|(_, l)| keep(*l))
            .map(|&(s, l)| (s, l.is_anomalous()))
            .unzip()
    };
    let mut metric = |name: &str, keep: &dyn Fn(Label) -> bool| -> Option<f64> {
        let (s, l) = subset(keep);
        match auroc(&s, &l) {
            Ok(v) => Some(v),
            Err(e) => {
                notes.push(format!("{name}: {e}"));
                None
            }
        }
    };
    let overall = metric("auroc", &|_| true);
    let logical = metric("auroc_logical", &|l| l != Label::StructuralAnomaly);
    let structural = metric("auroc_structural", &|l| l != Label::LogicalAnomaly);

    let (s, l) = subset(&|_| true);
    let f1 = match f1_max(&s, &l) {
        Ok(f) => Some(f),
        Err(e) => {
            notes.push(format!("f1_max: {e}"));
            None
        }
    };
    let count = |label: Label| test.iter().filter(|r| r.label == label).count();
    Ok(Report {
        category: manifest.category.clone(),
        n_test: test.len(),
        n_normal: count(Label::Normal),
        n_structural: count(Label::StructuralAnomaly),
        n_logical: count(Label::LogicalAnomaly),
        auroc: overall,
        f1_max: f1.map(|f| f.value),
        f1_threshold: f1.map(|f| f.threshold),
        auroc_logical: logical,
        auroc_structural: structural,
        pixel_auroc: None,
        notes,
    })
}

pub fn write_report_json(report: &Report, destination: impl AsRef<Path>) -> Result<()> {
    let destination = destination.as_ref();
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(destination, text).map_err(|e| Error::io(destination, e))
}

/// `metric,value` rows; null metrics have an empty value.
pub fn write_report_csv(report: &Report, destination: impl AsRef<Path>) -> Result<()> {
    let destination = destination.as_ref();
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut text = String::from("metric,value\n");
    for (name, value) in [
        ("auroc", fmt(report.auroc)),
        ("f1_max", fmt(report.f1_max)),
        ("f1_threshold", fmt(report.f1_threshold)),
        ("auroc_logical", fmt(report.auroc_logical)),
        ("auroc_structural", fmt(report.auroc_structural)),
        ("pixel_auroc", fmt(report.pixel_auroc)),
        ("n_test", report.n_test.to_string()),
        ("n_normal", report.n_normal.to_string()),
        ("n_structural", report.n_structural.to_string()),
        ("n_logical", report.n_logical.to_string()),
    ] {
        text.push_str(&format!("{name},{value}\n"));
    }
    std::fs::write(destination, text).map_err(|e| Error::io(destination, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    image_id: String,
    s_p: f64,
    s_in: f64,
    s_c: u8,
    s: f64,
    label: String,
}

/// Flat per-image score file: `image_id,s_p,s_in,s_c,s,label`.
pub fn write_scores_csv(records: &[ScoreRecord], destination: impl AsRef<Path>) -> Result<()> {
    let destination = destination.as_ref();
    let to_err = |e: csv::Error| Error::io(destination, std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_path(destination).map_err(to_err)?;
    for r in records {
        w.serialize(CsvRow {
            image_id: r.image_id.clone(),
            s_p: r.s_p,
            s_in: r.s_in,
            s_c: r.s_c,
            s: r.s,
            label: r.label.clone(),
        })
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(destination, e))
}

pub fn read_scores_csv(source: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let source = source.as_ref();
    let mut r = csv::Reader::from_path(source)
        .map_err(|e| Error::io(source, std::io::Error::other(e.to_string())))?;
    let mut out = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for (line, row) in r.deserialize::<CsvRow>().enumerate() {
        match row {
            Ok(row) => {
                if !seen.insert(row.image_id.clone()) {
                    errors.push(format!(
                        "row {}: duplicate image_id {:?}",
                        line + 1,
                        row.image_id
                    ));
                }
                out.push(ScoreRecord {
                    image_id: row.image_id,
                    label: row.label,
                    s_p: row.s_p,
                    s_in: row.s_in,
                    s_c: row.s_c,
                    s: row.s,
                    verdicts: Vec::new(),
                    flags: Vec::new(),
                });
            }
            Err(e) => errors.push(format!("row {}: {e}", line + 1)),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::Validation(errors))
    }
}
