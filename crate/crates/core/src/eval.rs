//! ROC curves, Mann–Whitney AUC and the DeLong test for two correlated AUCs.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Aligned anomaly scores and {0,1} labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::InvalidScores(format!(
                "{} scores vs {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidScores(format!("label {l} is not 0 or 1")));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidScores("NaN score".into()));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    fn require_both_classes(&self) -> Result<(usize, usize)> {
        let (p, n) = (self.positives(), self.negatives());
        if p == 0 || n == 0 {
            return Err(Error::InvalidScores(format!(
                "AUC needs both classes, got {p} positive and {n} negative"
            )));
        }
        Ok((p, n))
    }
}

/// 1-based midranks (ties share the mean of their ranks).
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs the scores
/// order correctly, ties counted as one half.
pub fn auc(s: &ScoredSet) -> Result<f64> {
    let (n_pos, n_neg) = s.require_both_classes()?;
    let ranks = midranks(&s.scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(&s.labels)
        .filter(|(_, &l)| l == 1)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC polyline from (0,0) to (1,1) with one vertex per distinct score.
pub fn roc_curve(s: &ScoredSet) -> Result<Vec<RocPoint>> {
    let (n_pos, n_neg) = s.require_both_classes()?;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[b].total_cmp(&s.scores[a]));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = s.scores[order[i]];
        while i < order.len() && s.scores[order[i]] == threshold {
            if s.labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a ROC polyline.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// DeLong structural components: one placement value per positive
/// (fraction of negatives it beats) and per negative (fraction of positives
/// that beat it), ties counted as one half.
#[derive(Debug, Clone, PartialEq)]
pub struct Placements {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub auc: f64,
}

pub fn placements(s: &ScoredSet) -> Result<Placements> {
    let (n_pos, n_neg) = s.require_both_classes()?;
    let all = midranks(&s.scores);
    let pos_scores: Vec<f64> = s.iter_class(1).collect();
    let neg_scores: Vec<f64> = s.iter_class(0).collect();
    let pos_ranks = midranks(&pos_scores);
    let neg_ranks = midranks(&neg_scores);
    let (mut positive, mut negative) = (Vec::with_capacity(n_pos), Vec::with_capacity(n_neg));
    let (mut ip, mut ineg) = (0, 0);
    for (r, &l) in all.iter().zip(&s.labels) {
        if l == 1 {
            positive.push((r - pos_ranks[ip]) / n_neg as f64);
            ip += 1;
        } else {
            negative.push(1.0 - (r - neg_ranks[ineg]) / n_pos as f64);
            ineg += 1;
        }
    }
    let auc = positive.iter().sum::<f64>() / n_pos as f64;
    Ok(Placements {
        positive,
        negative,
        auc,
    })
}

impl ScoredSet {
    fn iter_class(&self, class: u8) -> impl Iterator<Item = f64> + '_ {
        self.scores
            .iter()
            .zip(&self.labels)
            .filter(move |(_, &l)| l == class)
            .map(|(&s, _)| s)
    }
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (n - 1) as f64
}

/// DeLong estimate of the variance of a single AUC.
pub fn delong_variance(s: &ScoredSet) -> Result<f64> {
    let p = placements(s)?;
    Ok(
        covariance(&p.positive, &p.positive) / p.positive.len() as f64
            + covariance(&p.negative, &p.negative) / p.negative.len() as f64,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeLongResult {
    pub auc_a: f64,
    pub auc_b: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub covariance: f64,
    /// Variance of `auc_a - auc_b`.
    pub variance: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Two-sided DeLong test of `auc(a) == auc(b)` for scores on the same samples.
pub fn delong_test(a: &ScoredSet, b: &ScoredSet) -> Result<DeLongResult> {
    if a.labels != b.labels {
        return Err(Error::InvalidScores(
            "both score sets must share the same samples and labels".into(),
        ));
    }
    let pa = placements(a)?;
    let pb = placements(b)?;
    let (m, n) = (pa.positive.len() as f64, pa.negative.len() as f64);
    let var_a =
        covariance(&pa.positive, &pa.positive) / m + covariance(&pa.negative, &pa.negative) / n;
    let var_b =
        covariance(&pb.positive, &pb.positive) / m + covariance(&pb.negative, &pb.negative) / n;
    let cov =
        covariance(&pa.positive, &pb.positive) / m + covariance(&pa.negative, &pb.negative) / n;
    let variance = (var_a + var_b - 2.0 * cov).max(0.0);
    let diff = pa.auc - pb.auc;
    let (z, p_value) = if variance > 0.0 {
        let z = diff / variance.sqrt();
        (z, erfc(z.abs() / std::f64::consts::SQRT_2))
    } else if diff == 0.0 {
        (0.0, 1.0)
    } else {
        (f64::INFINITY.copysign(diff), 0.0)
    };
    Ok(DeLongResult {
        auc_a: pa.auc,
        auc_b: pb.auc,
        var_a,
        var_b,
        covariance: cov,
        variance,
        z,
        p_value,
    })
}

/// One row of the score CSV contract: `id,score,label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub score: f64,
    pub label: u8,
}

pub fn read_score_csv(reader: impl Read, context: &str) -> Result<Vec<ScoreRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|source| Error::Csv {
        context: context.into(),
        source,
    })?;
    for col in ["id", "score", "label"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::InvalidScores(format!(
                "{context}: missing column `{col}`"
            )));
        }
    }
    rdr.deserialize()
        .map(|row| {
            row.map_err(|source| Error::Csv {
                context: context.into(),
                source,
            })
        })
        .collect()
}

pub fn write_score_csv(rows: &[ScoreRow], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let map = |source| Error::Csv {
        context: "score csv".into(),
        source,
    };
    if rows.is_empty() {
        w.write_record(["id", "score", "label"]).map_err(map)?;
    }
    for r in rows {
        w.serialize(r).map_err(map)?;
    }
    w.flush().map_err(|e| Error::io("score csv", e))
}

pub fn scored_set_from_rows(rows: &[ScoreRow]) -> Result<ScoredSet> {
    ScoredSet::new(
        rows.iter().map(|r| r.score).collect(),
        rows.iter().map(|r| r.label).collect(),
    )
}

/// Aligns a second score file to the first by id.
pub fn align_rows(a: &[ScoreRow], b: &[ScoreRow]) -> Result<Vec<ScoreRow>> {
    if a.len() != b.len() {
        return Err(Error::InvalidScores(format!(
            "score files differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let by_id: HashMap<&str, &ScoreRow> = b.iter().map(|r| (r.id.as_str(), r)).collect();
    if by_id.len() != b.len() {
        return Err(Error::InvalidScores(
            "duplicate id in second score file".into(),
        ));
    }
    a.iter()
        .map(|ra| {
            let rb = by_id.get(ra.id.as_str()).ok_or_else(|| {
                Error::InvalidScores(format!("id `{}` missing from second file", ra.id))
            })?;
            if rb.label != ra.label {
                return Err(Error::InvalidScores(format!(
                    "label mismatch for id `{}`",
                    ra.id
                )));
            }
            Ok((*rb).clone())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    pub auc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc_b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delong: Option<DeLongResult>,
}

pub fn evaluate(a: &[ScoreRow], b: Option<&[ScoreRow]>) -> Result<EvalReport> {
    let sa = scored_set_from_rows(a)?;
    let auc_a = auc(&sa)?;
    let (auc_b, delong) = match b {
        Some(b) => {
            let sb = scored_set_from_rows(&align_rows(a, b)?)?;
            let d = delong_test(&sa, &sb)?;
            (Some(d.auc_b), Some(d))
        }
        None => (None, None),
    };
    Ok(EvalReport {
        n: sa.len(),
        n_positive: sa.positives(),
        n_negative: sa.negatives(),
        auc: auc_a,
        auc_b,
        delong,
    })
}
