//! Analysis over evaluation and generation outputs: entropy and similarity
//! versus accuracy, length histograms, and a least-squares predictor of the
//! compression rate.

use std::collections::BTreeMap;
use std::io;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, embed, EmbedError, EmbeddingProvider};
use crate::eval::EvalRecord;
use crate::selfinstruct::GenRecord;
use crate::text::{sentence_entropy, FrequencyModel, Segmenter};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("need at least {needed} rows for {features} features, got {rows}")]
    TooFewRows { rows: usize, features: usize, needed: usize },
    #[error("design matrix is rank deficient: `{feature}` is collinear with the preceding columns")]
    RankDeficient { feature: String },
    #[error("bin width must be at least 1")]
    InvalidBinWidth,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub const FEATURE_NAMES: [&str; 3] = ["original_length", "mean_entropy", "sum_entropy"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    /// Words.
    pub original_length: f64,
    /// Bits.
    pub mean_entropy: f64,
    /// Bits.
    pub sum_entropy: f64,
    pub compression_rate: f64,
}

impl FeatureRow {
    pub fn features(&self) -> [f64; 3] {
        [self.original_length, self.mean_entropy, self.sum_entropy]
    }
}

/// Rows from generated summaries; the target is the achieved ratio.
pub fn feature_rows(records: &[GenRecord], model: &FrequencyModel, segmenter: &dyn Segmenter) -> Vec<FeatureRow> {
    records
        .iter()
        .filter_map(|r| {
            let e = sentence_entropy(model, segmenter, &r.original_text).ok()?;
            Some(FeatureRow {
                original_length: e.n as f64,
                mean_entropy: e.mean_bits,
                sum_entropy: e.sum_bits,
                compression_rate: r.achieved_ratio,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    /// `(name, value)`, intercept first.
    pub coefficients: Vec<(String, f64)>,
    pub rmse: f64,
    pub r_squared: f64,
    /// Predicted versus actual; `None` when either side is constant.
    pub pearson_r: Option<f64>,
    /// Each feature versus the target.
    pub feature_pearson: Vec<(String, Option<f64>)>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl RegressionFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.coefficients.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        self.coefficients[0].1 + self.coefficients[1..].iter().zip(features).map(|((_, b), x)| b * x).sum::<f64>()
    }
}

/// Relative size below which an `R` diagonal entry counts as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Ordinary least squares with an intercept, by Householder QR.
///
/// Column `j` is declared collinear when `|R[j,j]| <= tol * ||X[:,j]||`.
pub fn fit_ols_matrix(names: &[&str], x: &[Vec<f64>], y: &[f64]) -> Result<RegressionFit, AnalyticsError> {
    let n = y.len();
    let p = names.len() + 1;
    if n < p + 1 || x.len() != n {
        return Err(AnalyticsError::TooFewRows { rows: n.min(x.len()), features: names.len(), needed: p + 1 });
    }
    let design = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
    let target = DVector::from_column_slice(y);
    let qr = design.clone().qr();
    let r = qr.r();
    for j in 0..p {
        let scale = design.column(j).norm();
        if r[(j, j)].abs() <= RANK_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
            let feature = if j == 0 { "intercept".to_string() } else { names[j - 1].to_string() };
            return Err(AnalyticsError::RankDeficient { feature });
        }
    }
    let qty = qr.q().transpose() * &target;
    let beta = r.solve_upper_triangular(&qty).ok_or_else(|| AnalyticsError::RankDeficient { feature: "intercept".into() })?;
    let fitted_v = &design * &beta;
    let fitted: Vec<f64> = fitted_v.iter().copied().collect();
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, f)| a - f).collect();
    let ss_res: f64 = residuals.iter().map(|e| e * e).sum();
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else if ss_res == 0.0 { 1.0 } else { 0.0 };
    let mut coefficients = vec![("intercept".to_string(), beta[0])];
    coefficients.extend(names.iter().zip(beta.iter().skip(1)).map(|(n, b)| (n.to_string(), *b)));
    let feature_pearson = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col: Vec<f64> = x.iter().map(|row| row[j]).collect();
            (name.to_string(), pearson(&col, y))
        })
        .collect();
    Ok(RegressionFit {
        coefficients,
        rmse: (ss_res / n as f64).sqrt(),
        r_squared: r_squared.min(1.0),
        pearson_r: pearson(&fitted, y),
        feature_pearson,
        fitted,
        residuals,
    })
}

pub fn fit_ols(rows: &[FeatureRow]) -> Result<RegressionFit, AnalyticsError> {
    let x: Vec<Vec<f64>> = rows.iter().map(|r| r.features().to_vec()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.compression_rate).collect();
    fit_ols_matrix(&FEATURE_NAMES, &x, &y)
}

/// Pearson correlation, clamped to `[-1, 1]`; `None` for constant inputs.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let (ma, mb) = (a[..n].iter().sum::<f64>() / n as f64, b[..n].iter().sum::<f64>() / n as f64);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (da, db) = (a[i] - ma, b[i] - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub setting: String,
    pub questions: usize,
    /// Mean sentence entropy (bits) or mean cosine, over records with context.
    pub x: f64,
    pub accuracy: f64,
}

/// Records grouped by setting label, in first-appearance order.
fn group_by_setting(records: &[EvalRecord]) -> IndexMap<&str, Vec<&EvalRecord>> {
    let mut groups: IndexMap<&str, Vec<&EvalRecord>> = IndexMap::new();
    for r in records {
        groups.entry(r.setting.as_str()).or_default().push(r);
    }
    groups
}

fn curve(
    records: &[EvalRecord],
    measure: impl Fn(&EvalRecord) -> Result<Option<f64>, AnalyticsError>,
) -> Result<Vec<CurvePoint>, AnalyticsError> {
    let mut points = Vec::new();
    for (setting, group) in group_by_setting(records) {
        let mut xs = Vec::new();
        for r in &group {
            if let Some(x) = measure(r)? {
                xs.push(x);
            }
        }
        if xs.is_empty() {
            log::warn!("setting {setting}: no record carries a context; skipped");
            continue;
        }
        let correct = group.iter().filter(|r| r.correct).count();
        points.push(CurvePoint {
            setting: setting.to_string(),
            questions: group.len(),
            x: xs.iter().sum::<f64>() / xs.len() as f64,
            accuracy: correct as f64 / group.len() as f64,
        });
    }
    Ok(points)
}

/// One point per setting: mean entropy of the compressed contexts against
/// accuracy over all of the setting's questions.
pub fn entropy_accuracy_curve(
    records: &[EvalRecord],
    model: &FrequencyModel,
    segmenter: &dyn Segmenter,
) -> Result<Vec<CurvePoint>, AnalyticsError> {
    curve(records, |r| Ok(sentence_entropy(model, segmenter, &r.context_compressed).ok().map(|e| e.mean_bits)))
}

/// One point per setting: mean cosine between original and compressed
/// context embeddings against accuracy.
pub fn similarity_accuracy_curve(
    records: &[EvalRecord],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<CurvePoint>, AnalyticsError> {
    curve(records, |r| {
        if r.context_original.trim().is_empty() || r.context_compressed.trim().is_empty() {
            return Ok(None);
        }
        let a = embed(provider, &r.context_original)?;
        let b = embed(provider, &r.context_compressed)?;
        Ok(Some(cosine(&a, &b)?))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bin {
    /// Inclusive.
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub count: usize,
}

/// Counts per `[k*w, (k+1)*w)`; empty bins are omitted.
pub fn length_histogram(lengths: &[usize], width: usize) -> Result<Vec<Bin>, AnalyticsError> {
    if width == 0 {
        return Err(AnalyticsError::InvalidBinWidth);
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in lengths {
        *counts.entry(l / width).or_insert(0) += 1;
    }
    Ok(counts.into_iter().map(|(k, count)| Bin { start: k * width, end: (k + 1) * width, count }).collect())
}

pub fn text_length_histogram<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    segmenter: &dyn Segmenter,
    width: usize,
) -> Result<Vec<Bin>, AnalyticsError> {
    let lengths: Vec<usize> = texts.into_iter().map(|t| segmenter.word_count(t)).collect();
    length_histogram(&lengths, width)
}

/// Header `setting,questions,<x_name>,accuracy`.
pub fn write_curve_csv<W: io::Write>(w: W, x_name: &str, points: &[CurvePoint]) -> Result<(), AnalyticsError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["setting", "questions", x_name, "accuracy"])?;
    for p in points {
        out.write_record([p.setting.clone(), p.questions.to_string(), p.x.to_string(), p.accuracy.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Header `bin_start,bin_end,count`.
pub fn write_histogram_csv<W: io::Write>(w: W, bins: &[Bin]) -> Result<(), AnalyticsError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bin_start", "bin_end", "count"])?;
    for b in bins {
        out.serialize((b.start, b.end, b.count))?;
    }
    out.flush()?;
    Ok(())
}

/// Header `term,value`: coefficients, then `rmse`, `r_squared`, `pearson_r`
/// and `pearson_<feature>` (empty when undefined).
pub fn write_regression_csv<W: io::Write>(w: W, fit: &RegressionFit) -> Result<(), AnalyticsError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["term", "value"])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for (name, v) in &fit.coefficients {
        out.write_record([name.clone(), v.to_string()])?;
    }
    out.write_record(["rmse".to_string(), fit.rmse.to_string()])?;
    out.write_record(["r_squared".to_string(), fit.r_squared.to_string()])?;
    out.write_record(["pearson_r".to_string(), opt(fit.pearson_r)])?;
    for (name, v) in &fit.feature_pearson {
        out.write_record([format!("pearson_{name}"), opt(*v)])?;
    }
    out.flush()?;
    Ok(())
}
