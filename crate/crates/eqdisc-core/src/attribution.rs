//! Input ranking by Monte-Carlo permutation Shapley values over a k-nearest
//! neighbor surrogate, plus feature-space enrichment with derived columns.

use crate::dataset::{column_stats, Column, Dataset};
use crate::units::DimVector;
use crate::{Error, Result};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Rows actually evaluated by the Shapley estimator; larger datasets are
/// strided down to this many rows.
const MAX_EVAL_ROWS: usize = 256;

/// Training rows kept for the surrogate; larger datasets are strided.
const MAX_SURROGATE_ROWS: usize = 2048;

pub const DEFAULT_BACKGROUND: usize = 64;
pub const DEFAULT_PERMUTATIONS: usize = 200;

/// Distance-weighted k-nearest-neighbor regressor on standardized features.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    means: Vec<f64>,
    stds: Vec<f64>,
    /// Standardized training rows, b×p.
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    pub k: usize,
}

impl SurrogateModel {
    pub fn num_features(&self) -> usize {
        self.means.len()
    }

    fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Inverse-distance weighted mean of the k nearest training rows; an
    /// exact match short-circuits to that row's y.
    pub fn predict(&self, row: &[f64]) -> f64 {
        assert_eq!(row.len(), self.means.len());
        let q = self.standardize(row);
        let mut dists: Vec<(f64, usize)> = self
            .x
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let d2: f64 = t.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum();
                (d2.sqrt(), i)
            })
            .collect();
        let k = self.k.min(dists.len());
        dists.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
        let nearest = &dists[..k];
        if let Some((_, i)) = nearest.iter().find(|(d, _)| *d == 0.0) {
            return self.y[*i];
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (d, i) in nearest {
            let w = 1.0 / (d + 1e-12);
            num += w * self.y[*i];
            den += w;
        }
        num / den
    }
}

/// Fits the k-NN surrogate, k = min(10, b−1), standardizing each feature;
/// constant features standardize to zero.
pub fn fit_surrogate(x: &DMatrix<f64>, y: &[f64]) -> Result<SurrogateModel> {
    let b = x.nrows();
    let p = x.ncols();
    if y.len() != b {
        return Err(Error::InvalidInput(format!(
            "fit_surrogate: {} rows but {} targets",
            b,
            y.len()
        )));
    }
    if b < 3 {
        return Err(Error::InvalidInput(
            "fit_surrogate needs at least 3 rows".into(),
        ));
    }
    let stride = b.div_ceil(MAX_SURROGATE_ROWS);
    let kept: Vec<usize> = (0..b).step_by(stride).collect();
    let mut means = vec![0.0; p];
    let mut stds = vec![1.0; p];
    for j in 0..p {
        let vals: Vec<f64> = kept.iter().map(|&i| x[(i, j)]).collect();
        let stats = column_stats(&vals);
        means[j] = stats.mean;
        if stats.variance.sqrt() > 0.0 {
            stds[j] = stats.variance.sqrt();
        }
    }
    let xs: Vec<Vec<f64>> = kept
        .iter()
        .map(|&i| {
            (0..p)
                .map(|j| (x[(i, j)] - means[j]) / stds[j])
                .collect()
        })
        .collect();
    let ys: Vec<f64> = kept.iter().map(|&i| y[i]).collect();
    let k = 10.min(xs.len() - 1).max(1);
    Ok(SurrogateModel {
        means,
        stds,
        x: xs,
        y: ys,
        k,
    })
}

/// Per-feature attribution summary: mean |φ| over evaluated rows, features
/// ranked by descending attribution.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionReport {
    pub mean_abs_shap: Vec<f64>,
    /// Feature indices sorted by (mean |φ| descending, index ascending).
    pub ranking: Vec<usize>,
    pub selected: Vec<usize>,
}

/// Marginal contributions for one evaluation row: for each sampled feature
/// ordering, reveal features one at a time on top of a drawn background row
/// and credit each feature with the change in prediction.
fn row_phis(
    model: &SurrogateModel,
    row: &[f64],
    background: &[Vec<f64>],
    n_permutations: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let p = row.len();
    let mut order: Vec<usize> = (0..p).collect();
    let mut phis = vec![0.0; p];
    for _ in 0..n_permutations {
        order.shuffle(rng);
        let bg = &background[rng.gen_range(0..background.len())];
        let mut composite = bg.clone();
        let mut prev = model.predict(&composite);
        for &j in &order {
            composite[j] = row[j];
            let cur = model.predict(&composite);
            phis[j] += cur - prev;
            prev = cur;
        }
    }
    for v in &mut phis {
        *v /= n_permutations as f64;
    }
    phis
}

/// Per-row Shapley attributions for a subsample of evaluation rows.
/// Deterministic for a fixed seed, independent of thread count: each
/// evaluation row derives its own RNG from the seed. Returns the evaluated
/// row indices alongside one φ vector per evaluated row.
pub fn shapley_matrix(
    model: &SurrogateModel,
    x: &DMatrix<f64>,
    background_size: usize,
    n_permutations: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let b = x.nrows();
    let p = x.ncols();
    if p != model.num_features() {
        return Err(Error::InvalidInput(format!(
            "shapley_values: model has {} features, data has {p}",
            model.num_features()
        )));
    }
    if n_permutations == 0 {
        return Err(Error::InvalidInput(
            "shapley_values needs at least 1 permutation".into(),
        ));
    }
    if b == 0 {
        return Err(Error::InvalidInput("shapley_values: empty data".into()));
    }
    let rows: Vec<Vec<f64>> = (0..b).map(|i| x.row(i).iter().copied().collect()).collect();

    let mut bg_rng = ChaCha8Rng::seed_from_u64(seed);
    let bg_size = background_size.min(b).max(1);
    let bg_idx = rand::seq::index::sample(&mut bg_rng, b, bg_size);
    let background: Vec<Vec<f64>> = bg_idx.iter().map(|i| rows[i].clone()).collect();

    let stride = b.div_ceil(MAX_EVAL_ROWS);
    let eval_idx: Vec<usize> = (0..b).step_by(stride).collect();

    let per_row: Vec<Vec<f64>> = eval_idx
        .par_iter()
        .map(|&i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            row_phis(model, &rows[i], &background, n_permutations, &mut rng)
        })
        .collect();
    Ok((eval_idx, per_row))
}

/// Monte-Carlo permutation Shapley attribution of the surrogate's output to
/// each feature, summarized as the mean |φ| per feature.
pub fn shapley_values(
    model: &SurrogateModel,
    x: &DMatrix<f64>,
    background_size: usize,
    n_permutations: usize,
    seed: u64,
) -> Result<AttributionReport> {
    let p = x.ncols();
    let (_, per_row) = shapley_matrix(model, x, background_size, n_permutations, seed)?;

    let mut mean_abs = vec![0.0; p];
    for phis in &per_row {
        for (acc, v) in mean_abs.iter_mut().zip(phis) {
            *acc += v.abs();
        }
    }
    for v in &mut mean_abs {
        *v /= per_row.len() as f64;
    }
    let mut ranking: Vec<usize> = (0..p).collect();
    ranking.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]).then(a.cmp(&b)));
    Ok(AttributionReport {
        mean_abs_shap: mean_abs,
        ranking,
        selected: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectPolicy {
    TopK(usize),
    /// Smallest ranked prefix whose attribution mass reaches the threshold,
    /// capped at 8 features.
    CumThreshold(f64),
}

pub fn select_inputs(report: &AttributionReport, policy: SelectPolicy) -> Result<Vec<usize>> {
    let p = report.mean_abs_shap.len();
    match policy {
        SelectPolicy::TopK(k) => {
            if k > p {
                return Err(Error::InvalidInput(format!(
                    "select_inputs: top_k {k} exceeds {p} features"
                )));
            }
            Ok(report.ranking[..k].to_vec())
        }
        SelectPolicy::CumThreshold(t) => {
            let total: f64 = report.mean_abs_shap.iter().sum();
            if total <= 0.0 {
                return Ok(Vec::new());
            }
            let mut acc = 0.0;
            let mut out = Vec::new();
            for &j in &report.ranking {
                out.push(j);
                acc += report.mean_abs_shap[j];
                if acc / total >= t || out.len() == 8 {
                    break;
                }
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Cos,
    Sin,
    Tan,
    Exp,
    Abs,
    Log,
    Sqrt,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 7] = [
        UnaryOp::Cos,
        UnaryOp::Sin,
        UnaryOp::Tan,
        UnaryOp::Exp,
        UnaryOp::Abs,
        UnaryOp::Log,
        UnaryOp::Sqrt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Cos => "cos",
            UnaryOp::Sin => "sin",
            UnaryOp::Tan => "tan",
            UnaryOp::Exp => "exp",
            UnaryOp::Abs => "abs",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            UnaryOp::Cos => v.cos(),
            UnaryOp::Sin => v.sin(),
            UnaryOp::Tan => v.tan(),
            UnaryOp::Exp => v.exp(),
            UnaryOp::Abs => v.abs(),
            UnaryOp::Log => v.ln(),
            UnaryOp::Sqrt => v.sqrt(),
        }
    }

    /// None when the unit forbids the op; Some(result unit) otherwise.
    fn result_unit(self, unit: &DimVector) -> Option<DimVector> {
        match self {
            UnaryOp::Abs => Some(*unit),
            UnaryOp::Sqrt => Some(unit.scale(crate::rat::ratq(1, 2))),
            _ if unit.is_dimensionless() => Some(*unit),
            _ => None,
        }
    }

    /// Reason string when some row violates the op's domain.
    fn domain_violation(self, values: &[f64]) -> Option<&'static str> {
        match self {
            UnaryOp::Log => values.iter().any(|&v| v <= 0.0).then_some("log of <= 0"),
            UnaryOp::Sqrt => values
                .iter()
                .any(|&v| v < 0.0)
                .then_some("sqrt of negative"),
            UnaryOp::Tan => values
                .iter()
                .any(|&v| {
                    let r = (v / std::f64::consts::PI - 0.5).rem_euclid(1.0);
                    r.min(1.0 - r) * std::f64::consts::PI < 1e-6
                })
                .then_some("tan near pole"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 4] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div];

    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    fn ordered(self) -> bool {
        matches!(self, BinaryOp::Sub | BinaryOp::Div)
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }

    fn result_unit(self, a: &DimVector, b: &DimVector) -> Option<DimVector> {
        match self {
            BinaryOp::Add | BinaryOp::Sub => (a == b).then_some(*a),
            BinaryOp::Mul => Some(a.add(b)),
            BinaryOp::Div => Some(a.sub(b)),
        }
    }
}

/// One skipped derived column and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedFeature {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct EnrichSummary {
    pub added: Vec<String>,
    pub skipped: Vec<SkippedFeature>,
}

/// Appends derived columns for every admissible (op, column) pairing.
/// Columns that would violate unit rules, op domains, or produce non-finite
/// values are skipped and reported in the summary.
pub fn enrich_features(
    ds: &Dataset,
    unary: &[UnaryOp],
    binary: &[BinaryOp],
) -> (Dataset, EnrichSummary) {
    let mut out = ds.clone();
    let mut summary = EnrichSummary::default();
    let base: Vec<Column> = ds.columns().to_vec();

    let push = |out: &mut Dataset,
                    summary: &mut EnrichSummary,
                    name: String,
                    unit: Option<DimVector>,
                    domain_err: Option<&str>,
                    values: Vec<f64>| {
        let Some(unit) = unit else {
            summary.skipped.push(SkippedFeature {
                name,
                reason: "unit rule".into(),
            });
            return;
        };
        if let Some(reason) = domain_err {
            summary.skipped.push(SkippedFeature {
                name,
                reason: reason.into(),
            });
            return;
        }
        if values.iter().any(|v| !v.is_finite()) {
            summary.skipped.push(SkippedFeature {
                name,
                reason: "non-finite result".into(),
            });
            return;
        }
        if out.column(&name).is_some() {
            summary.skipped.push(SkippedFeature {
                name,
                reason: "name collision".into(),
            });
            return;
        }
        let added = name.clone();
        out.push_column(Column {
            name,
            unit,
            values,
        })
        .expect("length verified by construction");
        summary.added.push(added);
    };

    for op in unary {
        for col in &base {
            let name = format!("{}({})", op.name(), col.name);
            let unit = op.result_unit(&col.unit);
            let domain_err = op.domain_violation(&col.values);
            let values = col.values.iter().map(|&v| op.apply(v)).collect();
            push(&mut out, &mut summary, name, unit, domain_err, values);
        }
    }
    for op in binary {
        for (i, a) in base.iter().enumerate() {
            for (j, b) in base.iter().enumerate() {
                if i == j || (!op.ordered() && j < i) {
                    continue;
                }
                let name = format!("{}{}{}", a.name, op.symbol(), b.name);
                let unit = op.result_unit(&a.unit, &b.unit);
                let domain_err = (*op == BinaryOp::Div
                    && b.values.iter().any(|&v| v == 0.0))
                .then_some("division by zero");
                let values = a
                    .values
                    .iter()
                    .zip(&b.values)
                    .map(|(&x, &y)| op.apply(x, y))
                    .collect();
                push(&mut out, &mut summary, name, unit, domain_err, values);
            }
        }
    }
    (out, summary)
}
