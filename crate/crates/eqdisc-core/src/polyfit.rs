//! Polynomial least-squares regression from latent variables to the output,
//! plus the R² and complexity metrics used to rank candidates.
//!
//! Latents are standardized before the monomial design matrix is built; the
//! solution is obtained by SVD, which stays stable near rank deficiency and
//! yields the minimum-norm coefficients when the design is singular. The
//! standardization is folded back so reported coefficients apply to raw
//! latent values.

use crate::expr::Expr;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

pub const DEFAULT_DEGREE: usize = 5;
pub const MIN_DEGREE: usize = 1;
pub const MAX_DEGREE: usize = 8;

/// Relative standardized magnitude below which a coefficient is dropped when
/// rendering a model as an expression. Prediction always uses the full
/// coefficient set.
pub const COEFF_PRUNE_REL: f64 = 1e-9;

const CONDITION_WARN_THRESHOLD: f64 = 1e10;

/// A fitted multivariate polynomial y ≈ Σ aₖ·Πᵢ zᵢ^{kᵢ} over Σkᵢ ≤ degree.
#[derive(Debug, Clone)]
pub struct PolynomialModel {
    pub degree: usize,
    /// Monomial multi-indices in graded lexicographic order; first entry is
    /// the constant term (all zeros).
    pub powers: Vec<Vec<u32>>,
    /// Coefficients on raw (unstandardized) latents, aligned with `powers`.
    pub coeffs: Vec<f64>,
    /// Coefficients on standardized latents; kept for stable prediction.
    coeffs_std: Vec<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct FitReport {
    pub r2: f64,
    pub rank_deficient: bool,
    pub condition_warning: bool,
}

impl PolynomialModel {
    pub fn num_latents(&self) -> usize {
        self.means.len()
    }

    /// Predicts one row of latent values via the standardized coefficients.
    pub fn predict_row(&self, z: &[f64]) -> f64 {
        assert_eq!(z.len(), self.means.len());
        let u: Vec<f64> = z
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        let mut acc = 0.0;
        let mut comp = 0.0;
        for (k, c) in self.powers.iter().zip(&self.coeffs_std) {
            neumaier_add(&mut acc, &mut comp, c * monomial(&u, k));
        }
        acc + comp
    }

    pub fn predict(&self, z: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(z.nrows(), |i, _| {
            let row: Vec<f64> = z.row(i).iter().copied().collect();
            self.predict_row(&row)
        })
    }

    /// Predicts via the folded-back raw coefficients; agreement with
    /// `predict_row` is the reporting invariant checked in tests.
    pub fn predict_row_raw(&self, z: &[f64]) -> f64 {
        let mut acc = 0.0;
        let mut comp = 0.0;
        for (k, c) in self.powers.iter().zip(&self.coeffs) {
            neumaier_add(&mut acc, &mut comp, c * monomial(z, k));
        }
        acc + comp
    }

    /// Renders the model as an expression over the given latent expressions,
    /// dropping terms whose standardized coefficient falls below
    /// `COEFF_PRUNE_REL` of the largest one. The standardized scale is
    /// invariant to latent magnitudes, so pruning does not change with the
    /// units of the inputs. Pruning affects rendering and complexity only,
    /// never prediction.
    pub fn to_expr(&self, latents: &[Expr]) -> Expr {
        assert_eq!(latents.len(), self.num_latents());
        let max_std = self
            .coeffs_std
            .iter()
            .fold(0.0f64, |m, c| m.max(c.abs()));
        let mut acc: Option<Expr> = None;
        for ((k, &c), &c_std) in self.powers.iter().zip(&self.coeffs).zip(&self.coeffs_std) {
            if c == 0.0 || c_std.abs() < COEFF_PRUNE_REL * max_std {
                continue;
            }
            acc = Some(match acc {
                None => term_expr(c, latents, k),
                Some(prev) if c < 0.0 => Expr::sub(prev, term_expr(-c, latents, k)),
                Some(prev) => Expr::add(prev, term_expr(c, latents, k)),
            });
        }
        acc.unwrap_or(Expr::Const(0.0))
    }
}

fn term_expr(c: f64, latents: &[Expr], powers: &[u32]) -> Expr {
    let mut prod: Option<Expr> = None;
    for (z, &k) in latents.iter().zip(powers) {
        if k == 0 {
            continue;
        }
        let factor = if k == 1 {
            z.clone()
        } else {
            Expr::pow(z.clone(), crate::rat::rat(k as i128))
        };
        prod = Some(match prod {
            None => factor,
            Some(p) => Expr::mul(p, factor),
        });
    }
    match prod {
        None => Expr::Const(c),
        Some(p) if c == 1.0 => p,
        Some(p) => Expr::mul(Expr::Const(c), p),
    }
}

/// Syntactic complexity of a formula: total node count of its expression
/// tree, with latents expanded into their power products by the caller.
pub fn complexity(e: &Expr) -> usize {
    e.node_count()
}

/// Coefficient of determination 1 − SSres/SStot.
pub fn r_squared(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::InvalidInput(format!(
            "r_squared length mismatch: {} vs {}",
            y.len(),
            y_hat.len()
        )));
    }
    if y.len() < 2 {
        return Err(Error::InvalidInput(
            "r_squared needs at least 2 observations".into(),
        ));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::InvalidInput(
            "r_squared undefined for constant y".into(),
        ));
    }
    let ss_res: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Fits a polynomial of the given total degree to (Z, y) by SVD least
/// squares on standardized latents.
pub fn fit_poly(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    degree: usize,
) -> Result<(PolynomialModel, FitReport)> {
    let b = z.nrows();
    let s = z.ncols();
    if y.len() != b {
        return Err(Error::InvalidInput(format!(
            "fit_poly: {} rows but {} targets",
            b,
            y.len()
        )));
    }
    if b == 0 {
        return Err(Error::InvalidInput("fit_poly: empty dataset".into()));
    }
    if !(MIN_DEGREE..=MAX_DEGREE).contains(&degree) {
        return Err(Error::InvalidInput(format!(
            "fit_poly: degree {degree} outside {MIN_DEGREE}..={MAX_DEGREE}"
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "fit_poly: non-finite latent value".into(),
        ));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "fit_poly: non-finite target value".into(),
        ));
    }

    let mut means = vec![0.0; s];
    let mut stds = vec![1.0; s];
    for j in 0..s {
        let col = z.column(j);
        let mean = col.iter().sum::<f64>() / b as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / b as f64;
        means[j] = mean;
        // A constant latent standardizes to the zero column.
        stds[j] = if var.sqrt() > 0.0 { var.sqrt() } else { 1.0 };
    }

    let powers = monomial_powers(s, degree);
    let t = powers.len();
    let design = DMatrix::from_fn(b, t, |i, jt| {
        let u: Vec<f64> = (0..s).map(|j| (z[(i, j)] - means[j]) / stds[j]).collect();
        monomial(&u, &powers[jt])
    });

    let svd = design.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let tol = f64::EPSILON * max_sv * b.max(t) as f64;
    let rank = svd.singular_values.iter().filter(|&&sv| sv > tol).count();
    let min_sv = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let coeffs_std_vec = svd
        .solve(y, tol)
        .map_err(|e| Error::InvalidInput(format!("fit_poly: SVD solve failed: {e}")))?;
    let coeffs_std: Vec<f64> = coeffs_std_vec.iter().copied().collect();

    let coeffs = fold_back(&powers, &coeffs_std, &means, &stds, s);
    let model = PolynomialModel {
        degree,
        powers,
        coeffs,
        coeffs_std,
        means,
        stds,
    };

    let y_slice: Vec<f64> = y.iter().copied().collect();
    let y_hat: Vec<f64> = (0..b)
        .map(|i| {
            let row: Vec<f64> = z.row(i).iter().copied().collect();
            model.predict_row(&row)
        })
        .collect();
    let r2 = r_squared(&y_slice, &y_hat)?;
    let report = FitReport {
        r2,
        rank_deficient: rank < t,
        condition_warning: !(max_sv / min_sv).is_finite()
            || max_sv / min_sv > CONDITION_WARN_THRESHOLD,
    };
    Ok((model, report))
}

/// All multi-indices (k₁…k_s) with Σkᵢ ≤ degree, graded lexicographic.
pub fn monomial_powers(s: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for total in 0..=degree as u32 {
        let mut cur = vec![0u32; s];
        emit_with_total(s, total, 0, &mut cur, &mut out);
    }
    out
}

fn emit_with_total(s: usize, left: u32, j: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if s == 0 {
        if left == 0 {
            out.push(cur.clone());
        }
        return;
    }
    if j == s - 1 {
        cur[j] = left;
        out.push(cur.clone());
        cur[j] = 0;
        return;
    }
    for k in (0..=left).rev() {
        cur[j] = k;
        emit_with_total(s, left - k, j + 1, cur, out);
        cur[j] = 0;
    }
}

fn monomial(u: &[f64], powers: &[u32]) -> f64 {
    let mut prod = 1.0;
    for (v, &k) in u.iter().zip(powers) {
        if k > 0 {
            prod *= v.powi(k as i32);
        }
    }
    prod
}

fn neumaier_add(acc: &mut f64, comp: &mut f64, v: f64) {
    let t = *acc + v;
    if acc.abs() >= v.abs() {
        *comp += (*acc - t) + v;
    } else {
        *comp += (v - t) + *acc;
    }
    *acc = t;
}

/// Expands Π((zⱼ−μⱼ)/σⱼ)^{kⱼ} monomials into raw-latent coefficients via
/// the binomial theorem, with compensated accumulation per target index.
fn fold_back(
    powers: &[Vec<u32>],
    coeffs_std: &[f64],
    means: &[f64],
    stds: &[f64],
    s: usize,
) -> Vec<f64> {
    let index_of: std::collections::HashMap<&[u32], usize> = powers
        .iter()
        .enumerate()
        .map(|(i, k)| (k.as_slice(), i))
        .collect();
    let mut acc = vec![0.0f64; powers.len()];
    let mut comp = vec![0.0f64; powers.len()];
    let mut target = vec![0u32; s];
    for (k, &c) in powers.iter().zip(coeffs_std) {
        if c == 0.0 {
            continue;
        }
        let scale: f64 = k
            .iter()
            .zip(stds)
            .map(|(&kj, &sj)| sj.powi(kj as i32))
            .product();
        expand(k, 0, c / scale, means, &mut target, &mut |idx, contrib| {
            let slot = index_of[idx];
            neumaier_add(&mut acc[slot], &mut comp[slot], contrib);
        });
    }
    acc.iter().zip(&comp).map(|(a, c)| a + c).collect()
}

fn expand(
    k: &[u32],
    j: usize,
    coeff: f64,
    means: &[f64],
    target: &mut Vec<u32>,
    sink: &mut impl FnMut(&[u32], f64),
) {
    if j == k.len() {
        sink(target, coeff);
        return;
    }
    let kj = k[j];
    for i in 0..=kj {
        let binom = binomial(kj, i) as f64;
        let shift = (-means[j]).powi((kj - i) as i32);
        target[j] = i;
        expand(k, j + 1, coeff * binom * shift, means, target, sink);
    }
    target[j] = 0;
}

fn binomial(n: u32, k: u32) -> u64 {
    let k = k.min(n - k);
    let mut num = 1u64;
    for i in 0..k {
        num = num * (n - i) as u64 / (i + 1) as u64;
    }
    num
}
