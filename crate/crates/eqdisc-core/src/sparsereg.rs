//! Sparse identification of governing equations from time series.
//!
//! A measured series (t, x) is lifted to numeric first and second
//! derivatives, expanded into a fixed nine-term basis library, and fitted by
//! sequentially thresholded least squares so that x' is explained by a few
//! active terms. A second, meta-level step hands the fitted coefficients
//! from several parameter settings back to the exponent search, recovering
//! how the coefficients depend on the system parameters.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Column, Dataset};
use crate::dimension::solve_affine;
use crate::rat::ratq;
use crate::search::{multilevel_search, resolve_di, DiMode, DiSetup, SearchConfig, SearchOutcome};
use crate::units::{parse_unit, DimVector};
use crate::{Error, Result};

/// Basis terms in library order; index 1 is x and index 2 is x''.
pub const TERM_TAGS: [&str; 9] = [
    "1", "x", "x''", "x^2", "x*x'", "x*x''", "x'^2", "x'*x''", "x''^2",
];

pub const DEFAULT_MAX_ITERS: usize = 20;

/// Fraction of the largest initial coefficient used as the default
/// threshold; relative thresholding survives unit changes.
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.05;

/// Singular values below this fraction of the largest are treated as zero
/// in the library regression. The quadratic terms of a two-state trajectory
/// are rank deficient by construction, so an unregularized solve lets
/// derivative noise blow up the null-space coefficients.
pub const SV_CUTOFF_REL: f64 = 1e-3;

/// The evaluated basis library Φ(X), one column per term tag.
#[derive(Debug, Clone)]
pub struct BasisLibrary {
    pub tags: Vec<&'static str>,
    pub phi: DMatrix<f64>,
}

impl BasisLibrary {
    pub fn build(x: &[f64], dx: &[f64], ddx: &[f64]) -> BasisLibrary {
        assert_eq!(x.len(), dx.len());
        assert_eq!(x.len(), ddx.len());
        let b = x.len();
        let phi = DMatrix::from_fn(b, TERM_TAGS.len(), |i, j| match j {
            0 => 1.0,
            1 => x[i],
            2 => ddx[i],
            3 => x[i] * x[i],
            4 => x[i] * dx[i],
            5 => x[i] * ddx[i],
            6 => dx[i] * dx[i],
            7 => dx[i] * ddx[i],
            8 => ddx[i] * ddx[i],
            _ => unreachable!(),
        });
        BasisLibrary {
            tags: TERM_TAGS.to_vec(),
            phi,
        }
    }
}

/// Outcome of sequential thresholded least squares. Coefficients outside the
/// active set are exactly zero; `zeroed_out` marks the degenerate case where
/// thresholding removed everything.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseModel {
    pub xi: Vec<f64>,
    pub active: Vec<usize>,
    pub zeroed_out: bool,
    pub threshold: f64,
    pub iterations: usize,
}

/// First and second derivatives by sliding cubic fits over seven-point
/// windows, differentiated analytically at the sample. Windows near the ends
/// extend one-sided so every window keeps seven points when the series has
/// them.
pub fn numeric_derivatives(t: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = t.len();
    if n != x.len() {
        return Err(Error::InvalidInput(
            "time and value columns differ in length".into(),
        ));
    }
    if n < 5 {
        return Err(Error::InvalidInput(format!(
            "derivative estimation needs at least 5 samples, got {n}"
        )));
    }
    for i in 1..n {
        if t[i] <= t[i - 1] {
            return Err(Error::InvalidInput(format!(
                "timestamps must increase strictly (rows {} and {})",
                i - 1,
                i
            )));
        }
    }
    let win = 7usize.min(n);
    let mut dx = vec![0.0; n];
    let mut ddx = vec![0.0; n];
    for i in 0..n {
        let lo = i.saturating_sub(3).min(n - win);
        let (a1, a2) = cubic_derivatives(&t[lo..lo + win], &x[lo..lo + win], t[i]);
        dx[i] = a1;
        ddx[i] = a2;
    }
    Ok((dx, ddx))
}

/// Least-squares cubic through the window, returning (first, second)
/// derivative at `center`.
fn cubic_derivatives(ts: &[f64], xs: &[f64], center: f64) -> (f64, f64) {
    let n = ts.len();
    let a = DMatrix::from_fn(n, 4, |i, j| (ts[i] - center).powi(j as i32));
    let rhs = DVector::from_column_slice(xs);
    let coeffs = a
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .expect("svd of a small window succeeds");
    (coeffs[1], 2.0 * coeffs[2])
}

/// Least squares restricted to `cols`, with columns equilibrated to unit
/// norm and small singular directions truncated. Equilibration keeps both
/// the cutoff and the result invariant under unit changes of x.
fn least_squares(phi: &DMatrix<f64>, cols: &[usize], rhs: &DVector<f64>) -> Vec<f64> {
    let mut sub = DMatrix::from_fn(phi.nrows(), cols.len(), |i, j| phi[(i, cols[j])]);
    let scale: Vec<f64> = (0..sub.ncols())
        .map(|j| {
            let n = sub.column(j).norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    for (j, s) in scale.iter().enumerate() {
        sub.column_mut(j).unscale_mut(*s);
    }
    let svd = sub.svd(true, true);
    let top = svd.singular_values.iter().fold(0.0f64, |m, s| m.max(*s));
    let sol = svd
        .solve(rhs, SV_CUTOFF_REL * top)
        .expect("least squares on a finite matrix succeeds");
    sol.iter().zip(&scale).map(|(c, s)| c / s).collect()
}

/// Sequential thresholded least squares: solve, zero every coefficient with
/// |ξ| < λ, re-solve on the survivors, and repeat to a fixed point or
/// `max_iters`. An emptied active set comes back as a flagged zero model
/// rather than an error.
pub fn stlsq(
    phi: &DMatrix<f64>,
    x_dot: &[f64],
    threshold: f64,
    max_iters: usize,
) -> Result<SparseModel> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidInput("threshold must be positive".into()));
    }
    if phi.nrows() != x_dot.len() {
        return Err(Error::InvalidInput(
            "library and derivative lengths differ".into(),
        ));
    }
    let rhs = DVector::from_column_slice(x_dot);
    let mut active: Vec<usize> = (0..phi.ncols()).collect();
    let mut coeffs = least_squares(phi, &active, &rhs);
    let mut iterations = 1;
    for _ in 0..max_iters {
        let kept: Vec<usize> = active
            .iter()
            .zip(&coeffs)
            .filter(|(_, c)| c.abs() >= threshold)
            .map(|(j, _)| *j)
            .collect();
        if kept.is_empty() {
            return Ok(SparseModel {
                xi: vec![0.0; phi.ncols()],
                active: Vec::new(),
                zeroed_out: true,
                threshold,
                iterations,
            });
        }
        if kept == active {
            break;
        }
        active = kept;
        coeffs = least_squares(phi, &active, &rhs);
        iterations += 1;
    }
    let mut xi = vec![0.0; phi.ncols()];
    for (j, c) in active.iter().zip(&coeffs) {
        xi[*j] = *c;
    }
    Ok(SparseModel {
        xi,
        active,
        zeroed_out: false,
        threshold,
        iterations,
    })
}

/// Lifts a series to the basis library and runs the thresholded regression
/// on x'. Without an explicit threshold, λ defaults to
/// `DEFAULT_THRESHOLD_FRACTION` of the largest unthresholded coefficient.
pub fn identify_series(
    t: &[f64],
    x: &[f64],
    threshold: Option<f64>,
) -> Result<(BasisLibrary, SparseModel)> {
    let (dx, ddx) = numeric_derivatives(t, x)?;
    let lib = BasisLibrary::build(x, &dx, &ddx);
    let rhs = DVector::from_column_slice(&dx);
    let lambda = match threshold {
        Some(l) => l,
        None => {
            let all: Vec<usize> = (0..lib.phi.ncols()).collect();
            let xi0 = least_squares(&lib.phi, &all, &rhs);
            let max = xi0.iter().fold(0.0f64, |m, c| m.max(c.abs()));
            DEFAULT_THRESHOLD_FRACTION * max
        }
    };
    let model = stlsq(&lib.phi, &dx, lambda, DEFAULT_MAX_ITERS)?;
    Ok((lib, model))
}

/// Parameters of the damped oscillator m·x'' + c·x' + k·x = 0 released from
/// rest at x(0) = delta.
#[derive(Debug, Clone, Copy)]
pub struct SmdParams {
    pub m: f64,
    pub c: f64,
    pub k: f64,
    pub delta: f64,
}

/// Classic fourth-order Runge-Kutta integration at a fixed step.
pub fn simulate_smd(params: &SmdParams, dt: f64, t_end: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(dt > 0.0 && t_end > 0.0);
    let accel = |x: f64, v: f64| -(params.c * v + params.k * x) / params.m;
    let n = (t_end / dt).floor() as usize + 1;
    let mut ts = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    let (mut x, mut v) = (params.delta, 0.0);
    for i in 0..n {
        ts.push(i as f64 * dt);
        xs.push(x);
        let (k1x, k1v) = (v, accel(x, v));
        let (k2x, k2v) = (v + 0.5 * dt * k1v, accel(x + 0.5 * dt * k1x, v + 0.5 * dt * k1v));
        let (k3x, k3v) = (v + 0.5 * dt * k2v, accel(x + 0.5 * dt * k2x, v + 0.5 * dt * k2v));
        let (k4x, k4v) = (v + dt * k3v, accel(x + dt * k3x, v + dt * k3v));
        x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        v += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    }
    (ts, xs)
}

/// Uniform parameter draws over a damped-only regime; the ranges cover both
/// underdamped and overdamped responses.
pub fn sample_smd_params(n: usize, seed: u64) -> Vec<SmdParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| SmdParams {
            c: rng.gen_range(0.2..2.0),
            k: rng.gen_range(0.5..4.0),
            m: rng.gen_range(0.5..3.0),
            delta: rng.gen_range(0.5..2.0),
        })
        .collect()
}

/// Builds the meta table mapping parameters to fitted coefficients. The
/// coefficient columns carry their derived units (ξ₂ in 1/s, ξ₃ in s); the
/// parameter columns stay as plain numbers, matching the interchange format.
pub fn param_table(rows: &[(SmdParams, SparseModel)]) -> Result<Dataset> {
    let col = |name: &str, unit: DimVector, values: Vec<f64>| Column {
        name: name.into(),
        unit,
        values,
    };
    let none = DimVector::dimensionless();
    Dataset::from_columns(vec![
        col("c", none, rows.iter().map(|(p, _)| p.c).collect()),
        col("k", none, rows.iter().map(|(p, _)| p.k).collect()),
        col("m", none, rows.iter().map(|(p, _)| p.m).collect()),
        col("delta", none, rows.iter().map(|(p, _)| p.delta).collect()),
        col(
            "xi2",
            parse_unit("1/s")?,
            rows.iter().map(|(_, m)| m.xi[1]).collect(),
        ),
        col(
            "xi3",
            parse_unit("s")?,
            rows.iter().map(|(_, m)| m.xi[2]).collect(),
        ),
    ])
}

/// Search configuration suited to a meta table with a handful of rows: one
/// latent and a linear layer, so a few points cannot be overfitted.
pub fn meta_config() -> SearchConfig {
    SearchConfig {
        degree: 1,
        s_max: 1,
        steps: vec![crate::rat::rat(1), ratq(1, 2), ratq(1, 5), ratq(1, 10)],
        ..SearchConfig::default()
    }
}

/// Recovers how one fitted coefficient depends on the system parameters by
/// running the exponent search over the meta table.
pub fn meta_discover(
    table: &Dataset,
    params: &[&str],
    output: &str,
    config: Option<&SearchConfig>,
) -> Result<SearchOutcome> {
    if table.num_rows() < 6 {
        return Err(Error::InvalidInput(format!(
            "meta table needs at least 6 parameter sets, got {}",
            table.num_rows()
        )));
    }
    let mut names: Vec<&str> = params.to_vec();
    names.push(output);
    let split = table.select(&names)?.split_xy(output)?;
    let default_config = meta_config();
    let config = config.unwrap_or(&default_config);
    let setup = match resolve_di(&split.d_matrix, &split.d_out, DiMode::Di1) {
        Ok(s) => s,
        Err(Error::Infeasible(_)) if split.d_matrix.is_zero() => {
            let sol = solve_affine(&split.d_matrix, &DimVector::dimensionless())?;
            DiSetup {
                sol,
                mode: DiMode::Di1,
                dimensionless_fallback: true,
                warnings: vec![format!(
                    "parameters are unit-free by construction; searching dimensionless \
                     groups and assigning the unit of {output} to the fitted constants"
                )],
            }
        }
        Err(e) => return Err(e),
    };
    multilevel_search(&split, &setup, None, config)
}
