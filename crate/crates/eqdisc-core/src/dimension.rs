//! Exact solution of the unit-consistency system D·Wᵀ = d.
//!
//! D stacks the inputs' dimension vectors column-wise (seven base-dimension
//! rows, one column per input). A latent exponent row W satisfies the unit
//! constraint when D·Wᵀ equals the output's dimension vector d. The solution
//! set is an affine subspace W(λ) = E·λ + e*, computed here by Gaussian
//! elimination over exact rationals; zero patterns restrict it further to
//! W(μ) with λ(μ) = F·μ + f*.

use crate::rat::{rat, Rat};
use crate::units::{DimVector, BASE_COUNT, BASE_SYMBOLS};
use crate::{Error, Result};
use num_traits::Zero;

/// Dimension matrix: one column per input, rows over the SI base dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimMatrix {
    pub cols: Vec<DimVector>,
}

impl DimMatrix {
    pub fn new(cols: Vec<DimVector>) -> Self {
        Self { cols }
    }

    /// All-zero matrix used for dimension-agnostic searches.
    pub fn zero(num_inputs: usize) -> Self {
        Self {
            cols: vec![DimVector::dimensionless(); num_inputs],
        }
    }

    pub fn num_inputs(&self) -> usize {
        self.cols.len()
    }

    /// Row for one base dimension, one entry per input.
    pub fn row(&self, base: usize) -> Vec<Rat> {
        self.cols.iter().map(|c| c.exps[base]).collect()
    }

    /// Rows that touch at least one input, with their base index.
    pub fn nonzero_rows(&self) -> Vec<(usize, Vec<Rat>)> {
        (0..BASE_COUNT)
            .map(|b| (b, self.row(b)))
            .filter(|(_, r)| r.iter().any(|e| !e.is_zero()))
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.cols.iter().all(|c| c.is_dimensionless())
    }

    /// Unit carried by the power product with exponent row `w`.
    pub fn latent_unit(&self, w: &[Rat]) -> DimVector {
        assert_eq!(w.len(), self.cols.len());
        let mut out = DimVector::dimensionless();
        for (col, wj) in self.cols.iter().zip(w) {
            out = out.add(&col.scale(*wj));
        }
        out
    }
}

/// Affine parametrization of {W : D·Wᵀ = d}: W(λ) = e* + Σ λ_k·E_k.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffineSolutionSet {
    /// Number of inputs p (length of W).
    pub num_inputs: usize,
    /// Columns of E, each of length p.
    pub basis: Vec<Vec<Rat>>,
    /// Particular solution e* of length p.
    pub particular: Vec<Rat>,
}

impl AffineSolutionSet {
    /// Degrees of freedom (dimension of the affine set).
    pub fn dof(&self) -> usize {
        self.basis.len()
    }

    /// The unconstrained solution for dimension-agnostic search:
    /// E = identity, e* = 0, so W = λ.
    pub fn unconstrained(num_inputs: usize) -> Self {
        let mut basis = Vec::with_capacity(num_inputs);
        for j in 0..num_inputs {
            let mut col = vec![rat(0); num_inputs];
            col[j] = rat(1);
            basis.push(col);
        }
        Self {
            num_inputs,
            basis,
            particular: vec![rat(0); num_inputs],
        }
    }

    /// W(λ) = e* + Σ λ_k·E_k.
    pub fn exponents(&self, lambda: &[Rat]) -> Vec<Rat> {
        assert_eq!(lambda.len(), self.basis.len());
        let mut w = self.particular.clone();
        for (col, lk) in self.basis.iter().zip(lambda) {
            for (wi, ei) in w.iter_mut().zip(col) {
                *wi += *lk * *ei;
            }
        }
        w
    }
}

/// Restriction of λ-space enforcing W[ξ] = 0: λ(μ) = f* + Σ μ_m·F_m.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZeroPatternSolution {
    /// Indices ξ forced to zero, sorted ascending.
    pub zero_idx: Vec<usize>,
    /// Columns of F, each of length sol.dof().
    pub basis: Vec<Vec<Rat>>,
    /// Particular solution f* of length sol.dof().
    pub particular: Vec<Rat>,
    /// Whether some μ makes every τ (complement) entry of W nonzero. False
    /// when an entry outside ξ is identically zero over the whole family.
    pub tau_nonzero_satisfiable: bool,
}

impl ZeroPatternSolution {
    pub fn dof(&self) -> usize {
        self.basis.len()
    }

    /// λ(μ) = f* + Σ μ_m·F_m.
    pub fn lambda(&self, mu: &[Rat]) -> Vec<Rat> {
        assert_eq!(mu.len(), self.basis.len());
        let mut l = self.particular.clone();
        for (col, mm) in self.basis.iter().zip(mu) {
            for (li, fi) in l.iter_mut().zip(col) {
                *li += *mm * *fi;
            }
        }
        l
    }

    /// Trivial pattern: no index constrained, λ = μ.
    pub fn identity(dof: usize) -> Self {
        let mut basis = Vec::with_capacity(dof);
        for k in 0..dof {
            let mut col = vec![rat(0); dof];
            col[k] = rat(1);
            basis.push(col);
        }
        Self {
            zero_idx: Vec::new(),
            basis,
            particular: vec![rat(0); dof],
            tau_nonzero_satisfiable: true,
        }
    }
}

/// Solves D·Wᵀ = d exactly. Base dimensions untouched by every input are
/// dropped from the elimination; if the output carries such a dimension the
/// system has no solution.
pub fn solve_affine(d_matrix: &DimMatrix, d: &DimVector) -> Result<AffineSolutionSet> {
    let p = d_matrix.num_inputs();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for base in 0..BASE_COUNT {
        let row = d_matrix.row(base);
        if row.iter().all(|e| e.is_zero()) {
            if !d.exps[base].is_zero() {
                return Err(Error::Infeasible(format!(
                    "no input carries base dimension {} required by the output",
                    BASE_SYMBOLS[base]
                )));
            }
            continue;
        }
        rows.push(row);
        rhs.push(d.exps[base]);
    }
    match rref_solve(rows, rhs, p) {
        Some((basis, particular)) => Ok(AffineSolutionSet {
            num_inputs: p,
            basis,
            particular,
        }),
        None => Err(Error::Infeasible(
            "no power product of the inputs carries the output's unit".to_string(),
        )),
    }
}

/// Restricts `sol` to solutions with W[ξ] = 0 and reports whether the τ
/// entries can simultaneously be nonzero.
pub fn refine_zero_pattern(
    sol: &AffineSolutionSet,
    zero_idx: &[usize],
) -> Result<ZeroPatternSolution> {
    let p = sol.num_inputs;
    let mut xi: Vec<usize> = zero_idx.to_vec();
    xi.sort_unstable();
    xi.dedup();
    if xi.iter().any(|&j| j >= p) {
        return Err(Error::InvalidInput(format!(
            "zero index out of range (p = {p})"
        )));
    }
    let c = sol.dof();
    // Rows of the system E[ξ]·λ = -e*[ξ].
    let rows: Vec<Vec<Rat>> = xi
        .iter()
        .map(|&j| sol.basis.iter().map(|col| col[j]).collect())
        .collect();
    let rhs: Vec<Rat> = xi.iter().map(|&j| -sol.particular[j]).collect();
    let Some((basis, particular)) = rref_solve(rows, rhs, c) else {
        return Err(Error::ZeroPatternInfeasible(format!(
            "forcing inputs {xi:?} to zero contradicts the unit constraint"
        )));
    };

    // An entry t outside ξ is identically zero when its μ coefficients and
    // its constant term all vanish; then no μ satisfies the τ condition.
    let mut tau_ok = true;
    for t in 0..p {
        if xi.binary_search(&t).is_ok() {
            continue;
        }
        let et_dot = |vec_c: &[Rat]| -> Rat {
            let mut acc = rat(0);
            for (k, col) in sol.basis.iter().enumerate() {
                acc += col[t] * vec_c[k];
            }
            acc
        };
        let konst = et_dot(&particular) + sol.particular[t];
        let coeffs_zero = basis.iter().all(|f_col| et_dot(f_col).is_zero());
        if coeffs_zero && konst.is_zero() {
            tau_ok = false;
            break;
        }
    }

    Ok(ZeroPatternSolution {
        zero_idx: xi,
        basis,
        particular,
        tau_nonzero_satisfiable: tau_ok,
    })
}

/// Composes μ → λ → W. The result satisfies D·Wᵀ = d and W[ξ] = 0 exactly.
pub fn exponents_from_params(
    mu: &[Rat],
    zps: &ZeroPatternSolution,
    sol: &AffineSolutionSet,
) -> Vec<Rat> {
    sol.exponents(&zps.lambda(mu))
}

/// Unit assigned to the coefficient of z^k when the latent carries `z_dim`
/// and the output carries `d`: d − k·z_dim.
pub fn constant_unit(d: &DimVector, z_dim: &DimVector, k: u32) -> DimVector {
    d.sub(&z_dim.scale(rat(k as i128)))
}

/// Reduced row echelon solve of `rows·x = rhs` over n unknowns.
/// Returns (nullspace basis columns, particular solution with free
/// variables at zero), or None when inconsistent. Pivot choice: first
/// nonzero entry in column order.
fn rref_solve(
    mut rows: Vec<Vec<Rat>>,
    mut rhs: Vec<Rat>,
    n: usize,
) -> Option<(Vec<Vec<Rat>>, Vec<Rat>)> {
    let m = rows.len();
    let mut pivot_cols: Vec<usize> = Vec::new();
    let mut rank = 0usize;
    for col in 0..n {
        let Some(pivot_row) = (rank..m).find(|&r| !rows[r][col].is_zero()) else {
            continue;
        };
        rows.swap(rank, pivot_row);
        rhs.swap(rank, pivot_row);
        let pivot = rows[rank][col];
        for x in rows[rank].iter_mut() {
            *x /= pivot;
        }
        rhs[rank] /= pivot;
        for r in 0..m {
            if r == rank || rows[r][col].is_zero() {
                continue;
            }
            let factor = rows[r][col];
            for c2 in 0..n {
                let delta = factor * rows[rank][c2];
                rows[r][c2] -= delta;
            }
            let delta = factor * rhs[rank];
            rhs[r] -= delta;
        }
        pivot_cols.push(col);
        rank += 1;
        if rank == m {
            break;
        }
    }
    if rhs.iter().skip(rank).any(|v| !v.is_zero()) {
        return None;
    }
    let mut particular = vec![rat(0); n];
    for (i, &pc) in pivot_cols.iter().enumerate() {
        particular[pc] = rhs[i];
    }
    let mut basis = Vec::new();
    for free in 0..n {
        if pivot_cols.contains(&free) {
            continue;
        }
        let mut v = vec![rat(0); n];
        v[free] = rat(1);
        for (i, &pc) in pivot_cols.iter().enumerate() {
            v[pc] = -rows[i][free];
        }
        basis.push(v);
    }
    Some((basis, particular))
}

/// True when `point` lies in the affine set {offset + span(basis)}.
pub fn affine_member(basis: &[Vec<Rat>], offset: &[Rat], point: &[Rat]) -> bool {
    let p = offset.len();
    assert_eq!(point.len(), p);
    let rows: Vec<Vec<Rat>> = (0..p)
        .map(|i| basis.iter().map(|col| col[i]).collect())
        .collect();
    let rhs: Vec<Rat> = (0..p).map(|i| point[i] - offset[i]).collect();
    rref_solve(rows, rhs, basis.len()).is_some()
}

/// True when two affine parametrizations describe the same point set:
/// each offset and each translated generator of one lies in the other.
pub fn same_affine_span(
    basis_a: &[Vec<Rat>],
    offset_a: &[Rat],
    basis_b: &[Vec<Rat>],
    offset_b: &[Rat],
) -> bool {
    let contained = |basis: &[Vec<Rat>], offset: &[Rat], b2: &[Vec<Rat>], o2: &[Rat]| {
        affine_member(basis, offset, o2)
            && b2.iter().all(|col| {
                let point: Vec<Rat> = o2.iter().zip(col).map(|(o, c)| *o + *c).collect();
                affine_member(basis, offset, &point)
            })
    };
    contained(basis_a, offset_a, basis_b, offset_b)
        && contained(basis_b, offset_b, basis_a, offset_a)
}

/// Rank of a rational matrix given as rows over n unknowns.
pub fn rank_of(rows: Vec<Vec<Rat>>, n: usize) -> usize {
    let m = rows.len();
    let rhs = vec![rat(0); m];
    match rref_solve(rows, rhs, n) {
        Some((basis, _)) => n - basis.len(),
        None => unreachable!("homogeneous system is always consistent"),
    }
}
