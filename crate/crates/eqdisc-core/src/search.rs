//! Coarse-to-fine search over exponent matrices.
//!
//! Candidate latents live on a rational lattice in the free-parameter space
//! that remains after dimensional reduction. The schedule starts on a coarse
//! grid and re-grids a neighborhood of the best survivors at each finer step,
//! so exponent precision grows while the number of fits stays small. Before
//! anything is fitted, candidates pass through data constraints (sign and
//! zero patterns of the input columns), sparsity limits, redundancy checks,
//! and optional structure-graph constraints; a dedup table removes row
//! permutations of matrices that were already scored.

use std::collections::{HashMap, HashSet};
use std::result::Result as StdResult;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use num_traits::Zero;
use rayon::prelude::*;

use crate::dataset::SplitXY;
use crate::dimension::{
    exponents_from_params, refine_zero_pattern, solve_affine, AffineSolutionSet, DimMatrix,
    ZeroPatternSolution,
};
use crate::error::RejectCounts;
use crate::expr::Expr;
use crate::polyfit::{complexity, fit_poly, r_squared, PolynomialModel, MAX_DEGREE, MIN_DEGREE};
use crate::rat::{format_rat, is_integer, rat, ratq, sign, to_f64, Rat};
use crate::structure::StructureGraph;
use crate::units::DimVector;
use crate::{Error, Result};

/// Fitting subsamples at most this many rows by a deterministic stride; the
/// reported R² always covers the full dataset.
pub const FIT_ROW_CAP: usize = 4096;

/// Candidates whose R² sits within this band below the running leader are
/// re-ordered by complexity, then by canonical exponent matrix.
pub const R2_TIE_BAND: f64 = 1e-9;

/// Relative half-width of the acceptance box around a structure-estimated
/// exponent ratio.
pub const RATIO_TOLERANCE: f64 = 0.2;

/// Dimensional-invariance mode. `Di1` constrains every latent to carry the
/// output's unit exactly; `Di2` searches unconstrained exponents and assigns
/// units to the fitted constants afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiMode {
    Di1,
    Di2,
}

/// Knobs of the coarse-to-fine search. `steps` must be strictly decreasing;
/// every exponent stays inside `range` at every refinement level.
#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub range: (Rat, Rat),
    pub steps: Vec<Rat>,
    pub top_k: usize,
    pub di_mode: DiMode,
    pub s_max: usize,
    pub kappa1: Option<usize>,
    pub kappa2: Option<usize>,
    pub target_r2: f64,
    pub improve_eps: f64,
    pub degree: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            range: (rat(-2), rat(2)),
            steps: vec![rat(1), ratq(1, 2), ratq(1, 5), ratq(1, 10)],
            top_k: 10,
            di_mode: DiMode::Di1,
            s_max: 3,
            kappa1: None,
            kappa2: None,
            target_r2: 0.9999,
            improve_eps: 1e-3,
            degree: crate::polyfit::DEFAULT_DEGREE,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.range.0 >= self.range.1 {
            return Err(Error::InvalidInput("search range is empty".into()));
        }
        if self.steps.is_empty() {
            return Err(Error::InvalidInput("step schedule is empty".into()));
        }
        if self.steps.iter().any(|s| *s <= rat(0)) {
            return Err(Error::InvalidInput("steps must be positive".into()));
        }
        if self.steps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidInput(
                "step schedule must be strictly decreasing".into(),
            ));
        }
        if !(self.target_r2 > 0.0 && self.target_r2 <= 1.0) {
            return Err(Error::InvalidInput(
                "target R² must lie in (0, 1]".into(),
            ));
        }
        if self.top_k == 0 || self.s_max == 0 {
            return Err(Error::InvalidInput(
                "top_k and s_max must be at least 1".into(),
            ));
        }
        if !(MIN_DEGREE..=MAX_DEGREE).contains(&self.degree) {
            return Err(Error::InvalidInput(format!(
                "degree {} outside {MIN_DEGREE}..={MAX_DEGREE}",
                self.degree
            )));
        }
        if !self.improve_eps.is_finite() || self.improve_eps < 0.0 {
            return Err(Error::InvalidInput(
                "improvement threshold must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Dimensional setup resolved once per run. When `Di1` is requested but no
/// power product of the inputs carries the output's unit, the search falls
/// back to dimensionless groups and the fitted constants absorb the output's
/// unit; the fallback is recorded so reporting can say so.
#[derive(Debug, Clone)]
pub struct DiSetup {
    pub sol: AffineSolutionSet,
    pub mode: DiMode,
    pub dimensionless_fallback: bool,
    pub warnings: Vec<String>,
}

pub fn resolve_di(d_matrix: &DimMatrix, d_out: &DimVector, mode: DiMode) -> Result<DiSetup> {
    match mode {
        DiMode::Di2 => Ok(DiSetup {
            sol: AffineSolutionSet::unconstrained(d_matrix.num_inputs()),
            mode,
            dimensionless_fallback: false,
            warnings: Vec::new(),
        }),
        DiMode::Di1 => match solve_affine(d_matrix, d_out) {
            Ok(sol) => Ok(DiSetup {
                sol,
                mode,
                dimensionless_fallback: false,
                warnings: Vec::new(),
            }),
            Err(Error::Infeasible(msg)) => {
                if d_matrix.is_zero() {
                    return Err(Error::Infeasible(msg));
                }
                let sol = solve_affine(d_matrix, &DimVector::dimensionless())?;
                Ok(DiSetup {
                    sol,
                    mode,
                    dimensionless_fallback: true,
                    warnings: vec![format!(
                        "{msg}; searching dimensionless groups instead and assigning \
                         the output unit to the fitted constants"
                    )],
                })
            }
            Err(e) => Err(e),
        },
    }
}

/// One latent variable: a rational exponent per input, plus the free
/// parameters that generated it under the active solution set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentSpec {
    pub exponents: Vec<Rat>,
    pub mode: DiMode,
    pub params: Vec<Rat>,
}

/// A scored formula: latent exponents plus the polynomial layer fitted over
/// them. `r2` is computed on the full dataset; `complexity` counts the nodes
/// of the pruned expression.
#[derive(Debug, Clone)]
pub struct CandidateFormula {
    pub latents: Vec<LatentSpec>,
    pub poly: PolynomialModel,
    pub r2: f64,
    pub complexity: usize,
    /// One unit per polynomial coefficient; present when units were not
    /// enforced on the latents themselves.
    pub constant_units: Option<Vec<DimVector>>,
}

impl CandidateFormula {
    pub fn exponent_rows(&self) -> Vec<Vec<Rat>> {
        self.latents.iter().map(|l| l.exponents.clone()).collect()
    }

    pub fn latent_exprs(&self, input_names: &[String]) -> Vec<Expr> {
        self.latents
            .iter()
            .map(|l| Expr::power_product(input_names, &l.exponents))
            .collect()
    }

    pub fn expression(&self, input_names: &[String]) -> Expr {
        self.poly.to_expr(&self.latent_exprs(input_names))
    }

    pub fn render(&self, output_name: &str, input_names: &[String]) -> String {
        format!("{output_name} = {}", self.expression(input_names).render())
    }

    pub fn sexpr(&self, input_names: &[String]) -> String {
        self.expression(input_names).to_sexpr()
    }

    /// Coefficient of the monomial that is linear in the given latent and
    /// constant in all others, if that monomial exists.
    pub fn linear_coefficient(&self, latent: usize) -> Option<f64> {
        self.poly
            .powers
            .iter()
            .position(|k| {
                k.iter()
                    .enumerate()
                    .all(|(i, &ki)| if i == latent { ki == 1 } else { ki == 0 })
            })
            .map(|t| self.poly.coeffs[t])
    }
}

/// Annotates every polynomial coefficient with the unit that makes its term
/// carry `d`: the coefficient of z^k gets d − Σᵢ kᵢ·dim(zᵢ). The constant
/// term always carries `d` itself.
pub fn assign_constant_units(cand: &mut CandidateFormula, d: &DimVector, z_dims: &[DimVector]) {
    assert_eq!(z_dims.len(), cand.latents.len());
    let units = cand
        .poly
        .powers
        .iter()
        .map(|k| {
            let mut u = *d;
            for (&ki, zd) in k.iter().zip(z_dims) {
                u = u.sub(&zd.scale(rat(ki as i128)));
            }
            u
        })
        .collect();
    cand.constant_units = Some(units);
}

/// Counters and per-level logs of one search run. Wall time is kept out of
/// the serialized form so that stored reports are reproducible bit for bit.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct SearchTrace {
    pub candidates_enumerated: usize,
    pub candidates_scored: usize,
    pub dedup_hits: usize,
    pub rejections: RejectCounts,
    pub levels: Vec<LevelLog>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub wall: Duration,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct LevelLog {
    /// Latent level, counted from 1.
    pub latent: usize,
    pub step: String,
    pub enumerated: usize,
    pub scored: usize,
    pub best_r2: f64,
}

/// Result of a search: the ranked candidates of the final latent level, the
/// winner, and the trace.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: CandidateFormula,
    pub ranked: Vec<CandidateFormula>,
    pub trace: SearchTrace,
}

/// Row-sorted copy of an exponent matrix. Row order never changes the fitted
/// polynomial's reachable set, so the sorted form is the identity used for
/// ranking ties and deduplication.
pub fn canonical_rows(w: &[Vec<Rat>]) -> Vec<Vec<Rat>> {
    let mut rows = w.to_vec();
    rows.sort();
    rows
}

/// Sign pattern (−1, 0, +1 per entry) of the canonical form; buckets the
/// dedup table so exact comparisons only touch a small candidate set.
pub fn sign_code(w: &[Vec<Rat>]) -> Vec<i8> {
    canonical_rows(w)
        .iter()
        .flat_map(|row| row.iter().map(sign))
        .collect()
}

/// Insert-if-absent set of exponent matrices keyed by exact rationals and
/// bucketed by sign code. Two matrices collide exactly when they are row
/// permutations of each other.
#[derive(Debug, Default)]
pub struct DedupTable {
    buckets: HashMap<Vec<i8>, HashSet<Vec<Vec<Rat>>>>,
    len: usize,
}

impl DedupTable {
    /// Returns true when the matrix was not seen before.
    pub fn insert(&mut self, w: &[Vec<Rat>]) -> bool {
        let canon = canonical_rows(w);
        let code: Vec<i8> = canon
            .iter()
            .flat_map(|row| row.iter().map(sign))
            .collect();
        let fresh = self.buckets.entry(code).or_default().insert(canon);
        if fresh {
            self.len += 1;
        }
        fresh
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Per-column facts that drive the data constraints.
#[derive(Debug, Clone)]
pub struct ColumnFacts {
    pub has_negative: Vec<bool>,
    pub has_zero: Vec<bool>,
}

impl ColumnFacts {
    pub fn from_matrix(x: &DMatrix<f64>) -> Self {
        let (b, p) = (x.nrows(), x.ncols());
        let mut has_negative = vec![false; p];
        let mut has_zero = vec![false; p];
        for j in 0..p {
            for i in 0..b {
                let v = x[(i, j)];
                has_negative[j] |= v < 0.0;
                has_zero[j] |= v == 0.0;
            }
        }
        ColumnFacts {
            has_negative,
            has_zero,
        }
    }
}

/// Why a candidate was removed before scoring, or by scoring itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    IntegerRequired,
    NonnegativeRequired,
    Sparsity,
    ZeroRow,
    DuplicateRows,
    ProportionalRows,
    ZeroPattern,
    SignPattern,
    Ratio,
    Domain,
}

impl Rejection {
    pub fn tally(self, counts: &mut RejectCounts) {
        match self {
            Rejection::IntegerRequired => counts.integer_required += 1,
            Rejection::NonnegativeRequired => counts.nonnegative_required += 1,
            Rejection::Sparsity => counts.sparsity += 1,
            Rejection::ZeroRow => counts.zero_row += 1,
            Rejection::DuplicateRows => counts.duplicate += 1,
            Rejection::ProportionalRows => counts.proportional_rows += 1,
            Rejection::ZeroPattern => counts.zero_pattern += 1,
            Rejection::SignPattern => counts.sign_pattern += 1,
            Rejection::Ratio => counts.ratio += 1,
            Rejection::Domain => counts.domain += 1,
        }
    }
}

/// Screens a full exponent matrix against the data and sparsity constraints.
/// Fractional exponents are rejected on sign-changing columns, negative
/// exponents on columns containing zero; sparsity caps apply to the whole
/// matrix and per column; all-zero, duplicate, and proportional rows add
/// nothing a polynomial layer cannot already express.
pub fn constraint_filter(
    w: &[Vec<Rat>],
    facts: &ColumnFacts,
    config: &SearchConfig,
) -> StdResult<(), Rejection> {
    for row in w {
        for (j, e) in row.iter().enumerate() {
            if facts.has_negative[j] && !e.is_zero() && !is_integer(e) {
                return Err(Rejection::IntegerRequired);
            }
        }
    }
    for row in w {
        for (j, e) in row.iter().enumerate() {
            if facts.has_zero[j] && sign(e) < 0 {
                return Err(Rejection::NonnegativeRequired);
            }
        }
    }
    if let Some(k1) = config.kappa1 {
        let nonzeros: usize = w
            .iter()
            .map(|row| row.iter().filter(|e| !e.is_zero()).count())
            .sum();
        if nonzeros > k1 {
            return Err(Rejection::Sparsity);
        }
    }
    if let Some(k2) = config.kappa2 {
        let p = w.first().map_or(0, Vec::len);
        for j in 0..p {
            if w.iter().filter(|row| !row[j].is_zero()).count() > k2 {
                return Err(Rejection::Sparsity);
            }
        }
    }
    for row in w {
        if row.iter().all(Rat::is_zero) {
            return Err(Rejection::ZeroRow);
        }
    }
    for (i, a) in w.iter().enumerate() {
        for b in &w[i + 1..] {
            if a == b {
                return Err(Rejection::DuplicateRows);
            }
            if proportional(a, b) {
                return Err(Rejection::ProportionalRows);
            }
        }
    }
    Ok(())
}

/// True when `b = k·a` for a single rational k. Such a row spans the same
/// monomial directions as a power of the other.
fn proportional(a: &[Rat], b: &[Rat]) -> bool {
    let Some(t) = a.iter().position(|e| !e.is_zero()) else {
        return false;
    };
    if b[t].is_zero() {
        return false;
    }
    let k = b[t] / a[t];
    a.iter().zip(b).all(|(ai, bi)| *ai * k == *bi)
}

/// Structure constraints for a single latent row, derived from one clique:
/// the row's support must cover the clique exactly, connected exponents obey
/// the estimated sign relation, and their ratio stays near the estimate.
#[derive(Debug, Clone)]
struct CliqueRule {
    members: Vec<usize>,
    edges: Vec<EdgeRule>,
}

#[derive(Debug, Clone)]
struct EdgeRule {
    j: usize,
    k: usize,
    same_sign: bool,
    ratio: Option<f64>,
}

fn rules_from_graph(graph: &StructureGraph) -> Vec<CliqueRule> {
    graph
        .latents
        .iter()
        .map(|clique| CliqueRule {
            members: clique.members.clone(),
            edges: clique
                .pairs
                .iter()
                .map(|pair| EdgeRule {
                    j: pair.j,
                    k: pair.k,
                    same_sign: pair.same_sign(),
                    ratio: pair.ratio,
                })
                .collect(),
        })
        .collect()
}

/// Checks one latent row against the clique rules. The row must occupy one
/// clique's member set exactly; `designated` narrows the choice to a single
/// clique. Ratio checks can be switched off after a relaxation.
fn check_row(
    row: &[Rat],
    rules: &[CliqueRule],
    designated: Option<usize>,
    enforce_ratio: bool,
) -> StdResult<(), Rejection> {
    let support: Vec<usize> = row
        .iter()
        .enumerate()
        .filter(|(_, e)| !e.is_zero())
        .map(|(j, _)| j)
        .collect();
    let candidates: Vec<usize> = match designated {
        Some(ci) => vec![ci],
        None => (0..rules.len()).collect(),
    };
    for ci in candidates {
        if rules[ci].members != support {
            continue;
        }
        for edge in &rules[ci].edges {
            let (a, b) = (row[edge.j], row[edge.k]);
            if (sign(&a) == sign(&b)) != edge.same_sign {
                return Err(Rejection::SignPattern);
            }
            if enforce_ratio {
                if let Some(r) = edge.ratio {
                    let q = to_f64(&(a / b));
                    if (q - r).abs() > RATIO_TOLERANCE * r.abs() {
                        return Err(Rejection::Ratio);
                    }
                }
            }
        }
        return Ok(());
    }
    Err(Rejection::ZeroPattern)
}

fn lattice_axis(lo: Rat, hi: Rat, step: Rat) -> Vec<Rat> {
    let mut v = lo;
    let mut out = Vec::new();
    while v <= hi {
        out.push(v);
        v += step;
    }
    out
}

/// Offsets covering ±(previous step) at the new step, endpoints included.
fn offsets(prev: Rat, step: Rat) -> Vec<Rat> {
    let k = (prev / step).to_integer();
    (-k..=k).map(|i| rat(i) * step).collect()
}

fn cartesian(axes: &[Vec<Rat>]) -> Vec<Vec<Rat>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for v in axis {
                let mut item = prefix.clone();
                item.push(*v);
                next.push(item);
            }
        }
        out = next;
    }
    out
}

/// Shared, read-only scoring context for one search run.
struct Engine<'a> {
    x: &'a DMatrix<f64>,
    names: &'a [String],
    y_full: Vec<f64>,
    y_fit: DVector<f64>,
    fit_rows: Vec<usize>,
    facts: ColumnFacts,
    degree: usize,
}

impl<'a> Engine<'a> {
    fn new(data: &'a SplitXY, config: &SearchConfig) -> Result<Engine<'a>> {
        let b = data.x.nrows();
        if b < 3 {
            return Err(Error::InvalidInput(
                "search needs at least three rows".into(),
            ));
        }
        if data.x.iter().any(|v| !v.is_finite()) || data.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "search inputs must be finite".into(),
            ));
        }
        let y_full: Vec<f64> = data.y.iter().copied().collect();
        let mean = y_full.iter().sum::<f64>() / b as f64;
        if y_full.iter().all(|v| *v == mean) {
            return Err(Error::InvalidInput("output column is constant".into()));
        }
        let stride = b.div_ceil(FIT_ROW_CAP);
        let fit_rows: Vec<usize> = (0..b).step_by(stride.max(1)).collect();
        let y_fit = DVector::from_fn(fit_rows.len(), |i, _| y_full[fit_rows[i]]);
        Ok(Engine {
            x: &data.x,
            names: &data.input_names,
            y_full,
            y_fit,
            fit_rows,
            facts: ColumnFacts::from_matrix(&data.x),
            degree: config.degree,
        })
    }

    /// Evaluates one latent column over all rows; None when any value is not
    /// finite.
    fn latent_column(&self, row: &[Rat]) -> Option<Vec<f64>> {
        let b = self.x.nrows();
        let mut col = vec![1.0; b];
        for (j, e) in row.iter().enumerate() {
            if e.is_zero() {
                continue;
            }
            let as_i32 = if is_integer(e) {
                i32::try_from(*e.numer()).ok()
            } else {
                None
            };
            match as_i32 {
                Some(k) => {
                    for (i, v) in col.iter_mut().enumerate() {
                        *v *= self.x[(i, j)].powi(k);
                    }
                }
                None => {
                    let f = to_f64(e);
                    for (i, v) in col.iter_mut().enumerate() {
                        *v *= self.x[(i, j)].powf(f);
                    }
                }
            }
        }
        col.iter().all(|v| v.is_finite()).then_some(col)
    }

    /// Joint fit over fixed plus candidate columns. The polynomial is fitted
    /// on the strided subsample and judged on every row.
    fn score(
        &self,
        cols: &[&[f64]],
        all_rows: &[Vec<Rat>],
    ) -> StdResult<(PolynomialModel, f64, usize), Rejection> {
        let s = cols.len();
        let z_fit = DMatrix::from_fn(self.fit_rows.len(), s, |i, j| cols[j][self.fit_rows[i]]);
        let (model, _) = fit_poly(&z_fit, &self.y_fit, self.degree).map_err(|_| Rejection::Domain)?;
        let b = self.x.nrows();
        let mut buf = vec![0.0; s];
        let mut y_hat = vec![0.0; b];
        for i in 0..b {
            for (j, col) in cols.iter().enumerate() {
                buf[j] = col[i];
            }
            y_hat[i] = model.predict_row(&buf);
        }
        let r2 = r_squared(&self.y_full, &y_hat).map_err(|_| Rejection::Domain)?;
        if !r2.is_finite() {
            return Err(Rejection::Domain);
        }
        let exprs: Vec<Expr> = all_rows
            .iter()
            .map(|w| Expr::power_product(self.names, w))
            .collect();
        let cx = complexity(&model.to_expr(&exprs));
        Ok((model, r2, cx))
    }
}

/// One scored lattice point, kept in the per-level pool.
#[derive(Debug, Clone)]
struct Scored {
    mu: Vec<Rat>,
    rows: Vec<Vec<Rat>>,
    canon: Vec<Vec<Rat>>,
    r2: f64,
    complexity: usize,
    poly: PolynomialModel,
}

/// Orders by R² descending; inside every band of width `R2_TIE_BAND` below a
/// leader, lower complexity wins, then the lexicographically smaller
/// canonical matrix.
fn rank_pool(pool: &mut [Scored]) {
    pool.sort_by(|a, b| b.r2.total_cmp(&a.r2));
    let mut i = 0;
    while i < pool.len() {
        let anchor = pool[i].r2;
        let mut j = i + 1;
        while j < pool.len() && anchor - pool[j].r2 <= R2_TIE_BAND {
            j += 1;
        }
        pool[i..j].sort_by(|a, b| {
            a.complexity
                .cmp(&b.complexity)
                .then_with(|| a.canon.cmp(&b.canon))
        });
        i = j;
    }
}

/// Everything one latent level needs: the reduced parameter space, the
/// frozen latents from earlier levels, and the active structure rules.
struct LevelTask<'a> {
    engine: &'a Engine<'a>,
    sol: &'a AffineSolutionSet,
    zps: &'a ZeroPatternSolution,
    fixed_rows: &'a [Vec<Rat>],
    fixed_cols: &'a [Vec<f64>],
    rules: &'a [CliqueRule],
    designated: Option<usize>,
    enforce_ratio: bool,
    latent_no: usize,
}

/// Runs the full step schedule for one latent level, pooling candidates
/// across refinements. Fails with per-reason counts when nothing survives.
fn run_level(
    task: &LevelTask,
    config: &SearchConfig,
    trace: &mut SearchTrace,
    pool: &mut Vec<Scored>,
) -> Result<()> {
    let rejects_at_entry = trace.rejections.clone();
    let c = task.zps.dof();
    let mut dedup = DedupTable::default();
    let mut survivors: Vec<Vec<Rat>> = Vec::new();

    for (li, step) in config.steps.iter().enumerate() {
        let mus: Vec<Vec<Rat>> = if li == 0 {
            let axis = lattice_axis(config.range.0, config.range.1, *step);
            cartesian(&vec![axis; c])
        } else {
            let offs = cartesian(&vec![offsets(config.steps[li - 1], *step); c]);
            let mut out = Vec::new();
            for su in &survivors {
                for delta in &offs {
                    let mu: Vec<Rat> = su.iter().zip(delta).map(|(a, d)| *a + *d).collect();
                    if mu
                        .iter()
                        .all(|v| *v >= config.range.0 && *v <= config.range.1)
                    {
                        out.push(mu);
                    }
                }
            }
            out
        };

        let mut batch: Vec<(Vec<Rat>, Vec<Rat>, Vec<Vec<Rat>>)> = Vec::new();
        let mut level_enumerated = 0usize;
        for mu in mus {
            trace.candidates_enumerated += 1;
            level_enumerated += 1;
            let row = exponents_from_params(&mu, task.zps, task.sol);
            let mut rows_full = task.fixed_rows.to_vec();
            rows_full.push(row.clone());
            if let Err(rej) = constraint_filter(&rows_full, &task.engine.facts, config) {
                rej.tally(&mut trace.rejections);
                continue;
            }
            if !task.rules.is_empty() {
                if let Err(rej) = check_row(&row, task.rules, task.designated, task.enforce_ratio)
                {
                    rej.tally(&mut trace.rejections);
                    continue;
                }
            }
            if !dedup.insert(&rows_full) {
                trace.dedup_hits += 1;
                continue;
            }
            batch.push((mu, row, rows_full));
        }

        let engine = task.engine;
        let fixed_cols = task.fixed_cols;
        let results: Vec<(Vec<Rat>, Vec<Rat>, Vec<Vec<Rat>>, StdResult<(PolynomialModel, f64, usize), Rejection>)> =
            batch
                .into_par_iter()
                .map(|(mu, row, rows_full)| {
                    let outcome = match engine.latent_column(&row) {
                        None => Err(Rejection::Domain),
                        Some(col) => {
                            let mut cols: Vec<&[f64]> =
                                fixed_cols.iter().map(Vec::as_slice).collect();
                            cols.push(&col);
                            engine.score(&cols, &rows_full)
                        }
                    };
                    (mu, row, rows_full, outcome)
                })
                .collect();

        let mut level_scored = 0usize;
        for (mu, _row, rows_full, outcome) in results {
            match outcome {
                Err(rej) => rej.tally(&mut trace.rejections),
                Ok((poly, r2, cx)) => {
                    let canon = canonical_rows(&rows_full);
                    pool.push(Scored {
                        mu,
                        rows: rows_full,
                        canon,
                        r2,
                        complexity: cx,
                        poly,
                    });
                    trace.candidates_scored += 1;
                    level_scored += 1;
                }
            }
        }

        rank_pool(pool);
        let best_r2 = pool.first().map_or(f64::NAN, |s| s.r2);
        trace.levels.push(LevelLog {
            latent: task.latent_no,
            step: format_rat(step),
            enumerated: level_enumerated,
            scored: level_scored,
            best_r2,
        });
        if best_r2 >= config.target_r2 || c == 0 {
            break;
        }
        survivors = pool.iter().take(config.top_k).map(|s| s.mu.clone()).collect();
    }

    if pool.is_empty() {
        return Err(Error::EmptyLattice {
            counts: trace.rejections.since(&rejects_at_entry),
        });
    }
    Ok(())
}

/// Runs a level and, when every lattice point died on a ratio check, retries
/// once without the ratio constraint. Exact unit arithmetic outranks a
/// slope estimated from noisy derivatives.
fn run_level_relaxing(
    task: LevelTask,
    config: &SearchConfig,
    trace: &mut SearchTrace,
    pool: &mut Vec<Scored>,
) -> Result<()> {
    match run_level(&task, config, trace, pool) {
        Err(Error::EmptyLattice { counts }) if task.enforce_ratio && counts.ratio > 0 => {
            trace.warnings.push(format!(
                "latent {}: no dimensionally feasible exponents match the estimated \
                 ratios within {:.0}%; ratio constraint relaxed",
                task.latent_no,
                RATIO_TOLERANCE * 100.0
            ));
            let relaxed = LevelTask {
                enforce_ratio: false,
                ..task
            };
            run_level(&relaxed, config, trace, pool)
        }
        other => other,
    }
}

fn validate_graph(graph: &StructureGraph, data: &SplitXY) -> Result<()> {
    if graph.input_names != data.input_names {
        return Err(Error::InvalidInput(
            "structure graph was built over different input columns".into(),
        ));
    }
    if graph.latents.is_empty() {
        return Err(Error::InvalidInput(
            "structure graph has no cliques to search".into(),
        ));
    }
    Ok(())
}

fn build_candidates(
    pool: Vec<Scored>,
    fixed: &[LatentSpec],
    setup: &DiSetup,
    d_matrix: &DimMatrix,
    d_out: &DimVector,
) -> Vec<CandidateFormula> {
    let assign_units = setup.mode == DiMode::Di2 || setup.dimensionless_fallback;
    pool.into_iter()
        .map(|sc| {
            let mut latents: Vec<LatentSpec> = fixed.to_vec();
            latents.push(LatentSpec {
                exponents: sc.rows.last().expect("pool rows are never empty").clone(),
                mode: setup.mode,
                params: sc.mu,
            });
            let mut cand = CandidateFormula {
                latents,
                poly: sc.poly,
                r2: sc.r2,
                complexity: sc.complexity,
                constant_units: None,
            };
            if assign_units {
                let z_dims: Vec<DimVector> = cand
                    .latents
                    .iter()
                    .map(|l| d_matrix.latent_unit(&l.exponents))
                    .collect();
                assign_constant_units(&mut cand, d_out, &z_dims);
            }
            cand
        })
        .collect()
}

/// Single-latent coarse-to-fine search. With a structure graph, every
/// candidate's support must occupy one clique exactly and obey that clique's
/// sign and ratio estimates.
pub fn c2f_search(
    data: &SplitXY,
    setup: &DiSetup,
    graph: Option<&StructureGraph>,
    config: &SearchConfig,
) -> Result<SearchOutcome> {
    config.validate()?;
    let started = Instant::now();
    if setup.sol.num_inputs != data.x.ncols() {
        return Err(Error::InvalidInput(
            "solution set and data disagree on the input count".into(),
        ));
    }
    let engine = Engine::new(data, config)?;
    let mut trace = SearchTrace {
        warnings: setup.warnings.clone(),
        ..SearchTrace::default()
    };
    let rules = match graph {
        Some(g) => {
            validate_graph(g, data)?;
            rules_from_graph(g)
        }
        None => Vec::new(),
    };
    let zps = refine_zero_pattern(&setup.sol, &[])?;
    let mut pool = Vec::new();
    run_level_relaxing(
        LevelTask {
            engine: &engine,
            sol: &setup.sol,
            zps: &zps,
            fixed_rows: &[],
            fixed_cols: &[],
            rules: &rules,
            designated: None,
            enforce_ratio: true,
            latent_no: 1,
        },
        config,
        &mut trace,
        &mut pool,
    )?;
    rank_pool(&mut pool);
    let ranked = build_candidates(pool, &[], setup, &data.d_matrix, &data.d_out);
    trace.wall = started.elapsed();
    Ok(SearchOutcome {
        best: ranked[0].clone(),
        ranked,
        trace,
    })
}

/// Greedy multi-level pursuit: finds one latent, freezes it, and searches
/// the next jointly against the frozen columns. With a structure graph, the
/// levels walk the cliques in member order and pin each level's support to
/// its clique. Stops when the target is met, the improvement falls under
/// the threshold, or the level budget runs out; the best level found so far
/// is returned.
pub fn multilevel_search(
    data: &SplitXY,
    setup: &DiSetup,
    graph: Option<&StructureGraph>,
    config: &SearchConfig,
) -> Result<SearchOutcome> {
    config.validate()?;
    let started = Instant::now();
    if setup.sol.num_inputs != data.x.ncols() {
        return Err(Error::InvalidInput(
            "solution set and data disagree on the input count".into(),
        ));
    }
    let engine = Engine::new(data, config)?;
    let mut trace = SearchTrace {
        warnings: setup.warnings.clone(),
        ..SearchTrace::default()
    };
    let rules = match graph {
        Some(g) => {
            validate_graph(g, data)?;
            rules_from_graph(g)
        }
        None => Vec::new(),
    };

    let p = data.x.ncols();
    let plan: Vec<Option<usize>> = match graph {
        Some(g) => (0..g.latents.len().min(config.s_max)).map(Some).collect(),
        None => vec![None; config.s_max],
    };

    let mut fixed: Vec<LatentSpec> = Vec::new();
    let mut fixed_rows: Vec<Vec<Rat>> = Vec::new();
    let mut fixed_cols: Vec<Vec<f64>> = Vec::new();
    let mut adopted: Option<(Vec<Scored>, Vec<LatentSpec>)> = None;
    let mut best_r2 = f64::NEG_INFINITY;

    for (s_idx, designated) in plan.iter().enumerate() {
        let zero_idx: Vec<usize> = match designated {
            Some(ci) => {
                let members = &rules[*ci].members;
                (0..p).filter(|j| !members.contains(j)).collect()
            }
            None => Vec::new(),
        };
        let zps = match refine_zero_pattern(&setup.sol, &zero_idx) {
            Ok(z) => z,
            Err(e) if s_idx == 0 => return Err(e),
            Err(e) => {
                trace
                    .warnings
                    .push(format!("latent {} skipped: {e}", s_idx + 1));
                continue;
            }
        };

        let mut pool = Vec::new();
        let run = run_level_relaxing(
            LevelTask {
                engine: &engine,
                sol: &setup.sol,
                zps: &zps,
                fixed_rows: &fixed_rows,
                fixed_cols: &fixed_cols,
                rules: &rules,
                designated: *designated,
                enforce_ratio: true,
                latent_no: s_idx + 1,
            },
            config,
            &mut trace,
            &mut pool,
        );
        match run {
            Ok(()) => {}
            Err(e) if s_idx == 0 => return Err(e),
            Err(Error::EmptyLattice { counts }) => {
                trace.warnings.push(format!(
                    "latent {} found no candidates ({counts}); stopping at {} latent(s)",
                    s_idx + 1,
                    fixed.len()
                ));
                continue;
            }
            Err(e) => return Err(e),
        }

        rank_pool(&mut pool);
        let level_best = pool[0].r2;
        if level_best <= best_r2 {
            break;
        }
        let improvement = level_best - best_r2;
        best_r2 = level_best;

        let winner_row = pool[0].rows.last().expect("scored rows are never empty").clone();
        let winner_mu = pool[0].mu.clone();
        adopted = Some((pool, fixed.clone()));
        fixed.push(LatentSpec {
            exponents: winner_row.clone(),
            mode: setup.mode,
            params: winner_mu,
        });
        fixed_rows.push(winner_row.clone());
        fixed_cols.push(
            engine
                .latent_column(&winner_row)
                .expect("a scored latent column is finite"),
        );

        if best_r2 >= config.target_r2 || (s_idx > 0 && improvement < config.improve_eps) {
            break;
        }
    }

    let (pool, fixed_at_adoption) = adopted.ok_or_else(|| Error::NoCandidate(
        "no latent level produced a candidate".into(),
    ))?;
    let ranked = build_candidates(pool, &fixed_at_adoption, setup, &data.d_matrix, &data.d_out);
    trace.wall = started.elapsed();
    Ok(SearchOutcome {
        best: ranked[0].clone(),
        ranked,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Column, Dataset};
    use crate::structure::{
        cluster_latents, ppmcc, rho_matrix, weight_ratios, Clique, DerivMethod, PairEstimate,
        CLIQUE_THRESHOLD,
    };
    use crate::units::parse_unit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn planets() -> Dataset {
        crate::datasets::solar_system()
    }

    fn rows_i(cand: &CandidateFormula) -> Vec<Vec<i128>> {
        cand.exponent_rows()
            .iter()
            .map(|row| {
                row.iter()
                    .map(|e| {
                        assert!(is_integer(e), "expected integer exponents, got {e}");
                        *e.numer()
                    })
                    .collect()
            })
            .collect()
    }

    fn assert_trace_consistent(trace: &SearchTrace) {
        assert_eq!(
            trace.candidates_scored + trace.dedup_hits + trace.rejections.total(),
            trace.candidates_enumerated,
            "trace accounting must add up"
        );
    }

    #[test]
    fn config_validation_rejects_bad_schedules() {
        let ok = SearchConfig::default();
        ok.validate().unwrap();

        let mut c = SearchConfig::default();
        c.steps = vec![ratq(1, 2), rat(1)];
        assert!(c.validate().is_err());

        c = SearchConfig::default();
        c.steps.clear();
        assert!(c.validate().is_err());

        c = SearchConfig::default();
        c.target_r2 = 0.0;
        assert!(c.validate().is_err());
        c.target_r2 = 1.0;
        c.validate().unwrap();

        c = SearchConfig::default();
        c.degree = MAX_DEGREE + 1;
        assert!(c.validate().is_err());

        c = SearchConfig::default();
        c.range = (rat(2), rat(-2));
        assert!(c.validate().is_err());
    }

    #[test]
    fn lattice_axis_and_offsets_follow_the_schedule() {
        let axis = lattice_axis(rat(-2), rat(2), rat(1));
        assert_eq!(axis, vec![rat(-2), rat(-1), rat(0), rat(1), rat(2)]);

        assert_eq!(
            offsets(rat(1), ratq(1, 2)),
            vec![rat(-1), ratq(-1, 2), rat(0), ratq(1, 2), rat(1)]
        );
        assert_eq!(
            offsets(ratq(1, 2), ratq(1, 5)),
            vec![ratq(-2, 5), ratq(-1, 5), rat(0), ratq(1, 5), ratq(2, 5)]
        );
        assert_eq!(
            offsets(ratq(1, 5), ratq(1, 10)),
            vec![ratq(-1, 5), ratq(-1, 10), rat(0), ratq(1, 10), ratq(1, 5)]
        );
        assert_eq!(cartesian(&vec![vec![rat(0), rat(1)]; 3]).len(), 8);
        assert_eq!(cartesian(&[]).len(), 1);
    }

    #[test]
    fn constraint_filter_names_the_violated_rule() {
        let facts = ColumnFacts {
            has_negative: vec![false, true, false],
            has_zero: vec![false, false, true],
        };
        let config = SearchConfig::default();
        let check = |w: &[Vec<Rat>]| constraint_filter(w, &facts, &config);

        assert_eq!(
            check(&[vec![rat(1), ratq(1, 2), rat(0)]]),
            Err(Rejection::IntegerRequired)
        );
        assert_eq!(
            check(&[vec![rat(1), rat(0), rat(-1)]]),
            Err(Rejection::NonnegativeRequired)
        );
        assert_eq!(check(&[vec![rat(0), rat(0), rat(0)]]), Err(Rejection::ZeroRow));
        assert_eq!(
            check(&[vec![rat(1), rat(2), rat(0)], vec![rat(1), rat(2), rat(0)]]),
            Err(Rejection::DuplicateRows)
        );
        assert_eq!(
            check(&[vec![rat(1), rat(2), rat(0)], vec![rat(2), rat(4), rat(0)]]),
            Err(Rejection::ProportionalRows)
        );
        assert!(check(&[vec![rat(1), rat(1), rat(1)]]).is_ok());

        let mut sparse = SearchConfig::default();
        sparse.kappa1 = Some(2);
        assert_eq!(
            constraint_filter(&[vec![rat(1), rat(1), rat(1)]], &facts, &sparse),
            Err(Rejection::Sparsity)
        );
        sparse.kappa1 = None;
        sparse.kappa2 = Some(1);
        assert_eq!(
            constraint_filter(
                &[vec![rat(1), rat(0), rat(0)], vec![rat(2), rat(1), rat(0)]],
                &facts,
                &sparse
            ),
            Err(Rejection::Sparsity)
        );
    }

    #[test]
    fn sign_code_buckets_permutations_together() {
        let a = vec![vec![rat(1), rat(-2), rat(0)]];
        let b = vec![vec![rat(2), rat(-1), rat(0)]];
        assert_eq!(sign_code(&a), sign_code(&b));
        assert_ne!(canonical_rows(&a), canonical_rows(&b));

        let w = vec![vec![rat(1), rat(0), rat(-1)], vec![rat(0), rat(2), rat(1)]];
        let perm = vec![w[1].clone(), w[0].clone()];
        assert_eq!(sign_code(&w), sign_code(&perm));
        assert_eq!(canonical_rows(&w), canonical_rows(&perm));

        let mut table = DedupTable::default();
        assert!(table.insert(&w));
        assert!(!table.insert(&perm));
        assert!(table.insert(&a));
        assert_eq!(table.len(), 2);
    }

    #[test]
    fn dedup_table_matches_a_linear_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let lattice: Vec<Rat> = lattice_axis(rat(-2), rat(2), ratq(1, 2));
        let mut table = DedupTable::default();
        let mut log: Vec<Vec<Vec<Rat>>> = Vec::new();
        for _ in 0..1000 {
            let w: Vec<Vec<Rat>> = if !log.is_empty() && rng.gen_bool(0.4) {
                // Re-present a seen matrix with shuffled rows.
                let mut seen = log[rng.gen_range(0..log.len())].clone();
                seen.reverse();
                seen
            } else {
                let rows = rng.gen_range(1..=2);
                (0..rows)
                    .map(|_| (0..3).map(|_| lattice[rng.gen_range(0..lattice.len())]).collect())
                    .collect()
            };
            let expected_fresh = !log
                .iter()
                .any(|prev| canonical_rows(prev) == canonical_rows(&w));
            assert_eq!(table.insert(&w), expected_fresh);
            if expected_fresh {
                log.push(w);
            }
        }
        assert_eq!(table.len(), log.len());
    }

    #[test]
    fn planetary_di1_recovers_the_cubic_density_law() {
        let ds = planets()
            .select(&["d", "rho", "g", "v_e", "t_d", "m"])
            .unwrap();
        let split = ds.split_xy("m").unwrap();
        let setup = resolve_di(&split.d_matrix, &split.d_out, DiMode::Di1).unwrap();
        assert!(!setup.dimensionless_fallback);
        let config = SearchConfig::default();
        let out = multilevel_search(&split, &setup, None, &config).unwrap();

        assert_eq!(rows_i(&out.best), vec![vec![3, 1, 0, 0, 0]]);
        assert!(out.best.r2 > 0.999, "r2 = {}", out.best.r2);
        assert_trace_consistent(&out.trace);

        // Every survivor carries the output's unit exactly.
        for cand in &out.ranked {
            for row in cand.exponent_rows() {
                assert_eq!(split.d_matrix.latent_unit(&row), split.d_out);
            }
            assert!(cand.constant_units.is_none());
        }
        // The winner is the simplest member of the leading tie band.
        let top_r2 = out.ranked[0].r2.max(out.ranked[1].r2);
        assert!(top_r2 - out.best.r2 <= R2_TIE_BAND);
        assert!(out.best.complexity <= out.ranked[1].complexity);
        let rendered = out.best.render("m", &split.input_names);
        assert!(rendered.contains("d^3"), "rendered: {rendered}");
    }

    #[test]
    fn planetary_di2_contains_the_published_alternates() {
        let ds = planets()
            .select(&["d", "rho", "g", "v_e", "t_d", "m"])
            .unwrap();
        let split = ds.split_xy("m").unwrap();
        let setup = resolve_di(&split.d_matrix, &split.d_out, DiMode::Di2).unwrap();
        let mut config = SearchConfig::default();
        config.di_mode = DiMode::Di2;
        config.kappa1 = Some(2);
        let out = c2f_search(&split, &setup, None, &config).unwrap();

        assert!(out.trace.candidates_scored <= 200, "scored = {}", out.trace.candidates_scored);
        assert_trace_consistent(&out.trace);
        assert!(out.trace.rejections.sparsity > 0);

        let find = |rows: Vec<Vec<i128>>| {
            out.ranked
                .iter()
                .find(|c| rows_i(c) == rows)
                .unwrap_or_else(|| panic!("missing candidate {rows:?}"))
        };
        let dve2 = find(vec![vec![1, 0, 0, 2, 0]]);
        assert!(dve2.r2 > 0.99);
        let gd2 = find(vec![vec![2, 0, 1, 0, 0]]);
        assert!(gd2.r2 > 0.99);
        let ve_td = find(vec![vec![0, 0, 0, 2, -2]]);
        assert!(ve_td.r2 >= 0.9999, "r2 = {}", ve_td.r2);

        // Constants absorb the output's unit: a0 in kg, and the linear
        // coefficient of d*v_e^2 in kg*m^-3*s^2.
        let units = dve2.constant_units.as_ref().unwrap();
        assert_eq!(units[0], parse_unit("kg").unwrap());
        let linear_idx = dve2
            .poly
            .powers
            .iter()
            .position(|k| k == &vec![1u32])
            .unwrap();
        assert_eq!(units[linear_idx], parse_unit("kg*m^-3*s^2").unwrap());
    }

    #[test]
    fn kepler_power_law_survives_with_the_reference_constant() {
        let ds = crate::datasets::kepler();
        let split = ds.split_xy("t").unwrap();
        let setup = resolve_di(&split.d_matrix, &split.d_out, DiMode::Di2).unwrap();
        let mut config = SearchConfig::default();
        config.di_mode = DiMode::Di2;
        config.target_r2 = 1.0;
        let out = c2f_search(&split, &setup, None, &config).unwrap();

        assert!(out.trace.candidates_scored <= 100, "scored = {}", out.trace.candidates_scored);
        assert_trace_consistent(&out.trace);
        assert_eq!(out.best.exponent_rows(), vec![vec![ratq(3, 2)]]);
        assert!(out.best.r2 > 0.999999999);

        let coeff = out.best.linear_coefficient(0).unwrap();
        let reference = 5.456e-10;
        assert!(
            (coeff - reference).abs() / reference < 0.01,
            "coefficient {coeff:e} strays from {reference:e}"
        );

        // Best R² never drops from one refinement level to the next.
        for pair in out.trace.levels.windows(2) {
            assert!(pair[1].best_r2 >= pair[0].best_r2);
        }

        // A single-latent pursuit that meets the target at the first level
        // is the same search.
        let ml = multilevel_search(&split, &setup, None, &config).unwrap();
        assert_eq!(ml.ranked.len(), out.ranked.len());
        for (a, b) in ml.ranked.iter().zip(&out.ranked) {
            assert_eq!(a.exponent_rows(), b.exponent_rows());
            assert_eq!(a.r2.to_bits(), b.r2.to_bits());
        }
    }

    #[test]
    fn dedup_never_changes_the_best_fit() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
            let b = 80;
            let p = 3;
            let x = DMatrix::<f64>::from_fn(b, p, |_, _| rng.gen_range(1.0..2.0));
            let w_true: Vec<i32> = loop {
                let w: Vec<i32> = (0..p).map(|_| rng.gen_range(-2..=2)).collect();
                if w.iter().any(|v| *v != 0) {
                    break w;
                }
            };
            let y = DVector::from_fn(b, |i, _| {
                let z: f64 = (0..p).map(|j| x[(i, j)].powi(w_true[j])).product();
                3.0 * z + 2.0
            });
            let split = SplitXY {
                input_names: vec!["x1".into(), "x2".into(), "x3".into()],
                x,
                y,
                d_matrix: DimMatrix::zero(p),
                d_out: DimVector::dimensionless(),
            };
            let setup = resolve_di(&split.d_matrix, &split.d_out, DiMode::Di2).unwrap();
            let mut config = SearchConfig::default();
            config.di_mode = DiMode::Di2;
            config.degree = 2;
            config.steps = vec![rat(1), ratq(1, 2)];
            config.target_r2 = 1.0;
            let out = c2f_search(&split, &setup, None, &config).unwrap();
            assert_trace_consistent(&out.trace);

            // Brute force over the same lattice, duplicates included.
            let engine = Engine::new(&split, &config).unwrap();
            let level0 = cartesian(&vec![lattice_axis(rat(-2), rat(2), rat(1)); p]);
            let mut brute_best = f64::NEG_INFINITY;
            let mut survivors: Vec<(f64, Vec<Rat>)> = Vec::new();
            for mu in &level0 {
                if mu.iter().all(Rat::is_zero) {
                    continue;
                }
                let col = engine.latent_column(mu).unwrap();
                let (_, r2, _) = engine.score(&[&col], std::slice::from_ref(mu)).unwrap();
                brute_best = brute_best.max(r2);
                survivors.push((r2, mu.clone()));
            }
            survivors.sort_by(|a, b| b.0.total_cmp(&a.0));
            for (_, su) in survivors.iter().take(config.top_k) {
                for delta in cartesian(&vec![offsets(rat(1), ratq(1, 2)); p]) {
                    let mu: Vec<Rat> = su.iter().zip(&delta).map(|(a, d)| *a + *d).collect();
                    if mu.iter().any(|v| *v < rat(-2) || *v > rat(2))
                        || mu.iter().all(Rat::is_zero)
                    {
                        continue;
                    }
                    let col = engine.latent_column(&mu).unwrap();
                    let (_, r2, _) = engine.score(&[&col], std::slice::from_ref(&mu)).unwrap();
                    brute_best = brute_best.max(r2);
                }
            }
            assert!(
                (out.best.r2 - brute_best).abs() <= 1e-12,
                "seed {seed}: dedup best {} vs brute best {brute_best}",
                out.best.r2
            );
        }
    }

    fn disjoint_two_latent_split() -> SplitXY {
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        let b = 200;
        let x = DMatrix::<f64>::from_fn(b, 3, |_, _| rng.gen_range(1.0..2.0));
        let y = DVector::from_fn(b, |i, _| {
            100.0 * x[(i, 0)] * x[(i, 1)] + x[(i, 2)] * x[(i, 2)]
        });
        SplitXY {
            input_names: vec!["x1".into(), "x2".into(), "x3".into()],
            x,
            y,
            d_matrix: DimMatrix::zero(3),
            d_out: DimVector::dimensionless(),
        }
    }

    #[test]
    fn two_disjoint_latents_match_the_exhaustive_oracle() {
        let split = disjoint_two_latent_split();
        let setup = resolve_di(&split.d_matrix, &split.d_out, DiMode::Di2).unwrap();
        let mut config = SearchConfig::default();
        config.di_mode = DiMode::Di2;
        config.steps = vec![rat(1)];
        config.degree = 2;
        config.s_max = 2;
        config.target_r2 = 0.999999;
        config.improve_eps = 1e-9;
        let out = multilevel_search(&split, &setup, None, &config).unwrap();
        assert_trace_consistent(&out.trace);

        let rows = rows_i(&out.best);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], vec![1, 1, 0]);
        assert!(
            rows[1] == vec![0, 0, 1] || rows[1] == vec![0, 0, 2],
            "second latent {rows:?}"
        );
        assert!(out.best.r2 > 0.999999);

        // Joint exhaustive search at step 1, no pruning beyond zero rows.
        let engine = Engine::new(&split, &config).unwrap();
        let lattice = cartesian(&vec![lattice_axis(rat(-2), rat(2), rat(1)); 3]);
        let nonzero: Vec<&Vec<Rat>> = lattice
            .iter()
            .filter(|mu| !mu.iter().all(Rat::is_zero))
            .collect();
        let mut brute_best = f64::NEG_INFINITY;
        for w1 in &nonzero {
            let c1 = engine.latent_column(w1).unwrap();
            for w2 in &nonzero {
                let c2 = engine.latent_column(w2).unwrap();
                let rows = vec![(*w1).clone(), (*w2).clone()];
                if let Ok((_, r2, _)) = engine.score(&[&c1, &c2], &rows) {
                    brute_best = brute_best.max(r2);
                }
            }
        }
        assert!(
            brute_best - out.best.r2 <= 1e-9,
            "greedy {} vs joint exhaustive {brute_best}",
            out.best.r2
        );
    }

    #[test]
    fn multilevel_stops_when_the_target_is_met() {
        let split = disjoint_two_latent_split();
        let setup = resolve_di(&split.d_matrix, &split.d_out, DiMode::Di2).unwrap();
        let mut config = SearchConfig::default();
        config.di_mode = DiMode::Di2;
        config.steps = vec![rat(1)];
        config.degree = 2;
        config.s_max = 3;
        config.target_r2 = 0.99;
        let out = multilevel_search(&split, &setup, None, &config).unwrap();

        assert_eq!(out.best.latents.len(), 1);
        assert_eq!(rows_i(&out.best), vec![vec![1, 1, 0]]);
        assert!(out.best.r2 >= 0.99);
        assert!(out.trace.levels.iter().all(|l| l.latent == 1));
    }

    #[test]
    fn rlc_search_respects_structure_and_relaxes_conflicting_ratios() {
        let ds = crate::datasets::rlc_grid();
        let split = ds.split_xy("Z").unwrap();
        let rho = rho_matrix(&ds, "Z", DerivMethod::BackwardDiff).unwrap();
        let graph = cluster_latents(&ppmcc(&rho), CLIQUE_THRESHOLD, &split.input_names);
        let graph = weight_ratios(&rho, &graph);
        assert_eq!(graph.member_sets(), vec![vec![0], vec![1, 4], vec![2, 4]]);

        let setup = resolve_di(&split.d_matrix, &split.d_out, DiMode::Di1).unwrap();
        let config = SearchConfig::default();
        let out = multilevel_search(&split, &setup, Some(&graph), &config).unwrap();

        assert_eq!(
            rows_i(&out.best),
            vec![
                vec![1, 0, 0, 0, 0, 0],
                vec![0, 1, 0, 0, 1, 0],
                vec![0, 0, -1, 0, -1, 0],
            ]
        );
        assert!(out.best.r2 >= 0.99, "r2 = {}", out.best.r2);
        assert!(out.trace.candidates_scored <= 1000);
        assert_trace_consistent(&out.trace);

        // The measured slopes sit well outside ±20% of the dimensionally
        // forced ratio 1.0, so both two-member levels must have relaxed.
        let relaxed = out
            .trace
            .warnings
            .iter()
            .filter(|w| w.contains("ratio constraint relaxed"))
            .count();
        assert_eq!(relaxed, 2);
        assert!(out.trace.rejections.ratio >= 2);

        // Three greedy levels, each strictly better than the last.
        let mut seen = Vec::new();
        for log in &out.trace.levels {
            if seen.last() != Some(&log.latent) {
                seen.push(log.latent);
            }
        }
        assert_eq!(seen, vec![1, 2, 3]);
    }

    #[test]
    fn c2f_with_graph_keeps_supports_on_cliques() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = 150;
        let x = DMatrix::<f64>::from_fn(b, 3, |_, _| rng.gen_range(1.0..2.0));
        let y = DVector::from_fn(b, |i, _| {
            let z = x[(i, 0)] * x[(i, 1)];
            z * z
        });
        let split = SplitXY {
            input_names: vec!["x1".into(), "x2".into(), "x3".into()],
            x,
            y,
            d_matrix: DimMatrix::zero(3),
            d_out: DimVector::dimensionless(),
        };
        let graph = StructureGraph {
            input_names: split.input_names.clone(),
            contributing: vec![0, 1, 2],
            latents: vec![
                Clique {
                    members: vec![0, 1],
                    pairs: vec![PairEstimate {
                        j: 0,
                        k: 1,
                        ppmcc: 0.99,
                        ratio: Some(1.0),
                    }],
                },
                Clique {
                    members: vec![2],
                    pairs: vec![],
                },
            ],
        };
        let setup = resolve_di(&split.d_matrix, &split.d_out, DiMode::Di2).unwrap();
        let mut config = SearchConfig::default();
        config.di_mode = DiMode::Di2;
        config.target_r2 = 1.0;
        let out = c2f_search(&split, &setup, Some(&graph), &config).unwrap();

        for cand in &out.ranked {
            let row = &cand.latents[0].exponents;
            let support: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, e)| !e.is_zero())
                .map(|(j, _)| j)
                .collect();
            assert!(
                support == vec![0, 1] || support == vec![2],
                "support {support:?} left its clique"
            );
        }
        assert!(out.trace.rejections.zero_pattern > 0);
        assert!(out.trace.rejections.ratio > 0);
        assert!(out.trace.rejections.sign_pattern > 0);
        assert!(out.best.r2 > 0.999);
        assert_trace_consistent(&out.trace);
    }

    #[test]
    fn empty_lattice_reports_reasons_and_exit_code() {
        // The output's unit forces w = -1, but the input column contains 0.
        let mut ds = Dataset::from_columns(vec![Column {
            name: "x".into(),
            unit: parse_unit("m").unwrap(),
            values: vec![0.0, 1.0, 2.0, 4.0],
        }])
        .unwrap();
        ds.push_column(Column {
            name: "y".into(),
            unit: parse_unit("1/m").unwrap(),
            values: vec![5.0, 1.0, 0.5, 0.25],
        })
        .unwrap();
        let split = ds.split_xy("y").unwrap();
        let setup = resolve_di(&split.d_matrix, &split.d_out, DiMode::Di1).unwrap();
        let err = c2f_search(&split, &setup, None, &SearchConfig::default()).unwrap_err();
        match &err {
            Error::EmptyLattice { counts } => {
                assert_eq!(counts.nonnegative_required, 1);
                assert_eq!(counts.total(), 1);
            }
            other => panic!("expected EmptyLattice, got {other:?}"),
        }
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn dimensionless_fallback_keeps_units_on_constants() {
        // Output in kg while the only inputs carry m and s: no power product
        // works, so the search degrades to dimensionless groups.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = 60;
        let x = DMatrix::<f64>::from_fn(b, 2, |_, _| rng.gen_range(1.0..3.0));
        let y = DVector::from_fn(b, |i, _| 7.0 * (x[(i, 0)] / x[(i, 1)]).powi(2) + 0.5);
        let split = SplitXY {
            input_names: vec!["a".into(), "b".into()],
            x,
            y,
            d_matrix: DimMatrix::new(vec![
                parse_unit("m").unwrap(),
                parse_unit("m").unwrap(),
            ]),
            d_out: parse_unit("kg").unwrap(),
        };
        let setup = resolve_di(&split.d_matrix, &split.d_out, DiMode::Di1).unwrap();
        assert!(setup.dimensionless_fallback);
        assert_eq!(setup.warnings.len(), 1);

        let mut config = SearchConfig::default();
        config.target_r2 = 1.0;
        let out = c2f_search(&split, &setup, None, &config).unwrap();
        assert!(out.trace.warnings[0].contains("dimensionless"));
        assert!(out.best.r2 > 0.999999);
        let rows = out.best.exponent_rows();
        assert_eq!(rows[0][0], -rows[0][1], "latent must be a ratio power");
        // Every group is dimensionless, so every coefficient carries the
        // output's unit unchanged.
        for unit in out.best.constant_units.as_ref().unwrap() {
            assert_eq!(*unit, parse_unit("kg").unwrap());
        }
    }

    #[test]
    fn constant_units_follow_the_monomial_dimensions() {
        let d_matrix = DimMatrix::new(vec![
            parse_unit("m").unwrap(),
            parse_unit("m/s").unwrap(),
        ]);
        let d_out = parse_unit("kg").unwrap();
        // Any fitted model works here; only the monomial list matters.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = DMatrix::<f64>::from_fn(30, 2, |_, _| rng.gen_range(1.0..2.0));
        let y = DVector::from_fn(30, |i, _| z[(i, 0)] + z[(i, 1)]);
        let (poly, _) = fit_poly(&z, &y, 2).unwrap();
        let mut cand = CandidateFormula {
            latents: vec![
                LatentSpec {
                    exponents: vec![rat(1), rat(0)],
                    mode: DiMode::Di2,
                    params: vec![rat(1), rat(0)],
                },
                LatentSpec {
                    exponents: vec![rat(0), rat(2)],
                    mode: DiMode::Di2,
                    params: vec![rat(0), rat(2)],
                },
            ],
            poly,
            r2: 1.0,
            complexity: 1,
            constant_units: None,
        };
        let z_dims: Vec<DimVector> = cand
            .latents
            .iter()
            .map(|l| d_matrix.latent_unit(&l.exponents))
            .collect();
        assign_constant_units(&mut cand, &d_out, &z_dims);
        let units = cand.constant_units.as_ref().unwrap();
        let powers = &cand.poly.powers;
        for (k, unit) in powers.iter().zip(units) {
            // dim(z1) = m, dim(z2) = m^2/s^2.
            let expect = d_out
                .sub(&parse_unit("m").unwrap().scale(rat(k[0] as i128)))
                .sub(&parse_unit("m^2/s^2").unwrap().scale(rat(k[1] as i128)));
            assert_eq!(unit, &expect);
        }
        // Spot checks: the constant term carries kg; the z1*z2 term carries
        // kg*m^-3*s^2.
        let idx0 = powers.iter().position(|k| k == &vec![0, 0]).unwrap();
        assert_eq!(units[idx0], parse_unit("kg").unwrap());
        let idx11 = powers.iter().position(|k| k == &vec![1, 1]).unwrap();
        assert_eq!(units[idx11], parse_unit("kg*m^-3*s^2").unwrap());
    }

    #[test]
    fn non_finite_latents_count_as_domain_rejections() {
        // The second column is inert but so large that squaring it
        // overflows; candidates touching it must die on the domain check,
        // never poison the ranking.
        let b = 40;
        let x = DMatrix::<f64>::from_fn(b, 2, |i, j| {
            let base = 1.0 + i as f64 / b as f64;
            if j == 0 {
                base
            } else {
                1.0e200 * base
            }
        });
        let y = DVector::from_fn(b, |i, _| x[(i, 0)] * x[(i, 0)]);
        let split = SplitXY {
            input_names: vec!["x1".into(), "x2".into()],
            x,
            y,
            d_matrix: DimMatrix::zero(2),
            d_out: DimVector::dimensionless(),
        };
        let setup = resolve_di(&split.d_matrix, &split.d_out, DiMode::Di2).unwrap();
        let mut config = SearchConfig::default();
        config.di_mode = DiMode::Di2;
        config.degree = 2;
        config.steps = vec![rat(1)];
        config.target_r2 = 1.0;
        let out = c2f_search(&split, &setup, None, &config).unwrap();
        assert!(out.trace.rejections.domain >= 1);
        let rows = rows_i(&out.best);
        assert_eq!(rows[0][1], 0, "winner must avoid the overflowing column");
        assert!(rows[0][0] == 1 || rows[0][0] == 2);
        assert!(out.best.r2 > 0.999999);
        assert_trace_consistent(&out.trace);
    }

    #[test]
    fn ranked_output_is_deterministic_across_thread_pools() {
        let ds = crate::datasets::kepler();
        let split = ds.split_xy("t").unwrap();
        let setup = resolve_di(&split.d_matrix, &split.d_out, DiMode::Di2).unwrap();
        let mut config = SearchConfig::default();
        config.di_mode = DiMode::Di2;
        config.target_r2 = 1.0;

        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| c2f_search(&split, &setup, None, &config).unwrap())
        };
        let a = run(2);
        let b = run(8);
        assert_eq!(a.ranked.len(), b.ranked.len());
        for (ca, cb) in a.ranked.iter().zip(&b.ranked) {
            assert_eq!(ca.exponent_rows(), cb.exponent_rows());
            assert_eq!(ca.r2.to_bits(), cb.r2.to_bits());
            assert_eq!(ca.complexity, cb.complexity);
        }
        assert_eq!(a.trace.candidates_enumerated, b.trace.candidates_enumerated);
        assert_eq!(a.trace.candidates_scored, b.trace.candidates_scored);
        assert_eq!(a.trace.dedup_hits, b.trace.dedup_hits);
    }
}
