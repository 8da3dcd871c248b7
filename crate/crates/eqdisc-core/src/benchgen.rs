//! Synthetic two-stage benchmark suite for structure identification.
//!
//! Each generated function composes random power-product latents with a
//! small random outer expression, keeping the exact wiring as ground truth.
//! Sampling the functions on axis-aligned grids at several spacings and
//! scoring the recovered structure against the truth reproduces the
//! accuracy-versus-resolution study that motivates the structure module.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::dataset::{Column, Dataset};
use crate::structure::{
    cluster_latents, evaluate_structure, ppmcc, rho_matrix, weight_ratios, Clique, DerivMethod,
    PairEstimate, StructureGraph, StructureMetrics, CLIQUE_THRESHOLD,
};
use crate::units::DimVector;
use crate::{Error, Result};
use nalgebra::DMatrix;

/// Arguments to the exponential are clamped here so every sampled output
/// stays finite.
pub const EXP_CLAMP: f64 = 20.0;

/// Hard ceiling on grid points per sampled dataset.
pub const GRID_CAP: usize = 20_000;

/// Grid spacing used during generation to screen candidate functions for
/// identifiable structure.
const PROBE_DX: f64 = 0.2;

/// Cross-clique correlations must stay below this margin at generation
/// time, leaving headroom under the clustering threshold.
const CROSS_CLIQUE_MARGIN: f64 = 0.90;

const WEIGHT_CHOICES: [f64; 4] = [0.5, 1.0, 1.5, 2.0];

/// Outer expression over the latent values, built from a fixed operator
/// pool with composition depth at most 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum F2Node {
    Latent(usize),
    Add(Box<F2Node>, Box<F2Node>),
    Sub(Box<F2Node>, Box<F2Node>),
    Mul(Box<F2Node>, Box<F2Node>),
    Sin(Box<F2Node>),
    ExpClamped(Box<F2Node>),
    Poly { arg: Box<F2Node>, coeffs: Vec<f64> },
}

impl F2Node {
    /// Value and gradient with respect to the latent vector.
    pub fn eval_with_grad(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let s = z.len();
        match self {
            F2Node::Latent(i) => {
                let mut g = vec![0.0; s];
                g[*i] = 1.0;
                (z[*i], g)
            }
            F2Node::Add(a, b) => {
                let (va, ga) = a.eval_with_grad(z);
                let (vb, gb) = b.eval_with_grad(z);
                (va + vb, ga.iter().zip(&gb).map(|(x, y)| x + y).collect())
            }
            F2Node::Sub(a, b) => {
                let (va, ga) = a.eval_with_grad(z);
                let (vb, gb) = b.eval_with_grad(z);
                (va - vb, ga.iter().zip(&gb).map(|(x, y)| x - y).collect())
            }
            F2Node::Mul(a, b) => {
                let (va, ga) = a.eval_with_grad(z);
                let (vb, gb) = b.eval_with_grad(z);
                (
                    va * vb,
                    ga.iter()
                        .zip(&gb)
                        .map(|(x, y)| x * vb + va * y)
                        .collect(),
                )
            }
            F2Node::Sin(a) => {
                let (v, g) = a.eval_with_grad(z);
                (v.sin(), g.iter().map(|x| x * v.cos()).collect())
            }
            F2Node::ExpClamped(a) => {
                let (v, g) = a.eval_with_grad(z);
                if v >= EXP_CLAMP {
                    (EXP_CLAMP.exp(), vec![0.0; s])
                } else {
                    (v.exp(), g.iter().map(|x| x * v.exp()).collect())
                }
            }
            F2Node::Poly { arg, coeffs } => {
                let (v, g) = arg.eval_with_grad(z);
                let mut val = 0.0;
                let mut slope = 0.0;
                for (k, c) in coeffs.iter().enumerate() {
                    val += c * v.powi(k as i32);
                    if k > 0 {
                        slope += c * k as f64 * v.powi(k as i32 - 1);
                    }
                }
                (val, g.iter().map(|x| x * slope).collect())
            }
        }
    }

    /// Operator nesting depth; a bare latent is 0.
    pub fn depth(&self) -> usize {
        match self {
            F2Node::Latent(_) => 0,
            F2Node::Add(a, b) | F2Node::Sub(a, b) | F2Node::Mul(a, b) => {
                1 + a.depth().max(b.depth())
            }
            F2Node::Sin(a) | F2Node::ExpClamped(a) => 1 + a.depth(),
            F2Node::Poly { arg, .. } => 1 + arg.depth(),
        }
    }

    /// Latent indices referenced anywhere in the tree.
    pub fn latents_used(&self, into: &mut Vec<usize>) {
        match self {
            F2Node::Latent(i) => into.push(*i),
            F2Node::Add(a, b) | F2Node::Sub(a, b) | F2Node::Mul(a, b) => {
                a.latents_used(into);
                b.latents_used(into);
            }
            F2Node::Sin(a) | F2Node::ExpClamped(a) => a.latents_used(into),
            F2Node::Poly { arg, .. } => arg.latents_used(into),
        }
    }
}

/// One benchmark function with its full ground truth. Latent supports are
/// disjoint; overlapping or purely multiplicative wirings are rejected at
/// generation time because no correlation method can separate them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub id: usize,
    pub seed: u64,
    pub p: usize,
    pub s: usize,
    /// s×p weight matrix; zero means no connection.
    pub w: Vec<Vec<f64>>,
    pub f2: F2Node,
}

impl SyntheticSpec {
    pub fn input_names(&self) -> Vec<String> {
        (1..=self.p).map(|j| format!("x{j}")).collect()
    }

    pub fn support(&self, latent: usize) -> Vec<usize> {
        (0..self.p)
            .filter(|&j| self.w[latent][j] != 0.0)
            .collect()
    }

    pub fn contributing(&self) -> Vec<usize> {
        (0..self.p)
            .filter(|&j| (0..self.s).any(|i| self.w[i][j] != 0.0))
            .collect()
    }

    pub fn latent_values(&self, x: &[f64]) -> Vec<f64> {
        (0..self.s)
            .map(|i| {
                self.w[i]
                    .iter()
                    .zip(x)
                    .filter(|(wij, _)| **wij != 0.0)
                    .map(|(wij, xj)| xj.powf(*wij))
                    .product()
            })
            .collect()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.f2.eval_with_grad(&self.latent_values(x)).0
    }

    /// The exact structure graph: one clique per latent, ordered by
    /// smallest member, with exact weight ratios on every pair.
    pub fn truth_graph(&self) -> StructureGraph {
        let mut order: Vec<usize> = (0..self.s).collect();
        order.sort_by_key(|&i| self.support(i).first().copied().unwrap_or(usize::MAX));
        let latents = order
            .iter()
            .map(|&i| {
                let members = self.support(i);
                let mut pairs = Vec::new();
                for a in 0..members.len() {
                    for b in a + 1..members.len() {
                        let (j, k) = (members[a], members[b]);
                        pairs.push(PairEstimate {
                            j,
                            k,
                            ppmcc: (self.w[i][j] * self.w[i][k]).signum(),
                            ratio: Some(self.w[i][j] / self.w[i][k]),
                        });
                    }
                }
                Clique { members, pairs }
            })
            .collect();
        StructureGraph {
            input_names: self.input_names(),
            contributing: self.contributing(),
            latents,
        }
    }
}

/// Exact ρ for a spec: ρⱼ = wᵢⱼ·zᵢ·∂f₂/∂zᵢ for the latent owning input j,
/// and identically zero for inputs outside every support.
pub fn analytic_rho(spec: &SyntheticSpec, ds: &Dataset) -> DMatrix<f64> {
    let cols = ds.columns();
    let b = ds.num_rows();
    let mut rho = DMatrix::zeros(b, spec.p);
    let mut x = vec![0.0; spec.p];
    for r in 0..b {
        for j in 0..spec.p {
            x[j] = cols[j].values[r];
        }
        let z = spec.latent_values(&x);
        let (_, grad) = spec.f2.eval_with_grad(&z);
        for i in 0..spec.s {
            for j in 0..spec.p {
                if spec.w[i][j] != 0.0 {
                    rho[(r, j)] = spec.w[i][j] * z[i] * grad[i];
                }
            }
        }
    }
    rho
}

/// Axis-aligned grid over [1,2]^p at the requested spacing, coarsening the
/// densest axes uniformly until the point count fits the cap. Columns are
/// x1..xp plus the output y; everything is dimensionless.
pub fn sample_grid(spec: &SyntheticSpec, dx: f64) -> Dataset {
    assert!(dx > 0.0, "grid spacing must be positive");
    let base = (1.0 / dx).round() as usize + 1;
    let mut counts = vec![base.max(2); spec.p];
    loop {
        let total: usize = counts.iter().product();
        if total <= GRID_CAP {
            break;
        }
        let densest = (0..spec.p)
            .max_by_key(|&j| counts[j])
            .expect("at least one axis");
        counts[densest] = (counts[densest] / 2 + 1).max(2);
    }
    let b: usize = counts.iter().product();
    let mut xs: Vec<Vec<f64>> = vec![Vec::with_capacity(b); spec.p];
    let mut ys = Vec::with_capacity(b);
    let mut idx = vec![0usize; spec.p];
    let mut x = vec![0.0; spec.p];
    for _ in 0..b {
        for j in 0..spec.p {
            x[j] = 1.0 + idx[j] as f64 / (counts[j] - 1) as f64;
            xs[j].push(x[j]);
        }
        ys.push(spec.eval(&x));
        for j in (0..spec.p).rev() {
            idx[j] += 1;
            if idx[j] < counts[j] {
                break;
            }
            idx[j] = 0;
        }
    }
    let none = DimVector::dimensionless();
    let mut columns: Vec<Column> = spec
        .input_names()
        .into_iter()
        .zip(xs)
        .map(|(name, values)| Column {
            name,
            unit: none,
            values,
        })
        .collect();
    columns.push(Column {
        name: "y".into(),
        unit: none,
        values: ys,
    });
    Dataset::from_columns(columns).expect("grid columns are consistent")
}

/// Reproducible suite of identifiable benchmark functions.
pub fn generate_suite(n: usize, seed: u64) -> Vec<SyntheticSpec> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut suite = Vec::with_capacity(n);
    for id in 0..n {
        loop {
            let spec_seed: u64 = master.gen();
            if let Some(spec) = try_generate(id, spec_seed) {
                suite.push(spec);
                break;
            }
        }
    }
    suite
}

fn try_generate(id: usize, seed: u64) -> Option<SyntheticSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = rng.gen_range(3..=8usize);
    let s = rng.gen_range(1..=p.min(4));

    let mut inputs: Vec<usize> = (0..p).collect();
    inputs.shuffle(&mut rng);
    let mut w = vec![vec![0.0; p]; s];
    let draw_weight = |rng: &mut ChaCha8Rng| {
        let mag = WEIGHT_CHOICES[rng.gen_range(0..WEIGHT_CHOICES.len())];
        if rng.gen_bool(0.5) {
            mag
        } else {
            -mag
        }
    };
    for (i, row) in w.iter_mut().enumerate() {
        row[inputs[i]] = draw_weight(&mut rng);
    }
    for &j in &inputs[s..] {
        if rng.gen_bool(0.5) {
            let i = rng.gen_range(0..s);
            w[i][j] = draw_weight(&mut rng);
        }
    }

    let f2 = random_f2(s, &mut rng);
    let spec = SyntheticSpec {
        id,
        seed,
        p,
        s,
        w,
        f2,
    };
    if identifiable(&spec) {
        Some(spec)
    } else {
        None
    }
}

fn random_unary(arg: F2Node, rng: &mut ChaCha8Rng) -> F2Node {
    match rng.gen_range(0..3) {
        0 => F2Node::Sin(Box::new(arg)),
        1 => F2Node::ExpClamped(Box::new(arg)),
        _ => {
            let degree = rng.gen_range(2..=3usize);
            let coeffs = (0..=degree).map(|_| rng.gen_range(-2.0..2.0)).collect();
            F2Node::Poly {
                arg: Box::new(arg),
                coeffs,
            }
        }
    }
}

/// Balanced binary combination of every latent, with at most one layer of
/// unary decoration so the depth stays within 3.
fn random_f2(s: usize, rng: &mut ChaCha8Rng) -> F2Node {
    let mut order: Vec<usize> = (0..s).collect();
    order.shuffle(rng);
    let decorate = rng.gen_range(0..3u8);
    let mut layer: Vec<F2Node> = order
        .into_iter()
        .map(|i| {
            let leaf = F2Node::Latent(i);
            if decorate == 1 && rng.gen_bool(0.5) {
                random_unary(leaf, rng)
            } else {
                leaf
            }
        })
        .collect();
    while layer.len() > 1 {
        let mut next = Vec::with_capacity(layer.len() / 2 + 1);
        let mut it = layer.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => {
                    let node = match rng.gen_range(0..3) {
                        0 => F2Node::Add(Box::new(a), Box::new(b)),
                        1 => F2Node::Sub(Box::new(a), Box::new(b)),
                        _ => F2Node::Mul(Box::new(a), Box::new(b)),
                    };
                    next.push(node);
                }
                None => next.push(a),
            }
        }
        layer = next;
    }
    let root = layer.pop().expect("at least one latent");
    if decorate == 2 {
        random_unary(root, rng)
    } else {
        root
    }
}

/// A spec is kept only when the analytic ρ on a probe grid reproduces its
/// own structure exactly and cross-clique correlations leave a margin under
/// the clustering threshold; anything else is unidentifiable by the
/// correlation method regardless of data quality.
fn identifiable(spec: &SyntheticSpec) -> bool {
    let ds = sample_grid(spec, PROBE_DX);
    let y = &ds.columns()[spec.p].values;
    if y.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let rho = analytic_rho(spec, &ds);
    let m = ppmcc(&rho);
    let truth = spec.truth_graph();
    let names = spec.input_names();
    let graph = weight_ratios(&rho, &cluster_latents(&m, CLIQUE_THRESHOLD, &names));
    if graph.member_sets() != truth.member_sets() {
        return false;
    }
    let Ok(metrics) = evaluate_structure(&truth, &graph) else {
        return false;
    };
    if (metrics.tp_over_tp_fn - 1.0).abs() > 1e-6
        || (metrics.latent_count_ratio - 1.0).abs() > 1e-6
        || (metrics.connection_tp_over_tp_fn - 1.0).abs() > 1e-6
        || (metrics.ratio_accuracy - 1.0).abs() > 1e-6
    {
        return false;
    }
    let clique_of: Vec<Option<usize>> = (0..spec.p)
        .map(|j| (0..spec.s).find(|&i| spec.w[i][j] != 0.0))
        .collect();
    for j in 0..spec.p {
        for k in j + 1..spec.p {
            let (Some(cj), Some(ck)) = (clique_of[j], clique_of[k]) else {
                continue;
            };
            if cj != ck && m[(j, k)].is_finite() && m[(j, k)].abs() >= CROSS_CLIQUE_MARGIN {
                return false;
            }
        }
    }
    true
}

/// Per-spec metric row in a suite report.
#[derive(Debug, Clone, Serialize)]
pub struct SpecScore {
    pub spec_id: usize,
    pub metrics: StructureMetrics,
}

/// Aggregated structure-recovery report for one spacing and estimator.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub dx: f64,
    pub estimator: String,
    pub rows: Vec<SpecScore>,
    pub mean: StructureMetrics,
}

impl SuiteReport {
    /// Fixed-schema CSV: one row per spec plus a trailing mean row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("spec_id,dx,estimator,m1,m2,m3,m4\n");
        let fmt = |m: &StructureMetrics| {
            format!(
                "{},{},{},{}",
                m.tp_over_tp_fn, m.latent_count_ratio, m.connection_tp_over_tp_fn, m.ratio_accuracy
            )
        };
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                row.spec_id,
                self.dx,
                self.estimator,
                fmt(&row.metrics)
            );
        }
        let _ = writeln!(out, "mean,{},{},{}", self.dx, self.estimator, fmt(&self.mean));
        out
    }
}

pub fn estimator_name(method: DerivMethod) -> &'static str {
    match method {
        DerivMethod::BackwardDiff => "backward",
        DerivMethod::LocalPolyfit => "polyfit",
    }
}

/// Samples every spec at the given spacing, runs the estimation pipeline,
/// and scores the recovered structure against the ground truth.
pub fn run_suite(suite: &[SyntheticSpec], dx: f64, method: DerivMethod) -> Result<SuiteReport> {
    if suite.is_empty() {
        return Err(Error::InvalidInput("benchmark suite is empty".into()));
    }
    let rows: Vec<SpecScore> = suite
        .par_iter()
        .map(|spec| {
            let ds = sample_grid(spec, dx);
            let rho = rho_matrix(&ds, "y", method)?;
            let m = ppmcc(&rho);
            let names = spec.input_names();
            let graph = weight_ratios(&rho, &cluster_latents(&m, CLIQUE_THRESHOLD, &names));
            let metrics = evaluate_structure(&spec.truth_graph(), &graph)?;
            Ok(SpecScore {
                spec_id: spec.id,
                metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let mean = StructureMetrics {
        tp_over_tp_fn: rows.iter().map(|r| r.metrics.tp_over_tp_fn).sum::<f64>() / n,
        latent_count_ratio: rows.iter().map(|r| r.metrics.latent_count_ratio).sum::<f64>() / n,
        connection_tp_over_tp_fn: rows
            .iter()
            .map(|r| r.metrics.connection_tp_over_tp_fn)
            .sum::<f64>()
            / n,
        ratio_accuracy: rows.iter().map(|r| r.metrics.ratio_accuracy).sum::<f64>() / n,
    };
    Ok(SuiteReport {
        dx,
        estimator: estimator_name(method).to_string(),
        rows,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_seed_reproduces_the_suite() {
        let a = generate_suite(10, 7);
        let b = generate_suite(10, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        let json = serde_json::to_string(&a).unwrap();
        let back: Vec<SyntheticSpec> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn empty_request_yields_an_empty_suite() {
        assert!(generate_suite(0, 1).is_empty());
    }

    #[test]
    fn suite_specs_satisfy_the_declared_invariants() {
        let suite = generate_suite(100, 42);
        for spec in &suite {
            assert!((3..=8).contains(&spec.p), "p = {}", spec.p);
            assert!((1..=spec.p.min(4)).contains(&spec.s), "s = {}", spec.s);
            assert!(spec.f2.depth() <= 3, "depth = {}", spec.f2.depth());
            let mut used = Vec::new();
            spec.f2.latents_used(&mut used);
            used.sort_unstable();
            used.dedup();
            assert_eq!(used, (0..spec.s).collect::<Vec<_>>(), "every latent used");
            let mut seen = vec![false; spec.p];
            for i in 0..spec.s {
                let support = spec.support(i);
                assert!(!support.is_empty(), "latent {i} disconnected");
                for j in support {
                    assert!(!seen[j], "supports overlap at input {j}");
                    seen[j] = true;
                    let mag = spec.w[i][j].abs();
                    assert!(
                        WEIGHT_CHOICES.contains(&mag),
                        "weight {} off lattice",
                        spec.w[i][j]
                    );
                }
            }
        }
    }

    #[test]
    fn grid_sizes_follow_the_axis_formula_and_cap() {
        let spec = SyntheticSpec {
            id: 0,
            seed: 0,
            p: 3,
            s: 1,
            w: vec![vec![1.0, 0.5, 0.0]],
            f2: F2Node::Latent(0),
        };
        assert_eq!(sample_grid(&spec, 1.0).num_rows(), 8);
        assert_eq!(sample_grid(&spec, 0.1).num_rows(), 1331);
        let fine = sample_grid(&spec, 0.01);
        assert!(fine.num_rows() <= GRID_CAP);
        assert!(fine.num_rows() > 10_000, "cap should stay close to full");
        for col in fine.columns() {
            assert!(col.values.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn outputs_stay_finite_across_the_suite() {
        for spec in generate_suite(30, 9) {
            let ds = sample_grid(&spec, 1.0);
            let y = &ds.columns()[spec.p].values;
            assert!(y.iter().all(|v| v.is_finite()), "spec {}", spec.id);
        }
    }

    #[test]
    fn analytic_rho_recovers_every_structure_exactly() {
        let suite = generate_suite(40, 11);
        for spec in &suite {
            let ds = sample_grid(spec, 0.1);
            let rho = analytic_rho(spec, &ds);
            let m = ppmcc(&rho);
            let names = spec.input_names();
            let graph = weight_ratios(&rho, &cluster_latents(&m, CLIQUE_THRESHOLD, &names));
            let truth = spec.truth_graph();
            assert_eq!(
                graph.member_sets(),
                truth.member_sets(),
                "spec {} cliques",
                spec.id
            );
            let metrics = evaluate_structure(&truth, &graph).unwrap();
            assert!((metrics.tp_over_tp_fn - 1.0).abs() < 1e-9);
            assert!((metrics.latent_count_ratio - 1.0).abs() < 1e-9);
            assert!((metrics.connection_tp_over_tp_fn - 1.0).abs() < 1e-9);
            assert!(
                (metrics.ratio_accuracy - 1.0).abs() < 1e-6,
                "spec {}: m4 = {}",
                spec.id,
                metrics.ratio_accuracy
            );
        }
    }

    #[test]
    fn estimated_metrics_improve_with_finer_grids() {
        let suite = generate_suite(20, 3);
        let fine = run_suite(&suite, 0.01, DerivMethod::BackwardDiff).unwrap();
        let coarse = run_suite(&suite, 1.0, DerivMethod::BackwardDiff).unwrap();
        assert!(
            fine.mean.tp_over_tp_fn + 1e-9 >= coarse.mean.tp_over_tp_fn,
            "m1: fine {} vs coarse {}",
            fine.mean.tp_over_tp_fn,
            coarse.mean.tp_over_tp_fn
        );
        // Coarse grids fragment cliques, so the latent count ratio lands
        // above 1 and improvement means approaching 1, not increasing.
        assert!(
            (fine.mean.latent_count_ratio - 1.0).abs()
                <= (coarse.mean.latent_count_ratio - 1.0).abs() + 1e-9,
            "m2: fine {} vs coarse {}",
            fine.mean.latent_count_ratio,
            coarse.mean.latent_count_ratio
        );
        assert!(
            fine.mean.connection_tp_over_tp_fn + 1e-9 >= coarse.mean.connection_tp_over_tp_fn,
            "m3: fine {} vs coarse {}",
            fine.mean.connection_tp_over_tp_fn,
            coarse.mean.connection_tp_over_tp_fn
        );
    }

    #[test]
    fn both_estimators_produce_complete_reports() {
        let suite = generate_suite(12, 13);
        for method in [DerivMethod::BackwardDiff, DerivMethod::LocalPolyfit] {
            let report = run_suite(&suite, 0.1, method).unwrap();
            assert_eq!(report.rows.len(), 12);
            for row in &report.rows {
                assert!(row.metrics.tp_over_tp_fn.is_finite());
                assert!(row.metrics.latent_count_ratio.is_finite());
                assert!(row.metrics.connection_tp_over_tp_fn.is_finite());
                assert!(row.metrics.ratio_accuracy.is_finite());
            }
            assert!(report.mean.tp_over_tp_fn.is_finite());
        }
    }

    #[test]
    fn report_csv_schema_is_fixed() {
        let suite = generate_suite(3, 21);
        let report = run_suite(&suite, 1.0, DerivMethod::BackwardDiff).unwrap();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("spec_id,dx,estimator,m1,m2,m3,m4"));
        let body: Vec<&str> = lines.collect();
        assert_eq!(body.len(), 4);
        assert!(body[0].starts_with("0,1,backward,"));
        assert!(body[3].starts_with("mean,1,backward,"));
        serde_json::to_string(&report).unwrap();
        assert!(run_suite(&[], 1.0, DerivMethod::BackwardDiff).is_err());
    }
}
