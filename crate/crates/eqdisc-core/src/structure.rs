//! Latent-topology identification from dense grid data: per-axis partial
//! derivatives, the ρⱼ = xⱼ·∂y/∂xⱼ attribute, Pearson correlation of ρ
//! columns, clique clustering, and weight-ratio estimation.

use crate::dataset::Dataset;
use crate::{Error, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Variance below which a ρ column counts as non-contributing.
pub const VARIANCE_CUTOFF: f64 = 1e-12;

/// |PPMCC| at or above which two inputs share a latent variable.
pub const CLIQUE_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivMethod {
    BackwardDiff,
    LocalPolyfit,
}

/// One estimated within-clique pair: signed correlation plus the
/// through-origin slope of ρⱼ on ρₖ (the wᵢⱼ/wᵢₖ estimate).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PairEstimate {
    pub j: usize,
    pub k: usize,
    pub ppmcc: f64,
    pub ratio: Option<f64>,
}

impl PairEstimate {
    pub fn confidence(&self) -> f64 {
        self.ppmcc.abs()
    }

    /// True when wᵢⱼ and wᵢₖ carry the same sign.
    pub fn same_sign(&self) -> bool {
        self.ppmcc > 0.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Clique {
    /// Input indices, ascending.
    pub members: Vec<usize>,
    /// Pair estimates for every member pair (j < k).
    pub pairs: Vec<PairEstimate>,
}

/// Inferred latent topology: which inputs contribute, one clique per latent
/// variable, and per-pair weight-ratio estimates.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StructureGraph {
    pub input_names: Vec<String>,
    pub contributing: Vec<usize>,
    pub latents: Vec<Clique>,
}

impl StructureGraph {
    pub fn member_sets(&self) -> Vec<Vec<usize>> {
        self.latents.iter().map(|c| c.members.clone()).collect()
    }
}

/// The four structure-recovery scores; 1.0 is ideal for each. The first and
/// third use the TP/(TP+FN) formula, named for what it computes.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct StructureMetrics {
    pub tp_over_tp_fn: f64,
    pub latent_count_ratio: f64,
    pub connection_tp_over_tp_fn: f64,
    pub ratio_accuracy: f64,
}

/// Estimates ∂y/∂xⱼ for every input column at every point. Points are
/// grouped into axis lines (rows agreeing exactly on every other input);
/// entries where the estimator lacks support are NaN.
pub fn estimate_partials(
    ds: &Dataset,
    output: &str,
    method: DerivMethod,
) -> Result<DMatrix<f64>> {
    let out_idx = ds
        .column_index(output)
        .ok_or_else(|| Error::InvalidInput(format!("no column named `{output}`")))?;
    let y = &ds.columns()[out_idx].values;
    let inputs: Vec<usize> = (0..ds.num_cols()).filter(|&j| j != out_idx).collect();
    let b = ds.num_rows();
    let p = inputs.len();

    let columns: Vec<Vec<f64>> = (0..p)
        .map(|jj| {
            let axis = &ds.columns()[inputs[jj]].values;
            let mut derivs = vec![f64::NAN; b];
            for line in axis_lines(ds, &inputs, jj) {
                estimate_line(&line, axis, y, method, &mut derivs);
            }
            derivs
        })
        .collect();
    Ok(DMatrix::from_fn(b, p, |i, j| columns[j][i]))
}

/// Groups row indices into axis lines for input jj: rows that agree exactly
/// (bitwise) on every other input coordinate, sorted by the jj coordinate.
fn axis_lines(ds: &Dataset, inputs: &[usize], jj: usize) -> Vec<Vec<usize>> {
    let b = ds.num_rows();
    let axis = &ds.columns()[inputs[jj]].values;
    let mut groups: std::collections::HashMap<Vec<u64>, Vec<usize>> =
        std::collections::HashMap::new();
    for i in 0..b {
        let key: Vec<u64> = inputs
            .iter()
            .enumerate()
            .filter(|(t, _)| *t != jj)
            .map(|(_, &c)| ds.columns()[c].values[i].to_bits())
            .collect();
        groups.entry(key).or_default().push(i);
    }
    let mut lines: Vec<Vec<usize>> = groups.into_values().collect();
    for line in &mut lines {
        line.sort_by(|&a, &b| axis[a].total_cmp(&axis[b]).then(a.cmp(&b)));
    }
    // Deterministic processing order (irrelevant to values, kept tidy).
    lines.sort_by_key(|l| l[0]);
    lines
}

fn estimate_line(
    line: &[usize],
    axis: &[f64],
    y: &[f64],
    method: DerivMethod,
    derivs: &mut [f64],
) {
    match method {
        DerivMethod::BackwardDiff => {
            for (a, &i) in line.iter().enumerate() {
                // Nearest neighbor strictly below along the axis.
                let prev = line[..a].iter().rev().find(|&&t| axis[t] < axis[i]);
                if let Some(&t) = prev {
                    derivs[i] = (y[i] - y[t]) / (axis[i] - axis[t]);
                }
            }
        }
        DerivMethod::LocalPolyfit => {
            for (a, &i) in line.iter().enumerate() {
                let mut nb: Vec<usize> = (0..line.len()).filter(|&t| t != a).collect();
                nb.sort_by(|&s, &t| {
                    let ds = (axis[line[s]] - axis[i]).abs();
                    let dt = (axis[line[t]] - axis[i]).abs();
                    ds.total_cmp(&dt).then(axis[line[s]].total_cmp(&axis[line[t]]))
                });
                nb.truncate(4);
                if nb.len() < 3 {
                    continue;
                }
                derivs[i] = quadratic_slope(
                    nb.iter()
                        .map(|&t| (axis[line[t]] - axis[i], y[line[t]]))
                        .chain(std::iter::once((0.0, y[i]))),
                );
            }
        }
    }
}

/// Slope at u=0 of the least-squares quadratic through (u, v) points.
fn quadratic_slope(points: impl Iterator<Item = (f64, f64)>) -> f64 {
    let pts: Vec<(f64, f64)> = points.collect();
    let a = DMatrix::from_fn(pts.len(), 3, |r, c| pts[r].0.powi(c as i32));
    let v = nalgebra::DVector::from_fn(pts.len(), |r, _| pts[r].1);
    let svd = a.svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    match svd.solve(&v, f64::EPSILON * max_sv * pts.len() as f64) {
        Ok(c) => c[1],
        Err(_) => f64::NAN,
    }
}

/// ρ matrix: ρⱼ = xⱼ·∂y/∂xⱼ elementwise over the input columns.
pub fn rho_matrix(ds: &Dataset, output: &str, method: DerivMethod) -> Result<DMatrix<f64>> {
    let out_idx = ds
        .column_index(output)
        .ok_or_else(|| Error::InvalidInput(format!("no column named `{output}`")))?;
    let inputs: Vec<usize> = (0..ds.num_cols()).filter(|&j| j != out_idx).collect();
    let mut d = estimate_partials(ds, output, method)?;
    for (jj, &c) in inputs.iter().enumerate() {
        let col = &ds.columns()[c].values;
        for i in 0..d.nrows() {
            d[(i, jj)] *= col[i];
        }
    }
    Ok(d)
}

/// Pairwise-complete Pearson correlation of ρ columns. An entry is NaN when
/// fewer than 3 shared valid points exist or either column's variance over
/// the shared points falls below the cutoff.
pub fn ppmcc(rho: &DMatrix<f64>) -> DMatrix<f64> {
    let p = rho.ncols();
    let b = rho.nrows();
    let entries: Vec<((usize, usize), f64)> = (0..p)
        .flat_map(|j| (j..p).map(move |k| (j, k)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(j, k)| {
            let shared: Vec<usize> = (0..b)
                .filter(|&i| rho[(i, j)].is_finite() && rho[(i, k)].is_finite())
                .collect();
            ((j, k), pearson(rho, j, k, &shared))
        })
        .collect();
    let mut m = DMatrix::from_element(p, p, f64::NAN);
    for ((j, k), v) in entries {
        m[(j, k)] = v;
        m[(k, j)] = v;
    }
    m
}

fn pearson(rho: &DMatrix<f64>, j: usize, k: usize, shared: &[usize]) -> f64 {
    let n = shared.len();
    if n < 3 {
        return f64::NAN;
    }
    let mean = |c: usize| shared.iter().map(|&i| rho[(i, c)]).sum::<f64>() / n as f64;
    let (mj, mk) = (mean(j), mean(k));
    let mut sjj = 0.0;
    let mut skk = 0.0;
    let mut sjk = 0.0;
    for &i in shared {
        let a = rho[(i, j)] - mj;
        let b = rho[(i, k)] - mk;
        sjj += a * a;
        skk += b * b;
        sjk += a * b;
    }
    if sjj / (n as f64) < VARIANCE_CUTOFF || skk / (n as f64) < VARIANCE_CUTOFF {
        return f64::NAN;
    }
    (sjk / (sjj.sqrt() * skk.sqrt())).clamp(-1.0, 1.0)
}

/// Clusters inputs into latent cliques: contributing inputs are those with a
/// defined PPMCC diagonal; latents are the maximal cliques of the graph with
/// edges |PPMCC| ≥ threshold. Isolated contributing inputs become singleton
/// cliques.
pub fn cluster_latents(
    m: &DMatrix<f64>,
    threshold: f64,
    input_names: &[String],
) -> StructureGraph {
    let p = m.ncols();
    assert_eq!(input_names.len(), p);
    let contributing: Vec<usize> = (0..p).filter(|&j| m[(j, j)].is_finite()).collect();
    let adj: Vec<Vec<bool>> = (0..p)
        .map(|j| {
            (0..p)
                .map(|k| {
                    j != k
                        && m[(j, k)].is_finite()
                        && m[(j, k)].abs() >= threshold
                        && m[(j, j)].is_finite()
                        && m[(k, k)].is_finite()
                })
                .collect()
        })
        .collect();
    let mut cliques: Vec<Vec<usize>> = Vec::new();
    bron_kerbosch(
        &mut Vec::new(),
        &mut contributing.clone(),
        &mut Vec::new(),
        &adj,
        &mut cliques,
    );
    cliques.sort();
    let latents = cliques
        .into_iter()
        .map(|members| {
            let mut pairs = Vec::new();
            for (a, &j) in members.iter().enumerate() {
                for &k in &members[a + 1..] {
                    pairs.push(PairEstimate {
                        j,
                        k,
                        ppmcc: m[(j, k)],
                        ratio: None,
                    });
                }
            }
            Clique { members, pairs }
        })
        .collect();
    StructureGraph {
        input_names: input_names.to_vec(),
        contributing,
        latents,
    }
}

/// Maximal-clique enumeration over a small graph; orderings are index-based
/// so the output is deterministic.
fn bron_kerbosch(
    r: &mut Vec<usize>,
    p: &mut Vec<usize>,
    x: &mut Vec<usize>,
    adj: &[Vec<bool>],
    out: &mut Vec<Vec<usize>>,
) {
    if p.is_empty() && x.is_empty() {
        if !r.is_empty() {
            let mut clique = r.clone();
            clique.sort_unstable();
            out.push(clique);
        }
        return;
    }
    let candidates = p.clone();
    for v in candidates {
        r.push(v);
        let mut p2: Vec<usize> = p.iter().copied().filter(|&u| adj[v][u]).collect();
        let mut x2: Vec<usize> = x.iter().copied().filter(|&u| adj[v][u]).collect();
        bron_kerbosch(r, &mut p2, &mut x2, adj, out);
        r.pop();
        p.retain(|&u| u != v);
        x.push(v);
    }
}

/// Fills each clique pair's weight-ratio estimate: the through-origin
/// least-squares slope of ρⱼ on ρₖ over shared valid points (≥ 3 required).
pub fn weight_ratios(rho: &DMatrix<f64>, graph: &StructureGraph) -> StructureGraph {
    let b = rho.nrows();
    let mut out = graph.clone();
    for clique in &mut out.latents {
        for pair in &mut clique.pairs {
            let (j, k) = (pair.j, pair.k);
            let mut sjk = 0.0;
            let mut skk = 0.0;
            let mut n = 0usize;
            for i in 0..b {
                let (a, c) = (rho[(i, j)], rho[(i, k)]);
                if a.is_finite() && c.is_finite() {
                    sjk += a * c;
                    skk += c * c;
                    n += 1;
                }
            }
            if n >= 3 && skk > 0.0 {
                pair.ratio = Some(sjk / skk);
            }
        }
    }
    out
}

/// Scores an estimated structure against a known truth.
pub fn evaluate_structure(
    truth: &StructureGraph,
    estimate: &StructureGraph,
) -> Result<StructureMetrics> {
    if truth.input_names.len() != estimate.input_names.len() {
        return Err(Error::InvalidInput(format!(
            "evaluate_structure: {} inputs in truth, {} in estimate",
            truth.input_names.len(),
            estimate.input_names.len()
        )));
    }
    let est_set: std::collections::HashSet<usize> =
        estimate.contributing.iter().copied().collect();
    let tp_inputs = truth
        .contributing
        .iter()
        .filter(|j| est_set.contains(j))
        .count();
    let tp_over_tp_fn = if truth.contributing.is_empty() {
        1.0
    } else {
        tp_inputs as f64 / truth.contributing.len() as f64
    };

    let latent_count_ratio = if truth.latents.is_empty() {
        if estimate.latents.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        estimate.latents.len() as f64 / truth.latents.len() as f64
    };

    let (matching, tp_connections) = best_matching(truth, estimate);
    let total_true: usize = truth.latents.iter().map(|c| c.members.len()).sum();
    let connection_tp_over_tp_fn = if total_true == 0 {
        1.0
    } else {
        tp_connections as f64 / total_true as f64
    };

    let mut ratio_quotients = Vec::new();
    for &(ti, ei) in &matching {
        for tp in &truth.latents[ti].pairs {
            let (Some(true_ratio), true_pair) = (tp.ratio, (tp.j, tp.k)) else {
                continue;
            };
            if true_ratio == 0.0 {
                continue;
            }
            for ep in &estimate.latents[ei].pairs {
                if (ep.j, ep.k) == true_pair {
                    if let Some(est_ratio) = ep.ratio {
                        ratio_quotients.push(est_ratio / true_ratio);
                    }
                }
            }
        }
    }
    let ratio_accuracy = if ratio_quotients.is_empty() {
        0.0
    } else {
        ratio_quotients.iter().sum::<f64>() / ratio_quotients.len() as f64
    };

    Ok(StructureMetrics {
        tp_over_tp_fn,
        latent_count_ratio,
        connection_tp_over_tp_fn,
        ratio_accuracy,
    })
}

/// Injective matching of truth cliques to estimate cliques maximizing the
/// total member overlap; brute-force over assignments (clique counts are
/// single digits). Returns (truth_idx, estimate_idx) pairs and the total.
fn best_matching(
    truth: &StructureGraph,
    estimate: &StructureGraph,
) -> (Vec<(usize, usize)>, usize) {
    let t = truth.latents.len();
    let e = estimate.latents.len();
    let overlap: Vec<Vec<usize>> = (0..t)
        .map(|ti| {
            (0..e)
                .map(|ei| {
                    let es: std::collections::HashSet<usize> =
                        estimate.latents[ei].members.iter().copied().collect();
                    truth.latents[ti]
                        .members
                        .iter()
                        .filter(|m| es.contains(m))
                        .count()
                })
                .collect()
        })
        .collect();
    let mut best: (Vec<(usize, usize)>, usize) = (Vec::new(), 0);
    let mut used = vec![false; e];
    let mut current = Vec::new();
    fn recurse(
        ti: usize,
        t: usize,
        e: usize,
        overlap: &[Vec<usize>],
        used: &mut Vec<bool>,
        current: &mut Vec<(usize, usize)>,
        acc: usize,
        best: &mut (Vec<(usize, usize)>, usize),
    ) {
        if ti == t {
            if acc > best.1 || best.0.is_empty() {
                *best = (current.clone(), acc);
            }
            return;
        }
        // Leave this truth clique unmatched.
        recurse(ti + 1, t, e, overlap, used, current, acc, best);
        for ei in 0..e {
            if !used[ei] {
                used[ei] = true;
                current.push((ti, ei));
                recurse(
                    ti + 1,
                    t,
                    e,
                    overlap,
                    used,
                    current,
                    acc + overlap[ti][ei],
                    best,
                );
                current.pop();
                used[ei] = false;
            }
        }
    }
    recurse(0, t, e, &overlap, &mut used, &mut current, 0, &mut best);
    best
}
