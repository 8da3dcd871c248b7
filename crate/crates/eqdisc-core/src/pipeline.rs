//! End-to-end orchestration behind the command-line front end: feature
//! enrichment and selection, dense-grid detection, structure-constrained
//! search, and post-hoc simplification, each feeding the JSON report.

use std::collections::HashMap;

use crate::attribution::{
    enrich_features, fit_surrogate, select_inputs, shapley_values, BinaryOp, SelectPolicy,
    UnaryOp, DEFAULT_BACKGROUND, DEFAULT_PERMUTATIONS,
};
use crate::dataset::{Column, Dataset};
use crate::rat::{rat, to_f64};
use crate::report::{
    candidate_report, di_mode_name, simplified_report, to_json, CandidateReport, DatasetInfo,
    DiReport, DiscoverReport, EnrichmentReport, FeatureAttribution, MetaLawReport, PdeReport,
    PpmccReport, SelectionReport, SeriesReport, SkippedReport, StructureCmdReport,
    StructureStageReport, TermReport, TraceReport, REPORT_SCHEMA,
};
use crate::search::{
    multilevel_search, resolve_di, DiMode, SearchConfig, SearchOutcome,
};
use crate::simplify::simplify;
use crate::sparsereg::{identify_series, meta_discover};
use crate::structure::{
    cluster_latents, ppmcc, rho_matrix, weight_ratios, DerivMethod, StructureGraph,
    CLIQUE_THRESHOLD,
};
use crate::units::DimVector;
use crate::{Error, Result};

/// A dataset counts as a dense grid when at least this share of rows has a
/// backward neighbor along some input axis with all other inputs equal.
pub const DENSE_GRID_THRESHOLD: f64 = 0.9;

/// Cumulative attribution mass captured by `shap:auto` selection.
pub const AUTO_SHAP_MASS: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectSpec {
    All,
    Shap(SelectPolicy),
}

impl SelectSpec {
    /// Accepts `all`, `shap:auto`, or `shap:<k>`.
    pub fn parse(text: &str) -> Result<SelectSpec> {
        if text == "all" {
            return Ok(SelectSpec::All);
        }
        if let Some(rest) = text.strip_prefix("shap:") {
            if rest == "auto" {
                return Ok(SelectSpec::Shap(SelectPolicy::CumThreshold(AUTO_SHAP_MASS)));
            }
            if let Ok(k) = rest.parse::<usize>() {
                if k > 0 {
                    return Ok(SelectSpec::Shap(SelectPolicy::TopK(k)));
                }
            }
        }
        Err(Error::InvalidInput(format!(
            "bad --select `{text}`; expected all, shap:auto, or shap:<k>"
        )))
    }

    pub fn describe(&self) -> String {
        match self {
            SelectSpec::All => "all".into(),
            SelectSpec::Shap(SelectPolicy::TopK(k)) => format!("shap:{k}"),
            SelectSpec::Shap(SelectPolicy::CumThreshold(_)) => "shap:auto".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureMode {
    Auto,
    Off,
}

impl StructureMode {
    pub fn parse(text: &str) -> Result<StructureMode> {
        match text {
            "auto" => Ok(StructureMode::Auto),
            "off" => Ok(StructureMode::Off),
            other => Err(Error::InvalidInput(format!(
                "bad --structure `{other}`; expected auto or off"
            ))),
        }
    }

    pub fn describe(&self) -> &'static str {
        match self {
            StructureMode::Auto => "auto",
            StructureMode::Off => "off",
        }
    }
}

/// Enrichment operator sets parsed from a comma-separated spec.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichOps {
    pub spec: String,
    pub unary: Vec<UnaryOp>,
    pub binary: Vec<BinaryOp>,
}

impl EnrichOps {
    /// Accepts `all` or a comma-separated list drawn from the unary names
    /// (cos, sin, tan, exp, abs, log, sqrt) and add, sub, mul, div.
    pub fn parse(text: &str) -> Result<EnrichOps> {
        if text == "all" {
            return Ok(EnrichOps {
                spec: text.into(),
                unary: UnaryOp::ALL.to_vec(),
                binary: BinaryOp::ALL.to_vec(),
            });
        }
        let mut unary = Vec::new();
        let mut binary = Vec::new();
        for token in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            if let Some(op) = UnaryOp::ALL.iter().find(|op| op.name() == token) {
                unary.push(*op);
                continue;
            }
            match token {
                "add" => binary.push(BinaryOp::Add),
                "sub" => binary.push(BinaryOp::Sub),
                "mul" => binary.push(BinaryOp::Mul),
                "div" => binary.push(BinaryOp::Div),
                other => {
                    return Err(Error::InvalidInput(format!(
                        "unknown enrichment op `{other}`"
                    )))
                }
            }
        }
        if unary.is_empty() && binary.is_empty() {
            return Err(Error::InvalidInput("empty enrichment spec".into()));
        }
        Ok(EnrichOps {
            spec: text.into(),
            unary,
            binary,
        })
    }
}

/// Share of rows with a strictly lower value along at least one varying
/// input axis while every other input is held exactly equal. Factorial
/// grids score near 1; scattered measurements score 0.
pub fn dense_grid_fraction(ds: &Dataset, output: &str) -> Result<f64> {
    let out_idx = ds
        .column_index(output)
        .ok_or_else(|| Error::InvalidInput(format!("no column named `{output}`")))?;
    let inputs: Vec<usize> = (0..ds.num_cols()).filter(|&j| j != out_idx).collect();
    let b = ds.num_rows();
    if b == 0 || inputs.is_empty() {
        return Ok(0.0);
    }
    let cols = ds.columns();
    let varying: Vec<usize> = inputs
        .iter()
        .copied()
        .filter(|&j| {
            let v = &cols[j].values;
            v.iter().any(|x| *x != v[0])
        })
        .collect();
    if varying.is_empty() {
        return Ok(0.0);
    }
    let mut has_lower = vec![false; b];
    for &j in &varying {
        let mut groups: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
        for r in 0..b {
            let key: Vec<u64> = inputs
                .iter()
                .filter(|&&k| k != j)
                .map(|&k| cols[k].values[r].to_bits())
                .collect();
            groups.entry(key).or_default().push(r);
        }
        for rows in groups.values() {
            let min = rows
                .iter()
                .map(|&r| cols[j].values[r])
                .fold(f64::INFINITY, f64::min);
            for &r in rows {
                if cols[j].values[r] > min {
                    has_lower[r] = true;
                }
            }
        }
    }
    Ok(has_lower.iter().filter(|h| **h).count() as f64 / b as f64)
}

#[derive(Debug, Clone)]
pub struct DiscoverOptions {
    pub output: String,
    pub select: SelectSpec,
    pub structure: StructureMode,
    pub enrich: Option<EnrichOps>,
    pub config: SearchConfig,
}

/// Machine-readable hand-off for an external symbolic-regression tool:
/// the latent samples as CSV plus fitting context as JSON.
#[derive(Debug, Clone)]
pub struct ExportBundle {
    pub csv: String,
    pub metadata: String,
}

#[derive(Debug, Clone, serde::Serialize)]
struct ExportMeta {
    latents: Vec<String>,
    latent_units: Vec<String>,
    output: String,
    output_unit: String,
    baseline_r2: f64,
    baseline_complexity: usize,
    poly_sexpr: String,
}

pub struct DiscoverArtifacts {
    pub report: DiscoverReport,
    pub outcome: SearchOutcome,
    pub input_names: Vec<String>,
    pub export: Option<ExportBundle>,
}

pub fn run_discover(
    ds: &Dataset,
    info: DatasetInfo,
    opts: &DiscoverOptions,
) -> Result<DiscoverArtifacts> {
    if ds.column(&opts.output).is_none() {
        return Err(Error::InvalidInput(format!(
            "no column named `{}`",
            opts.output
        )));
    }
    let mut warnings = Vec::new();

    let (ds, enrichment) = match &opts.enrich {
        None => (ds.clone(), None),
        Some(ops) => {
            let input_cols: Vec<Column> = ds
                .columns()
                .iter()
                .filter(|c| c.name != opts.output)
                .cloned()
                .collect();
            let inputs_only = Dataset::from_columns(input_cols)?;
            let (mut enriched, summary) = enrich_features(&inputs_only, &ops.unary, &ops.binary);
            enriched.push_column(ds.column(&opts.output).expect("checked above").clone())?;
            let rep = EnrichmentReport {
                ops: ops.spec.clone(),
                added: summary.added.clone(),
                skipped: summary
                    .skipped
                    .iter()
                    .map(|s| SkippedReport {
                        name: s.name.clone(),
                        reason: s.reason.clone(),
                    })
                    .collect(),
            };
            (enriched, Some(rep))
        }
    };

    let (ds, selection) = match opts.select {
        SelectSpec::All => (ds, None),
        SelectSpec::Shap(policy) => {
            let split = ds.split_xy(&opts.output)?;
            let surrogate = fit_surrogate(&split.x, split.y.as_slice())?;
            let attr = shapley_values(
                &surrogate,
                &split.x,
                DEFAULT_BACKGROUND,
                DEFAULT_PERMUTATIONS,
                opts.config.seed,
            )?;
            let chosen = select_inputs(&attr, policy)?;
            if chosen.is_empty() {
                return Err(Error::InvalidInput(
                    "attribution selected no inputs; output may be constant".into(),
                ));
            }
            let features: Vec<FeatureAttribution> = split
                .input_names
                .iter()
                .enumerate()
                .map(|(j, name)| FeatureAttribution {
                    feature: name.clone(),
                    mean_abs_shap: attr.mean_abs_shap[j],
                    rank: attr.ranking.iter().position(|&r| r == j).expect("ranking") + 1,
                    selected: chosen.contains(&j),
                })
                .collect();
            let keep: Vec<&str> = split
                .input_names
                .iter()
                .enumerate()
                .filter(|(j, _)| chosen.contains(j))
                .map(|(_, n)| n.as_str())
                .chain(std::iter::once(opts.output.as_str()))
                .collect();
            let selected_names: Vec<String> = keep[..keep.len() - 1]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let reduced = ds.select(&keep)?;
            let rep = SelectionReport {
                policy: opts.select.describe(),
                features,
                selected: selected_names,
            };
            (reduced, Some(rep))
        }
    };

    let (dense_fraction, graph) = match opts.structure {
        StructureMode::Off => (None, None),
        StructureMode::Auto => {
            let fraction = dense_grid_fraction(&ds, &opts.output)?;
            if fraction >= DENSE_GRID_THRESHOLD {
                let graph = estimate_graph(&ds, &opts.output, DerivMethod::BackwardDiff)?;
                if graph.latents.is_empty() {
                    warnings.push(
                        "dense grid detected but no latent structure was found; \
                         searching without structure constraints"
                            .into(),
                    );
                    (Some(fraction), None)
                } else {
                    (Some(fraction), Some(graph))
                }
            } else {
                (Some(fraction), None)
            }
        }
    };

    let split = ds.split_xy(&opts.output)?;
    let setup = resolve_di(&split.d_matrix, &split.d_out, opts.config.di_mode)?;
    let outcome = multilevel_search(&split, &setup, graph.as_ref(), &opts.config)?;

    let input_names = split.input_names.clone();
    let mut candidates: Vec<CandidateReport> = outcome
        .ranked
        .iter()
        .enumerate()
        .map(|(i, c)| candidate_report(c, i + 1, &opts.output, &input_names))
        .collect();

    let mut export = None;
    let best = &outcome.best;
    if best.latents.len() == 1 {
        let exps = &best.latents[0].exponents;
        let w: Vec<f64> = exps.iter().map(to_f64).collect();
        let z: Vec<f64> = (0..split.x.nrows())
            .map(|r| {
                w.iter()
                    .enumerate()
                    .filter(|(_, wj)| **wj != 0.0)
                    .map(|(j, wj)| split.x[(r, j)].powf(*wj))
                    .product()
            })
            .collect();
        let z_expr = &best.latent_exprs(&input_names)[0];
        if let Some(t) = simplify(&z, split.y.as_slice(), z_expr, best.r2, best.complexity) {
            candidates[0].simplified = Some(simplified_report(&t, z_expr, &opts.output));
        }
    } else if best.latents.len() > 1 {
        export = Some(export_bundle(&split, best, &opts.output, &input_names)?);
    }

    let di = DiReport {
        mode: di_mode_name(setup.mode).to_string(),
        dimensionless_fallback: setup.dimensionless_fallback,
        latent_unit: if setup.mode == DiMode::Di1 && !setup.dimensionless_fallback {
            split.d_out.canonical()
        } else {
            "1".into()
        },
    };

    let report = DiscoverReport {
        schema: REPORT_SCHEMA.into(),
        engine_version: crate::report::engine_version().into(),
        command: "discover".into(),
        dataset: info,
        config: (&opts.config).into(),
        selection,
        enrichment,
        structure: StructureStageReport {
            requested: opts.structure.describe().into(),
            dense_fraction,
            enabled: graph.is_some(),
            graph,
        },
        di,
        candidates,
        trace: TraceReport::from(&outcome.trace),
        warnings,
    };
    Ok(DiscoverArtifacts {
        report,
        outcome,
        input_names,
        export,
    })
}

fn estimate_graph(ds: &Dataset, output: &str, method: DerivMethod) -> Result<StructureGraph> {
    let rho = rho_matrix(ds, output, method)?;
    let m = ppmcc(&rho);
    let names: Vec<String> = ds
        .columns()
        .iter()
        .filter(|c| c.name != output)
        .map(|c| c.name.clone())
        .collect();
    Ok(weight_ratios(&rho, &cluster_latents(&m, CLIQUE_THRESHOLD, &names)))
}

fn export_bundle(
    split: &crate::dataset::SplitXY,
    best: &crate::search::CandidateFormula,
    output: &str,
    input_names: &[String],
) -> Result<ExportBundle> {
    let b = split.x.nrows();
    let mut columns = Vec::with_capacity(best.latents.len() + 1);
    let mut latent_units = Vec::new();
    for (i, latent) in best.latents.iter().enumerate() {
        let unit = split.d_matrix.latent_unit(&latent.exponents);
        let w: Vec<f64> = latent.exponents.iter().map(to_f64).collect();
        let values: Vec<f64> = (0..b)
            .map(|r| {
                w.iter()
                    .enumerate()
                    .filter(|(_, wj)| **wj != 0.0)
                    .map(|(j, wj)| split.x[(r, j)].powf(*wj))
                    .product()
            })
            .collect();
        latent_units.push(unit.canonical());
        columns.push(Column {
            name: format!("z{}", i + 1),
            unit,
            values,
        });
    }
    columns.push(Column {
        name: output.to_string(),
        unit: split.d_out,
        values: split.y.as_slice().to_vec(),
    });
    let table = Dataset::from_columns(columns)?;
    let meta = ExportMeta {
        latents: best
            .latent_exprs(input_names)
            .iter()
            .map(|e| e.render())
            .collect(),
        latent_units,
        output: output.to_string(),
        output_unit: split.d_out.canonical(),
        baseline_r2: best.r2,
        baseline_complexity: best.complexity,
        poly_sexpr: best.sexpr(input_names),
    };
    Ok(ExportBundle {
        csv: table.to_csv_string(),
        metadata: to_json(&meta)?,
    })
}

pub fn run_structure(
    ds: &Dataset,
    info: DatasetInfo,
    method: DerivMethod,
) -> Result<StructureCmdReport> {
    let rho = rho_matrix(ds, &info.output, method)?;
    let m = ppmcc(&rho);
    let names: Vec<String> = ds
        .columns()
        .iter()
        .filter(|c| c.name != info.output)
        .map(|c| c.name.clone())
        .collect();
    let graph = weight_ratios(&rho, &cluster_latents(&m, CLIQUE_THRESHOLD, &names));
    let p = names.len();
    let rows: Vec<Vec<f64>> = (0..p)
        .map(|j| (0..p).map(|k| m[(j, k)]).collect())
        .collect();
    let mut warnings = Vec::new();
    // Inert columns always yield undefined correlations, so only pairs of
    // contributing inputs say anything about grid quality.
    let live = &graph.contributing;
    if live.is_empty() {
        warnings.push(
            "no input shows a usable derivative signal; structure identification \
             needs data sampled on a dense grid"
                .into(),
        );
    }
    let off_diag = live.len() * live.len().saturating_sub(1);
    if off_diag > 0 {
        let undefined = live
            .iter()
            .flat_map(|&j| live.iter().map(move |&k| (j, k)))
            .filter(|&(j, k)| j != k && !m[(j, k)].is_finite())
            .count();
        if undefined * 2 > off_diag {
            warnings.push(
                "most pairwise correlations are undefined; the data does not look like \
                 a dense grid, so partial derivatives are unreliable"
                    .into(),
            );
        }
    }
    Ok(StructureCmdReport {
        schema: REPORT_SCHEMA.into(),
        engine_version: crate::report::engine_version().into(),
        command: "structure".into(),
        dataset: info,
        method: match method {
            DerivMethod::BackwardDiff => "backward".into(),
            DerivMethod::LocalPolyfit => "polyfit".into(),
        },
        ppmcc: PpmccReport { names, rows },
        graph,
        warnings,
    })
}

/// One loaded time series for the sparse-regression pipeline.
#[derive(Debug, Clone)]
pub struct SeriesInput {
    pub name: String,
    pub path: String,
    pub sha256: String,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub t_unit: DimVector,
    pub x_unit: DimVector,
}

/// Per-series parameter table keyed by series name.
#[derive(Debug, Clone)]
pub struct ParamsTable {
    pub names: Vec<String>,
    pub rows: HashMap<String, Vec<f64>>,
}

/// Parses a parameter CSV whose `series` column names each series; every
/// other column must be numeric.
pub fn parse_params_csv(bytes: &[u8]) -> Result<ParamsTable> {
    let mut reader = csv::Reader::from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .clone();
    let series_idx = headers
        .iter()
        .position(|h| h.trim() == "series")
        .ok_or_else(|| Error::InvalidInput("params table needs a `series` column".into()))?;
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != series_idx)
        .map(|(_, h)| h.trim().to_string())
        .collect();
    let mut rows = HashMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let key = record
            .get(series_idx)
            .unwrap_or_default()
            .trim()
            .to_string();
        let mut values = Vec::with_capacity(names.len());
        for (i, cell) in record.iter().enumerate() {
            if i == series_idx {
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| Error::BadCell {
                row: line + 2,
                column: headers.get(i).unwrap_or_default().to_string(),
                cell: cell.to_string(),
            })?;
            values.push(v);
        }
        if rows.insert(key.clone(), values).is_some() {
            return Err(Error::InvalidInput(format!(
                "params table lists series `{key}` twice"
            )));
        }
    }
    Ok(ParamsTable { names, rows })
}

/// Exponents (a, b, c) of x, x', x'' in each library term.
const TERM_POWERS: [(i128, i128, i128); 9] = [
    (0, 0, 0),
    (1, 0, 0),
    (0, 0, 1),
    (2, 0, 0),
    (1, 1, 0),
    (1, 0, 1),
    (0, 2, 0),
    (0, 1, 1),
    (0, 0, 2),
];

/// Unit of coefficient j in dx/dt = sum xi_j phi_j, from the series units.
pub fn coefficient_unit(term: usize, x_unit: &DimVector, t_unit: &DimVector) -> DimVector {
    let (a, b, c) = TERM_POWERS[term];
    x_unit
        .scale(rat(1 - a - b - c))
        .add(&t_unit.scale(rat(b + 2 * c - 1)))
}

pub fn run_pde(
    series: &[SeriesInput],
    params: Option<&ParamsTable>,
    threshold: Option<f64>,
) -> Result<PdeReport> {
    if series.is_empty() {
        return Err(Error::InvalidInput("no series matched the pattern".into()));
    }
    let mut warnings = Vec::new();
    let mut reports = Vec::with_capacity(series.len());
    let mut models = Vec::with_capacity(series.len());
    for s in series {
        let (lib, model) = identify_series(&s.t, &s.x, threshold)?;
        reports.push(SeriesReport {
            name: s.name.clone(),
            path: s.path.clone(),
            sha256: s.sha256.clone(),
            points: s.t.len(),
            threshold: model.threshold,
            iterations: model.iterations,
            zeroed_out: model.zeroed_out,
            terms: lib
                .tags
                .iter()
                .enumerate()
                .map(|(j, tag)| TermReport {
                    term: tag.to_string(),
                    xi: model.xi[j],
                    active: model.active.contains(&j),
                })
                .collect(),
        });
        models.push(model);
    }

    let mut meta = Vec::new();
    if series.len() >= 2 {
        match params {
            None => warnings.push(
                "multiple series but no --params table; skipping the meta-discovery step".into(),
            ),
            Some(table) => {
                for s in series {
                    if !table.rows.contains_key(&s.name) {
                        return Err(Error::InvalidInput(format!(
                            "params table has no row for series `{}`",
                            s.name
                        )));
                    }
                }
                let mut common: Vec<usize> = models[0].active.clone();
                for m in &models[1..] {
                    common.retain(|j| m.active.contains(j));
                }
                if common.is_empty() {
                    warnings.push(
                        "no library term is active in every series; skipping the \
                         meta-discovery step"
                            .into(),
                    );
                } else if series.len() < 6 {
                    warnings.push(format!(
                        "meta discovery needs at least 6 series, got {}; skipping",
                        series.len()
                    ));
                } else {
                    meta = discover_meta_laws(series, &models, table, &common)?;
                }
            }
        }
    }

    Ok(PdeReport {
        schema: REPORT_SCHEMA.into(),
        engine_version: crate::report::engine_version().into(),
        command: "pde".into(),
        series: reports,
        meta,
        warnings,
    })
}

fn discover_meta_laws(
    series: &[SeriesInput],
    models: &[crate::sparsereg::SparseModel],
    table: &ParamsTable,
    common: &[usize],
) -> Result<Vec<MetaLawReport>> {
    let none = DimVector::dimensionless();
    let mut columns: Vec<Column> = table
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| Column {
            name: name.clone(),
            unit: none,
            values: series.iter().map(|s| table.rows[&s.name][k]).collect(),
        })
        .collect();
    let mut targets = Vec::new();
    for &j in common {
        let unit = coefficient_unit(j, &series[0].x_unit, &series[0].t_unit);
        let name = format!("xi{}", j + 1);
        columns.push(Column {
            name: name.clone(),
            unit,
            values: models.iter().map(|m| m.xi[j]).collect(),
        });
        targets.push((name, unit));
    }
    let meta_table = Dataset::from_columns(columns)?;
    let params: Vec<&str> = table.names.iter().map(String::as_str).collect();
    let mut out = Vec::with_capacity(targets.len());
    for (name, unit) in &targets {
        let outcome = meta_discover(&meta_table, &params, name, None)?;
        let param_names: Vec<String> = table.names.clone();
        let candidates = outcome
            .ranked
            .iter()
            .enumerate()
            .map(|(i, c)| candidate_report(c, i + 1, name, &param_names))
            .collect();
        out.push(MetaLawReport {
            target: name.clone(),
            target_unit: unit.canonical(),
            candidates,
            trace: TraceReport::from(&outcome.trace),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets;

    #[test]
    fn factorial_grids_read_as_dense_and_scattered_data_does_not() {
        let rlc = datasets::rlc_grid();
        let f = dense_grid_fraction(&rlc, "Z").unwrap();
        assert!(f > 0.99, "rlc fraction {f}");
        let solar = datasets::solar_system();
        let f = dense_grid_fraction(&solar, "m").unwrap();
        assert_eq!(f, 0.0, "solar fraction {f}");
        let knudsen = datasets::knudsen(1);
        let f = dense_grid_fraction(&knudsen, "dp").unwrap();
        assert_eq!(f, 0.0, "knudsen fraction {f}");
    }

    #[test]
    fn single_axis_sweeps_count_as_grids() {
        let kepler = datasets::kepler();
        let f = dense_grid_fraction(&kepler, "t").unwrap();
        assert!((f - 0.95).abs() < 1e-12, "kepler fraction {f}");
    }

    #[test]
    fn spec_strings_parse_and_reject() {
        assert_eq!(SelectSpec::parse("all").unwrap(), SelectSpec::All);
        assert_eq!(
            SelectSpec::parse("shap:5").unwrap(),
            SelectSpec::Shap(SelectPolicy::TopK(5))
        );
        assert!(matches!(
            SelectSpec::parse("shap:auto").unwrap(),
            SelectSpec::Shap(SelectPolicy::CumThreshold(_))
        ));
        assert!(SelectSpec::parse("shap:0").is_err());
        assert!(SelectSpec::parse("top5").is_err());

        assert_eq!(StructureMode::parse("off").unwrap(), StructureMode::Off);
        assert!(StructureMode::parse("maybe").is_err());

        let ops = EnrichOps::parse("sin,log,div").unwrap();
        assert_eq!(ops.unary.len(), 2);
        assert_eq!(ops.binary, vec![BinaryOp::Div]);
        assert!(EnrichOps::parse("sinh").is_err());
        assert!(EnrichOps::parse("").is_err());
        let all = EnrichOps::parse("all").unwrap();
        assert_eq!(all.unary.len(), 7);
        assert_eq!(all.binary.len(), 4);
    }

    #[test]
    fn kepler_discovery_report_carries_a_simplified_power_law() {
        let ds = datasets::kepler();
        let opts = DiscoverOptions {
            output: "t".into(),
            select: SelectSpec::All,
            structure: StructureMode::Auto,
            enrich: None,
            config: SearchConfig {
                target_r2: 1.0,
                di_mode: DiMode::Di2,
                ..SearchConfig::default()
            },
        };
        let info = DatasetInfo {
            path: "kepler".into(),
            sha256: String::new(),
            rows: ds.num_rows(),
            cols: ds.num_cols(),
            output: "t".into(),
            output_unit: "s".into(),
        };
        let art = run_discover(&ds, info, &opts).unwrap();
        let rep = &art.report;
        assert_eq!(rep.schema, REPORT_SCHEMA);
        assert!(rep.structure.enabled, "single-axis sweep is a grid");
        assert_eq!(rep.di.mode, "DI-2");
        assert_eq!(
            art.outcome.best.latents[0].exponents,
            vec![crate::rat::ratq(3, 2)]
        );
        let top = &rep.candidates[0];
        let simplified = top.simplified.as_ref().expect("template should match");
        assert_eq!(simplified.form, "power_law");
        assert!(simplified.expression.contains("r^1.5"), "{}", simplified.expression);
        let coeff = top.linear_coefficient.expect("linear term");
        assert!((coeff - 5.456e-10).abs() < 5.456e-12, "coeff {coeff}");
        let json = to_json(rep).unwrap();
        assert!(json.contains("\"schema\": \"eqdisc-report/1\""));
    }

    #[test]
    fn shap_selection_drops_an_inert_column() {
        let ds = datasets::knudsen(7);
        let opts = DiscoverOptions {
            output: "dp".into(),
            select: SelectSpec::Shap(SelectPolicy::TopK(4)),
            structure: StructureMode::Off,
            enrich: None,
            config: SearchConfig {
                target_r2: 0.99,
                ..SearchConfig::default()
            },
        };
        let info = DatasetInfo {
            path: "knudsen".into(),
            sha256: String::new(),
            rows: ds.num_rows(),
            cols: ds.num_cols(),
            output: "dp".into(),
            output_unit: "kg*m^-1*s^-2".into(),
        };
        let art = run_discover(&ds, info, &opts).unwrap();
        let selection = art.report.selection.as_ref().unwrap();
        assert_eq!(selection.policy, "shap:4");
        assert!(
            !selection.selected.contains(&"L".to_string()),
            "inert channel length should rank last: {:?}",
            selection.selected
        );
        assert_eq!(art.input_names.len(), 4);
        assert!(art.report.structure.dense_fraction.is_none());
    }

    #[test]
    fn params_csv_parses_and_rejects_bad_cells() {
        let table = parse_params_csv(b"series,c,k\nsmd_1,0.5,2.0\nsmd_2,0.7,1.5\n").unwrap();
        assert_eq!(table.names, vec!["c", "k"]);
        assert_eq!(table.rows["smd_1"], vec![0.5, 2.0]);
        assert!(parse_params_csv(b"c,k\n1,2\n").is_err(), "missing series");
        assert!(
            parse_params_csv(b"series,c\nsmd_1,abc\n").is_err(),
            "non-numeric cell"
        );
        assert!(
            parse_params_csv(b"series,c\na,1\na,2\n").is_err(),
            "duplicate series"
        );
    }

    #[test]
    fn coefficient_units_follow_the_term_dimensions() {
        let metre = crate::units::parse_unit("m").unwrap();
        let second = crate::units::parse_unit("s").unwrap();
        assert_eq!(coefficient_unit(1, &metre, &second).canonical(), "s^-1");
        assert_eq!(coefficient_unit(2, &metre, &second).canonical(), "s");
        assert_eq!(
            coefficient_unit(3, &metre, &second).canonical(),
            "m^-1*s^-1"
        );
        let none = DimVector::dimensionless();
        assert!(coefficient_unit(5, &none, &none).is_dimensionless());
    }

    #[test]
    fn pde_run_reports_series_and_skips_meta_when_told_to() {
        let params = crate::sparsereg::SmdParams {
            m: 1.0,
            c: 0.5,
            k: 2.0,
            delta: 1.0,
        };
        let (t, x) = crate::sparsereg::simulate_smd(&params, 0.01, 20.0);
        let series = vec![SeriesInput {
            name: "smd_1".into(),
            path: "smd_1.csv".into(),
            sha256: String::new(),
            t,
            x,
            t_unit: crate::units::parse_unit("s").unwrap(),
            x_unit: crate::units::parse_unit("m").unwrap(),
        }];
        let report = run_pde(&series, None, None).unwrap();
        assert_eq!(report.series.len(), 1);
        assert!(report.meta.is_empty());
        let active: Vec<&str> = report.series[0]
            .terms
            .iter()
            .filter(|t| t.active)
            .map(|t| t.term.as_str())
            .collect();
        assert_eq!(active, vec!["x", "x''"]);
        assert!(run_pde(&[], None, None).is_err(), "empty series set");
    }
}
