//! Command-line front end: dataset generation, law discovery, structure
//! identification, the sparse-regression pipeline, and benchmark runs, each
//! with a replayable JSON report and manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use eqdisc::benchgen::{estimator_name, generate_suite, run_suite};
use eqdisc::dataset::Dataset;
use eqdisc::datasets;
use eqdisc::pipeline::{
    parse_params_csv, run_discover, run_pde, run_structure, DiscoverArtifacts, DiscoverOptions,
    EnrichOps, ParamsTable, SelectSpec, SeriesInput, StructureMode,
};
use eqdisc::report::{
    di_mode_of, manifest_path_for, read_manifest, sha256_hex, write_json,
    BenchgenReport, ConfigRepr, DatasetInfo, InputDigest, ManifestCommand, PdeReport, RunManifest,
    StructureCmdReport, MANIFEST_SCHEMA, REPORT_SCHEMA,
};
use eqdisc::search::SearchConfig;
use eqdisc::sparsereg::{sample_smd_params, simulate_smd};
use eqdisc::structure::DerivMethod;
use eqdisc::{Error, Result};

#[derive(Parser)]
#[command(
    name = "eqdisc",
    version,
    about = "Recovers closed-form laws from tabular measurements"
)]
struct Cli {
    /// Cap on worker threads for the parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for a closed-form law explaining one output column.
    Discover(DiscoverArgs),
    /// Estimate latent variable structure on a dense grid.
    Structure(StructureArgs),
    /// Fit per-series dynamics, then the laws governing their coefficients.
    Pde(PdeArgs),
    /// Generate and score the synthetic structure benchmark suite.
    Benchgen(BenchgenArgs),
    /// Write a bundled dataset to disk.
    Gen(GenArgs),
    /// Replay a recorded run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Args)]
struct DiscoverArgs {
    /// Input CSV; headers carry units in brackets, e.g. d[m].
    csv: PathBuf,

    /// Output column to explain.
    #[arg(long)]
    output: String,

    /// Dimensional invariance: 1 pins every latent to the output's unit,
    /// 2 searches freely and assigns units to the constants.
    #[arg(long, default_value_t = 1)]
    di: u8,

    /// Most latent variables to pursue.
    #[arg(long = "s-max")]
    s_max: Option<usize>,

    /// Degree of the outer polynomial layer.
    #[arg(long)]
    degree: Option<usize>,

    /// Stop once a candidate reaches this R².
    #[arg(long = "target-r2")]
    target_r2: Option<f64>,

    /// Input selection: all, shap:auto, or shap:<k>.
    #[arg(long, default_value = "all")]
    select: String,

    /// Structure identification: auto enables it on dense grids, off never.
    #[arg(long, default_value = "auto")]
    structure: String,

    /// Derived features to append before selection: all, or a list drawn
    /// from cos,sin,tan,exp,abs,log,sqrt,add,sub,mul,div.
    #[arg(long)]
    enrich: Option<String>,

    /// Cap on nonzero exponents across a candidate's exponent matrix.
    #[arg(long)]
    kappa1: Option<usize>,

    /// Cap on nonzero exponents per input column.
    #[arg(long)]
    kappa2: Option<usize>,

    /// Seed for attribution sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Write the JSON report here; the manifest lands next to it.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct StructureArgs {
    /// Input CSV sampled on a dense grid.
    csv: PathBuf,

    /// Output column to differentiate.
    #[arg(long)]
    output: String,

    /// Partial-derivative estimator.
    #[arg(long, default_value = "backward")]
    method: String,

    /// Write the JSON report here; the manifest lands next to it.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct PdeArgs {
    /// Glob matching the series CSVs; each file needs t and x columns.
    pattern: String,

    /// Per-series parameter CSV keyed by a `series` column holding the
    /// series file stems.
    #[arg(long)]
    params: Option<PathBuf>,

    /// Sparse-regression threshold; defaults to a fraction of the
    /// largest unthresholded coefficient.
    #[arg(long)]
    threshold: Option<f64>,

    /// Write the JSON report here; the manifest lands next to it.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct BenchgenArgs {
    /// Number of synthetic functions.
    #[arg(long, default_value_t = 100)]
    n: usize,

    /// Suite seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Grid spacing for the sampled datasets.
    #[arg(long, default_value_t = 0.1)]
    dx: f64,

    /// Partial-derivative estimator: backward or polyfit.
    #[arg(long, default_value = "backward")]
    estimator: String,

    /// Write the per-spec metrics CSV here; the suite definition lands
    /// next to it as JSON.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Write the JSON report here; the manifest lands next to it.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// One of solar, kepler, rlc, knudsen, smd.
    name: String,

    /// Output CSV path; for smd, a directory receiving the series files
    /// and params.csv.
    #[arg(long)]
    out: PathBuf,

    /// Seed for the randomized generators (knudsen, smd).
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Series count for smd.
    #[arg(long, default_value_t = 8)]
    n: usize,
}

#[derive(Args)]
struct RerunArgs {
    /// Manifest written by a previous run.
    manifest: PathBuf,

    /// Write the replayed report here instead of the recorded path.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Discover(a) => {
            let config = discover_config(&a)?;
            let spec = ManifestCommand::Discover {
                csv: path_str(&a.csv),
                output: a.output,
                select: a.select,
                structure: a.structure,
                enrich: a.enrich,
                json: a.json.as_deref().map(path_str),
            };
            exec_discover(spec, config, None)
        }
        Command::Structure(a) => {
            let spec = ManifestCommand::Structure {
                csv: path_str(&a.csv),
                output: a.output,
                method: a.method,
                json: a.json.as_deref().map(path_str),
            };
            exec_structure(spec, None)
        }
        Command::Pde(a) => {
            if let Some(t) = a.threshold {
                if !(t.is_finite() && t > 0.0) {
                    return Err(Error::InvalidInput(
                        "threshold must be positive and finite".into(),
                    ));
                }
            }
            let spec = ManifestCommand::Pde {
                pattern: a.pattern,
                params: a.params.as_deref().map(path_str),
                threshold: a.threshold,
                json: a.json.as_deref().map(path_str),
            };
            exec_pde(spec, None)
        }
        Command::Benchgen(a) => {
            if !(a.dx.is_finite() && a.dx > 0.0) {
                return Err(Error::InvalidInput(
                    "dx must be positive and finite".into(),
                ));
            }
            parse_estimator(&a.estimator)?;
            let spec = ManifestCommand::Benchgen {
                n: a.n,
                seed: a.seed,
                dx: a.dx,
                estimator: a.estimator,
                out: a.out.as_deref().map(path_str),
                json: a.json.as_deref().map(path_str),
            };
            exec_benchgen(spec, None)
        }
        Command::Gen(a) => exec_gen(a),
        Command::Rerun(a) => exec_rerun(a),
    }
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn discover_config(a: &DiscoverArgs) -> Result<SearchConfig> {
    let mut config = SearchConfig {
        di_mode: di_mode_of(a.di)?,
        seed: a.seed,
        kappa1: a.kappa1,
        kappa2: a.kappa2,
        ..SearchConfig::default()
    };
    if let Some(s) = a.s_max {
        config.s_max = s;
    }
    if let Some(d) = a.degree {
        config.degree = d;
    }
    if let Some(t) = a.target_r2 {
        config.target_r2 = t;
    }
    config.validate()?;
    Ok(config)
}

fn parse_estimator(text: &str) -> Result<DerivMethod> {
    match text {
        "backward" => Ok(DerivMethod::BackwardDiff),
        "polyfit" => Ok(DerivMethod::LocalPolyfit),
        other => Err(Error::InvalidInput(format!(
            "bad estimator `{other}`; expected backward or polyfit"
        ))),
    }
}

fn load_dataset(path: &str, output: &str) -> Result<(Dataset, DatasetInfo)> {
    let bytes = fs::read(path)?;
    let ds = Dataset::from_csv_bytes(&bytes)?;
    let output_unit = ds
        .column(output)
        .ok_or_else(|| Error::InvalidInput(format!("no column named `{output}`")))?
        .unit
        .canonical();
    let info = DatasetInfo {
        path: path.to_string(),
        sha256: sha256_hex(&bytes),
        rows: ds.num_rows(),
        cols: ds.num_cols(),
        output: output.to_string(),
        output_unit,
    };
    Ok((ds, info))
}

fn emit_report<T: serde::Serialize>(
    report: &T,
    json: Option<&str>,
    manifest: &RunManifest,
) -> Result<()> {
    let Some(path) = json else {
        return Ok(());
    };
    let path = Path::new(path);
    write_json(path, report)?;
    let manifest_path = manifest_path_for(path);
    write_json(&manifest_path, manifest)?;
    println!(
        "report: {}\nmanifest: {}",
        path.display(),
        manifest_path.display()
    );
    Ok(())
}

fn new_manifest(
    command: ManifestCommand,
    inputs: Vec<InputDigest>,
    config: Option<ConfigRepr>,
    seed: u64,
    started: Instant,
) -> RunManifest {
    RunManifest {
        schema: MANIFEST_SCHEMA.into(),
        engine_version: eqdisc::report::engine_version().into(),
        command,
        inputs,
        config,
        seed,
        wall_seconds: started.elapsed().as_secs_f64(),
    }
}

fn exec_discover(
    spec: ManifestCommand,
    config: SearchConfig,
    json_override: Option<String>,
) -> Result<()> {
    let started = Instant::now();
    let ManifestCommand::Discover {
        csv,
        output,
        select,
        structure,
        enrich,
        json,
    } = spec
    else {
        unreachable!("discover executor got a foreign command");
    };
    let (ds, info) = load_dataset(&csv, &output)?;
    let opts = DiscoverOptions {
        output: output.clone(),
        select: SelectSpec::parse(&select)?,
        structure: StructureMode::parse(&structure)?,
        enrich: enrich.as_deref().map(EnrichOps::parse).transpose()?,
        config,
    };
    let sha = info.sha256.clone();
    let art = run_discover(&ds, info, &opts)?;
    print_discover(&art);

    let json = json_override.or(json);
    if let (Some(path), Some(export)) = (json.as_deref(), &art.export) {
        let stem = path.strip_suffix(".json").unwrap_or(path);
        let csv_path = format!("{stem}.export.csv");
        let meta_path = format!("{stem}.export.json");
        fs::write(&csv_path, &export.csv)?;
        fs::write(&meta_path, &export.metadata)?;
        println!("export for external simplification: {csv_path}, {meta_path}");
    }
    let manifest = new_manifest(
        ManifestCommand::Discover {
            csv: csv.clone(),
            output,
            select,
            structure,
            enrich,
            json: json.clone(),
        },
        vec![InputDigest { path: csv, sha256: sha }],
        Some((&opts.config).into()),
        opts.config.seed,
        started,
    );
    emit_report(&art.report, json.as_deref(), &manifest)
}

fn print_discover(art: &DiscoverArtifacts) {
    let rep = &art.report;
    println!(
        "dataset: {} rows x {} cols; output {} [{}]",
        rep.dataset.rows, rep.dataset.cols, rep.dataset.output, rep.dataset.output_unit
    );
    if let Some(sel) = &rep.selection {
        println!("selected ({}): {}", sel.policy, sel.selected.join(", "));
    }
    if let Some(enr) = &rep.enrichment {
        println!(
            "enriched with {} ({} added, {} skipped)",
            enr.ops,
            enr.added.len(),
            enr.skipped.len()
        );
    }
    match (&rep.structure.dense_fraction, &rep.structure.graph) {
        (_, Some(graph)) => {
            let cliques: Vec<String> = graph
                .latents
                .iter()
                .map(|c| {
                    let names: Vec<&str> = c
                        .members
                        .iter()
                        .map(|&j| graph.input_names[j].as_str())
                        .collect();
                    format!("{{{}}}", names.join(", "))
                })
                .collect();
            println!("structure: dense grid; cliques {}", cliques.join(" "));
        }
        (Some(f), None) => println!(
            "structure: grid fraction {f:.2} below threshold; multilevel pursuit"
        ),
        (None, None) => println!("structure: off"),
    }
    let fallback = if rep.di.dimensionless_fallback {
        " (fell back to dimensionless groups; constants carry the unit)"
    } else {
        ""
    };
    println!("di: {}{}", rep.di.mode, fallback);

    println!("candidates:");
    for cand in rep.candidates.iter().take(10) {
        println!(
            "  {:>2}. {}  R2 {:.6}  complexity {}",
            cand.rank, cand.expression, cand.r2, cand.complexity
        );
        if let Some(s) = &cand.simplified {
            println!(
                "      simplified ({}): {}  R2 {:.6}  complexity {}",
                s.form, s.expression, s.r2, s.complexity
            );
        }
        if let Some(units) = &cand.constant_units {
            let with_units: Vec<String> = cand
                .poly
                .coeffs
                .iter()
                .zip(units)
                .filter(|(_, u)| u.as_str() != "1")
                .map(|(c, u)| format!("{c:.4e} [{u}]"))
                .collect();
            if with_units.len() > 6 {
                println!(
                    "      constants: {}, ... {} more in the JSON report",
                    with_units[..6].join(", "),
                    with_units.len() - 6
                );
            } else if !with_units.is_empty() {
                println!("      constants: {}", with_units.join(", "));
            }
        }
    }
    if rep.candidates.len() > 10 {
        println!("  ... {} more in the JSON report", rep.candidates.len() - 10);
    }
    for level in &rep.trace.levels {
        println!(
            "level {} step {}: enumerated {}, scored {}, best R2 {:.6}",
            level.latent, level.step, level.enumerated, level.scored, level.best_r2
        );
    }
    println!(
        "search totals: enumerated {}, scored {}, duplicates {}, rejected {}",
        rep.trace.enumerated,
        rep.trace.scored,
        rep.trace.dedup_hits,
        rep.trace.rejections.total
    );
    for w in rep.warnings.iter().chain(&rep.trace.warnings) {
        println!("warning: {w}");
    }
}

fn exec_structure(spec: ManifestCommand, json_override: Option<String>) -> Result<()> {
    let started = Instant::now();
    let ManifestCommand::Structure {
        csv,
        output,
        method,
        json,
    } = spec
    else {
        unreachable!("structure executor got a foreign command");
    };
    let deriv = parse_estimator(&method)?;
    let (ds, info) = load_dataset(&csv, &output)?;
    let sha = info.sha256.clone();
    let report = run_structure(&ds, info, deriv)?;
    print_structure(&report);

    let json = json_override.or(json);
    let manifest = new_manifest(
        ManifestCommand::Structure {
            csv: csv.clone(),
            output,
            method,
            json: json.clone(),
        },
        vec![InputDigest { path: csv, sha256: sha }],
        None,
        0,
        started,
    );
    emit_report(&report, json.as_deref(), &manifest)
}

fn print_structure(rep: &StructureCmdReport) {
    let graph = &rep.graph;
    let contributing: Vec<&str> = graph
        .contributing
        .iter()
        .map(|&j| graph.input_names[j].as_str())
        .collect();
    println!(
        "contributing inputs: {}",
        if contributing.is_empty() {
            "none".to_string()
        } else {
            contributing.join(", ")
        }
    );
    for (i, clique) in graph.latents.iter().enumerate() {
        let names: Vec<&str> = clique
            .members
            .iter()
            .map(|&j| graph.input_names[j].as_str())
            .collect();
        println!("latent {}: {{{}}}", i + 1, names.join(", "));
        for pair in &clique.pairs {
            let ratio = pair
                .ratio
                .map(|r| format!("{r:.3}"))
                .unwrap_or_else(|| "n/a".into());
            println!(
                "  {} ~ {}: ppmcc {:.3}, weight ratio {}",
                graph.input_names[pair.j], graph.input_names[pair.k], pair.ppmcc, ratio
            );
        }
    }
    for w in &rep.warnings {
        println!("warning: {w}");
    }
}

fn exec_pde(spec: ManifestCommand, json_override: Option<String>) -> Result<()> {
    let started = Instant::now();
    let ManifestCommand::Pde {
        pattern,
        params,
        threshold,
        json,
    } = spec
    else {
        unreachable!("pde executor got a foreign command");
    };
    let mut paths: Vec<PathBuf> = Vec::new();
    let matches = glob::glob(&pattern)
        .map_err(|e| Error::InvalidInput(format!("bad glob `{pattern}`: {e}")))?;
    for entry in matches {
        paths.push(entry.map_err(|e| Error::InvalidInput(e.to_string()))?);
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no files match `{pattern}`"
        )));
    }

    let mut inputs = Vec::new();
    let mut series = Vec::with_capacity(paths.len());
    for p in &paths {
        let bytes = fs::read(p)?;
        let sha = sha256_hex(&bytes);
        let ds = Dataset::from_csv_bytes(&bytes)?;
        let grab = |name: &str| {
            ds.column(name).cloned().ok_or_else(|| {
                Error::InvalidInput(format!(
                    "series `{}` needs a `{name}` column",
                    p.display()
                ))
            })
        };
        let t = grab("t")?;
        let x = grab("x")?;
        inputs.push(InputDigest {
            path: path_str(p),
            sha256: sha.clone(),
        });
        series.push(SeriesInput {
            name: p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            path: path_str(p),
            sha256: sha,
            t: t.values,
            x: x.values,
            t_unit: t.unit,
            x_unit: x.unit,
        });
    }

    let table: Option<ParamsTable> = match &params {
        None => None,
        Some(path) => {
            let bytes = fs::read(path)?;
            inputs.push(InputDigest {
                path: path.clone(),
                sha256: sha256_hex(&bytes),
            });
            Some(parse_params_csv(&bytes)?)
        }
    };
    let report = run_pde(&series, table.as_ref(), threshold)?;
    print_pde(&report);

    let json = json_override.or(json);
    let manifest = new_manifest(
        ManifestCommand::Pde {
            pattern,
            params,
            threshold,
            json: json.clone(),
        },
        inputs,
        None,
        0,
        started,
    );
    emit_report(&report, json.as_deref(), &manifest)
}

fn print_pde(rep: &PdeReport) {
    for s in &rep.series {
        let active: Vec<String> = s
            .terms
            .iter()
            .filter(|t| t.active)
            .map(|t| format!("{}: {:.4}", t.term, t.xi))
            .collect();
        let body = if s.zeroed_out {
            "zero model (threshold removed every term)".to_string()
        } else {
            active.join(", ")
        };
        println!(
            "{} ({} points, lambda {:.4}, {} iterations): {}",
            s.name, s.points, s.threshold, s.iterations, body
        );
    }
    for law in &rep.meta {
        if let Some(best) = law.candidates.first() {
            println!(
                "{} [{}]: {}  R2 {:.6}",
                law.target, law.target_unit, best.expression, best.r2
            );
        }
    }
    for w in &rep.warnings {
        println!("warning: {w}");
    }
}

fn exec_benchgen(spec: ManifestCommand, json_override: Option<String>) -> Result<()> {
    let started = Instant::now();
    let ManifestCommand::Benchgen {
        n,
        seed,
        dx,
        estimator,
        out,
        json,
    } = spec
    else {
        unreachable!("benchgen executor got a foreign command");
    };
    let method = parse_estimator(&estimator)?;
    let suite = generate_suite(n, seed);
    let result = run_suite(&suite, dx, method)?;
    println!(
        "{} functions at dx {} with {}: m1 {:.4}, m2 {:.4}, m3 {:.4}, m4 {:.4}",
        n,
        dx,
        estimator_name(method),
        result.mean.tp_over_tp_fn,
        result.mean.latent_count_ratio,
        result.mean.connection_tp_over_tp_fn,
        result.mean.ratio_accuracy
    );
    if let Some(path) = &out {
        fs::write(path, result.to_csv())?;
        let stem = path.strip_suffix(".csv").unwrap_or(path);
        let suite_path = format!("{stem}.suite.json");
        write_json(Path::new(&suite_path), &suite)?;
        println!("metrics: {path}\nsuite: {suite_path}");
    }

    let report = BenchgenReport {
        schema: REPORT_SCHEMA.into(),
        engine_version: eqdisc::report::engine_version().into(),
        command: "benchgen".into(),
        n,
        seed,
        result,
    };
    let json = json_override.or(json);
    let manifest = new_manifest(
        ManifestCommand::Benchgen {
            n,
            seed,
            dx,
            estimator,
            out,
            json: json.clone(),
        },
        Vec::new(),
        None,
        seed,
        started,
    );
    emit_report(&report, json.as_deref(), &manifest)
}

fn exec_gen(a: GenArgs) -> Result<()> {
    match a.name.as_str() {
        "solar" => write_one(&datasets::solar_system(), &a.out),
        "kepler" => write_one(&datasets::kepler(), &a.out),
        "rlc" => write_one(&datasets::rlc_grid(), &a.out),
        "knudsen" => write_one(&datasets::knudsen(a.seed), &a.out),
        "smd" => {
            if a.n == 0 {
                return Err(Error::InvalidInput("smd needs at least one series".into()));
            }
            fs::create_dir_all(&a.out)?;
            let params = sample_smd_params(a.n, a.seed);
            let mut table = String::from("series,c,k,m,delta\n");
            for (i, p) in params.iter().enumerate() {
                let name = format!("smd_{}", i + 1);
                let (t, x) = simulate_smd(p, 0.01, 20.0);
                let ds = datasets::from_triples(vec![("t", "s", t), ("x", "m", x)])?;
                ds.write_csv(a.out.join(format!("{name}.csv")))?;
                table.push_str(&format!("{},{},{},{},{}\n", name, p.c, p.k, p.m, p.delta));
            }
            fs::write(a.out.join("params.csv"), table)?;
            println!(
                "wrote {} series and params.csv under {}",
                a.n,
                a.out.display()
            );
            Ok(())
        }
        other => Err(Error::InvalidInput(format!(
            "unknown dataset `{other}`; expected solar, kepler, rlc, knudsen, or smd"
        ))),
    }
}

fn write_one(ds: &Dataset, out: &Path) -> Result<()> {
    ds.write_csv(out)?;
    println!(
        "wrote {} rows x {} cols to {}",
        ds.num_rows(),
        ds.num_cols(),
        out.display()
    );
    Ok(())
}

fn exec_rerun(a: RerunArgs) -> Result<()> {
    let manifest = read_manifest(&a.manifest)?;
    for input in &manifest.inputs {
        let sha = eqdisc::report::sha256_file(&input.path)?;
        if sha != input.sha256 {
            return Err(Error::InvalidInput(format!(
                "input `{}` changed since the manifest was written",
                input.path
            )));
        }
    }
    let json_override = a.json.as_deref().map(path_str);
    match manifest.command {
        spec @ ManifestCommand::Discover { .. } => {
            let config = manifest
                .config
                .ok_or_else(|| {
                    Error::InvalidInput("discover manifest is missing its config".into())
                })?
                .to_config()?;
            exec_discover(spec, config, json_override)
        }
        spec @ ManifestCommand::Structure { .. } => exec_structure(spec, json_override),
        spec @ ManifestCommand::Pde { .. } => exec_pde(spec, json_override),
        spec @ ManifestCommand::Benchgen { .. } => exec_benchgen(spec, json_override),
    }
}
