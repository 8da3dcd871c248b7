//! Machine-readable run artifacts: versioned JSON reports and the manifest
//! that makes every run replayable.
//!
//! Reports never contain wall-clock time, so replaying a manifest must
//! reproduce the report byte for byte. Every float is printed with 17
//! significant digits, enough to round-trip any f64 exactly.

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use sha2::{Digest, Sha256};
use std::io;
use std::path::{Path, PathBuf};

use crate::error::RejectCounts;
use crate::rat::{format_rat, parse_rat};
use crate::search::{
    CandidateFormula, DiMode, LevelLog, SearchConfig, SearchTrace,
};
use crate::simplify::{Template, TemplateForm};
use crate::{Error, Result};

pub const REPORT_SCHEMA: &str = "eqdisc-report/1";
pub const MANIFEST_SCHEMA: &str = "eqdisc-manifest/1";

pub fn engine_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Pretty JSON formatter that prints every finite float in scientific
/// notation with 17 significant digits.
pub struct ReportFormatter {
    inner: PrettyFormatter<'static>,
}

impl ReportFormatter {
    pub fn new() -> Self {
        ReportFormatter {
            inner: PrettyFormatter::new(),
        }
    }
}

impl Default for ReportFormatter {
    fn default() -> Self {
        Self::new()
    }
}

impl Formatter for ReportFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{:.16e}", value as f64)
    }

    fn begin_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_array(writer)
    }

    fn end_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_object(writer)
    }

    fn end_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        self.inner.end_object_value(writer)
    }
}

/// Serializes any report value with the 17-digit float contract and a
/// trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ReportFormatter::new());
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serializer emits valid UTF-8"))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// The manifest lands next to the report: `out.json` pairs with
/// `out.manifest.json`.
pub fn manifest_path_for(report: &Path) -> PathBuf {
    let name = report
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report.json".into());
    let stem = name.strip_suffix(".json").unwrap_or(&name);
    report.with_file_name(format!("{stem}.manifest.json"))
}

/// Search configuration in interchange form; exact-rational fields travel
/// as strings so nothing is lost to binary floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRepr {
    pub range: [String; 2],
    pub steps: Vec<String>,
    pub top_k: usize,
    pub di: u8,
    pub s_max: usize,
    pub kappa1: Option<usize>,
    pub kappa2: Option<usize>,
    pub target_r2: f64,
    pub improve_eps: f64,
    pub degree: usize,
    pub seed: u64,
}

impl From<&SearchConfig> for ConfigRepr {
    fn from(c: &SearchConfig) -> Self {
        ConfigRepr {
            range: [format_rat(&c.range.0), format_rat(&c.range.1)],
            steps: c.steps.iter().map(format_rat).collect(),
            top_k: c.top_k,
            di: match c.di_mode {
                DiMode::Di1 => 1,
                DiMode::Di2 => 2,
            },
            s_max: c.s_max,
            kappa1: c.kappa1,
            kappa2: c.kappa2,
            target_r2: c.target_r2,
            improve_eps: c.improve_eps,
            degree: c.degree,
            seed: c.seed,
        }
    }
}

impl ConfigRepr {
    pub fn to_config(&self) -> Result<SearchConfig> {
        let rat_of = |s: &str| {
            parse_rat(s).ok_or_else(|| Error::InvalidInput(format!("bad rational `{s}`")))
        };
        let mut steps = Vec::with_capacity(self.steps.len());
        for s in &self.steps {
            steps.push(rat_of(s)?);
        }
        Ok(SearchConfig {
            range: (rat_of(&self.range[0])?, rat_of(&self.range[1])?),
            steps,
            top_k: self.top_k,
            di_mode: di_mode_of(self.di)?,
            s_max: self.s_max,
            kappa1: self.kappa1,
            kappa2: self.kappa2,
            target_r2: self.target_r2,
            improve_eps: self.improve_eps,
            degree: self.degree,
            seed: self.seed,
        })
    }
}

pub fn di_mode_of(di: u8) -> Result<DiMode> {
    match di {
        1 => Ok(DiMode::Di1),
        2 => Ok(DiMode::Di2),
        other => Err(Error::InvalidInput(format!(
            "di must be 1 or 2, got {other}"
        ))),
    }
}

pub fn di_mode_name(mode: DiMode) -> &'static str {
    match mode {
        DiMode::Di1 => "DI-1",
        DiMode::Di2 => "DI-2",
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetInfo {
    pub path: String,
    pub sha256: String,
    pub rows: usize,
    pub cols: usize,
    pub output: String,
    pub output_unit: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeatureAttribution {
    pub feature: String,
    pub mean_abs_shap: f64,
    pub rank: usize,
    pub selected: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionReport {
    pub policy: String,
    pub features: Vec<FeatureAttribution>,
    pub selected: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SkippedReport {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnrichmentReport {
    pub ops: String,
    pub added: Vec<String>,
    pub skipped: Vec<SkippedReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StructureStageReport {
    pub requested: String,
    /// Share of rows with a backward grid neighbor along some input axis.
    pub dense_fraction: Option<f64>,
    pub enabled: bool,
    pub graph: Option<crate::structure::StructureGraph>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiReport {
    pub mode: String,
    pub dimensionless_fallback: bool,
    pub latent_unit: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct LatentReport {
    pub expression: String,
    pub exponents: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PolyReport {
    pub powers: Vec<Vec<u32>>,
    pub coeffs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimplifiedReport {
    pub form: String,
    pub expression: String,
    pub sexpr: String,
    pub r2: f64,
    pub complexity: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateReport {
    pub rank: usize,
    pub expression: String,
    pub sexpr: String,
    pub r2: f64,
    pub complexity: usize,
    pub latents: Vec<LatentReport>,
    pub poly: PolyReport,
    pub constant_units: Option<Vec<String>>,
    pub linear_coefficient: Option<f64>,
    pub simplified: Option<SimplifiedReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RejectionsReport {
    pub integer_required: usize,
    pub nonnegative_required: usize,
    pub sparsity: usize,
    pub zero_row: usize,
    pub duplicate: usize,
    pub proportional_rows: usize,
    pub zero_pattern: usize,
    pub sign_pattern: usize,
    pub ratio: usize,
    pub domain: usize,
    pub total: usize,
}

impl From<&RejectCounts> for RejectionsReport {
    fn from(c: &RejectCounts) -> Self {
        RejectionsReport {
            integer_required: c.integer_required,
            nonnegative_required: c.nonnegative_required,
            sparsity: c.sparsity,
            zero_row: c.zero_row,
            duplicate: c.duplicate,
            proportional_rows: c.proportional_rows,
            zero_pattern: c.zero_pattern,
            sign_pattern: c.sign_pattern,
            ratio: c.ratio,
            domain: c.domain,
            total: c.total(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelReport {
    pub latent: usize,
    pub step: String,
    pub enumerated: usize,
    pub scored: usize,
    pub best_r2: f64,
}

impl From<&LevelLog> for LevelReport {
    fn from(l: &LevelLog) -> Self {
        LevelReport {
            latent: l.latent,
            step: l.step.clone(),
            enumerated: l.enumerated,
            scored: l.scored,
            best_r2: l.best_r2,
        }
    }
}

/// Search counters without wall-clock time; timing lives in the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct TraceReport {
    pub enumerated: usize,
    pub scored: usize,
    pub dedup_hits: usize,
    pub rejections: RejectionsReport,
    pub levels: Vec<LevelReport>,
    pub warnings: Vec<String>,
}

impl From<&SearchTrace> for TraceReport {
    fn from(t: &SearchTrace) -> Self {
        TraceReport {
            enumerated: t.candidates_enumerated,
            scored: t.candidates_scored,
            dedup_hits: t.dedup_hits,
            rejections: (&t.rejections).into(),
            levels: t.levels.iter().map(LevelReport::from).collect(),
            warnings: t.warnings.clone(),
        }
    }
}

pub fn template_form_name(form: TemplateForm) -> &'static str {
    match form {
        TemplateForm::PowerLaw => "power_law",
        TemplateForm::AffinePower => "affine_power",
        TemplateForm::Sin => "sin",
        TemplateForm::Cos => "cos",
        TemplateForm::Exp => "exp",
        TemplateForm::Ln => "ln",
        TemplateForm::Atan => "atan",
        TemplateForm::SqrtShift => "sqrt_shift",
    }
}

pub fn simplified_report(
    template: &Template,
    z_expr: &crate::expr::Expr,
    output: &str,
) -> SimplifiedReport {
    SimplifiedReport {
        form: template_form_name(template.form).to_string(),
        expression: format!("{output} = {}", template.render(z_expr)),
        sexpr: template.to_expr(z_expr).to_sexpr(),
        r2: template.r2,
        complexity: template.complexity,
    }
}

pub fn candidate_report(
    cand: &CandidateFormula,
    rank: usize,
    output: &str,
    input_names: &[String],
) -> CandidateReport {
    let latents = cand
        .latents
        .iter()
        .zip(cand.latent_exprs(input_names))
        .map(|(l, e)| LatentReport {
            expression: e.render(),
            exponents: l.exponents.iter().map(format_rat).collect(),
        })
        .collect();
    CandidateReport {
        rank,
        expression: cand.render(output, input_names),
        sexpr: cand.sexpr(input_names),
        r2: cand.r2,
        complexity: cand.complexity,
        latents,
        poly: PolyReport {
            powers: cand.poly.powers.clone(),
            coeffs: cand.poly.coeffs.clone(),
        },
        constant_units: cand
            .constant_units
            .as_ref()
            .map(|us| us.iter().map(|u| u.canonical()).collect()),
        linear_coefficient: cand.linear_coefficient(0),
        simplified: None,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscoverReport {
    pub schema: String,
    pub engine_version: String,
    pub command: String,
    pub dataset: DatasetInfo,
    pub config: ConfigRepr,
    pub selection: Option<SelectionReport>,
    pub enrichment: Option<EnrichmentReport>,
    pub structure: StructureStageReport,
    pub di: DiReport,
    pub candidates: Vec<CandidateReport>,
    pub trace: TraceReport,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PpmccReport {
    pub names: Vec<String>,
    /// Row-major matrix; undefined entries serialize as null.
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StructureCmdReport {
    pub schema: String,
    pub engine_version: String,
    pub command: String,
    pub dataset: DatasetInfo,
    pub method: String,
    pub ppmcc: PpmccReport,
    pub graph: crate::structure::StructureGraph,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TermReport {
    pub term: String,
    pub xi: f64,
    pub active: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesReport {
    pub name: String,
    pub path: String,
    pub sha256: String,
    pub points: usize,
    pub threshold: f64,
    pub iterations: usize,
    pub zeroed_out: bool,
    pub terms: Vec<TermReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetaLawReport {
    pub target: String,
    pub target_unit: String,
    pub candidates: Vec<CandidateReport>,
    pub trace: TraceReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct PdeReport {
    pub schema: String,
    pub engine_version: String,
    pub command: String,
    pub series: Vec<SeriesReport>,
    pub meta: Vec<MetaLawReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchgenReport {
    pub schema: String,
    pub engine_version: String,
    pub command: String,
    pub n: usize,
    pub seed: u64,
    pub result: crate::benchgen::SuiteReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to replay a run. The report a replay produces is
/// byte-identical; only `wall_seconds` differs between manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub engine_version: String,
    pub command: ManifestCommand,
    pub inputs: Vec<InputDigest>,
    pub config: Option<ConfigRepr>,
    pub seed: u64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ManifestCommand {
    Discover {
        csv: String,
        output: String,
        select: String,
        structure: String,
        enrich: Option<String>,
        json: Option<String>,
    },
    Structure {
        csv: String,
        output: String,
        method: String,
        json: Option<String>,
    },
    Pde {
        pattern: String,
        params: Option<String>,
        threshold: Option<f64>,
        json: Option<String>,
    },
    Benchgen {
        n: usize,
        seed: u64,
        dx: f64,
        estimator: String,
        out: Option<String>,
        json: Option<String>,
    },
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path)?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    if manifest.schema != MANIFEST_SCHEMA {
        return Err(Error::InvalidInput(format!(
            "unsupported manifest schema `{}` (expected `{MANIFEST_SCHEMA}`)",
            manifest.schema
        )));
    }
    Ok(manifest)
}
