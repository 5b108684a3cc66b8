//! File formats and the command implementations behind the CLI binary.
//!
//! Curves travel as CSV whose header row holds the grid values and whose
//! data rows are one curve each. Responses are a single-column CSV; scalar
//! covariates a multi-column CSV with a name header. Models use the
//! versioned text document from [`crate::pqr::FittedQuantileModel`]. All
//! floats are printed with 17 significant digits, so every artifact is
//! byte-stable across runs and round-trips exactly.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

use crate::basis::CurveSet;
use crate::error::{ApqrError, Result};
use crate::loss::QuantileLevel;
use crate::pqr::{fit_apqr, fit_model, score, ApqrInit, FitOptions, FittedQuantileModel, Method};
use crate::select::{select_k, Criterion, SelectionReport};
use crate::sim::{
    run_study, KChoice, NoiseKind, SimSpec, StudyMethod, StudyRow,
};
use crate::util::{format_float, mean_absolute_error, quantile};

/// Exit code for an error category; documented in the README.
pub fn exit_code(err: &ApqrError) -> i32 {
    match err {
        ApqrError::Parse { .. } => 10,
        ApqrError::Shape(_) | ApqrError::NonFinite(_) => 11,
        ApqrError::Convergence { .. } | ApqrError::MonotonicityViolation { .. } => 12,
        ApqrError::Capacity(_) => 13,
        ApqrError::SchemaVersion { .. } => 14,
        ApqrError::Io(_) | ApqrError::MissingSource(_) => 15,
        _ => 1,
    }
}

fn parse_cell(line: usize, cell: &str) -> Result<f64> {
    let trimmed = cell.trim();
    let value: f64 = trimmed.parse().map_err(|_| ApqrError::Parse {
        line,
        message: format!("'{trimmed}' is not a number"),
    })?;
    if !value.is_finite() {
        return Err(ApqrError::Parse {
            line,
            message: format!("non-finite value '{trimmed}'"),
        });
    }
    Ok(value)
}

/// Load curves: header row = grid values, each further row = one curve.
/// Grids not spanning [0, 1] exactly are affinely rescaled (the original is
/// kept on the returned set).
pub fn load_curves(path: &Path) -> Result<CurveSet> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| ApqrError::Parse {
        line: 1,
        message: "empty curves file".into(),
    })?;
    let raw_grid: Vec<f64> = header
        .split(',')
        .map(|cell| parse_cell(1, cell))
        .collect::<Result<_>>()?;
    let d = raw_grid.len();
    if d < 2 {
        return Err(ApqrError::Parse {
            line: 1,
            message: format!("grid needs at least 2 points, found {d}"),
        });
    }
    for (j, w) in raw_grid.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(ApqrError::Parse {
                line: 1,
                message: format!(
                    "grid must be strictly increasing: column {} ({}) <= column {} ({})",
                    j + 2,
                    w[1],
                    j + 1,
                    w[0]
                ),
            });
        }
    }
    let mut rows: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != d {
            return Err(ApqrError::Parse {
                line: idx + 1,
                message: format!("expected {d} values, found {}", cells.len()),
            });
        }
        for cell in cells {
            rows.push(parse_cell(idx + 1, cell)?);
        }
        n += 1;
    }
    if n == 0 {
        return Err(ApqrError::Parse {
            line: 2,
            message: "curves file has no data rows".into(),
        });
    }
    let curves = DMatrix::from_row_slice(n, d, &rows);
    let (lo, hi) = (raw_grid[0], raw_grid[d - 1]);
    if lo == 0.0 && hi == 1.0 {
        CurveSet::new(raw_grid, curves)
    } else {
        let span = hi - lo;
        let grid: Vec<f64> = raw_grid.iter().map(|t| (t - lo) / span).collect();
        // guard against rounding at the endpoints
        let mut grid = grid;
        grid[0] = 0.0;
        grid[d - 1] = 1.0;
        CurveSet::with_raw_grid(grid, curves, Some(raw_grid))
    }
}

/// Write curves in the format [`load_curves`] reads; a save/load cycle is
/// bitwise stable.
pub fn save_curves(path: &Path, curves: &CurveSet) -> Result<()> {
    let mut out = String::new();
    push_csv_row(&mut out, curves.grid().iter().copied());
    for i in 0..curves.n() {
        push_csv_row(&mut out, curves.curves().row(i).iter().copied());
    }
    fs::write(path, out)?;
    Ok(())
}

fn push_csv_row(out: &mut String, values: impl Iterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(',');
        }
        out.push_str(&format_float(v));
        first = false;
    }
    out.push('\n');
}

/// Load a single-column response CSV (header row, one value per row).
pub fn load_responses(path: &Path) -> Result<DVector<f64>> {
    let text = fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        if line.contains(',') {
            return Err(ApqrError::Parse {
                line: idx + 1,
                message: "response file must have exactly one column".into(),
            });
        }
        values.push(parse_cell(idx + 1, line)?);
    }
    if values.is_empty() {
        return Err(ApqrError::Parse {
            line: 2,
            message: "response file has no data rows".into(),
        });
    }
    Ok(DVector::from_vec(values))
}

/// Write responses in the format [`load_responses`] reads.
pub fn save_responses(path: &Path, y: &DVector<f64>) -> Result<()> {
    let mut out = String::from("y\n");
    for v in y.iter() {
        out.push_str(&format_float(*v));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Load scalar covariates: a name header row, then one row per observation.
pub fn load_scalars(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| ApqrError::Parse {
        line: 1,
        message: "empty scalar covariate file".into(),
    })?;
    let p = header.split(',').count();
    let mut rows: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != p {
            return Err(ApqrError::Parse {
                line: idx + 1,
                message: format!("expected {p} values, found {}", cells.len()),
            });
        }
        for cell in cells {
            rows.push(parse_cell(idx + 1, cell)?);
        }
        n += 1;
    }
    if n == 0 {
        return Err(ApqrError::Parse {
            line: 2,
            message: "scalar covariate file has no data rows".into(),
        });
    }
    Ok(DMatrix::from_row_slice(n, p, &rows))
}

fn require_rows(label_a: &str, a: usize, label_b: &str, b: usize) -> Result<()> {
    if a != b {
        return Err(ApqrError::Shape(format!(
            "{label_a} has {a} rows but {label_b} has {b}"
        )));
    }
    Ok(())
}

fn require_exists(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(ApqrError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{what} not found: {}", path.display()),
        )));
    }
    Ok(())
}

/// Which study design the simulate command runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimChoice {
    Cosine,
    CurveDriven,
}

impl SimChoice {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(SimChoice::Cosine),
            "curve-driven" => Ok(SimChoice::CurveDriven),
            other => Err(ApqrError::InvalidParameter(format!(
                "unknown simulation design '{other}' (expected cosine or curve-driven)"
            ))),
        }
    }
}

/// Parsed invocation shared by all subcommands; built by the binary's
/// argument parser and by tests.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub tau: f64,
    pub methods: Vec<Method>,
    pub k: Option<usize>,
    pub k_grid: Option<Vec<usize>>,
    pub folds: usize,
    pub seed: u64,
    pub reps: u64,
    pub sim: SimChoice,
    pub noise: NoiseKind,
    pub pattern_case: usize,
    pub source_curves: Option<PathBuf>,
    pub curves: Option<PathBuf>,
    pub scalars: Option<PathBuf>,
    pub responses: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tau: 0.5,
            methods: vec![Method::Apqr],
            k: None,
            k_grid: None,
            folds: 10,
            seed: 42,
            reps: 50,
            sim: SimChoice::Cosine,
            noise: NoiseKind::Gaussian { sigma: 1.0 },
            pattern_case: 4,
            source_curves: None,
            curves: None,
            scalars: None,
            responses: None,
            model: None,
            out: None,
        }
    }
}

impl RunConfig {
    fn tau_level(&self) -> Result<QuantileLevel> {
        QuantileLevel::new(self.tau)
    }

    fn out_path(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| ApqrError::InvalidParameter("--out is required".into()))
    }

    /// Check every provided input path before doing any work.
    fn check_inputs(&self) -> Result<()> {
        for (path, what) in [
            (&self.source_curves, "source curves file"),
            (&self.curves, "curves file"),
            (&self.scalars, "scalar covariates file"),
            (&self.responses, "responses file"),
        ] {
            if let Some(p) = path {
                require_exists(p, what)?;
            }
        }
        Ok(())
    }
}

/// Parse a basis-count grid: either a comma list ("1,2,3") or a range
/// ("1-6").
pub fn parse_k_grid(text: &str) -> Result<Vec<usize>> {
    let bad = |msg: &str| ApqrError::InvalidParameter(format!("bad --k-grid '{text}': {msg}"));
    if let Some((lo, hi)) = text.split_once('-') {
        let lo: usize = lo.trim().parse().map_err(|_| bad("range start"))?;
        let hi: usize = hi.trim().parse().map_err(|_| bad("range end"))?;
        if lo == 0 || hi < lo {
            return Err(bad("empty range"));
        }
        return Ok((lo..=hi).collect());
    }
    let ks: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| bad("list entry")))
        .collect::<Result<_>>()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(bad("counts must be >= 1"));
    }
    Ok(ks)
}

#[derive(Serialize)]
struct MethodSummary {
    label: String,
    reps_ok: usize,
    failed: usize,
    median_mae: f64,
    q1_mae: f64,
    q3_mae: f64,
}

#[derive(Serialize)]
struct StudySummary {
    seed: u64,
    tau: f64,
    reps: u64,
    methods: Vec<MethodSummary>,
}

/// Render the per-replicate table in the study CSV format.
pub fn study_rows_to_csv(rows: &[StudyRow]) -> String {
    let mut out = String::from("rep,method,k,mae,seed\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.rep,
            row.label,
            row.k,
            format_float(row.mae),
            row.seed
        ));
    }
    out
}

fn summarize(rows: &[StudyRow], labels: &[String], seed: u64, tau: f64, reps: u64) -> StudySummary {
    let mut methods = Vec::new();
    for label in labels {
        let maes: Vec<f64> = rows
            .iter()
            .filter(|r| &r.label == label && r.ok)
            .map(|r| r.mae)
            .collect();
        let failed = rows.iter().filter(|r| &r.label == label && !r.ok).count();
        let (median, q1, q3) = if maes.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            (
                quantile(&maes, 0.5),
                quantile(&maes, 0.25),
                quantile(&maes, 0.75),
            )
        };
        methods.push(MethodSummary {
            label: label.clone(),
            reps_ok: maes.len(),
            failed,
            median_mae: median,
            q1_mae: q1,
            q3_mae: q3,
        });
    }
    StudySummary {
        seed,
        tau,
        reps,
        methods,
    }
}

fn build_sim_spec(cfg: &RunConfig) -> Result<SimSpec> {
    match cfg.sim {
        SimChoice::Cosine => Ok(SimSpec::cosine(cfg.noise, cfg.seed)),
        SimChoice::CurveDriven => {
            let path = cfg.source_curves.as_deref().ok_or_else(|| {
                ApqrError::MissingSource(
                    "the curve-driven design needs --source-curves <csv>".into(),
                )
            })?;
            let source = load_curves(path)?;
            SimSpec::curve_driven(source, cfg.pattern_case, 5.0f64.sqrt(), cfg.seed)
        }
    }
}

fn study_methods(cfg: &RunConfig) -> Result<Vec<StudyMethod>> {
    let k_choice = match (&cfg.k, &cfg.k_grid) {
        (Some(k), None) => KChoice::Fixed(*k),
        (None, Some(grid)) => KChoice::CvAuto {
            grid: grid.clone(),
            folds: cfg.folds,
        },
        (None, None) => KChoice::CvAuto {
            grid: (1..=6).collect(),
            folds: cfg.folds,
        },
        (Some(_), Some(_)) => {
            return Err(ApqrError::InvalidParameter(
                "pass either --k or --k-grid, not both".into(),
            ))
        }
    };
    Ok(cfg
        .methods
        .iter()
        .map(|m| StudyMethod {
            label: match &k_choice {
                KChoice::Fixed(k) => format!("{}@{k}", m.as_str()),
                KChoice::CvAuto { .. } => format!("{}@cv", m.as_str()),
            },
            method: *m,
            k: k_choice.clone(),
        })
        .collect())
}

/// Run a simulation study and write the per-replicate CSV plus a summary
/// JSON (same path with a `.summary.json` suffix).
pub fn cmd_simulate(cfg: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    cfg.check_inputs()?;
    let tau = cfg.tau_level()?;
    let out = cfg.out_path()?.to_path_buf();
    let spec = build_sim_spec(cfg)?;
    let methods = study_methods(cfg)?;
    let rows = run_study(&spec, &methods, tau, cfg.reps)?;
    fs::write(&out, study_rows_to_csv(&rows))?;
    let labels: Vec<String> = methods.iter().map(|m| m.label.clone()).collect();
    let summary = summarize(&rows, &labels, cfg.seed, cfg.tau, cfg.reps);
    let summary_path = summary_path_for(&out);
    fs::write(&summary_path, serde_json::to_string_pretty(&summary).expect("serializable"))?;
    Ok((out, summary_path))
}

/// Summary path used by [`cmd_simulate`]: `<out>.summary.json`.
pub fn summary_path_for(out: &Path) -> PathBuf {
    let mut os = out.as_os_str().to_os_string();
    os.push(".summary.json");
    PathBuf::from(os)
}

#[derive(Serialize)]
struct FitReport {
    method: String,
    tau: f64,
    k: usize,
    chosen_by_grid: bool,
    objective_trace_len: usize,
    final_score_norm: Option<f64>,
    in_sample_mae: f64,
    seed: u64,
}

/// Fit one model from files, write the model document to `--model` and a
/// JSON fit report to `--out` (defaults to `<model>.report.json`).
pub fn cmd_fit(cfg: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    cfg.check_inputs()?;
    let tau = cfg.tau_level()?;
    let curves_path = cfg
        .curves
        .as_deref()
        .ok_or_else(|| ApqrError::InvalidParameter("--curves is required".into()))?;
    let responses_path = cfg
        .responses
        .as_deref()
        .ok_or_else(|| ApqrError::InvalidParameter("--responses is required".into()))?;
    let model_path = cfg
        .model
        .as_deref()
        .ok_or_else(|| ApqrError::InvalidParameter("--model is required".into()))?
        .to_path_buf();
    let method = *cfg.methods.first().unwrap_or(&Method::Apqr);

    let curves = load_curves(curves_path)?;
    let y = load_responses(responses_path)?;
    require_rows("curves file", curves.n(), "responses file", y.len())?;
    let x = match &cfg.scalars {
        Some(p) => {
            let m = load_scalars(p)?;
            require_rows("curves file", curves.n(), "scalars file", m.nrows())?;
            Some(m)
        }
        None => None,
    };

    let (k, chosen_by_grid) = match (&cfg.k, &cfg.k_grid) {
        (Some(k), None) => (*k, false),
        (None, Some(grid)) => {
            let report = select_k(
                &curves,
                x.as_ref(),
                &y,
                tau,
                grid,
                Criterion::Cv,
                cfg.folds,
                method,
                cfg.seed,
            )?;
            (report.chosen_k, true)
        }
        (None, None) => (2, false),
        (Some(_), Some(_)) => {
            return Err(ApqrError::InvalidParameter(
                "pass either --k or --k-grid, not both".into(),
            ))
        }
    };

    // for the joint-extraction method keep the trace for the report
    let (model, trace_len, score_norm) = if method == Method::Apqr {
        let schedule = crate::loss::SmoothingSchedule::default_for(y.as_slice());
        let init = ApqrInit::Random(cfg.seed);
        let (trace, model) = fit_apqr(&curves, x.as_ref(), &y, tau, k, &schedule, &init)?;
        let norm = trace.last().map(|state| {
            let std = crate::basis::standardize(&curves).expect("standardized in fit");
            let data = crate::pqr::QuantileData {
                z: std.curves(),
                x: x.as_ref(),
                y: &y,
            };
            score(state, &data, tau, state.nu)
                .map(|s| s.amax())
                .unwrap_or(f64::NAN)
        });
        (model, trace.len(), norm)
    } else {
        let mut opts = FitOptions::new(tau, k, method);
        opts.seed = cfg.seed;
        (fit_model(&curves, x.as_ref(), &y, &opts)?, 0, None)
    };

    fs::write(&model_path, model.to_document())?;
    let fitted = model
        .in_sample_fitted
        .as_ref()
        .expect("fit stores fitted values");
    let report = FitReport {
        method: method.as_str().to_string(),
        tau: cfg.tau,
        k,
        chosen_by_grid,
        objective_trace_len: trace_len,
        final_score_norm: score_norm,
        in_sample_mae: mean_absolute_error(fitted.as_slice(), y.as_slice()),
        seed: cfg.seed,
    };
    let report_path = cfg
        .out
        .clone()
        .unwrap_or_else(|| summary_sibling(&model_path, ".report.json"));
    fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).expect("serializable"),
    )?;
    Ok((model_path, report_path))
}

fn summary_sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(suffix);
    PathBuf::from(os)
}

/// Predict from a saved model; writes one prediction per input row.
pub fn cmd_predict(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.check_inputs()?;
    let model_path = cfg
        .model
        .as_deref()
        .ok_or_else(|| ApqrError::InvalidParameter("--model is required".into()))?;
    require_exists(model_path, "model document")?;
    let curves_path = cfg
        .curves
        .as_deref()
        .ok_or_else(|| ApqrError::InvalidParameter("--curves is required".into()))?;
    let out = cfg.out_path()?.to_path_buf();

    let model = FittedQuantileModel::from_document(&fs::read_to_string(model_path)?)?;
    let curves = load_curves(curves_path)?;
    let x = match &cfg.scalars {
        Some(p) => {
            let m = load_scalars(p)?;
            require_rows("curves file", curves.n(), "scalars file", m.nrows())?;
            Some(m)
        }
        None => None,
    };
    let pred = model.predict(x.as_ref(), &curves)?;
    let mut text = String::from("prediction\n");
    for v in pred.iter() {
        text.push_str(&format_float(*v));
        text.push('\n');
    }
    fs::write(&out, text)?;
    Ok(out)
}

#[derive(Serialize)]
struct SelectionJson {
    criterion: String,
    folds: Option<usize>,
    candidate_ks: Vec<usize>,
    scores: Vec<f64>,
    degenerate: Vec<bool>,
    chosen_k: usize,
}

impl From<&SelectionReport> for SelectionJson {
    fn from(r: &SelectionReport) -> Self {
        SelectionJson {
            criterion: r.criterion.as_str().to_string(),
            folds: r.folds,
            candidate_ks: r.candidate_ks.clone(),
            scores: r.scores.clone(),
            degenerate: r.degenerate.clone(),
            chosen_k: r.chosen_k,
        }
    }
}

/// Cross-validated choice of the basis count over a grid; writes the per-K
/// scores and the choice as JSON.
pub fn cmd_select_k(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.check_inputs()?;
    let tau = cfg.tau_level()?;
    let out = cfg.out_path()?.to_path_buf();
    let curves_path = cfg
        .curves
        .as_deref()
        .ok_or_else(|| ApqrError::InvalidParameter("--curves is required".into()))?;
    let responses_path = cfg
        .responses
        .as_deref()
        .ok_or_else(|| ApqrError::InvalidParameter("--responses is required".into()))?;
    let grid = cfg
        .k_grid
        .clone()
        .ok_or_else(|| ApqrError::InvalidParameter("--k-grid is required".into()))?;
    let method = *cfg.methods.first().unwrap_or(&Method::Apqr);

    let curves = load_curves(curves_path)?;
    let y = load_responses(responses_path)?;
    require_rows("curves file", curves.n(), "responses file", y.len())?;
    let x = match &cfg.scalars {
        Some(p) => {
            let m = load_scalars(p)?;
            require_rows("curves file", curves.n(), "scalars file", m.nrows())?;
            Some(m)
        }
        None => None,
    };
    let report = select_k(
        &curves,
        x.as_ref(),
        &y,
        tau,
        &grid,
        Criterion::Cv,
        cfg.folds,
        method,
        cfg.seed,
    )?;
    fs::write(
        &out,
        serde_json::to_string_pretty(&SelectionJson::from(&report)).expect("serializable"),
    )?;
    Ok(out)
}

/// One-replicate timing harness: fits each requested method once on a
/// cosine-design replicate. Deterministic figures (objective, error) go to
/// the CSV; wall-clock timings go to stderr only, so the artifact stays
/// byte-stable.
pub fn cmd_bench(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.check_inputs()?;
    let tau = cfg.tau_level()?;
    let out = cfg.out_path()?.to_path_buf();
    let spec = build_sim_spec(cfg)?;
    let rep = crate::sim::gen_replicate(&spec, 0)?;
    let k = cfg.k.unwrap_or(2);
    let mut csv = String::from("method,k,in_sample_mae,test_mae\n");
    for method in &cfg.methods {
        let start = std::time::Instant::now();
        let mut opts = FitOptions::new(tau, k, *method);
        opts.seed = cfg.seed;
        let model = fit_model(&rep.train_curves, None, &rep.train_y, &opts)?;
        let elapsed = start.elapsed();
        let fitted = model.in_sample_fitted.as_ref().expect("fitted");
        let in_mae = mean_absolute_error(fitted.as_slice(), rep.train_y.as_slice());
        let pred = model.predict(None, &rep.test_curves)?;
        let test_mae = mean_absolute_error(pred.as_slice(), rep.test_y.as_slice());
        eprintln!(
            "bench: {} fit in {:.3}s",
            method.as_str(),
            elapsed.as_secs_f64()
        );
        csv.push_str(&format!(
            "{},{k},{},{}\n",
            method.as_str(),
            format_float(in_mae),
            format_float(test_mae)
        ));
    }
    fs::write(&out, csv)?;
    Ok(out)
}
