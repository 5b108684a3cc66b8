//! Joint basis extraction by block relaxation on the smoothed quantile
//! objective, plus the fitted-model type shared by all extraction methods.
//!
//! For a fixed basis count `K` the algorithm alternates two block updates of
//! `l(alpha, beta, C) = -sum_i H(y_i - alpha - x_i'beta - z_i' C 1_K)` while
//! the smoothing half-width shrinks along a schedule:
//!
//! 1. the basis block `C` (gradient ascent with backtracking, capped per
//!    pass), then
//! 2. the scalar block `(alpha, beta)` (Newton solve with the projected
//!    offset held fixed).
//!
//! Each block update warm-starts from the current point and only accepts
//! improving steps, so the objective trace is non-decreasing within every
//! smoothing stage; a decrease beyond tolerance is reported as an optimizer
//! bug rather than papered over. The objective depends on `C` only through
//! its column sum, and both block updates move every column by the same
//! increment, so column differences are invariants of the iteration; the
//! basis block therefore solves the d-dimensional column-sum problem and
//! spreads the step across columns. After convergence the columns are
//! canonicalized, curves are projected, and `(alpha, beta, gamma)` are refit
//! on the projected scores, resolving the scale split between basis columns
//! and their coefficients.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::basis::{project, standardize, BasisKind, BasisMatrix, CurveSet};
use crate::error::{ApqrError, Result};
use crate::loss::{
    approximation_gap_bound, huber_slope, huber_value, HuberParams, QuantileLevel,
    SmoothingSchedule,
};
use crate::oracle::{descend_smoothed, minimize_smoothed, smoothed_fit_ladder};
use crate::util::format_float;

/// Defensive cap on block passes per smoothing stage; the pass-level stop
/// normally triggers long before this.
const MAX_PASSES_PER_STAGE: usize = 1000;

/// Borrowed view of one fitting problem: standardized curves, optional
/// scalar covariates, responses.
#[derive(Debug, Clone, Copy)]
pub struct QuantileData<'a> {
    pub z: &'a DMatrix<f64>,
    pub x: Option<&'a DMatrix<f64>>,
    pub y: &'a DVector<f64>,
}

impl<'a> QuantileData<'a> {
    fn validate(&self) -> Result<()> {
        let n = self.z.nrows();
        if self.y.len() != n {
            return Err(ApqrError::Shape(format!(
                "response length {} does not match {} curves",
                self.y.len(),
                n
            )));
        }
        if let Some(x) = self.x {
            if x.nrows() != n {
                return Err(ApqrError::Shape(format!(
                    "scalar covariates have {} rows but there are {} curves",
                    x.nrows(),
                    n
                )));
            }
        }
        Ok(())
    }

    fn p(&self) -> usize {
        self.x.map_or(0, |m| m.ncols())
    }
}

/// One recorded point of the block-relaxation trace.
#[derive(Debug, Clone)]
pub struct PqrState {
    pub alpha: f64,
    pub beta: DVector<f64>,
    pub c: BasisMatrix,
    /// Value of the smoothed objective `l` at this state (non-positive).
    pub objective: f64,
    pub stage: usize,
    pub pass: usize,
    /// Smoothing half-width of the stage this state belongs to.
    pub nu: f64,
}

/// Initialization of the basis block.
#[derive(Debug, Clone)]
pub enum ApqrInit {
    /// i.i.d. standard normal entries drawn from the seed, then canonicalized.
    Random(u64),
    /// Start from an existing basis (principal components, partial least
    /// squares, or any matrix of the right shape).
    Basis(BasisMatrix),
}

fn residuals(
    alpha: f64,
    beta: &DVector<f64>,
    combined: &DVector<f64>,
    data: &QuantileData,
) -> DVector<f64> {
    let mut r = data.y - data.z * combined;
    if let Some(x) = data.x {
        r -= x * beta;
    }
    r.add_scalar_mut(-alpha);
    r
}

fn smoothed_objective_value(residuals: &DVector<f64>, tau: f64, nu: f64) -> f64 {
    -residuals.iter().map(|&r| huber_value(r, tau, nu)).sum::<f64>()
}

/// Smoothed objective `l = -sum_i H(y_i - alpha - x_i'beta - z_i' C 1_K)`.
/// Always <= 0, and 0 exactly when every residual vanishes.
pub fn objective_ln(
    alpha: f64,
    beta: &DVector<f64>,
    c: &BasisMatrix,
    data: &QuantileData,
    tau: QuantileLevel,
    nu: f64,
) -> Result<f64> {
    data.validate()?;
    if data.z.ncols() != c.d() {
        return Err(ApqrError::Shape(format!(
            "curves have {} grid points but the basis has {}",
            data.z.ncols(),
            c.d()
        )));
    }
    if beta.len() != data.p() {
        return Err(ApqrError::Shape(format!(
            "beta has length {} but there are {} scalar covariates",
            beta.len(),
            data.p()
        )));
    }
    let p = HuberParams::new(tau, nu)?;
    let r = residuals(alpha, beta, &c.column_sum(), data);
    Ok(smoothed_objective_value(&r, p.tau(), p.nu()))
}

/// Gradient of the residual `r_i = y_i - alpha - x_i'beta - z_i' C 1_K` with
/// respect to the stacked columns of `C`: the K-fold tiling of `-z_i`.
pub fn residual_basis_gradient(z_i: &DVector<f64>, k: usize) -> DVector<f64> {
    let d = z_i.len();
    let mut g = DVector::zeros(k * d);
    for block in 0..k {
        for j in 0..d {
            g[block * d + j] = -z_i[j];
        }
    }
    g
}

/// Score of the smoothed objective with respect to `vec(C)`:
/// `-sum_i H'(r_i) * grad r_i`, assembled from [`residual_basis_gradient`]
/// and the smoothed-loss derivative.
pub fn score(
    state: &PqrState,
    data: &QuantileData,
    tau: QuantileLevel,
    nu: f64,
) -> Result<DVector<f64>> {
    data.validate()?;
    let p = HuberParams::new(tau, nu)?;
    let r = residuals(state.alpha, &state.beta, &state.c.column_sum(), data);
    let slopes = DVector::from_fn(r.len(), |i, _| huber_slope(r[i], p.tau(), p.nu()));
    // -sum H'(r_i) * (-1_K (x) z_i) = 1_K (x) (Z' h')
    let base = data.z.tr_mul(&slopes);
    let d = base.len();
    let k = state.c.k();
    let mut s = DVector::zeros(k * d);
    for block in 0..k {
        for j in 0..d {
            s[block * d + j] = base[j];
        }
    }
    Ok(s)
}

/// Which estimate of the information matrix to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InformationMode {
    /// `sum_i s_i s_i'` with `s_i = H'(r_i) * grad r_i` (default).
    PerSample,
    /// The double sum over observation pairs, which collapses to the
    /// rank-one outer product of the total score.
    DoubleSum,
}

/// Information matrix of the smoothed objective in `vec(C)`; symmetric PSD
/// in both modes.
pub fn information(
    state: &PqrState,
    data: &QuantileData,
    tau: QuantileLevel,
    nu: f64,
    mode: InformationMode,
) -> Result<DMatrix<f64>> {
    data.validate()?;
    let p = HuberParams::new(tau, nu)?;
    let r = residuals(state.alpha, &state.beta, &state.c.column_sum(), data);
    let d = data.z.ncols();
    let k = state.c.k();
    let dim = k * d;
    let mut block = DMatrix::zeros(d, d);
    match mode {
        InformationMode::PerSample => {
            for i in 0..r.len() {
                let h = huber_slope(r[i], p.tau(), p.nu());
                let zi = data.z.row(i);
                let w = h * h;
                for a in 0..d {
                    let za = zi[a] * w;
                    for b in 0..d {
                        block[(a, b)] += za * zi[b];
                    }
                }
            }
        }
        InformationMode::DoubleSum => {
            let slopes = DVector::from_fn(r.len(), |i, _| huber_slope(r[i], p.tau(), p.nu()));
            let g = data.z.tr_mul(&slopes);
            for a in 0..d {
                for b in 0..d {
                    block[(a, b)] = g[a] * g[b];
                }
            }
        }
    }
    // both modes tile the same d x d block over the K x K block grid
    let mut out = DMatrix::zeros(dim, dim);
    for ka in 0..k {
        for kb in 0..k {
            out.view_mut((ka * d, kb * d), (d, d)).copy_from(&block);
        }
    }
    Ok(out)
}

/// A fitted conditional-quantile model: intercept, scalar coefficients,
/// basis matrix, projected-score coefficients, and the training
/// standardization needed to predict on new curves.
#[derive(Debug, Clone)]
pub struct FittedQuantileModel {
    pub tau: QuantileLevel,
    pub alpha: f64,
    pub beta: DVector<f64>,
    pub c: BasisMatrix,
    pub gamma: DVector<f64>,
    pub center: DVector<f64>,
    pub scale: DVector<f64>,
    pub method: BasisKind,
    pub seed: Option<u64>,
    /// In-sample fitted quantiles; not serialized.
    pub in_sample_fitted: Option<DVector<f64>>,
}

impl FittedQuantileModel {
    /// Predict conditional quantiles for new rows: standardize with the
    /// training transform, project, and evaluate the linear predictor.
    pub fn predict(&self, x: Option<&DMatrix<f64>>, z: &CurveSet) -> Result<DVector<f64>> {
        if z.grid() != self.c.grid() {
            return Err(ApqrError::Shape(
                "prediction grid does not match the training grid".into(),
            ));
        }
        let p = self.beta.len();
        let std = z.standardized_with(&self.center, &self.scale)?;
        let scores = std.curves() * self.c.vectors();
        let mut pred = &scores * &self.gamma;
        pred.add_scalar_mut(self.alpha);
        if p > 0 {
            let Some(xm) = x else {
                return Err(ApqrError::Shape(format!(
                    "model uses {p} scalar covariates but none were provided"
                )));
            };
            if xm.nrows() != z.n() || xm.ncols() != p {
                return Err(ApqrError::Shape(format!(
                    "scalar covariates are {}x{} but expected {}x{p}",
                    xm.nrows(),
                    xm.ncols(),
                    z.n()
                )));
            }
            pred += xm * &self.beta;
        }
        Ok(pred)
    }

    /// Serialize to the versioned model document. Floats are printed with 17
    /// significant digits, so the document round-trips bitwise.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        out.push_str("apqr-model 1\n");
        out.push_str(&format!("tau {}\n", format_float(self.tau.value())));
        out.push_str(&format!("alpha {}\n", format_float(self.alpha)));
        push_vector(&mut out, "beta", self.beta.as_slice());
        push_vector(&mut out, "gamma", self.gamma.as_slice());
        push_vector(&mut out, "grid", self.c.grid());
        push_vector(&mut out, "center", self.center.as_slice());
        push_vector(&mut out, "scale", self.scale.as_slice());
        out.push_str(&format!("basis {} {}", self.c.d(), self.c.k()));
        for v in self.c.vectors().as_slice() {
            out.push(' ');
            out.push_str(&format_float(*v));
        }
        out.push('\n');
        out.push_str(&format!("method {}\n", self.method.as_str()));
        match self.seed {
            Some(s) => out.push_str(&format!("seed {s}\n")),
            None => out.push_str("seed none\n"),
        }
        out
    }

    /// Parse a model document produced by [`Self::to_document`].
    pub fn from_document(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty model document"))?;
        if header != "apqr-model 1" {
            return Err(ApqrError::SchemaVersion {
                found: header.to_string(),
                expected: "apqr-model 1",
            });
        }
        let mut tau = None;
        let mut alpha = None;
        let mut beta = None;
        let mut gamma = None;
        let mut grid = None;
        let mut center = None;
        let mut scale = None;
        let mut basis_raw = None;
        let mut method = None;
        let mut seed = None;
        for (idx, line) in lines {
            let lineno = idx + 1;
            let mut parts = line.split_whitespace();
            let key = parts
                .next()
                .ok_or_else(|| parse_err(lineno, "blank line in model document"))?;
            let rest: Vec<&str> = parts.collect();
            match key {
                "tau" => tau = Some(parse_scalar(lineno, &rest)?),
                "alpha" => alpha = Some(parse_scalar(lineno, &rest)?),
                "beta" => beta = Some(parse_counted(lineno, &rest)?),
                "gamma" => gamma = Some(parse_counted(lineno, &rest)?),
                "grid" => grid = Some(parse_counted(lineno, &rest)?),
                "center" => center = Some(parse_counted(lineno, &rest)?),
                "scale" => scale = Some(parse_counted(lineno, &rest)?),
                "basis" => {
                    if rest.len() < 2 {
                        return Err(parse_err(lineno, "basis line needs dimensions"));
                    }
                    let d: usize = rest[0]
                        .parse()
                        .map_err(|_| parse_err(lineno, "bad basis row count"))?;
                    let k: usize = rest[1]
                        .parse()
                        .map_err(|_| parse_err(lineno, "bad basis column count"))?;
                    let values = parse_floats(lineno, &rest[2..])?;
                    if values.len() != d * k {
                        return Err(parse_err(
                            lineno,
                            &format!("basis needs {} values, found {}", d * k, values.len()),
                        ));
                    }
                    basis_raw = Some((d, k, values));
                }
                "method" => {
                    let name = rest
                        .first()
                        .ok_or_else(|| parse_err(lineno, "method line is empty"))?;
                    method = Some(BasisKind::parse(name)?);
                }
                "seed" => {
                    let v = rest
                        .first()
                        .ok_or_else(|| parse_err(lineno, "seed line is empty"))?;
                    seed = Some(if *v == "none" {
                        None
                    } else {
                        Some(
                            v.parse::<u64>()
                                .map_err(|_| parse_err(lineno, "bad seed"))?,
                        )
                    });
                }
                other => {
                    return Err(parse_err(lineno, &format!("unknown key '{other}'")));
                }
            }
        }
        let missing = |what: &str| ApqrError::Parse {
            line: 0,
            message: format!("model document is missing '{what}'"),
        };
        let tau = QuantileLevel::new(tau.ok_or_else(|| missing("tau"))?)?;
        let (d, k, values) = basis_raw.ok_or_else(|| missing("basis"))?;
        let grid = grid.ok_or_else(|| missing("grid"))?;
        let method = method.ok_or_else(|| missing("method"))?;
        let c = BasisMatrix::new(DMatrix::from_column_slice(d, k, &values), method, grid)?;
        Ok(FittedQuantileModel {
            tau,
            alpha: alpha.ok_or_else(|| missing("alpha"))?,
            beta: DVector::from_vec(beta.ok_or_else(|| missing("beta"))?),
            c,
            gamma: DVector::from_vec(gamma.ok_or_else(|| missing("gamma"))?),
            center: DVector::from_vec(center.ok_or_else(|| missing("center"))?),
            scale: DVector::from_vec(scale.ok_or_else(|| missing("scale"))?),
            method,
            seed: seed.ok_or_else(|| missing("seed"))?,
            in_sample_fitted: None,
        })
    }
}

fn parse_err(line: usize, message: &str) -> ApqrError {
    ApqrError::Parse {
        line,
        message: message.to_string(),
    }
}

fn parse_scalar(line: usize, rest: &[&str]) -> Result<f64> {
    if rest.len() != 1 {
        return Err(parse_err(line, "expected one value"));
    }
    rest[0]
        .parse()
        .map_err(|_| parse_err(line, &format!("bad number '{}'", rest[0])))
}

fn parse_floats(line: usize, parts: &[&str]) -> Result<Vec<f64>> {
    parts
        .iter()
        .map(|s| {
            s.parse()
                .map_err(|_| parse_err(line, &format!("bad number '{s}'")))
        })
        .collect()
}

fn parse_counted(line: usize, rest: &[&str]) -> Result<Vec<f64>> {
    if rest.is_empty() {
        return Err(parse_err(line, "expected a count"));
    }
    let count: usize = rest[0]
        .parse()
        .map_err(|_| parse_err(line, &format!("bad count '{}'", rest[0])))?;
    let values = parse_floats(line, &rest[1..])?;
    if values.len() != count {
        return Err(parse_err(
            line,
            &format!("expected {count} values, found {}", values.len()),
        ));
    }
    Ok(values)
}

fn push_vector(out: &mut String, key: &str, values: &[f64]) {
    out.push_str(key);
    out.push(' ');
    out.push_str(&values.len().to_string());
    for v in values {
        out.push(' ');
        out.push_str(&format_float(*v));
    }
    out.push('\n');
}

/// Free-function form of [`FittedQuantileModel::predict`].
pub fn predict(
    model: &FittedQuantileModel,
    x: Option<&DMatrix<f64>>,
    z: &CurveSet,
) -> Result<DVector<f64>> {
    model.predict(x, z)
}

fn intercept_design(n: usize, x: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    let p = x.map_or(0, |m| m.ncols());
    let mut design = DMatrix::from_element(n, 1 + p, 1.0);
    if let Some(m) = x {
        design.view_mut((0, 1), (n, p)).copy_from(m);
    }
    design
}

/// Block relaxation for the basis matrix at a preset `K`.
///
/// Curves are standardized per grid column first (the transform is recorded
/// in the returned model). For each half-width in the schedule the two
/// blocks alternate until a full pass improves the objective by less than
/// `outer_tol * (1 + |objective at stage start|)`; the ladder stops early
/// once either consecutive smoothing levels agree at the current point to
/// within the same tolerance or the smoothing error bound is below it.
/// Returns the full objective trace and the refit model.
pub fn fit_apqr(
    curves: &CurveSet,
    x: Option<&DMatrix<f64>>,
    y: &DVector<f64>,
    tau: QuantileLevel,
    k: usize,
    schedule: &SmoothingSchedule,
    init: &ApqrInit,
) -> Result<(Vec<PqrState>, FittedQuantileModel)> {
    let n = curves.n();
    let d = curves.d();
    let k_max = (n.saturating_sub(1)).min(d);
    if k == 0 || k > k_max {
        return Err(ApqrError::Capacity(format!(
            "requested {k} basis columns but at most {k_max} are available (n = {n}, d = {d})"
        )));
    }
    if y.len() != n {
        return Err(ApqrError::Shape(format!(
            "response length {} does not match {n} curves",
            y.len()
        )));
    }
    let std = standardize(curves)?;
    let z = std.curves();
    let data = QuantileData { z, x, y };
    data.validate()?;

    let (c_init, seed) = match init {
        ApqrInit::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let values: Vec<f64> = (0..d * k)
                .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            (DMatrix::from_column_slice(d, k, &values), Some(*seed))
        }
        ApqrInit::Basis(b) => {
            if b.d() != d || b.k() != k {
                return Err(ApqrError::Shape(format!(
                    "initial basis is {}x{} but the fit needs {d}x{k}",
                    b.d(),
                    b.k()
                )));
            }
            if b.grid() != curves.grid() {
                return Err(ApqrError::Shape(
                    "initial basis grid does not match the curve grid".into(),
                ));
            }
            (b.vectors().clone(), None)
        }
    };
    // canonicalize the start so column-permuted inits give identical runs
    let mut c_mat = as_basis(&c_init, curves.grid())
        .canonicalized()
        .vectors()
        .clone();

    let ab_design = intercept_design(n, x);
    let mut w = canonical_sum(&c_mat, curves.grid());
    let nus = schedule.nu_values();
    // the basis-block cap is a capacity control for wide problems; small
    // problems (and problems with few parameters per sample) are solved to
    // convergence, where the block relaxation provably tracks the exact
    // check-loss optimum as the smoothing shrinks
    let q_total = d + data.p() + 1;
    let high_capacity = q_total > 25 && q_total > n / 3;

    // scalar block at the initial basis (first half-width)
    let p0 = HuberParams::new(tau, nus[0])?;
    let target0 = y - z * &w;
    let init_solve = minimize_smoothed(
        &ab_design,
        &target0,
        &p0,
        DVector::zeros(ab_design.ncols()),
        schedule.inner_tol,
        schedule.max_inner.max(crate::oracle::NEWTON_CAP_FLOOR),
        0,
    )?;
    let mut alpha = init_solve.coefficients[0];
    let mut beta = init_solve
        .coefficients
        .rows(1, ab_design.ncols() - 1)
        .into_owned();

    let mut trace: Vec<PqrState> = Vec::new();
    let stages = nus.len().min(schedule.max_outer);
    for stage in 0..stages {
        let nu = nus[stage];
        let p = HuberParams::new(tau, nu)?;
        let r = residuals(alpha, &beta, &w, &data);
        let stage_start = smoothed_objective_value(&r, p.tau(), p.nu());
        let eps_stage = schedule.outer_tol * (1.0 + stage_start.abs());
        trace.push(PqrState {
            alpha,
            beta: beta.clone(),
            c: as_basis(&c_mat, curves.grid()),
            objective: stage_start,
            stage,
            pass: 0,
            nu,
        });

        let mut obj_prev = stage_start;
        // the basis block gets max_inner descent steps in total per stage;
        // the cap is the method's capacity control, not a convergence
        // failure, so exhausting it just ends the stage's basis updates.
        // In the low-capacity regime (parameters at most a third of the
        // sample) the cap would only slow exact convergence, so it is lifted.
        let mut c_budget = if high_capacity {
            schedule.max_inner
        } else {
            schedule.max_inner.max(crate::oracle::NEWTON_CAP_FLOOR)
        };
        for pass in 1..=MAX_PASSES_PER_STAGE {
            // basis block: descend the column-sum problem, spread the step
            let mut resid_base = data.y.clone();
            if let Some(xm) = data.x {
                resid_base -= xm * &beta;
            }
            resid_base.add_scalar_mut(-alpha);
            let (w_new, _, _, steps_used) = descend_smoothed(
                z,
                &resid_base,
                &p,
                w.clone(),
                schedule.inner_tol,
                c_budget,
            );
            c_budget = c_budget.saturating_sub(steps_used);
            let delta = (&w_new - &w) / k as f64;
            for col in 0..k {
                for row in 0..d {
                    c_mat[(row, col)] += delta[row];
                }
            }
            w = canonical_sum(&c_mat, curves.grid());

            // scalar block with the projected offset held fixed
            let target = y - z * &w;
            let warm = {
                let mut v = DVector::zeros(ab_design.ncols());
                v[0] = alpha;
                v.rows_mut(1, beta.len()).copy_from(&beta);
                v
            };
            let solve = minimize_smoothed(
                &ab_design,
                &target,
                &p,
                warm,
                schedule.inner_tol,
                schedule.max_inner.max(crate::oracle::NEWTON_CAP_FLOOR),
                stage,
            )?;
            alpha = solve.coefficients[0];
            beta = solve
                .coefficients
                .rows(1, ab_design.ncols() - 1)
                .into_owned();

            let r = residuals(alpha, &beta, &w, &data);
            let obj = smoothed_objective_value(&r, p.tau(), p.nu());
            if obj < obj_prev - 1e-8 {
                return Err(ApqrError::MonotonicityViolation {
                    stage,
                    pass,
                    drop: obj_prev - obj,
                });
            }
            trace.push(PqrState {
                alpha,
                beta: beta.clone(),
                c: as_basis(&c_mat, curves.grid()),
                objective: obj,
                stage,
                pass,
                nu,
            });
            let improvement = obj - obj_prev;
            obj_prev = obj;
            if improvement < eps_stage {
                break;
            }
            if pass == MAX_PASSES_PER_STAGE {
                return Err(ApqrError::Convergence {
                    stage,
                    grad_norm: f64::NAN,
                    iterations: pass,
                    trace: trace.iter().map(|s| s.objective).collect(),
                });
            }
        }

        // ladder stops: consecutive smoothing levels agree at this point,
        // or the smoothing error itself is below the stage tolerance
        if stage + 1 < stages {
            let r = residuals(alpha, &beta, &w, &data);
            let next_obj = smoothed_objective_value(&r, p.tau(), nus[stage + 1]);
            if (next_obj - obj_prev).abs() < eps_stage {
                break;
            }
        }
        if n as f64 * approximation_gap_bound(&p) < schedule.outer_tol * (1.0 + obj_prev.abs()) {
            break;
        }
    }

    let c_final = BasisMatrix::new(c_mat, BasisKind::Apqr, curves.grid().to_vec())?.canonicalized();
    let model = refit_on_scores(
        curves,
        &std,
        x,
        y,
        tau,
        &c_final,
        schedule,
        alpha,
        &beta,
        seed,
        BasisKind::Apqr,
    )?;
    Ok((trace, model))
}

fn as_basis(c_mat: &DMatrix<f64>, grid: &[f64]) -> BasisMatrix {
    BasisMatrix::new_unchecked(c_mat.clone(), BasisKind::Apqr, grid.to_vec())
}

fn canonical_sum(c_mat: &DMatrix<f64>, grid: &[f64]) -> DVector<f64> {
    as_basis(c_mat, grid).column_sum()
}

/// Final refit shared by every method that ends with a smoothed quantile fit
/// on the projected scores.
#[allow(clippy::too_many_arguments)]
fn refit_on_scores(
    curves: &CurveSet,
    std: &CurveSet,
    x: Option<&DMatrix<f64>>,
    y: &DVector<f64>,
    tau: QuantileLevel,
    c: &BasisMatrix,
    schedule: &SmoothingSchedule,
    warm_alpha: f64,
    warm_beta: &DVector<f64>,
    seed: Option<u64>,
    method: BasisKind,
) -> Result<FittedQuantileModel> {
    let n = curves.n();
    let k = c.k();
    let p = x.map_or(0, |m| m.ncols());
    let scores = std.curves() * c.vectors();
    let mut design = DMatrix::from_element(n, 1 + p + k, 1.0);
    if let Some(xm) = x {
        design.view_mut((0, 1), (n, p)).copy_from(xm);
    }
    design.view_mut((0, 1 + p), (n, k)).copy_from(&scores);
    let mut warm = DVector::zeros(1 + p + k);
    warm[0] = warm_alpha;
    warm.rows_mut(1, p).copy_from(warm_beta);
    for j in 0..k {
        warm[1 + p + j] = 1.0;
    }
    let refit = smoothed_fit_ladder(&design, y, tau, schedule, warm)?;
    let alpha = refit.coefficients[0];
    let beta = refit.coefficients.rows(1, p).into_owned();
    let gamma = refit.coefficients.rows(1 + p, k).into_owned();
    let mut model = FittedQuantileModel {
        tau,
        alpha,
        beta,
        c: c.clone(),
        gamma,
        center: std.center().expect("standardized").clone(),
        scale: std.scale().expect("standardized").clone(),
        method,
        seed,
        in_sample_fitted: None,
    };
    let fitted = model.predict(x, curves)?;
    model.in_sample_fitted = Some(fitted);
    Ok(model)
}

/// Extraction method for the fitting pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Apqr,
    Fpc,
    Pls,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Apqr => "apqr",
            Method::Fpc => "fpc",
            Method::Pls => "pls",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "apqr" => Ok(Method::Apqr),
            "fpc" => Ok(Method::Fpc),
            "pls" => Ok(Method::Pls),
            other => Err(ApqrError::InvalidParameter(format!(
                "unknown method '{other}' (expected apqr, fpc, or pls)"
            ))),
        }
    }
}

/// Options for [`fit_model`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub tau: QuantileLevel,
    pub k: usize,
    pub method: Method,
    /// Smoothing schedule; derived from the responses when absent.
    pub schedule: Option<SmoothingSchedule>,
    /// Seeds the random basis initialization for `apqr`.
    pub seed: u64,
    /// Overrides the default initialization for `apqr`.
    pub init: Option<ApqrInit>,
}

impl FitOptions {
    pub fn new(tau: QuantileLevel, k: usize, method: Method) -> Self {
        FitOptions {
            tau,
            k,
            method,
            schedule: None,
            seed: 0,
            init: None,
        }
    }
}

/// Fit one model end to end: standardize, extract the basis with the chosen
/// method, refit on the projected scores. The partial least squares arm is
/// the classical least-squares variant: least-squares extraction and a
/// least-squares final refit.
pub fn fit_model(
    curves: &CurveSet,
    x: Option<&DMatrix<f64>>,
    y: &DVector<f64>,
    opts: &FitOptions,
) -> Result<FittedQuantileModel> {
    let schedule = match &opts.schedule {
        Some(s) => s.clone(),
        None => SmoothingSchedule::default_for(y.as_slice()),
    };
    match opts.method {
        Method::Apqr => {
            // default to the principal-component start: it carries no weight
            // in low-variance curve directions, so the capped block updates
            // add tail loadings only where the response asks for them
            let init = match opts.init.clone() {
                Some(init) => init,
                None => {
                    let std = standardize(curves)?;
                    ApqrInit::Basis(crate::basis::fpc_basis(&std, opts.k)?)
                }
            };
            let (_, model) = fit_apqr(curves, x, y, opts.tau, opts.k, &schedule, &init)?;
            Ok(model)
        }
        Method::Fpc => {
            let std = standardize(curves)?;
            let basis = crate::basis::fpc_basis(&std, opts.k)?;
            refit_on_scores(
                curves,
                &std,
                x,
                y,
                opts.tau,
                &basis,
                &schedule,
                0.0,
                &DVector::zeros(x.map_or(0, |m| m.ncols())),
                None,
                BasisKind::Fpc,
            )
        }
        Method::Pls => {
            let std = standardize(curves)?;
            let basis = crate::basis::pls_basis(&std, x, y, opts.k)?;
            least_squares_refit(curves, &std, x, y, opts.tau, &basis)
        }
    }
}

/// Least-squares refit on the projected scores (the partial least squares
/// baseline is a mean-regression method end to end).
fn least_squares_refit(
    curves: &CurveSet,
    std: &CurveSet,
    x: Option<&DMatrix<f64>>,
    y: &DVector<f64>,
    tau: QuantileLevel,
    c: &BasisMatrix,
) -> Result<FittedQuantileModel> {
    let n = curves.n();
    let k = c.k();
    let p = x.map_or(0, |m| m.ncols());
    let scores = project(std, c)?;
    let mut design = DMatrix::from_element(n, 1 + p + k, 1.0);
    if let Some(xm) = x {
        design.view_mut((0, 1), (n, p)).copy_from(xm);
    }
    design.view_mut((0, 1 + p), (n, k)).copy_from(&scores);
    let coef = design
        .clone()
        .svd(true, true)
        .solve(y, 1e-12)
        .map_err(|e| ApqrError::Singular(e.to_string()))?;
    let mut model = FittedQuantileModel {
        tau,
        alpha: coef[0],
        beta: coef.rows(1, p).into_owned(),
        c: c.clone(),
        gamma: coef.rows(1 + p, k).into_owned(),
        center: std.center().expect("standardized").clone(),
        scale: std.scale().expect("standardized").clone(),
        method: BasisKind::Pls,
        seed: None,
        in_sample_fitted: None,
    };
    let fitted = model.predict(x, curves)?;
    model.in_sample_fitted = Some(fitted);
    Ok(model)
}
