//! Seeded data-generating processes and the study runner behind the
//! simulation CLI.
//!
//! Two designs are provided. The cosine design builds curves from 50 cosine
//! harmonics with polynomially decaying amplitudes and a fixed functional
//! coefficient; it favours principal-component extraction since the response
//! loads mostly on the leading harmonics. The curve-driven design takes
//! curves from a supplied set, builds the functional coefficient from a
//! contiguous block of that set's own principal components, and scales the
//! noise to a multiple of the signal's standard deviation, so the signal can
//! be pushed into arbitrarily deep components.
//!
//! Every replicate derives its randomness from `(seed, rep)` through
//! separate cipher streams for scores, noise, and the train/test split, so
//! results are bitwise reproducible and independent of evaluation order.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal};
use std::f64::consts::PI;

use crate::basis::CurveSet;
use crate::error::{ApqrError, Result};
use crate::loss::QuantileLevel;
use crate::pqr::{fit_model, FitOptions, Method};
use crate::select::{cv_score, mix_seed, select_vector_rows};
use crate::util::{mean_absolute_error, sample_sd};

/// Number of harmonic terms in the cosine design.
pub const COSINE_TERMS: usize = 50;
/// Number of source components available to the curve-driven design.
pub const CURVE_DRIVEN_COMPONENTS: usize = 20;

/// Response noise.
#[derive(Debug, Clone, Copy)]
pub enum NoiseKind {
    Gaussian { sigma: f64 },
    Cauchy { scale: f64 },
}

/// How a replicate is split into train and test rows.
#[derive(Debug, Clone, Copy)]
pub enum SplitSpec {
    /// Train fraction (e.g. 0.8 for an 80/20 split).
    Fraction(f64),
    Sizes { train: usize, test: usize },
}

/// Which data-generating process to run.
#[derive(Debug, Clone)]
pub enum SimKind {
    Cosine,
    CurveDriven {
        source: CurveSet,
        /// Component block `[lo, hi]` (1-based) carrying the signal.
        pattern_lo: usize,
        pattern_hi: usize,
        /// Noise standard deviation as a multiple of the signal's.
        noise_multiplier: f64,
    },
}

impl SimKind {
    /// The four standard component blocks, cases 1 through 4.
    pub fn pattern_range(case: usize) -> Result<(usize, usize)> {
        match case {
            1 => Ok((1, 5)),
            2 => Ok((6, 10)),
            3 => Ok((11, 15)),
            4 => Ok((16, 20)),
            other => Err(ApqrError::InvalidParameter(format!(
                "pattern case must be 1..=4, got {other}"
            ))),
        }
    }
}

/// Full parameterization of one study's data-generating process.
#[derive(Debug, Clone)]
pub struct SimSpec {
    pub kind: SimKind,
    pub n: usize,
    pub d: usize,
    pub noise: NoiseKind,
    pub seed: u64,
    pub split: SplitSpec,
}

impl SimSpec {
    /// Cosine design at the standard scale: n = 300 curves on 120 grid
    /// points, 80/20 split.
    pub fn cosine(noise: NoiseKind, seed: u64) -> Self {
        SimSpec {
            kind: SimKind::Cosine,
            n: 300,
            d: 120,
            noise,
            seed,
            split: SplitSpec::Fraction(0.8),
        }
    }

    /// Curve-driven design over a supplied curve set. Uses the canonical
    /// 1517/200 split at the reference sample size of 1717, and an 80/20
    /// split otherwise.
    pub fn curve_driven(
        source: CurveSet,
        pattern_case: usize,
        noise_multiplier: f64,
        seed: u64,
    ) -> Result<Self> {
        let (pattern_lo, pattern_hi) = SimKind::pattern_range(pattern_case)?;
        let n = source.n();
        let d = source.d();
        let split = if n == 1717 {
            SplitSpec::Sizes {
                train: 1517,
                test: 200,
            }
        } else {
            SplitSpec::Fraction(0.8)
        };
        Ok(SimSpec {
            kind: SimKind::CurveDriven {
                source,
                pattern_lo,
                pattern_hi,
                noise_multiplier,
            },
            n,
            d,
            noise: NoiseKind::Gaussian { sigma: 1.0 },
            seed,
            split,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.n < 20 {
            return Err(ApqrError::InvalidParameter(format!(
                "simulation needs n >= 20, got {}",
                self.n
            )));
        }
        if self.d < 2 {
            return Err(ApqrError::InvalidParameter(format!(
                "simulation needs d >= 2, got {}",
                self.d
            )));
        }
        if let SplitSpec::Fraction(f) = self.split {
            if !(f > 0.0 && f < 1.0) {
                return Err(ApqrError::InvalidParameter(
                    "train fraction must lie in (0, 1)".into(),
                ));
            }
        }
        Ok(())
    }

    fn split_sizes(&self) -> Result<(usize, usize)> {
        let (train, test) = match self.split {
            SplitSpec::Fraction(f) => {
                let train = (self.n as f64 * f).round() as usize;
                (train, self.n - train)
            }
            SplitSpec::Sizes { train, test } => (train, test),
        };
        if train == 0 || test == 0 || train + test != self.n {
            return Err(ApqrError::InvalidParameter(format!(
                "split {train}/{test} does not partition n = {}",
                self.n
            )));
        }
        Ok((train, test))
    }
}

/// One generated train/test pair with the functional coefficient that
/// produced the responses.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub train_curves: CurveSet,
    pub train_y: DVector<f64>,
    pub test_curves: CurveSet,
    pub test_y: DVector<f64>,
    /// True functional coefficient sampled on the grid.
    pub true_gamma: DVector<f64>,
    pub seed: u64,
    pub rep: u64,
}

fn stream_rng(seed: u64, rep: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep.wrapping_mul(4).wrapping_add(purpose));
    rng
}

fn uniform_grid(d: usize) -> Vec<f64> {
    (0..d).map(|j| j as f64 / (d - 1) as f64).collect()
}

/// Trapezoid quadrature weights for an increasing grid.
pub fn trapezoid_weights(grid: &[f64]) -> DVector<f64> {
    let d = grid.len();
    DVector::from_fn(d, |j, _| {
        if j == 0 {
            0.5 * (grid[1] - grid[0])
        } else if j == d - 1 {
            0.5 * (grid[d - 1] - grid[d - 2])
        } else {
            0.5 * (grid[j + 1] - grid[j - 1])
        }
    })
}

/// Cosine-design functional coefficient on the grid:
/// `gamma(t) = sum_j gamma_j sqrt(2) cos(j pi t)` with `gamma_1 = 0.5` and
/// `gamma_j = (20/3) (-1)^{j+1} j^{-2}` for j >= 2.
pub fn cosine_true_gamma(d: usize) -> DVector<f64> {
    let grid = uniform_grid(d);
    let mut gamma = DVector::zeros(d);
    for (idx, &t) in grid.iter().enumerate() {
        let mut acc = 0.0;
        for j in 1..=COSINE_TERMS {
            acc += cosine_coefficient(j) * harmonic(j, t);
        }
        gamma[idx] = acc;
    }
    gamma
}

fn cosine_coefficient(j: usize) -> f64 {
    if j == 1 {
        0.5
    } else {
        let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
        20.0 / 3.0 * sign * (j as f64).powi(-2)
    }
}

fn harmonic(j: usize, t: f64) -> f64 {
    2.0f64.sqrt() * (j as f64 * PI * t).cos()
}

/// Harmonic amplitude `v_j = (-1)^{j+1} j^{-0.55}` (so the j-th score
/// variance decays like `j^{-1.1}`).
fn harmonic_amplitude(j: usize) -> f64 {
    let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
    sign * (j as f64).powf(-0.55)
}

/// Draw the n x 50 matrix of i.i.d. uniform scores on `[-sqrt(3), sqrt(3)]`
/// (unit variance) used by the cosine design.
pub fn cosine_scores(spec: &SimSpec, rep: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(spec.seed, rep, 0);
    let bound = 3.0f64.sqrt();
    let mut scores = DMatrix::zeros(spec.n, COSINE_TERMS);
    for i in 0..spec.n {
        for j in 0..COSINE_TERMS {
            scores[(i, j)] = rand::Rng::random_range(&mut rng, -bound..bound);
        }
    }
    scores
}

fn draw_noise(kind: NoiseKind, n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    match kind {
        NoiseKind::Gaussian { sigma } => {
            let mut eps = DVector::zeros(n);
            for v in eps.iter_mut() {
                *v = sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
            }
            eps
        }
        NoiseKind::Cauchy { scale } => {
            let dist = Cauchy::new(0.0, scale).expect("valid scale");
            let mut eps = DVector::zeros(n);
            for v in eps.iter_mut() {
                *v = dist.sample(rng);
            }
            eps
        }
    }
}

fn split_rows(n: usize, train: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    let train_rows = indices[..train].to_vec();
    let test_rows = indices[train..].to_vec();
    (train_rows, test_rows)
}

/// Assemble a cosine-design replicate from explicit scores and noise (the
/// generation hooks the tests use to force degenerate cases); the split
/// stream is derived from `(seed, rep)` exactly as in [`gen_sim1`].
pub fn assemble_sim1(
    spec: &SimSpec,
    rep: u64,
    scores: &DMatrix<f64>,
    eps: &DVector<f64>,
) -> Result<Replicate> {
    spec.validate()?;
    if !matches!(spec.kind, SimKind::Cosine) {
        return Err(ApqrError::InvalidParameter(
            "assemble_sim1 requires the cosine design".into(),
        ));
    }
    if scores.nrows() != spec.n || scores.ncols() != COSINE_TERMS || eps.len() != spec.n {
        return Err(ApqrError::Shape(
            "scores must be n x 50 and noise length n".into(),
        ));
    }
    let d = spec.d;
    let grid = uniform_grid(d);

    // curves: Z_i(t) = sum_j v_j U_ij phi_j(t)
    let mut harmonics = DMatrix::zeros(COSINE_TERMS, d);
    for j in 1..=COSINE_TERMS {
        for (col, &t) in grid.iter().enumerate() {
            harmonics[(j - 1, col)] = harmonic(j, t);
        }
    }
    let mut weighted = scores.clone();
    for j in 0..COSINE_TERMS {
        let v = harmonic_amplitude(j + 1);
        for i in 0..spec.n {
            weighted[(i, j)] *= v;
        }
    }
    let curves = &weighted * &harmonics;

    // responses by trapezoid quadrature of gamma(t) Z(t)
    let gamma = cosine_true_gamma(d);
    let weights = trapezoid_weights(&grid);
    let integrand = DVector::from_fn(d, |j, _| gamma[j] * weights[j]);
    let mut y = &curves * &integrand;
    y += eps;

    let (train, test) = spec.split_sizes()?;
    let mut split_stream = stream_rng(spec.seed, rep, 2);
    let (train_rows, test_rows) = split_rows(spec.n, train, &mut split_stream);
    let _ = test;

    let all = CurveSet::new(grid, curves)?;
    Ok(Replicate {
        train_curves: all.select_rows(&train_rows)?,
        train_y: select_vector_rows(&y, &train_rows),
        test_curves: all.select_rows(&test_rows)?,
        test_y: select_vector_rows(&y, &test_rows),
        true_gamma: gamma,
        seed: spec.seed,
        rep,
    })
}

/// Generate one cosine-design replicate.
pub fn gen_sim1(spec: &SimSpec, rep: u64) -> Result<Replicate> {
    let scores = cosine_scores(spec, rep);
    let mut noise_stream = stream_rng(spec.seed, rep, 1);
    let eps = draw_noise(spec.noise, spec.n, &mut noise_stream);
    assemble_sim1(spec, rep, &scores, &eps)
}

/// Generate one curve-driven replicate: the functional coefficient is a
/// signed indicator block over the source set's own principal components,
/// responses come from trapezoid quadrature, and the Gaussian noise scale is
/// the noiseless responses' standard deviation times the multiplier.
pub fn gen_sim2(spec: &SimSpec, rep: u64) -> Result<Replicate> {
    spec.validate()?;
    let SimKind::CurveDriven {
        source,
        pattern_lo,
        pattern_hi,
        noise_multiplier,
    } = &spec.kind
    else {
        return Err(ApqrError::MissingSource(
            "the curve-driven design needs source curves; pass --source-curves <csv>".into(),
        ));
    };
    let (lo, hi) = (*pattern_lo, *pattern_hi);
    if lo == 0 || hi < lo || hi > CURVE_DRIVEN_COMPONENTS {
        return Err(ApqrError::InvalidParameter(format!(
            "component block [{lo}, {hi}] must lie within 1..={CURVE_DRIVEN_COMPONENTS}"
        )));
    }
    let n = source.n();
    let d = source.d();
    if CURVE_DRIVEN_COMPONENTS > (n - 1).min(d) {
        return Err(ApqrError::Capacity(format!(
            "source curves support at most {} components, need {CURVE_DRIVEN_COMPONENTS}",
            (n - 1).min(d)
        )));
    }

    // principal components of the source curves in eigenvalue order
    let components = crate::basis::covariance_eigen_vectors(source, CURVE_DRIVEN_COMPONENTS);
    let mut gamma = DVector::zeros(d);
    for j in lo..=hi {
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        gamma += components.column(j - 1) * sign;
    }

    let weights = trapezoid_weights(source.grid());
    let integrand = DVector::from_fn(d, |j, _| gamma[j] * weights[j]);
    let noiseless = source.curves() * &integrand;
    let signal_sd = sample_sd(noiseless.as_slice());
    let sigma = noise_multiplier * signal_sd;

    let mut noise_stream = stream_rng(spec.seed, rep, 1);
    let eps = draw_noise(NoiseKind::Gaussian { sigma }, n, &mut noise_stream);
    let y = &noiseless + &eps;

    let (train, _) = spec.split_sizes()?;
    let mut split_stream = stream_rng(spec.seed, rep, 2);
    let (train_rows, test_rows) = split_rows(n, train, &mut split_stream);

    Ok(Replicate {
        train_curves: source.select_rows(&train_rows)?,
        train_y: select_vector_rows(&y, &train_rows),
        test_curves: source.select_rows(&test_rows)?,
        test_y: select_vector_rows(&y, &test_rows),
        true_gamma: gamma,
        seed: spec.seed,
        rep,
    })
}

/// Generate the replicate appropriate to the spec's design.
pub fn gen_replicate(spec: &SimSpec, rep: u64) -> Result<Replicate> {
    match spec.kind {
        SimKind::Cosine => gen_sim1(spec, rep),
        SimKind::CurveDriven { .. } => gen_sim2(spec, rep),
    }
}

/// How a study method chooses its basis count.
#[derive(Debug, Clone)]
pub enum KChoice {
    Fixed(usize),
    /// Pick the count minimizing cross-validated loss over a grid.
    CvAuto { grid: Vec<usize>, folds: usize },
}

/// One arm of a simulation study.
#[derive(Debug, Clone)]
pub struct StudyMethod {
    pub label: String,
    pub method: Method,
    pub k: KChoice,
}

/// One row of the study table.
#[derive(Debug, Clone)]
pub struct StudyRow {
    pub rep: u64,
    pub label: String,
    /// Basis count used (the chosen one under CV selection).
    pub k: usize,
    /// Mean absolute test error; NaN for a failed fit.
    pub mae: f64,
    pub seed: u64,
    pub ok: bool,
}

/// Run `reps` replicates of every method arm and collect test mean absolute
/// errors. Per-replicate failures are recorded as flagged NaN rows rather
/// than aborting the study. Deterministic given the spec and its seed.
pub fn run_study(
    spec: &SimSpec,
    methods: &[StudyMethod],
    tau: QuantileLevel,
    reps: u64,
) -> Result<Vec<StudyRow>> {
    if reps == 0 {
        return Err(ApqrError::InvalidParameter("reps must be >= 1".into()));
    }
    let mut rows = Vec::with_capacity(reps as usize * methods.len());
    for rep in 0..reps {
        let replicate = gen_replicate(spec, rep)?;
        // same derived seed for every arm of a replicate, so identical
        // method entries produce identical rows
        let fit_seed = mix_seed(spec.seed, rep);
        for arm in methods {
            let outcome = run_arm(&replicate, arm, tau, fit_seed);
            match outcome {
                Ok((k, mae)) => rows.push(StudyRow {
                    rep,
                    label: arm.label.clone(),
                    k,
                    mae,
                    seed: spec.seed,
                    ok: true,
                }),
                Err(err) => {
                    log::warn!("rep {rep}, method {}: {err}", arm.label);
                    rows.push(StudyRow {
                        rep,
                        label: arm.label.clone(),
                        k: 0,
                        mae: f64::NAN,
                        seed: spec.seed,
                        ok: false,
                    });
                }
            }
        }
    }
    Ok(rows)
}

fn run_arm(
    replicate: &Replicate,
    arm: &StudyMethod,
    tau: QuantileLevel,
    fit_seed: u64,
) -> Result<(usize, f64)> {
    let k = match &arm.k {
        KChoice::Fixed(k) => *k,
        KChoice::CvAuto { grid, folds } => {
            let mut best = (f64::INFINITY, 0usize);
            let mut sorted = grid.clone();
            sorted.sort_unstable();
            sorted.dedup();
            for &k in &sorted {
                let s = cv_score(
                    &replicate.train_curves,
                    None,
                    &replicate.train_y,
                    tau,
                    k,
                    *folds,
                    arm.method,
                    fit_seed,
                )?;
                if s < best.0 {
                    best = (s, k);
                }
            }
            best.1
        }
    };
    let mut opts = FitOptions::new(tau, k, arm.method);
    opts.seed = fit_seed;
    let model = fit_model(&replicate.train_curves, None, &replicate.train_y, &opts)?;
    let pred = model.predict(None, &replicate.test_curves)?;
    let mae = mean_absolute_error(pred.as_slice(), replicate.test_y.as_slice());
    Ok((k, mae))
}
