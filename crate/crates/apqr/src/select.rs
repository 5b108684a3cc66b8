//! Choice of the basis count by cross-validation or BIC.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::basis::CurveSet;
use crate::error::{ApqrError, Result};
use crate::loss::{check_value, QuantileLevel};
use crate::pqr::{fit_model, FitOptions, Method};

/// Selection criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Cv,
    Bic,
}

impl Criterion {
    pub fn as_str(&self) -> &'static str {
        match self {
            Criterion::Cv => "cv",
            Criterion::Bic => "bic",
        }
    }
}

/// Scores per candidate basis count and the choice (minimal score, ties
/// broken by the smaller count).
#[derive(Debug, Clone)]
pub struct SelectionReport {
    pub candidate_ks: Vec<usize>,
    pub criterion: Criterion,
    pub folds: Option<usize>,
    pub scores: Vec<f64>,
    pub chosen_k: usize,
    /// Marks candidates whose in-sample loss was exactly zero (BIC is the
    /// negative-infinity sentinel there).
    pub degenerate: Vec<bool>,
}

/// Deterministic fold assignment: a seeded shuffle of row indices split into
/// nearly equal blocks (the first `n % folds` blocks get one extra row).
pub fn fold_assignments(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        out.push(indices[start..start + size].to_vec());
        start += size;
    }
    out
}

pub(crate) fn select_matrix_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), m.ncols());
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).copy_from(&m.row(r));
    }
    out
}

pub(crate) fn select_vector_rows(v: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_fn(rows.len(), |i, _| v[rows[i]])
}

pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Mean held-out check loss over a seeded fold partition. Each fold fit runs
/// the full pipeline (standardization included) on the complement; per-row
/// losses are accumulated in row order, so the result does not depend on the
/// order folds are processed in. `folds = n` is leave-one-out.
#[allow(clippy::too_many_arguments)]
pub fn cv_score(
    curves: &CurveSet,
    x: Option<&DMatrix<f64>>,
    y: &DVector<f64>,
    tau: QuantileLevel,
    k: usize,
    folds: usize,
    method: Method,
    seed: u64,
) -> Result<f64> {
    let n = curves.n();
    if folds < 2 || folds > n {
        return Err(ApqrError::InvalidParameter(format!(
            "folds must lie in [2, {n}], got {folds}"
        )));
    }
    let assignments = fold_assignments(n, folds, seed);
    let mut losses = vec![0.0_f64; n];
    for (fold_idx, held_out) in assignments.iter().enumerate() {
        let train: Vec<usize> = (0..n).filter(|i| !held_out.contains(i)).collect();
        let k_max = train.len().saturating_sub(1).min(curves.d());
        if k > k_max {
            return Err(ApqrError::Capacity(format!(
                "fold {fold_idx} leaves {} training rows, too few for {k} basis columns",
                train.len()
            )));
        }
        let train_curves = curves.select_rows(&train)?;
        let train_y = select_vector_rows(y, &train);
        let train_x = x.map(|m| select_matrix_rows(m, &train));
        let test_curves = curves.select_rows(held_out)?;
        let test_x = x.map(|m| select_matrix_rows(m, held_out));

        let mut opts = FitOptions::new(tau, k, method);
        opts.seed = mix_seed(seed, fold_idx as u64);
        let model = fit_model(&train_curves, train_x.as_ref(), &train_y, &opts)?;
        let pred = model.predict(test_x.as_ref(), &test_curves)?;
        for (slot, &row) in held_out.iter().enumerate() {
            losses[row] = check_value(y[row] - pred[slot], tau.value());
        }
    }
    Ok(losses.iter().sum::<f64>() / n as f64)
}

/// `log(mean in-sample check loss) + (K + 1) log(n) / n`. A perfect
/// in-sample fit returns the negative-infinity sentinel, which
/// [`select_k`] flags in its report.
pub fn bic_score(
    curves: &CurveSet,
    x: Option<&DMatrix<f64>>,
    y: &DVector<f64>,
    tau: QuantileLevel,
    k: usize,
    method: Method,
    seed: u64,
) -> Result<f64> {
    let n = curves.n();
    let mut opts = FitOptions::new(tau, k, method);
    opts.seed = seed;
    let model = fit_model(curves, x, y, &opts)?;
    let fitted = model
        .in_sample_fitted
        .as_ref()
        .expect("fit_model stores fitted values");
    let mean_loss = y
        .iter()
        .zip(fitted.iter())
        .map(|(yi, fi)| check_value(yi - fi, tau.value()))
        .sum::<f64>()
        / n as f64;
    if mean_loss == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(mean_loss.ln() + (k as f64 + 1.0) * (n as f64).ln() / n as f64)
}

/// Score every candidate count and pick the argmin (ties go to the smaller
/// count, which ascending iteration order guarantees).
#[allow(clippy::too_many_arguments)]
pub fn select_k(
    curves: &CurveSet,
    x: Option<&DMatrix<f64>>,
    y: &DVector<f64>,
    tau: QuantileLevel,
    candidate_ks: &[usize],
    criterion: Criterion,
    folds: usize,
    method: Method,
    seed: u64,
) -> Result<SelectionReport> {
    if candidate_ks.is_empty() {
        return Err(ApqrError::InvalidParameter(
            "need at least one candidate basis count".into(),
        ));
    }
    let mut ks = candidate_ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut scores = Vec::with_capacity(ks.len());
    let mut degenerate = Vec::with_capacity(ks.len());
    for &k in &ks {
        let s = match criterion {
            Criterion::Cv => cv_score(curves, x, y, tau, k, folds, method, seed)?,
            Criterion::Bic => bic_score(curves, x, y, tau, k, method, seed)?,
        };
        degenerate.push(s == f64::NEG_INFINITY);
        scores.push(s);
    }
    let mut chosen = 0;
    for i in 1..ks.len() {
        if scores[i] < scores[chosen] {
            chosen = i;
        }
    }
    Ok(SelectionReport {
        chosen_k: ks[chosen],
        candidate_ks: ks,
        criterion,
        folds: match criterion {
            Criterion::Cv => Some(folds),
            Criterion::Bic => None,
        },
        scores,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn uniform_grid(d: usize) -> Vec<f64> {
        (0..d).map(|j| j as f64 / (d - 1) as f64).collect()
    }

    fn tau(t: f64) -> QuantileLevel {
        QuantileLevel::new(t).unwrap()
    }

    fn random_problem(n: usize, d: usize, seed: u64) -> (CurveSet, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let curves = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0f64..1.0));
        let w = DVector::from_fn(d, |j, _| if j == 0 { 1.0 } else { 0.3 });
        let y = DVector::from_fn(n, |i, _| {
            curves.row(i).transpose().dot(&w) + rng.random_range(-0.2..0.2)
        });
        (CurveSet::new(uniform_grid(d), curves).unwrap(), y)
    }

    #[test]
    fn fold_assignment_partitions_rows() {
        let folds = fold_assignments(11, 3, 9);
        assert_eq!(folds.len(), 3);
        let sizes: Vec<usize> = folds.iter().map(|f| f.len()).collect();
        assert_eq!(sizes, vec![4, 4, 3]);
        let mut all: Vec<usize> = folds.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        // deterministic
        assert_eq!(fold_assignments(11, 3, 9), fold_assignments(11, 3, 9));
    }

    #[test]
    fn cv_zero_for_constant_response() {
        let (curves, _) = random_problem(16, 4, 1);
        let y = DVector::from_element(16, 3.5);
        let s = cv_score(&curves, None, &y, tau(0.5), 1, 4, Method::Fpc, 7).unwrap();
        assert!(s.abs() < 1e-8, "cv score {s}");
    }

    #[test]
    fn cv_rejects_bad_folds() {
        let (curves, y) = random_problem(10, 4, 2);
        assert!(cv_score(&curves, None, &y, tau(0.5), 1, 1, Method::Fpc, 0).is_err());
        assert!(cv_score(&curves, None, &y, tau(0.5), 1, 11, Method::Fpc, 0).is_err());
        // k too large for a fold's training part
        let err = cv_score(&curves, None, &y, tau(0.5), 5, 2, Method::Fpc, 0);
        assert!(matches!(err, Err(ApqrError::Capacity(_))));
    }

    #[test]
    fn bic_matches_hand_arithmetic() {
        // formula check on synthetic ingredients: mean loss 0.5, n = 100, k = 2
        let expected = 0.5f64.ln() + 3.0 * 100.0f64.ln() / 100.0;
        assert!((expected - (-0.554_992_074_980_302_5)).abs() < 1e-15);
        // penalty is linear in k + 1 at fixed loss
        let at = |k: f64| 0.5f64.ln() + (k + 1.0) * 100.0f64.ln() / 100.0;
        let base = at(1.0) - 0.5f64.ln();
        assert!(((at(3.0) - 0.5f64.ln()) - 2.0 * base).abs() < 1e-15);
    }

    #[test]
    fn bic_zero_loss_sentinel() {
        // response exactly linear in the curves: full-rank refit interpolates
        let (curves, _) = random_problem(12, 3, 3);
        let y = DVector::from_fn(12, |i, _| curves.curves()[(i, 0)]);
        let s = bic_score(&curves, None, &y, tau(0.5), 3, Method::Fpc, 0).unwrap();
        // either the sentinel (exact zero loss) or a very negative score
        assert!(s == f64::NEG_INFINITY || s < -10.0, "score {s}");
    }

    #[test]
    fn selection_prefers_smaller_k_on_ties() {
        let (curves, y) = random_problem(14, 4, 4);
        let r = select_k(
            &curves,
            None,
            &y,
            tau(0.5),
            &[2, 1],
            Criterion::Bic,
            5,
            Method::Fpc,
            0,
        )
        .unwrap();
        assert_eq!(r.candidate_ks, vec![1, 2]);
        assert_eq!(r.scores.len(), 2);
        let min = r.scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let chosen_idx = r
            .candidate_ks
            .iter()
            .position(|&k| k == r.chosen_k)
            .unwrap();
        assert_eq!(r.scores[chosen_idx], min);
        // every smaller candidate scores strictly worse than the choice
        for i in 0..chosen_idx {
            assert!(r.scores[i] > min);
        }
    }

    #[test]
    fn in_sample_loss_non_increasing_in_k_for_nested_bases() {
        let (curves, y) = random_problem(60, 6, 5);
        let mut previous = f64::INFINITY;
        for k in 1..=5 {
            let mut opts = FitOptions::new(tau(0.5), k, Method::Fpc);
            opts.seed = 0;
            let model = fit_model(&curves, None, &y, &opts).unwrap();
            let fitted = model.in_sample_fitted.as_ref().unwrap();
            let loss: f64 = y
                .iter()
                .zip(fitted.iter())
                .map(|(yi, fi)| check_value(yi - fi, 0.5))
                .sum();
            assert!(
                loss <= previous + 1e-8,
                "k={k}: loss {loss} vs previous {previous}"
            );
            previous = loss;
        }
        // same property for the least-squares baseline in its own objective
        previous = f64::INFINITY;
        for k in 1..=5 {
            let mut opts = FitOptions::new(tau(0.5), k, Method::Pls);
            opts.seed = 0;
            let model = fit_model(&curves, None, &y, &opts).unwrap();
            let fitted = model.in_sample_fitted.as_ref().unwrap();
            let sse: f64 = y
                .iter()
                .zip(fitted.iter())
                .map(|(yi, fi)| (yi - fi) * (yi - fi))
                .sum();
            assert!(sse <= previous + 1e-8, "k={k}: sse {sse} vs {previous}");
            previous = sse;
        }
    }
}
