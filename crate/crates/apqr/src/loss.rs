//! Quantile check loss, its piecewise-quadratic smoothing, derivatives, and
//! the uniform approximation bound.
//!
//! The check loss `rho_tau(u) = u * (tau - 1{u < 0})` is convex but not
//! differentiable at the origin. The smoother used throughout this crate
//! replaces the kink with a quadratic segment of half-width controlled by a
//! parameter `nu > 0`:
//!
//! ```text
//!           u (tau - 1) - (tau - 1)^2 nu / 2    for u <= (tau - 1) nu
//! H(u)  =   u^2 / (2 nu)                        for (tau - 1) nu < u <= tau nu
//!           u tau - tau^2 nu / 2                for u > tau nu
//! ```
//!
//! `H` is convex, continuously differentiable, dominated by the check loss,
//! and converges to it uniformly as `nu -> 0`; the worst-case gap is
//! `(nu / 2) * max(tau, 1 - tau)^2` (see [`approximation_gap_bound`]).

use crate::error::{ApqrError, Result};

/// A quantile level, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if !tau.is_finite() || tau <= 0.0 || tau >= 1.0 {
            return Err(ApqrError::InvalidParameter(format!(
                "quantile level must lie strictly in (0, 1), got {tau}"
            )));
        }
        Ok(QuantileLevel(tau))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Smoothing parameters: a quantile level and a strictly positive half-width.
///
/// `nu = 0` is never represented here; the exact check loss stands in for
/// that limit.
#[derive(Debug, Clone, Copy)]
pub struct HuberParams {
    tau: QuantileLevel,
    nu: f64,
}

impl HuberParams {
    pub fn new(tau: QuantileLevel, nu: f64) -> Result<Self> {
        if !nu.is_finite() || nu <= 0.0 {
            return Err(ApqrError::InvalidParameter(format!(
                "smoothing half-width must be strictly positive, got {nu}"
            )));
        }
        Ok(HuberParams { tau, nu })
    }

    #[inline]
    pub fn tau(&self) -> f64 {
        self.tau.value()
    }

    #[inline]
    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Breakpoints `((tau - 1) nu, tau nu)` delimiting the quadratic segment.
    #[inline]
    pub fn breakpoints(&self) -> (f64, f64) {
        ((self.tau() - 1.0) * self.nu, self.tau() * self.nu)
    }
}

#[inline]
pub(crate) fn check_value(u: f64, tau: f64) -> f64 {
    if u >= 0.0 {
        tau * u
    } else {
        (tau - 1.0) * u
    }
}

// Shared with `approximation_gap_bound` so the linear-branch offset and the
// bound are the same floating-point value whenever they coincide
// mathematically (the gap EQUALS the bound on the majority branch).
#[inline]
pub(crate) fn linear_branch_offset(nu: f64, slope: f64) -> f64 {
    0.5 * nu * slope * slope
}

#[inline]
pub(crate) fn huber_value(u: f64, tau: f64, nu: f64) -> f64 {
    let lo = (tau - 1.0) * nu;
    let hi = tau * nu;
    if u <= lo {
        u * (tau - 1.0) - linear_branch_offset(nu, tau - 1.0)
    } else if u <= hi {
        u * u / (2.0 * nu)
    } else {
        u * tau - linear_branch_offset(nu, tau)
    }
}

// Exact breakpoints fall on the quadratic branch so results are
// bit-reproducible; continuity makes the value itself branch-independent.
#[inline]
pub(crate) fn huber_slope(u: f64, tau: f64, nu: f64) -> f64 {
    let lo = (tau - 1.0) * nu;
    let hi = tau * nu;
    if u < lo {
        tau - 1.0
    } else if u <= hi {
        u / nu
    } else {
        tau
    }
}

/// Check loss `u * (tau - 1{u < 0})`; nonnegative, zero only at zero.
pub fn check_loss(u: f64, tau: QuantileLevel) -> Result<f64> {
    if !u.is_finite() {
        return Err(ApqrError::NonFinite("check_loss residual"));
    }
    Ok(check_value(u, tau.value()))
}

/// Smoothed check loss; convex and continuously differentiable.
pub fn huber_loss(u: f64, p: &HuberParams) -> Result<f64> {
    if !u.is_finite() {
        return Err(ApqrError::NonFinite("huber_loss residual"));
    }
    Ok(huber_value(u, p.tau(), p.nu()))
}

/// Derivative of [`huber_loss`] in `u`: monotone, bounded in `[tau - 1, tau]`.
pub fn huber_derivative(u: f64, p: &HuberParams) -> Result<f64> {
    if !u.is_finite() {
        return Err(ApqrError::NonFinite("huber_derivative residual"));
    }
    Ok(huber_slope(u, p.tau(), p.nu()))
}

/// Upper bound on `sup_u { rho_tau(u) - H(u) }`, attained on the linear
/// branches: `(nu / 2) * max(tau, 1 - tau)^2`.
///
/// Lets callers pick `nu` so that `n * bound` meets a target objective
/// precision instead of shrinking `nu` blindly.
pub fn approximation_gap_bound(p: &HuberParams) -> f64 {
    let t = p.tau().max(1.0 - p.tau());
    linear_branch_offset(p.nu(), t)
}

/// A strictly decreasing ladder of smoothing half-widths plus the stopping
/// tolerances used by every smoothed fit in the crate.
#[derive(Debug, Clone)]
pub struct SmoothingSchedule {
    nu_values: Vec<f64>,
    /// Base objective-change tolerance; scaled by `1 + |objective|` at use.
    pub outer_tol: f64,
    /// Base gradient tolerance for block/stage solves; scaled likewise.
    pub inner_tol: f64,
    /// Cap on the number of smoothing stages actually run.
    pub max_outer: usize,
    /// Iteration cap for one block update or stage solve.
    pub max_inner: usize,
}

impl SmoothingSchedule {
    pub fn new(
        nu_values: Vec<f64>,
        outer_tol: f64,
        inner_tol: f64,
        max_outer: usize,
        max_inner: usize,
    ) -> Result<Self> {
        if nu_values.is_empty() {
            return Err(ApqrError::InvalidParameter(
                "smoothing schedule needs at least one stage".into(),
            ));
        }
        for w in nu_values.windows(2) {
            if !(w[1] < w[0]) {
                return Err(ApqrError::InvalidParameter(
                    "smoothing half-widths must be strictly decreasing".into(),
                ));
            }
        }
        if nu_values.iter().any(|&nu| !nu.is_finite() || nu <= 0.0) {
            return Err(ApqrError::InvalidParameter(
                "smoothing half-widths must be positive and finite".into(),
            ));
        }
        if !(outer_tol > 0.0) || !(inner_tol > 0.0) {
            return Err(ApqrError::InvalidParameter(
                "schedule tolerances must be positive".into(),
            ));
        }
        if max_outer == 0 || max_inner == 0 {
            return Err(ApqrError::InvalidParameter(
                "schedule iteration caps must be at least 1".into(),
            ));
        }
        Ok(SmoothingSchedule {
            nu_values,
            outer_tol,
            inner_tol,
            max_outer,
            max_inner,
        })
    }

    /// Data-scaled default: starts at the median absolute deviation of the
    /// responses (unit-invariant), shrinks by 0.2 per stage, and carries
    /// enough stages that the runtime precision rule
    /// `n * gap_bound(nu) < outer_tol * (1 + |objective|)` always triggers
    /// before the ladder runs out.
    pub fn default_for(y: &[f64]) -> Self {
        let scale = {
            let m = crate::util::mad(y);
            if m > 0.0 {
                m
            } else {
                1.0
            }
        };
        let mut nu_values = Vec::new();
        let mut nu = scale;
        while nu > scale * 1e-9 && nu_values.len() < 40 {
            nu_values.push(nu);
            nu *= 0.2;
        }
        SmoothingSchedule {
            nu_values,
            outer_tol: 1e-6,
            inner_tol: 1e-8,
            max_outer: 40,
            max_inner: 8,
        }
    }

    pub fn nu_values(&self) -> &[f64] {
        &self.nu_values
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tau(t: f64) -> QuantileLevel {
        QuantileLevel::new(t).unwrap()
    }

    fn params(t: f64, nu: f64) -> HuberParams {
        HuberParams::new(tau(t), nu).unwrap()
    }

    #[test]
    fn quantile_level_rejects_boundary() {
        assert!(QuantileLevel::new(0.0).is_err());
        assert!(QuantileLevel::new(1.0).is_err());
        assert!(QuantileLevel::new(-0.1).is_err());
        assert!(QuantileLevel::new(1.1).is_err());
        assert!(QuantileLevel::new(f64::NAN).is_err());
        assert!(QuantileLevel::new(0.5).is_ok());
    }

    #[test]
    fn huber_params_reject_nonpositive_nu() {
        assert!(HuberParams::new(tau(0.5), 0.0).is_err());
        assert!(HuberParams::new(tau(0.5), -1.0).is_err());
        assert!(HuberParams::new(tau(0.5), f64::INFINITY).is_err());
        let p = params(0.3, 2.0);
        let (lo, hi) = p.breakpoints();
        assert!(lo < hi);
    }

    #[test]
    fn check_loss_examples() {
        assert_eq!(check_loss(0.0, tau(0.3)).unwrap(), 0.0);
        assert_eq!(check_loss(2.0, tau(0.5)).unwrap(), 1.0);
        assert_eq!(check_loss(-4.0, tau(0.25)).unwrap(), 3.0);
        assert!(check_loss(f64::NAN, tau(0.5)).is_err());
        assert!(check_loss(f64::INFINITY, tau(0.5)).is_err());
    }

    #[test]
    fn huber_loss_examples() {
        let p = params(0.5, 1.0);
        assert_eq!(huber_loss(0.0, &p).unwrap(), 0.0);
        // linear branch: 2 * 0.5 - 0.5 * 0.25 * 1
        assert_eq!(huber_loss(2.0, &p).unwrap(), 0.875);
        // quadratic branch: 0.25^2 / 2
        assert_eq!(huber_loss(0.25, &p).unwrap(), 0.03125);
        assert!(huber_loss(f64::NAN, &p).is_err());
    }

    #[test]
    fn huber_branches_agree_at_breakpoint() {
        // both branch formulas give tau^2 nu / 2 at u = tau nu
        for (t, nu) in [(0.3f64, 0.7f64), (0.5, 1.0), (0.9, 0.2)] {
            let quadratic = (t * nu) * (t * nu) / (2.0 * nu);
            let linear = (t * nu) * t - 0.5 * t * t * nu;
            assert!((quadratic - linear).abs() < 1e-15);
            assert!((quadratic - t * t * nu / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn huber_derivative_examples() {
        assert_eq!(huber_derivative(0.0, &params(0.3, 0.7)).unwrap(), 0.0);
        // deep in the upper linear branch: equals tau
        assert_eq!(huber_derivative(10.0, &params(0.5, 0.1)).unwrap(), 0.5);
        // bounded in [tau - 1, tau]
        let p = params(0.25, 0.5);
        for u in [-100.0, -1.0, 0.0, 0.01, 1.0, 100.0] {
            let d = huber_derivative(u, &p).unwrap();
            assert!(d >= 0.25 - 1.0 - 1e-15 && d <= 0.25 + 1e-15);
        }
    }

    #[test]
    fn huber_derivative_matches_finite_differences() {
        let p = params(0.3, 1.0);
        let h = 1e-6;
        for u in [-2.0, -0.5, 0.1, 0.9, 3.0] {
            let fd = (huber_value(u + h, 0.3, 1.0) - huber_value(u - h, 0.3, 1.0)) / (2.0 * h);
            let an = huber_derivative(u, &p).unwrap();
            assert!(
                (fd - an).abs() <= 1e-6 * (1.0 + an.abs()),
                "u={u}: fd={fd}, analytic={an}"
            );
        }
    }

    #[test]
    fn gap_bound_examples() {
        let p = params(0.5, 1.0);
        assert!((approximation_gap_bound(&p) - 0.125).abs() < 1e-15);
        let small = params(0.5, 1e-12);
        assert!(approximation_gap_bound(&small) < 1e-12);
    }

    #[test]
    fn gap_bound_dominates_dense_grid() {
        // brute-force sup of rho - H over a dense grid
        let p = params(0.9, 0.5);
        let bound = approximation_gap_bound(&p);
        let mut sup: f64 = 0.0;
        let mut u = -10.0;
        while u <= 10.0 {
            let gap = check_value(u, 0.9) - huber_value(u, 0.9, 0.5);
            assert!(gap >= 0.0, "check loss must dominate at u={u}");
            sup = sup.max(gap);
            u += 1e-4;
        }
        assert!(sup <= bound + 1e-15, "sup={sup}, bound={bound}");
        // the bound is attained on the linear branches
        assert!(sup > 0.9 * bound);
    }

    #[test]
    fn schedule_validation() {
        assert!(SmoothingSchedule::new(vec![], 1e-6, 1e-8, 10, 10).is_err());
        assert!(SmoothingSchedule::new(vec![1.0, 1.0], 1e-6, 1e-8, 10, 10).is_err());
        assert!(SmoothingSchedule::new(vec![1.0, 2.0], 1e-6, 1e-8, 10, 10).is_err());
        assert!(SmoothingSchedule::new(vec![1.0, 0.2], 1e-6, 1e-8, 0, 10).is_err());
        assert!(SmoothingSchedule::new(vec![1.0, 0.2], 1e-6, 1e-8, 10, 10).is_ok());
    }

    #[test]
    fn default_schedule_is_data_scaled() {
        let y = [1.0, 2.0, 3.0, 10.0];
        let s = SmoothingSchedule::default_for(&y);
        assert_eq!(s.nu_values()[0], crate::util::mad(&y));
        for w in s.nu_values().windows(2) {
            assert!(w[1] < w[0]);
        }
        // degenerate scale falls back to 1.0
        let flat = [2.0, 2.0, 2.0];
        assert_eq!(SmoothingSchedule::default_for(&flat).nu_values()[0], 1.0);
    }

    proptest! {
        // check loss dominates its smoothing, and the gap never exceeds the
        // bound, with no tolerance term. On the linear branches the true gap
        // EQUALS the bound, so the only arrangement that is exact in floating
        // point is h >= rho - bound: there the right-hand side is the very
        // same computation that produced h.
        #[test]
        fn smoothing_gap_within_bound(
            u in -50.0f64..50.0,
            t in 0.01f64..0.99,
            nu in 1e-6f64..10.0,
        ) {
            let rho = check_value(u, t);
            let h = huber_value(u, t, nu);
            prop_assert!(h <= rho);
            let bound = linear_branch_offset(nu, t.max(1.0 - t));
            prop_assert!(h >= rho - bound);
        }

        // convexity of the smoother
        #[test]
        fn huber_is_convex(
            u1 in -20.0f64..20.0,
            u2 in -20.0f64..20.0,
            lambda in 0.0f64..1.0,
            t in 0.05f64..0.95,
            nu in 1e-3f64..5.0,
        ) {
            let mid = lambda * u1 + (1.0 - lambda) * u2;
            let lhs = huber_value(mid, t, nu);
            let rhs = lambda * huber_value(u1, t, nu) + (1.0 - lambda) * huber_value(u2, t, nu);
            prop_assert!(lhs <= rhs + 1e-12);
        }

        // derivative is monotone non-decreasing
        #[test]
        fn huber_slope_monotone(
            u1 in -20.0f64..20.0,
            delta in 0.0f64..40.0,
            t in 0.05f64..0.95,
            nu in 1e-3f64..5.0,
        ) {
            prop_assert!(huber_slope(u1 + delta, t, nu) >= huber_slope(u1, t, nu) - 1e-15);
        }
    }
}
