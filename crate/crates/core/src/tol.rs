//! Numerical tolerance constants, kept in one place so that accuracy
//! trade-offs are visible and adjustable together.

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Power series stop once a term drops below this (relative to the sum).
    pub series_term: f64,
    /// Largest |z| for which the Mittag-Leffler series is used.
    pub ml_switch: f64,
    /// The series is also abandoned once its largest term would exceed this,
    /// since cancellation then eats `log10` of it in digits.
    pub ml_series_max_term: f64,
    /// Stable pdf series is preferred once `x^-alpha` falls below this.
    pub stable_series_ratio: f64,
    /// Absolute and relative targets for adaptive quadrature in special functions.
    pub quad_abs: f64,
    pub quad_rel: f64,
    /// Target for aging convolution quadrature, checked by refinement.
    pub aging_quad: f64,
    /// Stable quantile used to size subordinator horizons.
    pub horizon_tail: f64,
    /// Mass lost through a truncated x-grid before an error is raised.
    pub mass_leak: f64,
    /// Negative undershoot tolerated in grid densities.
    pub negative_density: f64,
}

pub const TOL: Tolerances = Tolerances {
    series_term: 1e-17,
    ml_switch: 5.0,
    ml_series_max_term: 1e4,
    stable_series_ratio: 0.5,
    quad_abs: 1e-300,
    quad_rel: 1e-12,
    aging_quad: 1e-7,
    horizon_tail: 1e-6,
    mass_leak: 1e-3,
    negative_density: 1e-9,
};
