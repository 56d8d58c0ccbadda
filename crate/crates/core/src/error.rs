use thiserror::Error;

/// Every failure the library reports. Numeric routines never panic on bad
/// input; they return one of these.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{name} = {value} is outside {expected}")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("time {t} lies beyond the simulated horizon D(u_max) = {horizon}; extend u_max")]
    Horizon { t: f64, horizon: f64 },

    #[error("unsupported family for this operation: {0}")]
    UnsupportedFamily(String),

    #[error("the Borel set contains the origin; aging laws require 0 outside B")]
    SetContainsZero,

    #[error("invalid Borel set: {0}")]
    InvalidSet(String),

    #[error("sample holds {0} exact zeros; remove the atom before testing against a continuous cdf")]
    AtomContamination(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("quadrature failed to converge: error estimate {error:e} after {evaluations} evaluations")]
    Quadrature { error: f64, evaluations: usize },

    #[error("solver instability at t = {t}: norm grew {growth:.1}x; retry with dt <= {suggested_dt:e}")]
    Unstable {
        t: f64,
        growth: f64,
        suggested_dt: f64,
    },

    #[error("mass leaked through the truncated boundary: {leak:e} > {limit:e}; widen the x-grid")]
    MassLeak { leak: f64, limit: f64 },

    #[error("asymptotic constant is zero: P(Y_s in B) vanishes on (0, t]")]
    VacuousAsymptotic,

    #[error("config: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_range(
    name: &'static str,
    value: f64,
    ok: bool,
    expected: &'static str,
) -> Result<()> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value,
            expected,
        })
    }
}
