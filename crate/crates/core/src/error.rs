use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Hilbert-space dimension {0} must be even and at least 2")]
    OddDimension(usize),

    #[error("packet width {xi} is below the grid spacing {spacing}")]
    PacketTooNarrow { xi: f64, spacing: f64 },

    #[error("trajectory stencil crosses a branch cut at kick {kick}")]
    Discontinuity { kick: usize },

    #[error("conjugate point: |dr_t/dp0| = {0:e}")]
    Caustic(f64),

    #[error("quadrature unresolved: phase step {phase_step:.3} rad exceeds pi/4 with {points} points")]
    QuadratureUnresolved { phase_step: f64, points: usize },

    #[error("quadrature needs {needed:.3e} grid points, above the limit of {limit}")]
    QuadratureTooLarge { needed: f64, limit: usize },

    #[error("quadrature unconverged: tail estimate {0:e}")]
    QuadratureUnconverged(f64),

    #[error("degenerate stationary point at p0 = {p0}: |dS''| = {ds2:e}")]
    DegenerateStationaryPoint { p0: f64, ds2: f64 },

    #[error("fit diverged: {0}")]
    FitDiverged(String),

    #[error("fit window is empty")]
    WindowEmpty,
}

impl Error {
    /// True for failures of a numerical guard (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Caustic(_)
                | Error::QuadratureUnresolved { .. }
                | Error::QuadratureTooLarge { .. }
                | Error::QuadratureUnconverged(_)
                | Error::DegenerateStationaryPoint { .. }
                | Error::FitDiverged(_)
                | Error::WindowEmpty
                | Error::Discontinuity { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
