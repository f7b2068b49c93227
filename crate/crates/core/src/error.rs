use thiserror::Error;

use crate::fock_optics::Detector;
use crate::sources::Basis;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("polarization state is not normalized (|h|^2 + |v|^2 = {norm_sqr})")]
    InvalidState { norm_sqr: f64 },

    #[error("a coincidence pair needs two distinct detectors, got {0} twice")]
    InvalidPair(Detector),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("records do not form a matching set: {0}")]
    ConfigurationMismatch(String),

    #[error("no {tag} record for settings {settings}")]
    MissingRecord { tag: String, settings: String },

    #[error("no single counts at {0}, the deduction denominator vanishes")]
    DegenerateSingles(Detector),

    #[error(
        "singles-normalized deduction needs X or Y inputs on both arms, got {basis_a}{basis_b}; \
         use the raw Z-basis coincidences instead"
    )]
    UnsupportedBasis { basis_a: Basis, basis_b: Basis },

    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),

    #[error("QBER is undefined: no Bell state measurement events")]
    UndefinedQber,

    #[error("QBER {0} is missing")]
    MissingQber(&'static str),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("bootstrap resampling requires sampled integer counts, got exact rates")]
    RequiresSampledCounts,
}
