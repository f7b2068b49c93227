//! Input ensembles for the two arms of the analyzer.
//!
//! Weak coherent pulses are phase randomized, so each arm is a diagonal mixture of
//! Fock states with Poisson weights and no coherence between photon-number sectors
//! or between the arms. Every photon of one pulse carries the arm's polarization.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock_optics::PolarizationState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Basis {
    Z,
    X,
    Y,
}

impl Basis {
    pub const ALL: [Basis; 3] = [Basis::Z, Basis::X, Basis::Y];

    pub fn is_equatorial(self) -> bool {
        self != Basis::Z
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Basis::Z => "Z",
            Basis::X => "X",
            Basis::Y => "Y",
        };
        f.write_str(s)
    }
}

impl FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "Z" | "z" => Ok(Basis::Z),
            "X" | "x" => Ok(Basis::X),
            "Y" | "y" => Ok(Basis::Y),
            other => Err(Error::InvalidParameter(format!("unknown basis {other:?}"))),
        }
    }
}

/// A basis choice together with the encoded bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BasisSetting {
    pub basis: Basis,
    pub bit: bool,
}

impl BasisSetting {
    pub fn new(basis: Basis, bit: u8) -> Result<Self> {
        match bit {
            0 | 1 => Ok(BasisSetting { basis, bit: bit == 1 }),
            _ => Err(Error::InvalidParameter(format!("bit must be 0 or 1, got {bit}"))),
        }
    }

    pub fn bit_value(self) -> u8 {
        self.bit as u8
    }

    /// Both settings of one basis.
    pub fn both_bits(basis: Basis) -> [BasisSetting; 2] {
        [BasisSetting { basis, bit: false }, BasisSetting { basis, bit: true }]
    }
}

impl fmt::Display for BasisSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.basis, self.bit_value())
    }
}

impl FromStr for BasisSetting {
    type Err = Error;

    /// Parses labels such as `X0` or `Z1`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut chars = s.chars();
        let (Some(b), Some(bit), None) = (chars.next(), chars.next(), chars.next()) else {
            return Err(Error::InvalidParameter(format!("malformed basis setting {s:?}")));
        };
        let basis: Basis = b.to_string().parse()?;
        match bit {
            '0' => BasisSetting::new(basis, 0),
            '1' => BasisSetting::new(basis, 1),
            _ => Err(Error::InvalidParameter(format!("malformed basis setting {s:?}"))),
        }
    }
}

/// Z0 = H, Z1 = V, X = (H +- V)/sqrt(2), Y = (H +- iV)/sqrt(2).
pub fn encode(setting: BasisSetting) -> PolarizationState {
    use std::f64::consts::{FRAC_PI_2, PI};
    match (setting.basis, setting.bit) {
        (Basis::Z, false) => PolarizationState::H,
        (Basis::Z, true) => PolarizationState::V,
        (Basis::X, false) => PolarizationState::equatorial(0.0),
        (Basis::X, true) => PolarizationState::equatorial(PI),
        (Basis::Y, false) => PolarizationState::equatorial(FRAC_PI_2),
        (Basis::Y, true) => PolarizationState::equatorial(-FRAC_PI_2),
    }
}

/// Rotates the reference frame about the Z axis of the Bloch sphere by `beta`:
/// `v -> e^{i beta} v`, so that X maps to `cos(beta) X + sin(beta) Y`.
pub fn rotate_frame(pol: &PolarizationState, beta: f64) -> PolarizationState {
    PolarizationState::from_parts_unchecked(pol.amp_h(), pol.amp_v() * Complex64::from_polar(1.0, beta))
}

/// Real rotation of the Jones vector by `epsilon`.
pub fn misalign(pol: &PolarizationState, epsilon: f64) -> PolarizationState {
    if epsilon == 0.0 {
        return *pol;
    }
    let (s, c) = epsilon.sin_cos();
    let (h, v) = (pol.amp_h(), pol.amp_v());
    PolarizationState::from_parts_unchecked(h * c - v * s, h * s + v * c)
}

/// Photon-number weights `weights[n]` for `n <= truncation`, plus the mass beyond.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonNumberMixture {
    pub weights: Vec<f64>,
    pub mean: f64,
    pub truncated_mass: f64,
}

impl PhotonNumberMixture {
    pub fn vacuum() -> Self {
        PhotonNumberMixture { weights: vec![1.0], mean: 0.0, truncated_mass: 0.0 }
    }

    pub fn weight(&self, n: usize) -> f64 {
        self.weights.get(n).copied().unwrap_or(0.0)
    }

    pub fn max_photons(&self) -> usize {
        self.weights.len().saturating_sub(1)
    }
}

/// Poisson mixture of a phase-randomized coherent state with mean `mu`.
pub fn wcp_mixture(mu: f64, truncation: u32) -> Result<PhotonNumberMixture> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::InvalidParameter(format!("mean photon number must be >= 0, got {mu}")));
    }
    if truncation < 2 {
        return Err(Error::InvalidParameter(format!("truncation must be >= 2, got {truncation}")));
    }
    let mut weights = Vec::with_capacity(truncation as usize + 1);
    let mut w = (-mu).exp();
    for n in 0..=truncation {
        if n > 0 {
            w *= mu / f64::from(n);
        }
        weights.push(w);
    }
    // sum the tail directly so the residual is accurate at small mu
    let mut tail = 0.0;
    let mut term = w;
    let mut k = truncation + 1;
    loop {
        term *= mu / f64::from(k);
        tail += term;
        if term <= tail * 1e-17 || term == 0.0 {
            break;
        }
        k += 1;
    }
    Ok(PhotonNumberMixture { weights, mean: mu, truncated_mass: tail })
}

pub fn apply_loss_db(mu: f64, loss_db: f64) -> f64 {
    mu * db_to_transmittance(loss_db)
}

pub fn db_to_transmittance(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

/// Binomial loss of an `n`-photon Fock state with transmittance `t`.
pub fn fock_loss(n: u32, transmittance: f64) -> Result<PhotonNumberMixture> {
    if !(0.0..=1.0).contains(&transmittance) {
        return Err(Error::InvalidParameter(format!("transmittance {transmittance} outside [0, 1]")));
    }
    let t = transmittance;
    let mut weights = Vec::with_capacity(n as usize + 1);
    let mut binom = 1.0;
    for k in 0..=n {
        if k > 0 {
            binom *= f64::from(n - k + 1) / f64::from(k);
        }
        weights.push(binom * t.powi(k as i32) * (1.0 - t).powi((n - k) as i32));
    }
    Ok(PhotonNumberMixture { weights, mean: f64::from(n) * t, truncated_mass: 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SourceKind {
    Wcp,
    SinglePhoton,
    Blocked,
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceKind::Wcp => "wcp",
            SourceKind::SinglePhoton => "single_photon",
            SourceKind::Blocked => "blocked",
        })
    }
}

impl FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "wcp" => Ok(SourceKind::Wcp),
            "single_photon" => Ok(SourceKind::SinglePhoton),
            "blocked" => Ok(SourceKind::Blocked),
            other => Err(Error::InvalidParameter(format!("unknown source kind {other:?}"))),
        }
    }
}

/// One transmitter arm. The polarization is derived from `setting`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmConfig {
    pub source: SourceKind,
    /// Mean photon number at the transmitter output, before channel loss (WCP only).
    pub mean_photon: f64,
    pub setting: BasisSetting,
    pub misalignment: f64,
}

impl ArmConfig {
    pub fn wcp(mean_photon: f64, setting: BasisSetting) -> Self {
        ArmConfig { source: SourceKind::Wcp, mean_photon, setting, misalignment: 0.0 }
    }

    pub fn single_photon(setting: BasisSetting) -> Self {
        ArmConfig { source: SourceKind::SinglePhoton, mean_photon: 1.0, setting, misalignment: 0.0 }
    }

    pub fn blocked(&self) -> Self {
        ArmConfig { source: SourceKind::Blocked, ..*self }
    }

    /// Encoded polarization after an optional frame rotation and misalignment.
    pub fn polarization(&self, beta: f64) -> PolarizationState {
        let pol = rotate_frame(&encode(self.setting), beta);
        misalign(&pol, self.misalignment)
    }

    /// Photon-number mixture reaching the analyzer after `loss_db` of channel loss.
    pub fn mixture(&self, loss_db: f64, truncation: u32) -> Result<PhotonNumberMixture> {
        if !(loss_db >= 0.0) {
            return Err(Error::InvalidParameter(format!("loss must be >= 0 dB, got {loss_db}")));
        }
        match self.source {
            SourceKind::Blocked => Ok(PhotonNumberMixture::vacuum()),
            SourceKind::Wcp => wcp_mixture(apply_loss_db(self.mean_photon, loss_db), truncation),
            SourceKind::SinglePhoton => fock_loss(1, db_to_transmittance(loss_db)),
        }
    }

    /// Mean photon number at the analyzer.
    pub fn effective_mean(&self, loss_db: f64) -> f64 {
        match self.source {
            SourceKind::Blocked => 0.0,
            SourceKind::Wcp => apply_loss_db(self.mean_photon, loss_db),
            SourceKind::SinglePhoton => db_to_transmittance(loss_db),
        }
    }

    /// Mean photon number at the transmitter.
    pub fn emitted_mean(&self) -> f64 {
        match self.source {
            SourceKind::Blocked => 0.0,
            SourceKind::Wcp => self.mean_photon,
            SourceKind::SinglePhoton => 1.0,
        }
    }
}
