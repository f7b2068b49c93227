//! Few-photon propagation through the polarization Bell state analyzer.
//!
//! The analyzer is a 50:50 beamsplitter (BS) followed by one polarizing
//! beamsplitter (PBS) in each output port. Phase convention:
//!
//! ```text
//! a -> (c + d)/sqrt(2)        b -> (c - d)/sqrt(2)
//! PBS transmits H, reflects V
//! D1 = c_H   D2 = c_V   D3 = d_H   D4 = d_V
//! ```
//!
//! With this convention `|psi+>` is heralded by D12 or D34 and `|psi->` by D14 or
//! D23. The correlation table in [`crate::qkd_analysis`] is derived from it.
//!
//! An input of `m` photons in arm `a` and `n` photons in arm `b` is the state
//! `(sum_k u_k A_k)^m (sum_k v_k A_k)^n |0> / sqrt(m! n!)`, where `A_k` creates a
//! photon at detector mode `k`. The two polynomials are expanded directly by
//! repeated multiplication with the linear forms.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tolerance on `|h|^2 + |v|^2 = 1`.
pub const NORM_TOLERANCE: f64 = 1e-12;

/// A pure polarization state as a normalized Jones vector `(h, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationState {
    amp_h: Complex64,
    amp_v: Complex64,
}

impl PolarizationState {
    pub const H: PolarizationState = PolarizationState {
        amp_h: Complex64::new(1.0, 0.0),
        amp_v: Complex64::new(0.0, 0.0),
    };
    pub const V: PolarizationState = PolarizationState {
        amp_h: Complex64::new(0.0, 0.0),
        amp_v: Complex64::new(1.0, 0.0),
    };

    pub fn new(amp_h: Complex64, amp_v: Complex64) -> Result<Self> {
        let norm_sqr = amp_h.norm_sqr() + amp_v.norm_sqr();
        if !norm_sqr.is_finite() || (norm_sqr - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidState { norm_sqr });
        }
        Ok(PolarizationState { amp_h, amp_v })
    }

    /// Equatorial state `(|H> + e^{i theta} |V>)/sqrt(2)`.
    pub fn equatorial(theta: f64) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        PolarizationState {
            amp_h: Complex64::new(s, 0.0),
            amp_v: Complex64::from_polar(s, theta),
        }
    }

    pub(crate) fn from_parts_unchecked(amp_h: Complex64, amp_v: Complex64) -> Self {
        PolarizationState { amp_h, amp_v }
    }

    pub fn amp_h(&self) -> Complex64 {
        self.amp_h
    }

    pub fn amp_v(&self) -> Complex64 {
        self.amp_v
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amp_h.norm_sqr() + self.amp_v.norm_sqr()
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.amp_h, self.amp_v).map(|_| ())
    }

    /// `|<self|other>|^2`.
    pub fn overlap_sqr(&self, other: &PolarizationState) -> f64 {
        (self.amp_h.conj() * other.amp_h + self.amp_v.conj() * other.amp_v).norm_sqr()
    }
}

/// One of the four threshold detectors behind the analyzer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Detector {
    D1,
    D2,
    D3,
    D4,
}

impl Detector {
    pub const ALL: [Detector; 4] = [Detector::D1, Detector::D2, Detector::D3, Detector::D4];

    /// Zero-based mode index.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Detector from its one-based label (1..=4).
    pub fn from_label(label: u8) -> Option<Detector> {
        match label {
            1 => Some(Detector::D1),
            2 => Some(Detector::D2),
            3 => Some(Detector::D3),
            4 => Some(Detector::D4),
            _ => None,
        }
    }

    pub fn label(self) -> u8 {
        self as u8 + 1
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D{}", self.label())
    }
}

/// Unordered pair of distinct detectors, stored with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DetectorPair {
    lo: Detector,
    hi: Detector,
}

impl DetectorPair {
    pub const D12: DetectorPair = DetectorPair { lo: Detector::D1, hi: Detector::D2 };
    pub const D13: DetectorPair = DetectorPair { lo: Detector::D1, hi: Detector::D3 };
    pub const D14: DetectorPair = DetectorPair { lo: Detector::D1, hi: Detector::D4 };
    pub const D23: DetectorPair = DetectorPair { lo: Detector::D2, hi: Detector::D3 };
    pub const D24: DetectorPair = DetectorPair { lo: Detector::D2, hi: Detector::D4 };
    pub const D34: DetectorPair = DetectorPair { lo: Detector::D3, hi: Detector::D4 };

    /// All six pairs, in the order used by [`PairValues`].
    pub const ALL: [DetectorPair; 6] = [
        Self::D12,
        Self::D13,
        Self::D14,
        Self::D23,
        Self::D24,
        Self::D34,
    ];

    /// The four pairs that herald a Bell state.
    pub const BSM: [DetectorPair; 4] = [Self::D12, Self::D34, Self::D14, Self::D23];

    pub fn new(i: Detector, j: Detector) -> Result<Self> {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => Ok(DetectorPair { lo: i, hi: j }),
            std::cmp::Ordering::Greater => Ok(DetectorPair { lo: j, hi: i }),
            std::cmp::Ordering::Equal => Err(Error::InvalidPair(i)),
        }
    }

    pub fn first(self) -> Detector {
        self.lo
    }

    pub fn second(self) -> Detector {
        self.hi
    }

    /// Position in [`DetectorPair::ALL`].
    pub fn index(self) -> usize {
        match (self.lo, self.hi) {
            (Detector::D1, Detector::D2) => 0,
            (Detector::D1, Detector::D3) => 1,
            (Detector::D1, Detector::D4) => 2,
            (Detector::D2, Detector::D3) => 3,
            (Detector::D2, Detector::D4) => 4,
            _ => 5,
        }
    }

    pub fn is_bsm(self) -> bool {
        !matches!(self.index(), 1 | 4)
    }

    /// Short lowercase key such as `d12`.
    pub fn key(self) -> String {
        format!("d{}{}", self.lo.label(), self.hi.label())
    }
}

impl fmt::Display for DetectorPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D{}{}", self.lo.label(), self.hi.label())
    }
}

/// One value per unordered detector pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairValues(pub [f64; 6]);

impl PairValues {
    pub fn get(&self, pair: DetectorPair) -> f64 {
        self.0[pair.index()]
    }

    pub fn set(&mut self, pair: DetectorPair, value: f64) {
        self.0[pair.index()] = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (DetectorPair, f64)> + '_ {
        DetectorPair::ALL.iter().map(move |&p| (p, self.get(p)))
    }

    pub fn map(&self, f: impl Fn(DetectorPair, f64) -> f64) -> PairValues {
        let mut out = PairValues::default();
        for (p, v) in self.iter() {
            out.set(p, f(p, v));
        }
        out
    }

    pub fn bsm_total(&self) -> f64 {
        DetectorPair::BSM.iter().map(|&p| self.get(p)).sum()
    }
}

/// One value per detector.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetectorValues(pub [f64; 4]);

impl DetectorValues {
    pub fn get(&self, d: Detector) -> f64 {
        self.0[d.index()]
    }

    pub fn set(&mut self, d: Detector, value: f64) {
        self.0[d.index()] = value;
    }
}

/// Transfer amplitudes from the two input arms to the detector modes D1..D4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferVectors {
    pub u: [Complex64; 4],
    pub v: [Complex64; 4],
}

impl TransferVectors {
    /// Largest deviation from the unitary-row conditions.
    pub fn unitarity_defect(&self) -> f64 {
        let nu: f64 = self.u.iter().map(|z| z.norm_sqr()).sum();
        let nv: f64 = self.v.iter().map(|z| z.norm_sqr()).sum();
        let ov: Complex64 = self.u.iter().zip(&self.v).map(|(a, b)| a * b.conj()).sum();
        (nu - 1.0).abs().max((nv - 1.0).abs()).max(ov.norm())
    }
}

pub fn bsa_transfer(pol_a: &PolarizationState, pol_b: &PolarizationState) -> Result<TransferVectors> {
    pol_a.validate()?;
    pol_b.validate()?;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (ha, va) = (pol_a.amp_h * s, pol_a.amp_v * s);
    let (hb, vb) = (pol_b.amp_h * s, pol_b.amp_v * s);
    Ok(TransferVectors {
        u: [ha, va, ha, va],
        v: [hb, vb, -hb, -vb],
    })
}

/// Photon numbers at (D1, D2, D3, D4).
pub type Occupation = [u8; 4];

/// Probability of each photon-number tuple at the four detector modes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OccupationDistribution {
    entries: BTreeMap<Occupation, f64>,
}

impl OccupationDistribution {
    pub fn from_entries(entries: impl IntoIterator<Item = (Occupation, f64)>) -> Self {
        let mut out = OccupationDistribution::default();
        for (occ, p) in entries {
            *out.entries.entry(occ).or_insert(0.0) += p;
        }
        out
    }

    pub fn get(&self, occ: &Occupation) -> f64 {
        self.entries.get(occ).copied().unwrap_or(0.0)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Occupation, &f64)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }
}

type Polynomial = HashMap<Occupation, Complex64>;

fn multiply_linear(poly: &Polynomial, form: &[Complex64; 4]) -> Polynomial {
    let mut out = Polynomial::with_capacity(poly.len() * 4);
    for (occ, &c) in poly {
        for (k, &coef) in form.iter().enumerate() {
            if coef == Complex64::new(0.0, 0.0) {
                continue;
            }
            let mut next = *occ;
            next[k] += 1;
            *out.entry(next).or_insert(Complex64::new(0.0, 0.0)) += c * coef;
        }
    }
    out
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Output occupation distribution for `m` photons of polarization `pol_a` in arm a
/// and `n` photons of polarization `pol_b` in arm b.
pub fn output_distribution(
    m: u32,
    pol_a: &PolarizationState,
    n: u32,
    pol_b: &PolarizationState,
) -> Result<OccupationDistribution> {
    if m + n > u8::MAX as u32 {
        return Err(Error::InvalidParameter(format!("{} photons exceed the supported range", m + n)));
    }
    let t = bsa_transfer(pol_a, pol_b)?;
    let mut poly = Polynomial::new();
    poly.insert([0; 4], Complex64::new(1.0, 0.0));
    for _ in 0..m {
        poly = multiply_linear(&poly, &t.u);
    }
    for _ in 0..n {
        poly = multiply_linear(&poly, &t.v);
    }
    let input_norm = factorial(m) * factorial(n);
    let entries = poly.into_iter().filter_map(|(occ, c)| {
        let occ_norm: f64 = occ.iter().map(|&k| factorial(k as u32)).product();
        let p = c.norm_sqr() * occ_norm / input_norm;
        (p > 0.0).then_some((occ, p))
    });
    Ok(OccupationDistribution::from_entries(entries))
}

/// How a pair coincidence is read off the click pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum CoincidenceRule {
    /// Both detectors clicked, whatever the other two did.
    #[default]
    Inclusive,
    /// Exactly these two detectors clicked.
    Exclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    kappa: [f64; 4],
    truncation_total_photons: u32,
    coincidence_rule: CoincidenceRule,
}

impl Default for DetectorModel {
    fn default() -> Self {
        DetectorModel {
            kappa: [1.0; 4],
            truncation_total_photons: 4,
            coincidence_rule: CoincidenceRule::Inclusive,
        }
    }
}

impl DetectorModel {
    pub fn new(kappa: [f64; 4], truncation_total_photons: u32, coincidence_rule: CoincidenceRule) -> Result<Self> {
        if let Some(k) = kappa.iter().find(|k| !(0.0..=1.0).contains(*k)) {
            return Err(Error::InvalidParameter(format!("detector efficiency {k} outside [0, 1]")));
        }
        if truncation_total_photons < 2 {
            return Err(Error::InvalidParameter(format!(
                "truncation of {truncation_total_photons} photons cannot hold a two-photon sector"
            )));
        }
        Ok(DetectorModel { kappa, truncation_total_photons, coincidence_rule })
    }

    /// Unit efficiencies, default truncation and inclusive coincidences.
    pub fn ideal() -> Self {
        Self::default()
    }

    pub fn kappa(&self) -> [f64; 4] {
        self.kappa
    }

    pub fn truncation(&self) -> u32 {
        self.truncation_total_photons
    }

    pub fn rule(&self) -> CoincidenceRule {
        self.coincidence_rule
    }

    pub fn with_kappa(&self, kappa: [f64; 4]) -> Result<Self> {
        Self::new(kappa, self.truncation_total_photons, self.coincidence_rule)
    }

    pub fn with_truncation(&self, truncation: u32) -> Result<Self> {
        Self::new(self.kappa, truncation, self.coincidence_rule)
    }

    pub fn with_rule(&self, rule: CoincidenceRule) -> Self {
        DetectorModel { coincidence_rule: rule, ..self.clone() }
    }
}

/// Set of detectors that clicked, as a bit mask over D1..D4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ClickPattern(u8);

impl ClickPattern {
    pub const EMPTY: ClickPattern = ClickPattern(0);

    pub fn from_detectors(detectors: &[Detector]) -> Self {
        ClickPattern(detectors.iter().fold(0, |acc, d| acc | (1 << d.index())))
    }

    pub fn from_mask(mask: u8) -> Self {
        ClickPattern(mask & 0x0f)
    }

    pub fn mask(self) -> u8 {
        self.0
    }

    pub fn contains(self, d: Detector) -> bool {
        self.0 & (1 << d.index()) != 0
    }

    pub fn detectors(self) -> impl Iterator<Item = Detector> {
        Detector::ALL.into_iter().filter(move |&d| self.contains(d))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

/// Probability of each of the 16 click patterns.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClickProbabilities([f64; 16]);

impl ClickProbabilities {
    pub fn from_pairs(pairs: &[(ClickPattern, f64)]) -> Self {
        let mut out = ClickProbabilities::default();
        for &(pat, p) in pairs {
            out.0[pat.mask() as usize] += p;
        }
        out
    }

    pub fn get(&self, pattern: ClickPattern) -> f64 {
        self.0[pattern.mask() as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClickPattern, f64)> + '_ {
        self.0.iter().enumerate().map(|(m, &p)| (ClickPattern::from_mask(m as u8), p))
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Accumulates `weight * other` into `self`.
    pub fn add_scaled(&mut self, other: &ClickProbabilities, weight: f64) {
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += weight * b;
        }
    }

    /// Marginal probability that `d` clicks.
    pub fn single(&self, d: Detector) -> f64 {
        self.iter().filter(|(pat, _)| pat.contains(d)).map(|(_, p)| p).sum()
    }
}

pub fn click_pattern_probs(dist: &OccupationDistribution, det: &DetectorModel) -> ClickProbabilities {
    let mut out = ClickProbabilities::default();
    for (occ, &p) in dist.entries() {
        let mut miss = [1.0; 4];
        for k in 0..4 {
            miss[k] = (1.0 - det.kappa[k]).powi(occ[k] as i32);
        }
        for mask in 0u8..16 {
            let prob: f64 = (0..4)
                .map(|k| if mask & (1 << k) != 0 { 1.0 - miss[k] } else { miss[k] })
                .product();
            out.0[mask as usize] += p * prob;
        }
    }
    out
}

pub fn coincidence_prob(patterns: &ClickProbabilities, i: Detector, j: Detector, rule: CoincidenceRule) -> Result<f64> {
    let pair = DetectorPair::new(i, j)?;
    Ok(pair_coincidence(patterns, pair, rule))
}

pub(crate) fn pair_coincidence(patterns: &ClickProbabilities, pair: DetectorPair, rule: CoincidenceRule) -> f64 {
    let target = ClickPattern::from_detectors(&[pair.first(), pair.second()]);
    patterns
        .iter()
        .filter(|(pat, _)| match rule {
            CoincidenceRule::Inclusive => pat.mask() & target.mask() == target.mask(),
            CoincidenceRule::Exclusive => *pat == target,
        })
        .map(|(_, p)| p)
        .sum()
}

/// `P(D_ij | m_P, n_Q)` with unit detector efficiencies.
pub fn conditional_coincidence(
    m: u32,
    pol_a: &PolarizationState,
    n: u32,
    pol_b: &PolarizationState,
    det: &DetectorModel,
    i: Detector,
    j: Detector,
) -> Result<f64> {
    let pair = DetectorPair::new(i, j)?;
    let dist = output_distribution(m, pol_a, n, pol_b)?;
    let perfect = DetectorModel { kappa: [1.0; 4], ..det.clone() };
    let clicks = click_pattern_probs(&dist, &perfect);
    Ok(pair_coincidence(&clicks, pair, det.coincidence_rule))
}
