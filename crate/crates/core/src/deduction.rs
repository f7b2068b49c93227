//! Recovery of single-photon coincidence probabilities from WCP count records.
//!
//! The two-arm coincidence rate contains the `|1,1>` term plus the two-photon
//! terms from either arm alone. Subtracting the rates measured with one arm
//! blocked leaves
//!
//! ```text
//! N_both(ij) - N_a(ij) - N_b(ij) ~ k_i k_j mu^2 e^{-2 mu} P(D_ij | 1,1)
//! ```
//!
//! which can be divided either by the calibrated prefactor
//! ([`deduce_calibrated`]) or, for equatorial inputs where each single photon
//! reaches every detector with probability 1/4, by `N(D_i) N(D_j) / 4` built from
//! the one-arm singles ([`deduce_uncalibrated`]). The latter needs no knowledge of
//! `k_i` or `mu`, but carries an overall factor of 16 at leading order; only the
//! normalized distribution over the four BSM pairs is meaningful.

use crate::error::{Error, Result};
use crate::experiment::{ConfigTag, CountRecord};
use crate::fock_optics::{Detector, DetectorPair, DetectorValues, PairValues};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeductionMethod {
    Uncalibrated,
    Calibrated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeducedBsm {
    /// Deduced value for every pair, before normalization.
    pub raw: PairValues,
    /// `raw` restricted to the four BSM pairs and rescaled to unit sum; `None` when
    /// the BSM pairs carry no mass. Non-BSM entries are zero.
    pub normalized: Option<PairValues>,
    pub method: DeductionMethod,
    /// Pairs whose subtracted numerator came out negative and was clamped to zero.
    pub clamped: Vec<DetectorPair>,
}

/// Per-detector sum of the singles from the two one-arm records.
pub fn singles_sum(a_only: &CountRecord, b_only: &CountRecord) -> Result<DetectorValues> {
    if a_only.settings() != b_only.settings() {
        return Err(Error::ConfigurationMismatch(format!(
            "a_only record has settings {}{} but b_only has {}{}",
            a_only.setting_a, a_only.setting_b, b_only.setting_a, b_only.setting_b
        )));
    }
    let (_, sa) = a_only.rates();
    let (_, sb) = b_only.rates();
    let mut out = DetectorValues::default();
    for d in Detector::ALL {
        out.set(d, sa.get(d) + sb.get(d));
    }
    Ok(out)
}

fn check_triple(both: &CountRecord, a_only: &CountRecord, b_only: &CountRecord) -> Result<()> {
    for (rec, tag) in [(both, ConfigTag::Both), (a_only, ConfigTag::AOnly), (b_only, ConfigTag::BOnly)] {
        if rec.config_tag != tag {
            return Err(Error::ConfigurationMismatch(format!(
                "expected a {tag} record, got {}",
                rec.config_tag
            )));
        }
        if rec.settings() != both.settings() {
            return Err(Error::ConfigurationMismatch(format!(
                "{} record has settings {}{}, {} record has {}{}",
                rec.config_tag, rec.setting_a, rec.setting_b, both.config_tag, both.setting_a, both.setting_b
            )));
        }
    }
    Ok(())
}

/// Two-arm coincidences minus both one-arm coincidences, clamped at zero.
fn subtracted(both: &CountRecord, a_only: &CountRecord, b_only: &CountRecord) -> (PairValues, Vec<DetectorPair>) {
    let (cb, _) = both.rates();
    let (ca, _) = a_only.rates();
    let (cbo, _) = b_only.rates();
    let mut out = PairValues::default();
    let mut clamped = Vec::new();
    for pair in DetectorPair::ALL {
        let num = cb.get(pair) - ca.get(pair) - cbo.get(pair);
        if num < 0.0 {
            clamped.push(pair);
        }
        out.set(pair, num.max(0.0));
    }
    (out, clamped)
}

/// Restricts to the BSM pairs and rescales to unit sum.
pub fn normalize_bsm(raw: &PairValues) -> Option<PairValues> {
    let total = raw.bsm_total();
    if !(total > 0.0) {
        return None;
    }
    Some(raw.map(|p, v| if p.is_bsm() { v / total } else { 0.0 }))
}

pub fn deduce_uncalibrated(both: &CountRecord, a_only: &CountRecord, b_only: &CountRecord) -> Result<DeducedBsm> {
    check_triple(both, a_only, b_only)?;
    if !(both.setting_a.basis.is_equatorial() && both.setting_b.basis.is_equatorial()) {
        return Err(Error::UnsupportedBasis { basis_a: both.setting_a.basis, basis_b: both.setting_b.basis });
    }
    let singles = singles_sum(a_only, b_only)?;
    if let Some(d) = Detector::ALL.into_iter().find(|&d| !(singles.get(d) > 0.0)) {
        return Err(Error::DegenerateSingles(d));
    }
    let (numerator, clamped) = subtracted(both, a_only, b_only);
    let raw = numerator.map(|p, v| v / (0.25 * singles.get(p.first()) * singles.get(p.second())));
    Ok(DeducedBsm { normalized: normalize_bsm(&raw), raw, method: DeductionMethod::Uncalibrated, clamped })
}

/// Divides the subtracted coincidences by `k_i k_j mu^2 e^{-2 mu}`. Works in any basis.
pub fn deduce_calibrated(
    both: &CountRecord,
    a_only: &CountRecord,
    b_only: &CountRecord,
    kappa: [f64; 4],
    mu: f64,
) -> Result<DeducedBsm> {
    check_triple(both, a_only, b_only)?;
    if let Some(k) = kappa.iter().find(|k| !(**k > 0.0 && **k <= 1.0)) {
        return Err(Error::InvalidCalibration(format!("detector efficiency {k} must lie in (0, 1]")));
    }
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidCalibration(format!("mean photon number {mu} must be positive")));
    }
    let (numerator, clamped) = subtracted(both, a_only, b_only);
    let prefactor = mu * mu * (-2.0 * mu).exp();
    let raw = numerator.map(|p, v| v / (kappa[p.first().index()] * kappa[p.second().index()] * prefactor));
    Ok(DeducedBsm { normalized: normalize_bsm(&raw), raw, method: DeductionMethod::Calibrated, clamped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{run_protocol_set, ExperimentConfig, Tally};

    fn triple(cfg: &ExperimentConfig, a: &str, b: &str) -> Vec<CountRecord> {
        run_protocol_set(cfg, &[(a.parse().unwrap(), b.parse().unwrap())]).unwrap()
    }

    #[test]
    fn equatorial_singles_are_half_mu() {
        let mu: f64 = 0.008;
        let r = triple(&ExperimentConfig::wcp(mu, 0.0), "X0", "Y1");
        let s = singles_sum(&r[1], &r[2]).unwrap();
        for d in Detector::ALL {
            assert!((s.get(d) / (mu * (-mu).exp() * 0.5) - 1.0).abs() < 1e-2);
        }
    }

    #[test]
    fn z_basis_singles_follow_polarization() {
        let r = triple(&ExperimentConfig::wcp(0.01, 0.0), "Z0", "Z0");
        let s = singles_sum(&r[1], &r[2]).unwrap();
        assert!(s.get(Detector::D1) > 0.0);
        assert_eq!(s.get(Detector::D1), s.get(Detector::D3));
        assert_eq!(s.get(Detector::D2), 0.0);
        assert_eq!(s.get(Detector::D4), 0.0);
    }

    #[test]
    fn blocked_records_have_no_singles() {
        let cfg = ExperimentConfig::wcp(0.01, 0.0);
        let mut blocked = cfg.clone();
        blocked.arm_a = blocked.arm_a.blocked();
        blocked.arm_b = blocked.arm_b.blocked();
        let r = triple(&blocked, "X0", "X0");
        let s = singles_sum(&r[1], &r[2]).unwrap();
        assert_eq!(s, DetectorValues::default());
    }

    #[test]
    fn singles_sum_rejects_mismatched_settings() {
        let cfg = ExperimentConfig::wcp(0.01, 0.0);
        let a = triple(&cfg, "X0", "X0");
        let b = triple(&cfg, "X0", "X1");
        assert!(matches!(singles_sum(&a[1], &b[2]), Err(Error::ConfigurationMismatch(_))));
    }

    #[test]
    fn uncalibrated_recovers_psi_plus_pairs() {
        let r = triple(&ExperimentConfig::wcp(0.25, 15.0), "X0", "X0");
        let d = deduce_uncalibrated(&r[0], &r[1], &r[2]).unwrap();
        let n = d.normalized.unwrap();
        assert!((n.get(DetectorPair::D12) - 0.5).abs() < 1e-3);
        assert!((n.get(DetectorPair::D34) - 0.5).abs() < 1e-3);
        assert!(n.get(DetectorPair::D14) < 1e-3);
        assert!(n.get(DetectorPair::D23) < 1e-3);
        // literal quotient is 16 P(D_12 | 1,1) = 4
        assert!((d.raw.get(DetectorPair::D12) / 4.0 - 1.0).abs() < 0.01, "{}", d.raw.get(DetectorPair::D12));
        assert_eq!(d.method, DeductionMethod::Uncalibrated);
    }

    #[test]
    fn numerator_vanishes_without_two_arm_term() {
        let r = triple(&ExperimentConfig::wcp(0.05, 0.0), "X0", "X1");
        let mut both = r[0].clone();
        let (ca, _) = r[1].rates();
        let (cb, _) = r[2].rates();
        both.coincidences = ca.map(|p, v| v + cb.get(p));
        let d = deduce_uncalibrated(&both, &r[1], &r[2]).unwrap();
        assert!(d.raw.0.iter().all(|&v| v.abs() < 1e-18));
        assert!(d.normalized.is_none());
    }

    #[test]
    fn uncalibrated_refuses_z_basis() {
        let r = triple(&ExperimentConfig::wcp(0.05, 0.0), "Z0", "X1");
        assert!(matches!(deduce_uncalibrated(&r[0], &r[1], &r[2]), Err(Error::UnsupportedBasis { .. })));
    }

    #[test]
    fn uncalibrated_names_dead_detector() {
        let mut cfg = ExperimentConfig::wcp(0.05, 0.0);
        cfg.detector = cfg.detector.with_kappa([1.0, 1.0, 0.0, 1.0]).unwrap();
        let r = triple(&cfg, "X0", "X0");
        assert_eq!(deduce_uncalibrated(&r[0], &r[1], &r[2]), Err(Error::DegenerateSingles(Detector::D3)));
    }

    #[test]
    fn triple_order_is_checked() {
        let r = triple(&ExperimentConfig::wcp(0.05, 0.0), "X0", "X0");
        assert!(matches!(deduce_uncalibrated(&r[1], &r[0], &r[2]), Err(Error::ConfigurationMismatch(_))));
        let other = triple(&ExperimentConfig::wcp(0.05, 0.0), "X0", "X1");
        assert!(matches!(deduce_uncalibrated(&r[0], &r[1], &other[2]), Err(Error::ConfigurationMismatch(_))));
    }

    #[test]
    fn calibrated_recovers_probabilities() {
        let mu = 0.008;
        let r = triple(&ExperimentConfig::wcp(mu, 0.0), "X0", "X0");
        let d = deduce_calibrated(&r[0], &r[1], &r[2], [1.0; 4], mu).unwrap();
        assert!((d.raw.get(DetectorPair::D12) / 0.25 - 1.0).abs() < 0.01);

        let r = triple(&ExperimentConfig::wcp(mu, 0.0), "Z0", "Z1");
        let d = deduce_calibrated(&r[0], &r[1], &r[2], [1.0; 4], mu).unwrap();
        // |2,1> and |1,2> sectors add 3/8 each, a 1.5 mu relative excess
        for p in DetectorPair::BSM {
            assert!((d.raw.get(p) / 0.25 - 1.0).abs() < 0.02, "{p}");
        }
    }

    #[test]
    fn calibrated_exposes_wrong_mu() {
        let mu: f64 = 0.008;
        let r = triple(&ExperimentConfig::wcp(mu, 0.0), "X0", "X0");
        let right = deduce_calibrated(&r[0], &r[1], &r[2], [1.0; 4], mu).unwrap();
        let wrong = deduce_calibrated(&r[0], &r[1], &r[2], [1.0; 4], 2.0 * mu).unwrap();
        let expected = (2.0 * mu).exp() / 4.0;
        let ratio = wrong.raw.get(DetectorPair::D12) / right.raw.get(DetectorPair::D12);
        assert!((ratio - expected).abs() < 1e-12);
    }

    #[test]
    fn calibrated_rejects_bad_calibration() {
        let r = triple(&ExperimentConfig::wcp(0.01, 0.0), "X0", "X0");
        assert!(matches!(
            deduce_calibrated(&r[0], &r[1], &r[2], [1.0, 0.0, 1.0, 1.0], 0.01),
            Err(Error::InvalidCalibration(_))
        ));
        assert!(matches!(deduce_calibrated(&r[0], &r[1], &r[2], [1.0; 4], 0.0), Err(Error::InvalidCalibration(_))));
    }

    #[test]
    fn sampled_records_are_converted_to_rates() {
        let mut cfg = ExperimentConfig::wcp(0.008, 0.0);
        cfg.mode = crate::experiment::RunMode::Sampled { pulses: 100_000_000, seed: 5 };
        let r = triple(&cfg, "X0", "X0");
        assert!(matches!(r[0].tally, Tally::Counts { .. }));
        let d = deduce_uncalibrated(&r[0], &r[1], &r[2]).unwrap();
        let n = d.normalized.unwrap();
        assert!((n.get(DetectorPair::D12) - 0.5).abs() < 0.1);
    }
}
