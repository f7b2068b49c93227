//! MDI-QKD and reference-frame-independent MDI-QKD observables.
//!
//! The analyzer heralds `|psi+>` on D12/D34 and `|psi->` on D14/D23. Which bit
//! relation each outcome announces depends on the basis pair; the
//! [`CorrelationTable`] holds that assignment and
//! [`CorrelationTable::derive_from_projections`] recomputes it from the Bell
//! projections of the encoded states.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::deduction::{deduce_uncalibrated, DeducedBsm};
use crate::error::{Error, Result};
use crate::experiment::{ConfigTag, CountRecord, PROTOCOL_BASIS_PAIRS};
use crate::fock_optics::{DetectorPair, PairValues, PolarizationState};
use crate::sources::{encode, Basis, BasisSetting, SourceKind};

/// Bootstrap trial count used unless the caller asks otherwise.
pub const DEFAULT_BOOTSTRAP_TRIALS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BellOutcome {
    PsiPlus,
    PsiMinus,
}

impl BellOutcome {
    pub const ALL: [BellOutcome; 2] = [BellOutcome::PsiPlus, BellOutcome::PsiMinus];

    pub fn pairs(self) -> [DetectorPair; 2] {
        match self {
            BellOutcome::PsiPlus => [DetectorPair::D12, DetectorPair::D34],
            BellOutcome::PsiMinus => [DetectorPair::D14, DetectorPair::D23],
        }
    }

    pub fn of_pair(pair: DetectorPair) -> Option<BellOutcome> {
        BellOutcome::ALL.into_iter().find(|o| o.pairs().contains(&pair))
    }

    pub fn mass(self, values: &PairValues) -> f64 {
        self.pairs().iter().map(|&p| values.get(p)).sum()
    }
}

/// Squared overlaps of a product state with the four Bell states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BellProbabilities {
    pub psi_plus: f64,
    pub psi_minus: f64,
    pub phi_plus: f64,
    pub phi_minus: f64,
}

impl BellProbabilities {
    pub fn outcome(&self, outcome: BellOutcome) -> f64 {
        match outcome {
            BellOutcome::PsiPlus => self.psi_plus,
            BellOutcome::PsiMinus => self.psi_minus,
        }
    }

    pub fn total(&self) -> f64 {
        self.psi_plus + self.psi_minus + self.phi_plus + self.phi_minus
    }
}

/// `psi+- = (|HV> +- |VH>)/sqrt(2)`, `phi+- = (|HH> +- |VV>)/sqrt(2)`, first qubit in arm a.
pub fn bell_projection_probs(pol_a: &PolarizationState, pol_b: &PolarizationState) -> Result<BellProbabilities> {
    pol_a.validate()?;
    pol_b.validate()?;
    let (ha, va) = (pol_a.amp_h(), pol_a.amp_v());
    let (hb, vb) = (pol_b.amp_h(), pol_b.amp_v());
    let hv = ha * vb;
    let vh = va * hb;
    let hh = ha * hb;
    let vv = va * vb;
    Ok(BellProbabilities {
        psi_plus: (hv + vh).norm_sqr() / 2.0,
        psi_minus: (hv - vh).norm_sqr() / 2.0,
        phi_plus: (hh + vv).norm_sqr() / 2.0,
        phi_minus: (hh - vv).norm_sqr() / 2.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BitRelation {
    Equal,
    Differing,
}

impl BitRelation {
    fn holds(self, a: BasisSetting, b: BasisSetting) -> bool {
        match self {
            BitRelation::Equal => a.bit == b.bit,
            BitRelation::Differing => a.bit != b.bit,
        }
    }
}

/// Bit relation announced by each Bell outcome, per basis pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTable {
    entries: [[[BitRelation; 2]; 3]; 3],
}

fn basis_index(b: Basis) -> usize {
    match b {
        Basis::Z => 0,
        Basis::X => 1,
        Basis::Y => 2,
    }
}

fn outcome_index(o: BellOutcome) -> usize {
    match o {
        BellOutcome::PsiPlus => 0,
        BellOutcome::PsiMinus => 1,
    }
}

impl Default for CorrelationTable {
    fn default() -> Self {
        Self::standard()
    }
}

impl CorrelationTable {
    /// Z/Z: both outcomes mean differing bits. Any pair involving X or Y: `psi+`
    /// means equal bits and `psi-` differing bits. For mismatched pairs (XY, YX, ZX,
    /// ...) the outcomes are uncorrelated with the bits and the choice is a label.
    pub fn standard() -> Self {
        use BitRelation::*;
        let mut entries = [[[Equal, Differing]; 3]; 3];
        entries[0][0] = [Differing, Differing];
        CorrelationTable { entries }
    }

    pub fn expected(&self, basis_a: Basis, basis_b: Basis, outcome: BellOutcome) -> BitRelation {
        self.entries[basis_index(basis_a)][basis_index(basis_b)][outcome_index(outcome)]
    }

    /// Relation implied by the Bell projections of the encoded states: the one whose
    /// bit pairs carry more of the outcome's probability. `None` on a tie.
    pub fn derive_from_projections(basis_a: Basis, basis_b: Basis, outcome: BellOutcome) -> Option<BitRelation> {
        let (mut equal, mut differing) = (0.0, 0.0);
        for a in BasisSetting::both_bits(basis_a) {
            for b in BasisSetting::both_bits(basis_b) {
                let p = bell_projection_probs(&encode(a), &encode(b)).expect("encoded states are normalized");
                if a.bit == b.bit {
                    equal += p.outcome(outcome);
                } else {
                    differing += p.outcome(outcome);
                }
            }
        }
        if (equal - differing).abs() < 1e-12 {
            None
        } else if equal > differing {
            Some(BitRelation::Equal)
        } else {
            Some(BitRelation::Differing)
        }
    }
}

/// BSM coincidences observed for one pair of basis settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsmSample {
    pub setting_a: BasisSetting,
    pub setting_b: BasisSetting,
    pub values: PairValues,
}

/// Error mass over total BSM mass, pooled over the supplied bit combinations.
pub fn qber(samples: &[BsmSample], table: &CorrelationTable) -> Result<f64> {
    let Some(first) = samples.first() else {
        return Err(Error::UndefinedQber);
    };
    let (ba, bb) = (first.setting_a.basis, first.setting_b.basis);
    let (mut errors, mut total) = (0.0, 0.0);
    for s in samples {
        if s.setting_a.basis != ba || s.setting_b.basis != bb {
            return Err(Error::ConfigurationMismatch(format!(
                "QBER samples mix basis pairs {ba}{bb} and {}{}",
                s.setting_a.basis, s.setting_b.basis
            )));
        }
        for outcome in BellOutcome::ALL {
            let mass = outcome.mass(&s.values);
            total += mass;
            if !table.expected(ba, bb, outcome).holds(s.setting_a, s.setting_b) {
                errors += mass;
            }
        }
    }
    if !(total > 0.0) {
        return Err(Error::UndefinedQber);
    }
    Ok(errors / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    WcpRaw,
    Deduced,
    SinglePhoton,
}

impl Provenance {
    pub const ALL: [Provenance; 3] = [Provenance::WcpRaw, Provenance::Deduced, Provenance::SinglePhoton];
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::WcpRaw => "wcp_raw",
            Provenance::Deduced => "deduced",
            Provenance::SinglePhoton => "single_photon",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QberSet {
    pub q_zz: Option<f64>,
    pub q_xx: Option<f64>,
    pub q_yy: Option<f64>,
    pub q_xy: Option<f64>,
    pub q_yx: Option<f64>,
    pub provenance: Provenance,
}

impl QberSet {
    pub fn empty(provenance: Provenance) -> Self {
        QberSet { q_zz: None, q_xx: None, q_yy: None, q_xy: None, q_yx: None, provenance }
    }

    pub fn get(&self, basis_a: Basis, basis_b: Basis) -> Option<f64> {
        match (basis_a, basis_b) {
            (Basis::Z, Basis::Z) => self.q_zz,
            (Basis::X, Basis::X) => self.q_xx,
            (Basis::Y, Basis::Y) => self.q_yy,
            (Basis::X, Basis::Y) => self.q_xy,
            (Basis::Y, Basis::X) => self.q_yx,
            _ => None,
        }
    }

    fn slot(&mut self, basis_a: Basis, basis_b: Basis) -> Option<&mut Option<f64>> {
        match (basis_a, basis_b) {
            (Basis::Z, Basis::Z) => Some(&mut self.q_zz),
            (Basis::X, Basis::X) => Some(&mut self.q_xx),
            (Basis::Y, Basis::Y) => Some(&mut self.q_yy),
            (Basis::X, Basis::Y) => Some(&mut self.q_xy),
            (Basis::Y, Basis::X) => Some(&mut self.q_yx),
            _ => None,
        }
    }

    /// Field name used in reports, e.g. `q_xy`.
    pub fn field_name(basis_a: Basis, basis_b: Basis) -> &'static str {
        match (basis_a, basis_b) {
            (Basis::Z, Basis::Z) => "q_zz",
            (Basis::X, Basis::X) => "q_xx",
            (Basis::Y, Basis::Y) => "q_yy",
            (Basis::X, Basis::Y) => "q_xy",
            (Basis::Y, Basis::X) => "q_yx",
            _ => "q_other",
        }
    }
}

/// `C = (1-2Q_xx)^2 + (1-2Q_yy)^2 + (1-2Q_xy)^2 + (1-2Q_yx)^2`.
pub fn c_from_qbers(q_xx: f64, q_yy: f64, q_xy: f64, q_yx: f64) -> f64 {
    [q_xx, q_yy, q_xy, q_yx].iter().map(|q| (1.0 - 2.0 * q).powi(2)).sum()
}

pub fn c_parameter(q: &QberSet) -> Result<f64> {
    let q_xx = q.q_xx.ok_or(Error::MissingQber("q_xx"))?;
    let q_yy = q.q_yy.ok_or(Error::MissingQber("q_yy"))?;
    let q_xy = q.q_xy.ok_or(Error::MissingQber("q_xy"))?;
    let q_yx = q.q_yx.ok_or(Error::MissingQber("q_yx"))?;
    Ok(c_from_qbers(q_xx, q_yy, q_xy, q_yx))
}

/// `(max - min)/(max + min)` of the QBER values along a curve.
pub fn visibility(curve: &[(f64, f64)]) -> Result<f64> {
    if curve.len() < 3 {
        return Err(Error::InsufficientData(format!("visibility needs at least 3 points, got {}", curve.len())));
    }
    let max = curve.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let min = curve.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    if max + min == 0.0 {
        return Ok(0.0);
    }
    Ok((max - min) / (max + min))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Family {
    Wcp,
    SinglePhoton,
}

fn family(record: &CountRecord) -> Result<Option<Family>> {
    let kinds: Vec<SourceKind> = [record.source_a, record.source_b]
        .into_iter()
        .filter(|s| *s != SourceKind::Blocked)
        .collect();
    let fam = |k: SourceKind| match k {
        SourceKind::Wcp => Family::Wcp,
        _ => Family::SinglePhoton,
    };
    match kinds.as_slice() {
        [] => Ok(None),
        [k] => Ok(Some(fam(*k))),
        [a, b] if a == b => Ok(Some(fam(*a))),
        _ => Err(Error::ConfigurationMismatch(format!(
            "record mixes source kinds {} and {}",
            record.source_a, record.source_b
        ))),
    }
}

/// The `both`/`a_only`/`b_only` records of one setting pair.
#[derive(Debug, Clone, Default)]
pub struct RecordTriple<'a> {
    pub both: Option<&'a CountRecord>,
    pub a_only: Option<&'a CountRecord>,
    pub b_only: Option<&'a CountRecord>,
}

impl<'a> RecordTriple<'a> {
    fn slot(&mut self, tag: ConfigTag) -> &mut Option<&'a CountRecord> {
        match tag {
            ConfigTag::Both => &mut self.both,
            ConfigTag::AOnly => &mut self.a_only,
            ConfigTag::BOnly => &mut self.b_only,
        }
    }

    pub fn require(&self, tag: ConfigTag, settings: (BasisSetting, BasisSetting)) -> Result<&'a CountRecord> {
        let rec = match tag {
            ConfigTag::Both => self.both,
            ConfigTag::AOnly => self.a_only,
            ConfigTag::BOnly => self.b_only,
        };
        rec.ok_or_else(|| Error::MissingRecord {
            tag: tag.to_string(),
            settings: format!("{}{}", settings.0, settings.1),
        })
    }
}

type SettingPair = (BasisSetting, BasisSetting);

/// Groups records by source family and setting pair.
fn group(records: &[CountRecord]) -> Result<BTreeMap<Family, BTreeMap<SettingPair, RecordTriple<'_>>>> {
    let mut out: BTreeMap<Family, BTreeMap<SettingPair, RecordTriple<'_>>> = BTreeMap::new();
    for rec in records {
        let Some(fam) = family(rec)? else { continue };
        let triple = out.entry(fam).or_default().entry(rec.settings()).or_default();
        let slot = triple.slot(rec.config_tag);
        if slot.is_some() {
            return Err(Error::ConfigurationMismatch(format!(
                "duplicate {} record for settings {}{}",
                rec.config_tag, rec.setting_a, rec.setting_b
            )));
        }
        *slot = Some(rec);
    }
    Ok(out)
}

/// Deduction result for one setting pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DeducedEntry {
    pub setting_a: BasisSetting,
    pub setting_b: BasisSetting,
    pub result: Result<DeducedBsm>,
}

/// QBERs of every provenance the records support, plus the per-setting deductions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolAnalysis {
    pub wcp_raw: Option<QberSet>,
    pub deduced: Option<QberSet>,
    pub single_photon: Option<QberSet>,
    pub deductions: Vec<DeducedEntry>,
    /// QBERs that had input data but came out undefined, as `provenance.q_xx`.
    pub undefined: Vec<String>,
}

impl ProtocolAnalysis {
    pub fn qbers(&self, provenance: Provenance) -> Option<&QberSet> {
        match provenance {
            Provenance::WcpRaw => self.wcp_raw.as_ref(),
            Provenance::Deduced => self.deduced.as_ref(),
            Provenance::SinglePhoton => self.single_photon.as_ref(),
        }
    }

    pub fn c(&self, provenance: Provenance) -> Option<f64> {
        self.qbers(provenance).and_then(|q| c_parameter(q).ok())
    }

    /// `(name, value)` for all five QBERs and C of all three provenances, in a fixed order.
    pub fn observables(&self) -> Vec<(String, Option<f64>)> {
        let mut out = Vec::with_capacity(OBSERVABLES_PER_PROVENANCE * 3);
        for prov in Provenance::ALL {
            let q = self.qbers(prov);
            for (a, b) in PROTOCOL_BASIS_PAIRS {
                out.push((format!("{prov}.{}", QberSet::field_name(a, b)), q.and_then(|q| q.get(a, b))));
            }
            out.push((format!("{prov}.c"), self.c(prov)));
        }
        out
    }
}

const OBSERVABLES_PER_PROVENANCE: usize = PROTOCOL_BASIS_PAIRS.len() + 1;

/// Names matching [`ProtocolAnalysis::observables`].
pub fn observable_names() -> Vec<String> {
    let mut out = Vec::new();
    for prov in Provenance::ALL {
        for (a, b) in PROTOCOL_BASIS_PAIRS {
            out.push(format!("{prov}.{}", QberSet::field_name(a, b)));
        }
        out.push(format!("{prov}.c"));
    }
    out
}

fn both_samples(triples: &BTreeMap<SettingPair, RecordTriple<'_>>, a: Basis, b: Basis) -> Vec<BsmSample> {
    triples
        .iter()
        .filter(|((sa, sb), _)| sa.basis == a && sb.basis == b)
        .filter_map(|(&(sa, sb), t)| {
            t.both.map(|r| BsmSample { setting_a: sa, setting_b: sb, values: r.rates().0 })
        })
        .collect()
}

fn fill(
    set: &mut QberSet,
    a: Basis,
    b: Basis,
    samples: &[BsmSample],
    table: &CorrelationTable,
    undefined: &mut Vec<String>,
) -> Result<()> {
    if samples.is_empty() {
        return Ok(());
    }
    match qber(samples, table) {
        Ok(q) => {
            if let Some(slot) = set.slot(a, b) {
                *slot = Some(q);
            }
            Ok(())
        }
        Err(Error::UndefinedQber) => {
            undefined.push(format!("{}.{}", set.provenance, QberSet::field_name(a, b)));
            Ok(())
        }
        Err(e) => Err(e),
    }
}

/// Computes raw-WCP, deduced and single-photon QBER sets from a record collection.
///
/// Deduced Z/Z values come from the two-arm WCP coincidences directly; equatorial
/// deduced values use the singles-normalized deduction on each triple.
pub fn analyze(records: &[CountRecord], table: &CorrelationTable) -> Result<ProtocolAnalysis> {
    let groups = group(records)?;
    let mut analysis = ProtocolAnalysis {
        wcp_raw: None,
        deduced: None,
        single_photon: None,
        deductions: Vec::new(),
        undefined: Vec::new(),
    };

    if let Some(triples) = groups.get(&Family::SinglePhoton) {
        let mut set = QberSet::empty(Provenance::SinglePhoton);
        for (a, b) in PROTOCOL_BASIS_PAIRS {
            fill(&mut set, a, b, &both_samples(triples, a, b), table, &mut analysis.undefined)?;
        }
        analysis.single_photon = Some(set);
    }

    if let Some(triples) = groups.get(&Family::Wcp) {
        let mut raw = QberSet::empty(Provenance::WcpRaw);
        let mut deduced = QberSet::empty(Provenance::Deduced);
        for (a, b) in PROTOCOL_BASIS_PAIRS {
            let samples = both_samples(triples, a, b);
            fill(&mut raw, a, b, &samples, table, &mut analysis.undefined)?;
            if !(a.is_equatorial() && b.is_equatorial()) {
                fill(&mut deduced, a, b, &samples, table, &mut analysis.undefined)?;
                continue;
            }
            let mut deduced_samples = Vec::new();
            for (&(sa, sb), t) in triples.iter().filter(|((sa, sb), _)| sa.basis == a && sb.basis == b) {
                let both = t.require(ConfigTag::Both, (sa, sb))?;
                let a_only = t.require(ConfigTag::AOnly, (sa, sb))?;
                let b_only = t.require(ConfigTag::BOnly, (sa, sb))?;
                let result = deduce_uncalibrated(both, a_only, b_only);
                if let Ok(d) = &result {
                    deduced_samples.push(BsmSample { setting_a: sa, setting_b: sb, values: d.raw });
                }
                analysis.deductions.push(DeducedEntry { setting_a: sa, setting_b: sb, result });
            }
            // a failed deduction on any bit pair leaves the QBER undefined
            let expected = triples.keys().filter(|(sa, sb)| sa.basis == a && sb.basis == b).count();
            if deduced_samples.len() == expected {
                fill(&mut deduced, a, b, &deduced_samples, table, &mut analysis.undefined)?;
            } else {
                analysis.undefined.push(format!("{}.{}", Provenance::Deduced, QberSet::field_name(a, b)));
            }
        }
        analysis.wcp_raw = Some(raw);
        analysis.deduced = Some(deduced);
    }
    Ok(analysis)
}

/// Sample standard deviation of each observable over bootstrap trials.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSummary {
    pub std_errors: Vec<Option<f64>>,
    /// Trials in which the observable was defined.
    pub valid_trials: Vec<usize>,
}

fn resample(records: &[CountRecord], rng: &mut ChaCha8Rng) -> Vec<CountRecord> {
    let mut draw = |v: f64| {
        if v > 0.0 {
            Poisson::new(v).expect("positive finite count").sample(rng)
        } else {
            0.0
        }
    };
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            for v in r.coincidences.0.iter_mut().chain(r.singles.0.iter_mut()) {
                *v = draw(*v);
            }
            r
        })
        .collect()
}

/// Parametric bootstrap: every count is redrawn as Poisson with mean equal to the
/// observed count and `pipeline` is re-run. Trial `k` uses stream `k` of the
/// generator seeded with `seed`, so results do not depend on thread scheduling.
pub fn bootstrap_errors<F>(records: &[CountRecord], pipeline: F, trials: usize, seed: u64) -> Result<BootstrapSummary>
where
    F: Fn(&[CountRecord]) -> Vec<Option<f64>> + Sync,
{
    if trials < 2 {
        return Err(Error::InsufficientData(format!("bootstrap needs at least 2 trials, got {trials}")));
    }
    if records.iter().any(|r| !r.is_sampled()) {
        return Err(Error::RequiresSampledCounts);
    }
    let outcomes: Vec<Vec<Option<f64>>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            pipeline(&resample(records, &mut rng))
        })
        .collect();

    let width = outcomes.iter().map(Vec::len).max().unwrap_or(0);
    let mut std_errors = Vec::with_capacity(width);
    let mut valid_trials = Vec::with_capacity(width);
    for i in 0..width {
        let values: Vec<f64> = outcomes.iter().filter_map(|o| o.get(i).copied().flatten()).collect();
        valid_trials.push(values.len());
        if values.len() < 2 {
            std_errors.push(None);
            continue;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        std_errors.push(Some(var.sqrt()));
    }
    Ok(BootstrapSummary { std_errors, valid_trials })
}

/// The standard pipeline for [`bootstrap_errors`]: [`analyze`] followed by
/// [`ProtocolAnalysis::observables`]. Errors map to all-missing values.
pub fn standard_pipeline(table: &CorrelationTable) -> impl Fn(&[CountRecord]) -> Vec<Option<f64>> + Sync + '_ {
    move |records| match analyze(records, table) {
        Ok(a) => a.observables().into_iter().map(|(_, v)| v).collect(),
        Err(_) => vec![None; observable_names().len()],
    }
}
