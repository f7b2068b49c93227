//! Measurement runs: both transmitters sending, or only one of them with the other
//! arm blocked, in exact-rate or Poisson-sampled form.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::fock_optics::{
    click_pattern_probs, output_distribution, pair_coincidence, ClickProbabilities, Detector, DetectorModel,
    DetectorPair, DetectorValues, PairValues,
};
use crate::sources::{ArmConfig, Basis, BasisSetting, SourceKind};

/// Largest pulse count accepted in sampled mode; counts must stay exact in `f64`.
pub const MAX_PULSES: u64 = 1 << 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConfigTag {
    Both,
    AOnly,
    BOnly,
}

impl ConfigTag {
    pub const ALL: [ConfigTag; 3] = [ConfigTag::Both, ConfigTag::AOnly, ConfigTag::BOnly];
}

impl fmt::Display for ConfigTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfigTag::Both => "both",
            ConfigTag::AOnly => "a_only",
            ConfigTag::BOnly => "b_only",
        })
    }
}

impl FromStr for ConfigTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "both" => Ok(ConfigTag::Both),
            "a_only" => Ok(ConfigTag::AOnly),
            "b_only" => Ok(ConfigTag::BOnly),
            other => Err(Error::InvalidParameter(format!("unknown configuration tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Exact,
    Sampled { pulses: u64, seed: u64 },
}

/// What the numbers in a [`CountRecord`] mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tally {
    /// Expected events per emitted pulse pair.
    Rates,
    /// Integer event counts over `pulses` pulse pairs.
    Counts { pulses: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub arm_a: ArmConfig,
    pub arm_b: ArmConfig,
    pub loss_db_a: f64,
    pub loss_db_b: f64,
    /// Reference-frame rotation applied to arm b after encoding.
    pub beta: f64,
    pub detector: DetectorModel,
    pub mode: RunMode,
}

impl ExperimentConfig {
    /// Both arms send WCP of mean `mu` (at the transmitters) through `loss_db` of loss.
    pub fn wcp(mu: f64, loss_db: f64) -> Self {
        let z0 = BasisSetting { basis: Basis::Z, bit: false };
        ExperimentConfig {
            arm_a: ArmConfig::wcp(mu, z0),
            arm_b: ArmConfig::wcp(mu, z0),
            loss_db_a: loss_db,
            loss_db_b: loss_db,
            beta: 0.0,
            detector: DetectorModel::ideal(),
            mode: RunMode::Exact,
        }
    }

    /// Deterministic single-photon pair, lossless.
    pub fn single_photon() -> Self {
        let z0 = BasisSetting { basis: Basis::Z, bit: false };
        ExperimentConfig {
            arm_a: ArmConfig::single_photon(z0),
            arm_b: ArmConfig::single_photon(z0),
            ..Self::wcp(0.0, 0.0)
        }
    }

    pub fn with_settings(&self, a: BasisSetting, b: BasisSetting) -> Self {
        let mut out = self.clone();
        out.arm_a.setting = a;
        out.arm_b.setting = b;
        out
    }

    pub fn with_tag(&self, tag: ConfigTag) -> Self {
        let mut out = self.clone();
        match tag {
            ConfigTag::Both => {}
            ConfigTag::AOnly => out.arm_b = out.arm_b.blocked(),
            ConfigTag::BOnly => out.arm_a = out.arm_a.blocked(),
        }
        out
    }

    /// `AOnly` when arm b is blocked, `BOnly` when arm a is, `Both` otherwise.
    pub fn tag(&self) -> ConfigTag {
        match (self.arm_a.source, self.arm_b.source) {
            (SourceKind::Blocked, SourceKind::Blocked) => ConfigTag::Both,
            (_, SourceKind::Blocked) => ConfigTag::AOnly,
            (SourceKind::Blocked, _) => ConfigTag::BOnly,
            _ => ConfigTag::Both,
        }
    }
}

/// Coincidence and single tallies of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CountRecord {
    pub config_tag: ConfigTag,
    pub setting_a: BasisSetting,
    pub setting_b: BasisSetting,
    pub source_a: SourceKind,
    pub source_b: SourceKind,
    /// Mean photon numbers at the analyzer (after loss); zero for blocked arms.
    pub mu_a: f64,
    pub mu_b: f64,
    /// Mean photon numbers at the transmitters.
    pub mu_a_emitted: f64,
    pub mu_b_emitted: f64,
    pub beta: f64,
    pub tally: Tally,
    pub coincidences: PairValues,
    pub singles: DetectorValues,
}

impl CountRecord {
    pub fn is_sampled(&self) -> bool {
        matches!(self.tally, Tally::Counts { .. })
    }

    pub fn pulses(&self) -> Option<u64> {
        match self.tally {
            Tally::Rates => None,
            Tally::Counts { pulses } => Some(pulses),
        }
    }

    /// Coincidences and singles per pulse pair.
    pub fn rates(&self) -> (PairValues, DetectorValues) {
        match self.tally {
            Tally::Rates => (self.coincidences, self.singles),
            Tally::Counts { pulses } => {
                let scale = 1.0 / pulses as f64;
                let mut singles = self.singles;
                singles.0.iter_mut().for_each(|s| *s *= scale);
                (self.coincidences.map(|_, v| v * scale), singles)
            }
        }
    }

    pub fn settings(&self) -> (BasisSetting, BasisSetting) {
        (self.setting_a, self.setting_b)
    }

    pub fn validate(&self) -> Result<()> {
        let values = self.coincidences.0.iter().chain(self.singles.0.iter());
        match self.tally {
            Tally::Rates => {
                if let Some(v) = values.clone().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::InvalidParameter(format!("rate {v} outside [0, 1]")));
                }
            }
            Tally::Counts { pulses } => {
                if pulses == 0 {
                    return Err(Error::InvalidParameter("sampled record with zero pulses".into()));
                }
                if let Some(v) = values.clone().find(|v| !(**v >= 0.0) || v.fract() != 0.0) {
                    return Err(Error::InvalidParameter(format!("count {v} is not a nonnegative integer")));
                }
            }
        }
        Ok(())
    }
}

fn click_distribution(config: &ExperimentConfig) -> Result<ClickProbabilities> {
    let trunc = config.detector.truncation();
    let mix_a = config.arm_a.mixture(config.loss_db_a, trunc)?;
    let mix_b = config.arm_b.mixture(config.loss_db_b, trunc)?;
    let pol_a = config.arm_a.polarization(0.0);
    let pol_b = config.arm_b.polarization(config.beta);

    let mut total = ClickProbabilities::default();
    for (m, &wa) in mix_a.weights.iter().enumerate() {
        for (n, &wb) in mix_b.weights.iter().enumerate() {
            let weight = wa * wb;
            if m + n > trunc as usize || weight == 0.0 {
                continue;
            }
            let dist = output_distribution(m as u32, &pol_a, n as u32, &pol_b)?;
            total.add_scaled(&click_pattern_probs(&dist, &config.detector), weight);
        }
    }
    Ok(total)
}

fn record_from(config: &ExperimentConfig, tally: Tally, coincidences: PairValues, singles: DetectorValues) -> CountRecord {
    CountRecord {
        config_tag: config.tag(),
        setting_a: config.arm_a.setting,
        setting_b: config.arm_b.setting,
        source_a: config.arm_a.source,
        source_b: config.arm_b.source,
        mu_a: config.arm_a.effective_mean(config.loss_db_a),
        mu_b: config.arm_b.effective_mean(config.loss_db_b),
        mu_a_emitted: config.arm_a.emitted_mean(),
        mu_b_emitted: config.arm_b.emitted_mean(),
        beta: config.beta,
        tally,
        coincidences,
        singles,
    }
}

fn exact_rates(config: &ExperimentConfig) -> Result<(PairValues, DetectorValues)> {
    let clicks = click_distribution(config)?;
    let rule = config.detector.rule();
    let mut coincidences = PairValues::default();
    for pair in DetectorPair::ALL {
        coincidences.set(pair, pair_coincidence(&clicks, pair, rule));
    }
    let mut singles = DetectorValues::default();
    for d in Detector::ALL {
        singles.set(d, clicks.single(d));
    }
    Ok((coincidences, singles))
}

/// Expected coincidence and single rates per pulse pair. Ignores `config.mode`.
pub fn run_exact(config: &ExperimentConfig) -> Result<CountRecord> {
    let (coincidences, singles) = exact_rates(config)?;
    Ok(record_from(config, Tally::Rates, coincidences, singles))
}

fn poisson_count(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    // mean is finite and far below Poisson's upper limit thanks to MAX_PULSES
    Poisson::new(mean).expect("valid Poisson mean").sample(rng)
}

fn sampled_record(config: &ExperimentConfig, pulses: u64, seed: u64, stream: u64) -> Result<CountRecord> {
    if pulses == 0 {
        return Err(Error::InvalidConfig("sampled mode needs at least one pulse".into()));
    }
    if pulses > MAX_PULSES {
        return Err(Error::InvalidConfig(format!("{pulses} pulses exceeds the supported maximum of {MAX_PULSES}")));
    }
    let (rates, singles_rates) = exact_rates(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let n = pulses as f64;
    let mut coincidences = PairValues::default();
    for pair in DetectorPair::ALL {
        coincidences.set(pair, poisson_count(&mut rng, rates.get(pair) * n));
    }
    let mut singles = DetectorValues::default();
    for d in Detector::ALL {
        singles.set(d, poisson_count(&mut rng, singles_rates.get(d) * n));
    }
    Ok(record_from(config, Tally::Counts { pulses }, coincidences, singles))
}

/// Poisson-distributed counts with means `pulses * rate`, drawn from the stream
/// seeded by the config's seed.
pub fn run_sampled(config: &ExperimentConfig) -> Result<CountRecord> {
    match config.mode {
        RunMode::Sampled { pulses, seed } => sampled_record(config, pulses, seed, 0),
        RunMode::Exact => Err(Error::InvalidConfig("run_sampled needs a sampled-mode configuration".into())),
    }
}

/// Dispatches on `config.mode`.
pub fn run(config: &ExperimentConfig) -> Result<CountRecord> {
    match config.mode {
        RunMode::Exact => run_exact(config),
        RunMode::Sampled { .. } => run_sampled(config),
    }
}

/// For every setting pair, the `both`, `a_only` and `b_only` records in that order.
/// Sampled records each get their own random stream.
pub fn run_protocol_set(base: &ExperimentConfig, settings: &[(BasisSetting, BasisSetting)]) -> Result<Vec<CountRecord>> {
    if settings.is_empty() {
        return Err(Error::InvalidConfig("no basis settings to run".into()));
    }
    let mut out = Vec::with_capacity(settings.len() * 3);
    for (k, &(a, b)) in settings.iter().enumerate() {
        let config = base.with_settings(a, b);
        for (t, tag) in ConfigTag::ALL.into_iter().enumerate() {
            let cfg = config.with_tag(tag);
            let mut record = match base.mode {
                RunMode::Exact => run_exact(&cfg)?,
                RunMode::Sampled { pulses, seed } => sampled_record(&cfg, pulses, seed, (k * 3 + t) as u64)?,
            };
            record.config_tag = tag;
            out.push(record);
        }
    }
    Ok(out)
}

/// All four bit combinations for one pair of bases.
pub fn bit_combinations(basis_a: Basis, basis_b: Basis) -> Vec<(BasisSetting, BasisSetting)> {
    let mut out = Vec::with_capacity(4);
    for a in BasisSetting::both_bits(basis_a) {
        for b in BasisSetting::both_bits(basis_b) {
            out.push((a, b));
        }
    }
    out
}

/// Basis pairs needed for `Q_ZZ` and the `C` parameter.
pub const PROTOCOL_BASIS_PAIRS: [(Basis, Basis); 5] = [
    (Basis::Z, Basis::Z),
    (Basis::X, Basis::X),
    (Basis::Y, Basis::Y),
    (Basis::X, Basis::Y),
    (Basis::Y, Basis::X),
];

/// ZZ, XX, YY, XY and YX, each with all four bit combinations.
pub fn protocol_settings() -> Vec<(BasisSetting, BasisSetting)> {
    PROTOCOL_BASIS_PAIRS.iter().flat_map(|&(a, b)| bit_combinations(a, b)).collect()
}
