//! TOML run manifest. Every section and key is optional.
//!
//! ```toml
//! scenario = "lab"
//! settings = ["X0X0", "X0X1"]   # default: all twenty protocol settings
//!
//! [source]
//! kind = "wcp"                  # or "single_photon"
//! mu = 0.25                     # at the transmitters; mu_a / mu_b override per arm
//! loss_db = 15.0                # loss_db_a / loss_db_b override per arm
//! beta = 0.0
//!
//! [detector]
//! kappa = [1.0, 1.0, 1.0, 1.0]
//! truncation = 4
//! coincidence_rule = "inclusive"
//!
//! [run]
//! mode = "exact"                # or "sampled"
//! pulses = 100000000
//! seed = 0
//!
//! [sweep]
//! axis = "beta"                 # or "mu" (mean photon number at the analyzer)
//! start = 0.0
//! stop = 6.283185307179586
//! step = 0.19634954084936207
//!
//! [report]
//! trials = 0                    # bootstrap trials; 0 disables
//! seed = 0
//! deduction = "uncalibrated"    # or "calibrated"
//!
//! [output]
//! dir = "out"
//! ```

use std::path::{Path, PathBuf};

use bsa_core::experiment::{protocol_settings, ExperimentConfig, RunMode, MAX_PULSES};
use bsa_core::fock_optics::{CoincidenceRule, DetectorModel};
use bsa_core::sources::{db_to_transmittance, BasisSetting, SourceKind};
use serde::Deserialize;

use crate::error::{CliError, Result};

/// Sweeps longer than this are almost certainly a typo in `step`.
pub const MAX_SWEEP_POINTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub scenario: String,
    pub settings: Option<Vec<String>>,
    pub source: SourceSection,
    pub detector: DetectorSection,
    pub run: RunSection,
    pub sweep: Option<SweepSection>,
    pub report: ReportSection,
    pub output: OutputSection,
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest {
            scenario: "default".into(),
            settings: None,
            source: SourceSection::default(),
            detector: DetectorSection::default(),
            run: RunSection::default(),
            sweep: None,
            report: ReportSection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    pub kind: String,
    pub mu: f64,
    pub mu_a: Option<f64>,
    pub mu_b: Option<f64>,
    pub loss_db: f64,
    pub loss_db_a: Option<f64>,
    pub loss_db_b: Option<f64>,
    pub beta: f64,
    pub misalignment_a: f64,
    pub misalignment_b: f64,
}

impl Default for SourceSection {
    fn default() -> Self {
        SourceSection {
            kind: "wcp".into(),
            mu: 0.25,
            mu_a: None,
            mu_b: None,
            loss_db: 15.0,
            loss_db_a: None,
            loss_db_b: None,
            beta: 0.0,
            misalignment_a: 0.0,
            misalignment_b: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub kappa: [f64; 4],
    pub truncation: u32,
    pub coincidence_rule: String,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection { kappa: [1.0; 4], truncation: 4, coincidence_rule: "inclusive".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub mode: String,
    pub pulses: u64,
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { mode: "exact".into(), pulses: 100_000_000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Beta,
    Mu,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Beta => "beta",
            SweepAxis::Mu => "mu",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: String,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl SweepSection {
    pub fn axis(&self) -> Result<SweepAxis> {
        match self.axis.as_str() {
            "beta" => Ok(SweepAxis::Beta),
            "mu" => Ok(SweepAxis::Mu),
            other => Err(CliError::InvalidConfig(format!("sweep.axis must be \"beta\" or \"mu\", got {other:?}"))),
        }
    }

    /// `start, start + step, ...` up to and including `stop`.
    pub fn values(&self) -> Result<Vec<f64>> {
        let (start, stop, step) = (self.start, self.stop, self.step);
        if ![start, stop, step].iter().all(|v| v.is_finite()) {
            return Err(CliError::InvalidConfig("sweep start, stop and step must be finite".into()));
        }
        if !(step > 0.0) {
            return Err(CliError::InvalidConfig(format!("sweep.step must be > 0, got {step}")));
        }
        if stop < start {
            return Err(CliError::InvalidConfig(format!("empty sweep range [{start}, {stop}]")));
        }
        // a little slack so that stop = start + k*step includes its endpoint
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        if count > MAX_SWEEP_POINTS {
            return Err(CliError::InvalidConfig(format!("sweep has {count} points, limit is {MAX_SWEEP_POINTS}")));
        }
        Ok((0..count).map(|k| start + k as f64 * step).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeductionChoice {
    Uncalibrated,
    Calibrated,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub trials: usize,
    pub seed: u64,
    pub deduction: String,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection { trials: 0, seed: 0, deduction: "uncalibrated".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

/// Command-line values that take precedence over the manifest.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub mode: Option<String>,
    pub pulses: Option<u64>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub truncation: Option<u32>,
}

impl RunManifest {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::MissingInput(format!("config file {}", path.display())),
            _ => CliError::io(path, e),
        })?;
        Self::parse(&text).map_err(|e| match e {
            CliError::InvalidConfig(m) => CliError::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.out {
            self.output.dir = v.clone();
        }
        if let Some(v) = &o.mode {
            self.run.mode = v.clone();
        }
        if let Some(v) = o.pulses {
            self.run.pulses = v;
        }
        if let Some(v) = o.seed {
            self.run.seed = v;
        }
        if let Some(v) = o.trials {
            self.report.trials = v;
        }
        if let Some(v) = o.truncation {
            self.detector.truncation = v;
        }
    }

    pub fn source_kind(&self) -> Result<SourceKind> {
        match self.source.kind.parse()? {
            SourceKind::Blocked => Err(CliError::InvalidConfig("source.kind cannot be \"blocked\"".into())),
            k => Ok(k),
        }
    }

    pub fn mode(&self) -> Result<RunMode> {
        match self.run.mode.as_str() {
            "exact" => Ok(RunMode::Exact),
            "sampled" => {
                let pulses = self.run.pulses;
                if pulses == 0 || pulses > MAX_PULSES {
                    return Err(CliError::InvalidConfig(format!("run.pulses must lie in 1..={MAX_PULSES}, got {pulses}")));
                }
                Ok(RunMode::Sampled { pulses, seed: self.run.seed })
            }
            other => Err(CliError::InvalidConfig(format!("run.mode must be \"exact\" or \"sampled\", got {other:?}"))),
        }
    }

    pub fn deduction(&self) -> Result<DeductionChoice> {
        match self.report.deduction.as_str() {
            "uncalibrated" => Ok(DeductionChoice::Uncalibrated),
            "calibrated" => Ok(DeductionChoice::Calibrated),
            other => Err(CliError::InvalidConfig(format!(
                "report.deduction must be \"uncalibrated\" or \"calibrated\", got {other:?}"
            ))),
        }
    }

    pub fn detector(&self) -> Result<DetectorModel> {
        let rule = match self.detector.coincidence_rule.as_str() {
            "inclusive" => CoincidenceRule::Inclusive,
            "exclusive" => CoincidenceRule::Exclusive,
            other => {
                return Err(CliError::InvalidConfig(format!(
                    "detector.coincidence_rule must be \"inclusive\" or \"exclusive\", got {other:?}"
                )))
            }
        };
        Ok(DetectorModel::new(self.detector.kappa, self.detector.truncation, rule)?)
    }

    pub fn settings(&self) -> Result<Vec<(BasisSetting, BasisSetting)>> {
        let Some(list) = &self.settings else { return Ok(protocol_settings()) };
        if list.is_empty() {
            return Err(CliError::InvalidConfig("settings list is empty".into()));
        }
        let mut out = Vec::with_capacity(list.len());
        for s in list {
            let bad = || CliError::InvalidConfig(format!("setting {s:?} is not of the form \"X0Y1\""));
            if !s.is_ascii() || s.len() != 4 {
                return Err(bad());
            }
            let a = s[..2].parse().map_err(|_| bad())?;
            let b = s[2..].parse().map_err(|_| bad())?;
            if out.contains(&(a, b)) {
                return Err(CliError::InvalidConfig(format!("setting {s:?} listed twice")));
            }
            out.push((a, b));
        }
        Ok(out)
    }

    /// The experiment configuration without basis settings applied.
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let src = &self.source;
        let mut cfg = match self.source_kind()? {
            SourceKind::SinglePhoton => ExperimentConfig::single_photon(),
            _ => {
                let mut cfg = ExperimentConfig::wcp(src.mu, 0.0);
                cfg.arm_a.mean_photon = src.mu_a.unwrap_or(src.mu);
                cfg.arm_b.mean_photon = src.mu_b.unwrap_or(src.mu);
                cfg
            }
        };
        cfg.loss_db_a = src.loss_db_a.unwrap_or(src.loss_db);
        cfg.loss_db_b = src.loss_db_b.unwrap_or(src.loss_db);
        cfg.beta = src.beta;
        cfg.arm_a.misalignment = src.misalignment_a;
        cfg.arm_b.misalignment = src.misalignment_b;
        cfg.detector = self.detector()?;
        cfg.mode = self.mode()?;

        let numbers = [
            ("source.mu (arm a)", cfg.arm_a.mean_photon),
            ("source.mu (arm b)", cfg.arm_b.mean_photon),
            ("source.loss_db (arm a)", cfg.loss_db_a),
            ("source.loss_db (arm b)", cfg.loss_db_b),
        ];
        for (name, v) in numbers {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CliError::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [("source.beta", cfg.beta), ("source.misalignment_a", src.misalignment_a), ("source.misalignment_b", src.misalignment_b)] {
            if !v.is_finite() {
                return Err(CliError::InvalidConfig(format!("{name} must be finite, got {v}")));
            }
        }
        Ok(cfg)
    }

    pub fn sweep(&self) -> Result<(SweepAxis, Vec<f64>)> {
        let Some(sweep) = &self.sweep else {
            return Err(CliError::InvalidConfig("manifest has no [sweep] section".into()));
        };
        let axis = sweep.axis()?;
        let values = sweep.values()?;
        if axis == SweepAxis::Mu {
            if self.source_kind()? != SourceKind::Wcp {
                return Err(CliError::InvalidConfig("a mu sweep needs source.kind = \"wcp\"".into()));
            }
            if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
                return Err(CliError::InvalidConfig(format!("mu sweep values must be > 0, got {v}")));
            }
        }
        Ok((axis, values))
    }
}

/// `base` with the sweep variable set. Mu values are taken at the analyzer, so the
/// transmitter mean is scaled up by each arm's loss.
pub fn at_sweep_point(base: &ExperimentConfig, axis: SweepAxis, value: f64) -> ExperimentConfig {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::Beta => cfg.beta = value,
        SweepAxis::Mu => {
            cfg.arm_a.mean_photon = value / db_to_transmittance(cfg.loss_db_a);
            cfg.arm_b.mean_photon = value / db_to_transmittance(cfg.loss_db_b);
        }
    }
    cfg
}
