//! Flat `key = value` text format for [`CountRecord`].
//!
//! ```text
//! config_tag = both
//! source_a = wcp
//! source_b = wcp
//! basis = XY
//! bits = 01
//! mu_a = 7.9056941504209481e-3
//! ...
//! mode = sampled
//! pulses = 100000000
//! d12 = 1204
//! ...
//! s4 = 813377
//! ```
//!
//! Exact rates are written with 17 significant digits, sampled counts as integers.
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use bsa_core::experiment::{ConfigTag, CountRecord, Tally};
use bsa_core::fock_optics::{Detector, DetectorPair, DetectorValues, PairValues};
use bsa_core::sources::{Basis, BasisSetting, SourceKind};

use crate::error::{CliError, Result};

pub const EXTENSION: &str = "rec";

const FLOAT_KEYS: [&str; 5] = ["mu_a", "mu_b", "mu_a_emitted", "mu_b_emitted", "beta"];

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn serialize(rec: &CountRecord) -> String {
    let mut out = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    line("config_tag", rec.config_tag.to_string());
    line("source_a", rec.source_a.to_string());
    line("source_b", rec.source_b.to_string());
    line("basis", format!("{}{}", rec.setting_a.basis, rec.setting_b.basis));
    line("bits", format!("{}{}", rec.setting_a.bit_value(), rec.setting_b.bit_value()));
    line("mu_a", float(rec.mu_a));
    line("mu_b", float(rec.mu_b));
    line("mu_a_emitted", float(rec.mu_a_emitted));
    line("mu_b_emitted", float(rec.mu_b_emitted));
    line("beta", float(rec.beta));
    let value: fn(f64) -> String = match rec.tally {
        Tally::Rates => {
            line("mode", "exact".into());
            float
        }
        Tally::Counts { pulses } => {
            line("mode", "sampled".into());
            line("pulses", pulses.to_string());
            |v| format!("{v:.0}")
        }
    };
    for pair in DetectorPair::ALL {
        line(&pair.key(), value(rec.coincidences.get(pair)));
    }
    for d in Detector::ALL {
        line(&format!("s{}", d.label()), value(rec.singles.get(d)));
    }
    out
}

struct Entry<'a> {
    value: &'a str,
    offset: usize,
}

struct Fields<'a> {
    map: BTreeMap<&'a str, Entry<'a>>,
    end: usize,
}

impl<'a> Fields<'a> {
    fn take(&mut self, key: &str) -> Result<Entry<'a>, (usize, String)> {
        self.map.remove(key).ok_or_else(|| (self.end, format!("missing key `{key}`")))
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, (usize, String)>
    where
        T::Err: std::fmt::Display,
    {
        let e = self.take(key)?;
        e.value.parse().map_err(|err| (e.offset, format!("bad value for `{key}`: {err}")))
    }
}

fn split(text: &str) -> Result<Fields<'_>, (usize, String)> {
    let mut map = BTreeMap::new();
    let mut offset = 0;
    for raw in text.split_inclusive('\n') {
        let start = offset;
        offset += raw.len();
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err((start, format!("expected `key = value`, found {line:?}")));
        };
        let (k, v) = (k.trim(), v.trim());
        let value_offset = start + raw.find(v).unwrap_or(0);
        if map.insert(k, Entry { value: v, offset: value_offset }).is_some() {
            return Err((start, format!("duplicate key `{k}`")));
        }
    }
    Ok(Fields { map, end: text.len() })
}

fn two_chars(e: &Entry<'_>, key: &str) -> Result<[char; 2], (usize, String)> {
    let chars: Vec<char> = e.value.chars().collect();
    match chars.as_slice() {
        [a, b] => Ok([*a, *b]),
        _ => Err((e.offset, format!("`{key}` needs two characters, found {:?}", e.value))),
    }
}

fn parse_fields(text: &str) -> Result<CountRecord, (usize, String)> {
    let mut f = split(text)?;
    let config_tag: ConfigTag = f.parsed("config_tag")?;
    let source_a: SourceKind = f.parsed("source_a")?;
    let source_b: SourceKind = f.parsed("source_b")?;

    let basis = f.take("basis")?;
    let bits = f.take("bits")?;
    let [ba, bb] = two_chars(&basis, "basis")?;
    let [xa, xb] = two_chars(&bits, "bits")?;
    let setting = |b: char, x: char| -> Result<BasisSetting, (usize, String)> {
        b.to_string().parse::<Basis>().map_err(|e| (basis.offset, e.to_string()))?;
        format!("{b}{x}").parse().map_err(|e: bsa_core::Error| (bits.offset, e.to_string()))
    };
    let setting_a = setting(ba, xa)?;
    let setting_b = setting(bb, xb)?;

    let mut floats = [0.0; FLOAT_KEYS.len()];
    for (slot, key) in floats.iter_mut().zip(FLOAT_KEYS) {
        *slot = f.parsed(key)?;
    }
    let [mu_a, mu_b, mu_a_emitted, mu_b_emitted, beta] = floats;

    let mode = f.take("mode")?;
    let tally = match mode.value {
        "exact" => Tally::Rates,
        "sampled" => Tally::Counts { pulses: f.parsed("pulses")? },
        other => return Err((mode.offset, format!("unknown mode {other:?}"))),
    };

    let mut coincidences = PairValues::default();
    for pair in DetectorPair::ALL {
        coincidences.set(pair, f.parsed(&pair.key())?);
    }
    let mut singles = DetectorValues::default();
    for d in Detector::ALL {
        singles.set(d, f.parsed(&format!("s{}", d.label()))?);
    }
    if let Some((k, e)) = f.map.iter().next() {
        return Err((e.offset, format!("unknown key `{k}`")));
    }

    let rec = CountRecord {
        config_tag,
        setting_a,
        setting_b,
        source_a,
        source_b,
        mu_a,
        mu_b,
        mu_a_emitted,
        mu_b_emitted,
        beta,
        tally,
        coincidences,
        singles,
    };
    rec.validate().map_err(|e| (0, e.to_string()))?;
    Ok(rec)
}

/// Parses one record. `path` only labels errors.
pub fn parse(text: &str, path: &Path) -> Result<CountRecord> {
    parse_fields(text).map_err(|(offset, message)| CliError::Parse { path: path.to_path_buf(), offset, message })
}

pub fn read(path: &Path) -> Result<CountRecord> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingInput(path.display().to_string()),
        _ => CliError::io(path, e),
    })?;
    let text = std::str::from_utf8(&bytes).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        offset: e.valid_up_to(),
        message: "invalid UTF-8".into(),
    })?;
    parse(text, path)
}

/// `wcp_X0Y1_a_only.rec`
pub fn file_name(rec: &CountRecord) -> String {
    let family = [rec.source_a, rec.source_b]
        .into_iter()
        .find(|s| *s != SourceKind::Blocked)
        .unwrap_or(SourceKind::Blocked);
    format!("{family}_{}{}_{}.{EXTENSION}", rec.setting_a, rec.setting_b, rec.config_tag)
}
