use std::collections::{BTreeMap, HashMap};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use bsa_core::deduction::{deduce_calibrated, deduce_uncalibrated, normalize_bsm, DeducedBsm};
use bsa_core::experiment::{run_protocol_set, ConfigTag, CountRecord, RunMode};
use bsa_core::fock_optics::{DetectorPair, PairValues};
use bsa_core::qkd_analysis::{
    analyze, bootstrap_errors, observable_names, standard_pipeline, CorrelationTable, ProtocolAnalysis, Provenance,
};
use bsa_core::sources::{BasisSetting, SourceKind};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::manifest::{at_sweep_point, DeductionChoice, RunManifest};
use crate::record;

pub const DEDUCED_FILE: &str = "deduced.csv";
pub const REPORT_FILE: &str = "report.json";

pub const STATUS_OK: &str = "ok";
pub const STATUS_Z_BASIS: &str = "z-basis-raw-coincidences";
pub const STATUS_DEGENERATE: &str = "degenerate-singles";

/// Writes through a temporary file in the same directory and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("output");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = std::fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(contents).and_then(|_| f.sync_all()))
        .and_then(|_| std::fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(CliError::io(path, e));
    }
    Ok(())
}

/// Runs every configured setting pair and writes one record file per configuration.
pub fn simulate(manifest: &RunManifest) -> Result<Vec<PathBuf>> {
    let base = manifest.experiment()?;
    let records = run_protocol_set(&base, &manifest.settings()?)?;
    let dir = &manifest.output.dir;
    let mut written = Vec::with_capacity(records.len());
    for rec in &records {
        let path = dir.join(record::file_name(rec));
        write_atomic(&path, record::serialize(rec).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Expands directories to the record files they contain, sorted by name.
pub fn collect_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for path in inputs {
        if path.is_dir() {
            let entries = std::fs::read_dir(path).map_err(|e| CliError::io(path, e))?;
            let mut files: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == record::EXTENSION))
                .collect();
            if files.is_empty() {
                return Err(CliError::MissingInput(format!("no .{} files in {}", record::EXTENSION, path.display())));
            }
            files.sort();
            out.extend(files);
        } else if path.is_file() {
            out.push(path.clone());
        } else {
            return Err(CliError::MissingInput(path.display().to_string()));
        }
    }
    if out.is_empty() {
        return Err(CliError::MissingInput("no input record files".into()));
    }
    Ok(out)
}

pub fn read_records(inputs: &[PathBuf]) -> Result<Vec<CountRecord>> {
    collect_inputs(inputs)?.iter().map(|p| record::read(p)).collect()
}

/// One row of the deduced-BSM table. Values are over the BSM pairs only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeducedRow {
    pub setting_a: String,
    pub setting_b: String,
    pub method: String,
    pub status: String,
    pub raw_d12: Option<f64>,
    pub raw_d34: Option<f64>,
    pub raw_d14: Option<f64>,
    pub raw_d23: Option<f64>,
    pub norm_d12: Option<f64>,
    pub norm_d34: Option<f64>,
    pub norm_d14: Option<f64>,
    pub norm_d23: Option<f64>,
    /// Pairs whose subtracted numerator was negative and set to zero, `;`-separated.
    pub clamped: String,
}

impl DeducedRow {
    fn new(a: BasisSetting, b: BasisSetting, method: &str, status: &str) -> Self {
        DeducedRow {
            setting_a: a.to_string(),
            setting_b: b.to_string(),
            method: method.into(),
            status: status.into(),
            raw_d12: None,
            raw_d34: None,
            raw_d14: None,
            raw_d23: None,
            norm_d12: None,
            norm_d34: None,
            norm_d14: None,
            norm_d23: None,
            clamped: String::new(),
        }
    }

    fn with_values(mut self, raw: &PairValues, normalized: Option<&PairValues>) -> Self {
        let [r12, r34, r14, r23] = DetectorPair::BSM.map(|p| Some(raw.get(p)));
        (self.raw_d12, self.raw_d34, self.raw_d14, self.raw_d23) = (r12, r34, r14, r23);
        let [n12, n34, n14, n23] = DetectorPair::BSM.map(|p| normalized.map(|n| n.get(p)));
        (self.norm_d12, self.norm_d34, self.norm_d14, self.norm_d23) = (n12, n34, n14, n23);
        self
    }
}

type Triple = [Option<CountRecord>; 3];

fn wcp_triples(records: Vec<CountRecord>) -> Result<BTreeMap<(BasisSetting, BasisSetting), Triple>> {
    let mut out: BTreeMap<_, Triple> = BTreeMap::new();
    for rec in records {
        let kinds = [rec.source_a, rec.source_b];
        if !kinds.contains(&SourceKind::Wcp) {
            continue;
        }
        if kinds.contains(&SourceKind::SinglePhoton) {
            return Err(CliError::InvalidConfig(format!("record {} mixes source kinds", record::file_name(&rec))));
        }
        let slot = ConfigTag::ALL.iter().position(|t| *t == rec.config_tag).unwrap_or(0);
        let entry = &mut out.entry(rec.settings()).or_default()[slot];
        if entry.is_some() {
            return Err(CliError::InvalidConfig(format!("duplicate record {}", record::file_name(&rec))));
        }
        *entry = Some(rec);
    }
    if out.is_empty() {
        return Err(CliError::MissingInput("no WCP records among the inputs".into()));
    }
    Ok(out)
}

fn require(triple: &Triple, settings: (BasisSetting, BasisSetting)) -> Result<[&CountRecord; 3]> {
    let mut out = Vec::with_capacity(3);
    for (rec, tag) in triple.iter().zip(ConfigTag::ALL) {
        let Some(rec) = rec else {
            return Err(CliError::MissingInput(format!(
                "{tag} record for settings {}{} (expected wcp_{}{}_{tag}.{})",
                settings.0,
                settings.1,
                settings.0,
                settings.1,
                record::EXTENSION
            )));
        };
        out.push(rec);
    }
    Ok([out[0], out[1], out[2]])
}

fn calibrated_mu(both: &CountRecord) -> Result<f64> {
    let (a, b) = (both.mu_a, both.mu_b);
    if (a - b).abs() > 1e-12 * a.abs().max(b.abs()) {
        return Err(CliError::InvalidConfig(format!(
            "calibrated deduction needs equal mean photon numbers, found mu_a = {a}, mu_b = {b}"
        )));
    }
    Ok(a)
}

fn clamped_list(d: &DeducedBsm) -> String {
    d.clamped.iter().map(|p| p.key()).collect::<Vec<_>>().join(";")
}

/// Deduced BSM table for every WCP setting triple. Z-basis rows carry the raw
/// two-arm coincidences. Returns the rows and whether any deduction was degenerate.
pub fn deduce_rows(records: Vec<CountRecord>, choice: DeductionChoice, kappa: [f64; 4]) -> Result<(Vec<DeducedRow>, bool)> {
    let mut rows = Vec::new();
    let mut degenerate = false;
    for (settings, triple) in wcp_triples(records)? {
        let (a, b) = settings;
        let [both, a_only, b_only] = require(&triple, settings)?;
        let equatorial = a.basis.is_equatorial() && b.basis.is_equatorial();
        let result = match choice {
            DeductionChoice::Uncalibrated if !equatorial => {
                let raw = both.rates().0;
                rows.push(DeducedRow::new(a, b, "raw", STATUS_Z_BASIS).with_values(&raw, normalize_bsm(&raw).as_ref()));
                continue;
            }
            DeductionChoice::Uncalibrated => deduce_uncalibrated(both, a_only, b_only),
            DeductionChoice::Calibrated => deduce_calibrated(both, a_only, b_only, kappa, calibrated_mu(both)?),
        };
        let method = match choice {
            DeductionChoice::Uncalibrated => "uncalibrated",
            DeductionChoice::Calibrated => "calibrated",
        };
        match result {
            Ok(d) => {
                let mut row = DeducedRow::new(a, b, method, STATUS_OK).with_values(&d.raw, d.normalized.as_ref());
                row.clamped = clamped_list(&d);
                rows.push(row);
            }
            Err(bsa_core::Error::DegenerateSingles(_)) => {
                degenerate = true;
                rows.push(DeducedRow::new(a, b, method, STATUS_DEGENERATE));
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok((rows, degenerate))
}

pub fn deduced_csv(rows: &[DeducedRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| CliError::InvalidConfig(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::io(DEDUCED_FILE, e.into_error()))
}

pub fn parse_deduced_csv(bytes: &[u8]) -> Result<Vec<DeducedRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    r.deserialize()
        .map(|row| {
            row.map_err(|e| CliError::Parse {
                path: PathBuf::from(DEDUCED_FILE),
                offset: e.position().map_or(0, |p| p.byte() as usize),
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn deduce(manifest: &RunManifest, inputs: &[PathBuf]) -> Result<PathBuf> {
    let records = read_records(inputs)?;
    let (rows, degenerate) = deduce_rows(records, manifest.deduction()?, manifest.detector.kappa)?;
    let path = manifest.output.dir.join(DEDUCED_FILE);
    write_atomic(&path, &deduced_csv(&rows)?)?;
    if degenerate {
        return Err(CliError::Degenerate(format!("zero singles in some deductions, see {}", path.display())));
    }
    Ok(path)
}

/// QBERs and C of one provenance, with optional bootstrap standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub provenance: String,
    pub q_zz: Option<f64>,
    pub q_xx: Option<f64>,
    pub q_yy: Option<f64>,
    pub q_xy: Option<f64>,
    pub q_yx: Option<f64>,
    pub c: Option<f64>,
    pub errors: Option<ReportErrors>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportErrors {
    pub q_zz: Option<f64>,
    pub q_xx: Option<f64>,
    pub q_yy: Option<f64>,
    pub q_xy: Option<f64>,
    pub q_yx: Option<f64>,
    pub c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInfo {
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub records: usize,
    pub rows: Vec<ReportRow>,
    /// QBERs whose inputs were present but carried no BSM events.
    pub undefined: Vec<String>,
    pub bootstrap: Option<BootstrapInfo>,
}

const ROW_FIELDS: [&str; 6] = ["q_zz", "q_xx", "q_yy", "q_xy", "q_yx", "c"];

fn six(prov: Provenance, lookup: &HashMap<String, Option<f64>>) -> [Option<f64>; 6] {
    ROW_FIELDS.map(|f| lookup.get(&format!("{prov}.{f}")).copied().flatten())
}

fn bootstrap_table(records: &[CountRecord], table: &CorrelationTable, trials: usize, seed: u64) -> Result<HashMap<String, Option<f64>>> {
    let summary = bootstrap_errors(records, standard_pipeline(table), trials, seed)?;
    Ok(observable_names().into_iter().zip(summary.std_errors).collect())
}

pub fn build_report(
    records: &[CountRecord],
    analysis: &ProtocolAnalysis,
    errors: Option<(&HashMap<String, Option<f64>>, BootstrapInfo)>,
) -> Report {
    let values: HashMap<String, Option<f64>> = analysis.observables().into_iter().collect();
    let rows = Provenance::ALL
        .into_iter()
        .filter(|p| analysis.qbers(*p).is_some())
        .map(|prov| {
            let [q_zz, q_xx, q_yy, q_xy, q_yx, c] = six(prov, &values);
            let errors = errors.as_ref().map(|(se, _)| {
                let [q_zz, q_xx, q_yy, q_xy, q_yx, c] = six(prov, se);
                ReportErrors { q_zz, q_xx, q_yy, q_xy, q_yx, c }
            });
            ReportRow { provenance: prov.to_string(), q_zz, q_xx, q_yy, q_xy, q_yx, c, errors }
        })
        .collect();
    Report {
        records: records.len(),
        rows,
        undefined: analysis.undefined.clone(),
        bootstrap: errors.map(|(_, info)| info),
    }
}

pub fn report(manifest: &RunManifest, inputs: &[PathBuf]) -> Result<PathBuf> {
    let records = read_records(inputs)?;
    let table = CorrelationTable::standard();
    let analysis = analyze(&records, &table)?;
    let trials = manifest.report.trials;
    let se = if trials > 0 { Some(bootstrap_table(&records, &table, trials, manifest.report.seed)?) } else { None };
    let info = BootstrapInfo { trials, seed: manifest.report.seed };
    let report = build_report(&records, &analysis, se.as_ref().map(|s| (s, info)));

    let mut json = serde_json::to_vec_pretty(&report).map_err(|e| CliError::InvalidConfig(e.to_string()))?;
    json.push(b'\n');
    let path = manifest.output.dir.join(REPORT_FILE);
    write_atomic(&path, &json)?;
    if !report.undefined.is_empty() {
        return Err(CliError::Degenerate(format!("undefined QBER: {}", report.undefined.join(", "))));
    }
    Ok(path)
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn sweep_file_name(axis: &str) -> String {
    format!("sweep_{axis}.csv")
}

/// One CSV row per sweep value: the axis value, every QBER and C of every provenance
/// and, with bootstrap trials, a `_se` column for each.
pub fn sweep(manifest: &RunManifest) -> Result<PathBuf> {
    let (axis, values) = manifest.sweep()?;
    let base = manifest.experiment()?;
    let settings = manifest.settings()?;
    let trials = manifest.report.trials;
    if trials > 0 && base.mode == RunMode::Exact {
        return Err(CliError::InvalidConfig("bootstrap errors need run.mode = \"sampled\"".into()));
    }
    let table = CorrelationTable::standard();
    let names = observable_names();

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![axis.name().to_string()];
    header.extend(names.iter().cloned());
    if trials > 0 {
        header.extend(names.iter().map(|n| format!("{n}_se")));
    }
    let csv_err = |e: csv::Error| CliError::InvalidConfig(e.to_string());
    w.write_record(&header).map_err(csv_err)?;

    let mut undefined = Vec::new();
    for (k, &value) in values.iter().enumerate() {
        let mut cfg = at_sweep_point(&base, axis, value);
        if let RunMode::Sampled { pulses, seed } = cfg.mode {
            cfg.mode = RunMode::Sampled { pulses, seed: seed.wrapping_add(k as u64) };
        }
        let records = run_protocol_set(&cfg, &settings)?;
        let analysis = analyze(&records, &table)?;
        undefined.extend(analysis.undefined.iter().map(|u| format!("{}={value}: {u}", axis.name())));
        let mut row = vec![value.to_string()];
        row.extend(analysis.observables().into_iter().map(|(_, v)| cell(v)));
        if trials > 0 {
            let se = bootstrap_table(&records, &table, trials, manifest.report.seed.wrapping_add(k as u64))?;
            row.extend(names.iter().map(|n| cell(se.get(n).copied().flatten())));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::io("sweep", e.into_error()))?;
    let path = manifest.output.dir.join(sweep_file_name(axis.name()));
    write_atomic(&path, &bytes)?;
    if !undefined.is_empty() {
        return Err(CliError::Degenerate(format!("undefined QBER at {}", undefined.join(", "))));
    }
    Ok(path)
}
