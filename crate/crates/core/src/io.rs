//! Persistence: database files, sidecars, configs and result tables.
//!
//! A database is a CSV file with header `subject_id,session,f0001,...`, one
//! row per subject and session (subjects numbered from 1, sessions 1 and 2),
//! next to a `<basename>.meta.json` sidecar with the per-feature metadata.
//! Values are written with 17 significant digits, so they read back exactly.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{ExperimentConfig, ExperimentResult};
use crate::reliability::icc_two_sessions;
use crate::synthgen::{Band, FeatureMeta, FeaturePair, GenerationConfig, SyntheticDatabase, N_SESSIONS};

pub const DB_FORMAT_VERSION: u32 = 1;

/// Pooled mean / SD deviations above this are logged on read.
pub const ZSCORE_WARN_TOLERANCE: f64 = 1e-6;

/// Largest |stored - recomputed| ICC accepted by [`verify_db`].
pub const VERIFY_ICC_TOLERANCE: f64 = 1e-9;

const SUBJECT_COLUMN: &str = "subject_id";
const SESSION_COLUMN: &str = "session";

/// Column name of 0-based feature `index`.
pub fn feature_name(index: usize) -> String {
    format!("f{:04}", index + 1)
}

/// `dir/name.csv` -> `dir/name.meta.json`.
pub fn sidecar_path(db_path: &Path) -> PathBuf {
    db_path.with_extension("meta.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub format_version: u32,
    pub master_seed: u64,
    pub n_subjects: usize,
    pub n_features: usize,
    pub generation: Option<GenerationConfig>,
    pub features: Vec<SidecarFeature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidecarFeature {
    pub name: String,
    /// Absent when the generating noise multiplier is unknown.
    pub mult: Option<f64>,
    pub achieved_icc: f64,
    pub band: Option<Band>,
}

impl Sidecar {
    pub fn for_db(db: &SyntheticDatabase) -> Self {
        Self {
            format_version: DB_FORMAT_VERSION,
            master_seed: db.master_seed,
            n_subjects: db.n_subjects,
            n_features: db.n_features(),
            generation: db.generation.clone(),
            features: db
                .meta
                .iter()
                .enumerate()
                .map(|(i, m)| SidecarFeature {
                    name: feature_name(i),
                    mult: m.mult.is_finite().then_some(m.mult),
                    achieved_icc: m.achieved_icc,
                    band: m.band,
                })
                .collect(),
        }
    }
}

/// Writes the database CSV and its sidecar.
pub fn write_db(db: &SyntheticDatabase, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| csv_to_error(path, e);

    let mut header = vec![SUBJECT_COLUMN.to_string(), SESSION_COLUMN.to_string()];
    header.extend((0..db.n_features()).map(feature_name));
    w.write_record(&header).map_err(csv_err)?;

    let mut record = Vec::with_capacity(db.n_features() + 2);
    for subject in 0..db.n_subjects {
        for session in 0..N_SESSIONS {
            record.clear();
            record.push((subject + 1).to_string());
            record.push((session + 1).to_string());
            record.extend(
                db.features
                    .iter()
                    .map(|f| format!("{:.16e}", f.session(session)[subject])),
            );
            w.write_record(&record).map_err(csv_err)?;
        }
    }
    let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))?;

    write_json(&sidecar_path(path), &Sidecar::for_db(db))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_to_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            column: String::new(),
            message: format!("{kind:?}"),
        },
    }
}

fn parse_error(path: &Path, line: u64, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Values of a database file, without metadata.
struct RawDb {
    n_subjects: usize,
    features: Vec<FeaturePair>,
}

/// Source line and values of one (subject, session) row.
type SessionRow = (u64, Vec<f64>);

fn read_values(path: &Path) -> Result<RawDb> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = r.headers().map_err(|e| csv_to_error(path, e))?.clone();
    if header.get(0) != Some(SUBJECT_COLUMN) {
        return Err(parse_error(path, 1, "1", format!("first column must be `{SUBJECT_COLUMN}`")));
    }
    if header.get(1) != Some(SESSION_COLUMN) {
        return Err(parse_error(path, 1, "2", format!("second column must be `{SESSION_COLUMN}`")));
    }
    let m = header.len() - 2;
    for (i, name) in header.iter().skip(2).enumerate() {
        if name != feature_name(i) {
            return Err(parse_error(
                path,
                1,
                name,
                format!("expected feature column `{}`", feature_name(i)),
            ));
        }
    }

    let mut rows: BTreeMap<u64, [Option<SessionRow>; N_SESSIONS]> = BTreeMap::new();
    for record in r.records() {
        let record = record.map_err(|e| csv_to_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let subject: u64 = record[0]
            .trim()
            .parse()
            .ok()
            .filter(|&s| s >= 1)
            .ok_or_else(|| parse_error(path, line, SUBJECT_COLUMN, format!("bad subject id {:?}", &record[0])))?;
        let session: usize = match record[1].trim() {
            "1" => 0,
            "2" => 1,
            other => {
                return Err(parse_error(
                    path,
                    line,
                    SESSION_COLUMN,
                    format!("session must be 1 or 2, got {other:?}"),
                ))
            }
        };
        let values = record
            .iter()
            .skip(2)
            .enumerate()
            .map(|(i, cell)| {
                cell.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_error(path, line, &feature_name(i), format!("not a finite number: {cell:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let slot = &mut rows.entry(subject).or_default()[session];
        if let Some((first, _)) = slot {
            return Err(parse_error(
                path,
                line,
                SESSION_COLUMN,
                format!("duplicate row for subject {subject} session {} (first on line {first})", session + 1),
            ));
        }
        *slot = Some((line, values));
    }

    let n = rows.len();
    let mut s1 = vec![Vec::with_capacity(n); m];
    let mut s2 = vec![Vec::with_capacity(n); m];
    for (subject, sessions) in rows {
        let [Some((_, v1)), Some((_, v2))] = sessions else {
            let line = sessions.iter().flatten().map(|s| s.0).next().unwrap_or(0);
            return Err(parse_error(path, line, SESSION_COLUMN, format!("subject {subject} lacks one of the two sessions")));
        };
        for f in 0..m {
            s1[f].push(v1[f]);
            s2[f].push(v2[f]);
        }
    }
    let features = s1
        .into_iter()
        .zip(s2)
        .map(|(a, b)| FeaturePair::new(a, b, f64::NAN))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    Ok(RawDb { n_subjects: n, features })
}

/// Reads the sidecar next to `db_path`, if there is one.
pub fn read_sidecar(db_path: &Path) -> Result<Option<Sidecar>> {
    let path = sidecar_path(db_path);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if sidecar.format_version != DB_FORMAT_VERSION {
        return Err(Error::Format {
            path,
            message: format!("unsupported format_version {}", sidecar.format_version),
        });
    }
    Ok(Some(sidecar))
}

fn check_sidecar(path: &Path, sidecar: &Sidecar, raw: &RawDb) -> Result<()> {
    let fail = |message: String| Error::Format {
        path: sidecar_path(path),
        message,
    };
    if sidecar.n_subjects != raw.n_subjects || sidecar.n_features != raw.features.len() {
        return Err(fail(format!(
            "sidecar describes {} subjects x {} features, data has {} x {}",
            sidecar.n_subjects,
            sidecar.n_features,
            raw.n_subjects,
            raw.features.len()
        )));
    }
    if sidecar.features.len() != sidecar.n_features {
        return Err(fail(format!(
            "n_features is {} but {} feature entries are listed",
            sidecar.n_features,
            sidecar.features.len()
        )));
    }
    for (i, f) in sidecar.features.iter().enumerate() {
        if f.name != feature_name(i) {
            return Err(fail(format!("feature entry {} is named {:?}, expected {:?}", i + 1, f.name, feature_name(i))));
        }
    }
    Ok(())
}

/// Reads a database file and, when present, its sidecar.
///
/// Without a sidecar the ICC metadata is recomputed and the noise
/// multipliers are unknown (NaN).
pub fn read_db(path: &Path) -> Result<SyntheticDatabase> {
    let mut raw = read_values(path)?;
    let db = match read_sidecar(path)? {
        Some(sidecar) => {
            check_sidecar(path, &sidecar, &raw)?;
            for (f, meta) in raw.features.iter_mut().zip(&sidecar.features) {
                f.mult = meta.mult.unwrap_or(f64::NAN);
            }
            let meta = sidecar
                .features
                .iter()
                .enumerate()
                .map(|(i, f)| FeatureMeta {
                    mult: f.mult.unwrap_or(f64::NAN),
                    achieved_icc: f.achieved_icc,
                    band: f.band,
                    feature_index: i,
                })
                .collect();
            SyntheticDatabase {
                n_subjects: raw.n_subjects,
                features: raw.features,
                meta,
                master_seed: sidecar.master_seed,
                generation: sidecar.generation,
            }
        }
        None => {
            log::warn!("{}: no sidecar, recomputing feature metadata", path.display());
            SyntheticDatabase::from_features(raw.n_subjects, raw.features)?
        }
    };
    let deviation = db.zscore_deviation();
    if deviation > ZSCORE_WARN_TOLERANCE {
        log::warn!(
            "{}: features deviate from zero mean / unit SD by up to {deviation:.3e}",
            path.display()
        );
    }
    Ok(db)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyMismatch {
    pub feature: String,
    pub field: &'static str,
    pub stored: String,
    pub recomputed: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub n_subjects: usize,
    pub n_features: usize,
    pub mismatches: Vec<VerifyMismatch>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Recomputes every feature's ICC and band from the values and compares
/// them with the sidecar, which must exist.
pub fn verify_db(path: &Path) -> Result<VerifyReport> {
    let raw = read_values(path)?;
    let sidecar = read_sidecar(path)?.ok_or_else(|| Error::Format {
        path: sidecar_path(path),
        message: "sidecar missing".into(),
    })?;
    check_sidecar(path, &sidecar, &raw)?;
    let mut mismatches = Vec::new();
    for (f, meta) in raw.features.iter().zip(&sidecar.features) {
        let icc = icc_two_sessions(&f.session1, &f.session2)?.icc;
        let diff = (icc - meta.achieved_icc).abs();
        if diff.is_nan() || diff > VERIFY_ICC_TOLERANCE {
            mismatches.push(VerifyMismatch {
                feature: meta.name.clone(),
                field: "achieved_icc",
                stored: meta.achieved_icc.to_string(),
                recomputed: icc.to_string(),
            });
        }
        let band = Band::for_icc(icc);
        if meta.band.is_some() && meta.band != band {
            let show = |b: Option<Band>| b.map_or("none".to_string(), |b| b.to_string());
            mismatches.push(VerifyMismatch {
                feature: meta.name.clone(),
                field: "band",
                stored: show(meta.band),
                recomputed: show(band),
            });
        }
    }
    Ok(VerifyReport {
        n_subjects: raw.n_subjects,
        n_features: raw.features.len(),
        mismatches,
    })
}

/// Loads and validates a TOML experiment config.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: ExperimentConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

/// Writes the result table to `csv_path` and the full result, provenance
/// included, to the same path with a `.json` extension.
pub fn write_result(result: &ExperimentResult, csv_path: &Path) -> Result<()> {
    let file = File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    result.rows.write_csv(&mut w).map_err(|e| csv_to_error(csv_path, e))?;
    w.flush().map_err(|e| Error::io(csv_path, e))?;
    write_json(&csv_path.with_extension("json"), result)
}

/// Reads back a result written by [`write_result`] from its JSON file.
pub fn read_result(json_path: &Path) -> Result<ExperimentResult> {
    let text = fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: json_path.to_path_buf(),
        message: e.to_string(),
    })
}
