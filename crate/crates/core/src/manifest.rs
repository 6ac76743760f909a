//! Line-oriented dataset manifest.
//!
//! The first line is a header object carrying `"format": "fairgen-manifest/1"`;
//! every following line is one [`DatasetRecord`]. The file is append-only: a
//! relabel appends the record again with a higher `version`, and readers
//! resolve each id to its latest version. Writers take an exclusive advisory
//! lock, readers a shared one.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::classifier::GroupSet;
use crate::error::{Error, Result};
use crate::latent::PRNG_ID;
use crate::pipeline::{DatasetRecord, DistributionReport};

pub const MANIFEST_FORMAT: &str = "fairgen-manifest/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub groups: GroupSet,
    pub root_seed: u64,
    pub created_at: DateTime<Utc>,
    pub generator: serde_json::Value,
    pub prng: String,
    pub workers: usize,
    /// Report of the run that produced the records, including attempts for
    /// guided runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_report: Option<DistributionReport>,
    /// Resolved run configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl ManifestHeader {
    pub fn new(
        latent_dim: usize,
        feature_dim: usize,
        groups: GroupSet,
        root_seed: u64,
        generator: serde_json::Value,
    ) -> Self {
        Self {
            format: MANIFEST_FORMAT.to_string(),
            latent_dim,
            feature_dim,
            groups,
            root_seed,
            created_at: Utc::now(),
            generator,
            prng: PRNG_ID.to_string(),
            workers: 1,
            run_report: None,
            config: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub header: ManifestHeader,
    records: Vec<DatasetRecord>,
    latest: HashMap<String, usize>,
    first_seen: Vec<String>,
}

impl PartialEq for Manifest {
    fn eq(&self, other: &Self) -> bool {
        self.header == other.header && self.records == other.records
    }
}

impl Manifest {
    pub fn new(header: ManifestHeader) -> Self {
        Self {
            header,
            records: Vec::new(),
            latest: HashMap::new(),
            first_seen: Vec::new(),
        }
    }

    /// Every stored line, all versions, in file order.
    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn latest(&self, record_id: &str) -> Option<&DatasetRecord> {
        self.latest.get(record_id).map(|&i| &self.records[i])
    }

    /// Latest version of each record, in order of first appearance.
    pub fn latest_records(&self) -> impl Iterator<Item = &DatasetRecord> + '_ {
        self.first_seen.iter().map(|id| &self.records[self.latest[id]])
    }

    /// Appends a record line after checking it against the header.
    pub fn push(&mut self, record: DatasetRecord) -> Result<&DatasetRecord> {
        self.check(&record).map_err(Error::Config)?;
        Ok(self.insert(record))
    }

    /// Appends `record` as the next version of its id.
    pub fn push_version(&mut self, mut record: DatasetRecord) -> Result<&DatasetRecord> {
        record.version = self.latest(&record.record_id).map_or(1, |r| r.version + 1);
        self.push(record)
    }

    /// One line per id, holding the latest version.
    pub fn compact(&self) -> Manifest {
        let mut out = Manifest::new(self.header.clone());
        for r in self.latest_records() {
            out.insert(r.clone());
        }
        out
    }

    fn insert(&mut self, record: DatasetRecord) -> &DatasetRecord {
        let idx = self.records.len();
        if self.latest.insert(record.record_id.clone(), idx).is_none() {
            self.first_seen.push(record.record_id.clone());
        }
        self.records.push(record);
        &self.records[idx]
    }

    fn check(&self, r: &DatasetRecord) -> std::result::Result<(), String> {
        let h = &self.header;
        if r.latent.dim() != h.latent_dim {
            return Err(format!(
                "record {} latent has {} components, header says {}",
                r.record_id,
                r.latent.dim(),
                h.latent_dim
            ));
        }
        if r.feature.dim() != h.feature_dim {
            return Err(format!(
                "record {} feature has {} components, header says {}",
                r.record_id,
                r.feature.dim(),
                h.feature_dim
            ));
        }
        let groups = std::iter::once(&r.group).chain(r.steered_toward.as_ref());
        for g in groups {
            if h.groups.names().get(g.index) != Some(&g.name) {
                return Err(format!(
                    "record {} has unknown group {} ({})",
                    r.record_id, g.index, g.name
                ));
            }
        }
        if !(r.group_confidence > 0.0 && r.group_confidence < 1.0) && r.group_confidence != 1.0 {
            return Err(format!(
                "record {} group_confidence {} outside (0, 1]",
                r.record_id, r.group_confidence
            ));
        }
        if let Some(prev) = self.latest(&r.record_id) {
            if r.version <= prev.version {
                return Err(format!(
                    "record {} version {} does not supersede version {}",
                    r.record_id, r.version, prev.version
                ));
            }
        }
        for attr in r.downstream_labels.keys() {
            if !r.label_provenance.contains_key(attr) {
                return Err(format!("record {} label {attr:?} has no provenance", r.record_id));
            }
        }
        Ok(())
    }

    /// Writes the whole manifest, replacing any existing file.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = OpenOptions::new().write(true).create(true).truncate(false).open(path)?;
        file.lock()?;
        file.set_len(0)?;
        let mut out = BufWriter::new(&file);
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        drop(out);
        file.sync_all()?;
        Ok(())
    }

    /// Appends `records` to this manifest and to the file at `path`, which
    /// must hold this manifest. Durable on return.
    pub fn append_to_file(&mut self, path: &Path, records: Vec<DatasetRecord>) -> Result<()> {
        for r in &records {
            self.check(r).map_err(Error::Config)?;
        }
        append_records(path, &records)?;
        for r in records {
            self.insert(r);
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(crate::error::io_at(path))?;
        file.lock_shared()?;
        let parse_err = |line: usize, reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let schema_err = |line: usize, reason: String| Error::Schema {
            path: path.to_path_buf(),
            line,
            reason,
        };

        let mut manifest: Option<Manifest> = None;
        let mut seen: HashSet<(String, u32)> = HashSet::new();
        for (i, line) in BufReader::new(&file).lines().enumerate() {
            let lineno = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
            let is_header = value.get("format").is_some();
            let is_record = value.get("record_id").is_some();
            match (&mut manifest, is_header, is_record) {
                (None, true, _) => {
                    let header: ManifestHeader =
                        serde_json::from_value(value).map_err(|e| parse_err(lineno, e.to_string()))?;
                    if header.format != MANIFEST_FORMAT {
                        return Err(schema_err(
                            lineno,
                            format!("unsupported format {:?}, expected {MANIFEST_FORMAT:?}", header.format),
                        ));
                    }
                    manifest = Some(Manifest::new(header));
                }
                (None, false, true) => {
                    return Err(schema_err(lineno, "record appears before the header".into()));
                }
                (Some(_), true, _) => {
                    return Err(schema_err(lineno, "second header".into()));
                }
                (Some(m), false, true) => {
                    let record: DatasetRecord =
                        serde_json::from_value(value).map_err(|e| parse_err(lineno, e.to_string()))?;
                    if !seen.insert((record.record_id.clone(), record.version)) {
                        return Err(schema_err(
                            lineno,
                            format!("duplicate record {} version {}", record.record_id, record.version),
                        ));
                    }
                    m.check(&record).map_err(|reason| schema_err(lineno, reason))?;
                    m.insert(record);
                }
                (_, false, false) => {
                    return Err(parse_err(lineno, "line is neither a header nor a record".into()));
                }
            }
        }
        manifest.ok_or_else(|| schema_err(1, "missing header".into()))
    }
}

/// Appends already-validated record lines to a manifest file under an
/// exclusive lock. Durable on return.
pub fn append_records(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let file = OpenOptions::new().append(true).open(path)?;
    file.lock()?;
    let mut out = BufWriter::new(&file);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    drop(out);
    file.sync_data()?;
    Ok(())
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    manifest.write(path)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    Manifest::read(path)
}
