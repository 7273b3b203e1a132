//! Directory layout: `manifest.json` plus one CSV per (subject, rate, start offset).
//!
//! CSV files have a header row of channel names and one row per sample tick.
//! Missing values are empty fields.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{ChannelSeries, SubjectRecord};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_TAG: &str = "pcehr-canonical-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub dataset: String,
    pub subjects: Vec<SubjectEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub id: String,
    pub files: Vec<FileEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    /// Relative to the dataset root.
    pub path: String,
    pub rate_hz: f64,
    /// Time of the first row in seconds (nonzero for windowed series such as
    /// heart rate derived from 8 s windows).
    #[serde(default)]
    pub start_s: f64,
    pub samples: usize,
    pub channels: Vec<ChannelEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelEntry {
    pub name: String,
    #[serde(default)]
    pub units: String,
}

fn rate_label(rate: f64) -> String {
    let s = format!("{rate}");
    s.replace('.', "p")
}

/// Writes `records` under `root`, creating it if needed.
pub fn write_dataset(root: &Path, dataset: &str, records: &[SubjectRecord]) -> Result<Manifest> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut subjects = Vec::with_capacity(records.len());
    for rec in records {
        // Group channels sharing a time grid.
        let mut groups: Vec<(f64, f64, usize, Vec<&ChannelSeries>)> = Vec::new();
        for ch in &rec.channels {
            match groups
                .iter_mut()
                .find(|g| g.0 == ch.rate_hz && g.1 == ch.start_s && g.2 == ch.values.len())
            {
                Some(g) => g.3.push(ch),
                None => groups.push((ch.rate_hz, ch.start_s, ch.values.len(), vec![ch])),
            }
        }
        let mut files = Vec::with_capacity(groups.len());
        for (k, (rate, start, n, chans)) in groups.into_iter().enumerate() {
            let name = if k == 0 || !files.iter().any(|f: &FileEntry| f.rate_hz == rate) {
                format!("{}_{}hz.csv", rec.subject_id, rate_label(rate))
            } else {
                format!("{}_{}hz_{k}.csv", rec.subject_id, rate_label(rate))
            };
            let path = root.join(&name);
            let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
            w.write_record(chans.iter().map(|c| c.name.as_str())).map_err(|e| csv_err(&path, e))?;
            let mut row = Vec::with_capacity(chans.len());
            for i in 0..n {
                row.clear();
                row.extend(chans.iter().map(|c| {
                    let v = c.values[i];
                    if v.is_nan() {
                        String::new()
                    } else {
                        format!("{v}")
                    }
                }));
                w.write_record(&row).map_err(|e| csv_err(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            files.push(FileEntry {
                path: name,
                rate_hz: rate,
                start_s: start,
                samples: n,
                channels: chans
                    .iter()
                    .map(|c| ChannelEntry {
                        name: c.name.clone(),
                        units: c.units.clone(),
                    })
                    .collect(),
            });
        }
        subjects.push(SubjectEntry {
            id: rec.subject_id.clone(),
            files,
        });
    }
    let manifest = Manifest {
        format: FORMAT_TAG.to_string(),
        dataset: dataset.to_string(),
        subjects,
    };
    let path = root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if m.format != FORMAT_TAG {
        return Err(Error::format(&path, format!("format tag {:?}, expected {FORMAT_TAG:?}", m.format)));
    }
    Ok(m)
}

/// Reads and validates a canonical dataset.
pub fn read_dataset(root: &Path) -> Result<(Manifest, Vec<SubjectRecord>)> {
    let manifest = read_manifest(root)?;
    let mut records = Vec::with_capacity(manifest.subjects.len());
    for subj in &manifest.subjects {
        let mut channels = Vec::new();
        for file in &subj.files {
            channels.extend(read_file(root, file)?);
        }
        let rec = SubjectRecord {
            subject_id: subj.id.clone(),
            dataset: manifest.dataset.clone(),
            channels,
        };
        check_spans(&root.join(MANIFEST_FILE), &rec)?;
        records.push(rec);
    }
    Ok((manifest, records))
}

/// Runs every consistency check without keeping the data.
pub fn validate(root: &Path) -> Result<ValidationSummary> {
    let (m, records) = read_dataset(root)?;
    let mut seen = BTreeMap::new();
    for s in &m.subjects {
        if seen.insert(s.id.clone(), ()).is_some() {
            return Err(Error::format(root.join(MANIFEST_FILE), format!("duplicate subject id {:?}", s.id)));
        }
    }
    Ok(ValidationSummary {
        dataset: m.dataset,
        subjects: records.len(),
        channels: records.iter().map(|r| r.channels.len()).sum(),
        samples: records.iter().flat_map(|r| &r.channels).map(|c| c.values.len()).sum(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationSummary {
    pub dataset: String,
    pub subjects: usize,
    pub channels: usize,
    pub samples: usize,
}

fn read_file(root: &Path, file: &FileEntry) -> Result<Vec<ChannelSeries>> {
    let path: PathBuf = root.join(&file.path);
    if !(file.rate_hz > 0.0) {
        return Err(Error::format(&path, format!("rate {} Hz must be positive", file.rate_hz)));
    }
    let mut r = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| csv_err(&path, e))?.iter().map(String::from).collect();
    let declared: Vec<&str> = file.channels.iter().map(|c| c.name.as_str()).collect();
    if header != declared {
        return Err(Error::format(
            &path,
            format!("header {header:?} does not match manifest channels {declared:?}"),
        ));
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(file.samples); header.len()];
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_err(&path, e))?;
        for (c, field) in row.iter().enumerate() {
            let v = if field.trim().is_empty() {
                f64::NAN
            } else {
                field.trim().parse::<f64>().map_err(|_| {
                    Error::format(&path, format!("row {}: {field:?} in column {} is not a number", line + 2, header[c]))
                })?
            };
            cols[c].push(v);
        }
    }
    let n = cols.first().map_or(0, Vec::len);
    if n != file.samples {
        return Err(Error::format(&path, format!("{n} rows but the manifest declares {}", file.samples)));
    }
    Ok(file
        .channels
        .iter()
        .zip(cols)
        .map(|(c, values)| {
            ChannelSeries::new(c.name.clone(), file.rate_hz, values)
                .with_units(c.units.clone())
                .with_start(file.start_s)
        })
        .collect())
}

/// Every channel must end within one of its own ticks of the longest channel,
/// after allowing for its start offset (windowed series end early by as much as
/// they start late).
fn check_spans(manifest: &Path, rec: &SubjectRecord) -> Result<()> {
    let end = rec.channels.iter().map(|c| c.end_s()).fold(0.0, f64::max);
    for c in &rec.channels {
        let slack = 1.0 / c.rate_hz + c.start_s + 1e-9;
        if end - c.end_s() > slack {
            return Err(Error::format(
                manifest,
                format!(
                    "subject {}: channel {} covers {:.3} s, others reach {:.3} s",
                    rec.subject_id,
                    c.name,
                    c.end_s(),
                    end
                ),
            ));
        }
    }
    Ok(())
}
