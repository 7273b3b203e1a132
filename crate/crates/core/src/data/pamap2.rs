//! Loader for the PAMAP2 protocol recordings (`subjectNNN.dat`, 54 whitespace-separated
//! columns at 100 Hz).

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::signal::{ChannelSeries, SubjectRecord, HR_CHANNEL};

pub const COLUMNS: usize = 54;
pub const RATE_HZ: f64 = 100.0;
const HR_COLUMN: usize = 2;
const HAND_BLOCK: usize = 3;
const CHEST_BLOCK: usize = 20;

/// Channel name and column for the twelve accelerometer axes that are kept.
pub fn accelerometer_columns() -> Vec<(String, usize)> {
    let mut out = Vec::with_capacity(12);
    for (site, block) in [("chest", CHEST_BLOCK), ("wrist", HAND_BLOCK)] {
        for (range, offset) in [("acc16", 1), ("acc6", 4)] {
            for (k, axis) in ["x", "y", "z"].into_iter().enumerate() {
                out.push((format!("{site}_{range}_{axis}"), block + offset + k));
            }
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub rows: usize,
    pub skipped_rows: usize,
}

/// Parses one subject file.
pub fn load_file(path: &Path, subject_id: &str) -> Result<(SubjectRecord, LoadStats)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cols = accelerometer_columns();
    let mut acc: Vec<Vec<f64>> = vec![Vec::new(); cols.len()];
    let mut hr = Vec::new();
    let mut stats = LoadStats::default();
    let mut fields = Vec::with_capacity(COLUMNS);
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        fields.clear();
        fields.extend(line.split_whitespace());
        if fields.len() != COLUMNS {
            return Err(Error::format(
                path,
                format!("line {}: {} columns, expected {COLUMNS}", line_no + 1, fields.len()),
            ));
        }
        let parse = |i: usize| -> Option<f64> {
            let f = fields[i];
            if f.eq_ignore_ascii_case("nan") {
                Some(f64::NAN)
            } else {
                f.parse().ok()
            }
        };
        let values: Option<Vec<f64>> = std::iter::once(HR_COLUMN)
            .chain(cols.iter().map(|c| c.1))
            .map(parse)
            .collect();
        match values {
            Some(v) => {
                hr.push(v[0]);
                for (a, x) in acc.iter_mut().zip(&v[1..]) {
                    a.push(*x);
                }
                stats.rows += 1;
            }
            None => stats.skipped_rows += 1,
        }
    }
    if stats.skipped_rows > 0 {
        log::warn!("{}: skipped {} malformed rows", path.display(), stats.skipped_rows);
    }
    let mut channels: Vec<ChannelSeries> = cols
        .into_iter()
        .zip(acc)
        .map(|((name, _), values)| ChannelSeries::new(name, RATE_HZ, values).with_units("m/s^2"))
        .collect();
    channels.push(ChannelSeries::new(HR_CHANNEL, RATE_HZ, hr).with_units("bpm"));
    Ok((
        SubjectRecord {
            subject_id: subject_id.to_string(),
            dataset: "pamap2".into(),
            channels,
        },
        stats,
    ))
}

/// Subject id from a file name such as `subject105.dat` (gives `"5"`).
pub fn subject_id_from_path(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    let digits = stem.strip_prefix("subject")?;
    let n: u32 = digits.parse().ok()?;
    Some(if n > 100 { (n - 100).to_string() } else { n.to_string() })
}

/// Loads every `subject*.dat` under `dir` (or its `Protocol` subdirectory), sorted by id.
pub fn load_dir(dir: &Path) -> Result<Vec<SubjectRecord>> {
    let protocol = dir.join("Protocol");
    let root = if protocol.is_dir() { protocol } else { dir.to_path_buf() };
    let mut files: Vec<(u32, PathBuf, String)> = Vec::new();
    for entry in fs::read_dir(&root).map_err(|e| Error::io(&root, e))? {
        let path = entry.map_err(|e| Error::io(&root, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("dat") {
            continue;
        }
        if let Some(id) = subject_id_from_path(&path) {
            files.push((id.parse().unwrap_or(u32::MAX), path, id));
        }
    }
    if files.is_empty() {
        return Err(Error::MissingData(format!("no subjectNNN.dat files in {}", root.display())));
    }
    files.sort();
    files
        .into_iter()
        .map(|(_, path, id)| load_file(&path, &id).map(|(r, _)| r))
        .collect()
}

/// True when `dir` looks like a PAMAP2 download.
pub fn looks_like_pamap2(dir: &Path) -> bool {
    let root = if dir.join("Protocol").is_dir() { dir.join("Protocol") } else { dir.to_path_buf() };
    fs::read_dir(root)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .any(|e| subject_id_from_path(&e.path()).is_some())
        })
        .unwrap_or(false)
}
