//! Dataset formats: the canonical CSV + manifest layout, the PAMAP2 loader, and the
//! synthetic population generator.

pub mod canonical;
pub mod pamap2;
pub mod synth;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::signal::SubjectRecord;

/// Environment variable naming the default dataset root.
pub const DATA_DIR_ENV: &str = "PCEHR_DATA_DIR";

/// Resolves `path`, falling back to `$PCEHR_DATA_DIR`.
pub fn resolve_root(path: Option<&Path>) -> Result<PathBuf> {
    match path {
        Some(p) => Ok(p.to_path_buf()),
        None => std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).ok_or_else(|| {
            Error::MissingData(format!("no dataset path given; pass one or set {DATA_DIR_ENV}"))
        }),
    }
}

/// Loads a canonical dataset, or a PAMAP2 directory when no manifest is present.
/// Returns the dataset tag and the records.
pub fn load(root: &Path) -> Result<(String, Vec<SubjectRecord>)> {
    if !root.exists() {
        return Err(Error::MissingData(format!(
            "dataset path {} does not exist; generate one with `pcehr synth-gen` or set {DATA_DIR_ENV}",
            root.display()
        )));
    }
    if root.join(canonical::MANIFEST_FILE).is_file() {
        let (m, recs) = canonical::read_dataset(root)?;
        Ok((m.dataset, recs))
    } else if pamap2::looks_like_pamap2(root) {
        Ok(("pamap2".into(), pamap2::load_dir(root)?))
    } else {
        Err(Error::MissingData(format!(
            "{} has neither {} nor PAMAP2 subject files",
            root.display(),
            canonical::MANIFEST_FILE
        )))
    }
}
