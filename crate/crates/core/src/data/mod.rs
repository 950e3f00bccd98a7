//! Dataset ingestion, subsampling, splitting and forget-set construction.

mod idx;
mod iris;
mod set;
mod split;

pub use idx::{load_idx_pair, parse_idx, read_maybe_gzip, IdxData};
pub use iris::{load_iris, IRIS_CLASSES};
pub use set::LabeledSet;
pub use split::{make_forget, split, subsample_per_class, ForgetSpec, SplitDataset};

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Reads a file, optionally checking its SHA-256 (hex, case-insensitive).
/// A missing file or checksum mismatch is a config error.
pub fn read_checked(path: &Path, sha256: Option<&str>) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    if let Some(want) = sha256 {
        let got = hex(&Sha256::digest(&bytes));
        if !got.eq_ignore_ascii_case(want.trim()) {
            return Err(Error::config(format!(
                "checksum mismatch for {}: expected {want}, got {got}",
                path.display()
            )));
        }
    }
    Ok(bytes)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
