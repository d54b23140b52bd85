//! Checkpoint and configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use semcd_core::checkpoint::Checkpoint;
use semcd_core::config::TrainConfig;

use crate::error::{io, Result};

/// `<checkpoint>.graph.txt`: the structural description kept beside every
/// checkpoint.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".graph.txt");
    PathBuf::from(s)
}

/// Writes the checkpoint through a temporary file and renames it into
/// place, then writes the sidecar.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, ck.encode()).map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))?;
    let side = sidecar_path(path);
    fs::write(&side, ck.describe()).map_err(io(&side))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(io(path))?;
    Checkpoint::decode(&bytes).map_err(|e| crate::Error::Format { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    TrainConfig::parse(&text).map_err(|e| crate::Error::Format { path: path.to_path_buf(), reason: e.to_string() })
}
