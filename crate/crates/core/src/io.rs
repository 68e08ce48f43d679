//! JSON files exchanged between the command-line stages.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::adjustment::{MouseStateTrack, SolveMode, TrackRecord};
use crate::geometry::{CameraModel, CameraRecord};
use crate::Error;

pub const TRACK_FORMAT: &str = "mousetrack-track";
pub const TRACK_VERSION: u32 = 1;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Pretty-printed JSON with a trailing newline; parent directories are
/// created.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("value serialises");
    text.push('\n');
    fs::write(path, text).map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CamerasFile {
    pub config_hash: String,
    pub cameras: Vec<CameraRecord>,
}

impl CamerasFile {
    pub fn new(config_hash: String, cameras: &[CameraModel<f64>]) -> Self {
        Self {
            config_hash,
            cameras: cameras.iter().map(CameraRecord::from).collect(),
        }
    }

    pub fn models(&self) -> Result<Vec<CameraModel<f64>>, Error> {
        Ok(self
            .cameras
            .iter()
            .map(CameraRecord::to_camera)
            .collect::<Result<_, _>>()?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackFile {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub mode: SolveMode,
    pub epochs: Vec<TrackRecord>,
}

impl TrackFile {
    pub fn new(config_hash: String, mode: SolveMode, track: &MouseStateTrack) -> Self {
        Self {
            format: TRACK_FORMAT.into(),
            version: TRACK_VERSION,
            config_hash,
            mode,
            epochs: track.to_records(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let file: Self = read_json(path)?;
        let schema = |message: String| Error::Schema {
            path: path.to_path_buf(),
            message,
        };
        if file.format != TRACK_FORMAT || file.version != TRACK_VERSION {
            return Err(schema(format!(
                "expected {TRACK_FORMAT} v{TRACK_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        if let Some((i, r)) = file.epochs.iter().enumerate().find(|(i, r)| r.t != *i) {
            return Err(schema(format!("epochs[{i}] has t = {}", r.t)));
        }
        Ok(file)
    }

    pub fn track(&self) -> MouseStateTrack {
        MouseStateTrack::from_records(&self.epochs)
    }
}
