//! JSON files shared across modules.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Homography, HomographyArray};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("io: {path}: bad JSON: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), IoError> {
    fs::write(path, to_json_string(value)).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// On-disk form of a [`HomographyArray`]: row-major matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomographyArrayFile {
    pub frame_height: usize,
    pub mats: Vec<[f64; 9]>,
}

impl From<&HomographyArray> for HomographyArrayFile {
    fn from(arr: &HomographyArray) -> Self {
        Self {
            frame_height: arr.frame_height(),
            mats: arr.patches().iter().map(Homography::to_row_major).collect(),
        }
    }
}

impl HomographyArrayFile {
    pub fn into_array(self) -> Result<HomographyArray, GeometryError> {
        let hs = self
            .mats
            .iter()
            .map(Homography::from_row_major)
            .collect::<Result<Vec<_>, _>>()?;
        HomographyArray::new(hs, self.frame_height)
    }
}

pub fn write_homography_array(arr: &HomographyArray, path: &Path) -> Result<(), IoError> {
    write_json(&HomographyArrayFile::from(arr), path)
}

pub fn read_homography_array(path: &Path) -> Result<HomographyArray, IoError> {
    let file: HomographyArrayFile = read_json(path)?;
    Ok(file.into_array()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    #[test]
    fn homography_array_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.json");
        let h = Homography::new(Matrix3::new(
            1.01, 0.02, 3.5, -0.01, 0.99, -2.25, 1e-5, 2e-5, 1.0,
        ))
        .unwrap();
        let arr = HomographyArray::new(vec![h, Homography::identity()], 270).unwrap();
        write_homography_array(&arr, &path).unwrap();
        assert_eq!(read_homography_array(&path).unwrap(), arr);
    }

    #[test]
    fn bad_json_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.json");
        fs::write(&path, "{").unwrap();
        let err = read_homography_array(&path).unwrap_err();
        assert!(err.to_string().contains("broken.json"));
    }
}
