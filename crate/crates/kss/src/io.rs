//! Landmark file formats and result documents.
//!
//! Landmark files are JSON: dimension, landmark count, optional landmark
//! names and units, and `k` rows of coordinates. A basis file bundles a list
//! of 3D landmark files sharing landmark count and name order. 2D
//! observations may alternatively be supplied as a points-only CSV (one
//! `x,y` line per landmark) with names passed separately. All writes are
//! atomic (temp file + rename).

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::barycentric::BasisSet;
use crate::error::Result as KssResult;
use crate::kendall::{to_preshape, Configuration, ShapePoint};

/// Errors around reading, parsing and validating files.
#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: line {line}: {message}")]
    ParseLine {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: field `{field}`: {message}")]
    Field {
        path: String,
        field: String,
        message: String,
    },
    #[error("{path}: {source}")]
    Shape {
        path: String,
        source: crate::error::Error,
    },
    #[error("writing {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

pub type IoResult<T> = Result<T, IoError>;

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

/// A self-describing landmark file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LandmarkFile {
    pub dimension: usize,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
    /// `k` rows of `dimension` coordinates each.
    pub points: Vec<Vec<f64>>,
}

impl LandmarkFile {
    pub fn validate(&self, path: &Path) -> IoResult<()> {
        if self.dimension != 2 && self.dimension != 3 {
            return Err(IoError::Field {
                path: path_str(path),
                field: "dimension".into(),
                message: format!("must be 2 or 3, got {}", self.dimension),
            });
        }
        if self.points.len() != self.k {
            return Err(IoError::Field {
                path: path_str(path),
                field: "points".into(),
                message: format!("{} rows, but k = {}", self.points.len(), self.k),
            });
        }
        for (i, row) in self.points.iter().enumerate() {
            if row.len() != self.dimension {
                return Err(IoError::Field {
                    path: path_str(path),
                    field: format!("points[{i}]"),
                    message: format!("{} coordinates, expected {}", row.len(), self.dimension),
                });
            }
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(IoError::Field {
                        path: path_str(path),
                        field: format!("points[{i}][{j}]"),
                        message: "non-finite value".into(),
                    });
                }
            }
        }
        if let Some(names) = &self.names {
            if names.len() != self.k {
                return Err(IoError::Field {
                    path: path_str(path),
                    field: "names".into(),
                    message: format!("{} names, but k = {}", names.len(), self.k),
                });
            }
            let mut seen = std::collections::BTreeSet::new();
            for n in names {
                if !seen.insert(n) {
                    return Err(IoError::Field {
                        path: path_str(path),
                        field: "names".into(),
                        message: format!("duplicate landmark name `{n}`"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Loads JSON, or points-only CSV when the extension is `.csv`.
    pub fn load(path: &Path) -> IoResult<Self> {
        if path.extension().and_then(|e| e.to_str()) == Some("csv") {
            return Self::load_csv_2d(path, None);
        }
        let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
            path: path_str(path),
            source,
        })?;
        let file: LandmarkFile =
            serde_json::from_str(&text).map_err(|e| IoError::ParseLine {
                path: path_str(path),
                line: e.line(),
                message: e.to_string(),
            })?;
        file.validate(path)?;
        Ok(file)
    }

    /// Points-only 2D CSV: one `x,y` line per landmark; `#` comments and an
    /// optional `x,y` header are ignored.
    pub fn load_csv_2d(path: &Path, names: Option<Vec<String>>) -> IoResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
            path: path_str(path),
            source,
        })?;
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if lineno == 0 && trimmed.to_ascii_lowercase().replace(' ', "") == "x,y" {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').collect();
            if fields.len() != 2 {
                return Err(IoError::ParseLine {
                    path: path_str(path),
                    line: lineno + 1,
                    message: format!("expected 2 comma-separated values, got {}", fields.len()),
                });
            }
            let mut row = Vec::with_capacity(2);
            for (fieldno, f) in fields.iter().enumerate() {
                let v: f64 = f.trim().parse().map_err(|_| IoError::ParseLine {
                    path: path_str(path),
                    line: lineno + 1,
                    message: format!("field {}: `{}` is not a number", fieldno + 1, f.trim()),
                })?;
                row.push(v);
            }
            points.push(row);
        }
        let file = LandmarkFile {
            dimension: 2,
            k: points.len(),
            names,
            units: None,
            points,
        };
        file.validate(path)?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> IoResult<()> {
        let mut text = serde_json::to_string_pretty(self).expect("serializable");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    /// Landmark matrix with landmarks as columns.
    pub fn to_configuration(&self, path: &Path) -> IoResult<Configuration> {
        self.validate(path)?;
        let mut data = nalgebra::DMatrix::zeros(self.dimension, self.k);
        for (i, row) in self.points.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                data[(j, i)] = *v;
            }
        }
        Configuration::new(data).map_err(|source| IoError::Shape {
            path: path_str(path),
            source,
        })
    }

    pub fn from_configuration(
        c: &Configuration,
        names: Option<Vec<String>>,
        units: Option<String>,
    ) -> Self {
        let m = c.ambient_dim();
        let k = c.landmark_count();
        let points = (0..k)
            .map(|i| (0..m).map(|j| c.matrix()[(j, i)]).collect())
            .collect();
        LandmarkFile {
            dimension: m,
            k,
            names,
            units,
            points,
        }
    }
}

/// A list of 3D landmark files sharing landmark count and name order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisFile {
    pub shapes: Vec<LandmarkFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl BasisFile {
    pub fn load(path: &Path) -> IoResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
            path: path_str(path),
            source,
        })?;
        let file: BasisFile = serde_json::from_str(&text).map_err(|e| IoError::ParseLine {
            path: path_str(path),
            line: e.line(),
            message: e.to_string(),
        })?;
        file.validate(path)?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> IoResult<()> {
        let mut text = serde_json::to_string_pretty(self).expect("serializable");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn validate(&self, path: &Path) -> IoResult<()> {
        if self.shapes.is_empty() {
            return Err(IoError::Field {
                path: path_str(path),
                field: "shapes".into(),
                message: "basis file contains no shapes".into(),
            });
        }
        let k = self.shapes[0].k;
        let names = &self.shapes[0].names;
        for (i, s) in self.shapes.iter().enumerate() {
            s.validate(path)?;
            if s.dimension != 3 {
                return Err(IoError::Field {
                    path: path_str(path),
                    field: format!("shapes[{i}].dimension"),
                    message: "basis shapes must be 3D".into(),
                });
            }
            if s.k != k {
                return Err(IoError::Field {
                    path: path_str(path),
                    field: format!("shapes[{i}].k"),
                    message: format!("landmark count {} differs from first shape's {k}", s.k),
                });
            }
            if s.names != *names {
                return Err(IoError::Field {
                    path: path_str(path),
                    field: format!("shapes[{i}].names"),
                    message: "landmark names must match across basis shapes".into(),
                });
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.shapes.len() {
                return Err(IoError::Field {
                    path: path_str(path),
                    field: "labels".into(),
                    message: format!(
                        "{} labels for {} shapes",
                        labels.len(),
                        self.shapes.len()
                    ),
                });
            }
        }
        Ok(())
    }

    /// Landmark names shared by all basis shapes.
    pub fn names(&self) -> Option<&[String]> {
        self.shapes[0].names.as_deref()
    }

    /// Builds the validated shape-space basis.
    pub fn to_basis_set(&self, path: &Path) -> IoResult<BasisSet> {
        let build = || -> KssResult<BasisSet> {
            let shapes = self
                .shapes
                .iter()
                .map(|s| {
                    let c = s
                        .to_configuration(path)
                        .map_err(|e| crate::error::Error::InvalidBasis(e.to_string()))?;
                    Ok(ShapePoint::new(to_preshape(&c)?))
                })
                .collect::<KssResult<Vec<_>>>()?;
            BasisSet::with_labels(shapes, self.labels.clone())
        };
        build().map_err(|source| IoError::Shape {
            path: path_str(path),
            source,
        })
    }

    /// Raw basis configurations (for the Euclidean baseline).
    pub fn to_configurations(&self, path: &Path) -> IoResult<Vec<Configuration>> {
        self.shapes.iter().map(|s| s.to_configuration(path)).collect()
    }
}

/// Serialized rotation with an explicit convention tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotationDoc {
    /// Always `rows-act-left`: the matrix multiplies configurations from the
    /// left, rows are the camera axes.
    pub convention: String,
    /// Row-major 3×3 entries.
    pub values: Vec<f64>,
}

impl RotationDoc {
    pub fn from_matrix(r: &nalgebra::DMatrix<f64>) -> Self {
        let mut values = Vec::with_capacity(9);
        for i in 0..3 {
            for j in 0..3 {
                values.push(r[(i, j)]);
            }
        }
        RotationDoc {
            convention: "rows-act-left".into(),
            values,
        }
    }
}

/// Machine-readable reconstruction result document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructionDocument {
    pub method: String,
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    pub rotation: RotationDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
    /// Reconstructed 3D landmarks, one row per landmark, in basis name order.
    pub points3d: Vec<[f64; 3]>,
    pub iterations: usize,
    pub restart_index: usize,
    pub warnings: Vec<String>,
    pub seed: u64,
}

impl ReconstructionDocument {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("serializable");
        text.push('\n');
        text
    }
}

impl fmt::Display for ReconstructionDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_json())
    }
}

/// Writes `bytes` to `path` atomically: temp file in the same directory,
/// then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> IoResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let wrap = |source: std::io::Error| IoError::Write {
        path: path_str(path),
        source,
    };
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d),
        None => tempfile::NamedTempFile::new_in("."),
    }
    .map_err(wrap)?;
    use std::io::Write;
    tmp.write_all(bytes).map_err(wrap)?;
    tmp.flush().map_err(wrap)?;
    tmp.persist(path).map_err(|e| wrap(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_file() -> LandmarkFile {
        LandmarkFile {
            dimension: 3,
            k: 4,
            names: Some(vec!["a".into(), "b".into(), "c".into(), "d".into()]),
            units: Some("mm".into()),
            points: vec![
                vec![0.0, 0.0, 0.0],
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
        }
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shape.json");
        let file = sample_file();
        file.save(&path).unwrap();
        let loaded = LandmarkFile::load(&path).unwrap();
        assert_eq!(loaded.k, 4);
        assert_eq!(loaded.points, file.points);
        assert_eq!(loaded.names, file.names);
    }

    #[test]
    fn validation_names_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        let mut file = sample_file();
        file.names = Some(vec!["a".into(), "a".into(), "c".into(), "d".into()]);
        let err = file.validate(&path).unwrap_err();
        assert!(err.to_string().contains("names"), "{err}");

        let mut file = sample_file();
        file.points.pop();
        let err = file.validate(&path).unwrap_err();
        assert!(err.to_string().contains("points"), "{err}");
    }

    #[test]
    fn csv_parse_and_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.csv");
        std::fs::write(&path, "x,y\n0.5,1.0\n-0.25, 2.5\n# comment\n3,4\n").unwrap();
        let file = LandmarkFile::load_csv_2d(&path, None).unwrap();
        assert_eq!(file.k, 3);
        assert_eq!(file.points[1], vec![-0.25, 2.5]);

        std::fs::write(&path, "0.5,oops\n").unwrap();
        let err = LandmarkFile::load_csv_2d(&path, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1") && msg.contains("oops"), "{msg}");
    }

    #[test]
    fn malformed_json_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.json");
        std::fs::write(&path, "{\n  \"dimension\": 3,\n  oops\n}\n").unwrap();
        let err = LandmarkFile::load(&path).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn basis_file_consistency() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("basis.json");
        let mut basis = BasisFile {
            shapes: vec![sample_file(), sample_file()],
            labels: None,
        };
        basis.shapes[1].points[0][0] = 9.0;
        basis.save(&path).unwrap();
        let loaded = BasisFile::load(&path).unwrap();
        assert_eq!(loaded.shapes.len(), 2);
        let set = loaded.to_basis_set(&path).unwrap();
        assert_eq!(set.len(), 2);

        let mut bad = loaded.clone();
        bad.shapes[1].names = Some(vec!["x".into(), "b".into(), "c".into(), "d".into()]);
        assert!(bad.validate(&path).is_err());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
    }

    #[test]
    fn configuration_round_trip_preserves_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let file = sample_file();
        let config = file.to_configuration(&path).unwrap();
        // Landmarks are columns; rows of the file map to columns here.
        assert_eq!(config.matrix()[(0, 1)], 1.0);
        assert_eq!(config.matrix()[(2, 3)], 1.0);
        let back = LandmarkFile::from_configuration(&config, file.names.clone(), None);
        assert_eq!(back.points, file.points);
    }
}
