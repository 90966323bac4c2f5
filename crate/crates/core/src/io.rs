//! On-disk formats: the binary ensemble tensor, hand-editable mask CSV, and
//! the JSON model file.
//!
//!ged Tensor layout: magic `EVSP`, version (u32, little endian), dims M, N,
//! K, R (u64 LE), M latitudes (f64 LE, radians), then M·N·K·R values
//! (f64 LE) in `(band, lon, time, realization)` order with the realization
//! index fastest. Writing then reading a tensor is bit-exact.

use crate::grid::{EnsembleField, GridError, LandMask, SphereGrid};
use crate::reml::FittedModel;
use crate::simulation::TrendField;
use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: [u8; 4] = *b"EVSP";
const TENSOR_VERSION: u32 = 1;
const MODEL_FORMAT: &str = "evspec-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("payload length mismatch: expected {expected} values, found {found}")]
    PayloadLength { expected: usize, found: usize },
    #[error("dimension overflow: {0}x{1}x{2}x{3} values do not fit in memory")]
    DimensionOverflow(u64, u64, u64, u64),
    #[error("invalid content: {0}")]
    Invalid(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// A raw tensor file: dimensions, latitudes and values, without the grid
/// invariants of an ensemble (normalizer grids use K = R = 1, surrogate
/// outputs may have a single realization).
#[derive(Debug, Clone)]
pub struct RawTensor {
    pub latitudes: Vec<f64>,
    pub values: Array4<f64>,
}

impl RawTensor {
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.values.dim()
    }
}

pub fn write_tensor_raw(
    path: &Path,
    latitudes: &[f64],
    values: &Array4<f64>,
) -> Result<(), IoError> {
    let (m, n, k, r) = values.dim();
    if latitudes.len() != m {
        return Err(IoError::Invalid(format!(
            "{} latitudes for {m} bands",
            latitudes.len()
        )));
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&TENSOR_VERSION.to_le_bytes())?;
    for d in [m, n, k, r] {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &lat in latitudes {
        w.write_all(&lat.to_le_bytes())?;
    }
    let standard = values.as_standard_layout();
    for &v in standard.as_slice().expect("standard layout") {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor_raw(path: &Path) -> Result<RawTensor, IoError> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|_| IoError::Format("file too short for the magic bytes".into()))?;
    if magic != MAGIC {
        return Err(IoError::Format(format!(
            "bad magic {magic:?}, expected {MAGIC:?} (\"EVSP\")"
        )));
    }
    let mut u32buf = [0u8; 4];
    reader
        .read_exact(&mut u32buf)
        .map_err(|_| IoError::Format("file too short for the version".into()))?;
    let version = u32::from_le_bytes(u32buf);
    if version != TENSOR_VERSION {
        return Err(IoError::Format(format!(
            "unsupported tensor version {version}, expected {TENSOR_VERSION}"
        )));
    }
    let mut u64buf = [0u8; 8];
    let mut dims = [0u64; 4];
    for d in dims.iter_mut() {
        reader
            .read_exact(&mut u64buf)
            .map_err(|_| IoError::Format("file too short for the dimensions".into()))?;
        *d = u64::from_le_bytes(u64buf);
    }
    let [m, n, k, r] = dims;
    let total = m
        .checked_mul(n)
        .and_then(|v| v.checked_mul(k))
        .and_then(|v| v.checked_mul(r))
        .filter(|&v| v > 0 && v <= (1u64 << 28))
        .ok_or(IoError::DimensionOverflow(m, n, k, r))?;

    let mut latitudes = Vec::with_capacity(m as usize);
    for _ in 0..m {
        reader
            .read_exact(&mut u64buf)
            .map_err(|_| IoError::Format("file too short for the latitude list".into()))?;
        let lat = f64::from_le_bytes(u64buf);
        if !lat.is_finite() {
            return Err(IoError::Invalid("non-finite latitude".into()));
        }
        latitudes.push(lat);
    }

    let mut values = Vec::with_capacity(total as usize);
    loop {
        match reader.read_exact(&mut u64buf) {
            Ok(()) => values.push(f64::from_le_bytes(u64buf)),
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(IoError::Io(e)),
        }
        if values.len() > total as usize {
            break;
        }
    }
    if values.len() != total as usize {
        return Err(IoError::PayloadLength { expected: total as usize, found: values.len() });
    }
    let values =
        Array4::from_shape_vec((m as usize, n as usize, k as usize, r as usize), values)
            .expect("length checked");
    Ok(RawTensor { latitudes, values })
}

/// Write an ensemble field with its grid's latitudes.
pub fn write_tensor(path: &Path, field: &EnsembleField) -> Result<(), IoError> {
    write_tensor_raw(path, field.grid().latitudes(), &field.values().to_owned())
}

/// Read an ensemble field, validating the grid invariants.
pub fn read_tensor(path: &Path) -> Result<EnsembleField, IoError> {
    let raw = read_tensor_raw(path)?;
    let (_, n, k, r) = raw.dims();
    let grid = SphereGrid::new(raw.latitudes, n, k, r)?;
    Ok(EnsembleField::new(grid, raw.values)?)
}

/// Write a mask as M rows of N comma-separated 0/1 entries.
pub fn write_mask_csv(path: &Path, mask: &LandMask) -> Result<(), IoError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for m in 0..mask.n_lat() {
        let row: Vec<String> = mask.row(m).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mask_csv(path: &Path) -> Result<LandMask, IoError> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<u8>> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<u8>, IoError> = line
            .split(',')
            .map(|tok| match tok.trim() {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(IoError::Invalid(format!(
                    "mask line {}: entry '{other}' is not 0 or 1",
                    line_no + 1
                ))),
            })
            .collect();
        rows.push(row?);
    }
    if rows.is_empty() {
        return Err(IoError::Invalid("mask file has no rows".into()));
    }
    let n = rows[0].len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(IoError::Invalid("mask rows have unequal lengths".into()));
    }
    let m = rows.len();
    let flat: Vec<u8> = rows.into_iter().flatten().collect();
    let values = Array2::from_shape_vec((m, n), flat).expect("length checked");
    Ok(LandMask::new(values)?)
}

/// JSON model file: a fitted model plus the optional stored trend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub model: FittedModel,
    pub trend: Option<TrendField>,
}

impl ModelFile {
    pub fn new(model: FittedModel, trend: Option<TrendField>) -> Self {
        Self { format: MODEL_FORMAT.into(), version: MODEL_VERSION, model, trend }
    }
}

pub fn write_model(path: &Path, file: &ModelFile) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(file)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<ModelFile, IoError> {
    let text = fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.format != MODEL_FORMAT {
        return Err(IoError::Format(format!(
            "unexpected model format '{}', expected '{MODEL_FORMAT}'",
            file.format
        )));
    }
    if file.version != MODEL_VERSION {
        return Err(IoError::Format(format!(
            "unsupported model version {}, expected {MODEL_VERSION}",
            file.version
        )));
    }
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    fn sample_field(seed: u64) -> EnsembleField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = SphereGrid::equally_spaced_deg(3, (-50.0, 50.0), 4, 5, 2).unwrap();
        let values = Array4::from_shape_fn(grid.shape(), |_| rng.gen_range(-5.0..5.0));
        EnsembleField::new(grid, values).unwrap()
    }

    #[test]
    fn tensor_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("field.evsp");
        let field = sample_field(1);
        write_tensor(&path, &field).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.grid(), field.grid());
        assert_eq!(back.values(), field.values());
        // bytes are stable across writes
        write_tensor(&dir.path().join("again.evsp"), &field).unwrap();
        let a = fs::read(&path).unwrap();
        let b = fs::read(dir.path().join("again.evsp")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tensor_errors_are_distinct() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("field.evsp");
        let field = sample_field(2);
        write_tensor(&path, &field).unwrap();

        // wrong magic
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        let bad_magic = dir.path().join("magic.evsp");
        fs::write(&bad_magic, &bytes).unwrap();
        assert!(matches!(read_tensor_raw(&bad_magic), Err(IoError::Format(_))));

        // truncated payload
        let bytes = fs::read(&path).unwrap();
        let truncated = dir.path().join("short.evsp");
        fs::write(&truncated, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(read_tensor_raw(&truncated), Err(IoError::PayloadLength { .. })));

        // trailing garbage
        let mut bytes = fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0u8; 16]);
        let long = dir.path().join("long.evsp");
        fs::write(&long, &bytes).unwrap();
        assert!(matches!(read_tensor_raw(&long), Err(IoError::PayloadLength { .. })));

        // absurd dimensions
        let mut bytes = fs::read(&path).unwrap();
        for b in &mut bytes[8..16] {
            *b = 0xff;
        }
        let overflow = dir.path().join("overflow.evsp");
        fs::write(&overflow, &bytes).unwrap();
        assert!(matches!(read_tensor_raw(&overflow), Err(IoError::DimensionOverflow(..))));
    }

    #[test]
    fn raw_tensor_accepts_degenerate_dims() {
        // normalizer grids use K = R = 1, which the ensemble type rejects
        let dir = tempdir().unwrap();
        let path = dir.path().join("sds.evsp");
        let values = Array4::from_elem((2, 3, 1, 1), 1.5);
        write_tensor_raw(&path, &[-0.1, 0.2], &values).unwrap();
        let raw = read_tensor_raw(&path).unwrap();
        assert_eq!(raw.dims(), (2, 3, 1, 1));
        assert!(read_tensor(&path).is_err());
    }

    #[test]
    fn mask_csv_round_trip_and_validation() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mask.csv");
        let mask = crate::grid::synthetic_mask(
            3,
            5,
            &crate::grid::MaskPattern::Random { p: 0.4, seed: 5 },
        )
        .unwrap();
        write_mask_csv(&path, &mask).unwrap();
        let back = read_mask_csv(&path).unwrap();
        assert_eq!(back, mask);

        fs::write(&path, "0,1,2\n").unwrap();
        assert!(matches!(read_mask_csv(&path), Err(IoError::Invalid(_))));
        fs::write(&path, "0,1\n0\n").unwrap();
        assert!(matches!(read_mask_csv(&path), Err(IoError::Invalid(_))));
    }

    #[test]
    fn model_file_round_trips_bit_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.json");
        let spec = crate::synthetic::GeneratorSpec {
            n_lat: 3,
            n_lon: 8,
            n_time: 10,
            ..Default::default()
        };
        let truth = crate::synthetic::truth_model(&spec).unwrap();
        let trend = crate::synthetic::truth_trend(&spec, &truth.grid);
        let file = ModelFile::new(truth, Some(trend));
        write_model(&path, &file).unwrap();
        let back = read_model(&path).unwrap();
        // serialization is shortest-round-trip decimal: a second write must
        // be byte-identical
        let again = dir.path().join("model2.json");
        write_model(&again, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
        assert_eq!(back.model.bands.len(), 3);
    }
}
