//! Self-describing JSON containers holding base64-encoded little-endian arrays.
//!
//! Every numeric array is stored as `{"dtype": "f64" | "f32" | "i64", "shape": [..], "data": "<base64>"}`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedArray {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub data: String,
}

impl EncodedArray {
    pub fn from_f64(shape: &[usize], values: &[f64]) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            dtype: "f64".into(),
            shape: shape.to_vec(),
            data: STANDARD.encode(bytes),
        }
    }

    pub fn from_f32(shape: &[usize], values: &[f32]) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            dtype: "f32".into(),
            shape: shape.to_vec(),
            data: STANDARD.encode(bytes),
        }
    }

    pub fn from_i64(shape: &[usize], values: &[i64]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            dtype: "i64".into(),
            shape: shape.to_vec(),
            data: STANDARD.encode(bytes),
        }
    }

    fn bytes(&self, width: usize) -> Result<Vec<u8>> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Parse(format!("bad base64 payload: {e}")))?;
        let n: usize = self.shape.iter().product();
        if bytes.len() != n * width {
            return Err(Error::Parse(format!(
                "array of shape {:?} needs {} bytes, payload has {}",
                self.shape,
                n * width,
                bytes.len()
            )));
        }
        Ok(bytes)
    }

    /// Decodes to f64 regardless of the stored float width.
    pub fn to_f64(&self) -> Result<Vec<f64>> {
        match self.dtype.as_str() {
            "f64" => Ok(self
                .bytes(8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()),
            "f32" => Ok(self
                .bytes(4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect()),
            other => Err(Error::Parse(format!("expected a float array, got dtype {other}"))),
        }
    }

    pub fn to_i64(&self) -> Result<Vec<i64>> {
        match self.dtype.as_str() {
            "i64" => Ok(self
                .bytes(8)?
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                .collect()),
            other => Err(Error::Parse(format!("expected dtype i64, got {other}"))),
        }
    }

    /// Decodes and checks the shape against `expected`; `None` entries match any extent.
    pub fn to_f64_shaped(&self, name: &str, expected: &[Option<usize>]) -> Result<Vec<f64>> {
        check_shape(name, &self.shape, expected)?;
        self.to_f64()
    }
}

pub fn check_shape(name: &str, shape: &[usize], expected: &[Option<usize>]) -> Result<()> {
    let ok = shape.len() == expected.len()
        && shape
            .iter()
            .zip(expected)
            .all(|(s, e)| e.map_or(true, |e| e == *s));
    if ok {
        Ok(())
    } else {
        Err(Error::Parse(format!(
            "field `{name}` has shape {shape:?}, expected {expected:?}"
        )))
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &std::path::Path) -> Result<T> {
    let bytes = std::fs::read(path)?;
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(Error::Parse(format!("{} is empty", path.display())));
    }
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn write_json<T: Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

/// A list of 3D points, `n × 3` meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointsFile {
    pub points: EncodedArray,
}

impl PointsFile {
    pub fn new(points: &[nalgebra::Vector3<f64>]) -> Self {
        Self {
            points: EncodedArray::from_f64(&[points.len(), 3], &crate::body_model::vec3_flat(points)),
        }
    }

    pub fn points(&self) -> Result<Vec<nalgebra::Vector3<f64>>> {
        let flat = self.points.to_f64_shaped("points", &[None, Some(3)])?;
        Ok(crate::body_model::vec3_unflat(&flat))
    }

    pub fn load(path: &std::path::Path) -> Result<Vec<nalgebra::Vector3<f64>>> {
        read_json::<Self>(path)?.points()
    }

    pub fn save(path: &std::path::Path, points: &[nalgebra::Vector3<f64>]) -> Result<()> {
        write_json(path, &Self::new(points))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_payload_decodes_as_f64() {
        let a = EncodedArray::from_f32(&[2], &[1.5, -2.25]);
        assert_eq!(a.to_f64().unwrap(), vec![1.5, -2.25]);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut a = EncodedArray::from_f64(&[3], &[1.0, 2.0, 3.0]);
        a.shape = vec![4];
        assert!(matches!(a.to_f64(), Err(Error::Parse(_))));
    }

    #[test]
    fn shape_wildcards() {
        assert!(check_shape("x", &[5, 3], &[None, Some(3)]).is_ok());
        assert!(check_shape("x", &[5, 2], &[None, Some(3)]).is_err());
        assert!(check_shape("x", &[5], &[None, Some(3)]).is_err());
    }
}
