// SPDX-License-Identifier: Apache-2.0

use super::DataType;

/// Constant payload. Non-float dtypes store exact integer mantissas.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Int(Vec<i64>),
    Float(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::Int(v) => v.len(),
            TensorData::Float(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub dtype: DataType,
    pub data: TensorData,
}

impl Tensor {
    pub fn int(shape: Vec<usize>, dtype: DataType, data: Vec<i64>) -> Self {
        Tensor { shape, dtype, data: TensorData::Int(data) }
    }

    pub fn float(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Tensor { shape, dtype: DataType::Float32, data: TensorData::Float(data) }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Real values in f64. Exact for every non-float dtype used in practice
    /// (mantissas below 2^53).
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::Float(v) => v.clone(),
            TensorData::Int(v) => v.iter().map(|&m| self.dtype.mantissa_to_f64(m)).collect(),
        }
    }

    /// Integer mantissas, if the payload is exact.
    pub fn mantissas(&self) -> Option<&[i64]> {
        match &self.data {
            TensorData::Int(v) => Some(v),
            TensorData::Float(_) => None,
        }
    }

    /// Checks element count and domain membership.
    pub(crate) fn check(&self) -> Result<(), String> {
        if self.data.len() != self.numel() {
            return Err(format!(
                "element count {} does not match shape {:?}",
                self.data.len(),
                self.shape
            ));
        }
        match (&self.data, self.dtype) {
            (TensorData::Float(_), DataType::Float32) => Ok(()),
            (TensorData::Float(_), dt) => Err(format!("{dt} payload must be integers")),
            (TensorData::Int(_), DataType::Float32) => Err("FLOAT32 payload must be decimal floats".into()),
            (TensorData::Int(v), dt) => match v.iter().find(|&&m| !dt.contains_mantissa(m)) {
                Some(m) => Err(format!("value {m} outside {dt}")),
                None => Ok(()),
            },
        }
    }
}
