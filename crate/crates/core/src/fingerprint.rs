use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FingerprintError {
    #[error("fingerprint needs vocab_size > hidden_size >= 1, got {vocab_size}x{hidden_size}")]
    Shape {
        vocab_size: usize,
        hidden_size: usize,
    },
    #[error("non-finite weight {value} at row {row}, column {col}")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("payload has {found} values, expected {expected}")]
    PayloadLength { expected: usize, found: usize },
}

/// The retained last linear layer of the victim model: a `|V| x h` matrix
/// mapping hidden states to logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    model_id: String,
    weights: DMatrix<f64>,
}

impl Fingerprint {
    pub fn new(
        model_id: impl Into<String>,
        weights: DMatrix<f64>,
    ) -> Result<Self, FingerprintError> {
        let (vocab_size, hidden_size) = weights.shape();
        if hidden_size == 0 || vocab_size <= hidden_size {
            return Err(FingerprintError::Shape {
                vocab_size,
                hidden_size,
            });
        }
        for col in 0..hidden_size {
            for row in 0..vocab_size {
                let value = weights[(row, col)];
                if !value.is_finite() {
                    return Err(FingerprintError::NonFinite { row, col, value });
                }
            }
        }
        Ok(Self {
            model_id: model_id.into(),
            weights,
        })
    }

    /// Builds a fingerprint from a row-major payload (one vocabulary row after another).
    pub fn from_row_major(
        model_id: impl Into<String>,
        vocab_size: usize,
        hidden_size: usize,
        values: &[f64],
    ) -> Result<Self, FingerprintError> {
        let expected = vocab_size.saturating_mul(hidden_size);
        if values.len() != expected {
            return Err(FingerprintError::PayloadLength {
                expected,
                found: values.len(),
            });
        }
        Self::new(
            model_id,
            DMatrix::from_row_slice(vocab_size, hidden_size, values),
        )
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.nrows()
    }

    pub fn hidden_size(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Row-major copy of the weights, the on-disk order.
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.weights.len());
        for row in self.weights.row_iter() {
            out.extend(row.iter().copied());
        }
        out
    }
}
