use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// One output token per user: row `u` of `matrix` is `z_u`.
///
/// Rows are indexed by dense user id, so the id ↔ row map is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct UserVocabulary {
    matrix: Array2<f64>,
}

impl UserVocabulary {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("user vocabulary has non-finite entries".into()));
        }
        Ok(UserVocabulary { matrix })
    }

    pub fn n_users(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row(&self, user: usize) -> ArrayView1<'_, f64> {
        self.matrix.row(user)
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut Array2<f64> {
        &mut self.matrix
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.matrix
    }
}
