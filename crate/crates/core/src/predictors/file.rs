use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::{ExpectationModel, Imputer};
use crate::data::RowRef;
use crate::error::{Error, Result};
use crate::estfn::Theta;

/// Precomputed predictions of the target columns, keyed by row id.
#[derive(Debug, Clone)]
pub struct FileImputer {
    targets: Vec<usize>,
    values: HashMap<u64, Vec<f64>>,
}

impl FileImputer {
    pub fn new(targets: Vec<usize>, values: HashMap<u64, Vec<f64>>) -> Result<Self> {
        if let Some((id, v)) = values.iter().find(|(_, v)| v.len() != targets.len()) {
            return Err(Error::Parse(format!(
                "row {id}: {} prediction columns, expected {}",
                v.len(),
                targets.len()
            )));
        }
        Ok(Self { targets, values })
    }
}

impl Imputer for FileImputer {
    fn targets(&self) -> &[usize] {
        &self.targets
    }

    fn predict(&self, row: RowRef<'_>) -> Result<Vec<f64>> {
        self.values.get(&row.id).cloned().ok_or(Error::MissingPrediction(row.id))
    }
}

/// Precomputed `F_r` values keyed by row id. The stored values do not depend
/// on `θ`, so the Jacobian is zero.
#[derive(Debug, Clone)]
pub struct FileExpectation {
    dim: usize,
    values: HashMap<u64, Vec<f64>>,
}

impl FileExpectation {
    pub fn new(dim: usize, values: HashMap<u64, Vec<f64>>) -> Result<Self> {
        if let Some((id, v)) = values.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::Parse(format!("row {id}: {} prediction columns, expected {dim}", v.len())));
        }
        Ok(Self { dim, values })
    }
}

impl ExpectationModel for FileExpectation {
    fn dim(&self) -> usize {
        self.dim
    }

    fn expect(&self, row: RowRef<'_>, _theta: &Theta) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let v = self.values.get(&row.id).ok_or(Error::MissingPrediction(row.id))?;
        Ok((DVector::from_column_slice(v), DMatrix::zeros(self.dim, self.dim)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_by_row_id() {
        let imp = FileImputer::new(vec![2], HashMap::from([(5, vec![1.5])])).unwrap();
        let v = [0.0; 3];
        let mask = "110".parse().unwrap();
        assert_eq!(imp.predict(RowRef { id: 5, mask, values: &v }).unwrap(), vec![1.5]);
        assert!(matches!(imp.predict(RowRef { id: 6, mask, values: &v }), Err(Error::MissingPrediction(6))));
        assert!(FileExpectation::new(2, HashMap::from([(1, vec![1.0])])).is_err());
    }
}
