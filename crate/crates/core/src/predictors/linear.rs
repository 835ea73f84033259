use nalgebra::{DMatrix, DVector};

use super::Imputer;
use crate::data::{ObservedDataset, RowRef};
use crate::error::{Error, Result};
use crate::lattice::PatternMask;

/// Affine map from input columns (plus intercept) to target columns.
#[derive(Debug, Clone)]
pub struct LinearModel {
    inputs: Vec<usize>,
    targets: Vec<usize>,
    /// `(1 + inputs) × targets`; row 0 is the intercept.
    coef: DMatrix<f64>,
}

impl LinearModel {
    pub fn from_coefficients(inputs: Vec<usize>, targets: Vec<usize>, coef: DMatrix<f64>) -> Result<Self> {
        if coef.nrows() != inputs.len() + 1 || coef.ncols() != targets.len() {
            return Err(Error::InvalidConfig(format!(
                "coefficient matrix is {}×{}, expected {}×{}",
                coef.nrows(),
                coef.ncols(),
                inputs.len() + 1,
                targets.len()
            )));
        }
        Ok(Self { inputs, targets, coef })
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coef
    }

    pub fn inputs(&self) -> &[usize] {
        &self.inputs
    }
}

impl Imputer for LinearModel {
    fn targets(&self) -> &[usize] {
        &self.targets
    }

    fn predict(&self, row: RowRef<'_>) -> Result<Vec<f64>> {
        let mut out: Vec<f64> = self.coef.row(0).iter().copied().collect();
        for (k, &c) in self.inputs.iter().enumerate() {
            let x = row.values[c];
            if x.is_nan() {
                return Err(Error::MissingModality { row: row.id, modality: format!("column {c}") });
            }
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.coef[(k + 1, j)] * x;
            }
        }
        Ok(out)
    }
}

/// Least-squares fit of the `targets` modalities on the `inputs` modalities
/// (with intercept), over rows observing both.
pub fn train_linear_predictor(data: &ObservedDataset, inputs: PatternMask, targets: PatternMask) -> Result<LinearModel> {
    let schema = data.schema();
    let in_cols = schema.columns_in(inputs);
    let out_cols = schema.columns_in(targets);
    let need = inputs.union(targets);
    let rows: Vec<RowRef<'_>> = data.rows().filter(|r| r.mask.is_superset_of(need)).collect();
    let p = in_cols.len() + 1;
    if rows.len() < p {
        return Err(Error::RankDeficient);
    }
    let x = DMatrix::from_fn(rows.len(), p, |i, j| if j == 0 { 1.0 } else { rows[i].values[in_cols[j - 1]] });
    let y = DMatrix::from_fn(rows.len(), out_cols.len(), |i, j| rows[i].values[out_cols[j]]);
    // Column scaling makes the rank threshold unit-free.
    let scale = DVector::from_fn(p, |j, _| x.column(j).norm().max(f64::MIN_POSITIVE));
    let xs = DMatrix::from_fn(x.nrows(), p, |i, j| x[(i, j)] / scale[j]);
    let svd = xs.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-10) {
        return Err(Error::RankDeficient);
    }
    let b = svd.solve(&y, 0.0).map_err(|_| Error::RankDeficient)?;
    let coef = DMatrix::from_fn(p, out_cols.len(), |i, j| b[(i, j)] / scale[i]);
    LinearModel::from_coefficients(in_cols, out_cols, coef)
}
