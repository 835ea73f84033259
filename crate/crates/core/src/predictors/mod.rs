//! Per-pattern proxies `F_r` for `E[ψF | X_r]`.
//!
//! A bank runs in one of two modes. In imputation mode each entry predicts the
//! required columns that pattern `r` does not observe, and the bank evaluates
//! `ψF` on the spliced row. In expectation mode each entry returns `F_r`
//! directly. Either way an entry only ever sees the columns of `r`, even when
//! the row observes more.

mod file;
mod gaussian;
mod linear;
mod noisy;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{RowRef, Schema};
use crate::error::{Error, Result};
use crate::estfn::{EstimatingFunction, Theta};
use crate::lattice::PatternMask;

pub use file::{FileExpectation, FileImputer};
pub use gaussian::{ols_conditional_moments, GaussianConditional, GaussianSpec, JointModel, OlsMoments, SampledExpectation};
pub use linear::{train_linear_predictor, LinearModel};
pub use noisy::{noisy_mixture_predictor, NoisyMixture, DEFAULT_NOISE_SD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionMode {
    Expectation,
    Imputation,
}

/// Predicts a fixed set of columns from the observed part of a row.
pub trait Imputer: Send + Sync + fmt::Debug {
    fn targets(&self) -> &[usize];

    /// Predictions aligned with [`Imputer::targets`].
    fn predict(&self, row: RowRef<'_>) -> Result<Vec<f64>>;
}

/// Returns `F_r(x_r, θ)` and its `θ`-Jacobian directly.
pub trait ExpectationModel: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn expect(&self, row: RowRef<'_>, theta: &Theta) -> Result<(DVector<f64>, DMatrix<f64>)>;
}

/// Predicts nothing. In imputation mode this makes `F_r = ψF` on rows where
/// `r` already covers every required column.
#[derive(Debug, Clone, Default)]
pub struct ObservedOnly;

impl Imputer for ObservedOnly {
    fn targets(&self) -> &[usize] {
        &[]
    }

    fn predict(&self, _row: RowRef<'_>) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }
}

/// Expectation-mode proxy for the mean target: `F = f(x) − θ`.
#[derive(Debug, Clone)]
pub struct MeanExpectation {
    model: Arc<dyn Imputer>,
}

impl MeanExpectation {
    pub fn new(model: Arc<dyn Imputer>) -> Result<Self> {
        if model.targets().len() != 1 {
            return Err(Error::PredictorDimension { expected: 1, found: model.targets().len() });
        }
        Ok(Self { model })
    }
}

impl ExpectationModel for MeanExpectation {
    fn dim(&self) -> usize {
        1
    }

    fn expect(&self, row: RowRef<'_>, theta: &Theta) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let f = self.model.predict(row)?[0];
        Ok((DVector::from_element(1, f - theta[0]), DMatrix::from_element(1, 1, -1.0)))
    }
}

#[derive(Debug, Clone)]
pub enum Predictor {
    Imputer(Arc<dyn Imputer>),
    Expectation(Arc<dyn ExpectationModel>),
}

#[derive(Debug, Clone)]
pub struct PredictorBank {
    mode: PredictionMode,
    ef: Arc<dyn EstimatingFunction>,
    schema: Arc<Schema>,
    entries: BTreeMap<PatternMask, Predictor>,
}

impl PredictorBank {
    pub fn new(mode: PredictionMode, ef: Arc<dyn EstimatingFunction>, schema: Arc<Schema>) -> Self {
        Self { mode, ef, schema, entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, r: PatternMask, predictor: Predictor) -> Result<()> {
        if r.width() != self.schema.width() {
            return Err(Error::MaskWidth { expected: self.schema.width(), found: r.width() });
        }
        if r.is_full() {
            return Err(Error::FullPatternArgument);
        }
        match (&predictor, self.mode) {
            (Predictor::Imputer(_), PredictionMode::Imputation) => {}
            (Predictor::Expectation(m), PredictionMode::Expectation) => {
                if m.dim() != self.ef.dim() {
                    return Err(Error::PredictorDimension { expected: self.ef.dim(), found: m.dim() });
                }
            }
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "predictor for {r} does not match the bank's {:?} mode",
                    self.mode
                )))
            }
        }
        self.entries.insert(r, predictor);
        Ok(())
    }

    pub fn with(mut self, r: PatternMask, predictor: Predictor) -> Result<Self> {
        self.insert(r, predictor)?;
        Ok(self)
    }

    pub fn mode(&self) -> PredictionMode {
        self.mode
    }

    pub fn ef(&self) -> &Arc<dyn EstimatingFunction> {
        &self.ef
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn patterns(&self) -> impl Iterator<Item = PatternMask> + '_ {
        self.entries.keys().copied()
    }

    pub fn get(&self, r: PatternMask) -> Option<&Predictor> {
        self.entries.get(&r)
    }

    /// Fails with `MissingPredictor` for the first pattern lacking an entry.
    pub fn require(&self, patterns: &[PatternMask]) -> Result<()> {
        match patterns.iter().find(|r| !self.entries.contains_key(r)) {
            Some(r) => Err(Error::MissingPredictor(r.to_string())),
            None => Ok(()),
        }
    }

    /// `F_r(X_r, θ)` with its `θ`-Jacobian on a row observing at least `r`.
    pub fn evaluate(&self, r: PatternMask, row: RowRef<'_>, theta: &Theta) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let predictor = self.entries.get(&r).ok_or_else(|| Error::MissingPredictor(r.to_string()))?;
        if !row.mask.is_superset_of(r) {
            return Err(Error::MaskMismatch { pattern: r.to_string(), observed: row.mask.to_string() });
        }
        let mut z = vec![f64::NAN; row.values.len()];
        for c in self.schema.columns_in(r) {
            z[c] = row.values[c];
        }
        let restricted = RowRef { id: row.id, mask: r, values: &z };
        match predictor {
            Predictor::Expectation(m) => m.expect(restricted, theta),
            Predictor::Imputer(m) => {
                let pred = m.predict(restricted)?;
                if pred.len() != m.targets().len() {
                    return Err(Error::PredictorDimension { expected: m.targets().len(), found: pred.len() });
                }
                for (&c, v) in m.targets().iter().zip(pred) {
                    if !r.observes(self.schema.modality_of_column(c)) {
                        z[c] = v;
                    }
                }
                let req = self.ef.required();
                for mdl in req.modalities() {
                    if !r.observes(mdl) && self.schema.columns_of(mdl).any(|c| z[c].is_nan()) {
                        return Err(Error::MissingModality {
                            row: row.id,
                            modality: self.schema.modalities()[mdl].name.clone(),
                        });
                    }
                }
                Ok((self.ef.evaluate(&z, theta), self.ef.jacobian(&z, theta)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ObservedDataset;
    use crate::estfn::{MeanEf, OlsEf};

    fn m(s: &str) -> PatternMask {
        s.parse().unwrap()
    }

    fn mean_setup() -> (Arc<Schema>, Arc<dyn EstimatingFunction>, Arc<dyn Imputer>) {
        let schema = Arc::new(Schema::with_sizes(&[("x1", 1), ("x2", 1), ("y", 1)]).unwrap());
        let ef: Arc<dyn EstimatingFunction> = Arc::new(MeanEf::new(&schema, "y").unwrap());
        // f(x1) = 3 + 2 x1
        let f: Arc<dyn Imputer> =
            Arc::new(LinearModel::from_coefficients(vec![0], vec![2], DMatrix::from_row_slice(2, 1, &[3.0, 2.0])).unwrap());
        (schema, ef, f)
    }

    #[test]
    fn mean_modes_coincide() {
        let (schema, ef, f) = mean_setup();
        let imp = PredictorBank::new(PredictionMode::Imputation, ef.clone(), schema.clone())
            .with(m("100"), Predictor::Imputer(f.clone()))
            .unwrap();
        let exp = PredictorBank::new(PredictionMode::Expectation, ef, schema.clone())
            .with(m("100"), Predictor::Expectation(Arc::new(MeanExpectation::new(f).unwrap())))
            .unwrap();
        let mut d = ObservedDataset::new(schema);
        d.push_masked(0, &[2.0, 1.0, 9.0], m("111"));
        d.push_masked(1, &[-1.5, 0.0, 0.0], m("100"));
        d.push_masked(2, &[0.25, 0.0, 4.0], m("101"));
        for theta in [0.0, 7.0, -2.5] {
            let t = Theta::from_vec(vec![theta]);
            for row in d.rows() {
                let a = imp.evaluate(m("100"), row, &t).unwrap();
                let b = exp.evaluate(m("100"), row, &t).unwrap();
                assert_eq!(a.0[0].to_bits(), b.0[0].to_bits());
                assert_eq!(a.1, b.1);
            }
        }
        // f(2) = 7, θ = 7 gives 0
        let row = d.row(0);
        assert_eq!(imp.evaluate(m("100"), row, &Theta::from_vec(vec![7.0])).unwrap().0[0], 0.0);
    }

    #[test]
    fn predictor_sees_only_its_pattern() {
        let (schema, ef, f) = mean_setup();
        let bank = PredictorBank::new(PredictionMode::Imputation, ef, schema.clone())
            .with(m("100"), Predictor::Imputer(f))
            .unwrap();
        let mut d = ObservedDataset::new(schema);
        d.push_masked(0, &[1.0, 5.0, 100.0], m("111"));
        // observed y = 100 must be replaced by the prediction f(1) = 5
        assert_eq!(bank.evaluate(m("100"), d.row(0), &Theta::zeros(1)).unwrap().0[0], 5.0);
    }

    #[test]
    fn mask_mismatch_and_missing_predictor() {
        let (schema, ef, f) = mean_setup();
        let bank = PredictorBank::new(PredictionMode::Imputation, ef, schema.clone())
            .with(m("110"), Predictor::Imputer(f))
            .unwrap();
        let mut d = ObservedDataset::new(schema);
        d.push_masked(0, &[1.0, 0.0, 2.0], m("101"));
        assert!(matches!(
            bank.evaluate(m("110"), d.row(0), &Theta::zeros(1)),
            Err(Error::MaskMismatch { .. })
        ));
        assert!(matches!(
            bank.evaluate(m("100"), d.row(0), &Theta::zeros(1)),
            Err(Error::MissingPredictor(_))
        ));
    }

    #[test]
    fn bank_rejects_full_pattern_and_mode_mix() {
        let (schema, ef, f) = mean_setup();
        let mut bank = PredictorBank::new(PredictionMode::Expectation, ef, schema);
        assert!(matches!(
            bank.insert(m("111"), Predictor::Expectation(Arc::new(MeanExpectation::new(f.clone()).unwrap()))),
            Err(Error::FullPatternArgument)
        ));
        assert!(bank.insert(m("100"), Predictor::Imputer(f)).is_err());
    }

    #[test]
    fn ols_imputation_splices_prediction() {
        let schema = Arc::new(Schema::with_sizes(&[("x1", 1), ("x2", 1), ("y", 1)]).unwrap());
        let ef: Arc<dyn EstimatingFunction> = Arc::new(OlsEf::new(&schema, &["x1", "x2"], "y").unwrap());
        // ĝ(x1) = (x2, y) = (0.5 + x1, 1 − x1)
        let g = LinearModel::from_coefficients(vec![0], vec![1, 2], DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 1.0, -1.0]))
            .unwrap();
        let bank = PredictorBank::new(PredictionMode::Imputation, ef, schema.clone())
            .with(m("100"), Predictor::Imputer(Arc::new(g)))
            .unwrap();
        let mut d = ObservedDataset::new(schema);
        d.push_masked(3, &[2.0, 0.0, 0.0], m("100"));
        let theta = Theta::from_vec(vec![0.5, -1.0]);
        let (v, j) = bank.evaluate(m("100"), d.row(0), &theta).unwrap();
        // ẑ = (2, 2.5, −1); residual = −1 − (1 − 2.5) = 0.5
        assert!((v[0] - 2.0 * 0.5).abs() < 1e-15);
        assert!((v[1] - 2.5 * 0.5).abs() < 1e-15);
        assert_eq!(j[(0, 1)], -5.0);
    }
}
