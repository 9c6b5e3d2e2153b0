use crate::classes::ClassId;
use crate::decoder::Predictor;
use crate::error::Result;
use crate::num::Real;

use super::argmax_class;

/// A queryable class distribution over space, free space last.
pub trait ClassField: Sync {
    fn num_classes(&self) -> usize;

    fn probabilities(&self, points: &[[f64; 3]]) -> Result<Vec<Vec<f64>>>;

    /// Free-space probability and its spatial gradient.
    fn free_with_gradient(&self, points: &[[f64; 3]]) -> Result<Vec<(f64, [f64; 3])>>;

    fn free(&self, points: &[[f64; 3]]) -> Result<Vec<f64>> {
        let n = self.num_classes();
        Ok(self.probabilities(points)?.into_iter().map(|p| p[n]).collect())
    }

    /// Argmax over the semantic classes, ignoring free space.
    fn semantic_class(&self, points: &[[f64; 3]]) -> Result<Vec<ClassId>> {
        let n = self.num_classes();
        Ok(self.probabilities(points)?.iter().map(|p| argmax_class(&p[..n])).collect())
    }
}

impl<T: Real> ClassField for Predictor<'_, T> {
    fn num_classes(&self) -> usize {
        self.params.num_classes
    }

    fn probabilities(&self, points: &[[f64; 3]]) -> Result<Vec<Vec<f64>>> {
        Ok(self.predict(points)?.into_iter().map(|p| p.into_iter().map(Real::as_f64).collect()).collect())
    }

    fn free_with_gradient(&self, points: &[[f64; 3]]) -> Result<Vec<(f64, [f64; 3])>> {
        self.free_probability_gradient(points)
    }

    fn free(&self, points: &[[f64; 3]]) -> Result<Vec<f64>> {
        let n = self.params.num_classes;
        Ok(self.predict(points)?.into_iter().map(|p| p[n].as_f64()).collect())
    }
}
