use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Location;
use crate::error::{Error, Result};
use crate::features::{DAY_BINS, HOUR_BINS};
use crate::scalar::Scalar;

/// How `‖l_n − l_k‖` is measured in the spatial kernel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// Plain Euclidean norm over (lat, lon) in degrees.
    #[default]
    Euclidean,
    /// Great-circle central angle, expressed in degrees so `h` keeps its unit.
    Haversine,
}

impl DistanceMetric {
    pub fn distance<F: Scalar>(&self, a: &Location<F>, b: &Location<F>) -> F {
        match self {
            DistanceMetric::Euclidean => a.distance(b),
            DistanceMetric::Haversine => {
                let (la1, la2) = (a.lat.to_radians(), b.lat.to_radians());
                let dlat = la2 - la1;
                let dlon = (b.lon - a.lon).to_radians();
                let two = F::of(2.0);
                let s = (dlat / two).sin().powi(2)
                    + la1.cos() * la2.cos() * (dlon / two).sin().powi(2);
                (two * s.sqrt().min(F::one()).asin()).to_degrees()
            }
        }
    }
}

/// Learnable weights plus the fixed hyperparameters of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters<F> {
    /// Day-of-week weights, one row per category.
    pub w_day: Vec<[F; DAY_BINS]>,
    /// Hour-bin weights, one row per category.
    pub w_hour: Vec<[F; HOUR_BINS]>,
    /// `alpha[i][j]`: influence of a category-`j` event on category `i`.
    pub alpha: Vec<Vec<F>>,
    /// Temporal decay per hour.
    pub eta: F,
    /// Spatial bandwidth in degrees.
    pub h: F,
    /// Categorical prior over latent categories.
    pub prior: Vec<F>,
    #[serde(default)]
    pub distance: DistanceMetric,
}

impl<F: Scalar> ModelParameters<F> {
    /// All weights zero, uniform prior.
    pub fn zeros(k: usize, eta: F, h: F) -> Self {
        Self {
            w_day: vec![[F::zero(); DAY_BINS]; k],
            w_hour: vec![[F::zero(); HOUR_BINS]; k],
            alpha: vec![vec![F::zero(); k]; k],
            eta,
            h,
            prior: vec![F::one() / F::of(k as f64); k],
            distance: DistanceMetric::Euclidean,
        }
    }

    /// Weights ~ U(-0.1, 0.1), alpha ~ U(0, 0.1), uniform prior.
    pub fn random_init<R: Rng>(k: usize, eta: F, h: F, rng: &mut R) -> Self {
        let mut p = Self::zeros(k, eta, h);
        for c in 0..k {
            for w in p.w_day[c].iter_mut().chain(p.w_hour[c].iter_mut()) {
                *w = F::of(rng.random_range(-0.1..0.1));
            }
            for a in p.alpha[c].iter_mut() {
                *a = F::of(rng.random_range(0.0..0.1));
            }
        }
        p
    }

    pub fn n_categories(&self) -> usize {
        self.alpha.len()
    }

    /// Integral of the triggering kernel over the plane: `8 π h²`.
    pub fn spatial_mass(&self) -> F {
        F::of(8.0 * std::f64::consts::PI) * self.h * self.h
    }

    /// Expected number of offspring of category `i` from one category-`j`
    /// event over an unbounded horizon: `alpha[i][j] * 8πh² / η`.
    pub fn branching(&self, i: usize, j: usize) -> F {
        self.alpha[i][j] * self.spatial_mass() / self.eta
    }

    /// Stationarity proxy: the largest row sum of the branching matrix.
    pub fn max_branching_row_sum(&self) -> F {
        let k = self.n_categories();
        (0..k)
            .map(|i| (0..k).map(|j| self.branching(i, j)).sum::<F>())
            .fold(F::zero(), |a, b| a.max(b))
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_categories();
        if self.w_day.len() != k || self.w_hour.len() != k || self.prior.len() != k {
            return Err(Error::InvalidParameters(format!(
                "inconsistent category count (alpha {k}, w_day {}, w_hour {}, prior {})",
                self.w_day.len(),
                self.w_hour.len(),
                self.prior.len()
            )));
        }
        if self.alpha.iter().any(|row| row.len() != k) {
            return Err(Error::InvalidParameters("alpha is not square".into()));
        }
        if self
            .alpha
            .iter()
            .flatten()
            .any(|a| !a.is_finite() || *a < F::zero())
        {
            return Err(Error::InvalidParameters("alpha must be finite and >= 0".into()));
        }
        if !(self.eta > F::zero() && self.eta.is_finite()) {
            return Err(Error::InvalidParameters(format!("eta = {} must be > 0", self.eta)));
        }
        if !(self.h > F::zero() && self.h.is_finite()) {
            return Err(Error::InvalidParameters(format!("h = {} must be > 0", self.h)));
        }
        let total: F = self.prior.iter().copied().sum();
        if self.prior.iter().any(|p| *p < F::zero()) || (total - F::one()).abs() > F::of(1e-6) {
            return Err(Error::InvalidParameters("prior is not a probability vector".into()));
        }
        Ok(())
    }

    /// Converts to another scalar type.
    pub fn cast<G: Scalar>(&self) -> ModelParameters<G> {
        let g = |x: F| G::of(x.as_f64());
        ModelParameters {
            w_day: self.w_day.iter().map(|r| r.map(g)).collect(),
            w_hour: self.w_hour.iter().map(|r| r.map(g)).collect(),
            alpha: self.alpha.iter().map(|r| r.iter().map(|&x| g(x)).collect()).collect(),
            eta: g(self.eta),
            h: g(self.h),
            prior: self.prior.iter().map(|&x| g(x)).collect(),
            distance: self.distance,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_catches_bad_values() {
        let mut p = ModelParameters::<f64>::zeros(2, 1.0, 0.1);
        assert!(p.validate().is_ok());
        p.alpha[0][1] = -0.1;
        assert!(p.validate().is_err());
        let mut p = ModelParameters::<f64>::zeros(2, 0.0, 0.1);
        assert!(p.validate().is_err());
        p.eta = 1.0;
        p.prior = vec![0.7, 0.7];
        assert!(p.validate().is_err());
    }

    #[test]
    fn branching_proxy() {
        let mut p = ModelParameters::<f64>::zeros(2, 2.0, 0.1);
        p.alpha = vec![vec![1.0, 2.0], vec![0.5, 0.0]];
        let m = 8.0 * std::f64::consts::PI * 0.01 / 2.0;
        assert!((p.max_branching_row_sum() - 3.0 * m).abs() < 1e-12);
    }

    #[test]
    fn haversine_matches_euclidean_near_equator() {
        let a = Location::new(0.0, 0.0);
        let b = Location::new(0.003, 0.004);
        let e = DistanceMetric::Euclidean.distance(&a, &b);
        let h = DistanceMetric::Haversine.distance(&a, &b);
        assert!((e - 0.005_f64).abs() < 1e-15);
        assert!((h - e).abs() < 1e-9);
    }
}
