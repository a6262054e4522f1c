//! Axis-aligned boxes used for state and input sets.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl AxisBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Invalid(format!(
                "box bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (lo, hi) in lower.iter().zip(&upper) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Invalid(format!("degenerate box side [{lo}, {hi}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The hypercube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn contains_in_interior(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo < *v && *v < *hi)
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .product()
    }

    /// Largest absolute coordinate over the box.
    pub fn max_abs_extent(&self) -> f64 {
        self.lower
            .iter()
            .chain(&self.upper)
            .fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| rng.random_range(*lo..*hi))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn rejects_degenerate_sides() {
        assert!(AxisBox::new(vec![0.0], vec![0.0]).is_err());
        assert!(AxisBox::new(vec![1.0, 0.0], vec![2.0]).is_err());
    }

    #[test]
    fn samples_stay_inside() {
        let b = AxisBox::cube(2, -2.0, 10.0).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(b.contains(&b.sample(&mut rng)));
        }
        assert_eq!(b.volume(), 144.0);
        assert_eq!(b.max_abs_extent(), 10.0);
    }
}
