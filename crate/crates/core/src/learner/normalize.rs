use serde::{Deserialize, Serialize};

/// Smallest standard deviation kept; flatter features are left unscaled.
const MIN_STD: f64 = 1e-8;

/// Per-feature affine normalization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Fits mean and population std over rows of `dim` values.
    pub fn fit<'a, I: IntoIterator<Item = &'a [f64]>>(dim: usize, rows: I) -> Self {
        let mut count = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for row in rows {
            for chunk in row.chunks_exact(dim) {
                count += 1;
                for j in 0..dim {
                    let delta = chunk[j] - mean[j];
                    mean[j] += delta / count as f64;
                    m2[j] += delta * (chunk[j] - mean[j]);
                }
            }
        }
        if count == 0 {
            return Self::identity(dim);
        }
        let std = m2
            .iter()
            .map(|v| {
                let s = (v / count as f64).max(0.0).sqrt();
                if s > MIN_STD && s.is_finite() { s } else { 1.0 }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_valid(&self) -> bool {
        self.mean.len() == self.std.len()
            && self.mean.iter().all(|m| m.is_finite())
            && self.std.iter().all(|s| *s > 0.0 && s.is_finite())
    }

    pub fn normalize(&self, data: &[f64]) -> Vec<f64> {
        let d = self.dim();
        data.iter().enumerate().map(|(i, x)| (x - self.mean[i % d]) / self.std[i % d]).collect()
    }

    pub fn denormalize(&self, data: &[f64]) -> Vec<f64> {
        let d = self.dim();
        data.iter().enumerate().map(|(i, x)| x * self.std[i % d] + self.mean[i % d]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_feature_keeps_unit_scale() {
        let rows = [vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0]];
        let n = Normalization::fit(2, rows.iter().map(|r| r.as_slice()));
        assert_eq!(n.mean, vec![2.0, 5.0]);
        assert_eq!(n.std[1], 1.0);
        assert!((n.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(n.is_valid());
    }
}
