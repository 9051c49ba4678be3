//! State feature maps for linear-in-features policy means.

use nalgebra::DVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// `(state, 1)`.
    Affine,
    /// `(state, upper-triangle products, 1)`.
    Quadratic,
}

/// Maps raw state values to the feature vector the policy mean is linear in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureMap {
    pub kind: FeatureKind,
}

impl FeatureMap {
    pub fn affine() -> Self {
        FeatureMap {
            kind: FeatureKind::Affine,
        }
    }

    pub fn quadratic() -> Self {
        FeatureMap {
            kind: FeatureKind::Quadratic,
        }
    }

    pub fn dim(&self, state_dim: usize) -> usize {
        match self.kind {
            FeatureKind::Affine => state_dim + 1,
            FeatureKind::Quadratic => state_dim + state_dim * (state_dim + 1) / 2 + 1,
        }
    }

    pub fn map(&self, values: &DVector<f64>) -> DVector<f64> {
        let d = values.len();
        let mut out = Vec::with_capacity(self.dim(d));
        out.extend(values.iter().copied());
        if self.kind == FeatureKind::Quadratic {
            for i in 0..d {
                for j in i..d {
                    out.push(values[i] * values[j]);
                }
            }
        }
        out.push(1.0);
        DVector::from_vec(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_appends_a_constant() {
        let f = FeatureMap::affine();
        let phi = f.map(&DVector::from_vec(vec![2.0, -1.0]));
        assert_eq!(phi.as_slice(), &[2.0, -1.0, 1.0]);
        assert_eq!(f.dim(2), 3);
    }

    #[test]
    fn quadratic_includes_cross_terms() {
        let f = FeatureMap::quadratic();
        let phi = f.map(&DVector::from_vec(vec![2.0, 3.0]));
        assert_eq!(phi.as_slice(), &[2.0, 3.0, 4.0, 6.0, 9.0, 1.0]);
        assert_eq!(f.dim(2), 6);
    }
}
