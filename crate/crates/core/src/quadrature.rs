//! Quadrature rules on the reference triangle and on segments.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unsupported triangle quadrature order {0} (supported: 1 to 5)")]
pub struct QuadratureError(pub usize);

/// Triangle rule in barycentric coordinates. Weights sum to one, so
/// `sum_q w_q f(q) * area` approximates the integral over a triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl TriangleRule {
    /// Smallest built-in rule exact for polynomials of degree `order`.
    pub fn with_order(order: usize) -> Result<Self, QuadratureError> {
        match order {
            1 => Ok(Self::centroid()),
            2 => Ok(Self::edge_midpoints()),
            3 | 4 => Ok(Self::dunavant4()),
            5 => Ok(Self::dunavant5()),
            other => Err(QuadratureError(other)),
        }
    }

    pub fn centroid() -> Self {
        Self {
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![1.0],
            degree: 1,
        }
    }

    pub fn edge_midpoints() -> Self {
        Self {
            points: vec![[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]],
            weights: vec![1.0 / 3.0; 3],
            degree: 2,
        }
    }

    fn dunavant4() -> Self {
        let (a, wa) = (0.445_948_490_915_964_9, 0.223_381_589_678_011_47);
        let (b, wb) = (0.091_576_213_509_770_74, 0.109_951_743_655_321_87);
        let mut rule = Self {
            points: Vec::with_capacity(6),
            weights: Vec::with_capacity(6),
            degree: 4,
        };
        rule.push_orbit(a, wa);
        rule.push_orbit(b, wb);
        rule
    }

    fn dunavant5() -> Self {
        let mut rule = Self {
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![9.0 / 40.0],
            degree: 5,
        };
        let r = 15f64.sqrt();
        rule.push_orbit((6.0 + r) / 21.0, (155.0 + r) / 1200.0);
        rule.push_orbit((6.0 - r) / 21.0, (155.0 - r) / 1200.0);
        rule
    }

    /// Adds the three permutations of `(a, a, 1 - 2a)`.
    fn push_orbit(&mut self, a: f64, w: f64) {
        let c = 1.0 - 2.0 * a;
        self.points.extend([[a, a, c], [a, c, a], [c, a, a]]);
        self.weights.extend([w; 3]);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64; 3], f64)> + '_ {
        self.points.iter().zip(self.weights.iter().copied())
    }
}

/// Two-point Gauss rule on `[0, 1]`: `(parameter, weight)` pairs.
pub const GAUSS2_SEGMENT: [(f64, f64); 2] = [
    (0.5 - 0.288_675_134_594_812_9, 0.5),
    (0.5 + 0.288_675_134_594_812_9, 0.5),
];

pub fn physical_point(coords: &[[f64; 2]; 3], bary: &[f64; 3]) -> [f64; 2] {
    let mut p = [0.0; 2];
    for k in 0..3 {
        p[0] += bary[k] * coords[k][0];
        p[1] += bary[k] * coords[k][1];
    }
    p
}
