//! Rhombi-slit coefficient model.
//!
//! The slit opening `xi` enters the cell kinematics through
//!
//! ```text
//! mu1(xi) = cos(xi) - alpha sin(xi)      mu2(xi) = cos(xi) + beta sin(xi)
//! G12(xi) = -mu1'(xi) / mu2(xi)          G21(xi) = mu2'(xi) / mu1(xi)
//! ```
//!
//! and the divergence-form operator uses `B(xi) = diag(-G21(xi), G12(xi))`.
//! Both `G` functions have poles where `mu1` or `mu2` vanish, so the operator
//! works with the cut-off `B_hat`, which freezes `xi` to `[xi_minus, xi_plus]`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul};

use num_complex::Complex64;
use thiserror::Error;

/// Magnitude below which a `mu` denominator is considered a pole.
pub const POLE_TOLERANCE: f64 = 1e-14;
/// Threshold on `det B_hat` for the PDE type classification.
pub const TYPE_TOLERANCE: f64 = 1e-12;

const BOUND_SAMPLES: usize = 100_000;
const ZERO_SAMPLES: usize = 10_000;
const SAFETY_FACTOR: f64 = 1.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("alpha must be <= 0 and beta >= 0 (got alpha = {alpha}, beta = {beta})")]
    Parameters { alpha: f64, beta: f64 },
    #[error("cut-off interval [{xi_minus}, {xi_plus}] must satisfy -pi/2 <= xi_minus <= 0 <= xi_plus <= pi/2")]
    Interval { xi_minus: f64, xi_plus: f64 },
    #[error("cut-off interval contains a pole of Gamma: {which} vanishes near xi = {location:.4}")]
    Pole { which: &'static str, location: f64 },
}

/// Diagonal 2x2 tensor `diag(d11, d22)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagTensor2<T> {
    pub d11: T,
    pub d22: T,
}

impl<T> DiagTensor2<T> {
    pub const fn new(d11: T, d22: T) -> Self {
        Self { d11, d22 }
    }
}

impl DiagTensor2<f64> {
    pub const IDENTITY: Self = Self::new(1.0, 1.0);
    pub const ZERO: Self = Self::new(0.0, 0.0);

    pub fn det(&self) -> f64 {
        self.d11 * self.d22
    }

    /// `self + i * epsilon * I`.
    pub fn with_dissipation(&self, epsilon: f64) -> DiagTensor2<Complex64> {
        DiagTensor2::new(
            Complex64::new(self.d11, epsilon),
            Complex64::new(self.d22, epsilon),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.d11.abs().max(self.d22.abs())
    }
}

impl<T: Add<Output = T>> Add for DiagTensor2<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.d11 + rhs.d11, self.d22 + rhs.d22)
    }
}

impl<T: Mul<f64, Output = T>> Mul<f64> for DiagTensor2<T> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.d11 * rhs, self.d22 * rhs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PdeType {
    Elliptic,
    Degenerate,
    Hyperbolic,
}

impl PdeType {
    pub fn from_det(det: f64) -> Self {
        if det > TYPE_TOLERANCE {
            Self::Elliptic
        } else if det < -TYPE_TOLERANCE {
            Self::Hyperbolic
        } else {
            Self::Degenerate
        }
    }
}

/// Validated rhombi-slit material with its cut-off interval and the derived
/// sup bound `M` and Lipschitz constant `K` of `B_hat`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialModel {
    alpha: f64,
    beta: f64,
    xi_minus: f64,
    xi_plus: f64,
    bound: f64,
    lipschitz: f64,
}

impl MaterialModel {
    pub fn new(alpha: f64, beta: f64, xi_minus: f64, xi_plus: f64) -> Result<Self, MaterialError> {
        let mut model = Self {
            alpha,
            beta,
            xi_minus,
            xi_plus,
            bound: 0.0,
            lipschitz: 0.0,
        };
        let (m, k) = model.validate()?;
        model.bound = m;
        model.lipschitz = k;
        Ok(model)
    }

    /// Material with the default cut-off interval `[-pi/4, pi/3]`.
    pub fn with_default_cutoff(alpha: f64, beta: f64) -> Result<Self, MaterialError> {
        Self::new(alpha, beta, -PI / 4.0, PI / 3.0)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn xi_minus(&self) -> f64 {
        self.xi_minus
    }

    pub fn xi_plus(&self) -> f64 {
        self.xi_plus
    }

    /// Uniform bound `M` on the entries of `B_hat`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Lipschitz constant `K` of `B_hat`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn mu1(&self, xi: f64) -> f64 {
        xi.cos() - self.alpha * xi.sin()
    }

    pub fn mu2(&self, xi: f64) -> f64 {
        xi.cos() + self.beta * xi.sin()
    }

    pub fn dmu1(&self, xi: f64) -> f64 {
        -xi.sin() - self.alpha * xi.cos()
    }

    pub fn dmu2(&self, xi: f64) -> f64 {
        -xi.sin() + self.beta * xi.cos()
    }

    fn d2mu1(&self, xi: f64) -> f64 {
        -xi.cos() + self.alpha * xi.sin()
    }

    fn d2mu2(&self, xi: f64) -> f64 {
        -xi.cos() - self.beta * xi.sin()
    }

    pub fn gamma12(&self, xi: f64) -> Result<f64, MaterialError> {
        let den = self.mu2(xi);
        if den.abs() < POLE_TOLERANCE {
            return Err(MaterialError::Pole {
                which: "mu2",
                location: xi,
            });
        }
        Ok(-self.dmu1(xi) / den)
    }

    pub fn gamma21(&self, xi: f64) -> Result<f64, MaterialError> {
        let den = self.mu1(xi);
        if den.abs() < POLE_TOLERANCE {
            return Err(MaterialError::Pole {
                which: "mu1",
                location: xi,
            });
        }
        Ok(self.dmu2(xi) / den)
    }

    pub fn clamp(&self, xi: f64) -> f64 {
        xi.clamp(self.xi_minus, self.xi_plus)
    }

    pub fn is_clamped(&self, xi: f64) -> bool {
        xi < self.xi_minus || xi > self.xi_plus
    }

    /// Cut-off coefficients `(G12_hat, G21_hat)`.
    pub fn gamma_hat(&self, xi: f64) -> (f64, f64) {
        let c = self.clamp(xi);
        (-self.dmu1(c) / self.mu2(c), self.dmu2(c) / self.mu1(c))
    }

    /// `B_hat(xi) = diag(-G21_hat(xi), G12_hat(xi))`.
    pub fn b_hat(&self, xi: f64) -> DiagTensor2<f64> {
        let (g12, g21) = self.gamma_hat(xi);
        DiagTensor2::new(-g21, g12)
    }

    /// Derivative of `B_hat` in `xi`. Zero strictly outside the cut-off
    /// interval; at the kinks the interior one-sided value is returned. A
    /// single-point interval freezes `B_hat`, so the derivative is zero.
    pub fn db_hat_dxi(&self, xi: f64) -> DiagTensor2<f64> {
        if self.xi_minus >= self.xi_plus || self.is_clamped(xi) {
            return DiagTensor2::ZERO;
        }
        self.db_smooth(xi)
    }

    fn db_smooth(&self, xi: f64) -> DiagTensor2<f64> {
        let (m1, m2) = (self.mu1(xi), self.mu2(xi));
        let (d1, d2) = (self.dmu1(xi), self.dmu2(xi));
        let (dd1, dd2) = (self.d2mu1(xi), self.d2mu2(xi));
        // d/dxi (-mu2'/mu1) and d/dxi (-mu1'/mu2)
        let d11 = -(dd2 * m1 - d2 * d1) / (m1 * m1);
        let d22 = -(dd1 * m2 - d1 * d2) / (m2 * m2);
        DiagTensor2::new(d11, d22)
    }

    /// Shape tensor `A(xi) = diag(mu1(xi), mu2(xi))` on the raw opening.
    pub fn a_eff(&self, xi: f64) -> DiagTensor2<f64> {
        DiagTensor2::new(self.mu1(xi), self.mu2(xi))
    }

    pub fn classify_type(&self, xi: f64) -> PdeType {
        PdeType::from_det(self.b_hat(xi).det())
    }

    /// Checks the parameters and that neither `mu` vanishes on the cut-off
    /// interval, then computes `(M, K)` by dense sampling.
    pub fn validate(&self) -> Result<(f64, f64), MaterialError> {
        let (alpha, beta, lo, hi) = (self.alpha, self.beta, self.xi_minus, self.xi_plus);
        if !(alpha <= 0.0 && beta >= 0.0) || !alpha.is_finite() || !beta.is_finite() {
            return Err(MaterialError::Parameters { alpha, beta });
        }
        if !((-FRAC_PI_2..=0.0).contains(&lo) && (0.0..=FRAC_PI_2).contains(&hi)) {
            return Err(MaterialError::Interval {
                xi_minus: lo,
                xi_plus: hi,
            });
        }

        // mu1 = sqrt(1 + alpha^2) cos(xi + atan(alpha)) and
        // mu2 = sqrt(1 + beta^2) cos(xi - atan(beta)): one zero per period of
        // length pi, so every zero in [-pi/2, pi/2] is found in closed form.
        let zeros = |shift: f64| {
            (-2..=2)
                .map(move |k| FRAC_PI_2 + shift + k as f64 * PI)
                .filter(|z| (-FRAC_PI_2 - 1e-12..=FRAC_PI_2 + 1e-12).contains(z))
        };
        let mu_checks: [(&'static str, f64, fn(&Self, f64) -> f64); 2] = [
            ("mu1", -alpha.atan(), Self::mu1),
            ("mu2", beta.atan(), Self::mu2),
        ];
        for (which, shift, mu) in mu_checks {
            if let Some(z) = zeros(shift).find(|z| (lo..=hi).contains(z)) {
                return Err(MaterialError::Pole { which, location: z });
            }
            let mut sign = mu(self, lo).signum();
            for i in 0..=ZERO_SAMPLES {
                let xi = lo + (hi - lo) * i as f64 / ZERO_SAMPLES as f64;
                let v = mu(self, xi);
                if v.abs() < POLE_TOLERANCE || v.signum() != sign {
                    return Err(MaterialError::Pole {
                        which,
                        location: xi,
                    });
                }
                sign = v.signum();
            }
        }

        let mut m: f64 = 0.0;
        let mut k: f64 = 0.0;
        for i in 0..=BOUND_SAMPLES {
            let xi = lo + (hi - lo) * i as f64 / BOUND_SAMPLES as f64;
            let (g12, g21) = self.gamma_hat(xi);
            m = m.max(g12.abs()).max(g21.abs());
            k = k.max(self.db_smooth(xi).max_abs());
        }
        Ok((m * SAFETY_FACTOR, k * SAFETY_FACTOR))
    }
}

/// Canonical rotation matrix `R(gamma)`.
pub fn rotation(gamma: f64) -> [[f64; 2]; 2] {
    let (s, c) = gamma.sin_cos();
    [[c, -s], [s, c]]
}
