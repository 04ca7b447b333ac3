//! Localization kernel K, smoothing kernel g with survival function G, and
//! the kernel-moment constants used by the variance and bias formulas.

mod moments;
pub mod quadrature;

pub use moments::{compute_moments, compute_moments_with, BoxGeometry, MomentSet, DEFAULT_NODES};

/// One-dimensional base kernel with support [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BaseKernel {
    #[default]
    Epanechnikov,
    Uniform,
    Biweight,
}

impl BaseKernel {
    #[inline]
    pub fn value(self, u: f64) -> f64 {
        if !(-1.0..=1.0).contains(&u) {
            return 0.0;
        }
        match self {
            BaseKernel::Epanechnikov => 0.75 * (1.0 - u * u),
            BaseKernel::Uniform => 0.5,
            BaseKernel::Biweight => {
                let s = 1.0 - u * u;
                0.9375 * s * s
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaseKernel::Epanechnikov => "epanechnikov",
            BaseKernel::Uniform => "uniform",
            BaseKernel::Biweight => "biweight",
        }
    }
}

impl std::str::FromStr for BaseKernel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "epanechnikov" | "epa" => Ok(BaseKernel::Epanechnikov),
            "uniform" => Ok(BaseKernel::Uniform),
            "biweight" | "quartic" => Ok(BaseKernel::Biweight),
            other => Err(format!("unknown kernel `{other}` (epanechnikov|uniform|biweight)")),
        }
    }
}

/// Product kernel over `dim` coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelSpec {
    pub base: BaseKernel,
    pub dim: usize,
}

impl KernelSpec {
    pub fn new(base: BaseKernel, dim: usize) -> Self {
        assert!(dim >= 1, "kernel dimension must be positive");
        Self { base, dim }
    }

    pub fn epanechnikov(dim: usize) -> Self {
        Self::new(BaseKernel::Epanechnikov, dim)
    }

    /// K(v) = prod_k k(v_k); zero outside [-1, 1]^d.
    #[inline]
    pub fn value(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.dim);
        let mut out = 1.0;
        for &c in v {
            out *= self.base.value(c);
            if out == 0.0 {
                return 0.0;
            }
        }
        out
    }
}

/// Product-kernel value at `v`.
pub fn kernel_value(spec: &KernelSpec, v: &[f64]) -> f64 {
    spec.value(v)
}

/// Symmetric polynomial smoothing kernel g on [-1, 1] of order m.
///
/// Coefficients are stored in ascending powers together with those of g',
/// g'' and of the antiderivative used for G(z) = 1 - int_{-inf}^z g.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherSpec {
    order: usize,
    coeffs: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    anti: Vec<f64>,
    anti_at_minus_one: f64,
}

impl SmootherSpec {
    /// g(u) = 105/64 (1 - 5u^2 + 7u^4 - 3u^6) on [-1, 1], a fourth-order kernel.
    pub fn fourth_order() -> Self {
        let c = 105.0 / 64.0;
        Self::from_coefficients(vec![c, 0.0, -5.0 * c, 0.0, 7.0 * c, 0.0, -3.0 * c], 4)
    }

    /// Builds a smoother from ascending polynomial coefficients.
    ///
    /// Panics when the polynomial has odd terms or `order < 4`; the moment
    /// conditions themselves are checked in tests, not here.
    pub fn from_coefficients(coeffs: Vec<f64>, order: usize) -> Self {
        assert!(order >= 4, "smoothing kernel order must be at least 4");
        assert!(
            coeffs.iter().skip(1).step_by(2).all(|&c| c == 0.0),
            "smoothing kernel must be even"
        );
        let d1 = poly_derivative(&coeffs);
        let d2 = poly_derivative(&d1);
        let mut anti = vec![0.0; coeffs.len() + 1];
        for (j, &c) in coeffs.iter().enumerate() {
            anti[j + 1] = c / (j as f64 + 1.0);
        }
        let anti_at_minus_one = poly_eval(&anti, -1.0);
        Self {
            order,
            coeffs,
            d1,
            d2,
            anti,
            anti_at_minus_one,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    #[inline]
    pub fn g(&self, v: f64) -> f64 {
        if (-1.0..=1.0).contains(&v) {
            poly_eval(&self.coeffs, v)
        } else {
            0.0
        }
    }

    /// Survival function G(z) = 1 - int_{-1}^{z} g(u) du, clamped outside [-1, 1].
    #[inline]
    #[allow(non_snake_case)]
    pub fn G(&self, z: f64) -> f64 {
        if z <= -1.0 {
            1.0
        } else if z >= 1.0 {
            0.0
        } else {
            1.0 - (poly_eval(&self.anti, z) - self.anti_at_minus_one)
        }
    }

    /// (g(v), g'(v), g''(v)); all zero outside [-1, 1].
    #[inline]
    pub fn derivs(&self, v: f64) -> (f64, f64, f64) {
        if (-1.0..=1.0).contains(&v) {
            (poly_eval(&self.coeffs, v), poly_eval(&self.d1, v), poly_eval(&self.d2, v))
        } else {
            (0.0, 0.0, 0.0)
        }
    }
}

impl Default for SmootherSpec {
    fn default() -> Self {
        Self::fourth_order()
    }
}

pub fn smoother_g(spec: &SmootherSpec, v: f64) -> f64 {
    spec.g(v)
}

#[allow(non_snake_case)]
pub fn smoother_G(spec: &SmootherSpec, z: f64) -> f64 {
    spec.G(z)
}

pub fn smoother_derivs(spec: &SmootherSpec, v: f64) -> (f64, f64, f64) {
    spec.derivs(v)
}

#[inline]
fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

fn poly_derivative(c: &[f64]) -> Vec<f64> {
    if c.len() <= 1 {
        return vec![0.0];
    }
    c.iter().enumerate().skip(1).map(|(j, &a)| a * j as f64).collect()
}
