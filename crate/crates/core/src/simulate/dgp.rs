//! Data-generating processes and their closed-form quantile partial effects.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::SimError;
use crate::model::PanelData;

/// Regressors are standard normal truncated to [-X_BOUND, X_BOUND].
pub const X_BOUND: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Y = X + a + sqrt(1 + X^2) e.
    LocationScale,
    /// Y = beta X + a + sqrt(1 + gamma X^2) e.
    Example1,
    /// Y = beta X + a + (sqrt(1 + gamma X^2) + sqrt(1 + theta a^2)) e.
    Example2,
    /// Y = beta X + a + X a + sqrt(1 + gamma X^2) e; not additively separable.
    Example3,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::LocationScale => "location-scale",
            Family::Example1 => "example1",
            Family::Example2 => "example2",
            Family::Example3 => "example3",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "location-scale" => Ok(Family::LocationScale),
            "example1" => Ok(Family::Example1),
            "example2" => Ok(Family::Example2),
            "example3" => Ok(Family::Example3),
            other => Err(format!("unknown dgp `{other}` (location-scale|example1|example2|example3)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorDist {
    StdNormal,
    StudentT3,
    /// e = 0 identically (the median of either symmetric law).
    Degenerate,
}

impl ErrorDist {
    pub fn name(self) -> &'static str {
        match self {
            ErrorDist::StdNormal => "normal",
            ErrorDist::StudentT3 => "t3",
            ErrorDist::Degenerate => "degenerate",
        }
    }

    /// Quantile function Q_e(tau).
    pub fn quantile(self, tau: f64) -> f64 {
        match self {
            ErrorDist::StdNormal => Normal::standard().inverse_cdf(tau),
            ErrorDist::StudentT3 => StudentsT::new(0.0, 1.0, 3.0)
                .expect("valid t(3)")
                .inverse_cdf(tau),
            ErrorDist::Degenerate => 0.0,
        }
    }
}

impl std::str::FromStr for ErrorDist {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "gaussian" => Ok(ErrorDist::StdNormal),
            "t3" | "t" => Ok(ErrorDist::StudentT3),
            "degenerate" | "none" => Ok(ErrorDist::Degenerate),
            other => Err(format!("unknown error distribution `{other}` (normal|t3)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpSpec {
    pub family: Family,
    pub beta: f64,
    pub gamma: f64,
    /// Used by Example2 only.
    pub theta: f64,
    pub error_dist: ErrorDist,
}

impl DgpSpec {
    /// The location-scale design with beta = gamma = 1.
    pub fn location_scale(error_dist: ErrorDist) -> Self {
        Self {
            family: Family::LocationScale,
            beta: 1.0,
            gamma: 1.0,
            theta: 0.0,
            error_dist,
        }
    }

    pub fn new(family: Family, beta: f64, gamma: f64, theta: f64, error_dist: ErrorDist) -> Self {
        let mut s = Self {
            family,
            beta,
            gamma,
            theta,
            error_dist,
        };
        if family == Family::LocationScale {
            s.beta = 1.0;
            s.gamma = 1.0;
        }
        s
    }

    /// Example3's conditional quantile is not additive in x and the unit effect.
    pub fn model_misspecified(&self) -> bool {
        self.family == Family::Example3
    }

    #[inline]
    fn outcome(&self, x: f64, alpha: f64, eps: f64) -> f64 {
        let scale_x = (1.0 + self.gamma * x * x).sqrt();
        match self.family {
            Family::LocationScale | Family::Example1 => self.beta * x + alpha + scale_x * eps,
            Family::Example2 => {
                self.beta * x + alpha + (scale_x + (1.0 + self.theta * alpha * alpha).sqrt()) * eps
            }
            Family::Example3 => self.beta * x + alpha + x * alpha + scale_x * eps,
        }
    }
}

/// beta_tau(x) = d/dx q_tau(x) where a closed form exists.
pub fn true_qpe(spec: &DgpSpec, x: f64, tau: f64) -> Result<f64, SimError> {
    let q = spec.error_dist.quantile(tau);
    match spec.family {
        Family::LocationScale | Family::Example1 | Family::Example2 => {
            let g = spec.gamma;
            Ok(spec.beta + q * g * x / (1.0 + g * x * x).sqrt())
        }
        Family::Example3 => Err(SimError::Unsupported(
            "example3 (the partial effect depends on the unit effect)".into(),
        )),
    }
}

/// Second derivative of q_tau at x, used as a curvature reference.
pub fn true_curvature(spec: &DgpSpec, x: f64, tau: f64) -> Result<f64, SimError> {
    let q = spec.error_dist.quantile(tau);
    match spec.family {
        Family::LocationScale | Family::Example1 | Family::Example2 => {
            let g = spec.gamma;
            Ok(q * g / (1.0 + g * x * x).powf(1.5))
        }
        Family::Example3 => Err(SimError::Unsupported("example3".into())),
    }
}

/// Named random streams within one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Regressor = 1,
    UnitEffect = 2,
    Error = 3,
}

/// Counter-based generator keyed by `(seed, replication, stream)`.
pub fn stream_rng(seed: u64, replication: u64, stream: Stream) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&replication.to_le_bytes());
    key[16..24].copy_from_slice(b"panelqpe");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream as u64);
    rng
}

fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let v: f64 = StandardNormal.sample(rng);
        if v.abs() <= X_BOUND {
            return v;
        }
    }
}

/// Simulates an N x T panel; fully determined by `seed`.
pub fn gen_panel(spec: &DgpSpec, n: usize, t: usize, seed: u64) -> PanelData {
    gen_panel_keyed(spec, n, t, seed, 0)
}

/// Simulates the panel of replication `replication` under `seed`.
pub fn gen_panel_keyed(spec: &DgpSpec, n: usize, t: usize, seed: u64, replication: u64) -> PanelData {
    assert!(n >= 1 && t >= 1, "panel needs at least one unit and one period");
    let mut rx = stream_rng(seed, replication, Stream::Regressor);
    let mut ra = stream_rng(seed, replication, Stream::UnitEffect);
    let mut re = stream_rng(seed, replication, Stream::Error);
    let t3 = StudentT::new(3.0).expect("valid t(3)");
    let alpha: Vec<f64> = (0..n).map(|_| ra.sample(StandardNormal)).collect();
    let mut x = Vec::with_capacity(n * t);
    let mut y = Vec::with_capacity(n * t);
    for a in alpha {
        for _ in 0..t {
            let xv = truncated_normal(&mut rx);
            let e = match spec.error_dist {
                ErrorDist::StdNormal => re.sample(StandardNormal),
                ErrorDist::StudentT3 => t3.sample(&mut re),
                ErrorDist::Degenerate => 0.0,
            };
            x.push(xv);
            y.push(spec.outcome(xv, a, e));
        }
    }
    PanelData::from_dense(n, t, 1, y, x).expect("simulated panel is finite and balanced")
}
