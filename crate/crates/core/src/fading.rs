//! Rician small-scale fading and the near-origin statistics of cascaded
//! (product) Rician channels.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{ensure_finite, ensure_nonnegative, ensure_positive, Result};

/// Power ratio in dB to linear.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Rician link: linear K-factor and mean power `Ω = E[|h|²]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RicianParams {
    k: f64,
    omega: f64,
}

impl RicianParams {
    pub fn new(k: f64, omega: f64) -> Result<Self> {
        ensure_nonnegative(k, "k")?;
        ensure_positive(omega, "omega")?;
        Ok(Self { k, omega })
    }

    pub fn from_db(k_db: f64, omega: f64) -> Result<Self> {
        ensure_finite(k_db, "k_db")?;
        Self::new(db_to_linear(k_db), omega)
    }

    pub fn rayleigh(omega: f64) -> Result<Self> {
        Self::new(0.0, omega)
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Power of the line-of-sight component, `ν² = KΩ/(K+1)`.
    pub fn los_power(&self) -> f64 {
        self.k * self.omega / (self.k + 1.0)
    }

    /// Total power of the scattered component, `Ω/(K+1)`.
    pub fn scatter_power(&self) -> f64 {
        self.omega / (self.k + 1.0)
    }

    /// `E[|h|] = σ·√(π/2)·L_{1/2}(−K)` with `σ² = Ω/(2(K+1))`.
    pub fn mean_amplitude(&self) -> f64 {
        let sigma = (0.5 * self.scatter_power()).sqrt();
        let x = 0.5 * self.k;
        let laguerre = (1.0 + self.k) * bessel_i0_scaled(x) + self.k * bessel_i1_scaled(x);
        sigma * (0.5 * PI).sqrt() * laguerre
    }

    /// `E[|h|⁴] = Ω²(K² + 4K + 2)/(K+1)²`.
    pub fn fourth_moment(&self) -> f64 {
        let k = self.k;
        self.omega * self.omega * (k * k + 4.0 * k + 2.0) / ((k + 1.0) * (k + 1.0))
    }
}

/// Log-distance path loss with a unit-gain 1 m reference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathLoss {
    pub distance: f64,
    pub exponent: f64,
}

impl PathLoss {
    pub fn new(distance: f64, exponent: f64) -> Result<Self> {
        ensure_positive(distance, "distance_m")?;
        ensure_positive(exponent, "path_loss_exponent")?;
        Ok(Self { distance, exponent })
    }

    /// Mean channel power `d^(−α)`.
    pub fn omega(&self) -> f64 {
        self.distance.powf(-self.exponent)
    }
}

/// Draws `h = ν·e^{jθ₀} + w`, with `θ₀` uniform and `w` circularly-symmetric
/// Gaussian of power `Ω/(K+1)`.
pub fn sample_rician<R: Rng + ?Sized>(params: &RicianParams, rng: &mut R) -> Complex64 {
    RicianSampler::new(params).sample(rng)
}

/// [`sample_rician`] with the amplitudes precomputed, for tight loops.
#[derive(Clone, Copy, Debug)]
pub struct RicianSampler {
    nu: f64,
    sigma: f64,
}

impl RicianSampler {
    pub fn new(params: &RicianParams) -> Self {
        Self {
            nu: params.los_power().sqrt(),
            sigma: (0.5 * params.scatter_power()).sqrt(),
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        let theta: f64 = rng.random::<f64>() * TAU;
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let (sin, cos) = theta.sin_cos();
        Complex64::new(self.nu * cos + self.sigma * x, self.nu * sin + self.sigma * y)
    }
}

/// Circularly-symmetric complex Gaussian with total power `power`.
pub fn sample_cn<R: Rng + ?Sized>(power: f64, rng: &mut R) -> Complex64 {
    let s = (0.5 * power).sqrt();
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    Complex64::new(s * x, s * y)
}

/// Leading coefficient `c` of the first-order expansion `f(x) ≈ c·x` for the
/// density of `|h|·|g|` near zero:
/// `c = 4(K_h+1)(K_g+1) / (Ω_h Ω_g e^{K_h+K_g})`.
///
/// The exact density also carries a `ln(1/x)` factor that this expansion
/// drops, so `c` is the product of the two single-link slopes rather than the
/// limit of `f(x)/x`.
pub fn product_pdf_slope(h: &RicianParams, g: &RicianParams) -> f64 {
    4.0 * (h.k + 1.0) * (g.k + 1.0) / (h.omega * g.omega * (h.k + g.k).exp())
}

/// Near-origin density of `Σ_{m=1}^{M} |h_m||g_m|`, the inverse Laplace
/// transform of `c^M t^{−2M}`: `c^M x^{2M−1} / (2M−1)!`.
pub fn cascaded_sum_pdf_asymptotic(h: &RicianParams, g: &RicianParams, m_elements: u32, x: f64) -> f64 {
    if x <= 0.0 || m_elements == 0 {
        return 0.0;
    }
    let m = f64::from(m_elements);
    let c = product_pdf_slope(h, g);
    (m * c.ln() + (2.0 * m - 1.0) * x.ln() - ln_gamma(2.0 * m)).exp()
}

/// Integral of [`cascaded_sum_pdf_asymptotic`] from 0 to `x`:
/// `c^M x^{2M} / (2M)!`.
pub fn cascaded_sum_cdf_asymptotic(h: &RicianParams, g: &RicianParams, m_elements: u32, x: f64) -> f64 {
    if x <= 0.0 || m_elements == 0 {
        return 0.0;
    }
    let m = f64::from(m_elements);
    let c = product_pdf_slope(h, g);
    (m * c.ln() + 2.0 * m * x.ln() - ln_gamma(2.0 * m + 1.0)).exp()
}

/// `e^{−x}·I₀(x)` for `x ≥ 0`.
pub fn bessel_i0_scaled(x: f64) -> f64 {
    bessel_scaled(0, x)
}

/// `e^{−x}·I₁(x)` for `x ≥ 0`.
pub fn bessel_i1_scaled(x: f64) -> f64 {
    bessel_scaled(1, x)
}

fn bessel_scaled(order: u32, x: f64) -> f64 {
    let x = x.abs();
    if x <= 30.0 {
        // power series, Σ (x/2)^{2k+n} / (k!(k+n)!)
        let half = 0.5 * x;
        let mut term = (0..order).fold(1.0, |t, i| t * half / f64::from(i + 1));
        let mut sum = term;
        let q = half * half;
        for k in 1..500u32 {
            term *= q / (f64::from(k) * f64::from(k + order));
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
        }
        sum * (-x).exp()
    } else {
        // Hankel asymptotic expansion
        let mu = 4.0 * f64::from(order * order);
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..60u32 {
            let odd = f64::from(2 * k - 1);
            let next = -term * (mu - odd * odd) / (f64::from(k) * 8.0 * x);
            if next.abs() >= term.abs() {
                break;
            }
            term = next;
            sum += term;
            if term.abs() < 1e-17 {
                break;
            }
        }
        sum / (TAU * x).sqrt()
    }
}
