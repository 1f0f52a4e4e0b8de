//! Closed-form scaling laws, high-SNR outage approximations and diversity
//! order estimation.
//!
//! Gains enter power ratios squared (`G_eff = |coefficient|²`). The
//! [`GainConvention::Literal`] variant keeps the unsquared amplitude where the
//! published expressions print it, so both readings can be compared.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{ensure_nonnegative, ensure_positive, Error, Result};
use crate::fading::RicianParams;
use crate::link::{AlignTarget, ElementConfig, Scenario, User};

/// Outage values above this are outside the small-argument regime of the
/// asymptotic expression.
pub const ASYMPTOTIC_REGIME_LIMIT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GainConvention {
    /// `|coefficient|²` wherever a power ratio is formed.
    #[default]
    Squared,
    /// The amplitude as printed: unsquared inside the combined noise and, for
    /// the aligned-user expression, in the bracket denominator.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_v2: f64,
    pub sigma_chi2: f64,
}

impl NoiseModel {
    pub fn new(sigma_v2: f64, sigma_chi2: f64) -> Result<Self> {
        ensure_nonnegative(sigma_v2, "sigma_v2")?;
        ensure_nonnegative(sigma_chi2, "sigma_chi2")?;
        if sigma_v2 == 0.0 && sigma_chi2 == 0.0 {
            return Err(Error::InvalidParameter {
                name: "sigma_chi2",
                reason: "element and receiver noise cannot both be zero".into(),
            });
        }
        Ok(Self { sigma_v2, sigma_chi2 })
    }

    pub fn for_user(scenario: &Scenario, user: User) -> Self {
        Self {
            sigma_v2: scenario.effective_element_noise(),
            sigma_chi2: scenario.user_noise(user),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutageQuery {
    /// Linear SNR threshold.
    pub gamma_target: f64,
    /// Transmit power in watts.
    pub p: f64,
}

impl OutageQuery {
    /// `gamma_target = 0` is accepted and yields zero outage everywhere.
    pub fn new(gamma_target: f64, p: f64) -> Result<Self> {
        ensure_nonnegative(gamma_target, "gamma_target")?;
        ensure_positive(p, "p")?;
        Ok(Self { gamma_target, p })
    }
}

fn coefficient_factor(scenario: &Scenario, user: User, convention: GainConvention) -> f64 {
    let amp = scenario.element.coefficient_amplitude(user);
    match convention {
        GainConvention::Squared => amp * amp,
        GainConvention::Literal => amp,
    }
}

/// `σ_Σ² = M·Ω_h·G_eff·σ_v² + σ_χ²` for the scenario's `M`.
pub fn combined_noise_variance(scenario: &Scenario, user: User) -> f64 {
    combined_noise_variance_with(scenario, user, GainConvention::Squared)
}

pub fn combined_noise_variance_with(scenario: &Scenario, user: User, convention: GainConvention) -> f64 {
    let noise = NoiseModel::for_user(scenario, user);
    scenario.m_elements as f64
        * scenario.user_link(user).omega()
        * coefficient_factor(scenario, user, convention)
        * noise.sigma_v2
        + noise.sigma_chi2
}

/// A mean-SNR prediction in two readings of the averaged sums.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSnr {
    /// Squared-mean form: `(E|Σ|)²` with the `π/4` factor.
    pub primary: f64,
    /// Full second moments `E|Σ|²`.
    pub second_moment: f64,
}

/// Mean SNR of a user whose cascaded terms are cophased.
fn aligned_mean_snr(scenario: &Scenario, user: User, m: usize) -> MeanSnr {
    let mf = m as f64;
    let p = scenario.transmit_power;
    let h = scenario.user_link(user);
    let g = &scenario.bs_link;
    let c2 = scenario.element.coefficient_amplitude(user).powi(2);
    let sv2 = scenario.effective_element_noise();
    let s2 = scenario.user_noise(user);
    let mu = h.mean_amplitude() * g.mean_amplitude();
    let primary = p * mf * mf * c2 * mu * mu / (mf * std::f64::consts::FRAC_PI_4 * c2 * h.omega() * sv2 + s2);
    let coherent = mf * mf * mu * mu + mf * (h.omega() * g.omega() - mu * mu);
    let second_moment = p * c2 * coherent / (mf * c2 * h.omega() * sv2 + s2);
    MeanSnr { primary, second_moment }
}

/// Mean SNR of a user whose cascaded phases are uniformly random.
fn unaligned_mean_snr(scenario: &Scenario, user: User, m: usize) -> MeanSnr {
    let mf = m as f64;
    let p = scenario.transmit_power;
    let h = scenario.user_link(user);
    let g = &scenario.bs_link;
    let c2 = scenario.element.coefficient_amplitude(user).powi(2);
    let sv2 = scenario.effective_element_noise();
    let s2 = scenario.user_noise(user);
    let q = std::f64::consts::FRAC_PI_4;
    MeanSnr {
        primary: p * mf * c2 * q * h.omega() * g.omega() / (mf * q * c2 * h.omega() * sv2 + s2),
        second_moment: p * mf * c2 * h.omega() * g.omega() / (mf * c2 * h.omega() * sv2 + s2),
    }
}

/// Mean SNRs `(user A, user B)` of a coupled surface steered towards user A.
pub fn scaling_coupled(scenario: &Scenario, m: usize) -> Result<(MeanSnr, MeanSnr)> {
    require_coupled(scenario)?;
    Ok((
        aligned_mean_snr(scenario, User::A, m),
        unaligned_mean_snr(scenario, User::B, m),
    ))
}

/// Large-`M` behaviour of the coupled scaling laws: `(lim γ̄^A/M, lim γ̄^B)`.
pub fn scaling_coupled_limits(scenario: &Scenario) -> Result<(f64, f64)> {
    require_coupled(scenario)?;
    let sv2 = scenario.element_noise_power;
    let p = scenario.transmit_power;
    let h = &scenario.user_a_link;
    let mu = h.mean_amplitude() * scenario.bs_link.mean_amplitude();
    let slope_a = p / sv2 * 4.0 * mu * mu / (std::f64::consts::PI * h.omega());
    let limit_b = p / sv2 * scenario.bs_link.omega();
    Ok((slope_a, limit_b))
}

/// Mean SNR of `user` when both users are cophased (independent or passive
/// elements).
pub fn scaling_independent(scenario: &Scenario, m: usize, user: User) -> Result<MeanSnr> {
    if !scenario.element.supports_joint_alignment() {
        return Err(Error::InvalidParameter {
            name: "element_config",
            reason: "joint-alignment scaling law needs independent or passive elements".into(),
        });
    }
    Ok(aligned_mean_snr(scenario, user, m))
}

/// `lim γ̄^χ/M` for jointly aligned users; infinite without element noise.
pub fn scaling_independent_limit(scenario: &Scenario, user: User) -> Result<f64> {
    scaling_independent(scenario, 1, user)?;
    let sv2 = scenario.effective_element_noise();
    let h = scenario.user_link(user);
    let mu = h.mean_amplitude() * scenario.bs_link.mean_amplitude();
    Ok(scenario.transmit_power / sv2 * 4.0 * mu * mu / (std::f64::consts::PI * h.omega()))
}

fn require_coupled(scenario: &Scenario) -> Result<()> {
    match scenario.element {
        ElementConfig::Coupled { .. } => Ok(()),
        _ => Err(Error::InvalidParameter {
            name: "element_config",
            reason: "coupled scaling law needs coupled elements".into(),
        }),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticOutage {
    /// May exceed 1 far outside the high-SNR regime; left unclipped.
    pub probability: f64,
    /// False when `probability > 0.1`.
    pub in_regime: bool,
}

/// High-SNR outage of a cophased user with `m` elements:
/// `[4(K_h+1)(K_g+1)σ_Σ²γ / (Ω_hΩ_g e^{K_h+K_g} G_eff)]^M · p^{−M} / (2M)!`.
pub fn outage_asymptotic(
    h: &RicianParams,
    g: &RicianParams,
    scenario: &Scenario,
    user: User,
    query: &OutageQuery,
    m: usize,
    convention: GainConvention,
) -> Result<AsymptoticOutage> {
    if m == 0 {
        return Err(Error::InvalidParameter {
            name: "m_elements",
            reason: "must be at least 1".into(),
        });
    }
    if query.gamma_target == 0.0 {
        return Ok(AsymptoticOutage {
            probability: 0.0,
            in_regime: true,
        });
    }
    let s = scenario.with_elements(m);
    let sigma2 = combined_noise_variance_with(&s, user, convention);
    let g_eff = coefficient_factor(&s, user, convention);
    let mf = m as f64;
    let ln_base = (4.0 * (h.k() + 1.0) * (g.k() + 1.0)).ln() + sigma2.ln() + query.gamma_target.ln()
        - h.omega().ln()
        - g.omega().ln()
        - h.k()
        - g.k()
        - g_eff.ln()
        - query.p.ln();
    let probability = (mf * ln_base - ln_gamma(2.0 * mf + 1.0)).exp();
    Ok(AsymptoticOutage {
        probability,
        in_regime: probability <= ASYMPTOTIC_REGIME_LIMIT,
    })
}

/// Outage of the coupled surface's non-aligned user, treating the random-phase
/// sum as circular Gaussian: `1 − exp(−γσ_Σ² / (MΩ_hΩ_g G_eff p))`.
///
/// Under [`GainConvention::Literal`] only `σ_Σ²` keeps the unsquared gain; the
/// denominator is squared in both readings.
pub fn outage_user_b_coupled(
    h_b: &RicianParams,
    g: &RicianParams,
    scenario: &Scenario,
    query: &OutageQuery,
    m: usize,
    convention: GainConvention,
) -> Result<f64> {
    outage_unaligned(h_b, g, scenario, User::B, query, m, convention)
}

/// The same Gaussian approximation for any user whose cascaded phases are
/// not steered.
pub fn outage_unaligned(
    h: &RicianParams,
    g: &RicianParams,
    scenario: &Scenario,
    user: User,
    query: &OutageQuery,
    m: usize,
    convention: GainConvention,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidParameter {
            name: "m_elements",
            reason: "must be at least 1".into(),
        });
    }
    let s = scenario.with_elements(m);
    let sigma2 = combined_noise_variance_with(&s, user, convention);
    let g_eff = coefficient_factor(&s, user, GainConvention::Squared);
    let x = query.gamma_target * sigma2 / (m as f64 * h.omega() * g.omega() * g_eff * query.p);
    Ok(-(-x).exp_m1())
}

/// Mean-SNR prediction for `user` under the given steering: the aligned form
/// for steered users, the random-phase form otherwise.
pub fn mean_snr_prediction(scenario: &Scenario, align: AlignTarget, user: User, m: usize) -> MeanSnr {
    if align.aligns(user) {
        aligned_mean_snr(scenario, user, m)
    } else {
        unaligned_mean_snr(scenario, user, m)
    }
}

/// Least-squares slope of `−ln P` against `ln p` over the top decade of `p`.
pub fn diversity_order(curve: &[(f64, f64)]) -> Result<f64> {
    if curve.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "diversity order needs at least 3 points, got {}",
            curve.len()
        )));
    }
    for &(p, _) in curve {
        ensure_positive(p, "p")?;
    }
    let p_max = curve.iter().map(|&(p, _)| p).fold(f64::MIN, f64::max);
    let mut window: Vec<(f64, f64)> = curve.iter().copied().filter(|&(p, _)| p >= p_max / 10.0).collect();
    if window.len() < 2 {
        // grid coarser than a decade: fall back to the two highest powers
        let mut sorted = curve.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        window = sorted[sorted.len() - 2..].to_vec();
    }
    if let Some(&(p, v)) = window.iter().find(|&&(_, v)| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InsufficientData(format!(
            "outage {v} at p = {p} in the fitting window; more trials are needed"
        )));
    }
    let pts: Vec<(f64, f64)> = window.iter().map(|&(p, v)| (p.ln(), -v.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|q| q.0).sum::<f64>() / n;
    let my = pts.iter().map(|q| q.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|q| (q.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|q| (q.0 - mx) * (q.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all points share one transmit power".into()));
    }
    Ok(sxy / sxx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalingLaw {
    /// Linear in `M` for the aligned user, bounded for the other.
    LinearOrBounded,
    Linear,
    Quadratic,
}

impl ScalingLaw {
    pub fn label(self) -> &'static str {
        match self {
            ScalingLaw::LinearOrBounded => "O(M) / O(1)",
            ScalingLaw::Linear => "O(M)",
            ScalingLaw::Quadratic => "O(M^2)",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub configuration: &'static str,
    pub sum_diversity: usize,
    pub scaling: ScalingLaw,
}

/// Sum diversity order and mean-SNR growth per configuration.
pub fn summary_table(m: usize) -> Vec<SummaryRow> {
    vec![
        SummaryRow {
            configuration: "active-coupled",
            sum_diversity: m + 1,
            scaling: ScalingLaw::LinearOrBounded,
        },
        SummaryRow {
            configuration: "active-independent",
            sum_diversity: 2 * m,
            scaling: ScalingLaw::Linear,
        },
        SummaryRow {
            configuration: "passive-lossless",
            sum_diversity: 2 * m,
            scaling: ScalingLaw::Quadratic,
        },
    ]
}
