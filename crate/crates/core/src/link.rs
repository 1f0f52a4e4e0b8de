//! Two-user downlink through an active surface: channel draws, cophasing and
//! the instantaneous received SNR.
//!
//! The base station sits on side A. User A is served by reflection
//! (`R^A`), user B by transmission (`T^{BA}`). For user `χ`,
//!
//! ```text
//! γ = p·|Σ h_m G e^{jφ_m} g_m|² / (|Σ h_m G e^{jφ_m}|²·σ_v² + σ_χ²)
//! ```

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::element::{coupled_coefficients, independent_coefficients, AmpPort, ComplexGain, TRMatrix};
use crate::error::{ensure_positive, Error, Result};
use crate::fading::{dbm_to_watts, sample_cn, PathLoss, RicianParams, RicianSampler};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum User {
    A,
    B,
}

impl User {
    pub fn label(self) -> &'static str {
        match self {
            User::A => "a",
            User::B => "b",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignTarget {
    UserA,
    UserB,
    Both,
}

impl AlignTarget {
    pub fn aligns(self, user: User) -> bool {
        matches!(
            (self, user),
            (AlignTarget::Both, _) | (AlignTarget::UserA, User::A) | (AlignTarget::UserB, User::B)
        )
    }
}

/// Hardware configuration applied uniformly to every element.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ElementConfig {
    /// One amplifier per element; reflection and transmission phases are
    /// locked ±π/2 apart.
    Coupled { gain: ComplexGain, amp_port: AmpPort },
    /// Two amplifiers per element. Per-user coefficient magnitudes come from
    /// the configured gains; phases are set per element by cophasing.
    Independent { g2: ComplexGain, g3: ComplexGain },
    /// Passive-lossless baseline: `|R| = |T| = 1/√2`, independently tunable
    /// phases, no element noise.
    PassiveLossless,
}

impl ElementConfig {
    /// The element's T&R matrix before any per-element phase rotation.
    pub fn base_matrix(&self) -> Result<TRMatrix> {
        match *self {
            ElementConfig::Coupled { gain, amp_port } => coupled_coefficients(gain, amp_port),
            ElementConfig::Independent { g2, g3 } => independent_coefficients(g2, g3),
            ElementConfig::PassiveLossless => {
                let r = Complex64::new(FRAC_1_SQRT_2, 0.0);
                let t = Complex64::new(0.0, FRAC_1_SQRT_2);
                Ok(TRMatrix {
                    r_a: r,
                    r_b: r,
                    t_ab: t,
                    t_ba: t,
                })
            }
        }
    }

    /// `|R^A|` for user A and `|T^{BA}|` for user B.
    pub fn coefficient_amplitude(&self, user: User) -> f64 {
        let m = self.base_matrix().expect("validated configuration");
        match user {
            User::A => m.r_a.norm(),
            User::B => m.t_ba.norm(),
        }
    }

    /// `∠T^{BA} − ∠R^A` of the unrotated element; the phase lock used when
    /// only one side is steered.
    pub fn locked_offset(&self) -> f64 {
        let m = self.base_matrix().expect("validated configuration");
        m.t_ba.arg() - m.r_a.arg()
    }

    pub fn supports_joint_alignment(&self) -> bool {
        !matches!(self, ElementConfig::Coupled { .. })
    }

    pub fn is_active(&self) -> bool {
        !matches!(self, ElementConfig::PassiveLossless)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ElementConfig::Coupled { .. } => "coupled",
            ElementConfig::Independent { .. } => "independent",
            ElementConfig::PassiveLossless => "passive",
        }
    }
}

/// Full system description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub m_elements: usize,
    pub element: ElementConfig,
    pub bs_link: RicianParams,
    pub user_a_link: RicianParams,
    pub user_b_link: RicianParams,
    /// `σ_v²` in watts.
    pub element_noise_power: f64,
    /// `σ_A²` in watts.
    pub user_noise_power_a: f64,
    /// `σ_B²` in watts.
    pub user_noise_power_b: f64,
    /// `p` in watts.
    pub transmit_power: f64,
}

/// Defaults of the numerical setup.
pub mod defaults {
    pub const USER_NOISE_DBM: f64 = -10.0;
    pub const ELEMENT_NOISE_DBM: f64 = -20.0;
    pub const AMPLIFIER_GAIN_DB: f64 = 1.5;
    pub const PATH_LOSS_EXPONENT: f64 = 2.2;
    pub const K_FACTOR_DB: f64 = 1.5;
    pub const ELEMENT_SPACING_WAVELENGTHS: f64 = 0.5;
    /// Link distances are not part of the published setup; users sit at the
    /// 10 m used for the radiation-pattern geometry and the base station is
    /// placed at the same range.
    pub const LINK_DISTANCE_M: f64 = 10.0;
    pub const TRANSMIT_POWER_DBM: f64 = 30.0;
    pub const M_ELEMENTS: usize = 16;
    /// Phase of `G̃₃` relative to `G̃₂` for the independent element; 90°
    /// splits the power equally between reflection and transmission.
    pub const INDEPENDENT_SPLIT_DEG: f64 = 90.0;
    pub const GAMMA_TARGET_DB: f64 = 0.0;
}

impl Scenario {
    /// Default scenario with the given element hardware.
    pub fn with_defaults(element: ElementConfig) -> Self {
        let omega = PathLoss::new(defaults::LINK_DISTANCE_M, defaults::PATH_LOSS_EXPONENT)
            .expect("valid defaults")
            .omega();
        let link = RicianParams::from_db(defaults::K_FACTOR_DB, omega).expect("valid defaults");
        Self {
            m_elements: defaults::M_ELEMENTS,
            element,
            bs_link: link,
            user_a_link: link,
            user_b_link: link,
            element_noise_power: dbm_to_watts(defaults::ELEMENT_NOISE_DBM),
            user_noise_power_a: dbm_to_watts(defaults::USER_NOISE_DBM),
            user_noise_power_b: dbm_to_watts(defaults::USER_NOISE_DBM),
            transmit_power: dbm_to_watts(defaults::TRANSMIT_POWER_DBM),
        }
    }

    pub fn default_coupled() -> Self {
        Self::with_defaults(ElementConfig::Coupled {
            gain: ComplexGain::from_db(defaults::AMPLIFIER_GAIN_DB, 0.0).expect("valid defaults"),
            amp_port: AmpPort::Port2,
        })
    }

    pub fn default_independent() -> Self {
        Self::with_defaults(ElementConfig::Independent {
            g2: ComplexGain::from_db(defaults::AMPLIFIER_GAIN_DB, 0.0).expect("valid defaults"),
            g3: ComplexGain::from_db(defaults::AMPLIFIER_GAIN_DB, defaults::INDEPENDENT_SPLIT_DEG)
                .expect("valid defaults"),
        })
    }

    pub fn default_passive() -> Self {
        Self::with_defaults(ElementConfig::PassiveLossless)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_elements == 0 {
            return Err(Error::InvalidParameter {
                name: "m_elements",
                reason: "must be at least 1".into(),
            });
        }
        ensure_positive(self.element_noise_power, "element_noise_power")?;
        ensure_positive(self.user_noise_power_a, "user_noise_power_a")?;
        ensure_positive(self.user_noise_power_b, "user_noise_power_b")?;
        ensure_positive(self.transmit_power, "transmit_power")?;
        for link in [&self.bs_link, &self.user_a_link, &self.user_b_link] {
            RicianParams::new(link.k(), link.omega())?;
        }
        self.element.base_matrix()?;
        Ok(())
    }

    pub fn with_elements(&self, m: usize) -> Self {
        Self {
            m_elements: m,
            ..self.clone()
        }
    }

    pub fn with_transmit_power(&self, p: f64) -> Self {
        Self {
            transmit_power: p,
            ..self.clone()
        }
    }

    pub fn with_element(&self, element: ElementConfig) -> Self {
        Self {
            element,
            ..self.clone()
        }
    }

    pub fn user_link(&self, user: User) -> &RicianParams {
        match user {
            User::A => &self.user_a_link,
            User::B => &self.user_b_link,
        }
    }

    pub fn user_noise(&self, user: User) -> f64 {
        match user {
            User::A => self.user_noise_power_a,
            User::B => self.user_noise_power_b,
        }
    }

    /// Element noise actually injected: zero for passive elements.
    pub fn effective_element_noise(&self) -> f64 {
        if self.element.is_active() {
            self.element_noise_power
        } else {
            0.0
        }
    }
}

/// One realization of all small-scale channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelDraw {
    /// BS → element.
    pub g: Vec<Complex64>,
    /// Element → user A.
    pub h_a: Vec<Complex64>,
    /// Element → user B.
    pub h_b: Vec<Complex64>,
}

impl ChannelDraw {
    pub fn sample<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Self {
        let mut draw = Self {
            g: Vec::with_capacity(scenario.m_elements),
            h_a: Vec::with_capacity(scenario.m_elements),
            h_b: Vec::with_capacity(scenario.m_elements),
        };
        draw.resample(scenario, rng);
        draw
    }

    /// Refills in place; draws all `g`, then all `h_A`, then all `h_B`.
    pub fn resample<R: Rng + ?Sized>(&mut self, scenario: &Scenario, rng: &mut R) {
        let m = scenario.m_elements;
        for (buf, link) in [
            (&mut self.g, &scenario.bs_link),
            (&mut self.h_a, &scenario.user_a_link),
            (&mut self.h_b, &scenario.user_b_link),
        ] {
            let sampler = RicianSampler::new(link);
            buf.clear();
            buf.extend((0..m).map(|_| sampler.sample(rng)));
        }
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn user(&self, user: User) -> &[Complex64] {
        match user {
            User::A => &self.h_a,
            User::B => &self.h_b,
        }
    }
}

/// Per-element coefficient phases: `φ^A_m = ∠R^A_m`, `φ^B_m = ∠T^{BA}_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementPhases {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl ElementPhases {
    pub fn user(&self, user: User) -> &[f64] {
        match user {
            User::A => &self.a,
            User::B => &self.b,
        }
    }
}

fn cophase_angle(h: Complex64, g: Complex64) -> f64 {
    -(h * g).arg()
}

/// Chooses per-element phases so the cascaded terms of the aligned user(s)
/// add coherently. A one-sided alignment drags the other side along through
/// the hardware phase lock of the element.
pub fn cophase_phases(draw: &ChannelDraw, scenario: &Scenario, align: AlignTarget) -> Result<ElementPhases> {
    let offset = scenario.element.locked_offset();
    let n = draw.len();
    let (a, b) = match align {
        AlignTarget::UserA => {
            let a: Vec<f64> = (0..n).map(|m| cophase_angle(draw.h_a[m], draw.g[m])).collect();
            let b = a.iter().map(|x| x + offset).collect();
            (a, b)
        }
        AlignTarget::UserB => {
            let b: Vec<f64> = (0..n).map(|m| cophase_angle(draw.h_b[m], draw.g[m])).collect();
            let a = b.iter().map(|x| x - offset).collect();
            (a, b)
        }
        AlignTarget::Both => {
            if !scenario.element.supports_joint_alignment() {
                return Err(Error::BothAlignmentUnsupported);
            }
            (
                (0..n).map(|m| cophase_angle(draw.h_a[m], draw.g[m])).collect(),
                (0..n).map(|m| cophase_angle(draw.h_b[m], draw.g[m])).collect(),
            )
        }
    };
    Ok(ElementPhases { a, b })
}

/// Instantaneous received SNR of `user`.
pub fn received_snr(draw: &ChannelDraw, phases: &ElementPhases, scenario: &Scenario, user: User) -> f64 {
    let amp = scenario.element.coefficient_amplitude(user);
    let h = draw.user(user);
    let phi = phases.user(user);
    let mut signal = Complex64::new(0.0, 0.0);
    let mut noise_gain = Complex64::new(0.0, 0.0);
    for ((hm, gm), &p) in h.iter().zip(&draw.g).zip(phi) {
        let w = hm * Complex64::from_polar(amp, p);
        signal += w * gm;
        noise_gain += w;
    }
    snr_from_sums(signal, noise_gain, scenario, user)
}

fn snr_from_sums(signal: Complex64, noise_gain: Complex64, scenario: &Scenario, user: User) -> f64 {
    scenario.transmit_power * signal.norm_sqr()
        / (noise_gain.norm_sqr() * scenario.effective_element_noise() + scenario.user_noise(user))
}

/// Precomputed per-scenario factors for the Monte Carlo inner loop.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SnrKernel {
    amp: f64,
    lock: Complex64,
    user: User,
    align: AlignTarget,
}

impl SnrKernel {
    pub(crate) fn new(scenario: &Scenario, align: AlignTarget, user: User) -> Result<Self> {
        if align == AlignTarget::Both && !scenario.element.supports_joint_alignment() {
            return Err(Error::BothAlignmentUnsupported);
        }
        let offset = scenario.element.locked_offset();
        // rotation applied to the aligned-side phasor to obtain this user's phasor
        let lock = match (align, user) {
            (AlignTarget::UserA, User::B) => Complex64::from_polar(1.0, offset),
            (AlignTarget::UserB, User::A) => Complex64::from_polar(1.0, -offset),
            _ => Complex64::new(1.0, 0.0),
        };
        Ok(Self {
            amp: scenario.element.coefficient_amplitude(user),
            lock,
            user,
            align,
        })
    }

    /// Same value as `received_snr(draw, cophase_phases(draw, ..), ..)`
    /// without materializing phases.
    pub(crate) fn snr(&self, draw: &ChannelDraw, scenario: &Scenario) -> f64 {
        let steer = match (self.align, self.user) {
            (AlignTarget::UserA, _) | (AlignTarget::Both, User::A) => &draw.h_a,
            (AlignTarget::UserB, _) | (AlignTarget::Both, User::B) => &draw.h_b,
        };
        let h = draw.user(self.user);
        let mut signal = Complex64::new(0.0, 0.0);
        let mut noise_gain = Complex64::new(0.0, 0.0);
        for m in 0..draw.len() {
            let z = steer[m] * draw.g[m];
            let r = z.norm_sqr().sqrt();
            let phasor = if r > 0.0 {
                z.conj() / r
            } else {
                Complex64::new(1.0, 0.0)
            };
            let w = h[m] * phasor * self.lock * self.amp;
            signal += w * draw.g[m];
            noise_gain += w;
        }
        snr_from_sums(signal, noise_gain, scenario, self.user)
    }
}

/// One received sample `Σ h G e^{jφ}(g·s + v_m) + n` with fresh element and
/// receiver noise. `symbol` already carries the `√p` scaling.
pub fn received_signal<R: Rng + ?Sized>(
    draw: &ChannelDraw,
    phases: &ElementPhases,
    scenario: &Scenario,
    user: User,
    symbol: Complex64,
    rng: &mut R,
) -> Complex64 {
    let amp = scenario.element.coefficient_amplitude(user);
    let sigma_v2 = scenario.effective_element_noise();
    let mut y = Complex64::new(0.0, 0.0);
    for ((hm, gm), &p) in draw.user(user).iter().zip(&draw.g).zip(phases.user(user)) {
        let v = sample_cn(sigma_v2, rng);
        y += hm * Complex64::from_polar(amp, p) * (gm * symbol + v);
    }
    y + sample_cn(scenario.user_noise(user), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::{wrap_difference, wrap_phase};
    use crate::stream::trial_rng;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, TAU};

    fn unit_scenario(element: ElementConfig, m: usize) -> Scenario {
        let link = RicianParams::new(1.0, 1.0).unwrap();
        Scenario {
            m_elements: m,
            element,
            bs_link: link,
            user_a_link: link,
            user_b_link: link,
            element_noise_power: 0.01,
            user_noise_power_a: 0.1,
            user_noise_power_b: 0.2,
            transmit_power: 2.0,
        }
    }

    fn coupled_unit() -> ElementConfig {
        ElementConfig::Coupled {
            gain: ComplexGain::unit(),
            amp_port: AmpPort::Port2,
        }
    }

    #[test]
    fn single_term_alignment() {
        let s = unit_scenario(coupled_unit(), 1);
        let mut rng = trial_rng(1, 0);
        for _ in 0..100 {
            let d = ChannelDraw::sample(&s, &mut rng);
            let ph = cophase_phases(&d, &s, AlignTarget::UserA).unwrap();
            let amp = s.element.coefficient_amplitude(User::A);
            let sum = d.h_a[0] * Complex64::from_polar(amp, ph.a[0]) * d.g[0];
            assert_relative_eq!(sum.norm(), d.h_a[0].norm() * amp * d.g[0].norm(), max_relative = 1e-12);
            assert!(sum.im.abs() < 1e-12 * sum.norm().max(1e-300) && sum.re >= 0.0);
        }
    }

    #[test]
    fn joint_alignment_makes_both_sums_real() {
        let s = Scenario::default_independent().with_elements(8);
        let mut rng = trial_rng(2, 0);
        let d = ChannelDraw::sample(&s, &mut rng);
        let ph = cophase_phases(&d, &s, AlignTarget::Both).unwrap();
        for user in [User::A, User::B] {
            let amp = s.element.coefficient_amplitude(user);
            let sum: Complex64 = (0..8)
                .map(|m| d.user(user)[m] * Complex64::from_polar(amp, ph.user(user)[m]) * d.g[m])
                .sum();
            let expect: f64 = (0..8).map(|m| d.user(user)[m].norm() * d.g[m].norm() * amp).sum();
            assert_relative_eq!(sum.re, expect, max_relative = 1e-12);
            assert!(sum.im.abs() < 1e-12 * expect);
        }
    }

    #[test]
    fn coupled_rejects_joint_alignment() {
        let s = unit_scenario(coupled_unit(), 4);
        let d = ChannelDraw::sample(&s, &mut trial_rng(3, 0));
        assert_eq!(
            cophase_phases(&d, &s, AlignTarget::Both).unwrap_err(),
            Error::BothAlignmentUnsupported
        );
    }

    #[test]
    fn coupled_phase_lock_is_constant() {
        let s = unit_scenario(coupled_unit(), 32);
        let d = ChannelDraw::sample(&s, &mut trial_rng(4, 0));
        for align in [AlignTarget::UserA, AlignTarget::UserB] {
            let ph = cophase_phases(&d, &s, align).unwrap();
            for m in 0..32 {
                assert!((wrap_difference(ph.b[m] - ph.a[m]) + FRAC_PI_2).abs() < 1e-12);
            }
        }
        let s3 = s.with_element(ElementConfig::Coupled {
            gain: ComplexGain::unit(),
            amp_port: AmpPort::Port3,
        });
        let ph = cophase_phases(&d, &s3, AlignTarget::UserA).unwrap();
        assert!((wrap_difference(ph.b[0] - ph.a[0]) - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn unaligned_user_sees_uniform_phases() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let s = unit_scenario(coupled_unit(), 1);
        let bins = 24;
        let n = 100_000;
        let mut counts = vec![0u64; bins];
        let mut rng = trial_rng(5, 0);
        for _ in 0..n {
            let d = ChannelDraw::sample(&s, &mut rng);
            let ph = cophase_phases(&d, &s, AlignTarget::UserA).unwrap();
            let z = d.h_b[0] * d.g[0] * Complex64::from_polar(1.0, ph.b[0]);
            let a = wrap_phase(z.arg());
            counts[((a / TAU * bins as f64) as usize).min(bins - 1)] += 1;
        }
        let e = n as f64 / bins as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        assert!(chi2 < ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(0.99));
    }

    #[test]
    fn snr_substitution() {
        let link = RicianParams::new(1e12, 1.0).unwrap();
        let s = Scenario {
            m_elements: 1,
            element: ElementConfig::Independent {
                g2: ComplexGain::unit(),
                g3: ComplexGain::new(1.0, std::f64::consts::PI).unwrap(),
            },
            bs_link: link,
            user_a_link: link,
            user_b_link: link,
            element_noise_power: 1e-300,
            user_noise_power_a: 1.0,
            user_noise_power_b: 1.0,
            transmit_power: 4.0,
        };
        let one = Complex64::new(1.0, 0.0);
        let d = ChannelDraw {
            g: vec![one],
            h_a: vec![one],
            h_b: vec![one],
        };
        let ph = cophase_phases(&d, &s, AlignTarget::UserA).unwrap();
        assert_relative_eq!(received_snr(&d, &ph, &s, User::A), 4.0, max_relative = 1e-12);
    }

    #[test]
    fn snr_without_element_noise_is_passive_form() {
        let mut s = unit_scenario(coupled_unit(), 6);
        s.element_noise_power = 1e-300;
        let d = ChannelDraw::sample(&s, &mut trial_rng(6, 0));
        let ph = cophase_phases(&d, &s, AlignTarget::UserA).unwrap();
        let amp = s.element.coefficient_amplitude(User::B);
        let sum: Complex64 = (0..6)
            .map(|m| d.h_b[m] * Complex64::from_polar(amp, ph.b[m]) * d.g[m])
            .sum();
        let expect = s.transmit_power * sum.norm_sqr() / s.user_noise_power_b;
        assert_relative_eq!(received_snr(&d, &ph, &s, User::B), expect, max_relative = 1e-12);
        // scale covariance with σ_v² = 0
        let s3 = s.with_transmit_power(3.0 * s.transmit_power);
        assert_relative_eq!(
            received_snr(&d, &ph, &s3, User::B),
            3.0 * received_snr(&d, &ph, &s, User::B),
            max_relative = 1e-12
        );
    }

    #[test]
    fn kernel_matches_reference_path() {
        for (element, align) in [
            (coupled_unit(), AlignTarget::UserA),
            (coupled_unit(), AlignTarget::UserB),
            (Scenario::default_independent().element, AlignTarget::Both),
            (ElementConfig::PassiveLossless, AlignTarget::Both),
            (ElementConfig::PassiveLossless, AlignTarget::UserB),
        ] {
            let s = unit_scenario(element, 9);
            let mut rng = trial_rng(7, 0);
            for _ in 0..50 {
                let d = ChannelDraw::sample(&s, &mut rng);
                let ph = cophase_phases(&d, &s, align).unwrap();
                for user in [User::A, User::B] {
                    let k = SnrKernel::new(&s, align, user).unwrap();
                    assert_relative_eq!(k.snr(&d, &s), received_snr(&d, &ph, &s, user), max_relative = 1e-10);
                }
            }
        }
    }

    #[test]
    fn aligned_phases_are_optimal() {
        let s = unit_scenario(Scenario::default_independent().element, 4);
        let mut rng = trial_rng(8, 0);
        for _ in 0..20 {
            let d = ChannelDraw::sample(&s, &mut rng);
            let ph = cophase_phases(&d, &s, AlignTarget::Both).unwrap();
            let best = received_snr(&d, &ph, &s, User::A);
            // a noise-free numerator bound
            let amp = s.element.coefficient_amplitude(User::A);
            let coherent: f64 = (0..4).map(|m| d.h_a[m].norm() * d.g[m].norm() * amp).sum();
            assert!(best <= s.transmit_power * coherent * coherent / s.user_noise_power_a * (1.0 + 1e-12));
            for _ in 0..500 {
                let random = ElementPhases {
                    a: (0..4).map(|_| rng.random::<f64>() * TAU).collect(),
                    b: ph.b.clone(),
                };
                let numerator = |p: &ElementPhases| -> f64 {
                    (0..4)
                        .map(|m| d.h_a[m] * Complex64::from_polar(amp, p.a[m]) * d.g[m])
                        .sum::<Complex64>()
                        .norm_sqr()
                };
                assert!(numerator(&random) <= numerator(&ph) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn noiseless_signal_is_deterministic() {
        let mut s = unit_scenario(coupled_unit(), 5);
        s.element_noise_power = 1e-300;
        s.user_noise_power_a = 1e-300;
        let d = ChannelDraw::sample(&s, &mut trial_rng(9, 0));
        let ph = cophase_phases(&d, &s, AlignTarget::UserA).unwrap();
        let sym = Complex64::new(0.3, -1.1);
        let amp = s.element.coefficient_amplitude(User::A);
        let expect: Complex64 = (0..5)
            .map(|m| d.h_a[m] * Complex64::from_polar(amp, ph.a[m]) * d.g[m] * sym)
            .sum();
        let y = received_signal(&d, &ph, &s, User::A, sym, &mut trial_rng(9, 1));
        assert!((y - expect).norm() < 1e-12);
    }

    #[test]
    fn zero_channel_yields_receiver_noise() {
        let s = unit_scenario(coupled_unit(), 1);
        let zero = Complex64::new(0.0, 0.0);
        let d = ChannelDraw {
            g: vec![zero],
            h_a: vec![zero],
            h_b: vec![zero],
        };
        let ph = ElementPhases {
            a: vec![0.0],
            b: vec![0.0],
        };
        let mut rng = trial_rng(10, 0);
        let n = 1_000_000;
        let power: f64 = (0..n)
            .map(|_| received_signal(&d, &ph, &s, User::A, Complex64::new(1.0, 0.0), &mut rng).norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert_relative_eq!(power, s.user_noise_power_a, max_relative = 0.02);
    }

    fn empirical_snr(s: &Scenario, d: &ChannelDraw, ph: &ElementPhases, seed: u64) -> f64 {
        let amp = s.element.coefficient_amplitude(User::A);
        let clean: Complex64 = (0..d.len())
            .map(|m| d.h_a[m] * Complex64::from_polar(amp, ph.a[m]) * d.g[m])
            .sum();
        let mut rng = trial_rng(seed, 1);
        let sqrt_p = s.transmit_power.sqrt();
        let mut noise_power = 0.0;
        let mut signal_power = 0.0;
        for i in 0..1_000_000 {
            // QPSK symbols scaled by √p
            let sym = Complex64::from_polar(sqrt_p, std::f64::consts::FRAC_PI_4 + FRAC_PI_2 * (i % 4) as f64);
            let y = received_signal(d, ph, s, User::A, sym, &mut rng);
            let sig = clean * sym;
            signal_power += sig.norm_sqr();
            noise_power += (y - sig).norm_sqr();
        }
        signal_power / noise_power
    }

    #[test]
    fn signal_level_snr_matches_formula_when_receiver_noise_dominates() {
        let mut s = unit_scenario(coupled_unit(), 8);
        s.element_noise_power = 1e-5;
        let d = ChannelDraw::sample(&s, &mut trial_rng(11, 0));
        let ph = cophase_phases(&d, &s, AlignTarget::UserA).unwrap();
        assert_relative_eq!(
            empirical_snr(&s, &d, &ph, 11),
            received_snr(&d, &ph, &s, User::A),
            max_relative = 0.03
        );
    }

    /// Independent `v_m` add in power, so the signal model's noise term is
    /// `Σ|w_m|²σ_v²`; the closed-form SNR uses `|Σ w_m|²σ_v²`. The two agree
    /// on average over random phases but not per draw.
    #[test]
    fn signal_level_element_noise_adds_per_element() {
        let s = unit_scenario(coupled_unit(), 8);
        let d = ChannelDraw::sample(&s, &mut trial_rng(11, 0));
        let ph = cophase_phases(&d, &s, AlignTarget::UserA).unwrap();
        let amp = s.element.coefficient_amplitude(User::A);
        let w: Vec<Complex64> = (0..8).map(|m| d.h_a[m] * Complex64::from_polar(amp, ph.a[m])).collect();
        let signal: Complex64 = w.iter().zip(&d.g).map(|(w, g)| w * g).sum();
        let incoherent: f64 = w.iter().map(|w| w.norm_sqr()).sum();
        let expect = s.transmit_power * signal.norm_sqr() / (incoherent * s.element_noise_power + s.user_noise_power_a);
        assert_relative_eq!(empirical_snr(&s, &d, &ph, 11), expect, max_relative = 0.03);
    }

    #[test]
    fn scenario_validation() {
        let mut s = Scenario::default_coupled();
        assert!(s.validate().is_ok());
        s.m_elements = 0;
        assert!(matches!(
            s.validate(),
            Err(Error::InvalidParameter { name: "m_elements", .. })
        ));
        let mut s = Scenario::default_coupled();
        s.user_noise_power_b = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn default_coefficient_amplitudes() {
        let g = 10f64.powf(1.5 / 20.0);
        assert_relative_eq!(
            Scenario::default_coupled().element.coefficient_amplitude(User::A),
            g / 2.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            Scenario::default_independent().element.coefficient_amplitude(User::A),
            g * FRAC_1_SQRT_2,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            Scenario::default_independent().element.coefficient_amplitude(User::B),
            g * FRAC_1_SQRT_2,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            Scenario::default_passive().element.coefficient_amplitude(User::B),
            FRAC_1_SQRT_2,
            max_relative = 1e-15
        );
    }
}
