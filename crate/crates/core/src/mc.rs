//! Monte Carlo estimation of outage probability and mean SNR.
//!
//! Trials are grouped in fixed blocks of [`STREAM_BLOCK`]; block `b` draws
//! from stream `(key, b)`. Batches hold whole blocks and are merged in index
//! order, so estimates are bit-identical for any worker count or batch size.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::analytics::{mean_snr_prediction, outage_asymptotic, outage_unaligned, GainConvention, OutageQuery};
use crate::error::{ensure_positive, Error, Result};
use crate::link::{AlignTarget, ChannelDraw, Scenario, SnrKernel, User};
use crate::stream::{derive_key, trial_rng, TrialRng};

/// Consecutive trials sharing one random stream.
pub const STREAM_BLOCK: u64 = 64;

/// Fewer outage events than this and an estimate is reported as unresolved.
pub const MIN_RESOLVED_EVENTS: u64 = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub trials: u64,
    pub master_seed: u64,
    pub batch_size: u64,
    pub confidence_level: f64,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for McConfig {
    fn default() -> Self {
        Self::new(100_000, 0x5eed)
    }
}

impl McConfig {
    pub fn new(trials: u64, master_seed: u64) -> Self {
        Self {
            trials,
            master_seed,
            batch_size: trials.clamp(1, 8192),
            confidence_level: 0.95,
            workers: None,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = Some(workers);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParameter {
                name: "trials",
                reason: "must be at least 1".into(),
            });
        }
        if self.batch_size == 0 || self.batch_size > self.trials {
            return Err(Error::InvalidParameter {
                name: "batch_size",
                reason: format!("must be in 1..={}, got {}", self.trials, self.batch_size),
            });
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return Err(Error::InvalidParameter {
                name: "confidence_level",
                reason: format!("must lie in (0, 1), got {}", self.confidence_level),
            });
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidParameter {
                name: "workers",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    fn z(&self) -> f64 {
        Normal::standard().inverse_cdf(0.5 + 0.5 * self.confidence_level)
    }

    fn key(&self) -> u64 {
        derive_key(self.master_seed, &[])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub trials_used: u64,
    /// Outage events; `None` for mean estimates.
    pub events: Option<u64>,
    /// False when an outage estimate rests on fewer than
    /// [`MIN_RESOLVED_EVENTS`] events.
    pub resolved: bool,
}

impl Estimate {
    fn exact(value: f64, trials: u64) -> Self {
        Self {
            value,
            std_error: 0.0,
            ci_low: value,
            ci_high: value,
            trials_used: trials,
            events: Some((value * trials as f64) as u64),
            resolved: true,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.ci_low <= x && x <= self.ci_high
    }
}

/// Wilson score interval for `events` successes in `n` trials.
pub fn wilson_interval(events: u64, n: u64, z: f64) -> (f64, f64) {
    let n = n as f64;
    let p = events as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0).min(p), (center + half).min(1.0).max(p))
}

/// Runs `f` on trials `start..end`, with `start` on a block boundary.
fn for_each_trial(key: u64, start: u64, end: u64, mut f: impl FnMut(&mut TrialRng)) {
    debug_assert_eq!(start % STREAM_BLOCK, 0);
    let mut i = start;
    while i < end {
        let mut rng = trial_rng(key, i / STREAM_BLOCK);
        let stop = (i + STREAM_BLOCK).min(end);
        for _ in i..stop {
            f(&mut rng);
        }
        i = stop;
    }
}

fn run_batches<T, F>(cfg: &McConfig, per_batch: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, u64) -> T + Sync + Send,
{
    cfg.validate()?;
    let batch = cfg.batch_size.div_ceil(STREAM_BLOCK) * STREAM_BLOCK;
    let n_batches = cfg.trials.div_ceil(batch);
    let job = || {
        (0..n_batches)
            .into_par_iter()
            .map(|b| {
                let start = b * batch;
                let end = (start + batch).min(cfg.trials);
                per_batch(start, end)
            })
            .collect::<Vec<T>>()
    };
    match cfg.workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::InvalidParameter {
                    name: "workers",
                    reason: e.to_string(),
                })?;
            Ok(pool.install(job))
        }
        None => Ok(job()),
    }
}

/// Fraction of trials with `γ < gamma_target`, with a Wilson interval.
pub fn estimate_outage(
    scenario: &Scenario,
    gamma_target: f64,
    align: AlignTarget,
    user: User,
    cfg: &McConfig,
) -> Result<Estimate> {
    scenario.validate()?;
    cfg.validate()?;
    if gamma_target.is_nan() {
        return Err(Error::NonFinite("gamma_target"));
    }
    let kernel = SnrKernel::new(scenario, align, user)?;
    if gamma_target <= 0.0 {
        return Ok(Estimate::exact(0.0, cfg.trials));
    }
    if gamma_target == f64::INFINITY {
        return Ok(Estimate::exact(1.0, cfg.trials));
    }
    let key = cfg.key();
    let counts = run_batches(cfg, |start, end| {
        let mut draw = ChannelDraw {
            g: Vec::with_capacity(scenario.m_elements),
            h_a: Vec::with_capacity(scenario.m_elements),
            h_b: Vec::with_capacity(scenario.m_elements),
        };
        let mut events = 0u64;
        for_each_trial(key, start, end, |rng| {
            draw.resample(scenario, rng);
            if kernel.snr(&draw, scenario) < gamma_target {
                events += 1;
            }
        });
        events
    })?;
    let events: u64 = counts.iter().sum();
    Ok(proportion_estimate(events, cfg.trials, cfg.z()))
}

fn proportion_estimate(events: u64, n: u64, z: f64) -> Estimate {
    let value = events as f64 / n as f64;
    let (ci_low, ci_high) = wilson_interval(events, n, z);
    Estimate {
        value,
        std_error: (value * (1.0 - value) / n as f64).sqrt(),
        ci_low,
        ci_high,
        trials_used: n,
        events: Some(events),
        resolved: events >= MIN_RESOLVED_EVENTS,
    }
}

/// Running mean and sum of squared deviations.
#[derive(Clone, Copy, Debug, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if other.n == 0.0 {
            return self;
        }
        if self.n == 0.0 {
            return other;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * other.n / n,
            m2: self.m2 + other.m2 + d * d * self.n * other.n / n,
        }
    }
}

/// Sample mean of the received SNR with a normal-approximation interval.
pub fn estimate_mean_snr(scenario: &Scenario, align: AlignTarget, user: User, cfg: &McConfig) -> Result<Estimate> {
    scenario.validate()?;
    let kernel = SnrKernel::new(scenario, align, user)?;
    let key = cfg.key();
    let parts = run_batches(cfg, |start, end| {
        let mut draw = ChannelDraw {
            g: Vec::with_capacity(scenario.m_elements),
            h_a: Vec::with_capacity(scenario.m_elements),
            h_b: Vec::with_capacity(scenario.m_elements),
        };
        let mut acc = Moments::default();
        for_each_trial(key, start, end, |rng| {
            draw.resample(scenario, rng);
            acc.push(kernel.snr(&draw, scenario));
        });
        acc
    })?;
    let m = parts.into_iter().fold(Moments::default(), Moments::merge);
    let var = if m.n > 1.0 { m.m2 / (m.n - 1.0) } else { 0.0 };
    let std_error = (var / m.n).sqrt();
    let half = cfg.z() * std_error;
    Ok(Estimate {
        value: m.mean,
        std_error,
        ci_low: m.mean - half,
        ci_high: m.mean + half,
        trials_used: cfg.trials,
        events: None,
        resolved: true,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    ElementCount,
    /// Grid values in watts.
    TransmitPower,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Metric {
    Outage { gamma_target: f64 },
    MeanSnr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub x: f64,
    pub estimate: Estimate,
    /// Closed form with squared gains.
    pub analytic_primary: Option<f64>,
    /// Literal-gain outage, or the second-moment mean SNR.
    pub analytic_alt: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: Axis,
    pub metric: Metric,
    pub align: AlignTarget,
    pub user: User,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// `(x, estimate)` pairs, e.g. for [`crate::analytics::diversity_order`].
    pub fn curve(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.x, p.estimate.value)).collect()
    }
}

/// Evaluates `metric` at every grid value. Point `i` runs with master seed
/// `cfg.master_seed + i`, so a one-point sweep repeats a direct estimator call.
pub fn sweep(
    template: &Scenario,
    axis: Axis,
    grid: &[f64],
    metric: Metric,
    align: AlignTarget,
    user: User,
    cfg: &McConfig,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter {
            name: "grid",
            reason: "must not be empty".into(),
        });
    }
    if grid
        .windows(2)
        .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
    {
        return Err(Error::InvalidParameter {
            name: "grid",
            reason: "must be strictly increasing".into(),
        });
    }
    let mut points = Vec::with_capacity(grid.len());
    for (index, &x) in grid.iter().enumerate() {
        let point =
            sweep_point(template, axis, x, metric, align, user, cfg, index as u64).map_err(|e| Error::SweepPoint {
                index,
                x,
                source: Box::new(e),
            })?;
        points.push(point);
    }
    Ok(SweepResult {
        axis,
        metric,
        align,
        user,
        points,
    })
}

#[allow(clippy::too_many_arguments)]
fn sweep_point(
    template: &Scenario,
    axis: Axis,
    x: f64,
    metric: Metric,
    align: AlignTarget,
    user: User,
    cfg: &McConfig,
    index: u64,
) -> Result<SweepPoint> {
    let scenario = match axis {
        Axis::ElementCount => {
            if !(x >= 1.0 && x.fract() == 0.0 && x < 1e9) {
                return Err(Error::InvalidParameter {
                    name: "m_elements",
                    reason: format!("element counts must be positive integers, got {x}"),
                });
            }
            template.with_elements(x as usize)
        }
        Axis::TransmitPower => template.with_transmit_power(ensure_positive(x, "transmit_power")?),
    };
    let point_cfg = McConfig {
        master_seed: cfg.master_seed.wrapping_add(index),
        ..cfg.clone()
    };
    let m = scenario.m_elements;
    match metric {
        Metric::Outage { gamma_target } => {
            let estimate = estimate_outage(&scenario, gamma_target, align, user, &point_cfg)?;
            let (primary, alt) = if gamma_target.is_finite() && gamma_target >= 0.0 {
                let q = OutageQuery::new(gamma_target, scenario.transmit_power)?;
                let h = scenario.user_link(user);
                let g = &scenario.bs_link;
                let overlay = |conv| -> Result<f64> {
                    if align.aligns(user) {
                        Ok(outage_asymptotic(h, g, &scenario, user, &q, m, conv)?.probability)
                    } else {
                        outage_unaligned(h, g, &scenario, user, &q, m, conv)
                    }
                };
                (
                    Some(overlay(GainConvention::Squared)?),
                    Some(overlay(GainConvention::Literal)?),
                )
            } else {
                (None, None)
            };
            Ok(SweepPoint {
                x,
                estimate,
                analytic_primary: primary,
                analytic_alt: alt,
            })
        }
        Metric::MeanSnr => {
            let estimate = estimate_mean_snr(&scenario, align, user, &point_cfg)?;
            let prediction = mean_snr_prediction(&scenario, align, user, m);
            Ok(SweepPoint {
                x,
                estimate,
                analytic_primary: Some(prediction.primary),
                analytic_alt: Some(prediction.second_moment),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::outage_user_b_coupled;
    use crate::element::{AmpPort, ComplexGain};
    use crate::fading::RicianParams;
    use crate::link::ElementConfig;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn cfg(trials: u64, seed: u64) -> McConfig {
        McConfig::new(trials, seed)
    }

    #[test]
    fn threshold_edges_are_exact() {
        let s = Scenario::default_coupled();
        let zero = estimate_outage(&s, 0.0, AlignTarget::UserA, User::A, &cfg(1000, 1)).unwrap();
        assert_eq!((zero.value, zero.ci_low, zero.ci_high), (0.0, 0.0, 0.0));
        let inf = estimate_outage(&s, f64::INFINITY, AlignTarget::UserA, User::A, &cfg(1000, 1)).unwrap();
        assert_eq!(inf.value, 1.0);
        let huge = estimate_outage(&s, 1e300, AlignTarget::UserA, User::A, &cfg(1000, 1)).unwrap();
        assert_eq!(huge.value, 1.0);
        assert!(estimate_outage(&s, f64::NAN, AlignTarget::UserA, User::A, &cfg(10, 1)).is_err());
        assert_eq!(
            estimate_outage(&s, 1.0, AlignTarget::Both, User::A, &cfg(10, 1)).unwrap_err(),
            Error::BothAlignmentUnsupported
        );
    }

    #[test]
    fn identical_across_worker_counts() {
        let s = Scenario::default_coupled().with_elements(8);
        let base = McConfig {
            batch_size: 777,
            ..cfg(20_000, 42)
        };
        let gamma = 0.05;
        let ref_o = estimate_outage(&s, gamma, AlignTarget::UserA, User::B, &base.clone().with_workers(1)).unwrap();
        let ref_m = estimate_mean_snr(&s, AlignTarget::UserA, User::A, &base.clone().with_workers(1)).unwrap();
        assert!(ref_o.value > 0.0);
        for w in [2, 8] {
            let o = estimate_outage(&s, gamma, AlignTarget::UserA, User::B, &base.clone().with_workers(w)).unwrap();
            let m = estimate_mean_snr(&s, AlignTarget::UserA, User::A, &base.clone().with_workers(w)).unwrap();
            assert_eq!(o, ref_o);
            assert_eq!(m.value.to_bits(), ref_m.value.to_bits());
            assert_eq!(m.std_error.to_bits(), ref_m.std_error.to_bits());
        }
        // repeated run
        assert_eq!(
            estimate_outage(&s, gamma, AlignTarget::UserA, User::B, &base).unwrap(),
            ref_o
        );
    }

    #[test]
    fn outage_counts_ignore_batch_size() {
        let s = Scenario::default_coupled().with_elements(4);
        let a = estimate_outage(
            &s,
            0.1,
            AlignTarget::UserA,
            User::B,
            &McConfig {
                batch_size: 100,
                ..cfg(5000, 3)
            },
        )
        .unwrap();
        let b = estimate_outage(
            &s,
            0.1,
            AlignTarget::UserA,
            User::B,
            &McConfig {
                batch_size: 5000,
                ..cfg(5000, 3)
            },
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn std_error_shrinks_as_root_n() {
        let s = Scenario::default_coupled().with_elements(4);
        let small = estimate_mean_snr(&s, AlignTarget::UserA, User::B, &cfg(10_000, 5)).unwrap();
        let large = estimate_mean_snr(&s, AlignTarget::UserA, User::B, &cfg(1_000_000, 5)).unwrap();
        let ratio = small.std_error / large.std_error;
        assert!((ratio / 10.0 - 1.0).abs() < 0.15, "ratio {ratio}");
    }

    #[test]
    fn wilson_coverage() {
        let z = Normal::standard().inverse_cdf(0.975);
        let mut rng = crate::stream::trial_rng(99, 0);
        let n = 1000u64;
        let covered = (0..1000)
            .filter(|_| {
                let k = (0..n).filter(|_| rng.random::<f64>() < 0.1).count() as u64;
                let (lo, hi) = wilson_interval(k, n, z);
                lo <= 0.1 && 0.1 <= hi
            })
            .count();
        assert!(covered >= 930, "covered {covered}");
    }

    #[test]
    fn wilson_reference_values() {
        // 10 events in 100 trials at 95 %
        let (lo, hi) = wilson_interval(10, 100, 1.959_963_984_540_054);
        assert_relative_eq!(lo, 0.055_229_2, max_relative = 1e-5);
        assert_relative_eq!(hi, 0.174_366_2, max_relative = 1e-5);
        let (lo, hi) = wilson_interval(0, 100, 1.96);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.03 && hi < 0.04);
    }

    /// With a deterministic BS link and one element the outage has a closed
    /// form: `|h|²` is exponential.
    #[test]
    fn single_element_exact_outage() {
        let omega_h = 0.5;
        let omega_g = 2.0;
        let gain = 1.3;
        let s = Scenario {
            m_elements: 1,
            element: ElementConfig::Coupled {
                gain: ComplexGain::new(2.0 * gain, 0.0).unwrap(),
                amp_port: AmpPort::Port2,
            },
            bs_link: RicianParams::new(1e12, omega_g).unwrap(),
            user_a_link: RicianParams::new(0.0, omega_h).unwrap(),
            user_b_link: RicianParams::new(0.0, omega_h).unwrap(),
            element_noise_power: 0.05,
            user_noise_power_a: 0.1,
            user_noise_power_b: 0.1,
            transmit_power: 1.0,
        };
        let c2 = gain * gain;
        for gamma in [0.5, 2.0, 8.0] {
            // γ = p|h|²c²Ω_g / (|h|²c²σ_v² + σ²) < target  ⇔  |h|² < γσ² / (c²(pΩ_g − γσ_v²))
            let threshold =
                gamma * s.user_noise_power_a / (c2 * (s.transmit_power * omega_g - gamma * s.element_noise_power));
            let exact = 1.0 - (-threshold / omega_h).exp();
            for user in [User::A, User::B] {
                let est = estimate_outage(&s, gamma, AlignTarget::UserA, user, &cfg(200_000, 7)).unwrap();
                assert!(
                    (est.value - exact).abs() < 4.0 * est.std_error,
                    "{user:?} γ={gamma}: {} vs {exact}",
                    est.value
                );
            }
        }
    }

    #[test]
    fn deterministic_channels_give_deterministic_snr() {
        let link = RicianParams::new(1e6, 1.0).unwrap();
        let mut s = Scenario::default_independent().with_elements(8);
        s.bs_link = link;
        s.user_a_link = link;
        s.user_b_link = link;
        // LoS phases stay random, so the element-noise gain |Σ h e^{jφ}|² does too
        s.element_noise_power = 1e-300;
        let est = estimate_mean_snr(&s, AlignTarget::Both, User::A, &cfg(20_000, 8)).unwrap();
        let c2 = s.element.coefficient_amplitude(User::A).powi(2);
        let expect = s.transmit_power * 64.0 * c2 / s.user_noise_power_a;
        assert_relative_eq!(est.value, expect, max_relative = 1e-3);
    }

    #[test]
    fn doubling_power_without_element_noise() {
        let mut s = Scenario::default_coupled().with_elements(4);
        s.element_noise_power = 1e-300;
        let a = estimate_mean_snr(&s, AlignTarget::UserA, User::A, &cfg(200_000, 9)).unwrap();
        let b = estimate_mean_snr(
            &s.with_transmit_power(2.0 * s.transmit_power),
            AlignTarget::UserA,
            User::A,
            &cfg(200_000, 10),
        )
        .unwrap();
        let se = (4.0 * a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!((b.value - 2.0 * a.value).abs() < 4.0 * se);
    }

    #[test]
    fn independent_mean_matches_scaling_law() {
        let s = Scenario::default_independent().with_elements(64);
        let est = estimate_mean_snr(&s, AlignTarget::Both, User::B, &cfg(100_000, 11)).unwrap();
        let predicted = crate::analytics::scaling_independent(&s, 64, User::B).unwrap().primary;
        assert_relative_eq!(est.value, predicted, max_relative = 0.10);
    }

    #[test]
    fn sweep_single_point_equals_direct_call() {
        let s = Scenario::default_coupled().with_elements(4);
        let c = cfg(10_000, 12);
        let r = sweep(
            &s,
            Axis::TransmitPower,
            &[s.transmit_power],
            Metric::Outage { gamma_target: 1.0 },
            AlignTarget::UserA,
            User::A,
            &c,
        )
        .unwrap();
        let direct = estimate_outage(&s, 1.0, AlignTarget::UserA, User::A, &c).unwrap();
        assert_eq!(r.points[0].estimate, direct);
        assert!(r.points[0].analytic_primary.is_some());
    }

    #[test]
    fn sweep_validates_grid() {
        let s = Scenario::default_coupled();
        let c = cfg(100, 1);
        let run = |grid: &[f64], axis| sweep(&s, axis, grid, Metric::MeanSnr, AlignTarget::UserA, User::A, &c);
        assert!(run(&[], Axis::TransmitPower).is_err());
        assert!(run(&[2.0, 1.0], Axis::TransmitPower).is_err());
        match run(&[1.0, 2.5], Axis::ElementCount) {
            Err(Error::SweepPoint { index, x, .. }) => assert_eq!((index, x), (1, 2.5)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn user_b_sweep_against_gaussian_overlay() {
        // Rayleigh links and large M, where the Gaussian approximation is tight
        let link = RicianParams::new(0.0, 1.0).unwrap();
        let mut s = Scenario::default_coupled().with_elements(64);
        s.bs_link = link;
        s.user_b_link = link;
        s.user_a_link = link;
        let grid: Vec<f64> = [0.01, 0.03, 0.1].to_vec();
        let r = sweep(
            &s,
            Axis::TransmitPower,
            &grid,
            Metric::Outage { gamma_target: 1.0 },
            AlignTarget::UserA,
            User::B,
            &cfg(100_000, 13),
        )
        .unwrap();
        for p in &r.points {
            let overlay = p.analytic_primary.unwrap();
            let direct = outage_user_b_coupled(
                &link,
                &link,
                &s.with_transmit_power(p.x),
                &OutageQuery::new(1.0, p.x).unwrap(),
                64,
                GainConvention::Squared,
            )
            .unwrap();
            assert_eq!(overlay, direct);
            assert!((p.estimate.value - overlay).abs() < 4.0 * p.estimate.std_error + 0.01 * overlay);
        }
    }
}
