//! Fast invariant and oracle checks over the whole model, used by the
//! `validate` command and the traceability report.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::analytics::{
    combined_noise_variance, diversity_order, outage_asymptotic, outage_user_b_coupled, scaling_coupled,
    scaling_coupled_limits, scaling_independent, summary_table, GainConvention, OutageQuery,
};
use crate::element::{
    classify, coefficients_from_network, coupled_coefficients, hybrid_scattering_matrix, independent_coefficients,
    reduce_terminated, wrap_difference, AmpPort, ComplexGain, EnergyClass, TRMatrix, Terminations,
    DEFAULT_CLASSIFY_TOL,
};
use crate::error::Result;
use crate::fading::{
    cascaded_sum_cdf_asymptotic, cascaded_sum_pdf_asymptotic, product_pdf_slope, sample_rician, RicianParams,
};
use crate::link::{
    cophase_phases, received_snr, AlignTarget, ChannelDraw, ElementConfig, ElementPhases, Scenario, User,
};
use crate::mc::{estimate_mean_snr, estimate_outage, McConfig};
use crate::pattern::{radiation_pattern, ArrayGeometry, ConfigKind, PatternOptions};
use crate::stream::trial_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CheckKind {
    Exact,
    Oracle,
    MonteCarlo,
    Property,
}

impl CheckKind {
    pub fn label(self) -> &'static str {
        match self {
            CheckKind::Exact => "exact",
            CheckKind::Oracle => "oracle",
            CheckKind::MonteCarlo => "monte carlo",
            CheckKind::Property => "property",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    /// Model feature the check covers; matched against the report's anchors.
    pub anchor: &'static str,
    pub operation: &'static str,
    pub kind: CheckKind,
    pub passed: bool,
    pub measured: String,
    pub tolerance: String,
}

type UnalignedOutageFn =
    fn(&RicianParams, &RicianParams, &Scenario, &OutageQuery, usize, GainConvention) -> Result<f64>;

/// Replaceable implementations, so tests can verify that a broken formula
/// shows up as a failed check.
#[derive(Clone, Copy)]
pub struct Hooks {
    pub unaligned_outage: UnalignedOutageFn,
}

impl Default for Hooks {
    fn default() -> Self {
        Self {
            unaligned_outage: outage_user_b_coupled,
        }
    }
}

struct Suite {
    results: Vec<CheckResult>,
}

impl Suite {
    fn push(
        &mut self,
        anchor: &'static str,
        operation: &'static str,
        kind: CheckKind,
        passed: bool,
        measured: String,
        tolerance: impl Into<String>,
    ) {
        self.results.push(CheckResult {
            anchor,
            operation,
            kind,
            passed,
            measured,
            tolerance: tolerance.into(),
        });
    }

    /// Records an error from the check body as a failure.
    fn guard(
        &mut self,
        anchor: &'static str,
        operation: &'static str,
        kind: CheckKind,
        body: impl FnOnce(&mut Suite) -> Result<()>,
    ) {
        if let Err(e) = body(self) {
            self.push(anchor, operation, kind, false, format!("error: {e}"), "-");
        }
    }
}

fn random_gain<R: Rng>(rng: &mut R) -> ComplexGain {
    ComplexGain::new(rng.random::<f64>() * 4.0, rng.random::<f64>() * std::f64::consts::TAU).unwrap()
}

pub fn run_suite() -> Vec<CheckResult> {
    run_suite_with(&Hooks::default())
}

pub fn run_suite_with(hooks: &Hooks) -> Vec<CheckResult> {
    let mut s = Suite { results: Vec::new() };
    hardware_checks(&mut s);
    channel_checks(&mut s);
    scaling_checks(&mut s);
    outage_checks(&mut s, hooks);
    pattern_checks(&mut s);
    s.results
}

fn hardware_checks(s: &mut Suite) {
    let h = hybrid_scattering_matrix();
    let mut unitary = 0.0f64;
    let mut symmetric = 0.0f64;
    for i in 0..4 {
        for j in 0..4 {
            let dot: Complex64 = (0..4).map(|k| h[k][i].conj() * h[k][j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            unitary = unitary.max((dot - target).norm());
            symmetric = symmetric.max((h[i][j] - h[j][i]).norm());
        }
    }
    s.push(
        "hybrid coupler scattering matrix",
        "hybrid_scattering_matrix",
        CheckKind::Exact,
        unitary < 1e-12 && symmetric < 1e-12,
        format!("|S^H S - I| = {unitary:.2e}, |S - S^T| = {symmetric:.2e}"),
        "1e-12",
    );

    s.guard(
        "terminated-port reduction",
        "reduce_terminated",
        CheckKind::Exact,
        |s| {
            let zero = Complex64::new(0.0, 0.0);
            let m = reduce_terminated(
                &h,
                Terminations {
                    port2: zero,
                    port3: zero,
                },
            )?;
            let err = m.max_abs_diff(&TRMatrix::from_rows([[zero, zero], [zero, zero]]));
            s.push(
                "terminated-port reduction",
                "reduce_terminated",
                CheckKind::Exact,
                err < 1e-15,
                format!("both ports absorbing: max |Xi| = {err:.2e}"),
                "1e-15",
            );
            Ok(())
        },
    );

    s.guard(
        "coupled element coefficients",
        "coupled_coefficients",
        CheckKind::Oracle,
        |s| {
            let mut rng = trial_rng(0xc0, 0);
            let mut worst = 0.0f64;
            for _ in 0..1000 {
                let g = random_gain(&mut rng);
                for port in [AmpPort::Port2, AmpPort::Port3] {
                    let closed = coupled_coefficients(g, port)?;
                    let net = coefficients_from_network(Terminations::coupled(g, port))?;
                    worst = worst.max(closed.max_abs_diff(&net));
                }
            }
            s.push(
                "coupled element coefficients",
                "coupled_coefficients",
                CheckKind::Oracle,
                worst < 1e-10,
                format!("max deviation from network solve over 1000 gains: {worst:.2e}"),
                "1e-10",
            );
            Ok(())
        },
    );

    s.guard(
        "independent element coefficients",
        "independent_coefficients",
        CheckKind::Oracle,
        |s| {
            let mut rng = trial_rng(0xc1, 0);
            let mut worst = 0.0f64;
            for _ in 0..1000 {
                let (a, b) = (random_gain(&mut rng), random_gain(&mut rng));
                let closed = independent_coefficients(a, b)?;
                let net = coefficients_from_network(Terminations::independent(a, b))?;
                worst = worst.max(closed.max_abs_diff(&net));
            }
            s.push(
                "independent element coefficients",
                "independent_coefficients",
                CheckKind::Oracle,
                worst < 1e-10,
                format!("max deviation from network solve over 1000 gain pairs: {worst:.2e}"),
                "1e-10",
            );
            Ok(())
        },
    );

    s.guard("coupled phase lock", "coupled_coefficients", CheckKind::Property, |s| {
        let mut rng = trial_rng(0xc2, 0);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let g = ComplexGain::new(
                0.1 + rng.random::<f64>() * 4.0,
                rng.random::<f64>() * std::f64::consts::TAU,
            )?;
            for (port, sign) in [(AmpPort::Port2, 1.0), (AmpPort::Port3, -1.0)] {
                let m = coupled_coefficients(g, port)?;
                // port 2: ∠R^A − ∠T = π/2 and ∠R^B − ∠T = −π/2; port 3 flips both
                worst = worst.max(wrap_difference(m.r_a.arg() - m.t_ba.arg() - sign * FRAC_PI_2).abs());
                worst = worst.max(wrap_difference(m.r_b.arg() - m.t_ab.arg() + sign * FRAC_PI_2).abs());
            }
        }
        s.push(
            "coupled phase lock",
            "coupled_coefficients",
            CheckKind::Property,
            worst < 1e-12,
            format!("max |angle(R) - angle(T) -+ pi/2| over 1000 gains: {worst:.2e}"),
            "1e-12",
        );
        Ok(())
    });

    s.guard("energy classification", "classify", CheckKind::Exact, |s| {
        let coupled = classify(
            &coupled_coefficients(ComplexGain::new(2.0, 0.0)?, AmpPort::Port2)?,
            DEFAULT_CLASSIFY_TOL,
        );
        let lossless = classify(&ElementConfig::PassiveLossless.base_matrix()?, DEFAULT_CLASSIFY_TOL);
        let ok = coupled.class == EnergyClass::Indefinite
            && (coupled.eigenvalues[0] - 4.0).abs() < 1e-12
            && coupled.eigenvalues[1].abs() < 1e-12
            && lossless.class == EnergyClass::PassiveLossless;
        s.push(
            "energy classification",
            "classify",
            CheckKind::Exact,
            ok,
            format!(
                "coupled |G|=2: {:?} {:?}; passive split: {:?}",
                coupled.class, coupled.eigenvalues, lossless.class
            ),
            "1e-12",
        );
        Ok(())
    });
}

fn channel_checks(s: &mut Suite) {
    s.guard("Rician channel model", "sample_rician", CheckKind::MonteCarlo, |s| {
        let p = RicianParams::from_db(1.5, 0.3)?;
        let mut rng = trial_rng(0xd0, 0);
        let n = 400_000;
        let (mut pow, mut amp) = (0.0, 0.0);
        for _ in 0..n {
            let h = sample_rician(&p, &mut rng);
            pow += h.norm_sqr();
            amp += h.norm();
        }
        let (pow, amp) = (pow / n as f64, amp / n as f64);
        let e1 = (pow / p.omega() - 1.0).abs();
        let e2 = (amp / p.mean_amplitude() - 1.0).abs();
        s.push(
            "Rician channel model",
            "sample_rician",
            CheckKind::MonteCarlo,
            e1 < 0.01 && e2 < 0.01,
            format!("relative error of E|h|^2 {e1:.2e}, of E|h| {e2:.2e}"),
            "1%",
        );
        Ok(())
    });

    s.guard("received SNR", "received_snr", CheckKind::Exact, |s| {
        let det = RicianParams::new(1e12, 1.0)?;
        let one = Complex64::new(1.0, 0.0);
        let sc = Scenario {
            m_elements: 1,
            element: ElementConfig::Independent {
                g2: ComplexGain::unit(),
                g3: ComplexGain::new(1.0, std::f64::consts::PI)?,
            },
            bs_link: det,
            user_a_link: det,
            user_b_link: det,
            element_noise_power: 1e-300,
            user_noise_power_a: 1.0,
            user_noise_power_b: 1.0,
            transmit_power: 4.0,
        };
        let d = ChannelDraw {
            g: vec![one],
            h_a: vec![one],
            h_b: vec![one],
        };
        let ph = ElementPhases {
            a: vec![0.0],
            b: vec![0.0],
        };
        let snr = received_snr(&d, &ph, &sc, User::A);
        s.push(
            "received SNR",
            "received_snr",
            CheckKind::Exact,
            (snr - 4.0).abs() < 1e-12,
            format!("M=1, unit channels, p=4: {snr}"),
            "1e-12",
        );
        Ok(())
    });

    s.guard("cophase condition", "cophase_phases", CheckKind::Property, |s| {
        let sc = Scenario::default_independent().with_elements(32);
        let d = ChannelDraw::sample(&sc, &mut trial_rng(0xd1, 0));
        let ph = cophase_phases(&d, &sc, AlignTarget::Both)?;
        let mut worst = 0.0f64;
        for m in 0..32 {
            let z = d.h_a[m] * d.g[m] * Complex64::from_polar(1.0, ph.a[m]);
            worst = worst.max(z.arg().abs());
        }
        s.push(
            "cophase condition",
            "cophase_phases",
            CheckKind::Property,
            worst < 1e-12,
            format!("max residual phase of aligned terms: {worst:.2e}"),
            "1e-12",
        );
        Ok(())
    });

    s.guard(
        "product density near origin",
        "product_pdf_slope",
        CheckKind::Exact,
        |s| {
            let r = RicianParams::rayleigh(1.0)?;
            let c = product_pdf_slope(&r, &r);
            s.push(
                "product density near origin",
                "product_pdf_slope",
                CheckKind::Exact,
                (c - 4.0).abs() < 1e-12,
                format!("Rayleigh unit links: slope {c}"),
                "1e-12",
            );
            Ok(())
        },
    );

    s.guard(
        "cascaded sum density",
        "cascaded_sum_cdf_asymptotic",
        CheckKind::Oracle,
        |s| {
            let h = RicianParams::from_db(1.5, 0.7)?;
            let g = RicianParams::from_db(3.0, 1.3)?;
            let x = 0.05;
            let n = 2000;
            let dx = x / n as f64;
            // midpoint rule on the density
            let integral: f64 = (0..n)
                .map(|i| cascaded_sum_pdf_asymptotic(&h, &g, 2, (i as f64 + 0.5) * dx) * dx)
                .sum();
            let cdf = cascaded_sum_cdf_asymptotic(&h, &g, 2, x);
            let err = (integral / cdf - 1.0).abs();
            s.push(
                "cascaded sum density",
                "cascaded_sum_cdf_asymptotic",
                CheckKind::Oracle,
                err < 1e-6,
                format!("M=2: CDF vs integrated density relative error {err:.2e}"),
                "1e-6",
            );
            Ok(())
        },
    );
}

fn scaling_checks(s: &mut Suite) {
    s.guard(
        "combined noise variance",
        "combined_noise_variance",
        CheckKind::Exact,
        |s| {
            let unit = RicianParams::new(0.0, 1.0)?;
            let sc = Scenario {
                m_elements: 4,
                element: ElementConfig::Coupled {
                    gain: ComplexGain::new(2.0, 0.0)?,
                    amp_port: AmpPort::Port2,
                },
                bs_link: unit,
                user_a_link: unit,
                user_b_link: unit,
                element_noise_power: 0.01,
                user_noise_power_a: 0.1,
                user_noise_power_b: 0.1,
                transmit_power: 1.0,
            };
            let v = combined_noise_variance(&sc, User::A);
            s.push(
                "combined noise variance",
                "combined_noise_variance",
                CheckKind::Exact,
                (v - 0.14).abs() < 1e-14,
                format!("M=4, unit gain and links: {v}"),
                "1e-14",
            );
            Ok(())
        },
    );

    s.guard("coupled scaling law", "scaling_coupled", CheckKind::Property, |s| {
        let sc = Scenario::default_coupled();
        let (slope, limit) = scaling_coupled_limits(&sc)?;
        let m = 1usize << 22;
        let (a, b) = scaling_coupled(&sc, m)?;
        let ea = (a.primary / m as f64 / slope - 1.0).abs();
        let eb = (b.primary / limit - 1.0).abs();
        s.push(
            "coupled scaling law",
            "scaling_coupled",
            CheckKind::Property,
            ea < 0.01 && eb < 0.01,
            format!("M=2^22: user A per-element ratio off by {ea:.2e}, user B off limit by {eb:.2e}"),
            "1%",
        );
        Ok(())
    });

    s.guard(
        "independent scaling law",
        "scaling_independent",
        CheckKind::MonteCarlo,
        |s| {
            let sc = Scenario::default_independent().with_elements(64);
            let est = estimate_mean_snr(&sc, AlignTarget::Both, User::A, &McConfig::new(20_000, 0xe0))?;
            let pred = scaling_independent(&sc, 64, User::A)?.primary;
            let err = (est.value / pred - 1.0).abs();
            s.push(
                "independent scaling law",
                "scaling_independent",
                CheckKind::MonteCarlo,
                err < 0.10,
                format!("M=64 defaults: MC {:.4e} vs closed form {pred:.4e}", est.value),
                "10%",
            );
            Ok(())
        },
    );

    let t = summary_table(4);
    s.push(
        "sum diversity table",
        "summary_table",
        CheckKind::Exact,
        t[0].sum_diversity == 5 && t[1].sum_diversity == 8 && t[2].sum_diversity == 8,
        format!(
            "M=4: coupled {}, independent {}, passive {}",
            t[0].sum_diversity, t[1].sum_diversity, t[2].sum_diversity
        ),
        "exact",
    );
}

fn outage_checks(s: &mut Suite, hooks: &Hooks) {
    s.guard("outage definition", "estimate_outage", CheckKind::MonteCarlo, |s| {
        // one element, deterministic BS link: |h|² is exponential
        let gain = 1.3;
        let sc = Scenario {
            m_elements: 1,
            element: ElementConfig::Coupled {
                gain: ComplexGain::new(2.0 * gain, 0.0)?,
                amp_port: AmpPort::Port2,
            },
            bs_link: RicianParams::new(1e12, 2.0)?,
            user_a_link: RicianParams::new(0.0, 0.5)?,
            user_b_link: RicianParams::new(0.0, 0.5)?,
            element_noise_power: 0.05,
            user_noise_power_a: 0.1,
            user_noise_power_b: 0.1,
            transmit_power: 1.0,
        };
        let gamma = 2.0;
        let threshold = gamma * 0.1 / (gain * gain * (2.0 - gamma * 0.05));
        let exact = -(-threshold / 0.5f64).exp_m1();
        let est = estimate_outage(&sc, gamma, AlignTarget::UserA, User::A, &McConfig::new(100_000, 0xf0))?;
        let z = (est.value - exact).abs() / est.std_error;
        s.push(
            "outage definition",
            "estimate_outage",
            CheckKind::MonteCarlo,
            z < 4.0,
            format!("M=1 exact {exact:.5} vs MC {:.5} ({z:.2} SE)", est.value),
            "4 SE",
        );
        Ok(())
    });

    s.guard(
        "aligned-user asymptotic outage",
        "outage_asymptotic",
        CheckKind::Oracle,
        |s| {
            let sc = Scenario::default_independent();
            let (h, g) = (sc.user_a_link, sc.bs_link);
            let q = OutageQuery::new(2.0, 50.0)?;
            let mut worst = 0.0f64;
            for m in 1..=4usize {
                let sm = sc.with_elements(m);
                let sigma2 = combined_noise_variance(&sm, User::A);
                let g_eff = sm.element.coefficient_amplitude(User::A).powi(2);
                let x = (q.gamma_target * sigma2 / (q.p * g_eff)).sqrt();
                let cdf = cascaded_sum_cdf_asymptotic(&h, &g, m as u32, x);
                let v = outage_asymptotic(&h, &g, &sc, User::A, &q, m, GainConvention::Squared)?.probability;
                worst = worst.max((v / cdf - 1.0).abs());
            }
            s.push(
                "aligned-user asymptotic outage",
                "outage_asymptotic",
                CheckKind::Oracle,
                worst < 1e-9,
                format!("M=1..4 vs cascaded-sum CDF: max relative deviation {worst:.2e}"),
                "1e-9",
            );
            Ok(())
        },
    );

    s.guard(
        "non-aligned user outage",
        "outage_user_b_coupled",
        CheckKind::Exact,
        |s| {
            let unit = RicianParams::new(0.0, 1.0)?;
            let sc = Scenario {
                m_elements: 8,
                element: ElementConfig::Coupled {
                    gain: ComplexGain::new(2.0, 0.0)?,
                    amp_port: AmpPort::Port2,
                },
                bs_link: unit,
                user_a_link: unit,
                user_b_link: unit,
                element_noise_power: 1e-300,
                user_noise_power_a: 1.0,
                user_noise_power_b: 1.0,
                transmit_power: 1.0,
            };
            let v = (hooks.unaligned_outage)(
                &unit,
                &unit,
                &sc,
                &OutageQuery::new(1.0, 1.0)?,
                8,
                GainConvention::Squared,
            )?;
            let exact = -(-1.0f64 / 8.0).exp_m1();
            s.push(
                "non-aligned user outage",
                "outage_user_b_coupled",
                CheckKind::Exact,
                (v - exact).abs() < 1e-12,
                format!("M=8, unit everything: {v:.6} (expected {exact:.6})"),
                "1e-12",
            );
            Ok(())
        },
    );

    s.guard("diversity order", "diversity_order", CheckKind::Property, |s| {
        let sc = Scenario::default_coupled();
        let (h, g) = (sc.user_a_link, sc.bs_link);
        let grid: Vec<f64> = (0..11).map(|i| 10f64.powf(3.0 + i as f64 / 10.0)).collect();
        let mut parts = Vec::new();
        let mut ok = true;
        for m in [2usize, 3] {
            let curve = grid
                .iter()
                .map(|&p| {
                    let q = OutageQuery::new(1.0, p)?;
                    Ok((
                        p,
                        outage_asymptotic(&h, &g, &sc, User::A, &q, m, GainConvention::Squared)?.probability,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let d = diversity_order(&curve)?;
            ok &= (d - m as f64).abs() < 0.05;
            parts.push(format!("aligned M={m}: {d:.4}"));
        }
        let curve = grid
            .iter()
            .map(|&p| {
                let q = OutageQuery::new(1.0, p * 1e3)?;
                Ok((
                    p * 1e3,
                    (hooks.unaligned_outage)(&sc.user_b_link, &g, &sc, &q, 8, GainConvention::Squared)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let d = diversity_order(&curve)?;
        ok &= (d - 1.0).abs() < 0.05;
        parts.push(format!("non-aligned: {d:.4}"));
        s.push(
            "diversity order",
            "diversity_order",
            CheckKind::Property,
            ok,
            parts.join(", "),
            "0.05",
        );
        Ok(())
    });

    s.guard("reproducible streams", "estimate_outage", CheckKind::Property, |s| {
        let sc = Scenario::default_coupled().with_elements(4);
        let one = estimate_outage(
            &sc,
            0.5,
            AlignTarget::UserA,
            User::B,
            &McConfig::new(20_000, 3).with_workers(1),
        )?;
        let two = estimate_outage(
            &sc,
            0.5,
            AlignTarget::UserA,
            User::B,
            &McConfig::new(20_000, 3).with_workers(2),
        )?;
        s.push(
            "reproducible streams",
            "estimate_outage",
            CheckKind::Property,
            one == two,
            format!(
                "1 vs 2 workers: {} / {} events",
                one.events.unwrap_or(0),
                two.events.unwrap_or(0)
            ),
            "bit-identical",
        );
        Ok(())
    });
}

fn pattern_checks(s: &mut Suite) {
    s.guard("radiation pattern", "radiation_pattern", CheckKind::Property, |s| {
        let geom = ArrayGeometry::default();
        let gain = ComplexGain::from_db(1.5, 0.0)?;
        let p = radiation_pattern(
            &geom,
            &ConfigKind::ActiveIndependent.element_config(gain),
            (20.0, 190.0),
            PatternOptions::default(),
        )?;
        let (ra, rv) = p.reflection.peak();
        let (ta, tv) = p.transmission.peak();
        let coherent = geom.elements() as f64 * gain.amplitude() * FRAC_1_SQRT_2;
        let ok = (ra - 20.0).abs() <= 0.1 + 1e-9
            && (ta - 190.0).abs() <= 0.1 + 1e-9
            && (rv / coherent - 1.0).abs() < 1e-9
            && (tv / coherent - 1.0).abs() < 1e-9;
        s.push(
            "radiation pattern",
            "radiation_pattern",
            CheckKind::Property,
            ok,
            format!(
                "independent 18x18: peaks at {ra:.1} and {ta:.1} deg, {:.4} and {:.4} of coherent sum",
                rv / coherent,
                tv / coherent
            ),
            "0.1 deg, 1e-9",
        );
        Ok(())
    });
}
