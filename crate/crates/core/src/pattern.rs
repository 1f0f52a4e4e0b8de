//! Azimuth-cut array factor of a planar surface.
//!
//! Angles are measured in the azimuth plane with the surface along the
//! 0°–180° line: side A (reflection) is `[0°, 180°]`, side B (transmission)
//! is `(180°, 360°)`, broadside is 90° on side A. The base station is assumed
//! at broadside. Element weights come from cophasing line-of-sight channels
//! exactly as in the link model.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::element::{AmpPort, ComplexGain};
use crate::error::{ensure_positive, Error, Result};
use crate::link::{cophase_phases, defaults, AlignTarget, ChannelDraw, ElementConfig, Scenario, User};

pub const GRID_STEP_DEG: f64 = 0.1;
pub const BASE_STATION_ANGLE_DEG: f64 = 90.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Element spacing in wavelengths.
    pub spacing: f64,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self {
            rows: 18,
            cols: 18,
            spacing: defaults::ELEMENT_SPACING_WAVELENGTHS,
        }
    }
}

impl ArrayGeometry {
    pub fn new(rows: usize, cols: usize, spacing: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter {
                name: "geometry",
                reason: format!("rows and cols must be positive, got {rows}x{cols}"),
            });
        }
        ensure_positive(spacing, "spacing")?;
        Ok(Self { rows, cols, spacing })
    }

    pub fn elements(&self) -> usize {
        self.rows * self.cols
    }

    /// Position of element `m` along the azimuth cut, in wavelengths.
    /// Elements are row-major; rows are stacked out of the cut plane.
    fn offset(&self, m: usize) -> f64 {
        (m % self.cols) as f64 * self.spacing
    }
}

/// Per-element phase factors `e^{j2π·x_m·cos θ}` for a far-field source at
/// `angle_deg`.
pub fn steering_vector(geometry: &ArrayGeometry, angle_deg: f64) -> Vec<Complex64> {
    let k = TAU * angle_deg.to_radians().cos();
    (0..geometry.elements())
        .map(|m| Complex64::from_polar(1.0, k * geometry.offset(m)))
        .collect()
}

/// Exact spherical-wave phases for a source at `distance` wavelengths,
/// referenced to the first element.
fn spherical_steering(geometry: &ArrayGeometry, angle_deg: f64, distance: f64) -> Vec<Complex64> {
    let c = angle_deg.to_radians().cos();
    (0..geometry.elements())
        .map(|m| {
            let x = geometry.offset(m);
            let r = (distance * distance + x * x - 2.0 * distance * x * c).sqrt();
            Complex64::from_polar(1.0, -TAU * (r - distance))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfigKind {
    ActiveCoupled,
    ActiveIndependent,
    PassiveLossless,
}

impl ConfigKind {
    /// Element hardware for this kind with amplifier gain `gain`; the
    /// independent element splits power evenly with a 90° second amplifier.
    pub fn element_config(self, gain: ComplexGain) -> ElementConfig {
        match self {
            ConfigKind::ActiveCoupled => ElementConfig::Coupled {
                gain,
                amp_port: AmpPort::Port2,
            },
            ConfigKind::ActiveIndependent => ElementConfig::Independent {
                g2: gain,
                g3: ComplexGain::new(
                    gain.amplitude(),
                    gain.phase() + defaults::INDEPENDENT_SPLIT_DEG.to_radians(),
                )
                .expect("rotated valid gain"),
            },
            ConfigKind::PassiveLossless => ElementConfig::PassiveLossless,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ConfigKind::ActiveCoupled => "coupled",
            ConfigKind::ActiveIndependent => "independent",
            ConfigKind::PassiveLossless => "passive",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularPattern {
    pub angles_deg: Vec<f64>,
    /// Linear field magnitude.
    pub magnitude: Vec<f64>,
}

impl AngularPattern {
    /// `(angle, magnitude)` of the largest sample.
    pub fn peak(&self) -> (f64, f64) {
        self.angles_deg
            .iter()
            .zip(&self.magnitude)
            .fold(
                (f64::NAN, f64::NEG_INFINITY),
                |best, (&a, &v)| if v > best.1 { (a, v) } else { best },
            )
    }

    /// Magnitude at the grid angle nearest `angle_deg`.
    pub fn at(&self, angle_deg: f64) -> f64 {
        let i = self
            .angles_deg
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - angle_deg).abs().total_cmp(&(b.1 - angle_deg).abs()))
            .map(|(i, _)| i)
            .expect("nonempty pattern");
        self.magnitude[i]
    }

    pub fn normalized(&self, reference: f64) -> AngularPattern {
        AngularPattern {
            angles_deg: self.angles_deg.clone(),
            magnitude: self.magnitude.iter().map(|v| v / reference).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiationPattern {
    pub reflection: AngularPattern,
    pub transmission: AngularPattern,
}

impl RadiationPattern {
    pub fn max(&self) -> f64 {
        self.reflection.peak().1.max(self.transmission.peak().1)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PatternOptions {
    /// Steer towards users at this range (wavelengths) with spherical
    /// wavefronts; far-field plane waves when `None`.
    pub user_distance: Option<f64>,
}

fn wrap_deg(angle: f64) -> f64 {
    angle.rem_euclid(360.0)
}

fn check_sides(theta_a: f64, theta_b: f64) -> Result<(f64, f64)> {
    let (a, b) = (wrap_deg(theta_a), wrap_deg(theta_b));
    if !(0.0..=180.0).contains(&a) {
        return Err(Error::WrongHalfSpace {
            angle_deg: theta_a,
            side: "reflection",
        });
    }
    if b <= 180.0 {
        return Err(Error::WrongHalfSpace {
            angle_deg: theta_b,
            side: "transmission",
        });
    }
    Ok((a, b))
}

fn grid(from: f64, to: f64, include_from: bool) -> Vec<f64> {
    let n = ((to - from) / GRID_STEP_DEG).round() as usize;
    let first = usize::from(!include_from);
    // divide rather than multiply so grid angles print as short decimals
    let per_deg = (1.0 / GRID_STEP_DEG).round();
    (first..=n).map(|i| (from * per_deg + i as f64) / per_deg).collect()
}

/// Array factor on both sides for users at `(θ_A, θ_B)` degrees.
pub fn radiation_pattern(
    geometry: &ArrayGeometry,
    element: &ElementConfig,
    user_angles: (f64, f64),
    options: PatternOptions,
) -> Result<RadiationPattern> {
    let (theta_a, theta_b) = check_sides(user_angles.0, user_angles.1)?;
    element.base_matrix()?;
    let steer = |angle| match options.user_distance {
        Some(d) => spherical_steering(geometry, angle, d),
        None => steering_vector(geometry, angle),
    };
    let draw = ChannelDraw {
        g: steering_vector(geometry, BASE_STATION_ANGLE_DEG),
        h_a: steer(theta_a),
        h_b: steer(theta_b),
    };
    let mut scenario = Scenario::with_defaults(*element);
    scenario.m_elements = geometry.elements();
    let align = if element.supports_joint_alignment() {
        AlignTarget::Both
    } else {
        AlignTarget::UserA
    };
    let phases = cophase_phases(&draw, &scenario, align)?;
    let weights = |user: User| -> Vec<Complex64> {
        let amp = element.coefficient_amplitude(user);
        phases
            .user(user)
            .iter()
            .zip(&draw.g)
            .map(|(&p, g)| Complex64::from_polar(amp, p) * g)
            .collect()
    };
    let side = |w: &[Complex64], angles: Vec<f64>| -> AngularPattern {
        let magnitude = angles
            .iter()
            .map(|&a| {
                steering_vector(geometry, a)
                    .iter()
                    .zip(w)
                    .map(|(s, w)| s * w)
                    .sum::<Complex64>()
                    .norm()
            })
            .collect();
        AngularPattern {
            angles_deg: angles,
            magnitude,
        }
    };
    Ok(RadiationPattern {
        reflection: side(&weights(User::A), grid(0.0, 180.0, true)),
        transmission: side(&weights(User::B), grid(180.0, 360.0 - GRID_STEP_DEG, false)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn gain_db(db: f64) -> ComplexGain {
        ComplexGain::from_db(db, 0.0).unwrap()
    }

    fn pattern(kind: ConfigKind, db: f64) -> RadiationPattern {
        radiation_pattern(
            &ArrayGeometry::default(),
            &kind.element_config(gain_db(db)),
            (20.0, 190.0),
            PatternOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn steering_identities() {
        let g = ArrayGeometry::default();
        assert!(steering_vector(&g, 90.0).iter().all(|z| (z - 1.0).norm() < 1e-12));
        let single = ArrayGeometry::new(1, 1, 0.5).unwrap();
        for a in [0.0, 33.0, 200.0] {
            assert_eq!(steering_vector(&single, a), vec![Complex64::new(1.0, 0.0)]);
        }
        let v = steering_vector(&g, 40.0);
        let ratio = v[1] / v[0];
        let expect = Complex64::from_polar(1.0, PI * 40f64.to_radians().cos());
        assert!((ratio - expect).norm() < 1e-12);
    }

    #[test]
    fn half_space_checks() {
        let g = ArrayGeometry::default();
        let e = ConfigKind::PassiveLossless.element_config(ComplexGain::unit());
        let o = PatternOptions::default();
        assert!(matches!(
            radiation_pattern(&g, &e, (200.0, 190.0), o),
            Err(Error::WrongHalfSpace { side: "reflection", .. })
        ));
        assert!(matches!(
            radiation_pattern(&g, &e, (20.0, 90.0), o),
            Err(Error::WrongHalfSpace {
                side: "transmission",
                ..
            })
        ));
        assert!(radiation_pattern(&g, &e, (-340.0, -170.0), o).is_ok());
    }

    #[test]
    fn grids_cover_both_sides() {
        let p = pattern(ConfigKind::PassiveLossless, 1.5);
        assert_eq!(p.reflection.angles_deg.len(), 1801);
        assert_eq!(p.transmission.angles_deg.len(), 1799);
        assert!(p
            .reflection
            .magnitude
            .iter()
            .chain(&p.transmission.magnitude)
            .all(|&v| v >= 0.0));
    }

    #[test]
    fn single_element_is_isotropic() {
        let g = ArrayGeometry::new(1, 1, 0.5).unwrap();
        let p = radiation_pattern(
            &g,
            &ConfigKind::ActiveIndependent.element_config(gain_db(1.5)),
            (20.0, 190.0),
            PatternOptions::default(),
        )
        .unwrap();
        let v0 = p.reflection.magnitude[0];
        assert!(p.reflection.magnitude.iter().all(|v| (v - v0).abs() < 1e-12));
    }

    #[test]
    fn steered_peaks() {
        for kind in [
            ConfigKind::ActiveCoupled,
            ConfigKind::ActiveIndependent,
            ConfigKind::PassiveLossless,
        ] {
            let p = pattern(kind, 1.5);
            let (angle, _) = p.reflection.peak();
            assert!((angle - 20.0).abs() <= GRID_STEP_DEG + 1e-9, "{kind:?} {angle}");
        }
        for kind in [ConfigKind::ActiveIndependent, ConfigKind::PassiveLossless] {
            let (angle, _) = pattern(kind, 1.5).transmission.peak();
            assert!((angle - 190.0).abs() <= GRID_STEP_DEG + 1e-9);
        }
    }

    #[test]
    fn peak_values_are_coherent_sums() {
        let m = 324.0;
        let g = 10f64.powf(1.5 / 20.0);
        assert_relative_eq!(
            pattern(ConfigKind::ActiveCoupled, 1.5).reflection.at(20.0),
            m * g / 2.0,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            pattern(ConfigKind::ActiveIndependent, 1.5).transmission.at(190.0),
            m * g * FRAC_1_SQRT_2,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            pattern(ConfigKind::PassiveLossless, 1.5).reflection.at(20.0),
            m * FRAC_1_SQRT_2,
            max_relative = 1e-9
        );
    }

    /// Coupled transmission weights are the reflection weights times a
    /// constant, so the transmitted beam mirrors the reflected one.
    #[test]
    fn coupled_transmission_mirrors_reflection() {
        let p = pattern(ConfigKind::ActiveCoupled, 1.5);
        let (angle, peak) = p.transmission.peak();
        assert!((angle - 340.0).abs() <= GRID_STEP_DEG + 1e-9);
        assert_relative_eq!(peak, p.reflection.peak().1, max_relative = 1e-9);
    }

    #[test]
    fn mirrored_users_mirror_the_pattern() {
        let g = ArrayGeometry::default();
        let e = ConfigKind::ActiveIndependent.element_config(gain_db(3.0));
        let o = PatternOptions::default();
        let p = radiation_pattern(&g, &e, (20.0, 190.0), o).unwrap();
        let q = radiation_pattern(&g, &e, (170.0, 340.0), o).unwrap();
        for (i, &a) in q.reflection.angles_deg.iter().enumerate().skip(1).take(1798) {
            assert_relative_eq!(
                q.reflection.magnitude[i],
                p.transmission.at(360.0 - a),
                max_relative = 1e-6,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn amplitude_ordering_above_root_two_gain() {
        // |G|/2 beats the passive 1/√2 only once |G| > √2 (about 3 dB)
        for db in [3.5, 6.0, 10.0] {
            let i = pattern(ConfigKind::ActiveIndependent, db).reflection.at(20.0);
            let c = pattern(ConfigKind::ActiveCoupled, db).reflection.at(20.0);
            let p = pattern(ConfigKind::PassiveLossless, db).reflection.at(20.0);
            assert!(i >= c && c >= p, "{db} dB: {i} {c} {p}");
        }
        let c = pattern(ConfigKind::ActiveCoupled, 1.5).reflection.at(20.0);
        let p = pattern(ConfigKind::PassiveLossless, 1.5).reflection.at(20.0);
        assert!(c < p);
    }

    #[test]
    fn spherical_steering_tends_to_plane_wave() {
        let g = ArrayGeometry::default();
        let e = ConfigKind::ActiveIndependent.element_config(gain_db(1.5));
        let far = radiation_pattern(
            &g,
            &e,
            (20.0, 190.0),
            PatternOptions {
                user_distance: Some(1e9),
            },
        )
        .unwrap();
        let plane = radiation_pattern(&g, &e, (20.0, 190.0), PatternOptions::default()).unwrap();
        assert_relative_eq!(far.reflection.at(20.0), plane.reflection.at(20.0), max_relative = 1e-6);
        let near = radiation_pattern(
            &g,
            &e,
            (20.0, 190.0),
            PatternOptions {
                user_distance: Some(100.0),
            },
        )
        .unwrap();
        assert!(near.reflection.at(20.0) < plane.reflection.at(20.0));
    }
}
