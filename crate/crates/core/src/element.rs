//! Single-element hardware model.
//!
//! An element is a matched 3-dB/90° quadrature hybrid. Ports 1 and 4 face
//! side A and side B of the surface; ports 2 and 3 are terminated by
//! reflection-type amplifiers behind phase-shifting delay lines (or
//! grounded). Terminating the internal ports reduces the 4-port to the 2×2
//! transmission-and-reflection (T&R) matrix
//!
//! ```text
//! [y_A]   [R_A   T_AB] [s_A]
//! [y_B] = [T_BA  R_B ] [s_B]
//! ```

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Default eigenvalue tolerance used by [`classify`].
pub const DEFAULT_CLASSIFY_TOL: f64 = 1e-9;

const J: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Combined response of a delay line and reflection-type amplifier,
/// `amplitude · e^{j·phase}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexGain {
    amplitude: f64,
    phase: f64,
}

impl ComplexGain {
    /// Builds a gain from linear amplitude and phase in radians. The phase is
    /// wrapped into `[0, 2π)`.
    pub fn new(amplitude: f64, phase: f64) -> Result<Self> {
        ensure_finite(amplitude, "amplitude")?;
        ensure_finite(phase, "phase")?;
        if amplitude < 0.0 {
            return Err(Error::InvalidParameter {
                name: "amplitude",
                reason: format!("must be nonnegative, got {amplitude}"),
            });
        }
        Ok(Self {
            amplitude,
            phase: wrap_phase(phase),
        })
    }

    /// Amplifier gain quoted in dB as a power gain, so the voltage amplitude
    /// is `10^(dB/20)`.
    pub fn from_db(gain_db: f64, phase_deg: f64) -> Result<Self> {
        ensure_finite(gain_db, "gain_db")?;
        Self::new(10f64.powf(gain_db / 20.0), phase_deg.to_radians())
    }

    pub fn from_complex(value: Complex64) -> Result<Self> {
        ensure_finite(value.re, "gain")?;
        ensure_finite(value.im, "gain")?;
        Self::new(value.norm(), value.arg())
    }

    pub fn unit() -> Self {
        Self {
            amplitude: 1.0,
            phase: 0.0,
        }
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn value(&self) -> Complex64 {
        Complex64::from_polar(self.amplitude, self.phase)
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_phase(phase: f64) -> f64 {
    let wrapped = phase.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if wrapped >= TAU {
        0.0
    } else {
        wrapped
    }
}

/// Wraps an angle difference into `(-π, π]`.
pub fn wrap_difference(delta: f64) -> f64 {
    let w = wrap_phase(delta);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Which hybrid port carries the single amplifier of a coupled element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AmpPort {
    Port2,
    Port3,
}

impl AmpPort {
    pub fn from_number(port: u8) -> Result<Self> {
        match port {
            2 => Ok(AmpPort::Port2),
            3 => Ok(AmpPort::Port3),
            other => Err(Error::InvalidParameter {
                name: "amp_port",
                reason: format!("must be 2 or 3, got {other}"),
            }),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            AmpPort::Port2 => 2,
            AmpPort::Port3 => 3,
        }
    }
}

pub type ScatteringMatrix = [[Complex64; 4]; 4];

/// Scattering matrix of the matched quadrature hybrid,
/// `S = -(1/√2)·[[0,j,1,0],[j,0,0,1],[1,0,0,j],[0,1,j,0]]`.
pub fn hybrid_scattering_matrix() -> ScatteringMatrix {
    let z = Complex64::new(0.0, 0.0);
    let o = Complex64::new(-FRAC_1_SQRT_2, 0.0);
    let j = Complex64::new(0.0, -FRAC_1_SQRT_2);
    [[z, j, o, z], [j, z, z, o], [o, z, z, j], [z, o, j, z]]
}

/// Port voltages of the hybrid: `outgoing = S · incoming`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PortSignals {
    pub incoming: [Complex64; 4],
    pub outgoing: [Complex64; 4],
}

impl PortSignals {
    pub fn propagate(incoming: [Complex64; 4]) -> Self {
        let s = hybrid_scattering_matrix();
        let mut outgoing = [Complex64::new(0.0, 0.0); 4];
        for (row, out) in s.iter().zip(outgoing.iter_mut()) {
            *out = row.iter().zip(incoming.iter()).map(|(a, b)| a * b).sum();
        }
        Self { incoming, outgoing }
    }
}

/// 2×2 T&R matrix of one element.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TRMatrix {
    pub r_a: Complex64,
    pub r_b: Complex64,
    pub t_ab: Complex64,
    pub t_ba: Complex64,
}

impl TRMatrix {
    pub fn identity() -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        Self {
            r_a: one,
            r_b: one,
            t_ab: zero,
            t_ba: zero,
        }
    }

    pub fn from_rows(rows: [[Complex64; 2]; 2]) -> Self {
        Self {
            r_a: rows[0][0],
            t_ab: rows[0][1],
            t_ba: rows[1][0],
            r_b: rows[1][1],
        }
    }

    pub fn rows(&self) -> [[Complex64; 2]; 2] {
        [[self.r_a, self.t_ab], [self.t_ba, self.r_b]]
    }

    /// Maps incident signals `(s_A, s_B)` to outputs `(y_A, y_B)`.
    pub fn apply(&self, incident: [Complex64; 2]) -> [Complex64; 2] {
        [
            self.r_a * incident[0] + self.t_ab * incident[1],
            self.t_ba * incident[0] + self.r_b * incident[1],
        ]
    }

    /// Multiplies every coefficient by `e^{j·psi}` (a common delay-line shift).
    pub fn rotated(&self, psi: f64) -> Self {
        let r = Complex64::from_polar(1.0, psi);
        Self {
            r_a: self.r_a * r,
            r_b: self.r_b * r,
            t_ab: self.t_ab * r,
            t_ba: self.t_ba * r,
        }
    }

    /// `Ξ^H Ξ` as `(a, b, d)` with `[[a, b], [conj(b), d]]`.
    pub fn gram(&self) -> (f64, Complex64, f64) {
        let a = self.r_a.norm_sqr() + self.t_ba.norm_sqr();
        let d = self.t_ab.norm_sqr() + self.r_b.norm_sqr();
        let b = self.r_a.conj() * self.t_ab + self.t_ba.conj() * self.r_b;
        (a, b, d)
    }

    pub fn is_reciprocal(&self, tol: f64) -> bool {
        (self.t_ab - self.t_ba).norm() <= tol
    }

    pub fn max_abs_diff(&self, other: &TRMatrix) -> f64 {
        [
            self.r_a - other.r_a,
            self.r_b - other.r_b,
            self.t_ab - other.t_ab,
            self.t_ba - other.t_ba,
        ]
        .iter()
        .map(|d| d.norm())
        .fold(0.0, f64::max)
    }
}

impl fmt::Display for TRMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // adding 0.0 turns -0.0 into 0.0
        let c = |z: Complex64| format!("{:+.4}{:+.4}j", z.re + 0.0, z.im + 0.0);
        writeln!(f, "R^A  = {}", c(self.r_a))?;
        writeln!(f, "R^B  = {}", c(self.r_b))?;
        writeln!(f, "T^AB = {}", c(self.t_ab))?;
        write!(f, "T^BA = {}", c(self.t_ba))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnergyClass {
    PassiveLossless,
    PassiveLossy,
    Active,
    /// One eigenvalue of `Ξ^H Ξ` above one and one below. Coupled elements
    /// always land here since one eigenvalue is exactly zero.
    Indefinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyClassification {
    pub class: EnergyClass,
    /// Eigenvalues of `Ξ^H Ξ`, descending.
    pub eigenvalues: [f64; 2],
}

fn check_gain(g: &ComplexGain) -> Result<Complex64> {
    let v = g.value();
    if v.re.is_finite() && v.im.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("gain"))
    }
}

/// Closed-form T&R matrix of a single-amplifier element. The other internal
/// port is grounded (absorbing).
pub fn coupled_coefficients(g: ComplexGain, amp_port: AmpPort) -> Result<TRMatrix> {
    let half = check_gain(&g)? / 2.0;
    let (r_a, r_b) = match amp_port {
        AmpPort::Port2 => (-half, half),
        AmpPort::Port3 => (half, -half),
    };
    Ok(TRMatrix {
        r_a,
        r_b,
        t_ab: J * half,
        t_ba: J * half,
    })
}

/// Closed-form T&R matrix of a two-amplifier element:
/// `R_A = -R_B = (G3 - G2)/2`, `T_AB = T_BA = j(G2 + G3)/2`.
pub fn independent_coefficients(g2: ComplexGain, g3: ComplexGain) -> Result<TRMatrix> {
    let a = check_gain(&g2)?;
    let b = check_gain(&g3)?;
    let r = (b - a) / 2.0;
    let t = J * (a + b) / 2.0;
    Ok(TRMatrix {
        r_a: r,
        r_b: -r,
        t_ab: t,
        t_ba: t,
    })
}

/// Reflection responses terminating the internal hybrid ports,
/// `V_p⁺ = Γ_p · V_p⁻`. A grounded port has `Γ = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Terminations {
    pub port2: Complex64,
    pub port3: Complex64,
}

impl Terminations {
    pub fn coupled(g: ComplexGain, amp_port: AmpPort) -> Self {
        let zero = Complex64::new(0.0, 0.0);
        match amp_port {
            AmpPort::Port2 => Self {
                port2: g.value(),
                port3: zero,
            },
            AmpPort::Port3 => Self {
                port2: zero,
                port3: g.value(),
            },
        }
    }

    pub fn independent(g2: ComplexGain, g3: ComplexGain) -> Self {
        Self {
            port2: g2.value(),
            port3: g3.value(),
        }
    }
}

/// T&R matrix of the quadrature hybrid with ports 2 and 3 terminated, found
/// by solving the port-constraint system numerically.
pub fn coefficients_from_network(terminations: Terminations) -> Result<TRMatrix> {
    reduce_terminated(&hybrid_scattering_matrix(), terminations)
}

/// Reduces any 4-port with ports 2 and 3 terminated to the 2×2 matrix seen
/// from ports 1 and 4:
/// `Ξ = S_ee + S_ei Γ (I − S_ii Γ)⁻¹ S_ie`.
pub fn reduce_terminated(s: &ScatteringMatrix, terminations: Terminations) -> Result<TRMatrix> {
    for v in [terminations.port2, terminations.port3] {
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::NonFinite("termination"));
        }
    }
    const EXT: [usize; 2] = [0, 3];
    const INT: [usize; 2] = [1, 2];
    let gamma = [terminations.port2, terminations.port3];
    let one = Complex64::new(1.0, 0.0);

    // A = I − S_ii Γ
    let mut a = [[Complex64::new(0.0, 0.0); 2]; 2];
    for (i, &pi) in INT.iter().enumerate() {
        for (k, &pk) in INT.iter().enumerate() {
            let delta = if i == k { one } else { Complex64::new(0.0, 0.0) };
            a[i][k] = delta - s[pi][pk] * gamma[k];
        }
    }
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let scale = a.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max);
    if det.norm() <= 1e-12 * scale.max(1.0) * scale.max(1.0) {
        return Err(Error::SingularNetwork);
    }
    let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];

    let mut rows = [[Complex64::new(0.0, 0.0); 2]; 2];
    for (e_out, &po) in EXT.iter().enumerate() {
        for (e_in, &pi_) in EXT.iter().enumerate() {
            // internal outgoing waves for a unit incident wave at port pi_
            let mut v_int = [Complex64::new(0.0, 0.0); 2];
            for (i, v) in v_int.iter_mut().enumerate() {
                *v = (0..2).map(|k| inv[i][k] * s[INT[k]][pi_]).sum();
            }
            let through: Complex64 = (0..2).map(|k| s[po][INT[k]] * gamma[k] * v_int[k]).sum();
            rows[e_out][e_in] = s[po][pi_] + through;
        }
    }
    Ok(TRMatrix::from_rows(rows))
}

/// Eigenvalues of `Ξ^H Ξ` (descending).
pub fn gram_eigenvalues(m: &TRMatrix) -> [f64; 2] {
    let (a, b, d) = m.gram();
    let mean = 0.5 * (a + d);
    let radius = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
    [mean + radius, (mean - radius).max(0.0)]
}

pub fn classify(m: &TRMatrix, tol: f64) -> EnergyClassification {
    let eigenvalues = gram_eigenvalues(m);
    let [hi, lo] = eigenvalues;
    let near_one = |x: f64| (x - 1.0).abs() <= tol;
    let class = if near_one(hi) && near_one(lo) {
        EnergyClass::PassiveLossless
    } else if hi <= 1.0 + tol && lo < 1.0 - tol {
        EnergyClass::PassiveLossy
    } else if lo >= 1.0 - tol && hi > 1.0 + tol {
        EnergyClass::Active
    } else {
        EnergyClass::Indefinite
    };
    EnergyClassification { class, eigenvalues }
}
