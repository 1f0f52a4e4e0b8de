//! TOML run configuration.
//!
//! Every key is optional; omitted keys fall back to the defaults in
//! [`crate::link::defaults`]. Power-like quantities accept dB/dBm or linear
//! spellings (`k_db` or `k`, `user_dbm` or `user_w`, ...). Serialization
//! always writes the linear spellings so a written file parses back to the
//! identical run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::element::{AmpPort, ComplexGain};
use crate::error::{Error, Result};
use crate::fading::{db_to_linear, dbm_to_watts, PathLoss, RicianParams};
use crate::link::{defaults, AlignTarget, ElementConfig, Scenario, User};
use crate::mc::McConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_elements: Option<i64>,
    /// Observed user: `"a"` or `"b"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user: Option<String>,
    /// Cophased side: `"a"`, `"b"` or `"both"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub align: Option<String>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub element: ElementSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub geometry: GeometrySection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub channels: ChannelsSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub noise: NoiseSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub power: PowerSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub mc: McSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub target: TargetSection,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementSection {
    /// `coupled`, `independent` or `passive`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain_db: Option<f64>,
    /// Amplitude gain.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase_rad: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amp_port: Option<i64>,
    /// Independent element: phase of the port-3 amplifier relative to port 2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain3_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase3_rad: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path_loss_exponent: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelsSection {
    #[serde(default, skip_serializing_if = "is_default")]
    pub bs: LinkSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub user_a: LinkSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub user_b: LinkSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Both users.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user_dbm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user_a_dbm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user_b_dbm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub element_dbm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user_a_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user_b_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub element_w: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transmit_dbm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transmit_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_start_dbm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_stop_dbm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_step_db: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<i64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

/// Transmit-power grid in dBm, inclusive of both ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSweep {
    pub start_dbm: f64,
    pub stop_dbm: f64,
    pub step_db: f64,
}

impl Default for PowerSweep {
    fn default() -> Self {
        Self {
            start_dbm: 0.0,
            stop_dbm: 50.0,
            step_db: 2.0,
        }
    }
}

impl PowerSweep {
    pub fn grid_dbm(&self) -> Vec<f64> {
        let n = ((self.stop_dbm - self.start_dbm) / self.step_db + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start_dbm + i as f64 * self.step_db).collect()
    }
}

/// Fully resolved run settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub user: User,
    pub align: AlignTarget,
    pub sweep: PowerSweep,
    pub mc: McConfig,
    /// Linear SNR threshold.
    pub gamma_target: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_file(&ConfigFile::default()).expect("defaults are valid")
    }
}

fn config_err(message: impl Into<String>) -> Error {
    Error::Config {
        line: None,
        message: message.into(),
    }
}

fn pick(name: &str, db: Option<f64>, linear: Option<f64>, to_linear: fn(f64) -> f64, default: f64) -> Result<f64> {
    match (db, linear) {
        (Some(_), Some(_)) => Err(config_err(format!("`{name}` given in both dB and linear form"))),
        (Some(d), None) => Ok(to_linear(d)),
        (None, Some(l)) => Ok(l),
        (None, None) => Ok(default),
    }
}

fn amplitude_from_db(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

fn link_params(name: &str, s: &LinkSection, exponent: f64) -> Result<RicianParams> {
    let k = pick(name, s.k_db, s.k, db_to_linear, db_to_linear(defaults::K_FACTOR_DB))?;
    let omega = match (s.distance_m, s.omega) {
        (Some(_), Some(_)) => return Err(config_err(format!("`{name}` sets both distance_m and omega"))),
        (Some(d), None) => PathLoss::new(d, exponent)?.omega(),
        (None, Some(o)) => o,
        (None, None) => PathLoss::new(defaults::LINK_DISTANCE_M, exponent)?.omega(),
    };
    RicianParams::new(k, omega)
}

fn parse_user(s: &str) -> Result<User> {
    match s.to_ascii_lowercase().as_str() {
        "a" => Ok(User::A),
        "b" => Ok(User::B),
        _ => Err(config_err(format!("user must be \"a\" or \"b\", got {s:?}"))),
    }
}

fn parse_align(s: &str) -> Result<AlignTarget> {
    match s.to_ascii_lowercase().as_str() {
        "a" => Ok(AlignTarget::UserA),
        "b" => Ok(AlignTarget::UserB),
        "both" => Ok(AlignTarget::Both),
        _ => Err(config_err(format!("align must be \"a\", \"b\" or \"both\", got {s:?}"))),
    }
}

fn positive_count(name: &'static str, v: i64) -> Result<u64> {
    if v < 1 {
        return Err(Error::InvalidParameter {
            name,
            reason: format!("must be at least 1, got {v}"),
        });
    }
    Ok(v as u64)
}

fn element_config(e: &ElementSection) -> Result<ElementConfig> {
    let kind = e.kind.as_deref().unwrap_or("coupled").to_ascii_lowercase();
    let amp = pick(
        "element.gain",
        e.gain_db,
        e.gain,
        amplitude_from_db,
        amplitude_from_db(defaults::AMPLIFIER_GAIN_DB),
    )?;
    let phase = pick("element.phase", e.phase_deg, e.phase_rad, f64::to_radians, 0.0)?;
    let gain = ComplexGain::new(amp, phase)?;
    match kind.as_str() {
        "coupled" => {
            if e.gain3.is_some() || e.gain3_db.is_some() || e.phase3_rad.is_some() || e.split_deg.is_some() {
                return Err(config_err("second-amplifier keys only apply to kind = \"independent\""));
            }
            let port = u8::try_from(e.amp_port.unwrap_or(2)).map_err(|_| config_err("amp_port must be 2 or 3"))?;
            Ok(ElementConfig::Coupled {
                gain,
                amp_port: AmpPort::from_number(port)?,
            })
        }
        "independent" => {
            if e.amp_port.is_some() {
                return Err(config_err("amp_port only applies to kind = \"coupled\""));
            }
            let amp3 = pick("element.gain3", e.gain3_db, e.gain3, amplitude_from_db, amp)?;
            let phase3 = match (e.split_deg, e.phase3_rad) {
                (Some(_), Some(_)) => return Err(config_err("set either split_deg or phase3_rad")),
                (Some(s), None) => phase + s.to_radians(),
                (None, Some(p)) => p,
                (None, None) => phase + defaults::INDEPENDENT_SPLIT_DEG.to_radians(),
            };
            Ok(ElementConfig::Independent {
                g2: gain,
                g3: ComplexGain::new(amp3, phase3)?,
            })
        }
        "passive" => Ok(ElementConfig::PassiveLossless),
        other => Err(config_err(format!(
            "element.kind must be coupled, independent or passive, got {other:?}"
        ))),
    }
}

impl RunConfig {
    pub fn from_file(f: &ConfigFile) -> Result<Self> {
        let exponent = f.geometry.path_loss_exponent.unwrap_or(defaults::PATH_LOSS_EXPONENT);
        let m = match f.m_elements {
            Some(v) if v < 1 => {
                return Err(Error::InvalidParameter {
                    name: "m_elements",
                    reason: format!("must be at least 1, got {v}"),
                })
            }
            Some(v) => v as usize,
            None => defaults::M_ELEMENTS,
        };
        let n = &f.noise;
        if n.user_dbm.is_some() && (n.user_a_dbm.is_some() || n.user_b_dbm.is_some()) {
            return Err(config_err("noise.user_dbm conflicts with per-user noise keys"));
        }
        let user_default = dbm_to_watts(n.user_dbm.unwrap_or(defaults::USER_NOISE_DBM));
        let scenario = Scenario {
            m_elements: m,
            element: element_config(&f.element)?,
            bs_link: link_params("channels.bs", &f.channels.bs, exponent)?,
            user_a_link: link_params("channels.user_a", &f.channels.user_a, exponent)?,
            user_b_link: link_params("channels.user_b", &f.channels.user_b, exponent)?,
            element_noise_power: pick(
                "noise.element",
                n.element_dbm,
                n.element_w,
                dbm_to_watts,
                dbm_to_watts(defaults::ELEMENT_NOISE_DBM),
            )?,
            user_noise_power_a: pick("noise.user_a", n.user_a_dbm, n.user_a_w, dbm_to_watts, user_default)?,
            user_noise_power_b: pick("noise.user_b", n.user_b_dbm, n.user_b_w, dbm_to_watts, user_default)?,
            transmit_power: pick(
                "power.transmit",
                f.power.transmit_dbm,
                f.power.transmit_w,
                dbm_to_watts,
                dbm_to_watts(defaults::TRANSMIT_POWER_DBM),
            )?,
        };
        scenario.validate()?;
        let d = PowerSweep::default();
        let sweep = PowerSweep {
            start_dbm: f.power.sweep_start_dbm.unwrap_or(d.start_dbm),
            stop_dbm: f.power.sweep_stop_dbm.unwrap_or(d.stop_dbm),
            step_db: f.power.sweep_step_db.unwrap_or(d.step_db),
        };
        if !(sweep.step_db > 0.0
            && sweep.stop_dbm >= sweep.start_dbm
            && sweep.start_dbm.is_finite()
            && sweep.stop_dbm.is_finite())
        {
            return Err(Error::InvalidParameter {
                name: "power.sweep_step_db",
                reason: "sweep needs step > 0 and stop >= start".into(),
            });
        }
        let dm = McConfig::default();
        let trials = match f.mc.trials {
            Some(t) => positive_count("mc.trials", t)?,
            None => dm.trials,
        };
        let mut mc = McConfig::new(trials, f.mc.seed.unwrap_or(dm.master_seed));
        if let Some(b) = f.mc.batch_size {
            mc.batch_size = positive_count("mc.batch_size", b)?;
        }
        mc.validate()?;
        let gamma_target = pick(
            "target.gamma",
            f.target.gamma_db,
            f.target.gamma,
            db_to_linear,
            db_to_linear(defaults::GAMMA_TARGET_DB),
        )?;
        crate::error::ensure_nonnegative(gamma_target, "target.gamma")?;
        let align = match &f.align {
            Some(a) => parse_align(a)?,
            None if scenario.element.supports_joint_alignment() => AlignTarget::Both,
            None => AlignTarget::UserA,
        };
        Ok(Self {
            scenario,
            user: f.user.as_deref().map(parse_user).transpose()?.unwrap_or(User::A),
            align,
            sweep,
            mc,
            gamma_target,
        })
    }

    /// Linear, lossless spelling of every resolved value.
    pub fn to_file(&self) -> ConfigFile {
        let s = &self.scenario;
        let link = |p: &RicianParams| LinkSection {
            k: Some(p.k()),
            omega: Some(p.omega()),
            ..Default::default()
        };
        let element = match s.element {
            ElementConfig::Coupled { gain, amp_port } => ElementSection {
                kind: Some("coupled".into()),
                gain: Some(gain.amplitude()),
                phase_rad: Some(gain.phase()),
                amp_port: Some(i64::from(amp_port.number())),
                ..Default::default()
            },
            ElementConfig::Independent { g2, g3 } => ElementSection {
                kind: Some("independent".into()),
                gain: Some(g2.amplitude()),
                phase_rad: Some(g2.phase()),
                gain3: Some(g3.amplitude()),
                phase3_rad: Some(g3.phase()),
                ..Default::default()
            },
            ElementConfig::PassiveLossless => ElementSection {
                kind: Some("passive".into()),
                ..Default::default()
            },
        };
        ConfigFile {
            m_elements: Some(s.m_elements as i64),
            user: Some(self.user.label().into()),
            align: Some(
                match self.align {
                    AlignTarget::UserA => "a",
                    AlignTarget::UserB => "b",
                    AlignTarget::Both => "both",
                }
                .into(),
            ),
            element,
            geometry: GeometrySection::default(),
            channels: ChannelsSection {
                bs: link(&s.bs_link),
                user_a: link(&s.user_a_link),
                user_b: link(&s.user_b_link),
            },
            noise: NoiseSection {
                user_a_w: Some(s.user_noise_power_a),
                user_b_w: Some(s.user_noise_power_b),
                element_w: Some(s.element_noise_power),
                ..Default::default()
            },
            power: PowerSection {
                transmit_w: Some(s.transmit_power),
                sweep_start_dbm: Some(self.sweep.start_dbm),
                sweep_stop_dbm: Some(self.sweep.stop_dbm),
                sweep_step_db: Some(self.sweep.step_db),
                ..Default::default()
            },
            mc: McSection {
                trials: Some(self.mc.trials as i64),
                seed: Some(self.mc.master_seed),
                batch_size: Some(self.mc.batch_size as i64),
            },
            target: TargetSection {
                gamma: Some(self.gamma_target),
                ..Default::default()
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("config serializes")
    }
}

/// Parses a TOML document; errors carry the 1-based line of the offending
/// key where the parser reports one.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    RunConfig::from_file(&file)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        line: None,
        message: format!("{}: {e}", path.display()),
    })?;
    parse_config_str(&text)
}

/// Just the scenario part of a configuration file.
pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    Ok(parse_config(path)?.scenario)
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}
