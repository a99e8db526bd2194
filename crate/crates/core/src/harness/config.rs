//! Plain-text run configuration with [section], [beam], [sweep] and [solver]
//! tables. Every physical parameter is explicit; defaults cover the solver
//! knobs only.

use crate::beam1d::{ForcingSpec, ModeVector};
use crate::correctors::BcRhsVariant;
use crate::error::{Error, Result};
use crate::geometry::ShapeSpec;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SectionConfig {
    pub shape: String,
    pub resolution: f64,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub side: Option<f64>,
    #[serde(default)]
    pub width: Option<f64>,
    #[serde(default)]
    pub height: Option<f64>,
    #[serde(default)]
    pub rx: Option<f64>,
    #[serde(default)]
    pub ry: Option<f64>,
    #[serde(default)]
    pub path: Option<String>,
}

impl SectionConfig {
    pub fn shape_spec(&self) -> Result<ShapeSpec> {
        match self.shape.as_str() {
            "disk" => Ok(ShapeSpec::Disk {
                radius: self
                    .radius
                    .unwrap_or(1.0 / std::f64::consts::PI.sqrt()),
            }),
            "square" => Ok(ShapeSpec::Square {
                side: self.side.unwrap_or(1.0),
            }),
            "rectangle" => Ok(ShapeSpec::Rectangle {
                width: self
                    .width
                    .ok_or_else(|| Error::Config("rectangle needs width".into()))?,
                height: self
                    .height
                    .ok_or_else(|| Error::Config("rectangle needs height".into()))?,
            }),
            "ellipse" => Ok(ShapeSpec::Ellipse {
                rx: self.rx.ok_or_else(|| Error::Config("ellipse needs rx".into()))?,
                ry: self.ry.ok_or_else(|| Error::Config("ellipse needs ry".into()))?,
            }),
            "polygon" => Ok(ShapeSpec::PolygonFile {
                path: self
                    .path
                    .clone()
                    .ok_or_else(|| Error::Config("polygon needs path".into()))?
                    .into(),
            }),
            other => Err(Error::Config(format!("unknown shape '{other}'"))),
        }
    }
}

/// One spectral mode of the beam data; `comp` is the physical component
/// (2 or 3). Amplitudes are multiplied by the smallness constant M.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModeSpecEntry {
    pub k: usize,
    pub comp: usize,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BeamConfig {
    pub length: f64,
    pub n_modes: usize,
    /// Smallness constant M scaling the supplied data.
    pub smallness: f64,
    #[serde(default)]
    pub v0: Vec<ModeSpecEntry>,
    #[serde(default)]
    pub v1: Vec<ModeSpecEntry>,
    #[serde(default = "default_forcing")]
    pub forcing: ForcingSpec,
}

fn default_forcing() -> ForcingSpec {
    ForcingSpec::None
}

impl BeamConfig {
    pub fn mode_vector(&self, entries: &[ModeSpecEntry]) -> Result<ModeVector> {
        let mut v = ModeVector::zeros(self.n_modes);
        for e in entries {
            if e.comp != 2 && e.comp != 3 {
                return Err(Error::Config(format!(
                    "mode component must be 2 or 3, got {}",
                    e.comp
                )));
            }
            if e.k > self.n_modes {
                return Err(Error::Config(format!(
                    "mode k = {} above n_modes = {}",
                    e.k, self.n_modes
                )));
            }
            v.coeffs[e.comp - 2][e.k] += Complex64::new(e.re, e.im) * self.smallness;
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Thickness values of the main convergence run, strictly decreasing.
    pub h: Vec<f64>,
    /// Thickness values of the residual-order sweep.
    #[serde(default)]
    pub residual_h: Vec<f64>,
    /// Section resolutions of the discretization-floor protocol (the sweep
    /// runs once per resolution and compares fitted slopes).
    pub resolutions: Vec<f64>,
    /// Plane counts paired with the resolutions.
    pub n1: Vec<usize>,
    pub t_end: f64,
    pub dt: f64,
    #[serde(default = "default_output")]
    pub output: String,
    #[serde(default)]
    pub corrector_rhs: BcRhsVariant,
}

fn default_output() -> String {
    "results".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_n1")]
    pub n1: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "default_newton_max_iter")]
    pub newton_max_iter: usize,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_max_iter")]
    pub picard_max_iter: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_delta")]
    pub epsilon: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_stride")]
    pub store_stride: usize,
}

fn default_n1() -> usize {
    8
}
fn default_dt() -> f64 {
    2.5e-4
}
fn default_newton_tol() -> f64 {
    1e-11
}
fn default_newton_max_iter() -> usize {
    25
}
fn default_picard_tol() -> f64 {
    1e-11
}
fn default_picard_max_iter() -> usize {
    60
}
fn default_delta() -> f64 {
    0.1
}
fn default_theta() -> f64 {
    1.0
}
fn default_stride() -> usize {
    1
}

impl Default for SolverConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub section: SectionConfig,
    pub beam: BeamConfig,
    pub sweep: SweepConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep.resolutions.len() != self.sweep.n1.len() {
            return Err(Error::Config(
                "sweep.resolutions and sweep.n1 must pair up".into(),
            ));
        }
        if self.sweep.h.is_empty() {
            return Err(Error::Config("sweep.h must not be empty".into()));
        }
        for w in self.sweep.h.windows(2) {
            if w[1] >= w[0] {
                return Err(Error::Config("sweep.h must be strictly decreasing".into()));
            }
        }
        if !(self.sweep.dt > 0.0 && self.sweep.t_end > 0.0) {
            return Err(Error::Config("sweep needs positive dt and t_end".into()));
        }
        if self.beam.length <= 0.0 {
            return Err(Error::Config("beam length must be positive".into()));
        }
        Ok(())
    }

    /// Hex digest of the canonical serialized configuration, used as the
    /// output directory name so identical configs land in identical paths.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let canon = serde_json::to_string(self).expect("serializable config");
        let mut hasher = Sha256::new();
        hasher.update(canon.as_bytes());
        let out = hasher.finalize();
        out.iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect::<String>()
    }

    /// The reference desk-scale configuration: normalized disk section,
    /// single bending mode on a 2 pi-periodic rod.
    pub fn reference() -> Self {
        let text = r#"
[section]
shape = "disk"
resolution = 0.12

[beam]
length = 6.283185307179586
n_modes = 8
smallness = 0.05
v0 = [ { k = 1, comp = 2, re = 1.0 } ]
v1 = [ { k = 1, comp = 3, re = 0.5 } ]

[beam.forcing]
kind = "none"

[sweep]
h = [0.2, 0.1, 0.05]
residual_h = [0.2, 0.1, 0.05, 0.025]
resolutions = [0.15, 0.10]
n1 = [8, 12]
t_end = 0.5
dt = 0.00125

[solver]
n1 = 12
dt = 0.00125
"#;
        Self::parse(text).expect("reference config")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_parses_and_digests_stably() {
        let cfg = RunConfig::reference();
        assert_eq!(cfg.sweep.h, vec![0.2, 0.1, 0.05]);
        let d1 = cfg.digest();
        let d2 = RunConfig::reference().digest();
        assert_eq!(d1, d2);
        assert_eq!(d1.len(), 16);
    }

    #[test]
    fn bad_configs_rejected() {
        assert!(RunConfig::parse("").is_err());
        let mut cfg = RunConfig::reference();
        cfg.sweep.h = vec![0.1, 0.2];
        assert!(cfg.validate().is_err());
        cfg = RunConfig::reference();
        cfg.sweep.n1 = vec![8];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mode_vector_scaling_and_guards() {
        let cfg = RunConfig::reference();
        let v0 = cfg.beam.mode_vector(&cfg.beam.v0).unwrap();
        assert!((v0.coeffs[0][1].re - 0.05).abs() < 1e-15);
        let bad = vec![ModeSpecEntry {
            k: 1,
            comp: 5,
            re: 1.0,
            im: 0.0,
        }];
        assert!(cfg.beam.mode_vector(&bad).is_err());
    }
}
