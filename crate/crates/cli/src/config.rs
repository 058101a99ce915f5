//! Experiment configuration: a single TOML file with nested sections.
//! Unknown keys are hard errors; silent typos in scientific configs are a
//! classic failure mode.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use kramers::domain::{Domain, PolyLevelSet};
use kramers::potential::{AnisoQuadratic, AxisBox, IsoQuadratic, Polynomial, Potential};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sharp,
    Lap11,
    Lap12,
    Mc,
    Pde,
    CapacityUpper,
    CapacityPde,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
    /// polynomial terms `[coefficient, power_x, power_y]`
    #[serde(default)]
    pub terms: Vec<(f64, u32, u32)>,
}

impl PotentialSpec {
    pub fn build(&self) -> Result<Box<dyn Potential>, ConfigError> {
        match self.name.as_str() {
            "iso-quadratic" => {
                let c = *self.params.first().unwrap_or(&1.0);
                if c <= 0.0 {
                    return Err(invalid("potential.params", "curvature must be positive"));
                }
                Ok(Box::new(IsoQuadratic::new(2, c)))
            }
            "aniso-quadratic" => {
                if self.params.len() != 2 {
                    return Err(invalid(
                        "potential.params",
                        "aniso-quadratic needs two Hessian diagonal entries",
                    ));
                }
                Ok(Box::new(AnisoQuadratic::new(self.params.clone())))
            }
            "double-well" => Ok(Box::new(Polynomial::double_well())),
            "polynomial" => {
                if self.terms.is_empty() {
                    return Err(invalid("potential.terms", "polynomial needs terms"));
                }
                let terms = self
                    .terms
                    .iter()
                    .map(|&(c, px, py)| (c, vec![px, py]))
                    .collect();
                Ok(Box::new(Polynomial::new(2, terms)))
            }
            other => Err(invalid(
                "potential.name",
                format!(
                    "unknown potential `{other}`; expected one of \
                     iso-quadratic, aniso-quadratic, double-well, polynomial"
                ),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default)]
    pub terms: Vec<(f64, u32, u32)>,
    /// `[x_lo, y_lo, x_hi, y_hi]`, required for polynomial level sets
    #[serde(default)]
    pub bounding_box: Vec<f64>,
}

impl DomainSpec {
    pub fn build(&self) -> Result<Domain, ConfigError> {
        match self.name.as_str() {
            "disk" => {
                let (cx, cy, r) = match self.params.len() {
                    0 => (0.0, 0.0, 1.0),
                    3 => (self.params[0], self.params[1], self.params[2]),
                    _ => {
                        return Err(invalid(
                            "domain.params",
                            "disk takes [cx, cy, radius] (or nothing for the unit disk)",
                        ))
                    }
                };
                if r <= 0.0 {
                    return Err(invalid("domain.params", "radius must be positive"));
                }
                Ok(Domain::disk([cx, cy], r))
            }
            "ellipse" => {
                if self.params.len() != 2 {
                    return Err(invalid("domain.params", "ellipse takes [a, b]"));
                }
                Ok(Domain::ellipse(self.params[0], self.params[1]))
            }
            "polynomial" => {
                if self.terms.is_empty() {
                    return Err(invalid("domain.terms", "polynomial level set needs terms"));
                }
                if self.bounding_box.len() != 4 {
                    return Err(invalid(
                        "domain.bounding_box",
                        "polynomial level set needs [x_lo, y_lo, x_hi, y_hi]",
                    ));
                }
                let terms = self
                    .terms
                    .iter()
                    .map(|&(c, px, py)| (c, vec![px, py]))
                    .collect();
                let bb = AxisBox::new(
                    vec![self.bounding_box[0], self.bounding_box[1]],
                    vec![self.bounding_box[2], self.bounding_box[3]],
                );
                Ok(Domain::implicit(PolyLevelSet(Polynomial::new(2, terms)), bb))
            }
            other => Err(invalid(
                "domain.name",
                format!("unknown domain `{other}`; expected disk, ellipse or polynomial"),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundarySettings {
    pub n_nodes: usize,
}

impl Default for BoundarySettings {
    fn default() -> Self {
        Self { n_nodes: 128 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EikonalSettings {
    /// tube depth; 0 selects the automatic safe value
    pub delta: f64,
    pub levels: usize,
}

impl Default for EikonalSettings {
    fn default() -> Self {
        Self {
            delta: 0.0,
            levels: 48,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CapacitorSettings {
    /// ball radius; 0 selects a quarter of the well-to-boundary distance
    pub radius: f64,
}

impl Default for CapacitorSettings {
    fn default() -> Self {
        Self { radius: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdeSettings {
    pub dt: f64,
    pub n_paths: usize,
    /// 0 selects the automatic horizon (50 predicted exits)
    pub max_steps: usize,
    pub start: Vec<f64>,
    pub crossing: String,
}

impl Default for SdeSettings {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            n_paths: 10_000,
            max_steps: 0,
            start: vec![0.0, 0.0],
            crossing: "bridge".into(),
        }
    }
}

impl SdeSettings {
    pub fn crossing_mode(&self) -> Result<kramers::sde::CrossingMode, ConfigError> {
        match self.crossing.as_str() {
            "bridge" => Ok(kramers::sde::CrossingMode::Bridge),
            "interpolate" => Ok(kramers::sde::CrossingMode::Interpolate),
            other => Err(invalid(
                "sde.crossing",
                format!("unknown crossing mode `{other}`; expected bridge or interpolate"),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSettings {
    pub h: f64,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self { h: 1.0 / 128.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSettings {
    pub dir: String,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self { dir: "runs/out".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub epsilons: Vec<f64>,
    pub methods: Vec<Method>,
    pub potential: PotentialSpec,
    pub domain: DomainSpec,
    #[serde(default)]
    pub boundary: BoundarySettings,
    #[serde(default)]
    pub eikonal: EikonalSettings,
    #[serde(default)]
    pub capacitor: CapacitorSettings,
    #[serde(default)]
    pub sde: SdeSettings,
    #[serde(default)]
    pub grid: GridSettings,
    #[serde(default)]
    pub output: OutputSettings,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.epsilons.is_empty() {
            return Err(invalid("epsilons", "must not be empty"));
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(invalid("epsilons", "all values must be positive"));
        }
        if self.methods.is_empty() {
            return Err(invalid("methods", "must not be empty"));
        }
        if !(self.sde.dt > 0.0) {
            return Err(invalid("sde.dt", "must be positive"));
        }
        if self.sde.start.len() != 2 {
            return Err(invalid("sde.start", "expected [x, y]"));
        }
        if !(self.grid.h > 0.0) {
            return Err(invalid("grid.h", "must be positive"));
        }
        if self.eikonal.delta < 0.0 {
            return Err(invalid("eikonal.delta", "must be >= 0 (0 = automatic)"));
        }
        if self.capacitor.radius < 0.0 {
            return Err(invalid("capacitor.radius", "must be >= 0 (0 = automatic)"));
        }
        self.sde.crossing_mode()?;
        self.potential.build()?;
        self.domain.build()?;
        Ok(())
    }

    /// Canonical serialization, echoed into every run directory.
    pub fn echo_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
