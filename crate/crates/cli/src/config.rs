//! Run configuration for `helfrich flow`, read from TOML or JSON.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use helfrich_core::flow::{DistancePower, FlowConfig, MultiplicitySearch, OptimizerConfig, PenaltyWeights};
use helfrich_core::mesh::generate::{self, RadialPerturbation};
use helfrich_core::{HelfrichParams, Isometry, MeshVarifold, QuadratureRule, TransportConfig, Vec3};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the config file.
    pub output: Option<PathBuf>,
    pub mesh: MeshSection,
    pub params: ParamsSection,
    #[serde(default)]
    pub flow: FlowSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    /// OFF or OBJ file, relative to the config file.
    pub path: Option<PathBuf>,
    pub generate: Option<Generator>,
    #[serde(default = "one")]
    pub theta_plus: u32,
    #[serde(default)]
    pub theta_minus: u32,
    /// Inferred from the Euler characteristic when absent.
    pub genus: Option<u32>,
    /// Rescale the input so that its mass equals `params.m0`.
    #[serde(default)]
    pub rescale_to_mass: bool,
    /// Unconstrained energy descent applied before the flow.
    #[serde(default)]
    pub relax_iterations: usize,
}

fn one() -> u32 {
    1
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    Icosphere {
        subdivisions: u32,
        #[serde(default = "unit")]
        radius: f64,
    },
    Ellipsoid {
        subdivisions: u32,
        axes: [f64; 3],
    },
    Torus {
        major: f64,
        minor: f64,
        nu: usize,
        nv: usize,
    },
    PerturbedSphere {
        subdivisions: u32,
        amplitude: f64,
        /// Defaults to the top-level seed.
        seed: Option<u64>,
        #[serde(default)]
        mirrored: bool,
    },
}

impl Generator {
    pub fn build(&self, k: u32, default_seed: u64) -> Result<MeshVarifold, CliError> {
        let check_sub = |s: u32| {
            if s > 7 {
                Err(CliError::usage(format!("mesh.generate.subdivisions = {s} is too large (at most 7)")))
            } else {
                Ok(s)
            }
        };
        let mesh = match *self {
            Generator::Icosphere { subdivisions, radius } => generate::icosphere(check_sub(subdivisions)?, radius, k),
            Generator::Ellipsoid { subdivisions, axes } => generate::ellipsoid(check_sub(subdivisions)?, axes, k),
            Generator::Torus { major, minor, nu, nv } => generate::torus(major, minor, nu, nv, k),
            Generator::PerturbedSphere { subdivisions, amplitude, seed, mirrored } => {
                let mut pert = RadialPerturbation::new(amplitude, seed.unwrap_or(default_seed));
                if mirrored {
                    pert = pert.mirrored();
                }
                generate::perturbed_sphere(check_sub(subdivisions)?, pert, k)
            }
        };
        mesh.map_err(|e| CliError::usage(format!("mesh.generate: {e}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub beta: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub h0: f64,
    /// Defaults to the mass of the input mesh.
    pub m0: Option<f64>,
    pub v0: Option<f64>,
    /// `v0` as a fraction of the enclosed volume of the prepared input.
    pub v0_fraction: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SymmetrySpec {
    /// Reflection across the plane through the origin with this normal.
    Reflection { normal: [f64; 3] },
    /// Rotation by `2 pi / order` about an axis through the origin.
    Rotation { axis: [f64; 3], order: u32 },
}

impl SymmetrySpec {
    fn isometry(&self) -> helfrich_core::Result<Isometry> {
        match *self {
            SymmetrySpec::Reflection { normal } => Isometry::reflection(Vec3::from(normal)),
            SymmetrySpec::Rotation { axis, order } => {
                if order == 0 {
                    return Err(helfrich_core::Error::Domain("rotation order must be positive".into()));
                }
                Isometry::rotation(Vec3::from(axis), 2.0 * PI / order as f64)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub tau: f64,
    pub steps: usize,
    pub transport: TransportConfig,
    pub distance_power: DistancePower,
    pub quadrature: QuadratureRule,
    pub volume: bool,
    pub symmetry: Vec<SymmetrySpec>,
    pub multiplicity_search: MultiplicitySearch,
    pub optimizer: OptimizerConfig,
    pub penalty: PenaltyWeights,
    pub snapshot_stride: usize,
    pub curvature_bound: Option<f64>,
    /// Project the input onto the mass (and volume, symmetry) constraints first.
    pub prepare: bool,
}

impl Default for FlowSection {
    fn default() -> Self {
        let d = FlowConfig::default();
        Self {
            tau: d.tau,
            steps: d.steps,
            transport: d.transport,
            distance_power: d.distance_power,
            quadrature: d.quadrature,
            volume: d.volume,
            symmetry: Vec::new(),
            multiplicity_search: d.multiplicity_search,
            optimizer: d.optimizer,
            penalty: d.penalty,
            snapshot_stride: d.snapshot_stride,
            curvature_bound: d.curvature_bound,
            prepare: true,
        }
    }
}

impl FlowSection {
    pub fn to_config(&self) -> Result<FlowConfig, CliError> {
        let symmetry = self
            .symmetry
            .iter()
            .enumerate()
            .map(|(i, s)| s.isometry().map_err(|e| CliError::usage(format!("flow.symmetry[{i}]: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FlowConfig {
            tau: self.tau,
            steps: self.steps,
            transport: self.transport,
            distance_power: self.distance_power,
            quadrature: self.quadrature,
            volume: self.volume,
            symmetry,
            multiplicity_search: self.multiplicity_search.clone(),
            optimizer: self.optimizer,
            penalty: self.penalty,
            snapshot_stride: self.snapshot_stride,
            curvature_bound: self.curvature_bound,
        })
    }
}

/// Parses TOML (default) or JSON (`.json` extension), reporting the path of
/// the offending field.
pub fn parse(path: &Path, text: &str) -> Result<RunConfig, CliError> {
    let is_json = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let where_ = path.display();
    if is_json {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| CliError::usage(format!("{where_}: {}: {}", e.path(), e.inner())))
    } else {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let inner = e.inner().message().to_string();
            CliError::usage(format!("{where_}: {}: {inner}", e.path()))
        })
    }
}

/// Checks every numeric field that can be checked without the mesh.
pub fn validate_static(cfg: &RunConfig) -> Result<(), CliError> {
    let p = &cfg.params;
    let fail = |field: &str, msg: String| Err(CliError::usage(format!("{field}: {msg}")));
    if !(p.beta > 0.0) || !p.beta.is_finite() {
        return fail("params.beta", format!("must be positive and finite, got {}", p.beta));
    }
    for (name, v) in [("params.gamma", p.gamma), ("params.h0", p.h0)] {
        if !v.is_finite() {
            return fail(name, format!("must be finite, got {v}"));
        }
    }
    if let Some(m0) = p.m0 {
        if !(m0 > 0.0) || !m0.is_finite() {
            return fail("params.m0", format!("must be positive and finite, got {m0}"));
        }
    }
    if p.v0.is_some() && p.v0_fraction.is_some() {
        return fail("params.v0_fraction", "cannot be combined with params.v0".into());
    }
    if let Some(f) = p.v0_fraction {
        if !(f > 0.0) || !f.is_finite() {
            return fail("params.v0_fraction", format!("must be positive, got {f}"));
        }
    }
    let f = &cfg.flow;
    if !(f.tau > 0.0) || !f.tau.is_finite() {
        return fail("flow.tau", format!("must be positive and finite, got {}", f.tau));
    }
    if f.snapshot_stride == 0 {
        return fail("flow.snapshot_stride", "must be at least 1".into());
    }
    if let Err(e) = f.transport.validate() {
        return fail("flow.transport", e.to_string());
    }
    match (&cfg.mesh.path, &cfg.mesh.generate) {
        (Some(_), Some(_)) => return fail("mesh", "give either path or generate, not both".into()),
        (None, None) => return fail("mesh", "one of path or generate is required".into()),
        _ => {}
    }
    if cfg.mesh.theta_plus + cfg.mesh.theta_minus == 0 {
        return fail("mesh.theta_plus", "total multiplicity must be positive".into());
    }
    if f.volume && p.v0.is_none() && p.v0_fraction.is_none() {
        return fail("params.v0", "required when flow.volume = true (or give params.v0_fraction)".into());
    }
    f.to_config()?;
    Ok(())
}

/// Helfrich parameters for a concrete input mesh.
pub fn resolve_params(p: &ParamsSection, mesh: &MeshVarifold) -> Result<HelfrichParams, CliError> {
    use helfrich_core::Measure;
    let m0 = p.m0.unwrap_or_else(|| mesh.mass());
    let mut params = HelfrichParams::new(p.beta, p.gamma, p.h0, m0).map_err(|e| CliError::usage(format!("params: {e}")))?;
    let v0 = match (p.v0, p.v0_fraction) {
        (Some(v), _) => Some(v),
        (None, Some(f)) => {
            let s = (m0 / mesh.mass()).sqrt();
            Some(f * mesh.enclosed_volume() * s * s * s)
        }
        (None, None) => None,
    };
    if let Some(v0) = v0 {
        params = params.with_volume(v0).map_err(|e| CliError::usage(format!("params.v0: {e}")))?;
    }
    Ok(params)
}
