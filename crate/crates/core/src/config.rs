//! Experiment configuration (TOML).
//!
//! Every section except `domain` and `grid` has a full default set, so a
//! minimal file only needs `schema_version` and those two tables. The
//! config hash is the SHA-256 of the canonical JSON form of the parsed
//! config, so formatting and key order in the file do not change it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{generate_voronoi_microstructure, DomainSpec, GrainField, DEFAULT_N_ORI, DEFAULT_VOI_MM};
use crate::drl::{RewardCase, RewardConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::morphology::{Connectivity, DEFAULT_MIN_VOLUME_UM3};
use crate::phasefield::{PFParams, TrackSettings};
use crate::scanpath::GridSpec;
use crate::thermal::{LaserParams, MaterialThermal};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Seed for the initial microstructure; training seeds live in `train`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub domain: DomainConfig,
    #[serde(default)]
    pub material: MaterialThermal,
    #[serde(default)]
    pub laser: LaserParams,
    #[serde(default)]
    pub phase_field: PhaseFieldConfig,
    #[serde(default)]
    pub track: TrackSettings,
    pub grid: GridConfig,
    #[serde(default)]
    pub morphology: MorphologyConfig,
    #[serde(default)]
    pub reward: RewardSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub export: ExportConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub size_mm: [f64; 3],
    pub voxel_um: f64,
    /// Number of Voronoi seeds in the initial microstructure.
    pub grains: usize,
    #[serde(default = "default_n_ori")]
    pub n_ori: usize,
}

fn default_n_ori() -> usize {
    DEFAULT_N_ORI
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseFieldConfig {
    pub sigma_j_m2: f64,
    pub mobility_m4_js: f64,
    pub width_um: f64,
    pub stability_factor: f64,
}

impl Default for PhaseFieldConfig {
    fn default() -> Self {
        Self {
            sigma_j_m2: crate::phasefield::DEFAULT_SIGMA_J_M2,
            mobility_m4_js: crate::phasefield::DEFAULT_MOBILITY,
            width_um: crate::phasefield::DEFAULT_WIDTH_UM,
            stability_factor: crate::phasefield::DEFAULT_STABILITY_FACTOR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub hatch_mm: f64,
    /// Position of point 0; the grid is centered on the domain when absent.
    #[serde(default)]
    pub origin_mm: Option<[f64; 2]>,
    /// Scan height; the top surface when absent.
    #[serde(default)]
    pub z_mm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorphologyConfig {
    /// 6 or 26.
    pub connectivity: usize,
    pub min_volume_um3: f64,
}

impl Default for MorphologyConfig {
    fn default() -> Self {
        Self {
            connectivity: 6,
            min_volume_um3: DEFAULT_MIN_VOLUME_UM3,
        }
    }
}

impl MorphologyConfig {
    pub fn connectivity(&self) -> Result<Connectivity> {
        Connectivity::from_count(self.connectivity)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub case: RewardCase,
    pub alpha: f64,
    pub beta: f64,
    /// Grain volume mapped to a reward of one; the mean initial grain
    /// volume when absent.
    pub gv_scale_um3: Option<f64>,
    pub r_collision: f64,
    pub r_oob: f64,
    pub r_unvisited_per_point: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        let d = RewardConfig::default();
        Self {
            case: d.case,
            alpha: d.alpha,
            beta: d.beta,
            gv_scale_um3: None,
            r_collision: d.r_collision,
            r_oob: d.r_oob,
            r_unvisited_per_point: d.r_unvisited_per_point,
        }
    }
}

impl RewardSection {
    pub fn resolve(&self, mean_initial_volume_um3: impl FnOnce() -> Result<f64>) -> Result<RewardConfig> {
        let gv_scale_um3 = match self.gv_scale_um3 {
            Some(v) => v,
            None => mean_initial_volume_um3()?,
        };
        let cfg = RewardConfig {
            case: self.case,
            alpha: self.alpha,
            beta: self.beta,
            gv_scale_um3,
            r_collision: self.r_collision,
            r_oob: self.r_oob,
            r_unvisited_per_point: self.r_unvisited_per_point,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub powers_w: Vec<f64>,
    /// Track length for each single-track run.
    pub track_mm: f64,
    pub voi_mm: [f64; 3],
    pub augment: bool,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            powers_w: vec![20.0, 22.0, 24.0, 26.0, 28.0, 30.0],
            track_mm: 0.5,
            voi_mm: DEFAULT_VOI_MM,
            augment: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Checks internal consistency; every failure is a config error.
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::InvalidArgument(m) | Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let spec = self.domain_spec().map_err(wrap)?;
        if self.domain.grains == 0 {
            return Err(Error::Config("domain.grains must be positive".into()));
        }
        self.material.validate().map_err(wrap)?;
        self.laser.validate().map_err(wrap)?;
        self.pf_params().map_err(wrap)?;
        self.track.validate(&self.material).map_err(wrap)?;
        self.morphology.connectivity().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        let grid = self.grid_spec().map_err(wrap)?;
        let ext = spec.voxel_extent_mm();
        for i in [0, grid.points() - 1] {
            let p = grid.position_mm(i);
            if !(0..3).all(|k| p[k] >= 0.0 && p[k] <= ext[k] + 1e-9) {
                return Err(Error::Config(format!(
                    "grid point {i} at {p:?} mm lies outside the domain {ext:?} mm"
                )));
            }
        }
        if self.export.powers_w.iter().any(|&p| !(p > 0.0)) || !(self.export.track_mm > 0.0) {
            return Err(Error::Config("export powers and track length must be positive".into()));
        }
        Ok(())
    }

    pub fn domain_spec(&self) -> Result<DomainSpec> {
        DomainSpec::new(self.domain.size_mm, self.domain.voxel_um)
    }

    pub fn pf_params(&self) -> Result<PFParams> {
        let p = &self.phase_field;
        PFParams::from_physical(
            p.sigma_j_m2,
            p.mobility_m4_js,
            p.width_um,
            self.domain.voxel_um,
            self.domain.n_ori,
            p.stability_factor,
        )
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        let spec = self.domain_spec()?;
        let ext = spec.voxel_extent_mm();
        let z = self.grid.z_mm.unwrap_or(ext[2]);
        let grid = match self.grid.origin_mm {
            Some(origin_mm) => GridSpec {
                n: self.grid.n,
                hatch_mm: self.grid.hatch_mm,
                origin_mm,
                z_mm: z,
            },
            None => GridSpec::centered(self.grid.n, self.grid.hatch_mm, [ext[0], ext[1]], z),
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn initial_field(&self) -> Result<GrainField> {
        generate_voronoi_microstructure(self.domain_spec()?, self.domain.grains, self.domain.n_ori, self.seed)
    }
}
