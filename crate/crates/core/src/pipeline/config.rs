use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::geometry::{AxisRemap, GeometryFormat, UpAxis};
use crate::guidance::{GuidanceParams, SynthConfig};
use crate::metrics::MetricConfig;
use crate::obstacle_map::{DEFAULT_CELL_SIZE, DEFAULT_KERNEL_RADIUS, DEFAULT_Z_BAND};
use crate::planner::{HeuristicConfig, PlanConfig, Simplify, DEFAULT_BASE_HEIGHT, DEFAULT_FRAME_INTERVAL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Scene geometry file; relative paths resolve against the config file.
    pub path: Option<PathBuf>,
    /// Built-in fixture used when no path is given.
    pub fixture: Option<String>,
    pub format: Option<String>,
    pub up_axis: UpAxis,
    /// Multiplier converting file units to meters.
    pub scale: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let remap = AxisRemap::default();
        Self {
            path: None,
            fixture: None,
            format: None,
            up_axis: remap.up,
            scale: remap.scale,
        }
    }
}

impl SceneConfig {
    pub fn remap(&self) -> AxisRemap {
        AxisRemap {
            up: self.up_axis,
            scale: self.scale,
        }
    }

    pub fn format(&self) -> Result<Option<GeometryFormat>, PipelineError> {
        self.format
            .as_deref()
            .map(|f| f.parse().map_err(PipelineError::from))
            .transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    pub cell_size: f64,
    pub z_band: [f64; 2],
    pub kernel_radius: usize,
    /// Surface sampling spacing when the scene is a mesh, meters.
    pub sample_spacing: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            cell_size: DEFAULT_CELL_SIZE,
            z_band: [DEFAULT_Z_BAND.0, DEFAULT_Z_BAND.1],
            kernel_radius: DEFAULT_KERNEL_RADIUS,
            sample_spacing: DEFAULT_CELL_SIZE / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    pub keypoints: Option<PathBuf>,
    pub lambda: f64,
    /// When non-empty, one plan is written per value instead of `lambda`.
    pub lambda_sweep: Vec<f64>,
    pub step_cost: crate::planner::StepCost,
    pub blocked_above: Option<f64>,
    pub simplify: Simplify,
    pub base_height: f64,
    pub frame_interval: usize,
}

impl Default for PlanSection {
    fn default() -> Self {
        Self {
            keypoints: None,
            lambda: 0.0,
            lambda_sweep: Vec::new(),
            step_cost: Default::default(),
            blocked_above: None,
            simplify: Simplify::default(),
            base_height: DEFAULT_BASE_HEIGHT,
            frame_interval: DEFAULT_FRAME_INTERVAL,
        }
    }
}

impl PlanSection {
    pub fn plan_config(&self, lambda: f64) -> PlanConfig {
        PlanConfig {
            heuristic: HeuristicConfig {
                lambda,
                step_cost: self.step_cost,
                blocked_above: self.blocked_above,
            },
            simplify: self.simplify,
            base_height: self.base_height,
            frame_interval: self.frame_interval,
        }
    }

    pub fn lambdas(&self) -> Vec<f64> {
        if self.lambda_sweep.is_empty() {
            vec![self.lambda]
        } else {
            self.lambda_sweep.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuideSection {
    /// Input trajectory; a synthetic walk along the plan is used when absent.
    pub trajectory: Option<PathBuf>,
    /// Anchor file; anchors come from the plan when absent.
    pub anchors: Option<PathBuf>,
    pub denoising_steps: usize,
    /// Voxel edge used to thin the repulsion cloud; 0 keeps every point.
    pub scene_voxel: f64,
    pub params: GuidanceParams,
    pub synth: SynthConfig,
}

impl Default for GuideSection {
    fn default() -> Self {
        Self {
            trajectory: None,
            anchors: None,
            denoising_steps: 50,
            scene_voxel: 0.05,
            params: GuidanceParams::default(),
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Motion sequence files; more than one switches to CSV batch output.
    pub sequences: Vec<PathBuf>,
    /// Guided trajectory files evaluated with their joints as body points.
    pub trajectories: Vec<PathBuf>,
    pub task: Option<PathBuf>,
    pub object_mesh: Option<PathBuf>,
    pub contact_window: Option<[usize; 2]>,
    pub metrics: MetricConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub map: MapConfig,
    pub plan: PlanSection,
    pub guide: GuideSection,
    pub eval: EvalSection,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Parses the file and resolves every relative path against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            self.scene.path.as_mut(),
            self.plan.keypoints.as_mut(),
            self.guide.trajectory.as_mut(),
            self.guide.anchors.as_mut(),
            self.eval.task.as_mut(),
            self.eval.object_mesh.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self.eval.sequences.iter_mut().for_each(fix);
        self.eval.trajectories.iter_mut().for_each(fix);
        fix(&mut self.output.dir);
    }

    /// `key=value` override using dotted TOML paths, e.g. `plan.lambda=2`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), PipelineError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| PipelineError::Config(format!("override `{assignment}` is not key=value")))?;
        let mut doc = toml::Value::try_from(&*self).map_err(|e| PipelineError::Config(e.to_string()))?;
        let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => toml::Value::String(value.to_string()),
        };
        let mut slot = &mut doc;
        let parts: Vec<&str> = key.trim().split('.').collect();
        for (k, part) in parts.iter().enumerate() {
            let table = slot
                .as_table_mut()
                .ok_or_else(|| PipelineError::Config(format!("`{key}` does not name a table entry")))?;
            if k + 1 == parts.len() {
                table.insert(part.to_string(), parsed.clone());
                break;
            }
            slot = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        }
        *self = doc.try_into().map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Range checks owned by the individual modules.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let m = &self.map;
        if !(m.cell_size > 0.0 && m.cell_size.is_finite()) {
            return Err(PipelineError::Config(format!("map.cell_size must be > 0, got {}", m.cell_size)));
        }
        if !(m.z_band[0] < m.z_band[1]) {
            return Err(PipelineError::Config("map.z_band must be increasing".into()));
        }
        if !(m.sample_spacing > 0.0 && m.sample_spacing.is_finite()) {
            return Err(PipelineError::Config("map.sample_spacing must be > 0".into()));
        }
        for l in self.plan.lambdas() {
            self.plan.plan_config(l).validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        self.guide.params.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if !(self.guide.scene_voxel >= 0.0 && self.guide.scene_voxel.is_finite()) {
            return Err(PipelineError::Config("guide.scene_voxel must be >= 0".into()));
        }
        if !(self.guide.synth.frame_rate > 0.0) {
            return Err(PipelineError::Config("guide.synth.frame_rate must be > 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml("[map]\nkernel_radius = 3\n[plan]\nlambda_sweep = [0.0, 0.5, 2.0]\nstep_cost = \"density_only\"\n").unwrap();
        assert_eq!(cfg.map.kernel_radius, 3);
        assert_eq!(cfg.map.cell_size, 0.1);
        assert_eq!(cfg.plan.lambdas(), vec![0.0, 0.5, 2.0]);
        assert_eq!(cfg.plan.frame_interval, 38);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[map]\ncellsize = 0.2\n").is_err());
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("plan.lambda=2").unwrap();
        cfg.apply_override("guide.params.tau=0").unwrap();
        cfg.apply_override("scene.fixture=desk_room").unwrap();
        cfg.apply_override("plan.simplify={ mode = \"douglas_peucker\", tolerance = 1.5 }").unwrap();
        assert_eq!(cfg.plan.lambda, 2.0);
        assert_eq!(cfg.guide.params.tau, 0.0);
        assert_eq!(cfg.scene.fixture.as_deref(), Some("desk_room"));
        assert_eq!(cfg.plan.simplify, Simplify::DouglasPeucker { tolerance: 1.5 });
        assert!(cfg.apply_override("plan.lambda").is_err());
        assert!(cfg.apply_override("plan.nope=1").is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let mut cfg = RunConfig::from_toml("[scene]\npath = \"room.obj\"\n[eval]\nsequences = [\"a.json\", \"/abs/b.json\"]\n").unwrap();
        cfg.resolve_paths(Path::new("/data/run"));
        assert_eq!(cfg.scene.path.unwrap(), PathBuf::from("/data/run/room.obj"));
        assert_eq!(cfg.eval.sequences, vec![PathBuf::from("/data/run/a.json"), PathBuf::from("/abs/b.json")]);
        assert_eq!(cfg.output.dir, PathBuf::from("/data/run/out"));
    }

    #[test]
    fn invalid_ranges_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.map.cell_size = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.map.z_band = [2.0, 0.2];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.guide.params.tau = -1.0;
        assert!(cfg.validate().is_err());
    }
}
