//! Batch commands shared by the CLI and the service: load a run config, build
//! the planning map, plan, guide and evaluate, writing deterministic artifacts.

mod config;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{EvalSection, GuideSection, MapConfig, OutputConfig, PlanSection, RunConfig, SceneConfig};

use crate::fixtures;
use crate::geometry::{
    load_geometry, surface_sample, voxel_downsample, Geometry, GeometryError, PointCloud, SdfScene, TriMesh, Vec3,
};
use crate::guidance::{
    run_guidance, synthesize_walk, AnchorTuple, GuidanceError, GuidanceObjective, GuidanceReport, PassThrough,
    TrajectoryState,
};
use crate::metrics::{evaluate, reports_to_csv, EvalInputs, MetricReport, MetricsError, MotionSequence, ObjectTask};
use crate::obstacle_map::{build_map, encode_png, GridFrame, MapError, ObstacleMap};
use crate::planner::{path_density_sum, plan_path, Keypoint, PathPlan, PlanConfig, PlanError};

pub const PLAN_SCHEMA_VERSION: u32 = 1;
pub const CONFIG_ECHO: &str = "effective_config.toml";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error("{source_name}: {error}")]
    Metrics {
        source_name: String,
        #[source]
        error: MetricsError,
    },
}

impl PipelineError {
    /// 0 success, 2 input error, 3 invalid keypoint, 4 no path, 5 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Plan(e) => match e.root() {
                PlanError::InvalidNodes(_) => 3,
                PlanError::NoPath(_) => 4,
                _ => 2,
            },
            PipelineError::Guidance(GuidanceError::NonFinite(_) | GuidanceError::NonFiniteGradient { .. }) => 5,
            PipelineError::Geometry(GeometryError::NonFinite { .. }) => 5,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| PipelineError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_out(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, PipelineError> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(io_err(&path))?;
    Ok(path)
}

fn prepare_output(cfg: &RunConfig) -> Result<&Path, PipelineError> {
    let dir = cfg.output.dir.as_path();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_out(dir, CONFIG_ECHO, cfg.to_toml().as_bytes())?;
    Ok(dir)
}

/// Scene geometry as loaded for a run.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub mesh: Option<TriMesh>,
    /// Points fed to the map builder: surface samples for meshes, raw points for clouds.
    pub points: Vec<Vec3>,
    /// Keypoints shipped with a fixture scene.
    pub fixture_keypoints: Option<Vec<Keypoint>>,
}

impl LoadedScene {
    pub fn from_mesh(mesh: TriMesh, sample_spacing: f64) -> Self {
        let points = surface_sample(&mesh, sample_spacing);
        Self {
            mesh: Some(mesh),
            points,
            fixture_keypoints: None,
        }
    }

    pub fn from_geometry(geometry: Geometry, sample_spacing: f64) -> Self {
        match geometry {
            Geometry::Mesh(m) => Self::from_mesh(m, sample_spacing),
            Geometry::Cloud(c) => Self {
                mesh: None,
                points: c.points,
                fixture_keypoints: None,
            },
        }
    }

    pub fn fixture(name: &str, sample_spacing: f64) -> Option<Self> {
        let f = fixtures::fixture(name)?;
        let mut scene = Self::from_mesh(f.mesh, sample_spacing);
        scene.fixture_keypoints = Some(f.keypoints);
        Some(scene)
    }

    pub fn sdf(&self) -> Result<SdfScene, PipelineError> {
        let mesh = self
            .mesh
            .clone()
            .ok_or_else(|| PipelineError::MissingInput("penetration metrics need a mesh scene".into()))?;
        Ok(SdfScene::new(mesh)?)
    }
}

pub fn load_scene(cfg: &RunConfig) -> Result<LoadedScene, PipelineError> {
    let spacing = cfg.map.sample_spacing;
    if let Some(path) = &cfg.scene.path {
        let geometry = load_geometry(path, cfg.scene.format()?, &cfg.scene.remap())?;
        return Ok(LoadedScene::from_geometry(geometry, spacing));
    }
    if let Some(name) = &cfg.scene.fixture {
        return LoadedScene::fixture(name, spacing).ok_or_else(|| {
            PipelineError::Config(format!(
                "unknown fixture `{name}`; expected one of {:?}",
                fixtures::FIXTURE_NAMES
            ))
        });
    }
    Err(PipelineError::MissingInput("scene.path or scene.fixture".into()))
}

/// Count map over the z band, then box-smoothed.
pub fn build_planning_map(points: &[Vec3], map: &MapConfig) -> Result<ObstacleMap, PipelineError> {
    let cloud = PointCloud::new(points.to_vec())?;
    let raw = build_map(&cloud, map.cell_size, (map.z_band[0], map.z_band[1]))?;
    Ok(raw.smooth(map.kernel_radius))
}

pub fn load_keypoints(cfg: &RunConfig, scene: &LoadedScene) -> Result<Vec<Keypoint>, PipelineError> {
    match (&cfg.plan.keypoints, &scene.fixture_keypoints) {
        (Some(path), _) => parse_json(path),
        (None, Some(k)) => Ok(k.clone()),
        (None, None) => Err(PipelineError::MissingInput("plan.keypoints".into())),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapMeta {
    pub frame: GridFrame,
    pub z_band: [f64; 2],
    pub kernel_radius: usize,
    pub point_count: usize,
    pub max_value: f64,
    pub empty_input: bool,
}

pub fn map_meta(map: &ObstacleMap, cfg: &MapConfig, point_count: usize) -> MapMeta {
    MapMeta {
        frame: *map.frame(),
        z_band: cfg.z_band,
        kernel_radius: cfg.kernel_radius,
        point_count,
        max_value: map.max_value(),
        empty_input: map.is_empty_input(),
    }
}

pub fn run_map(cfg: &RunConfig) -> Result<Vec<PathBuf>, PipelineError> {
    cfg.validate()?;
    let scene = load_scene(cfg)?;
    let map = build_planning_map(&scene.points, &cfg.map)?;
    let dir = prepare_output(cfg)?;
    let meta = map_meta(&map, &cfg.map, scene.points.len());
    log::info!("map {}x{} from {} points", map.width(), map.height(), scene.points.len());
    Ok(vec![
        write_out(dir, "map.csv", map.to_csv().as_bytes())?,
        write_out(dir, "map.png", &map.to_png()?)?,
        write_out(dir, "map_meta.json", to_json(&meta).as_bytes())?,
    ])
}

/// Plan output document. `density_sum` is the summed map value over the dense path cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub schema_version: u32,
    pub lambda: f64,
    pub density_sum: f64,
    pub config: PlanConfig,
    pub map: GridFrame,
    pub keypoints: Vec<Keypoint>,
    pub plan: PathPlan,
}

impl PlanDocument {
    pub fn to_json(&self) -> String {
        to_json(self)
    }
}

pub fn plan_document(map: &ObstacleMap, keypoints: &[Keypoint], config: &PlanConfig) -> Result<PlanDocument, PlanError> {
    let plan = plan_path(map, keypoints, config)?;
    Ok(PlanDocument {
        schema_version: PLAN_SCHEMA_VERSION,
        lambda: config.heuristic.lambda,
        density_sum: path_density_sum(map, &plan.dense_path),
        config: config.clone(),
        map: *map.frame(),
        keypoints: keypoints.to_vec(),
        plan,
    })
}

/// Map raster with the dense path in red and sparse waypoints in blue.
pub fn plan_overlay_png(map: &ObstacleMap, plan: &PathPlan) -> Result<Vec<u8>, PipelineError> {
    let gray = map.to_gray();
    let mut img = image::RgbImage::from_fn(gray.width(), gray.height(), |x, y| {
        let l = gray.get_pixel(x, y)[0];
        image::Rgb([l, l, l])
    });
    let h = map.height() as u32;
    for c in &plan.dense_path {
        img.put_pixel(c.i as u32, h - 1 - c.j as u32, image::Rgb([255, 0, 0]));
    }
    for &k in &plan.sparse_indices {
        let c = plan.dense_path[k];
        img.put_pixel(c.i as u32, h - 1 - c.j as u32, image::Rgb([0, 64, 255]));
    }
    Ok(encode_png(&image::DynamicImage::ImageRgb8(img))?)
}

fn lambda_label(l: f64) -> String {
    format!("{l}").replace('-', "m")
}

/// Plans once per configured λ. A single λ writes `plan.json`; a sweep writes
/// `plan_lambda_<λ>.json` per value plus `lambda_sweep.csv`.
pub fn run_plan(cfg: &RunConfig) -> Result<Vec<PlanDocument>, PipelineError> {
    cfg.validate()?;
    let scene = load_scene(cfg)?;
    let keypoints = load_keypoints(cfg, &scene)?;
    let map = build_planning_map(&scene.points, &cfg.map)?;
    let lambdas = cfg.plan.lambdas();
    let mut docs = Vec::with_capacity(lambdas.len());
    for &l in &lambdas {
        docs.push(plan_document(&map, &keypoints, &cfg.plan.plan_config(l))?);
    }
    let dir = prepare_output(cfg)?;
    if cfg.plan.lambda_sweep.is_empty() {
        write_out(dir, "plan.json", docs[0].to_json().as_bytes())?;
        write_out(dir, "plan_overlay.png", &plan_overlay_png(&map, &docs[0].plan)?)?;
    } else {
        let mut csv = String::from("lambda,total_cost,density_sum,dense_cells\n");
        for d in &docs {
            let label = lambda_label(d.lambda);
            write_out(dir, &format!("plan_lambda_{label}.json"), d.to_json().as_bytes())?;
            write_out(dir, &format!("plan_lambda_{label}.png"), &plan_overlay_png(&map, &d.plan)?)?;
            csv.push_str(&format!(
                "{},{},{},{}\n",
                d.lambda,
                d.plan.total_cost,
                d.density_sum,
                d.plan.dense_path.len()
            ));
        }
        write_out(dir, "lambda_sweep.csv", csv.as_bytes())?;
    }
    Ok(docs)
}

#[derive(Debug, Clone)]
pub struct GuideOutcome {
    pub initial: TrajectoryState,
    pub guided: TrajectoryState,
    pub anchors: AnchorTuple,
    /// Denoising timestep of each guided update, in execution order.
    pub timesteps: Vec<usize>,
    pub reports: Vec<GuidanceReport>,
}

impl GuideOutcome {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("step,t,root,hand,scene,repulsion_pairs\n");
        for (k, (t, r)) in self.timesteps.iter().zip(&self.reports).enumerate() {
            s.push_str(&format!("{k},{t},{},{},{},{}\n", r.root, r.hand, r.scene, r.repulsion_pairs));
        }
        s
    }
}

/// Scene points inside the map's z band, voxel-thinned, as the obstacle cloud for repulsion.
pub fn repulsion_points(scene: &LoadedScene, map: &MapConfig, voxel: f64) -> Vec<Vec3> {
    let [lo, hi] = map.z_band;
    let band: Vec<Vec3> = scene.points.iter().filter(|p| p.z > lo && p.z < hi).copied().collect();
    if voxel > 0.0 {
        voxel_downsample(&band, voxel)
    } else {
        band
    }
}

/// Guidance without file output. Anchors come from the anchor file or from a
/// plan at the first configured λ; the trajectory from its file or from a
/// synthetic walk through the root anchors.
pub fn guide(cfg: &RunConfig) -> Result<GuideOutcome, PipelineError> {
    cfg.validate()?;
    let g = &cfg.guide;
    let needs_scene = g.anchors.is_none() || g.params.lambda2 != 0.0;
    let has_scene = cfg.scene.path.is_some() || cfg.scene.fixture.is_some();
    let scene = if needs_scene || has_scene {
        Some(load_scene(cfg)?)
    } else {
        None
    };
    let anchors = match &g.anchors {
        Some(path) => AnchorTuple::from_json(&read_text(path)?)?,
        None => {
            let scene = scene.as_ref().expect("scene loaded when anchors are planned");
            let keypoints = load_keypoints(cfg, scene)?;
            let map = build_planning_map(&scene.points, &cfg.map)?;
            let doc = plan_document(&map, &keypoints, &cfg.plan.plan_config(cfg.plan.lambdas()[0]))?;
            AnchorTuple::from_schedule(&doc.plan.sparse_path, &doc.plan.frame_schedule)
        }
    };
    let initial = match &g.trajectory {
        Some(path) => TrajectoryState::from_json(&read_text(path)?)?,
        None => {
            let waypoints: Vec<[f64; 3]> = anchors.root.iter().map(|p| [p.x, p.y, p.z]).collect();
            if waypoints.is_empty() {
                return Err(PipelineError::MissingInput("root anchors to synthesize a trajectory from".into()));
            }
            synthesize_walk(&waypoints, &anchors.root_frames, &g.synth)
        }
    };
    anchors.validate(initial.frames())?;
    let cloud = match &scene {
        Some(s) if g.params.lambda2 != 0.0 => Some(repulsion_points(s, &cfg.map, g.scene_voxel)),
        _ => None,
    };
    let objective = GuidanceObjective::new(anchors.clone(), cloud.as_deref());
    let (guided, reports) = run_guidance(&initial, &objective, &g.params, &mut PassThrough, g.denoising_steps)?;
    let timesteps = (0..g.denoising_steps)
        .rev()
        .filter(|&t| g.params.guided_timesteps.contains(t))
        .collect();
    Ok(GuideOutcome {
        initial,
        guided,
        anchors,
        timesteps,
        reports,
    })
}

/// Writes `guided_trajectory.json`, `anchors.json` and `guidance_log.csv`.
pub fn run_guide(cfg: &RunConfig) -> Result<GuideOutcome, PipelineError> {
    let outcome = guide(cfg)?;
    let dir = prepare_output(cfg)?;
    write_out(dir, "guided_trajectory.json", outcome.guided.to_json()?.as_bytes())?;
    write_out(dir, "anchors.json", outcome.anchors.to_json()?.as_bytes())?;
    write_out(dir, "guidance_log.csv", outcome.log_csv().as_bytes())?;
    Ok(outcome)
}

/// Joint positions stand in for body vertices when evaluating a trajectory.
pub fn trajectory_sequence(traj: &TrajectoryState) -> MotionSequence {
    MotionSequence {
        frame_rate: traj.frame_rate(),
        body: traj.poses().iter().map(|p| p.joints.to_vec()).collect(),
        hand_vertices: Vec::new(),
        objects: Vec::new(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalOutcome {
    pub rows: Vec<(String, MetricReport)>,
}

fn source_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Evaluates every configured sequence and trajectory. One input writes
/// `report.json`; several write `metrics.csv` with one row each, in config order.
pub fn run_eval(cfg: &RunConfig) -> Result<EvalOutcome, PipelineError> {
    cfg.validate()?;
    let e = &cfg.eval;
    let mut inputs: Vec<(String, MotionSequence)> = Vec::new();
    for path in &e.sequences {
        let seq = MotionSequence::from_json(&read_text(path)?).map_err(|error| PipelineError::Metrics {
            source_name: path.display().to_string(),
            error,
        })?;
        inputs.push((source_name(path), seq));
    }
    for path in &e.trajectories {
        let traj = TrajectoryState::from_json(&read_text(path)?)?;
        inputs.push((source_name(path), trajectory_sequence(&traj)));
    }
    if inputs.is_empty() {
        return Err(PipelineError::MissingInput("eval.sequences or eval.trajectories".into()));
    }
    let scene = load_scene(cfg)?.sdf()?;
    let task: Option<ObjectTask> = e.task.as_deref().map(parse_json).transpose()?;
    let object = match &e.object_mesh {
        Some(path) => {
            let mesh = load_geometry(path, None, &cfg.scene.remap())?
                .into_mesh()
                .ok_or_else(|| PipelineError::MissingInput("eval.object_mesh must be a mesh".into()))?;
            Some(SdfScene::new(mesh)?)
        }
        None => None,
    };
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(inputs.len());
    let results: Vec<Result<MetricReport, MetricsError>> = std::thread::scope(|s| {
        let chunk = inputs.len().div_ceil(workers);
        let handles: Vec<_> = inputs
            .chunks(chunk)
            .map(|part| {
                let (scene, task, object) = (&scene, task.as_ref(), object.as_ref());
                s.spawn(move || {
                    part.iter()
                        .map(|(_, seq)| {
                            let inputs = EvalInputs {
                                sequence: seq,
                                scene,
                                task,
                                object,
                                contact_window: e.contact_window,
                            };
                            evaluate(&inputs, &e.metrics)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("eval worker panicked")).collect()
    });
    let mut rows = Vec::with_capacity(inputs.len());
    for ((name, _), r) in inputs.into_iter().zip(results) {
        let report = r.map_err(|error| PipelineError::Metrics {
            source_name: name.clone(),
            error,
        })?;
        rows.push((name, report));
    }
    let dir = prepare_output(cfg)?;
    if rows.len() == 1 {
        write_out(dir, "report.json", to_json(&rows[0].1).as_bytes())?;
    } else {
        write_out(dir, "metrics.csv", reports_to_csv(&rows).as_bytes())?;
    }
    Ok(EvalOutcome { rows })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable document");
    s.push('\n');
    s
}
