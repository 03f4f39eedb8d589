use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scene_nav::pipeline::{self, PipelineError, RunConfig};
use scene_nav::planner::PlanError;

/// Obstacle maps, path planning, trajectory guidance and interaction metrics for indoor scenes.
#[derive(Parser)]
#[command(name = "scene-nav", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the obstacle map and write CSV, PNG and metadata.
    Map(Common),
    /// Plan a path through the keypoints.
    Plan(Common),
    /// Refine a trajectory toward its anchors.
    Guide(Common),
    /// Compute interaction metrics for motion sequences.
    Eval(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run config; relative paths inside resolve against its directory.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted config override, e.g. `--set plan.lambda=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Built-in scene: desk_room, corridor or u_shape.
    #[arg(long)]
    fixture: Option<String>,
    #[arg(long)]
    keypoints: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Print the effective config and exit.
    #[arg(long)]
    print_config: bool,
}

impl Common {
    fn config(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(p) = &self.scene {
            cfg.scene.path = Some(p.clone());
        }
        if let Some(f) = &self.fixture {
            cfg.scene.fixture = Some(f.clone());
            cfg.scene.path = None;
        }
        if let Some(p) = &self.keypoints {
            cfg.plan.keypoints = Some(p.clone());
        }
        if let Some(l) = self.lambda {
            cfg.plan.lambda = l;
            cfg.plan.lambda_sweep.clear();
        }
        if let Some(dir) = &self.output {
            cfg.output.dir = dir.clone();
        }
        Ok(cfg)
    }
}

fn report(err: &PipelineError) {
    eprintln!("error: {err}");
    if let PipelineError::Plan(e) = err {
        match e.root() {
            PlanError::InvalidNodes(nodes) => {
                for n in nodes {
                    eprintln!("  keypoint {}: {}", n.index, serde_json::to_string(&n.status).unwrap_or_default());
                }
            }
            PlanError::NoPath(summary) => {
                if let Some(i) = e.segment_index() {
                    eprintln!("  failing segment: {i}");
                }
                eprintln!("  explored: {}", serde_json::to_string(summary).unwrap_or_default());
            }
            _ => {}
        }
    }
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let (Command::Map(c) | Command::Plan(c) | Command::Guide(c) | Command::Eval(c)) = &cli.command;
    let cfg = c.config()?;
    if c.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    match &cli.command {
        Command::Map(_) => {
            for p in pipeline::run_map(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Plan(_) => {
            for d in pipeline::run_plan(&cfg)? {
                println!(
                    "lambda={} cost={} density_sum={} waypoints={}",
                    d.lambda,
                    d.plan.total_cost,
                    d.density_sum,
                    d.plan.sparse_path.len()
                );
            }
        }
        Command::Guide(_) => {
            let out = pipeline::run_guide(&cfg)?;
            if let Some(last) = out.reports.last() {
                println!("guided steps={} root={} hand={} scene={}", out.reports.len(), last.root, last.hand, last.scene);
            } else {
                println!("guided steps=0");
            }
        }
        Command::Eval(_) => {
            for (name, r) in pipeline::run_eval(&cfg)?.rows {
                println!("{name}: pene_rate={} pene_max={}", r.pene_rate, r.pene_max);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("SCENE_NAV_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
