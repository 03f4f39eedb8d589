pub mod fixtures;
pub mod geometry;
pub mod guidance;
pub mod metrics;
pub mod obstacle_map;
pub mod pipeline;
pub mod planner;
pub mod pose_pipeline;
