//! Bundled domain, scenes and fixtures.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::env_graph::{EnvGraph, GraphError};
use crate::skeleton::{parse_step, SkeletonPlan};

pub const HOUSEHOLD_MODEL: &str = include_str!("../assets/household.cp");
pub const LAUNDRY_SCENE: &str = include_str!("../assets/scenes/laundry.json");
pub const WASH_CLOTHES_SKELETON: &str = include_str!("../assets/skeletons/wash_clothes.json");
pub const MICRO_MODEL: &str = include_str!("../assets/micro/micro.cp");
pub const MICRO_INSTANCES: &str = include_str!("../assets/micro/instances.json");
pub const WASH_CLOTHES_GOAL: &str = include_str!("../assets/goals/wash_clothes.json");
pub const CONFIG_EXAMPLE: &str = include_str!("../assets/config.example.toml");

/// Canned model responses, each a JSON list of strings.
pub const RESPONSES_CLOTHESPILE: &str = include_str!("../assets/responses/clothespile.json");
pub const RESPONSES_INVALID_THEN_VALID: &str = include_str!("../assets/responses/invalid_then_valid.json");
pub const RESPONSES_ARITY_THEN_VALID: &str = include_str!("../assets/responses/arity_then_valid.json");
pub const RESPONSES_ALWAYS_INVALID: &str = include_str!("../assets/responses/always_invalid.json");

/// Directory of the bundled assets in the source tree.
pub fn asset_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets")
}

/// The ten-task household evaluation suite.
pub fn task_manifest() -> PathBuf {
    asset_dir().join("tasks").join("manifest.json")
}

/// A small planning problem over [`MICRO_MODEL`].
#[derive(Clone, Debug, Deserialize)]
pub struct MicroInstance {
    pub name: String,
    pub scene: serde_json::Value,
    pub skeleton: Vec<String>,
    pub horizon: usize,
}

impl MicroInstance {
    pub fn graph(&self) -> Result<EnvGraph, GraphError> {
        crate::env_graph::parse_graph(&self.scene.to_string())
    }

    pub fn plan(&self) -> Result<SkeletonPlan, String> {
        self.skeleton
            .iter()
            .map(|l| parse_step(l))
            .collect::<Result<Vec<_>, _>>()
            .map(SkeletonPlan::Seq)
    }
}

pub fn micro_instances() -> Vec<MicroInstance> {
    serde_json::from_str(MICRO_INSTANCES).expect("bundled micro instances are valid")
}
