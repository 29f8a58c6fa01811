//! Fixtures shared by the benchmarks.

use skelplan::assets;
use skelplan::skeleton::parse_skeleton_json;
use skelplan::{parse_action_model, parse_graph, CausalTheory, EnvGraph, SkeletonPlan};

pub fn laundry() -> (CausalTheory, EnvGraph, SkeletonPlan) {
    (
        parse_action_model(assets::HOUSEHOLD_MODEL).expect("bundled model"),
        parse_graph(assets::LAUNDRY_SCENE).expect("bundled scene"),
        parse_skeleton_json(assets::WASH_CLOTHES_SKELETON).expect("bundled skeleton"),
    )
}

pub fn micro_model() -> CausalTheory {
    parse_action_model(assets::MICRO_MODEL).expect("bundled micro model")
}
