//! Skeleton-guided task planning over environment graphs.

pub mod action_model;
pub mod asp;
pub mod assets;
pub mod compiler;
pub mod env_graph;
pub mod grounding;
pub mod metrics;
pub mod pipeline;
pub mod planner;
pub mod refine;
pub mod skeleton;
pub mod stable;

pub use action_model::{parse_action_model, CausalTheory, GroundDomain, ModelError};
pub use env_graph::{load_graph, parse_graph, Condition, ConditionSet, EntityId, EnvGraph, GraphError};
pub use planner::{PlanError, Planner, Trajectory};
pub use skeleton::{Binding, SkeletonError, SkeletonPlan};
