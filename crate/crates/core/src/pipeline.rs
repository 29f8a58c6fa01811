//! Skeleton to checked plan: search, re-execute, score, and witness.

use thiserror::Error;

use crate::action_model::CausalTheory;
use crate::env_graph::EnvGraph;
use crate::metrics::{execute, score, steps_of, ExecResult, GoalSpec, MetricsError, PlanStep};
use crate::planner::{PlanError, Planner, Trajectory};
use crate::skeleton::{satisfies, SkeletonError, SkeletonPlan, Witness};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no plan within {0} steps")]
    NoPlan(usize),
    #[error("the plan found does not satisfy the skeleton")]
    Unwitnessed,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub planner: Planner,
    pub trajectory: Trajectory,
    pub steps: Vec<PlanStep>,
    pub exec: ExecResult,
    pub gar: Option<f64>,
    pub witness: Witness,
}

impl Outcome {
    /// `occurs(C, a, t)` lines with time starting at 1.
    pub fn occurs_lines(&self) -> Vec<String> {
        self.trajectory.occurs_lines(&self.planner.domain, 1)
    }

    /// Numbered plan text, one step per line.
    pub fn plan_text(&self) -> String {
        let dom = &self.planner.domain;
        self.trajectory
            .actions
            .iter()
            .enumerate()
            .map(|(i, &a)| format!("{}. {}\n", i + 1, dom.actions[a]))
            .collect()
    }
}

/// Finds a shortest plan for `plan`, re-executes it, scores it against
/// `goal` when given, and recovers the skeleton witness.
pub fn plan_and_check(
    theory: &CausalTheory,
    graph: &EnvGraph,
    plan: &SkeletonPlan,
    goal: Option<&GoalSpec>,
    max_horizon: usize,
    node_budget: usize,
) -> Result<Outcome, PipelineError> {
    let planner = Planner::new(theory, graph, plan)?.with_budget(node_budget);
    let trajectory = planner.solve(max_horizon)?.ok_or(PipelineError::NoPlan(max_horizon))?;
    let steps = steps_of(&planner.domain, &trajectory.actions);
    let exec = execute(theory, graph, &steps)?;
    let gar = goal.map(|g| score(graph, g, &exec.final_state, false));
    let witness =
        satisfies(&planner.domain, &trajectory, plan, &theory.signature.subtasks)?.ok_or(PipelineError::Unwitnessed)?;
    Ok(Outcome {
        planner,
        trajectory,
        steps,
        exec,
        gar,
        witness,
    })
}
