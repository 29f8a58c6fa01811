//! Plan execution against the action model, goal achievement, and batch
//! evaluation over a task manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action_model::{ActionId, CausalTheory, GroundAtom, GroundDomain, GroundingError};
use crate::env_graph::{Condition, ConditionSet, EntityId, EnvGraph};
use crate::planner::{Inapplicable, PlanError, Planner, State};
use crate::skeleton::{parse_plan_line, parse_skeleton_json};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

/// One concrete action: verb plus object ids, the actor left implicit.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlanStep {
    pub verb: String,
    pub objects: Vec<EntityId>,
}

impl PlanStep {
    pub fn new(verb: impl Into<String>, objects: Vec<EntityId>) -> Self {
        PlanStep {
            verb: verb.into(),
            objects,
        }
    }

    /// Parses `[verb] <id> <id>`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let line = parse_plan_line(text)?;
        let objects = line
            .targets
            .iter()
            .map(|t| t.parse::<EntityId>().map_err(|_| format!("`{t}` is not an entity id")))
            .collect::<Result<_, _>>()?;
        Ok(PlanStep::new(line.verb, objects))
    }

    pub fn render(&self) -> String {
        let mut s = format!("[{}]", self.verb);
        for o in &self.objects {
            let _ = write!(s, " <{o}>");
        }
        s
    }
}

/// Reads `{"actions": ["[verb] <id> ...", ...]}`.
pub fn parse_plan_file(text: &str) -> Result<Vec<PlanStep>, String> {
    #[derive(Deserialize)]
    struct PlanFile {
        actions: Vec<String>,
    }
    let file: PlanFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
    file.actions
        .iter()
        .enumerate()
        .map(|(i, l)| PlanStep::parse(l).map_err(|e| format!("step {}: {e}", i + 1)))
        .collect()
}

pub fn plan_file_json(steps: &[PlanStep]) -> String {
    let actions: Vec<String> = steps.iter().map(PlanStep::render).collect();
    serde_json::to_string_pretty(&serde_json::json!({ "actions": actions })).expect("plain JSON")
}

/// The steps of a trajectory's actions.
pub fn steps_of(dom: &GroundDomain, actions: &[ActionId]) -> Vec<PlanStep> {
    actions
        .iter()
        .map(|&a| {
            let act = &dom.actions[a];
            PlanStep::new(act.verb(), act.objects().to_vec())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepFailure {
    /// Zero-based index into the plan.
    pub index: usize,
    pub step: PlanStep,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecResult {
    pub executable: bool,
    pub failed_step: Option<StepFailure>,
    /// The state after the last step that ran.
    pub final_state: ConditionSet,
    pub steps_run: usize,
}

/// Runs `steps` from the scene's initial state under the model's
/// transition relation, stopping at the first inapplicable step.
pub fn execute(theory: &CausalTheory, graph: &EnvGraph, steps: &[PlanStep]) -> Result<ExecResult, MetricsError> {
    let domain = GroundDomain::new(theory, graph)?;
    let chars = domain.characters();
    if chars.len() != 1 {
        return Err(PlanError::Characters(chars.len()).into());
    }
    let actor = chars[0];
    let all: Vec<ActionId> = (0..domain.num_actions()).collect();
    let planner = Planner::from_parts(domain, Vec::new(), all)?;
    let mut state = planner.initial.clone();
    for (index, step) in steps.iter().enumerate() {
        let mut args = vec![actor];
        args.extend(&step.objects);
        let fail = |reason: String| StepFailure {
            index,
            step: step.clone(),
            reason,
        };
        let outcome = match planner.domain.action_id(&GroundAtom::new(step.verb.clone(), args)) {
            None => Err(fail(format!(
                "{} is not an action of the model over this scene",
                step.render()
            ))),
            Some(a) => planner.transition(&state, a).map_err(|e| fail(describe(theory, &e))),
        };
        match outcome {
            Ok(next) => state = next,
            Err(f) => {
                return Ok(ExecResult {
                    executable: false,
                    failed_step: Some(f),
                    final_state: conditions(theory, &planner.domain, graph, &state),
                    steps_run: index,
                })
            }
        }
    }
    Ok(ExecResult {
        executable: true,
        failed_step: None,
        final_state: conditions(theory, &planner.domain, graph, &state),
        steps_run: steps.len(),
    })
}

fn describe(theory: &CausalTheory, e: &Inapplicable) -> String {
    match e {
        Inapplicable::Nonexecutable { line, .. } => match theory.rules.iter().find(|r| r.line == *line) {
            Some(rule) => format!("{e}: {rule}"),
            None => e.to_string(),
        },
        _ => e.to_string(),
    }
}

/// Maps a fluent state back to graph conditions. Scene conditions that no
/// ground fluent represents carry over unchanged.
pub fn conditions(theory: &CausalTheory, dom: &GroundDomain, graph: &EnvGraph, s: &State) -> ConditionSet {
    let mut out = ConditionSet::new();
    for c in graph.snapshot_states() {
        if fluents_for(theory, dom, &c).is_empty() {
            out.insert(c);
        }
    }
    for f in s.iter() {
        let atom = &dom.fluents[f];
        match atom.args.as_slice() {
            [id] => {
                for (sym, fl) in &theory.state_map {
                    if fl == &atom.name {
                        out.insert(Condition::state(*id, sym.clone()));
                    }
                }
            }
            [from, to] => {
                for (kind, fl) in &theory.relation_map {
                    if fl == &atom.name {
                        out.insert(Condition::relation(kind.clone(), *from, *to));
                    }
                }
            }
            _ => {}
        }
    }
    out
}

fn fluents_for(theory: &CausalTheory, dom: &GroundDomain, c: &Condition) -> Vec<usize> {
    let (map, name, args) = match c {
        Condition::State { id, state } => (&theory.state_map, state, vec![*id]),
        Condition::Relation { relation, from, to } => (&theory.relation_map, relation, vec![*from, *to]),
    };
    map.iter()
        .filter(|(k, _)| k == name)
        .filter_map(|(_, fl)| dom.fluent_id(&GroundAtom::new(fl.clone(), args.clone())))
        .collect()
}

/// Fraction of required changes `s_init -> s_gt` that `s_final` agrees
/// with. No required changes scores 1.0.
pub fn gar(s_init: &ConditionSet, s_gt: &ConditionSet, s_final: &ConditionSet) -> f64 {
    let required: Vec<(&Condition, bool)> = s_gt
        .difference(s_init)
        .map(|c| (c, true))
        .chain(s_init.difference(s_gt).map(|c| (c, false)))
        .collect();
    if required.is_empty() {
        return 1.0;
    }
    let hit = required
        .iter()
        .filter(|(c, present)| s_final.contains(*c) == *present)
        .count();
    hit as f64 / required.len() as f64
}

fn states_only(s: &ConditionSet) -> ConditionSet {
    s.iter().filter(|c| c.is_state()).cloned().collect()
}

/// Ground-truth goal as a delta over the initial scene.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GoalSpec {
    pub add: Vec<Condition>,
    pub remove: Vec<Condition>,
}

impl GoalSpec {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn apply(&self, s_init: &ConditionSet) -> ConditionSet {
        let mut out = s_init.clone();
        for c in &self.remove {
            out.remove(c);
        }
        out.extend(self.add.iter().cloned());
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    pub scene: PathBuf,
    pub skeleton: PathBuf,
    pub goal: PathBuf,
}

/// A list of tasks with paths relative to the manifest.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tasks: Vec<Task>,
    #[serde(skip)]
    pub base: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let text = read(path)?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|e| MetricsError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        m.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }
}

fn read(path: &Path) -> Result<String, MetricsError> {
    std::fs::read_to_string(path).map_err(|e| MetricsError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    pub max_horizon: usize,
    pub node_budget: usize,
    /// Score only entity states, ignoring relation changes.
    pub states_only: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            max_horizon: 40,
            node_budget: crate::planner::DEFAULT_NODE_BUDGET,
            states_only: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub task: String,
    pub executable: bool,
    pub steps: usize,
    pub gar: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<Row>,
    pub exec_rate: f64,
    pub mean_gar: f64,
}

impl Report {
    fn from_rows(rows: Vec<Row>) -> Self {
        let n = rows.len().max(1) as f64;
        let exec_rate = rows.iter().filter(|r| r.executable).count() as f64 / n;
        let mean_gar = rows.iter().map(|r| r.gar).sum::<f64>() / n;
        Report {
            rows,
            exec_rate,
            mean_gar,
        }
    }

    /// One row per task, then an `ALL` row with the exec rate and mean GAR.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut write = || -> csv::Result<()> {
            w.write_record(["task", "executable", "steps", "gar", "error"])?;
            for r in &self.rows {
                w.write_record([
                    r.task.clone(),
                    r.executable.to_string(),
                    r.steps.to_string(),
                    format!("{:.4}", r.gar),
                    r.error.clone().unwrap_or_default(),
                ])?;
            }
            w.write_record([
                "ALL".to_string(),
                format!("{:.4}", self.exec_rate),
                String::new(),
                format!("{:.4}", self.mean_gar),
                String::new(),
            ])
        };
        write().expect("writing CSV to memory cannot fail");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV of UTF-8 fields")
    }

    pub fn to_table(&self) -> String {
        let w = self.rows.iter().map(|r| r.task.len()).max().unwrap_or(0).max(4);
        let mut s = format!("{:<w$}  {:>5}  {:>5}  {:>6}\n", "task", "exec", "steps", "GAR");
        for r in &self.rows {
            let _ = write!(
                s,
                "{:<w$}  {:>5}  {:>5}  {:>6.3}",
                r.task,
                if r.executable { "yes" } else { "no" },
                r.steps,
                r.gar
            );
            if let Some(e) = &r.error {
                let _ = write!(s, "  {e}");
            }
            s.push('\n');
        }
        let _ = writeln!(
            s,
            "{:<w$}  {:>4.0}%  {:>5}  {:>6.3}",
            "ALL",
            self.exec_rate * 100.0,
            "",
            self.mean_gar
        );
        s
    }
}

/// Plans each task from its skeleton, executes the plan and scores it.
/// A task that fails to load, plan or execute gets a row with its error.
pub fn evaluate_batch(theory: &CausalTheory, manifest: &Manifest, opts: EvalOptions) -> Report {
    let rows = manifest
        .tasks
        .iter()
        .map(|t| match evaluate_task(theory, manifest, t, opts) {
            Ok(r) => r,
            Err(e) => Row {
                task: t.name.clone(),
                executable: false,
                steps: 0,
                gar: 0.0,
                error: Some(e.to_string()),
            },
        })
        .collect();
    Report::from_rows(rows)
}

fn evaluate_task(theory: &CausalTheory, m: &Manifest, t: &Task, opts: EvalOptions) -> Result<Row, MetricsError> {
    let file_err = |p: &Path, message: String| MetricsError::File {
        path: p.display().to_string(),
        message,
    };
    let scene_path = m.resolve(&t.scene);
    let graph = crate::env_graph::parse_graph(&read(&scene_path)?).map_err(|e| file_err(&scene_path, e.to_string()))?;
    let skel_path = m.resolve(&t.skeleton);
    let plan = parse_skeleton_json(&read(&skel_path)?).map_err(|e| file_err(&skel_path, e.to_string()))?;
    let goal_path = m.resolve(&t.goal);
    let goal = GoalSpec::parse(&read(&goal_path)?).map_err(|e| file_err(&goal_path, e))?;

    let planner = Planner::new(theory, &graph, &plan)?.with_budget(opts.node_budget);
    let Some(tr) = planner.solve(opts.max_horizon)? else {
        return Ok(Row {
            task: t.name.clone(),
            executable: false,
            steps: 0,
            gar: 0.0,
            error: Some(format!("no plan within {} steps", opts.max_horizon)),
        });
    };
    let steps = steps_of(&planner.domain, &tr.actions);
    let exec = execute(theory, &graph, &steps)?;
    Ok(Row {
        task: t.name.clone(),
        executable: exec.executable,
        steps: steps.len(),
        gar: score(&graph, &goal, &exec.final_state, opts.states_only),
        error: exec.failed_step.map(|f| format!("step {}: {}", f.index + 1, f.reason)),
    })
}

/// GAR of a final state against a goal spec over `graph`'s initial state.
pub fn score(graph: &EnvGraph, goal: &GoalSpec, s_final: &ConditionSet, states_only_flag: bool) -> f64 {
    let s_init = graph.snapshot_states();
    let s_gt = goal.apply(&s_init);
    if states_only_flag {
        gar(&states_only(&s_init), &states_only(&s_gt), &states_only(s_final))
    } else {
        gar(&s_init, &s_gt, s_final)
    }
}

/// Per-condition diff between two states, for reports.
pub fn diff(before: &ConditionSet, after: &ConditionSet) -> BTreeMap<&'static str, Vec<Condition>> {
    let mut out = BTreeMap::new();
    out.insert("added", after.difference(before).cloned().collect());
    out.insert("removed", before.difference(after).cloned().collect());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_model::parse_action_model;
    use crate::assets::{HOUSEHOLD_MODEL, LAUNDRY_SCENE};
    use crate::env_graph::parse_graph;

    fn set(cs: &[Condition]) -> ConditionSet {
        cs.iter().cloned().collect()
    }

    fn household() -> (CausalTheory, EnvGraph) {
        (
            parse_action_model(HOUSEHOLD_MODEL).unwrap(),
            parse_graph(LAUNDRY_SCENE).unwrap(),
        )
    }

    fn steps(lines: &[&str]) -> Vec<PlanStep> {
        lines.iter().map(|l| PlanStep::parse(l).unwrap()).collect()
    }

    #[test]
    fn gar_counts_additions_and_removals() {
        let init = set(&[Condition::state(7, "dirty")]);
        let gt = set(&[Condition::state(7, "clean")]);
        assert_eq!(gar(&init, &gt, &gt), 1.0);
        assert_eq!(gar(&init, &gt, &init), 0.0);
        let both = set(&[Condition::state(7, "dirty"), Condition::state(7, "clean")]);
        assert_eq!(gar(&init, &gt, &both), 0.5);
        assert_eq!(gar(&init, &init, &gt), 1.0);
    }

    #[test]
    fn empty_plan_is_executable_and_keeps_the_scene() {
        let (t, g) = household();
        let r = execute(&t, &g, &[]).unwrap();
        assert!(r.executable);
        assert_eq!(r.final_state, g.snapshot_states());
    }

    #[test]
    fn switchon_while_unplugged_fails_citing_the_law() {
        let (t, g) = household();
        let plan = steps(&["[walk] <2>", "[find] <5>", "[switchon] <5>"]);
        let r = execute(&t, &g, &plan).unwrap();
        assert!(!r.executable);
        let f = r.failed_step.unwrap();
        assert_eq!(f.index, 2);
        assert!(f.reason.contains("plugged_out(O)"), "{}", f.reason);
        assert_eq!(r.steps_run, 2);
    }

    #[test]
    fn unknown_step_is_reported() {
        let (t, g) = household();
        let r = execute(&t, &g, &steps(&["[fly] <2>"])).unwrap();
        assert!(r.failed_step.unwrap().reason.contains("not an action"));
    }

    #[test]
    fn executed_plan_changes_mapped_conditions() {
        let (t, g) = household();
        let r = execute(&t, &g, &steps(&["[walk] <2>", "[find] <5>", "[plugin] <5>"])).unwrap();
        assert!(r.executable);
        let d = diff(&g.snapshot_states(), &r.final_state);
        assert_eq!(
            d["added"],
            vec![Condition::state(5, "plugged_in"), Condition::relation("in_room", 1, 2)]
        );
        assert_eq!(
            d["removed"],
            vec![Condition::state(5, "plugged_out"), Condition::relation("in_room", 1, 3)]
        );
    }

    #[test]
    fn plan_steps_round_trip() {
        let s = steps(&["[putin] <7> <5>", "[walk] <2>"]);
        assert_eq!(parse_plan_file(&plan_file_json(&s)).unwrap(), s);
        assert!(PlanStep::parse("[walk] <kitchen>").is_err());
    }

    #[test]
    fn goal_spec_applies_as_delta() {
        let g = GoalSpec::parse(r#"{"add": [{"id": 7, "state": "clean"}], "remove": [{"id": 7, "state": "dirty"}]}"#)
            .unwrap();
        let init = set(&[Condition::state(7, "dirty"), Condition::relation("inside", 6, 4)]);
        assert_eq!(
            g.apply(&init),
            set(&[Condition::state(7, "clean"), Condition::relation("inside", 6, 4)])
        );
    }

    #[test]
    fn csv_quotes_errors_and_ends_with_aggregate() {
        let r = Report::from_rows(vec![
            Row {
                task: "a".into(),
                executable: true,
                steps: 3,
                gar: 1.0,
                error: None,
            },
            Row {
                task: "b".into(),
                executable: false,
                steps: 0,
                gar: 0.0,
                error: Some("bad, \"quoted\"".into()),
            },
        ]);
        let text = r.to_csv();
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let recs: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
        assert_eq!(recs.len(), 3);
        assert_eq!(&recs[1][4], "bad, \"quoted\"");
        assert_eq!(&recs[2][0], "ALL");
        assert_eq!(&recs[2][1], "0.5000");
        assert_eq!(&recs[2][3], "0.5000");
    }

    #[test]
    fn states_only_ignores_relations() {
        let graph = parse_graph(LAUNDRY_SCENE).unwrap();
        let goal = GoalSpec {
            add: vec![Condition::relation("inside", 7, 5)],
            remove: vec![],
        };
        let fin = graph.snapshot_states();
        assert_eq!(score(&graph, &goal, &fin, false), 0.0);
        assert_eq!(score(&graph, &goal, &fin, true), 1.0);
    }
}
