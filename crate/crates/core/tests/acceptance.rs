//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use skelplan::action_model::Layout;
use skelplan::assets::{self, HOUSEHOLD_MODEL, LAUNDRY_SCENE, MICRO_MODEL, WASH_CLOTHES_GOAL, WASH_CLOTHES_SKELETON};
use skelplan::compiler::{compile, compile_theory};
use skelplan::grounding::{cosine, TrigramEmbedder};
use skelplan::metrics::{evaluate_batch, gar, EvalOptions, GoalSpec, Manifest};
use skelplan::pipeline::plan_and_check;
use skelplan::planner::{Planner, DEFAULT_NODE_BUDGET};
use skelplan::refine::{run_for_scene, Config, StubClient, DEFAULT_K_MAX};
use skelplan::skeleton::{parse_skeleton_json, Element, StepArg};
use skelplan::stable::{is_causal_model, DEFAULT_BOUND};
use skelplan::{parse_action_model, parse_graph, Condition, ConditionSet, SkeletonPlan};

const COSINE_TOL: f64 = 1e-9;
const COSINE_DIAG_TOL: f64 = 1e-8;
const ORACLE_LIMIT: Duration = Duration::from_secs(60);
const DEMO_LIMIT: Duration = Duration::from_secs(30);
const BATCH_LIMIT: Duration = Duration::from_secs(300);
const MICRO_MIN: usize = 10;
const MICRO_MAX_HORIZON: usize = 3;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))?;
    Ok(took)
}

fn oracle_equivalence() -> Result<String, String> {
    let start = Instant::now();
    let theory = parse_action_model(MICRO_MODEL).map_err(|e| e.to_string())?;
    let instances = assets::micro_instances();
    ensure(instances.len() >= MICRO_MIN, || {
        format!("only {} instances", instances.len())
    })?;
    let mut max_neg = 0;
    for inst in &instances {
        ensure(inst.horizon <= MICRO_MAX_HORIZON, || {
            format!("{}: horizon {}", inst.name, inst.horizon)
        })?;
        let g = inst.graph().map_err(|e| e.to_string())?;
        let plan = inst.plan()?;
        let c = compile(&theory, &g, &plan, inst.horizon).map_err(|e| format!("{}: {e}", inst.name))?;
        max_neg = max_neg.max(c.ground().map_err(|e| e.to_string())?.negative_atoms().len());
        let asp: BTreeSet<_> = c
            .solve(DEFAULT_BOUND)
            .map_err(|e| format!("{}: {e}", inst.name))?
            .into_iter()
            .map(|t| (t.states, t.actions))
            .collect();
        let native: BTreeSet<_> = Planner::new(&theory, &g, &plan)
            .and_then(|p| p.solve_all(inst.horizon))
            .map_err(|e| format!("{}: {e}", inst.name))?
            .into_iter()
            .map(|t| (t.states, t.actions))
            .collect();
        ensure(asp == native, || {
            format!(
                "{}: {} answer-set trajectories vs {} planned",
                inst.name,
                asp.len(),
                native.len()
            )
        })?;
    }
    let took = within(start, ORACLE_LIMIT)?;
    Ok(format!(
        "{} instances, max {max_neg} negative atoms, {took:.2?}",
        instances.len()
    ))
}

fn causal_soundness() -> Result<String, String> {
    let theory = parse_action_model(MICRO_MODEL).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for inst in assets::micro_instances() {
        let g = inst.graph().map_err(|e| e.to_string())?;
        let planner = Planner::new(&theory, &g, &inst.plan()?).map_err(|e| e.to_string())?;
        let sols = planner.solve_all(inst.horizon).map_err(|e| e.to_string())?;
        if sols.is_empty() {
            continue;
        }
        let ct = planner
            .domain
            .causal_theory(inst.horizon, Some(&planner.actions))
            .map_err(|e| e.to_string())?;
        let layout: &Layout = ct.layout.as_ref().ok_or("theory has no layout")?;
        for tr in &sols {
            let i = planner.interpretation(tr, layout);
            ensure(is_causal_model(&ct, &i), || {
                format!("{}: {:?} is not a causal model", inst.name, tr.actions)
            })?;
            checked += 1;
        }
    }
    ensure(checked > 0, || "no solutions to check".into())?;
    Ok(format!("{checked} trajectories"))
}

fn wash_clothes_demo() -> Result<String, String> {
    let start = Instant::now();
    let theory = parse_action_model(HOUSEHOLD_MODEL).map_err(|e| e.to_string())?;
    let graph = parse_graph(LAUNDRY_SCENE).map_err(|e| e.to_string())?;
    let plan = parse_skeleton_json(WASH_CLOTHES_SKELETON).map_err(|e| e.to_string())?;
    let goal = GoalSpec::parse(WASH_CLOTHES_GOAL)?;
    let o = plan_and_check(&theory, &graph, &plan, Some(&goal), 40, DEFAULT_NODE_BUDGET).map_err(|e| e.to_string())?;
    ensure(o.exec.executable, || {
        format!("not executable: {:?}", o.exec.failed_step)
    })?;
    ensure(o.gar == Some(1.0), || format!("GAR {:?}", o.gar))?;
    let washer = graph
        .instances_of("washing_machine")
        .next()
        .ok_or("no washing machine")?;
    let at = |verb: &str| o.steps.iter().position(|s| s.verb == verb && s.objects == [washer]);
    let (plugin, switchon) = (at("plugin"), at("switchon"));
    ensure(matches!((plugin, switchon), (Some(p), Some(s)) if p < s), || {
        format!("plugin at {plugin:?}, switchon at {switchon:?}")
    })?;
    let n_steps = plan.elements().len();
    ensure(o.witness.positions.len() == n_steps, || {
        format!("witness {:?}", o.witness.positions)
    })?;
    ensure(o.witness.positions.windows(2).all(|w| w[0] < w[1]), || {
        format!("witness out of order {:?}", o.witness.positions)
    })?;
    let took = within(start, DEMO_LIMIT)?;
    Ok(format!(
        "{} steps, plugin@{} < switchon@{}, witness {:?}, {took:.2?}",
        o.steps.len(),
        plugin.unwrap() + 1,
        switchon.unwrap() + 1,
        o.witness.positions
    ))
}

fn canonical(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|l| !l.is_empty())
        .collect()
}

fn translation_fidelity() -> Result<String, String> {
    let theory = parse_action_model(include_str!("golden/laws.cp")).map_err(|e| e.to_string())?;
    let (sec, _) = compile_theory(&theory);
    let got: Vec<String> = sec.statements.iter().map(|s| s.to_string()).collect();
    let want = canonical(include_str!("golden/laws.lp"));
    ensure(canonical(&got.join("\n")) == want, || {
        format!("emitted:\n{}", got.join("\n"))
    })?;
    Ok(format!("{} lines verbatim", want.len()))
}

fn refine_contract() -> Result<String, String> {
    let theory = parse_action_model(HOUSEHOLD_MODEL).map_err(|e| e.to_string())?;
    let graph = parse_graph(LAUNDRY_SCENE).map_err(|e| e.to_string())?;
    let emb = TrigramEmbedder;
    let goal = "wash clothes";
    let stub = |text: &str| StubClient::from_fixture(text);

    let mut c = stub(assets::RESPONSES_INVALID_THEN_VALID)?;
    let (_, tr) = run_for_scene(goal, &theory, &graph, &mut c, &emb, DEFAULT_K_MAX).map_err(|e| e.to_string())?;
    ensure(tr.valid && tr.revisions() == 1, || {
        format!("invalid-then-valid: valid={} revisions={}", tr.valid, tr.revisions())
    })?;

    let mut c = stub(assets::RESPONSES_ALWAYS_INVALID)?;
    let (_, tr) = run_for_scene(goal, &theory, &graph, &mut c, &emb, DEFAULT_K_MAX).map_err(|e| e.to_string())?;
    ensure(!tr.valid && tr.revisions() == DEFAULT_K_MAX, || {
        format!("always-invalid: valid={} revisions={}", tr.valid, tr.revisions())
    })?;

    let mut c = stub(assets::RESPONSES_CLOTHESPILE)?;
    let (plan, tr) = run_for_scene(goal, &theory, &graph, &mut c, &emb, DEFAULT_K_MAX).map_err(|e| e.to_string())?;
    let scene = graph.categories();
    ensure(tr.valid && tr.revisions() == 0, || {
        format!("clothespile: {} revisions", tr.revisions())
    })?;
    ensure(tr.substitutions.len() == 1, || {
        format!("substitutions {:?}", tr.substitutions)
    })?;
    let sub = &tr.substitutions[0];
    ensure(sub.from == "clothespile" && scene.contains(&sub.to), || {
        format!("substitution {sub:?}")
    })?;
    ensure(plan.categories().is_subset(&scene), || {
        format!("out-of-scene {:?}", plan.categories())
    })?;
    ensure(all_args_in_scene(&plan, &scene), || {
        "a plan argument is not in the scene".into()
    })?;
    Ok(format!(
        "1 revision; {DEFAULT_K_MAX} revisions invalid; {} -> {}",
        sub.from, sub.to
    ))
}

fn all_args_in_scene(plan: &SkeletonPlan, scene: &BTreeSet<String>) -> bool {
    plan.flatten(&Default::default()).is_ok_and(|els| {
        els.iter().all(|e| match e {
            Element::Action(a) => a.args.iter().all(|arg| match arg {
                StepArg::Category(c) => scene.contains(c),
                StepArg::Id(_) => true,
            }),
            Element::Fluent(_) => true,
        })
    })
}

fn numerics() -> Result<String, String> {
    let c = |a: &[f64], b: &[f64]| cosine(a, b).map_err(|e| e.to_string());
    let orth = c(&[1.0, 0.0], &[0.0, 1.0])?;
    ensure(orth.abs() <= COSINE_TOL, || format!("orthogonal {orth}"))?;
    let same = c(&[0.3, -1.2, 4.0], &[0.3, -1.2, 4.0])?;
    ensure((same - 1.0).abs() <= COSINE_TOL, || format!("identical {same}"))?;
    let diag = c(&[1.0, 1.0], &[1.0, 0.0])?;
    let expect = 1.0 / 2f64.sqrt();
    ensure((diag - expect).abs() <= COSINE_DIAG_TOL, || format!("diagonal {diag}"))?;

    let set = |cs: &[Condition]| cs.iter().cloned().collect::<ConditionSet>();
    let dirty = Condition::state(7, "dirty");
    let clean = Condition::state(7, "clean");
    let init = set(std::slice::from_ref(&dirty));
    let gt = set(std::slice::from_ref(&clean));
    let cases = [(gt.clone(), 1.0), (init.clone(), 0.0), (set(&[dirty, clean]), 0.5)];
    for (fin, want) in cases {
        let got = gar(&init, &gt, &fin);
        ensure(got == want, || format!("GAR {got}, expected {want}"))?;
    }
    Ok(format!("cosine tol {COSINE_TOL:e}/{COSINE_DIAG_TOL:e}; GAR exact"))
}

fn executability_batch() -> Result<String, String> {
    let start = Instant::now();
    let theory = parse_action_model(HOUSEHOLD_MODEL).map_err(|e| e.to_string())?;
    let m = Manifest::load(&assets::task_manifest()).map_err(|e| e.to_string())?;
    ensure(m.tasks.len() == 10, || format!("{} tasks", m.tasks.len()))?;
    let r = evaluate_batch(&theory, &m, EvalOptions::default());
    ensure(r.exec_rate == 1.0 && r.mean_gar == 1.0, || r.to_table())?;
    let took = within(start, BATCH_LIMIT)?;
    Ok(format!(
        "Exec 100%, mean GAR 1.000 over {} tasks, {took:.2?}",
        r.rows.len()
    ))
}

fn offline() -> Result<String, String> {
    let cfg = Config::from_toml(assets::CONFIG_EXAMPLE)?;
    ensure(cfg.client.kind == "stub" && cfg.embedder.kind == "trigram", || {
        format!("example config uses {} / {}", cfg.client.kind, cfg.embedder.kind)
    })?;
    let d = Config::default();
    ensure(d.client.kind == "stub" && d.embedder.kind == "trigram", || {
        "defaults reach the network".into()
    })?;
    Ok("stub client and trigram embedder only".into())
}

fn main() {
    let criteria: [(&str, Check); 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("causal-model soundness", causal_soundness),
        ("wash-clothes end-to-end", wash_clothes_demo),
        ("translation fidelity", translation_fidelity),
        ("refinement loop contract", refine_contract),
        ("cosine and GAR numerics", numerics),
        ("executability batch", executability_batch),
        ("offline", offline),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}. {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
