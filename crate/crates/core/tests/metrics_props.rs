use proptest::prelude::*;
use skelplan::metrics::{execute, gar, PlanStep};
use skelplan::{parse_action_model, parse_graph, Condition, ConditionSet};

fn universe() -> Vec<Condition> {
    let mut u = Vec::new();
    for id in 1..=3 {
        for s in ["on", "off", "clean"] {
            u.push(Condition::state(id, s));
        }
    }
    for (a, b) in [(1, 2), (2, 3), (1, 3)] {
        u.push(Condition::relation("inside", a, b));
    }
    u
}

fn pick(mask: u16) -> ConditionSet {
    universe()
        .into_iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, c)| c)
        .collect()
}

// Per-condition tally over the whole universe.
fn gar_by_tally(init: &ConditionSet, gt: &ConditionSet, fin: &ConditionSet) -> f64 {
    let (mut need, mut got) = (0u32, 0u32);
    for c in universe() {
        if init.contains(&c) != gt.contains(&c) {
            need += 1;
            if fin.contains(&c) == gt.contains(&c) {
                got += 1;
            }
        }
    }
    if need == 0 {
        1.0
    } else {
        got as f64 / need as f64
    }
}

proptest! {
    #[test]
    fn gar_matches_tally(a in 0u16..4096, b in 0u16..4096, c in 0u16..4096) {
        let (init, gt, fin) = (pick(a), pick(b), pick(c));
        let g = gar(&init, &gt, &fin);
        prop_assert!((0.0..=1.0).contains(&g));
        prop_assert_eq!(g, gar_by_tally(&init, &gt, &fin));
    }

    #[test]
    fn reaching_the_goal_scores_one(a in 0u16..4096, b in 0u16..4096) {
        let (init, gt) = (pick(a), pick(b));
        prop_assert_eq!(gar(&init, &gt, &gt), 1.0);
        if init != gt {
            prop_assert_eq!(gar(&init, &gt, &init), 0.0);
        }
    }

    #[test]
    fn execution_stops_at_first_bad_step(verbs in prop::collection::vec(0usize..4, 0..6)) {
        let t = parse_action_model(skelplan::assets::MICRO_MODEL).unwrap();
        let g = parse_graph(r#"{"entities": [
            {"id": 1, "category": "character", "states": []},
            {"id": 2, "category": "lamp", "states": ["off", "plugged_out"]},
            {"id": 3, "category": "cup", "states": ["dirty"]}]}"#).unwrap();
        let all = [("plugin", 2), ("switchon", 2), ("grab", 3), ("wash", 3)];
        let steps: Vec<PlanStep> = verbs.iter().map(|&i| PlanStep::new(all[i].0, vec![all[i].1])).collect();
        let r = execute(&t, &g, &steps).unwrap();
        prop_assert_eq!(r.executable, r.failed_step.is_none());
        match &r.failed_step {
            Some(f) => {
                prop_assert_eq!(f.index, r.steps_run);
                let prefix = execute(&t, &g, &steps[..f.index]).unwrap();
                prop_assert!(prefix.executable);
                prop_assert_eq!(&prefix.final_state, &r.final_state);
            }
            None => prop_assert_eq!(r.steps_run, steps.len()),
        }
    }
}
