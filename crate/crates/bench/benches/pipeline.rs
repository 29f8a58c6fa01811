use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use skelplan::assets;
use skelplan::compiler::compile;
use skelplan::grounding::{build_index, nearest, TrigramEmbedder};
use skelplan::metrics::{evaluate_batch, EvalOptions, Manifest};
use skelplan::planner::Planner;
use skelplan::stable::{answer_sets, DEFAULT_BOUND};
use skelplan_bench::{laundry, micro_model};

fn parse(c: &mut Criterion) {
    c.bench_function("parse household model", |b| {
        b.iter(|| skelplan::parse_action_model(black_box(assets::HOUSEHOLD_MODEL)).unwrap())
    });
}

fn plan(c: &mut Criterion) {
    let (t, g, p) = laundry();
    c.bench_function("plan wash clothes", |b| {
        b.iter(|| Planner::new(&t, &g, &p).unwrap().solve(40).unwrap().unwrap())
    });
}

fn emit(c: &mut Criterion) {
    let (t, g, p) = laundry();
    c.bench_function("compile wash clothes, horizon 14", |b| {
        b.iter(|| compile(&t, &g, &p, black_box(14)).unwrap().text())
    });
}

fn oracle(c: &mut Criterion) {
    let t = micro_model();
    let inst = assets::micro_instances()
        .into_iter()
        .find(|i| i.name == "two_lamps")
        .unwrap();
    let prog = compile(&t, &inst.graph().unwrap(), &inst.plan().unwrap(), inst.horizon)
        .unwrap()
        .ground()
        .unwrap();
    c.bench_function("answer sets of two_lamps", |b| {
        b.iter(|| answer_sets(black_box(&prog), DEFAULT_BOUND).unwrap())
    });
}

fn ground(c: &mut Criterion) {
    let (_, g, _) = laundry();
    let idx = build_index(&g.categories(), &TrigramEmbedder).unwrap();
    c.bench_function("nearest category", |b| {
        b.iter(|| nearest(black_box("clothespile"), &idx, &TrigramEmbedder).unwrap())
    });
}

fn suite(c: &mut Criterion) {
    let household = skelplan::parse_action_model(assets::HOUSEHOLD_MODEL).unwrap();
    let m = Manifest::load(&assets::task_manifest()).unwrap();
    let mut group = c.benchmark_group("suite");
    group.sample_size(10);
    group.bench_function("evaluate ten tasks", |b| {
        b.iter(|| evaluate_batch(&household, &m, EvalOptions::default()))
    });
    group.finish();
}

criterion_group!(benches, parse, plan, emit, oracle, ground, suite);
criterion_main!(benches);
