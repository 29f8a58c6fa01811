use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use skelplan::assets;
use skelplan::compiler::compile;
use skelplan::grounding::{build_index, ground_plan, Embedder, RemoteEmbedder, TrigramEmbedder};
use skelplan::metrics::{evaluate_batch, EvalOptions, GoalSpec, Manifest};
use skelplan::pipeline::{plan_and_check, PipelineError};
use skelplan::planner::Planner;
use skelplan::refine::{run_for_scene, Config, GenerationClient, HttpChatClient, StubClient};
use skelplan::skeleton::{parse_skeleton_json, skeleton_to_json, Position};
use skelplan::{parse_action_model, parse_graph, CausalTheory, EnvGraph, PlanError, SkeletonPlan};

#[derive(Parser)]
#[command(
    name = "skelplan",
    version,
    about = "Skeleton-guided task planning over environment graphs"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Inputs {
    /// Action model; the bundled household model when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Scene graph JSON; the bundled laundry scene when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
}

#[derive(Args)]
struct SkeletonInput {
    /// Skeleton JSON; the bundled wash-clothes skeleton when omitted.
    #[arg(long)]
    skeleton: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Emit the logic program for a skeleton at a fixed horizon.
    Compile {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        skeleton: SkeletonInput,
        #[arg(long)]
        horizon: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Search for a shortest plan satisfying a skeleton.
    Plan {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        skeleton: SkeletonInput,
        #[arg(long)]
        max_horizon: Option<usize>,
        #[arg(long)]
        node_budget: Option<usize>,
        /// Write `{"actions": [...]}` instead of occurs lines.
        #[arg(long)]
        json: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Ask the model for a skeleton, revising until it verifies.
    Skeleton {
        #[command(flatten)]
        inputs: Inputs,
        /// Task in natural language.
        #[arg(long)]
        goal: String,
        /// Canned responses for the stub client.
        #[arg(long)]
        fixture: Option<PathBuf>,
        #[arg(long)]
        k_max: Option<usize>,
        /// Where to write the loop trace as JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Replace out-of-scene categories in a skeleton with in-scene ones.
    Ground {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        skeleton: SkeletonInput,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Plan, execute and score every task of a manifest.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Task manifest; the bundled suite when omitted.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        csv: bool,
        /// Score entity states only.
        #[arg(long)]
        states_only: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// The wash-clothes pipeline on bundled assets with the stub client.
    Demo,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl fmt::Debug for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

trait ExitWith<T> {
    fn exit(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

const USAGE: u8 = 2;

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write_out(output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(p) => fs::write(p, text)
            .with_context(|| format!("cannot write {}", p.display()))
            .exit(USAGE),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_model(path: Option<&Path>) -> anyhow::Result<CausalTheory> {
    match path {
        Some(p) => parse_action_model(&read(p)?).with_context(|| format!("in {}", p.display())),
        None => Ok(parse_action_model(assets::HOUSEHOLD_MODEL)?),
    }
}

fn load_scene(path: Option<&Path>) -> anyhow::Result<EnvGraph> {
    match path {
        Some(p) => parse_graph(&read(p)?).with_context(|| format!("in {}", p.display())),
        None => Ok(parse_graph(assets::LAUNDRY_SCENE)?),
    }
}

fn load_skeleton(path: Option<&Path>, theory: &CausalTheory) -> anyhow::Result<SkeletonPlan> {
    let plan = match path {
        Some(p) => parse_skeleton_json(&read(p)?).with_context(|| format!("in {}", p.display()))?,
        None => parse_skeleton_json(assets::WASH_CLOTHES_SKELETON)?,
    };
    plan.validate(&theory.signature)?;
    Ok(plan)
}

fn load_inputs(inputs: &Inputs) -> Result<(CausalTheory, EnvGraph), Failure> {
    let theory = load_model(inputs.model.as_deref()).exit(USAGE)?;
    let graph = load_scene(inputs.scene.as_deref()).exit(USAGE)?;
    Ok((theory, graph))
}

/// The run configuration plus the directory relative paths in it resolve
/// against.
fn load_config(path: Option<&Path>) -> Result<(Config, PathBuf), Failure> {
    match path {
        Some(p) => {
            let text = read(p).exit(USAGE)?;
            let cfg = Config::from_toml(&text)
                .map_err(|e| anyhow!("{}: {e}", p.display()))
                .exit(USAGE)?;
            if cfg.k_max == 0 || cfg.planner.max_horizon == 0 || cfg.planner.node_budget == 0 {
                return Err(anyhow!("{}: k_max and planner budgets must be positive", p.display())).exit(USAGE);
            }
            Ok((cfg, p.parent().map(Path::to_path_buf).unwrap_or_default()))
        }
        None => Ok((Config::default(), PathBuf::new())),
    }
}

fn embedder(cfg: &Config) -> Result<Box<dyn Embedder>, Failure> {
    match cfg.embedder.kind.as_str() {
        "trigram" => Ok(Box::new(TrigramEmbedder)),
        "remote" => {
            let e = &cfg.embedder;
            let key = std::env::var(&e.api_key_env)
                .map_err(|_| anyhow!("environment variable {} is not set", e.api_key_env))
                .exit(USAGE)?;
            let mut r = RemoteEmbedder::new(&e.endpoint, &e.model, key);
            r.timeout = Duration::from_secs(e.timeout_secs);
            Ok(Box::new(r))
        }
        other => Err(anyhow!("unknown embedder kind `{other}`")).exit(USAGE),
    }
}

/// A `--fixture` on the command line forces the stub client; otherwise
/// the configured kind decides.
fn client(cfg: &Config, base: &Path, fixture: Option<&Path>) -> Result<Box<dyn GenerationClient>, Failure> {
    let kind = if fixture.is_some() {
        "stub"
    } else {
        cfg.client.kind.as_str()
    };
    match kind {
        "stub" => {
            let path = fixture
                .map(Path::to_path_buf)
                .or_else(|| cfg.client.fixture.as_ref().map(|f| base.join(f)))
                .ok_or_else(|| anyhow!("the stub client needs a fixture"))
                .exit(USAGE)?;
            let stub = StubClient::from_fixture(&read(&path).exit(USAGE)?)
                .map_err(|e| anyhow!("{}: {e}", path.display()))
                .exit(USAGE)?;
            Ok(Box::new(stub))
        }
        "http" => Ok(Box::new(
            HttpChatClient::from_env(cfg.client.clone())
                .map_err(|e| anyhow!(e))
                .exit(USAGE)?,
        )),
        other => Err(anyhow!("unknown client kind `{other}`")).exit(USAGE),
    }
}

fn plan_failure(e: PlanError) -> Failure {
    let code = if matches!(e, PlanError::BudgetExceeded(_)) {
        3
    } else {
        USAGE
    };
    Failure { code, error: e.into() }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (cfg, base) = load_config(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::Compile {
            inputs,
            skeleton,
            horizon,
            output,
        } => {
            let (theory, graph) = load_inputs(&inputs)?;
            let plan = load_skeleton(skeleton.skeleton.as_deref(), &theory).exit(USAGE)?;
            let c = compile(&theory, &graph, &plan, horizon).exit(USAGE)?;
            write_out(output.as_deref(), &c.text())
        }
        Cmd::Plan {
            inputs,
            skeleton,
            max_horizon,
            node_budget,
            json,
            output,
        } => {
            let (theory, graph) = load_inputs(&inputs)?;
            let plan = load_skeleton(skeleton.skeleton.as_deref(), &theory).exit(USAGE)?;
            let budget = node_budget.unwrap_or(cfg.planner.node_budget);
            let horizon = max_horizon.unwrap_or(cfg.planner.max_horizon);
            let planner = Planner::new(&theory, &graph, &plan)
                .map_err(plan_failure)?
                .with_budget(budget);
            let Some(tr) = planner.solve(horizon).map_err(plan_failure)? else {
                return Err(anyhow!("no plan within {horizon} steps")).exit(1);
            };
            let text = if json {
                skelplan::metrics::plan_file_json(&skelplan::metrics::steps_of(&planner.domain, &tr.actions)) + "\n"
            } else {
                tr.occurs_lines(&planner.domain, 1)
                    .iter()
                    .map(|l| format!("{l}\n"))
                    .collect()
            };
            write_out(output.as_deref(), &text)
        }
        Cmd::Skeleton {
            inputs,
            goal,
            fixture,
            k_max,
            trace,
            output,
        } => {
            let (theory, graph) = load_inputs(&inputs)?;
            let mut client = client(&cfg, &base, fixture.as_deref())?;
            let emb = embedder(&cfg)?;
            let k = k_max.unwrap_or(cfg.k_max);
            let (plan, tr) = run_for_scene(&goal, &theory, &graph, client.as_mut(), emb.as_ref(), k).exit(USAGE)?;
            for s in &tr.substitutions {
                eprintln!("grounded {} -> {} (similarity {:.3})", s.from, s.to, s.similarity);
            }
            write_out(output.as_deref(), &(skeleton_to_json(&plan) + "\n"))?;
            if let Some(p) = trace {
                let text = serde_json::to_string_pretty(&tr).exit(USAGE)?;
                write_out(Some(&p), &(text + "\n"))?;
            }
            if !tr.valid {
                return Err(anyhow!(
                    "no valid skeleton after {} revision(s); last plan written anyway",
                    tr.revisions()
                ))
                .exit(1);
            }
            Ok(())
        }
        Cmd::Ground {
            inputs,
            skeleton,
            output,
        } => {
            let (theory, graph) = load_inputs(&inputs)?;
            let plan = load_skeleton(skeleton.skeleton.as_deref(), &theory).exit(USAGE)?;
            let emb = embedder(&cfg)?;
            let scene = graph.categories();
            let idx = build_index(&scene, emb.as_ref()).exit(USAGE)?;
            let (grounded, subs) = ground_plan(&plan, &scene, &idx, emb.as_ref()).exit(USAGE)?;
            for s in &subs {
                eprintln!("grounded {} -> {} (similarity {:.3})", s.from, s.to, s.similarity);
            }
            write_out(output.as_deref(), &(skeleton_to_json(&grounded) + "\n"))
        }
        Cmd::Eval {
            model,
            manifest,
            csv,
            states_only,
            output,
        } => {
            let theory = load_model(model.as_deref()).exit(USAGE)?;
            let path = manifest.unwrap_or_else(assets::task_manifest);
            let m = Manifest::load(&path).exit(USAGE)?;
            let opts = EvalOptions {
                max_horizon: cfg.planner.max_horizon,
                node_budget: cfg.planner.node_budget,
                states_only,
            };
            let report = evaluate_batch(&theory, &m, opts);
            let text = if csv { report.to_csv() } else { report.to_table() };
            write_out(output.as_deref(), &text)
        }
        Cmd::Demo => demo(&cfg),
    }
}

fn demo(cfg: &Config) -> Result<(), Failure> {
    let theory = parse_action_model(assets::HOUSEHOLD_MODEL).exit(USAGE)?;
    let graph = parse_graph(assets::LAUNDRY_SCENE).exit(USAGE)?;
    let goal = GoalSpec::parse(assets::WASH_CLOTHES_GOAL)
        .map_err(|e| anyhow!(e))
        .exit(USAGE)?;
    let mut client = StubClient::from_fixture(assets::RESPONSES_CLOTHESPILE)
        .map_err(|e| anyhow!(e))
        .exit(USAGE)?;
    let (plan, trace) = run_for_scene(
        "wash clothes",
        &theory,
        &graph,
        &mut client,
        &TrigramEmbedder,
        cfg.k_max,
    )
    .exit(USAGE)?;
    println!("Skeleton after {} revision(s):", trace.revisions());
    for step in plan.elements() {
        println!("  {step}");
    }
    for s in &trace.substitutions {
        println!("Grounded {} -> {} (similarity {:.3})", s.from, s.to, s.similarity);
    }
    let o = plan_and_check(
        &theory,
        &graph,
        &plan,
        Some(&goal),
        cfg.planner.max_horizon,
        cfg.planner.node_budget,
    )
    .map_err(|e| match e {
        PipelineError::Plan(p) => plan_failure(p),
        PipelineError::NoPlan(_) => Failure {
            code: 1,
            error: e.into(),
        },
        other => Failure {
            code: USAGE,
            error: other.into(),
        },
    })?;
    println!("Plan ({} steps):", o.steps.len());
    for l in o.occurs_lines() {
        println!("  {l}");
    }
    println!("Executable: {}", o.exec.executable);
    println!("GAR: {:.3}", o.gar.unwrap_or(0.0));
    let witness: Vec<String> = o
        .witness
        .positions
        .iter()
        .map(|p| match p {
            Position::Action(i) => format!("step {}", i + 1),
            Position::State(j) => format!("state {j}"),
        })
        .collect();
    println!("Skeleton matched at: {}", witness.join(", "));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
