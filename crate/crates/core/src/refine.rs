//! Skeleton generation with a language model: prompt, verify, re-prompt
//! with the verifier's errors, then ground out-of-scene categories.

use std::collections::BTreeSet;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action_model::CausalTheory;
use crate::env_graph::EnvGraph;
use crate::grounding::{build_index, ground_plan, Embedder, RgError, Substitution};
use crate::skeleton::{
    grammar_verify, parse_llm_response, parse_plan_line, to_skeleton, SkeletonPlan, VerbTable, VerifierReport,
};

pub const DEFAULT_K_MAX: usize = 3;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("k_max must be at least 1")]
    ZeroIterations,
    #[error("generation failed: {0}")]
    Client(String),
    #[error("no response could be parsed as a JSON plan")]
    NeverParsed,
    #[error(transparent)]
    Grounding(#[from] RgError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    fn new(role: &str, content: String) -> Self {
        Message {
            role: role.to_string(),
            content,
        }
    }
}

/// A chat transcript to send to the model.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub messages: Vec<Message>,
}

impl Prompt {
    pub fn render(&self) -> String {
        self.messages
            .iter()
            .map(|m| format!("{}:\n{}", m.role.to_uppercase(), m.content))
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn digest(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.render().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerbInfo {
    pub name: String,
    pub arity: usize,
    pub description: Option<String>,
}

/// What the prompt tells the model about the robot and the scene.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptContext {
    pub verbs: Vec<VerbInfo>,
    pub scenes: Vec<String>,
    pub objects: Vec<String>,
}

const EXAMPLE: &str = r#"The goal is to "watch tv".
{
  "thoughts": "Walk to the living room, find the tv, plug it in and turn it on.",
  "actions": ["[walk] <living_room>", "[find] <tv>", "[plugin] <tv>", "[switchon] <tv>"]
}"#;

impl PromptContext {
    /// Verbs from the model's actions; scene categories of sort `room` are
    /// listed as scenes and the others, except characters, as objects.
    pub fn new(theory: &CausalTheory, graph: &EnvGraph) -> Self {
        let sig = &theory.signature;
        let verbs = sig
            .actions
            .values()
            .map(|a| VerbInfo {
                name: a.schema.name.clone(),
                arity: a.object_arity(),
                description: a.description.clone(),
            })
            .collect();
        let rooms = sig.categories_of("room").unwrap_or_default();
        let (mut scenes, mut objects) = (Vec::new(), Vec::new());
        for c in graph.categories() {
            if rooms.contains(&c) {
                scenes.push(c);
            } else if c != "character" {
                objects.push(c);
            }
        }
        PromptContext { verbs, scenes, objects }
    }

    pub fn verb_table(&self) -> VerbTable {
        self.verbs.iter().map(|v| (v.name.clone(), v.arity)).collect()
    }

    fn system(&self) -> String {
        let mut s = String::from(
            "You serve as an AI task planner. 1. Your task is to create a plan to achieve a goal by \
             converting it into a sequence of actions. Each action should follow the format \
             \"[verb] <target1> <target2>\", where 'verb' represents the action, and 'target1' and \
             'target2' are optional arguments. You are limited to the following action verbs:\n",
        );
        for v in &self.verbs {
            s.push_str(&format!("- [{}]", v.name));
            for i in 1..=v.arity {
                s.push_str(&format!(" <arg{i}>"));
            }
            match &v.description {
                Some(d) => s.push_str(&format!(": {d}\n")),
                None => s.push('\n'),
            }
        }
        s.push_str("2. You can only use the following values as arguments:\n");
        s.push_str(&format!("Permissible Scenes: {}\n", self.scenes.join(", ")));
        s.push_str(&format!("Permissible Objects: {}\n", self.objects.join(", ")));
        s.push_str(
            "3. You must describe your plan in natural language at the beginning. After that, you \
             should list all the actions together. The response should follow the format:\n\
             {\n  \"thoughts\": \"Your plan description ... step by step\",\n  \
             \"actions\": [\"action1\", \"action2\", \"action3\", ...]\n}\n",
        );
        s.push_str("4. Here is an example plan to achieve a goal for reference:\n");
        s.push_str(EXAMPLE);
        s
    }
}

/// The opening prompt for `goal`.
pub fn initial_prompt(ctx: &PromptContext, goal: &str) -> Prompt {
    Prompt {
        messages: vec![
            Message::new("system", ctx.system()),
            Message::new(
                "user",
                format!(
                    "The goal is to \"{goal}\". Begin your plan. Your response should be formatted as a \
                     JSON object that can be successfully parsed by Python's json.loads() function."
                ),
            ),
        ],
    }
}

/// Extends `prompt` with the rejected response and the reasons.
pub fn revision_prompt(prompt: &Prompt, response: &str, report: &VerifierReport) -> Prompt {
    let plan = match parse_llm_response(response) {
        Ok(lines) => format!("[{}]", lines.join(", ")),
        Err(_) => "response".to_string(),
    };
    let mut out = prompt.clone();
    out.messages.push(Message::new("assistant", response.to_string()));
    out.messages.push(Message::new(
        "user",
        format!(
            "Revise your plan. Your plan {plan} failed.\nBecause: {}",
            report.feedback()
        ),
    ));
    out
}

pub trait GenerationClient {
    fn generate(&mut self, prompt: &Prompt) -> Result<String, String>;
}

/// Replays canned responses in order, repeating the last one when the
/// list runs out.
#[derive(Clone, Debug)]
pub struct StubClient {
    responses: Vec<String>,
    next: usize,
    pub calls: usize,
}

impl StubClient {
    pub fn new(responses: Vec<String>) -> Self {
        StubClient {
            responses,
            next: 0,
            calls: 0,
        }
    }

    /// Reads a JSON list of response strings.
    pub fn from_fixture(text: &str) -> Result<Self, String> {
        let responses: Vec<String> = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if responses.is_empty() {
            return Err("fixture has no responses".into());
        }
        Ok(StubClient::new(responses))
    }
}

impl GenerationClient for StubClient {
    fn generate(&mut self, _prompt: &Prompt) -> Result<String, String> {
        self.calls += 1;
        let r = self
            .responses
            .get(self.next)
            .or(self.responses.last())
            .cloned()
            .ok_or("no canned responses")?;
        self.next += 1;
        Ok(r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    /// `stub` or `http`.
    pub kind: String,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub temperature: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
    pub timeout_secs: u64,
    /// Stub responses file.
    pub fixture: Option<String>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            kind: "stub".into(),
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            temperature: 0.9,
            frequency_penalty: 0.9,
            presence_penalty: 0.8,
            timeout_secs: 60,
            fixture: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    /// `trigram` or `remote`.
    pub kind: String,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            kind: "trigram".into(),
            endpoint: "https://api.openai.com/v1/embeddings".into(),
            model: crate::grounding::RemoteEmbedder::DEFAULT_MODEL.into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub max_horizon: usize,
    pub node_budget: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            max_horizon: 40,
            node_budget: crate::planner::DEFAULT_NODE_BUDGET,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub k_max: usize,
    pub client: ClientConfig,
    pub embedder: EmbedderConfig,
    pub planner: PlannerConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            k_max: DEFAULT_K_MAX,
            client: ClientConfig::default(),
            embedder: EmbedderConfig::default(),
            planner: PlannerConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

/// OpenAI-style chat completions over HTTP.
#[derive(Clone, Debug)]
pub struct HttpChatClient {
    pub config: ClientConfig,
    api_key: String,
    pub attempts: u32,
}

impl HttpChatClient {
    /// Fails when the API key variable is unset.
    pub fn from_env(config: ClientConfig) -> Result<Self, String> {
        let api_key = std::env::var(&config.api_key_env)
            .map_err(|_| format!("environment variable {} is not set", config.api_key_env))?;
        Ok(HttpChatClient {
            config,
            api_key,
            attempts: 3,
        })
    }

    fn request(&self, prompt: &Prompt) -> Result<String, String> {
        let c = &self.config;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(c.timeout_secs)))
            .build()
            .into();
        let body = serde_json::json!({
            "model": c.model,
            "messages": prompt.messages,
            "temperature": c.temperature,
            "frequency_penalty": c.frequency_penalty,
            "presence_penalty": c.presence_penalty,
        });
        let mut resp = agent
            .post(&c.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| e.to_string())?;
        let v: serde_json::Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| "response has no choices[0].message.content".to_string())
    }
}

impl GenerationClient for HttpChatClient {
    fn generate(&mut self, prompt: &Prompt) -> Result<String, String> {
        let mut last = String::new();
        for attempt in 0..self.attempts.max(1) {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(500 << attempt));
            }
            match self.request(prompt) {
                Ok(r) => return Ok(r),
                Err(e) => {
                    log::warn!("chat request {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(last)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub prompt_digest: String,
    pub response: String,
    pub report: VerifierReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoopTrace {
    pub iterations: Vec<Iteration>,
    pub substitutions: Vec<Substitution>,
    pub valid: bool,
}

impl LoopTrace {
    pub fn generations(&self) -> usize {
        self.iterations.len()
    }

    pub fn revisions(&self) -> usize {
        self.iterations.len().saturating_sub(1)
    }
}

/// Generates, verifies and revises up to `k_max` times, then grounds the
/// last readable plan against `scene` categories. An exhausted loop still
/// returns a plan, flagged invalid in the trace.
pub fn run(
    goal: &str,
    ctx: &PromptContext,
    scene: &BTreeSet<String>,
    client: &mut dyn GenerationClient,
    embedder: &dyn Embedder,
    k_max: usize,
) -> Result<(SkeletonPlan, LoopTrace), RefineError> {
    if k_max == 0 {
        return Err(RefineError::ZeroIterations);
    }
    let verbs = ctx.verb_table();
    let mut trace = LoopTrace::default();
    let mut prompt = initial_prompt(ctx, goal);
    let mut last_lines: Option<Vec<String>> = None;
    for round in 0..=k_max {
        let response = client.generate(&prompt).map_err(RefineError::Client)?;
        let report = match parse_llm_response(&response) {
            Ok(lines) => {
                let r = grammar_verify(&lines, &verbs);
                last_lines = Some(lines);
                r
            }
            Err(e) => VerifierReport::response_error(&e),
        };
        log::info!("round {round}: {} error(s)", report.errors.len());
        trace.iterations.push(Iteration {
            prompt_digest: prompt.digest(),
            response: response.clone(),
            report: report.clone(),
        });
        if report.valid {
            trace.valid = true;
            break;
        }
        if round < k_max {
            prompt = revision_prompt(&prompt, &response, &report);
        }
    }
    let lines = last_lines.ok_or(RefineError::NeverParsed)?;
    let readable: Vec<String> = lines.into_iter().filter(|l| parse_plan_line(l).is_ok()).collect();
    let plan = to_skeleton(&readable).expect("lines were checked to parse");
    let idx = build_index(scene, embedder)?;
    let (plan, subs) = ground_plan(&plan, scene, &idx, embedder)?;
    trace.substitutions = subs;
    Ok((plan, trace))
}

/// [`run`] with the context, verbs and categories taken from a model and
/// scene.
pub fn run_for_scene(
    goal: &str,
    theory: &CausalTheory,
    graph: &EnvGraph,
    client: &mut dyn GenerationClient,
    embedder: &dyn Embedder,
    k_max: usize,
) -> Result<(SkeletonPlan, LoopTrace), RefineError> {
    let ctx = PromptContext::new(theory, graph);
    run(goal, &ctx, &graph.categories(), client, embedder, k_max)
}
