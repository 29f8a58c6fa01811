//! Referring-grounding: out-of-scene categories in a skeleton are replaced
//! by the in-scene category whose embedding is most similar.

use std::collections::{BTreeMap, BTreeSet};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skeleton::{SkeletonPlan, StepArg};

pub const TRIGRAM_DIM: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum RgError {
    #[error("vectors have different dimensions ({0} and {1})")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("the grounding index is empty")]
    EmptyIndex,
    #[error("no categories to index")]
    NoCategories,
    #[error("embedding `{category}` failed: {message}")]
    Embed { category: String, message: String },
    #[error("index file: {0}")]
    Format(String),
}

/// Cosine similarity of two vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, RgError> {
    if a.len() != b.len() {
        return Err(RgError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(RgError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub trait Embedder {
    /// Identifies the embedding space; indexes built by different
    /// embedders are not comparable.
    fn tag(&self) -> String;
    fn embed(&self, text: &str) -> Result<Vec<f64>, String>;
}

/// Bag of hashed character trigrams, L2-normalized. Words (split on `_`
/// and whitespace) are padded with `#` so prefixes and suffixes count.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrigramEmbedder;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for TrigramEmbedder {
    fn tag(&self) -> String {
        format!("trigram-fnv1a-{TRIGRAM_DIM}")
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, String> {
        let mut v = vec![0.0; TRIGRAM_DIM];
        let lower = text.to_lowercase();
        for word in lower
            .split(|c: char| c == '_' || c.is_whitespace())
            .filter(|w| !w.is_empty())
        {
            let padded: Vec<char> = format!("#{word}#").chars().collect();
            for w in padded.windows(3) {
                let gram: String = w.iter().collect();
                v[(fnv1a(gram.as_bytes()) % TRIGRAM_DIM as u64) as usize] += 1.0;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(format!("`{text}` has no trigrams"));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

/// Embeddings from an HTTP endpoint speaking the common
/// `{"model", "input"} -> {"data": [{"embedding": [...]}]}` protocol.
#[derive(Clone, Debug)]
pub struct RemoteEmbedder {
    pub endpoint: String,
    pub model: String,
    pub api_key: String,
    pub timeout: Duration,
    pub attempts: u32,
}

impl RemoteEmbedder {
    pub const DEFAULT_MODEL: &'static str = "text-embedding-ada-002";

    pub fn new(endpoint: &str, model: &str, api_key: String) -> Self {
        RemoteEmbedder {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key,
            timeout: Duration::from_secs(30),
            attempts: 3,
        }
    }

    fn request(&self, text: &str) -> Result<Vec<f64>, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let body = serde_json::json!({ "model": self.model, "input": text });
        let mut resp = agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| e.to_string())?;
        let v: serde_json::Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        v["data"][0]["embedding"]
            .as_array()
            .and_then(|xs| xs.iter().map(serde_json::Value::as_f64).collect::<Option<Vec<_>>>())
            .ok_or_else(|| "response has no numeric data[0].embedding".to_string())
    }
}

impl Embedder for RemoteEmbedder {
    fn tag(&self) -> String {
        format!("remote-{}", self.model)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, String> {
        let mut last = String::new();
        for attempt in 0..self.attempts.max(1) {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(250 << attempt));
            }
            match self.request(text) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!("embedding request {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(last)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingIndex {
    pub embedder: String,
    /// Sorted by category.
    pub entries: Vec<(String, Vec<f64>)>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    embedder: String,
    entries: BTreeMap<String, Vec<f64>>,
}

impl GroundingIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(c, _)| c.as_str())
    }

    pub fn to_json(&self) -> String {
        let file = IndexFile {
            embedder: self.embedder.clone(),
            entries: self.entries.iter().cloned().collect(),
        };
        serde_json::to_string_pretty(&file).expect("index serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, RgError> {
        let file: IndexFile = serde_json::from_str(text).map_err(|e| RgError::Format(e.to_string()))?;
        let mut dim = None;
        for v in file.entries.values() {
            if *dim.get_or_insert(v.len()) != v.len() {
                return Err(RgError::Format("vectors differ in dimension".into()));
            }
        }
        Ok(GroundingIndex {
            embedder: file.embedder,
            entries: file.entries.into_iter().collect(),
        })
    }
}

pub fn build_index(categories: &BTreeSet<String>, embedder: &dyn Embedder) -> Result<GroundingIndex, RgError> {
    if categories.is_empty() {
        return Err(RgError::NoCategories);
    }
    let entries = categories
        .iter()
        .map(|c| {
            embedder
                .embed(c)
                .map(|v| (c.clone(), v))
                .map_err(|message| RgError::Embed {
                    category: c.clone(),
                    message,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GroundingIndex {
        embedder: embedder.tag(),
        entries,
    })
}

/// The indexed category most similar to `query`; ties go to the
/// lexicographically smallest.
pub fn nearest(query: &str, idx: &GroundingIndex, embedder: &dyn Embedder) -> Result<(String, f64), RgError> {
    if idx.is_empty() {
        return Err(RgError::EmptyIndex);
    }
    let q = embedder.embed(query).map_err(|message| RgError::Embed {
        category: query.to_string(),
        message,
    })?;
    let mut best: Option<(&str, f64)> = None;
    for (c, v) in &idx.entries {
        let s = cosine(&q, v)?;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((c, s));
        }
    }
    let (c, s) = best.expect("index is nonempty");
    Ok((c.to_string(), s))
}

/// One replacement made by [`ground_plan`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Substitution {
    pub from: String,
    pub to: String,
    pub similarity: f64,
}

/// Replaces every category argument absent from `scene` by its nearest
/// indexed category. Substitutions are listed once per distinct category,
/// in order of first appearance.
pub fn ground_plan(
    plan: &SkeletonPlan,
    scene: &BTreeSet<String>,
    idx: &GroundingIndex,
    embedder: &dyn Embedder,
) -> Result<(SkeletonPlan, Vec<Substitution>), RgError> {
    let mut missing = Vec::new();
    let mut probe = plan.clone();
    probe.map_args(&mut |a| {
        if let StepArg::Category(c) = a {
            if !scene.contains(c.as_str()) && !missing.contains(c) {
                missing.push(c.clone());
            }
        }
    });
    let mut subs = Vec::new();
    let mut table = BTreeMap::new();
    for c in missing {
        let (to, similarity) = nearest(&c, idx, embedder)?;
        table.insert(c.clone(), to.clone());
        subs.push(Substitution {
            from: c,
            to,
            similarity,
        });
    }
    let mut out = plan.clone();
    out.map_args(&mut |a| {
        if let StepArg::Category(c) = a {
            if let Some(to) = table.get(c.as_str()) {
                *c = to.clone();
            }
        }
    });
    Ok((out, subs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::parse_step;
    use proptest::prelude::*;

    fn demo_categories() -> BTreeSet<String> {
        crate::env_graph::parse_graph(crate::assets::LAUNDRY_SCENE)
            .unwrap()
            .categories()
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine(&[1.0], &[1.0, 0.0]), Err(RgError::DimensionMismatch(1, 2)));
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(RgError::ZeroVector));
    }

    #[test]
    fn trigram_embedding_is_normalized_and_deterministic() {
        let e = TrigramEmbedder;
        let a = e.embed("clothes_pants").unwrap();
        assert_eq!(a.len(), TRIGRAM_DIM);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(a, e.embed("clothes_pants").unwrap());
        assert!(e.embed("__").is_err());
    }

    #[test]
    fn index_over_demo_scene() {
        let cats = demo_categories();
        let idx = build_index(&cats, &TrigramEmbedder).unwrap();
        assert_eq!(idx.len(), cats.len());
        assert_eq!(idx, build_index(&cats, &TrigramEmbedder).unwrap());
        assert!(idx.categories().zip(idx.categories().skip(1)).all(|(a, b)| a < b));
        assert_eq!(
            build_index(&BTreeSet::new(), &TrigramEmbedder),
            Err(RgError::NoCategories)
        );
    }

    #[test]
    fn clothespile_maps_to_clothes_pants() {
        let idx = build_index(&demo_categories(), &TrigramEmbedder).unwrap();
        let (c, s) = nearest("clothespile", &idx, &TrigramEmbedder).unwrap();
        assert_eq!(c, "clothes_pants");
        assert!(s > 0.3 && s < 1.0);
        let (c, s) = nearest("detergent", &idx, &TrigramEmbedder).unwrap();
        assert_eq!(c, "detergent");
        assert!((s - 1.0).abs() < 1e-9);
    }

    struct Fixed(BTreeMap<&'static str, Vec<f64>>);

    impl Embedder for Fixed {
        fn tag(&self) -> String {
            "fixed".into()
        }
        fn embed(&self, text: &str) -> Result<Vec<f64>, String> {
            self.0.get(text).cloned().ok_or_else(|| format!("no vector for {text}"))
        }
    }

    #[test]
    fn ties_go_to_smaller_category() {
        let e = Fixed(BTreeMap::from([
            ("b", vec![1.0, 0.0]),
            ("a", vec![0.0, 1.0]),
            ("q", vec![1.0, 1.0]),
        ]));
        let idx = build_index(&["a".to_string(), "b".to_string()].into(), &e).unwrap();
        assert_eq!(nearest("q", &idx, &e).unwrap().0, "a");
        let empty = GroundingIndex {
            embedder: "fixed".into(),
            entries: vec![],
        };
        assert_eq!(nearest("q", &empty, &e), Err(RgError::EmptyIndex));
        assert!(matches!(
            build_index(&["zzz".to_string()].into(), &e),
            Err(RgError::Embed { category, .. }) if category == "zzz"
        ));
    }

    #[test]
    fn grounding_a_plan() {
        let cats = demo_categories();
        let idx = build_index(&cats, &TrigramEmbedder).unwrap();
        let plan = SkeletonPlan::Seq(vec![
            parse_step("[walk] <laundry_room>").unwrap(),
            parse_step("[putin] <clothespile> <washing_machine>").unwrap(),
            parse_step("?clean(clothespile)").unwrap(),
        ]);
        let (out, subs) = ground_plan(&plan, &cats, &idx, &TrigramEmbedder).unwrap();
        assert_eq!(subs.len(), 1);
        assert_eq!(
            (subs[0].from.as_str(), subs[0].to.as_str()),
            ("clothespile", "clothes_pants")
        );
        assert!(out.categories().is_subset(&cats));
        let (again, more) = ground_plan(&out, &cats, &idx, &TrigramEmbedder).unwrap();
        assert_eq!(again, out);
        assert!(more.is_empty());
        let (e, s) = ground_plan(&SkeletonPlan::empty(), &cats, &idx, &TrigramEmbedder).unwrap();
        assert_eq!(e, SkeletonPlan::empty());
        assert!(s.is_empty());
    }

    #[test]
    fn index_json_round_trip() {
        let idx = build_index(&demo_categories(), &TrigramEmbedder).unwrap();
        assert_eq!(GroundingIndex::from_json(&idx.to_json()).unwrap(), idx);
        assert!(GroundingIndex::from_json("{").is_err());
    }

    fn vec2() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-100.0f64..100.0, 4).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(a in vec2(), b in vec2(), k in 0.01f64..100.0) {
            let ab = cosine(&a, &b).unwrap();
            prop_assert!((ab - cosine(&b, &a).unwrap()).abs() < 1e-12);
            let ka: Vec<f64> = a.iter().map(|x| x * k).collect();
            prop_assert!((ab - cosine(&ka, &b).unwrap()).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn grounding_is_idempotent_and_in_scene(words in proptest::collection::vec("[a-z]{2,8}", 1..4)) {
            let cats = demo_categories();
            let idx = build_index(&cats, &TrigramEmbedder).unwrap();
            let steps = words.iter().map(|w| parse_step(&format!("[find] <{w}>")).unwrap()).collect();
            let plan = SkeletonPlan::Seq(steps);
            let (once, _) = ground_plan(&plan, &cats, &idx, &TrigramEmbedder).unwrap();
            let (twice, subs) = ground_plan(&once, &cats, &idx, &TrigramEmbedder).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(subs.is_empty());
            prop_assert!(once.categories().is_subset(&cats));
        }
    }
}
