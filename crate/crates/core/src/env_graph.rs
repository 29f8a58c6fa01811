//! The environment graph: the robot's global semantic map of entities,
//! their states, and directed relations between them.
//!
//! Graphs are loaded from a small JSON format, validated (unique ids, no
//! dangling endpoints, acyclic relation edges) and then treated as
//! immutable. The two derived views are the fact encoding consumed by the
//! compiler and the condition-set view consumed by the metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;

use petgraph::algo::toposort;
use petgraph::graphmap::DiGraphMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque entity identifier.
pub type EntityId = u32;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph JSON is malformed at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("failed to read graph: {0}")]
    Io(#[from] std::io::Error),
    #[error("duplicate entity id {0}")]
    DuplicateId(EntityId),
    #[error("entity {0} has an empty category")]
    EmptyCategory(EntityId),
    #[error("relation {kind}({from}, {to}) references unknown entity {missing}")]
    DanglingEndpoint {
        kind: String,
        from: EntityId,
        to: EntityId,
        missing: EntityId,
    },
    #[error("relation edges contain a directed cycle through entity {0}")]
    Cycle(EntityId),
    #[error("entity {id} carries both `{state}` and its complement `{complement}`")]
    ComplementClash {
        id: EntityId,
        state: String,
        complement: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub category: String,
    #[serde(default)]
    pub states: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub kind: String,
    pub from: EntityId,
    pub to: EntityId,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    #[serde(default)]
    entities: Vec<Entity>,
    #[serde(default)]
    relations: Vec<Relation>,
}

/// A validated environment graph. Entities are kept ordered by id and
/// relations in their canonical (sorted) order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EnvGraph {
    entities: BTreeMap<EntityId, Entity>,
    relations: Vec<Relation>,
}

/// One element of the condition-set view of a graph.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Condition {
    State {
        id: EntityId,
        state: String,
    },
    Relation {
        relation: String,
        from: EntityId,
        to: EntityId,
    },
}

impl Condition {
    pub fn state(id: EntityId, state: impl Into<String>) -> Self {
        Condition::State {
            id,
            state: state.into(),
        }
    }

    pub fn relation(kind: impl Into<String>, from: EntityId, to: EntityId) -> Self {
        Condition::Relation {
            relation: kind.into(),
            from,
            to,
        }
    }

    pub fn is_state(&self) -> bool {
        matches!(self, Condition::State { .. })
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::State { id, state } => write!(f, "({id}, {state})"),
            Condition::Relation { relation, from, to } => write!(f, "({relation}, {from}, {to})"),
        }
    }
}

pub type ConditionSet = BTreeSet<Condition>;

impl EnvGraph {
    /// Builds and validates a graph from its parts.
    pub fn new(
        entities: impl IntoIterator<Item = Entity>,
        relations: impl IntoIterator<Item = Relation>,
    ) -> Result<Self, GraphError> {
        let mut by_id = BTreeMap::new();
        for entity in entities {
            if entity.category.is_empty() {
                return Err(GraphError::EmptyCategory(entity.id));
            }
            let id = entity.id;
            if by_id.insert(id, entity).is_some() {
                return Err(GraphError::DuplicateId(id));
            }
        }

        let mut relations: Vec<Relation> = relations.into_iter().collect();
        relations.sort();
        relations.dedup();

        let mut edges = DiGraphMap::<EntityId, ()>::new();
        for id in by_id.keys() {
            edges.add_node(*id);
        }
        for rel in &relations {
            for endpoint in [rel.from, rel.to] {
                if !by_id.contains_key(&endpoint) {
                    return Err(GraphError::DanglingEndpoint {
                        kind: rel.kind.clone(),
                        from: rel.from,
                        to: rel.to,
                        missing: endpoint,
                    });
                }
            }
            if rel.from == rel.to {
                return Err(GraphError::Cycle(rel.from));
            }
            edges.add_edge(rel.from, rel.to, ());
        }
        if let Err(cycle) = toposort(&edges, None) {
            return Err(GraphError::Cycle(cycle.node_id()));
        }

        Ok(EnvGraph {
            entities: by_id,
            relations,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.entities.get(&id)
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn category_of(&self, id: EntityId) -> Option<&str> {
        self.entities.get(&id).map(|e| e.category.as_str())
    }

    /// Ids of every entity of the given category, ascending.
    pub fn instances_of<'a>(&'a self, category: &'a str) -> impl Iterator<Item = EntityId> + 'a {
        self.entities
            .values()
            .filter(move |e| e.category == category)
            .map(|e| e.id)
    }

    /// Distinct categories present in the scene, sorted.
    pub fn categories(&self) -> BTreeSet<String> {
        self.entities.values().map(|e| e.category.clone()).collect()
    }

    /// Every entity reachable from `id` by following relation edges
    /// forward (containers, rooms, ...), excluding `id` itself.
    pub fn ancestors(&self, id: EntityId) -> BTreeSet<EntityId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(cur) = stack.pop() {
            for rel in self.relations.iter().filter(|r| r.from == cur) {
                if seen.insert(rel.to) {
                    stack.push(rel.to);
                }
            }
        }
        seen
    }

    /// Rejects entities holding a state together with its declared
    /// complement.
    pub fn check_state_complements(&self, pairs: &[(String, String)]) -> Result<(), GraphError> {
        for entity in self.entities.values() {
            for (a, b) in pairs {
                if entity.states.contains(a) && entity.states.contains(b) {
                    return Err(GraphError::ComplementClash {
                        id: entity.id,
                        state: a.clone(),
                        complement: b.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Fact encoding: `is/2` for every entity, then `state/2` for every
    /// entity state, then `relation/3` for every edge. Deterministic.
    pub fn to_facts(&self) -> Vec<String> {
        let mut facts = Vec::with_capacity(self.fact_count());
        for e in self.entities.values() {
            facts.push(format!("is({}, {})", e.id, e.category));
        }
        for e in self.entities.values() {
            for s in &e.states {
                facts.push(format!("state({}, {})", e.id, s));
            }
        }
        for r in &self.relations {
            facts.push(format!("relation({}, {}, {})", r.kind, r.from, r.to));
        }
        facts
    }

    fn fact_count(&self) -> usize {
        self.entities.len() + self.entities.values().map(|e| e.states.len()).sum::<usize>() + self.relations.len()
    }

    /// The set-of-conditions view used for state differencing.
    pub fn snapshot_states(&self) -> ConditionSet {
        let mut out = ConditionSet::new();
        for e in self.entities.values() {
            for s in &e.states {
                out.insert(Condition::state(e.id, s.clone()));
            }
        }
        for r in &self.relations {
            out.insert(Condition::relation(r.kind.clone(), r.from, r.to));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            entities: self.entities.values().cloned().collect(),
            relations: self.relations.clone(),
        };
        serde_json::to_string_pretty(&file).expect("graph serialization cannot fail")
    }
}

/// Reads and validates a graph from a JSON byte stream.
pub fn load_graph(mut source: impl Read) -> Result<EnvGraph, GraphError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    parse_graph(&text)
}

pub fn parse_graph(text: &str) -> Result<EnvGraph, GraphError> {
    let file: GraphFile = serde_json::from_str(text).map_err(|e| GraphError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    EnvGraph::new(file.entities, file.relations)
}

/// Writes the canonical JSON form of a graph.
pub fn save_graph(graph: &EnvGraph) -> String {
    graph.to_json()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ent(id: EntityId, category: &str, states: &[&str]) -> Entity {
        Entity {
            id,
            category: category.into(),
            states: states.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn loads_single_character() {
        let g = parse_graph(r#"{"entities":[{"id":1,"category":"character","states":[]}],"relations":[]}"#).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.to_facts(), vec!["is(1, character)"]);
    }

    #[test]
    fn loads_empty_graph() {
        let g = parse_graph(r#"{"entities":[],"relations":[]}"#).unwrap();
        assert!(g.is_empty());
        assert!(g.to_facts().is_empty());
        assert!(g.snapshot_states().is_empty());
    }

    #[test]
    fn loads_relation_edge() {
        let g = parse_graph(
            r#"{"entities":[{"id":5,"category":"washing_machine","states":[]},
                            {"id":2,"category":"laundry_room","states":[]}],
                "relations":[{"kind":"in","from":5,"to":2}]}"#,
        )
        .unwrap();
        assert_eq!(g.relations().len(), 1);
        assert!(g.to_facts().contains(&"relation(in, 5, 2)".to_string()));
    }

    #[test]
    fn fact_order_and_state_encoding() {
        let g = EnvGraph::new([ent(7, "clothes_pants", &["dirty"])], []).unwrap();
        assert_eq!(g.to_facts(), vec!["is(7, clothes_pants)", "state(7, dirty)"]);
    }

    #[test]
    fn parse_error_reports_position() {
        let err = parse_graph("{\n  \"entities\": [\n  }").unwrap_err();
        match err {
            GraphError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicates_dangling_and_cycles() {
        let dup = EnvGraph::new([ent(1, "a", &[]), ent(1, "b", &[])], []);
        assert!(matches!(dup, Err(GraphError::DuplicateId(1))));

        let dangling = EnvGraph::new(
            [ent(1, "a", &[])],
            [Relation {
                kind: "in".into(),
                from: 1,
                to: 9,
            }],
        );
        assert!(matches!(dangling, Err(GraphError::DanglingEndpoint { missing: 9, .. })));

        let cyc = EnvGraph::new(
            [ent(1, "a", &[]), ent(2, "b", &[]), ent(3, "c", &[])],
            [
                Relation {
                    kind: "in".into(),
                    from: 1,
                    to: 2,
                },
                Relation {
                    kind: "in".into(),
                    from: 2,
                    to: 3,
                },
                Relation {
                    kind: "close".into(),
                    from: 3,
                    to: 1,
                },
            ],
        );
        assert!(matches!(cyc, Err(GraphError::Cycle(_))));

        let selfloop = EnvGraph::new(
            [ent(1, "a", &[])],
            [Relation {
                kind: "close".into(),
                from: 1,
                to: 1,
            }],
        );
        assert!(matches!(selfloop, Err(GraphError::Cycle(1))));
    }

    #[test]
    fn complement_states_rejected() {
        let g = EnvGraph::new([ent(5, "tv", &["on", "off"])], []).unwrap();
        let err = g.check_state_complements(&[("on".into(), "off".into())]);
        assert!(matches!(err, Err(GraphError::ComplementClash { id: 5, .. })));
    }

    #[test]
    fn ancestors_follow_edges() {
        let g = EnvGraph::new(
            [
                ent(6, "detergent", &[]),
                ent(4, "cupboard", &[]),
                ent(2, "laundry_room", &[]),
            ],
            [
                Relation {
                    kind: "inside".into(),
                    from: 6,
                    to: 4,
                },
                Relation {
                    kind: "in".into(),
                    from: 4,
                    to: 2,
                },
            ],
        )
        .unwrap();
        assert_eq!(g.ancestors(6), BTreeSet::from([4, 2]));
        assert!(g.ancestors(2).is_empty());
    }

    fn arb_graph() -> impl Strategy<Value = EnvGraph> {
        (1usize..8)
            .prop_flat_map(|n| {
                let cats = prop::collection::vec(prop::sample::select(vec!["cup", "table", "room"]), n);
                let states = prop::collection::vec(
                    prop::collection::btree_set(prop::sample::select(vec!["dirty", "open", "on"]), 0..3),
                    n,
                );
                // Edges only go from lower to higher index, so the graph is acyclic.
                let edges = prop::collection::vec((0..n, 0..n), 0..10);
                (Just(n), cats, states, edges)
            })
            .prop_map(|(n, cats, states, edges)| {
                let entities = (0..n).map(|i| Entity {
                    id: (i as u32) * 3 + 1,
                    category: cats[i].to_string(),
                    states: states[i].iter().map(|s| s.to_string()).collect(),
                });
                let relations = edges.into_iter().filter(|(a, b)| a < b).map(|(a, b)| Relation {
                    kind: "in".into(),
                    from: (a as u32) * 3 + 1,
                    to: (b as u32) * 3 + 1,
                });
                EnvGraph::new(entities, relations).unwrap()
            })
    }

    proptest! {
        #[test]
        fn save_then_load_is_identity(g in arb_graph()) {
            let back = parse_graph(&save_graph(&g)).unwrap();
            prop_assert_eq!(&back, &g);
            prop_assert_eq!(back.to_facts(), g.to_facts());
        }

        #[test]
        fn fact_count_matches(g in arb_graph()) {
            let expected = g.len()
                + g.entities().map(|e| e.states.len()).sum::<usize>()
                + g.relations().len();
            prop_assert_eq!(g.to_facts().len(), expected);
        }
    }
}
