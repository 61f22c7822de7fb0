//! Directed labeled heterogeneous agent communication graphs.
//!
//! Nodes are agents labeled by their class. An arc `(u1, u2)` means `u1` can
//! send to `u2` and is labeled with the relation `class(u1) * |C| + class(u2)`,
//! so `|C|` classes yield `|C|²` relation types whether or not each class pair
//! actually communicates in a given state.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::autodiff::Incidence;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("graph needs at least one agent class")]
    NoClasses,
    #[error("node {node} has class {class}, but only {num_classes} classes exist")]
    ClassOutOfRange { node: usize, class: usize, num_classes: usize },
    #[error("arc ({0}, {1}) references a node outside 0..{2}")]
    InvalidEndpoint(usize, usize, usize),
    #[error("duplicate arc ({0}, {1})")]
    DuplicateArc(usize, usize),
    #[error("self-arc on node {0}")]
    SelfArc(usize),
    #[error("node {0} out of range")]
    NodeOutOfRange(usize),
    #[error("relation {0} out of range")]
    RelationOutOfRange(usize),
    #[error("malformed graph dump line {line}: {text}")]
    Parse { line: usize, text: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentClassId(pub usize);

/// Dense relation numbering for `num_classes` agent classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RelationIndex {
    num_classes: usize,
}

impl RelationIndex {
    pub fn new(num_classes: usize) -> Result<Self, GraphError> {
        if num_classes == 0 {
            return Err(GraphError::NoClasses);
        }
        Ok(Self { num_classes })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_relations(&self) -> usize {
        self.num_classes * self.num_classes
    }

    pub fn relation(&self, from: AgentClassId, to: AgentClassId) -> usize {
        from.0 * self.num_classes + to.0
    }

    pub fn classes_of(&self, relation: usize) -> (AgentClassId, AgentClassId) {
        (AgentClassId(relation / self.num_classes), AgentClassId(relation % self.num_classes))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeterogeneousAgentGraph {
    relations: RelationIndex,
    node_class: Vec<AgentClassId>,
    arcs: Vec<(usize, usize)>,
    relation_of_arc: Vec<usize>,
}

impl HeterogeneousAgentGraph {
    pub fn build(
        num_classes: usize,
        node_classes: Vec<AgentClassId>,
        arcs: Vec<(usize, usize)>,
    ) -> Result<Self, GraphError> {
        let relations = RelationIndex::new(num_classes)?;
        let n = node_classes.len();
        for (node, c) in node_classes.iter().enumerate() {
            if c.0 >= num_classes {
                return Err(GraphError::ClassOutOfRange {
                    node,
                    class: c.0,
                    num_classes,
                });
            }
        }
        let mut seen = BTreeSet::new();
        for &(s, t) in &arcs {
            if s >= n || t >= n {
                return Err(GraphError::InvalidEndpoint(s, t, n));
            }
            if s == t {
                return Err(GraphError::SelfArc(s));
            }
            if !seen.insert((s, t)) {
                return Err(GraphError::DuplicateArc(s, t));
            }
        }
        let relation_of_arc = arcs
            .iter()
            .map(|&(s, t)| relations.relation(node_classes[s], node_classes[t]))
            .collect();
        Ok(Self {
            relations,
            node_class: node_classes,
            arcs,
            relation_of_arc,
        })
    }

    /// A graph with no arcs.
    pub fn isolated(num_classes: usize, node_classes: Vec<AgentClassId>) -> Result<Self, GraphError> {
        Self::build(num_classes, node_classes, Vec::new())
    }

    pub fn relation_index(&self) -> RelationIndex {
        self.relations
    }

    pub fn num_nodes(&self) -> usize {
        self.node_class.len()
    }

    pub fn num_classes(&self) -> usize {
        self.relations.num_classes()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.num_relations()
    }

    pub fn node_class(&self, node: usize) -> AgentClassId {
        self.node_class[node]
    }

    pub fn node_classes(&self) -> &[AgentClassId] {
        &self.node_class
    }

    pub fn arcs(&self) -> &[(usize, usize)] {
        &self.arcs
    }

    pub fn relation_of_arc(&self) -> &[usize] {
        &self.relation_of_arc
    }

    fn check(&self, node: usize, relation: usize) -> Result<(), GraphError> {
        if node >= self.num_nodes() {
            return Err(GraphError::NodeOutOfRange(node));
        }
        if relation >= self.num_relations() {
            return Err(GraphError::RelationOutOfRange(relation));
        }
        Ok(())
    }

    /// Sources `j` of arcs `(j, node)` labeled `relation`, ascending.
    pub fn neighbors_by_relation(&self, node: usize, relation: usize) -> Result<Vec<usize>, GraphError> {
        self.check(node, relation)?;
        let mut out: Vec<usize> = self
            .arcs
            .iter()
            .zip(&self.relation_of_arc)
            .filter(|(&(_, t), &r)| t == node && r == relation)
            .map(|(&(s, _), _)| s)
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    /// All sources of arcs into `node`, ascending.
    pub fn in_neighbors(&self, node: usize) -> Result<Vec<usize>, GraphError> {
        if node >= self.num_nodes() {
            return Err(GraphError::NodeOutOfRange(node));
        }
        let mut out: Vec<usize> = self.arcs.iter().filter(|a| a.1 == node).map(|a| a.0).collect();
        out.sort_unstable();
        Ok(out)
    }

    /// `c_{i,r} = |N_i^r|`, or `None` when the relation brings no messages
    /// (the term is then skipped, never divided by zero).
    pub fn degree_normalizer(&self, node: usize, relation: usize) -> Result<Option<usize>, GraphError> {
        let count = self.neighbors_by_relation(node, relation)?.len();
        Ok((count > 0).then_some(count))
    }

    pub fn relations_in_use(&self) -> BTreeSet<usize> {
        self.relation_of_arc.iter().copied().collect()
    }

    /// Message structure consumed by the graph kernels.
    pub fn incidence(&self) -> Incidence {
        batch_incidence(&[self])
    }

    /// `node <id> class <c>` and `arc <src> <dst> rel <r>` lines.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.node_class.iter().enumerate() {
            let _ = writeln!(out, "node {i} class {}", c.0);
        }
        for (&(s, t), r) in self.arcs.iter().zip(&self.relation_of_arc) {
            let _ = writeln!(out, "arc {s} {t} rel {r}");
        }
        out
    }

    /// Parses [`dump`](Self::dump) output. Relation labels are recomputed and
    /// must agree with the recorded ones.
    pub fn parse_dump(num_classes: usize, text: &str) -> Result<Self, GraphError> {
        let mut classes = Vec::new();
        let mut arcs = Vec::new();
        let mut labels = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let bad = || GraphError::Parse {
                line: line_no + 1,
                text: line.to_string(),
            };
            let words: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| words.get(i).and_then(|w| w.parse::<usize>().ok()).ok_or_else(bad);
            match words.first() {
                None => continue,
                Some(&"node") if words.len() == 4 && words[2] == "class" => {
                    if num(1)? != classes.len() {
                        return Err(bad());
                    }
                    classes.push(AgentClassId(num(3)?));
                }
                Some(&"arc") if words.len() == 5 && words[3] == "rel" => {
                    arcs.push((num(1)?, num(2)?));
                    labels.push((line_no + 1, line.to_string(), num(4)?));
                }
                _ => return Err(bad()),
            }
        }
        let graph = Self::build(num_classes, classes, arcs)?;
        for ((line, text, label), &r) in labels.into_iter().zip(&graph.relation_of_arc) {
            if label != r {
                return Err(GraphError::Parse { line, text });
            }
        }
        Ok(graph)
    }
}

/// Disjoint union of several graphs as one incidence structure; node `k` of
/// graph `g` becomes node `offset(g) + k`. All graphs must share `|C|`.
pub fn batch_incidence(graphs: &[&HeterogeneousAgentGraph]) -> Incidence {
    let num_relations = graphs.first().map_or(1, |g| g.num_relations());
    let mut offset = 0;
    let mut arcs = Vec::new();
    for g in graphs {
        debug_assert_eq!(g.num_relations(), num_relations);
        for (&(s, t), &r) in g.arcs.iter().zip(&g.relation_of_arc) {
            arcs.push((s + offset, t + offset, r));
        }
        offset += g.num_nodes();
    }
    Incidence::from_arcs(offset, num_relations, &arcs)
}
