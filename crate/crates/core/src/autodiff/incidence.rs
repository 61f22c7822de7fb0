/// Incoming-message structure of a (possibly batched) relational graph in
/// compressed-row form keyed by target node.
///
/// Entry `e` in `offsets[i]..offsets[i + 1]` says that `sources[e]` sends a
/// message to node `i` under relation `relations[e]`, scaled by `weights[e]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Incidence {
    num_nodes: usize,
    num_relations: usize,
    offsets: Vec<usize>,
    sources: Vec<usize>,
    relations: Vec<usize>,
    weights: Vec<f64>,
}

impl Incidence {
    /// Builds from unsorted `(source, target, relation)` triples. Each weight is
    /// `1 / |N_i^r|`, the reciprocal in-degree of the target under the relation.
    pub fn from_arcs(num_nodes: usize, num_relations: usize, arcs: &[(usize, usize, usize)]) -> Self {
        let mut sorted: Vec<(usize, usize, usize)> = arcs.iter().map(|&(s, t, r)| (t, s, r)).collect();
        sorted.sort_unstable();
        let mut offsets = vec![0; num_nodes + 1];
        for &(t, _, _) in &sorted {
            offsets[t + 1] += 1;
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let mut weights = Vec::with_capacity(sorted.len());
        for i in 0..num_nodes {
            let span = &sorted[offsets[i]..offsets[i + 1]];
            for &(_, _, r) in span {
                let count = span.iter().filter(|e| e.2 == r).count();
                weights.push(1.0 / count as f64);
            }
        }
        Self {
            num_nodes,
            num_relations,
            offsets,
            sources: sorted.iter().map(|e| e.1).collect(),
            relations: sorted.iter().map(|e| e.2).collect(),
            weights,
        }
    }

    pub fn empty(num_nodes: usize, num_relations: usize) -> Self {
        Self::from_arcs(num_nodes, num_relations, &[])
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn num_entries(&self) -> usize {
        self.sources.len()
    }

    /// `(source, relation, weight)` for every message arriving at `target`.
    pub fn incoming(&self, target: usize) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let span = self.offsets[target]..self.offsets[target + 1];
        span.map(move |e| (self.sources[e], self.relations[e], self.weights[e]))
    }

    pub fn in_degree(&self, target: usize) -> usize {
        self.offsets[target + 1] - self.offsets[target]
    }
}
