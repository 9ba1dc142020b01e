//! Undirected simple graphs and the topology families used for decentralized
//! training: ring, complete, Erdős–Rényi and d-regular expanders built as a
//! union of random virtual rings.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};

/// Number of sampling attempts before a generator reports a disconnected graph.
pub const DEFAULT_RESAMPLE_BUDGET: usize = 16;

/// Undirected simple graph on nodes `0..n`.
///
/// Stored as a sorted adjacency list plus a canonical edge set with `i < j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    adj: Vec<Vec<usize>>,
    edges: BTreeSet<(usize, usize)>,
}

fn canonical(u: usize, v: usize) -> (usize, usize) {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Graph {
            n,
            adj: vec![Vec::new(); n],
            edges: BTreeSet::new(),
        }
    }

    /// Build from an edge list, rejecting self-loops, duplicates and
    /// out-of-range indices.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut g = Graph::empty(n);
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) out of range for n = {n}"
                )));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop at node {u}")));
            }
            if !g.insert_edge(u, v) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({u}, {v})")));
            }
        }
        Ok(g)
    }

    /// Insert an edge; returns false (and changes nothing) for self-loops or
    /// existing edges.
    pub(crate) fn insert_edge(&mut self, u: usize, v: usize) -> bool {
        if u == v || !self.edges.insert(canonical(u, v)) {
            return false;
        }
        for (a, b) in [(u, v), (v, u)] {
            let list = &mut self.adj[a];
            let pos = list.binary_search(&b).unwrap_err();
            list.insert(pos, b);
        }
        true
    }

    pub(crate) fn remove_edge(&mut self, u: usize, v: usize) -> bool {
        if !self.edges.remove(&canonical(u, v)) {
            return false;
        }
        for (a, b) in [(u, v), (v, u)] {
            let list = &mut self.adj[a];
            let pos = list.binary_search(&b).expect("adjacency out of sync");
            list.remove(pos);
        }
        true
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Canonical edges `(i, j)` with `i < j`, in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&canonical(u, v))
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adj.iter().map(Vec::len).collect()
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn min_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).min().unwrap_or(0)
    }

    /// The common degree if every node has the same degree.
    pub fn regular_degree(&self) -> Option<usize> {
        let d = self.adj.first()?.len();
        self.adj.iter().all(|a| a.len() == d).then_some(d)
    }

    pub fn adjacency_matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    /// Dense graph Laplacian `L = D - A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = -self.adjacency_matrix();
        for i in 0..self.n {
            l[(i, i)] = self.degree(i) as f64;
        }
        l
    }

    /// True iff a BFS from node 0 reaches every node. The empty graph and
    /// the single-node graph count as connected.
    pub fn is_connected(&self) -> bool {
        self.component_count(&vec![true; self.n]) <= 1
    }

    /// Number of connected components of the subgraph induced by `alive`.
    pub fn component_count(&self, alive: &[bool]) -> usize {
        assert_eq!(alive.len(), self.n, "alive mask length must equal n");
        let mut seen = vec![false; self.n];
        let mut components = 0;
        let mut queue = VecDeque::new();
        for start in 0..self.n {
            if !alive[start] || seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for &v in &self.adj[u] {
                    if alive[v] && !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        components
    }

    /// Connectivity of the subgraph induced by the alive nodes.
    pub fn is_connected_within(&self, alive: &[bool]) -> bool {
        self.component_count(alive) <= 1
    }

    /// Number of edges whose endpoints are both alive.
    pub fn alive_edge_count(&self, alive: &[bool]) -> usize {
        self.edges.iter().filter(|&&(i, j)| alive[i] && alive[j]).count()
    }

    /// Edge-list text: header `n <count>` then one `i j` line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n {}\n", self.n);
        for (i, j) in self.edges() {
            out.push_str(&format!("{i} {j}\n"));
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (line, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing `n <count>` header".into(),
        })?;
        let n = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["n", count] => count.parse::<usize>().map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?,
            _ => {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected `n <count>`, found `{header}`"),
                })
            }
        };
        let mut edges = Vec::new();
        for (line, l) in lines {
            let parts: Vec<_> = l.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|e| Error::Parse {
                    line,
                    msg: e.to_string(),
                })
            };
            match parts.as_slice() {
                [a, b] => edges.push((parse(a)?, parse(b)?)),
                _ => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("expected `i j`, found `{l}`"),
                    })
                }
            }
        }
        Graph::from_edges(n, edges)
    }

    pub fn to_json(&self) -> GraphJson {
        GraphJson {
            n: self.n,
            edges: self.edges().map(|(i, j)| [i, j]).collect(),
        }
    }
}

/// JSON shape `{"n": N, "edges": [[i, j], ...]}`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct GraphJson {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
}

impl TryFrom<GraphJson> for Graph {
    type Error = Error;

    fn try_from(value: GraphJson) -> Result<Self> {
        Graph::from_edges(value.n, value.edges.into_iter().map(|[i, j]| (i, j)))
    }
}

/// Cycle `0 - 1 - ... - (n-1) - 0`.
pub fn make_ring(n: usize) -> Result<Graph> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "ring needs at least 3 nodes, got {n}"
        )));
    }
    Graph::from_edges(n, (0..n).map(|i| (i, (i + 1) % n)))
}

pub fn make_complete(n: usize) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "complete graph needs at least 2 nodes, got {n}"
        )));
    }
    Graph::from_edges(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
}

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "edge probability must lie in (0, 1), got {p}"
        )))
    }
}

fn erdos_renyi_attempt(n: usize, p: f64, rng: &mut Rng) -> Graph {
    let mut g = Graph::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                g.insert_edge(i, j);
            }
        }
    }
    g
}

/// G(n, p): every pair is an edge independently with probability `p`.
/// The result may be disconnected; see [`make_connected_erdos_renyi`].
pub fn make_erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Graph> {
    check_probability(p)?;
    Ok(erdos_renyi_attempt(n, p, &mut rng_from(seed, &[0])))
}

/// G(n, p) resampled until connected. Attempt 0 equals [`make_erdos_renyi`].
pub fn make_connected_erdos_renyi(n: usize, p: f64, seed: u64, budget: usize) -> Result<Graph> {
    check_probability(p)?;
    for attempt in 0..budget {
        let g = erdos_renyi_attempt(n, p, &mut rng_from(seed, &[attempt as u64]));
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::DisconnectedAfterResample { attempts: budget })
}

/// Edge probability `ln N / N` used for the Erdős–Rényi baseline.
pub fn erdos_renyi_threshold(n: usize) -> f64 {
    (n as f64).ln() / n as f64
}

/// One random virtual ring: nodes sorted by a uniform coordinate in [0, 1),
/// ties broken by node index. Returns the circular order.
pub(crate) fn random_ring_order(n: usize, rng: &mut Rng) -> Vec<usize> {
    let coords: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| coords[a].total_cmp(&coords[b]).then(a.cmp(&b)));
    order
}

/// Re-pair the endpoints of duplicated ring adjacencies.
///
/// The pool is shuffled, then each member is matched with the first later
/// member that would not create a self-loop or parallel edge. Members with no
/// legal partner are returned as leftovers; their degree stays below `d`.
pub(crate) fn pair_duplicate_pool(
    g: &mut Graph,
    mut pool: Vec<usize>,
    rng: &mut Rng,
) -> (Vec<(usize, usize)>, Vec<usize>) {
    pool.shuffle(rng);
    let mut added = Vec::new();
    let mut leftovers = Vec::new();
    while let Some(a) = pool.first().copied() {
        pool.remove(0);
        match pool.iter().position(|&b| b != a && !g.has_edge(a, b)) {
            Some(pos) => {
                let b = pool.remove(pos);
                g.insert_edge(a, b);
                added.push(canonical(a, b));
            }
            None => leftovers.push(a),
        }
    }
    (added, leftovers)
}

/// Close remaining degree deficits by edge switches: for a deficit pair
/// `(x, y)`, remove some edge `(a, b)` and add `(x, a)` and `(y, b)`. The
/// degrees of `a` and `b` are unchanged and `x`, `y` each gain one.
pub(crate) fn switch_repair(g: &mut Graph, leftovers: &[usize], rng: &mut Rng) -> usize {
    let mut repaired = 0;
    for pair in leftovers.chunks_exact(2) {
        let (x, y) = (pair[0], pair[1]);
        if x != y && g.insert_edge(x, y) {
            repaired += 1;
            continue;
        }
        let mut candidates: Vec<(usize, usize)> = g.edges().collect();
        candidates.shuffle(rng);
        let found = candidates.into_iter().find_map(|(p, q)| {
            [(p, q), (q, p)].into_iter().find(|&(a, b)| {
                a != x && a != y && b != x && b != y && !g.has_edge(x, a) && !g.has_edge(y, b)
            })
        });
        if let Some((a, b)) = found {
            g.remove_edge(a, b);
            g.insert_edge(x, a);
            g.insert_edge(y, b);
            repaired += 1;
        }
    }
    repaired
}

/// Union of `rings` random rings with duplicate adjacencies rewired.
/// Returns the graph and the number of nodes left below full degree.
pub(crate) fn virtual_ring_union(n: usize, rings: usize, rng: &mut Rng) -> (Graph, usize) {
    let mut multiplicity: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for _ in 0..rings {
        let order = random_ring_order(n, rng);
        for w in 0..n {
            let (u, v) = (order[w], order[(w + 1) % n]);
            if u != v {
                *multiplicity.entry(canonical(u, v)).or_default() += 1;
            }
        }
    }
    let mut g = Graph::empty(n);
    let mut pool = Vec::new();
    for (&(u, v), &m) in &multiplicity {
        g.insert_edge(u, v);
        for _ in 1..m {
            pool.push(u);
            pool.push(v);
        }
    }
    let (_, leftovers) = pair_duplicate_pool(&mut g, pool, rng);
    let repaired = switch_repair(&mut g, &leftovers, rng);
    let deficit = leftovers.len() - 2 * repaired;
    (g, deficit)
}

/// Random d-regular expander (d even) as the union of `d / 2` random virtual
/// rings. Resamples up to [`DEFAULT_RESAMPLE_BUDGET`] times until connected.
pub fn make_regular_expander(n: usize, d: usize, seed: u64) -> Result<Graph> {
    make_regular_expander_with_budget(n, d, seed, DEFAULT_RESAMPLE_BUDGET)
}

pub fn make_regular_expander_with_budget(
    n: usize,
    d: usize,
    seed: u64,
    budget: usize,
) -> Result<Graph> {
    if d < 2 || d % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "expander degree must be even and at least 2, got {d}"
        )));
    }
    if d >= n {
        return Err(Error::InvalidArgument(format!(
            "expander degree {d} must be smaller than node count {n}"
        )));
    }
    for attempt in 0..budget {
        let mut rng = rng_from(seed, &[attempt as u64]);
        let (g, _) = virtual_ring_union(n, d / 2, &mut rng);
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::DisconnectedAfterResample { attempts: budget })
}

/// 3-regular graph: the ring `0..n` plus a random perfect matching that
/// avoids ring edges. Requires even `n >= 4`.
pub fn make_ring_matching(n: usize, seed: u64) -> Result<Graph> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "ring plus matching needs an even node count >= 4, got {n}"
        )));
    }
    for attempt in 0..64u64 {
        let mut rng = rng_from(seed, &[attempt]);
        let mut g = make_ring(n)?;
        let mut pool: Vec<usize> = (0..n).collect();
        pool.shuffle(&mut rng);
        let (_, leftovers) = pair_duplicate_pool(&mut g, pool, &mut rng);
        if leftovers.is_empty() {
            return Ok(g);
        }
    }
    Err(Error::InvalidArgument(format!(
        "could not find a chord matching for n = {n}"
    )))
}

/// Parameter transmissions: every undirected edge carries one model in each
/// direction per round.
pub fn communication_cost(g: &Graph, model_params: u64, rounds: u64) -> u64 {
    2 * g.edge_count() as u64 * model_params * rounds
}
