//! Event-driven simulation of a virtual-ring overlay.
//!
//! Every node draws one coordinate in [0, 1) per ring. On each ring the live
//! nodes form a cycle in increasing circular coordinate order (ties broken by
//! id); a node's ring neighbors are its overlay links. Nodes also keep their
//! neighbors' neighbors so that a single failure can be repaired locally.
//! Messages are simulated: each event is processed to completion before the
//! next one starts.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IteratorRandom;
use rand::Rng as _;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{pair_duplicate_pool, Graph};
use crate::rng::rng_from;

pub type NodeId = u64;

const STREAM_COORDS: u64 = 1;
const STREAM_ENTRY: u64 = 2;
const STREAM_REWIRE: u64 = 3;
const STREAM_COST: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverlayNode {
    pub id: NodeId,
    pub coords: Vec<f64>,
    /// Per ring: `(predecessor, successor)`.
    pub ring_neighbors: Vec<(NodeId, NodeId)>,
    /// Per ring: `(predecessor's predecessor, successor's successor)`.
    pub two_hop: Vec<(NodeId, NodeId)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairPath {
    TwoHop,
    Lookup,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum OverlayEvent {
    Join {
        id: NodeId,
        /// Routing hops spent locating the insertion point, per ring.
        hops: Vec<usize>,
    },
    Fail {
        ids: Vec<NodeId>,
    },
    Recover {
        ring: usize,
        pred: NodeId,
        succ: NodeId,
        via: RepairPath,
    },
    /// A gap spanning more than one failed node cannot be closed from
    /// two-hop state alone.
    Unrecoverable {
        ring: usize,
        orphan: NodeId,
        failed_run: Vec<NodeId>,
    },
    Rewire {
        links: Vec<(NodeId, NodeId)>,
        deficit: usize,
    },
    Check {
        ok: bool,
        detail: Option<String>,
    },
}

#[derive(Clone, Debug)]
pub struct OverlayNetwork {
    rings: usize,
    seed: u64,
    nodes: BTreeMap<NodeId, OverlayNode>,
    extra_links: BTreeSet<(NodeId, NodeId)>,
    log: Vec<OverlayEvent>,
    events: u64,
}

/// Sort key on ring `ring`: coordinate, then id.
fn key(node: &OverlayNode, ring: usize) -> (f64, NodeId) {
    (node.coords[ring], node.id)
}

fn cmp_key(a: (f64, NodeId), b: (f64, NodeId)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// `t` lies strictly inside the clockwise arc from `a` to `b`. When `a == b`
/// the arc is the whole circle minus `a`.
fn strictly_between(a: (f64, NodeId), t: (f64, NodeId), b: (f64, NodeId)) -> bool {
    match cmp_key(a, b) {
        Ordering::Less => cmp_key(a, t) == Ordering::Less && cmp_key(t, b) == Ordering::Less,
        _ => cmp_key(t, a) == Ordering::Greater || cmp_key(t, b) == Ordering::Less,
    }
}

fn canonical(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    (a.min(b), a.max(b))
}

/// Hop statistics of greedy lookups.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HopStats {
    pub mean: f64,
    pub max: usize,
    pub samples: usize,
}

impl OverlayNetwork {
    pub fn new(rings: usize, seed: u64) -> Result<Self> {
        if rings == 0 {
            return Err(Error::InvalidArgument("need at least one ring".into()));
        }
        Ok(OverlayNetwork {
            rings,
            seed,
            nodes: BTreeMap::new(),
            extra_links: BTreeSet::new(),
            log: Vec::new(),
            events: 0,
        })
    }

    /// Network grown by joining ids `0..n` in order with random coordinates.
    pub fn build(n: usize, rings: usize, seed: u64) -> Result<Self> {
        let mut net = OverlayNetwork::new(rings, seed)?;
        for id in 0..n as NodeId {
            net.join_random(id)?;
        }
        Ok(net)
    }

    pub fn rings(&self) -> usize {
        self.rings
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&OverlayNode> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &OverlayNode> {
        self.nodes.values()
    }

    pub fn ids(&self) -> Vec<NodeId> {
        self.nodes.keys().copied().collect()
    }

    pub fn event_log(&self) -> &[OverlayEvent] {
        &self.log
    }

    pub fn extra_links(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.extra_links
    }

    fn pred(&self, id: NodeId, ring: usize) -> NodeId {
        self.nodes[&id].ring_neighbors[ring].0
    }

    fn succ(&self, id: NodeId, ring: usize) -> NodeId {
        self.nodes[&id].ring_neighbors[ring].1
    }

    fn set_pred(&mut self, id: NodeId, ring: usize, p: NodeId) {
        self.nodes.get_mut(&id).expect("live node").ring_neighbors[ring].0 = p;
    }

    fn set_succ(&mut self, id: NodeId, ring: usize, s: NodeId) {
        self.nodes.get_mut(&id).expect("live node").ring_neighbors[ring].1 = s;
    }

    /// Coordinates a node with this id draws when joining.
    pub fn random_coords(&self, id: NodeId) -> Vec<f64> {
        let mut rng = rng_from(self.seed, &[STREAM_COORDS, id]);
        (0..self.rings).map(|_| rng.random::<f64>()).collect()
    }

    pub fn join_random(&mut self, id: NodeId) -> Result<()> {
        let coords = self.random_coords(id);
        self.join(id, coords)
    }

    /// Greedy route on `ring` from `source` to the live node whose clockwise
    /// arc contains `target`. The direction (clockwise or counter-clockwise,
    /// whichever is numerically nearer) is fixed at the source. Returns the
    /// target's circular predecessor and the number of forwarding hops.
    pub fn route(&self, ring: usize, source: NodeId, target: (f64, NodeId)) -> (NodeId, usize) {
        let start = &self.nodes[&source];
        let clockwise = (target.0 - start.coords[ring]).rem_euclid(1.0) <= 0.5;
        let mut current = source;
        let mut hops = 0;
        loop {
            let here = key(&self.nodes[&current], ring);
            let next = self.succ(current, ring);
            if strictly_between(here, target, key(&self.nodes[&next], ring)) || next == current {
                return (current, hops);
            }
            current = if clockwise { next } else { self.pred(current, ring) };
            hops += 1;
            if hops > self.nodes.len() {
                unreachable!("greedy routing visits each node at most once on a consistent ring");
            }
        }
    }

    /// Insert a new node. On each ring its predecessor is found by greedy
    /// routing from a random live entry node; the node is spliced in and the
    /// two-hop tables of the nodes within two hops are refreshed.
    pub fn join(&mut self, id: NodeId, coords: Vec<f64>) -> Result<()> {
        if self.nodes.contains_key(&id) {
            return Err(Error::DuplicateNode(id));
        }
        if coords.len() != self.rings {
            return Err(Error::DimensionMismatch {
                expected: self.rings,
                got: coords.len(),
            });
        }
        if coords.iter().any(|c| !(0.0..1.0).contains(c)) {
            return Err(Error::InvalidArgument(format!(
                "coordinates must lie in [0, 1), got {coords:?}"
            )));
        }
        self.events += 1;
        let entry = {
            let mut rng = rng_from(self.seed, &[STREAM_ENTRY, self.events]);
            self.nodes.keys().copied().choose(&mut rng)
        };
        let node = OverlayNode {
            id,
            coords,
            ring_neighbors: vec![(id, id); self.rings],
            two_hop: vec![(id, id); self.rings],
        };
        let Some(entry) = entry else {
            self.nodes.insert(id, node);
            self.log.push(OverlayEvent::Join {
                id,
                hops: vec![0; self.rings],
            });
            self.after_event();
            return Ok(());
        };
        let targets: Vec<(f64, NodeId)> = (0..self.rings).map(|r| key(&node, r)).collect();
        let mut hops = Vec::with_capacity(self.rings);
        let mut splices = Vec::with_capacity(self.rings);
        for (ring, &target) in targets.iter().enumerate() {
            let (p, h) = self.route(ring, entry, target);
            hops.push(h);
            splices.push(p);
        }
        self.nodes.insert(id, node);
        let mut touched = BTreeSet::new();
        for (ring, &p) in splices.iter().enumerate() {
            let s = self.succ(p, ring);
            self.set_succ(p, ring, id);
            self.set_pred(s, ring, id);
            self.set_pred(id, ring, p);
            self.set_succ(id, ring, s);
            touched.extend(self.within_two(id, ring));
        }
        self.refresh_two_hop(&touched);
        self.log.push(OverlayEvent::Join { id, hops });
        self.after_event();
        Ok(())
    }

    /// Nodes at ring distance ≤ 2 from `id` (including `id`).
    fn within_two(&self, id: NodeId, ring: usize) -> [NodeId; 5] {
        let p = self.pred(id, ring);
        let s = self.succ(id, ring);
        [self.pred(p, ring), p, id, s, self.succ(s, ring)]
    }

    /// One round of neighbor gossip: each listed node asks its ring
    /// neighbors for their neighbors.
    fn refresh_two_hop(&mut self, ids: &BTreeSet<NodeId>) {
        for &id in ids {
            if !self.nodes.contains_key(&id) {
                continue;
            }
            let table: Vec<(NodeId, NodeId)> = (0..self.rings)
                .map(|r| (self.pred(self.pred(id, r), r), self.succ(self.succ(id, r), r)))
                .collect();
            self.nodes.get_mut(&id).expect("live node").two_hop = table;
        }
    }

    /// Fail one node and repair every ring from two-hop state.
    pub fn fail_node(&mut self, id: NodeId) -> Result<()> {
        self.fail_simultaneous(&[id])
    }

    /// Fail several nodes before any repair runs. Gaps of one failed node
    /// are closed by the predecessor linking to its stored two-hop
    /// successor. Longer gaps are logged as unrecoverable from two-hop state
    /// and closed by a fresh lookup of the next live node on the ring.
    pub fn fail_simultaneous(&mut self, ids: &[NodeId]) -> Result<()> {
        let dead: BTreeSet<NodeId> = ids.iter().copied().collect();
        for &id in &dead {
            if !self.nodes.contains_key(&id) {
                return Err(Error::UnknownNode(id));
            }
        }
        if dead.is_empty() {
            return Ok(());
        }
        self.events += 1;
        self.log.push(OverlayEvent::Fail {
            ids: dead.iter().copied().collect(),
        });
        let failed: BTreeMap<NodeId, OverlayNode> = dead
            .iter()
            .map(|id| (*id, self.nodes.remove(id).expect("checked above")))
            .collect();
        if self.nodes.is_empty() {
            self.after_event();
            return Ok(());
        }
        let mut touched = BTreeSet::new();
        for ring in 0..self.rings {
            // live nodes whose successor died
            let orphans: Vec<NodeId> = self
                .nodes
                .values()
                .filter(|n| dead.contains(&n.ring_neighbors[ring].1))
                .map(|n| n.id)
                .collect();
            let mut links = Vec::with_capacity(orphans.len());
            for x in orphans {
                let lost = self.nodes[&x].ring_neighbors[ring].1;
                let stored = self.nodes[&x].two_hop[ring].1;
                let single_gap = self.nodes.contains_key(&stored)
                    && failed[&lost].ring_neighbors[ring].1 == stored;
                if single_gap {
                    links.push((x, stored, RepairPath::TwoHop));
                } else {
                    let mut run = vec![lost];
                    let mut next = failed[&lost].ring_neighbors[ring].1;
                    while let Some(f) = failed.get(&next) {
                        if run.contains(&next) {
                            break;
                        }
                        run.push(next);
                        next = f.ring_neighbors[ring].1;
                    }
                    self.log.push(OverlayEvent::Unrecoverable {
                        ring,
                        orphan: x,
                        failed_run: run,
                    });
                    links.push((x, self.live_successor(ring, x), RepairPath::Lookup));
                }
            }
            for (p, s, via) in links {
                self.set_succ(p, ring, s);
                self.set_pred(s, ring, p);
                self.log.push(OverlayEvent::Recover {
                    ring,
                    pred: p,
                    succ: s,
                    via,
                });
                touched.insert(p);
                touched.insert(s);
            }
        }
        let mut affected = BTreeSet::new();
        for &id in &touched {
            for ring in 0..self.rings {
                affected.extend(self.within_two(id, ring));
            }
        }
        self.refresh_two_hop(&affected);
        self.after_event();
        Ok(())
    }

    /// Next live node clockwise from `id` on `ring`, by querying membership.
    fn live_successor(&self, ring: usize, id: NodeId) -> NodeId {
        let here = key(&self.nodes[&id], ring);
        self.nodes
            .values()
            .filter(|n| n.id != id)
            .map(|n| key(n, ring))
            .min_by(|&a, &b| {
                let after = |k| cmp_key(k, here) == Ordering::Greater;
                match (after(a), after(b)) {
                    (true, false) => Ordering::Less,
                    (false, true) => Ordering::Greater,
                    _ => cmp_key(a, b),
                }
            })
            .map_or(id, |k| k.1)
    }

    fn after_event(&mut self) {
        self.rewire_duplicates();
    }

    /// Ring adjacencies with multiplicity (self-pairs dropped).
    fn ring_multiplicity(&self) -> BTreeMap<(NodeId, NodeId), usize> {
        let mut m = BTreeMap::new();
        for n in self.nodes.values() {
            for &(_, s) in &n.ring_neighbors {
                if s != n.id {
                    *m.entry(canonical(n.id, s)).or_default() += 1;
                }
            }
        }
        m
    }

    /// Recompute the extra links that replace duplicated ring adjacencies:
    /// endpoints of every repeated adjacency go into a pool that is paired
    /// without creating self-loops or parallel edges.
    pub fn rewire_duplicates(&mut self) {
        let ids = self.ids();
        let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut g = Graph::empty(ids.len());
        let mut pool = Vec::new();
        for (&(a, b), &m) in &self.ring_multiplicity() {
            g.insert_edge(index[&a], index[&b]);
            for _ in 1..m {
                pool.push(index[&a]);
                pool.push(index[&b]);
            }
        }
        let previous = std::mem::take(&mut self.extra_links);
        if pool.is_empty() {
            if !previous.is_empty() {
                self.log.push(OverlayEvent::Rewire {
                    links: Vec::new(),
                    deficit: 0,
                });
            }
            return;
        }
        let mut rng = rng_from(self.seed, &[STREAM_REWIRE, self.events]);
        let (added, leftovers) = pair_duplicate_pool(&mut g, pool, &mut rng);
        self.extra_links = added
            .into_iter()
            .map(|(a, b)| canonical(ids[a], ids[b]))
            .collect();
        if self.extra_links != previous {
            self.log.push(OverlayEvent::Rewire {
                links: self.extra_links.iter().copied().collect(),
                deficit: leftovers.len(),
            });
        }
    }

    /// Undirected union of ring adjacencies and rewiring links. Live ids
    /// are mapped to `0..n` in increasing order.
    pub fn equivalent_graph(&self) -> Graph {
        let ids = self.ids();
        let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut g = Graph::empty(ids.len());
        for &(a, b) in self.ring_multiplicity().keys().chain(&self.extra_links) {
            g.insert_edge(index[&a], index[&b]);
        }
        g
    }

    /// Ring-order oracle: sort live nodes by key on each ring and compare
    /// with the successor and predecessor pointers.
    pub fn check_rings(&self) -> std::result::Result<(), String> {
        for ring in 0..self.rings {
            let mut order: Vec<&OverlayNode> = self.nodes.values().collect();
            order.sort_by(|a, b| cmp_key(key(a, ring), key(b, ring)));
            let n = order.len();
            for (i, node) in order.iter().enumerate() {
                let want_s = order[(i + 1) % n].id;
                let want_p = order[(i + n - 1) % n].id;
                let (p, s) = node.ring_neighbors[ring];
                if p != want_p || s != want_s {
                    return Err(format!(
                        "ring {ring}: node {} has (pred {p}, succ {s}), expected ({want_p}, {want_s})",
                        node.id
                    ));
                }
            }
        }
        Ok(())
    }

    /// Two-hop tables against neighbors' current neighbors.
    pub fn check_two_hop(&self) -> std::result::Result<(), String> {
        for node in self.nodes.values() {
            for ring in 0..self.rings {
                let (p, s) = node.ring_neighbors[ring];
                let want = (self.pred(p, ring), self.succ(s, ring));
                if node.two_hop[ring] != want {
                    return Err(format!(
                        "ring {ring}: node {} stores two-hop {:?}, expected {want:?}",
                        node.id, node.two_hop[ring]
                    ));
                }
            }
        }
        Ok(())
    }

    /// Ring order, two-hop consistency and the `2L` degree cap.
    pub fn check(&self) -> std::result::Result<(), String> {
        self.check_rings()?;
        self.check_two_hop()?;
        let max = self.equivalent_graph().max_degree();
        if max > 2 * self.rings {
            return Err(format!("max degree {max} exceeds {}", 2 * self.rings));
        }
        Ok(())
    }

    /// Run [`OverlayNetwork::check`] and record the outcome in the log.
    pub fn logged_check(&mut self) -> bool {
        let result = self.check();
        let ok = result.is_ok();
        self.log.push(OverlayEvent::Check {
            ok,
            detail: result.err(),
        });
        ok
    }

    /// Greedy-routing cost from random live sources to uniform random
    /// target coordinates on random rings.
    pub fn lookup_cost(&self, samples: usize, seed: u64) -> Result<HopStats> {
        if self.nodes.len() < 2 {
            return Err(Error::InvalidArgument(
                "lookup cost needs at least 2 live nodes".into(),
            ));
        }
        let mut rng = rng_from(seed, &[STREAM_COST]);
        let mut total = 0usize;
        let mut max = 0usize;
        for _ in 0..samples {
            let source = *self.nodes.keys().choose(&mut rng).expect("non-empty");
            let ring = rng.random_range(0..self.rings);
            let target = (rng.random::<f64>(), NodeId::MAX);
            let (_, hops) = self.route(ring, source, target);
            total += hops;
            max = max.max(hops);
        }
        Ok(HopStats {
            mean: total as f64 / samples.max(1) as f64,
            max,
            samples,
        })
    }
}

/// One line of a churn script.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChurnCommand {
    Join(NodeId),
    Fail(NodeId),
    Check,
}

/// Parse `join <id>` / `fail <id>` / `check` lines. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_churn_script(text: &str) -> Result<Vec<ChurnCommand>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let parse_id = |s: &str| {
            s.parse::<NodeId>().map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("bad node id {s:?}: {e}"),
            })
        };
        let cmd = match parts.as_slice() {
            ["join", id] => ChurnCommand::Join(parse_id(id)?),
            ["fail", id] => ChurnCommand::Fail(parse_id(id)?),
            ["check"] => ChurnCommand::Check,
            _ => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected `join <id>`, `fail <id>` or `check`, got {line:?}"),
                })
            }
        };
        out.push(cmd);
    }
    Ok(out)
}

/// Apply a churn script. Returns the number of `check` commands that failed.
pub fn apply_churn(net: &mut OverlayNetwork, script: &[ChurnCommand]) -> Result<usize> {
    let mut failed_checks = 0;
    for cmd in script {
        match *cmd {
            ChurnCommand::Join(id) => net.join_random(id)?,
            ChurnCommand::Fail(id) => net.fail_node(id)?,
            ChurnCommand::Check => {
                if !net.logged_check() {
                    failed_checks += 1;
                }
            }
        }
    }
    Ok(failed_checks)
}
