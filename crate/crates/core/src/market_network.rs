//! Clustered-chain trading networks.
//!
//! Each side of the market (buyers or sellers) is an undirected graph of
//! priced agents. Networks grow one node at a time: with probability `p` the
//! newcomer copies the neighborhood of a uniformly chosen anchor and prices
//! itself at the neighborhood mean; otherwise it attaches to the node at the
//! far end of the price ladder and posts a price one step `delta` beyond it.
//! `p = 0` produces a path, `p = 1` a complete graph.
//!
//! The far end is the extreme in the direction of `delta` (highest price for
//! `delta > 0`, lowest for `delta < 0`). With the default signed steps this is
//! the least competitive end of each side: sellers queue above the highest
//! ask, buyers below the lowest bid.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;

const DEAD: usize = usize::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network must contain at least one node (got N = {0})")]
    EmptyNetwork(usize),
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("price {0} must be positive and finite")]
    InvalidPrice(f64),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("cannot remove the only node of a network")]
    LastNode,
}

/// Which side of the market a network represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Buyers; the best offer is the highest bid.
    Demand,
    /// Sellers; the best offer is the lowest ask.
    Supply,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Demand => Side::Supply,
            Side::Supply => Side::Demand,
        }
    }

    /// `a` is a strictly better offer than `b` for this side.
    pub fn is_better(self, a: f64, b: f64) -> bool {
        match self {
            Side::Demand => a > b,
            Side::Supply => a < b,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Side::Demand => "demand",
            Side::Supply => "supply",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentNode {
    pub id: NodeId,
    pub price: f64,
    pub neighbors: BTreeSet<NodeId>,
    pub birth_order: u64,
}

/// Best (or far-end) node of a network together with its neighborhood size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Offer {
    pub id: NodeId,
    pub price: f64,
    pub degree: usize,
}

/// One side of the coupled market.
///
/// Node ids index a slot table and are never reused, so `id` stays unique
/// for the lifetime of the network. `alive` keeps the live ids in a dense
/// vector for O(1) uniform sampling.
#[derive(Debug, Clone)]
pub struct TradingNetwork {
    side: Side,
    slots: Vec<Option<AgentNode>>,
    alive: Vec<NodeId>,
    position: Vec<usize>,
    first_cluster: BTreeSet<NodeId>,
    next_birth: u64,
}

impl TradingNetwork {
    /// A network holding one seed node.
    pub fn seed(side: Side, initial_price: f64) -> Result<Self, NetworkError> {
        check_price(initial_price)?;
        let mut net = TradingNetwork {
            side,
            slots: Vec::new(),
            alive: Vec::new(),
            position: Vec::new(),
            first_cluster: BTreeSet::new(),
            next_birth: 0,
        };
        net.insert_node(initial_price, BTreeSet::new());
        Ok(net)
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn len(&self) -> usize {
        self.alive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alive.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.slots.get(id).is_some_and(Option::is_some)
    }

    pub fn node(&self, id: NodeId) -> Option<&AgentNode> {
        self.slots.get(id).and_then(Option::as_ref)
    }

    pub fn price(&self, id: NodeId) -> f64 {
        self.expect_node(id).price
    }

    pub fn degree(&self, id: NodeId) -> usize {
        self.expect_node(id).neighbors.len()
    }

    pub fn neighbors(&self, id: NodeId) -> &BTreeSet<NodeId> {
        &self.expect_node(id).neighbors
    }

    /// Live node ids in internal order (deterministic for a given history).
    pub fn ids(&self) -> &[NodeId] {
        &self.alive
    }

    pub fn nodes(&self) -> impl Iterator<Item = &AgentNode> + '_ {
        self.alive.iter().map(move |&id| self.expect_node(id))
    }

    pub fn first_cluster(&self) -> &BTreeSet<NodeId> {
        &self.first_cluster
    }

    /// Replaces the protected first cluster. Unknown ids are ignored.
    pub fn set_first_cluster<I: IntoIterator<Item = NodeId>>(&mut self, ids: I) {
        self.first_cluster = ids.into_iter().filter(|&id| self.contains(id)).collect();
    }

    pub fn edge_count(&self) -> usize {
        self.nodes().map(|n| n.neighbors.len()).sum::<usize>() / 2
    }

    pub fn set_price(&mut self, id: NodeId, price: f64) -> Result<(), NetworkError> {
        check_price(price)?;
        let node = self
            .slots
            .get_mut(id)
            .and_then(Option::as_mut)
            .ok_or(NetworkError::UnknownNode(id))?;
        node.price = price;
        Ok(())
    }

    pub fn random_node<R: Rng + ?Sized>(&self, rng: &mut R) -> NodeId {
        self.alive[rng.random_range(0..self.alive.len())]
    }

    /// Node with minimum birth order among the survivors.
    pub fn oldest(&self) -> Option<NodeId> {
        self.nodes().min_by_key(|n| n.birth_order).map(|n| n.id)
    }

    fn expect_node(&self, id: NodeId) -> &AgentNode {
        self.slots[id].as_ref().expect("live node id")
    }

    fn insert_node(&mut self, price: f64, neighbors: BTreeSet<NodeId>) -> NodeId {
        let id = self.slots.len();
        self.slots.push(None);
        self.position.push(DEAD);
        self.place_node(id, price, neighbors);
        id
    }

    /// Puts a node into slot `id` (which must be vacant) and links it.
    fn place_node(&mut self, id: NodeId, price: f64, neighbors: BTreeSet<NodeId>) {
        for &nb in &neighbors {
            self.slots[nb].as_mut().expect("neighbor is live").neighbors.insert(id);
        }
        self.slots[id] = Some(AgentNode {
            id,
            price,
            neighbors,
            birth_order: self.next_birth,
        });
        self.next_birth += 1;
        self.position[id] = self.alive.len();
        self.alive.push(id);
    }

    fn link(&mut self, a: NodeId, b: NodeId) {
        if a == b {
            return;
        }
        self.slots[a].as_mut().expect("live").neighbors.insert(b);
        self.slots[b].as_mut().expect("live").neighbors.insert(a);
    }

    /// Extreme node over `candidates`: highest price when `highest`, lowest
    /// otherwise. Ties go to the lowest id.
    fn extreme_among<I: Iterator<Item = NodeId>>(&self, candidates: I, highest: bool) -> Option<NodeId> {
        let mut best: Option<(NodeId, f64)> = None;
        for id in candidates {
            let price = self.price(id);
            best = match best {
                None => Some((id, price)),
                Some((bid, bp)) => {
                    let better = if highest { price > bp } else { price < bp };
                    if better || (price == bp && id < bid) {
                        Some((id, price))
                    } else {
                        Some((bid, bp))
                    }
                }
            };
        }
        best.map(|(id, _)| id)
    }

    /// Node ids reachable from `start` (breadth-first).
    fn component_of(&self, start: NodeId, seen: &mut [bool]) -> Vec<NodeId> {
        let mut out = vec![start];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &self.expect_node(v).neighbors {
                if !seen[w] {
                    seen[w] = true;
                    out.push(w);
                    queue.push_back(w);
                }
            }
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        if self.alive.len() <= 1 {
            return true;
        }
        let mut seen = vec![false; self.slots.len()];
        self.component_of(self.alive[0], &mut seen).len() == self.alive.len()
    }

    /// Adjacency is symmetric and refers only to live nodes.
    pub fn is_consistent(&self) -> bool {
        self.nodes().all(|n| {
            !n.neighbors.contains(&n.id)
                && n.neighbors
                    .iter()
                    .all(|&m| self.node(m).is_some_and(|o| o.neighbors.contains(&n.id)))
        })
    }
}

fn check_price(price: f64) -> Result<(), NetworkError> {
    if price.is_finite() && price > 0.0 {
        Ok(())
    } else {
        Err(NetworkError::InvalidPrice(price))
    }
}

fn check_probability(p: f64) -> Result<(), NetworkError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(NetworkError::InvalidProbability(p))
    }
}

/// Builds a network of `n` nodes by repeated [`add_node`] from one seed node
/// priced at `initial_price`. The protected first cluster is the seed and
/// its neighbors once growth completes.
pub fn init_network<R: Rng + ?Sized>(
    n: usize,
    p: f64,
    delta: f64,
    side: Side,
    initial_price: f64,
    rng: &mut R,
) -> Result<TradingNetwork, NetworkError> {
    if n == 0 {
        return Err(NetworkError::EmptyNetwork(n));
    }
    check_probability(p)?;
    let mut net = TradingNetwork::seed(side, initial_price)?;
    for _ in 1..n {
        grow(&mut net, p, delta, false, rng, None);
    }
    let seed = net.alive[0];
    let mut cluster = net.neighbors(seed).clone();
    cluster.insert(seed);
    net.first_cluster = cluster;
    Ok(net)
}

/// Adds one node following the two-branch growth rule and returns its id.
pub fn add_node<R: Rng + ?Sized>(net: &mut TradingNetwork, p: f64, delta: f64, rng: &mut R) -> NodeId {
    grow(net, p, delta, false, rng, None)
}

/// Like [`add_node`], but the newcomer never links to a first-cluster node.
/// When every node is in the first cluster the restriction is dropped.
pub fn add_node_restricted<R: Rng + ?Sized>(net: &mut TradingNetwork, p: f64, delta: f64, rng: &mut R) -> NodeId {
    grow(net, p, delta, true, rng, None)
}

/// Which growth branch fired for the most recent addition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowthBranch {
    /// Copied an anchor's neighborhood and priced at the neighborhood mean.
    Copy,
    /// Attached to the far-end node with a one-step price offset.
    Extend,
}

/// Adds a node with a forced branch instead of drawing it from `p`.
pub fn add_node_forced<R: Rng + ?Sized>(
    net: &mut TradingNetwork,
    branch: GrowthBranch,
    delta: f64,
    restricted: bool,
    rng: &mut R,
) -> NodeId {
    let p = match branch {
        GrowthBranch::Copy => 1.0,
        GrowthBranch::Extend => 0.0,
    };
    grow(net, p, delta, restricted, rng, None)
}

fn grow<R: Rng + ?Sized>(
    net: &mut TradingNetwork,
    p: f64,
    delta: f64,
    restricted: bool,
    rng: &mut R,
    reuse_id: Option<NodeId>,
) -> NodeId {
    assert!(!net.alive.is_empty(), "growth needs a nonempty network");
    let copy_branch = rng.random::<f64>() < p;

    let protected: Vec<NodeId> = if restricted {
        net.alive
            .iter()
            .copied()
            .filter(|id| !net.first_cluster.contains(id))
            .collect()
    } else {
        Vec::new()
    };
    // restriction applies only while some node lies outside the first cluster
    let restricted = !protected.is_empty() && protected.len() < net.alive.len();
    let eligible = if restricted { protected } else { net.alive.clone() };
    let excluded = |id: &NodeId| restricted && net.first_cluster.contains(id);

    let (price, neighbors) = if copy_branch {
        let anchor = eligible[rng.random_range(0..eligible.len())];
        let mut hood: BTreeSet<NodeId> = net
            .neighbors(anchor)
            .iter()
            .copied()
            .filter(|id| !excluded(id))
            .collect();
        hood.insert(anchor);
        let mean = hood.iter().map(|&id| net.price(id)).sum::<f64>() / hood.len() as f64;
        (mean, hood)
    } else {
        let highest = if delta != 0.0 {
            delta > 0.0
        } else {
            net.side == Side::Supply
        };
        let anchor = net
            .extreme_among(eligible.iter().copied(), highest)
            .expect("eligible set is nonempty");
        (net.price(anchor) * (1.0 + delta), BTreeSet::from([anchor]))
    };

    match reuse_id {
        Some(id) => {
            net.place_node(id, price, neighbors);
            id
        }
        None => net.insert_node(price, neighbors),
    }
}

/// Removes a node and its edges. If this splits the graph, each component
/// that does not hold the best offer is reattached by linking its own best
/// offer to the global best offer.
pub fn remove_node(net: &mut TradingNetwork, id: NodeId) -> Result<(), NetworkError> {
    if !net.contains(id) {
        return Err(NetworkError::UnknownNode(id));
    }
    if net.alive.len() == 1 {
        return Err(NetworkError::LastNode);
    }
    let node = net.slots[id].take().expect("checked live");
    for &nb in &node.neighbors {
        net.slots[nb].as_mut().expect("live").neighbors.remove(&id);
    }
    let pos = net.position[id];
    net.alive.swap_remove(pos);
    if pos < net.alive.len() {
        let moved = net.alive[pos];
        net.position[moved] = pos;
    }
    net.position[id] = DEAD;
    net.first_cluster.remove(&id);

    if node.neighbors.len() >= 2 {
        reattach_components(net, &node.neighbors);
    }
    Ok(())
}

fn reattach_components(net: &mut TradingNetwork, former: &BTreeSet<NodeId>) {
    let mut seen = vec![false; net.slots.len()];
    let mut components: Vec<Vec<NodeId>> = Vec::new();
    for &start in former {
        if !seen[start] {
            components.push(net.component_of(start, &mut seen));
        }
    }
    if components.len() <= 1 {
        return;
    }
    let best_side = net.side == Side::Demand;
    let best = extreme_offer(net).expect("nonempty").id;
    let main = components
        .iter()
        .position(|c| c.contains(&best))
        .expect("best offer lies in some component");
    for (k, comp) in components.iter().enumerate() {
        if k == main {
            continue;
        }
        let local = net
            .extreme_among(comp.iter().copied(), best_side)
            .expect("component is nonempty");
        net.link(local, best);
    }
}

/// With probability `beta`, the oldest surviving node leaves and re-enters
/// through [`add_node_restricted`]. It keeps its id but receives a new birth
/// order, a new neighborhood and a new price. Returns the id if it fired.
pub fn reconnect_oldest<R: Rng + ?Sized>(
    net: &mut TradingNetwork,
    beta: f64,
    p: f64,
    delta: f64,
    rng: &mut R,
) -> Option<NodeId> {
    if beta <= 0.0 || !rng.random_bool(beta.min(1.0)) || net.len() < 2 {
        return None;
    }
    let id = net.oldest()?;
    remove_node(net, id).expect("oldest is live and network has >= 2 nodes");
    grow(net, p, delta, true, rng, Some(id));
    Some(id)
}

/// Best offer: highest bid on the demand side, lowest ask on the supply
/// side; ties go to the lowest id.
pub fn extreme_offer(net: &TradingNetwork) -> Option<Offer> {
    let id = net.extreme_among(net.alive.iter().copied(), net.side == Side::Demand)?;
    Some(Offer {
        id,
        price: net.price(id),
        degree: net.degree(id),
    })
}

/// Local clustering of one node: closed triangles over wedges, 0 for
/// degree below two.
pub fn local_clustering(net: &TradingNetwork, id: NodeId) -> f64 {
    let hood = net.neighbors(id);
    let k = hood.len();
    if k < 2 {
        return 0.0;
    }
    let mut links = 0usize;
    for &a in hood {
        let na = net.neighbors(a);
        // count each pair once: only neighbors b > a
        links += hood.range(a + 1..).filter(|b| na.contains(b)).count();
    }
    links as f64 / (k * (k - 1) / 2) as f64
}

/// Mean local clustering over all nodes.
pub fn avg_clustering(net: &TradingNetwork) -> f64 {
    if net.is_empty() {
        return 0.0;
    }
    // each triangle is found once, from its lowest id, over higher-id lists
    let forward: Vec<Vec<NodeId>> = (0..net.slots.len())
        .map(|u| match &net.slots[u] {
            Some(node) => node.neighbors.range(u + 1..).copied().collect(),
            None => Vec::new(),
        })
        .collect();
    let mut triangles = vec![0usize; forward.len()];
    let mut mark = vec![false; forward.len()];
    for u in 0..forward.len() {
        for &v in &forward[u] {
            mark[v] = true;
        }
        for &v in &forward[u] {
            for &w in &forward[v] {
                if mark[w] {
                    triangles[u] += 1;
                    triangles[v] += 1;
                    triangles[w] += 1;
                }
            }
        }
        for &v in &forward[u] {
            mark[v] = false;
        }
    }
    let total: f64 = net
        .ids()
        .iter()
        .map(|&id| {
            let k = net.degree(id);
            if k < 2 {
                0.0
            } else {
                triangles[id] as f64 / (k * (k - 1) / 2) as f64
            }
        })
        .sum();
    total / net.len() as f64
}

/// Node table as CSV: `id,price,degree,birth_order`.
pub fn nodes_csv(net: &TradingNetwork) -> String {
    let mut ids: Vec<NodeId> = net.ids().to_vec();
    ids.sort_unstable();
    let mut out = String::from("id,price,degree,birth_order\n");
    for id in ids {
        let n = net.node(id).expect("live");
        let _ = writeln!(out, "{},{},{},{}", n.id, n.price, n.neighbors.len(), n.birth_order);
    }
    out
}

/// Edge list as CSV: `source,target` with `source < target`.
pub fn edges_csv(net: &TradingNetwork) -> String {
    let mut ids: Vec<NodeId> = net.ids().to_vec();
    ids.sort_unstable();
    let mut out = String::from("source,target\n");
    for a in ids {
        for &b in net.neighbors(a).range(a + 1..) {
            let _ = writeln!(out, "{a},{b}");
        }
    }
    out
}
