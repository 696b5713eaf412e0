//! ZigBee logical tree, distributed address assignment and broadcast.
//!
//! Addresses follow the distributed (Cskip) scheme with every child treated
//! as a potential router: a node at depth `d` owns a block of
//! `Cskip(d)·n_chl + 1` addresses and its `i`-th child starts at
//! `A + 1 + i·Cskip(d)`. Parent and child blocks are therefore computable
//! from an address alone.
//!
//! Two broadcast strategies run over a radio graph whose edges include the
//! tree links:
//!
//! * [`self_pruning_broadcast`] – each receiver waits a random backoff and
//!   rebroadcasts only if some neighbour is still uncovered as far as it
//!   can tell from 1-hop information and overheard packets.
//! * [`oos_select`] – deterministic level-order sweep over the tree picking
//!   forwarders that still have uncovered neighbours.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;
use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::Seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Coordinator,
    Ffd,
    Rfd,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub address: u64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: u32,
    pub role: Role,
}

/// Parent/child structure before addressing. Node 0 is the coordinator;
/// children are listed in the order they are assigned addresses.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TreeShape {
    pub children: Vec<Vec<usize>>,
    /// Optional explicit roles; by default internal nodes are FFDs and
    /// leaves RFDs.
    pub roles: Option<Vec<Role>>,
}

impl TreeShape {
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Self {
        let mut children = vec![Vec::new(); num_nodes];
        for &(p, c) in edges {
            children[p].push(c);
        }
        Self { children, roles: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZigbeeTree {
    pub n_chl: u32,
    pub d_l: u32,
    pub nodes: Vec<TreeNode>,
}

impl ZigbeeTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_by_address(&self, address: u64) -> Option<usize> {
        self.nodes.iter().position(|n| n.address == address)
    }

    /// Level by level from the coordinator, children in address order.
    pub fn level_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut queue = VecDeque::from([0usize]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut kids = self.nodes[v].children.clone();
            kids.sort_by_key(|&c| self.nodes[c].address);
            queue.extend(kids);
        }
        order
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.nodes
            .iter()
            .enumerate()
            .flat_map(|(p, n)| n.children.iter().map(move |&c| (p, c)))
            .collect()
    }
}

/// Address block stride for children of a depth-`depth` router, or `None`
/// on overflow.
pub fn cskip(depth: u32, n_chl: u32, d_l: u32) -> Option<u64> {
    if depth >= d_l {
        return Some(0);
    }
    let levels = d_l - depth;
    if n_chl == 1 {
        return Some(levels as u64);
    }
    // 1 + n + n² + … + n^(levels-1)
    let n = n_chl as u64;
    let mut acc: u64 = 0;
    let mut term: u64 = 1;
    for _ in 0..levels {
        acc = acc.checked_add(term)?;
        term = term.checked_mul(n)?;
    }
    Some(acc)
}

/// Total number of addresses in a `(n_chl, d_l)` tree.
pub fn address_space(n_chl: u32, d_l: u32) -> Option<u64> {
    if d_l == 0 {
        return Some(1);
    }
    cskip(0, n_chl, d_l)?.checked_mul(n_chl as u64)?.checked_add(1)
}

pub fn assign_addresses(shape: &TreeShape, n_chl: u32, d_l: u32) -> Result<ZigbeeTree> {
    let n = shape.children.len();
    if n == 0 {
        return Err(Error::InvalidTree("tree has no nodes".into()));
    }
    let size = address_space(n_chl, d_l)
        .ok_or_else(|| Error::InvalidTree(format!("address space overflows for n_chl={n_chl}, d_l={d_l}")))?;
    let mut nodes: Vec<Option<TreeNode>> = vec![None; n];
    nodes[0] = Some(TreeNode { address: 0, parent: None, children: Vec::new(), depth: 0, role: Role::Coordinator });
    let mut queue = VecDeque::from([0usize]);
    while let Some(p) = queue.pop_front() {
        let (p_addr, p_depth) = {
            let node = nodes[p].as_ref().expect("visited");
            (node.address, node.depth)
        };
        let kids = &shape.children[p];
        if kids.len() > n_chl as usize {
            return Err(Error::InvalidTree(format!("node {p} has {} children, limit {n_chl}", kids.len())));
        }
        if !kids.is_empty() && p_depth >= d_l {
            return Err(Error::InvalidTree(format!("node {p} at depth {p_depth} exceeds d_l = {d_l}")));
        }
        let skip = cskip(p_depth, n_chl, d_l).expect("bounded by address_space");
        for (i, &c) in kids.iter().enumerate() {
            if c >= n {
                return Err(Error::InvalidTree(format!("child index {c} out of range")));
            }
            if nodes[c].is_some() {
                return Err(Error::InvalidTree(format!("node {c} reached twice")));
            }
            nodes[c] = Some(TreeNode {
                address: p_addr + 1 + i as u64 * skip,
                parent: Some(p),
                children: Vec::new(),
                depth: p_depth + 1,
                role: Role::Ffd,
            });
            queue.push_back(c);
        }
        nodes[p].as_mut().expect("visited").children = kids.clone();
    }
    let mut nodes: Vec<TreeNode> = nodes
        .into_iter()
        .enumerate()
        .map(|(i, n)| n.ok_or_else(|| Error::InvalidTree(format!("node {i} is not reachable from the coordinator"))))
        .collect::<Result<_>>()?;
    for (i, node) in nodes.iter_mut().enumerate() {
        if i == 0 {
            continue;
        }
        node.role = match &shape.roles {
            Some(roles) => *roles.get(i).ok_or_else(|| Error::InvalidTree("role list too short".into()))?,
            None if node.children.is_empty() => Role::Rfd,
            None => Role::Ffd,
        };
        if node.role == Role::Coordinator {
            return Err(Error::InvalidTree(format!("node {i} cannot be a second coordinator")));
        }
        if node.role == Role::Rfd && !node.children.is_empty() {
            return Err(Error::InvalidTree(format!("RFD node {i} cannot have children")));
        }
    }
    debug_assert!(nodes.iter().all(|n| n.address < size));
    Ok(ZigbeeTree { n_chl, d_l, nodes })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relatives {
    pub depth: u32,
    pub parent: Option<u64>,
    /// Address block of each potential child; the child itself sits at
    /// `range.start`. Empty at maximum depth.
    pub children: Vec<Range<u64>>,
}

/// Parent and child blocks of `address`, by arithmetic alone.
pub fn identify_relatives(address: u64, n_chl: u32, d_l: u32) -> Result<Relatives> {
    let size = address_space(n_chl, d_l)
        .ok_or_else(|| Error::InvalidTree(format!("address space overflows for n_chl={n_chl}, d_l={d_l}")))?;
    if address >= size {
        return Err(Error::AddressOutOfRange { address, size });
    }
    let mut base = 0u64;
    let mut parent = None;
    let mut depth = 0u32;
    while base != address {
        let skip = cskip(depth, n_chl, d_l).expect("bounded");
        let i = (address - base - 1) / skip;
        parent = Some(base);
        base = base + 1 + i * skip;
        depth += 1;
    }
    let skip = cskip(depth, n_chl, d_l).expect("bounded");
    let children = if skip == 0 {
        Vec::new()
    } else {
        (0..n_chl as u64).map(|i| {
            let start = address + 1 + i * skip;
            start..start + skip
        })
        .collect()
    };
    Ok(Relatives { depth, parent, children })
}

/// Symmetric 1-hop radio adjacency.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RadioGraph {
    neighbors: Vec<BTreeSet<usize>>,
}

impl RadioGraph {
    pub fn new(num_nodes: usize) -> Self {
        Self { neighbors: vec![BTreeSet::new(); num_nodes] }
    }

    /// Radio graph holding every tree link plus `extra` edges.
    pub fn from_tree(tree: &ZigbeeTree, extra: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::new(tree.len());
        for (a, b) in tree.edges().into_iter().chain(extra.iter().copied()) {
            g.add_edge(a, b)?;
        }
        Ok(g)
    }

    pub fn add_edge(&mut self, a: usize, b: usize) -> Result<()> {
        if a >= self.len() || b >= self.len() || a == b {
            return Err(Error::InvalidTree(format!("bad radio edge {a}-{b}")));
        }
        self.neighbors[a].insert(b);
        self.neighbors[b].insert(a);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, x: usize) -> &BTreeSet<usize> {
        &self.neighbors[x]
    }

    pub fn contains_tree(&self, tree: &ZigbeeTree) -> bool {
        tree.edges().iter().all(|&(a, b)| self.neighbors[a].contains(&b))
    }

    pub fn is_connected(&self) -> bool {
        if self.neighbors.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &u in &self.neighbors[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    /// First reception of the packet.
    Receive,
    Transmit,
    /// Backoff expired with nothing left to cover.
    Skip,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Receive => "rx",
            Self::Transmit => "tx",
            Self::Skip => "skip",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BroadcastEvent {
    pub slot: u64,
    pub node: usize,
    pub action: Action,
    /// Nodes holding the packet after this event.
    pub covered_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BroadcastState {
    pub covered: BTreeSet<usize>,
    /// Every transmitting node, source included.
    pub forward_set: BTreeSet<usize>,
    /// Transmissions other than the source's.
    pub rebroadcast_count: usize,
    /// Nodes left uncovered (nonempty only on disconnected graphs).
    pub uncovered: BTreeSet<usize>,
    pub events: Vec<BroadcastEvent>,
}

impl BroadcastState {
    pub fn coverage(&self, num_nodes: usize) -> f64 {
        self.covered.len() as f64 / num_nodes.max(1) as f64
    }

    /// CSV `slot,node,action,covered_count`.
    pub fn write_events_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["slot", "node", "action", "covered_count"])?;
        for e in &self.events {
            w.write_record([e.slot.to_string(), e.node.to_string(), e.action.as_str().into(), e.covered_count.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_source(tree: &ZigbeeTree, radio: &RadioGraph, source: usize) -> Result<()> {
    if tree.len() != radio.len() {
        return Err(Error::InvalidTree(format!("tree has {} nodes, radio graph {}", tree.len(), radio.len())));
    }
    if source >= tree.len() {
        return Err(Error::InvalidTree(format!("source {source} not in tree")));
    }
    Ok(())
}

/// Random-backoff self-pruning broadcast.
///
/// A node first hearing the packet from `y` keeps the residual set
/// `N(x) − N(y) − {y}`, draws a backoff uniformly in `0..=max_backoff` slots
/// and removes whatever later overheard transmissions cover. At expiry it
/// transmits iff the residual is nonempty. Expiries in the same slot run in
/// address order; a transmission is heard immediately, so later nodes in
/// the same slot already see it.
pub fn self_pruning_broadcast(
    tree: &ZigbeeTree,
    radio: &RadioGraph,
    source: usize,
    max_backoff: u64,
    seed: Seed,
) -> Result<BroadcastState> {
    check_source(tree, radio, source)?;
    let n = radio.len();
    let mut rng = seed.rng();
    let mut state = BroadcastState::default();
    let mut residual: Vec<Option<BTreeSet<usize>>> = vec![None; n];
    let mut decided = vec![false; n];
    let mut timers: BTreeMap<u64, BTreeSet<(u64, usize)>> = BTreeMap::new();

    state.covered.insert(source);
    decided[source] = true;

    let mut transmit = |x: usize,
                        slot: u64,
                        state: &mut BroadcastState,
                        residual: &mut Vec<Option<BTreeSet<usize>>>,
                        decided: &[bool],
                        timers: &mut BTreeMap<u64, BTreeSet<(u64, usize)>>| {
        state.forward_set.insert(x);
        state.covered.extend(radio.neighbors(x).iter().copied());
        state.events.push(BroadcastEvent { slot, node: x, action: Action::Transmit, covered_count: state.covered.len() });
        let heard: BTreeSet<usize> = radio.neighbors(x).iter().copied().chain([x]).collect();
        for &y in radio.neighbors(x) {
            if decided[y] {
                continue;
            }
            match &mut residual[y] {
                Some(res) => res.retain(|v| !heard.contains(v)),
                slot_res @ None => {
                    let res: BTreeSet<usize> = radio.neighbors(y).difference(&heard).copied().collect();
                    *slot_res = Some(res);
                    let backoff = rng.gen_range(0..=max_backoff);
                    timers.entry(slot + 1 + backoff).or_default().insert((tree.nodes[y].address, y));
                    state.events.push(BroadcastEvent {
                        slot,
                        node: y,
                        action: Action::Receive,
                        covered_count: state.covered.len(),
                    });
                }
            }
        }
    };

    transmit(source, 0, &mut state, &mut residual, &decided, &mut timers);
    while let Some((slot, due)) = timers.pop_first() {
        for (_, x) in due {
            decided[x] = true;
            let pending = residual[x].as_ref().is_some_and(|r| !r.is_empty());
            if pending {
                transmit(x, slot, &mut state, &mut residual, &decided, &mut timers);
            } else {
                state.events.push(BroadcastEvent { slot, node: x, action: Action::Skip, covered_count: state.covered.len() });
            }
        }
    }
    state.rebroadcast_count = state.forward_set.len() - 1;
    state.uncovered = (0..n).filter(|v| !state.covered.contains(v)).collect();
    Ok(state)
}

/// Level-order forward-node selection over neighbour lists.
///
/// Returns `(forward, covered)` flags. Sweeps repeat until nothing is left
/// to cover or a sweep makes no progress (disconnected graph).
pub(crate) fn oos_core(order: &[usize], neighbors: &[Vec<usize>], source: usize) -> (Vec<bool>, Vec<bool>) {
    let n = neighbors.len();
    let mut forward = vec![false; n];
    let mut covered = vec![false; n];
    let mut remaining = n;
    let cover = |v: usize, covered: &mut Vec<bool>, remaining: &mut usize| {
        if !covered[v] {
            covered[v] = true;
            *remaining -= 1;
        }
    };
    forward[source] = true;
    cover(source, &mut covered, &mut remaining);
    for &u in &neighbors[source] {
        cover(u, &mut covered, &mut remaining);
    }
    while remaining > 0 {
        let mut progress = false;
        for &v in order {
            if forward[v] || !covered[v] {
                continue;
            }
            if neighbors[v].iter().any(|&u| !covered[u]) {
                forward[v] = true;
                progress = true;
                for &u in &neighbors[v] {
                    cover(u, &mut covered, &mut remaining);
                }
            }
        }
        if !progress {
            break;
        }
    }
    (forward, covered)
}

/// On-tree forward-node selection: sweep the tree level by level, left to
/// right, choosing every covered node that still has an uncovered neighbour.
/// The source and chosen forwarders cover their whole neighbourhood and are
/// never chosen again.
pub fn oos_select(tree: &ZigbeeTree, radio: &RadioGraph, source: usize) -> Result<BroadcastState> {
    check_source(tree, radio, source)?;
    let order = tree.level_order();
    let neighbors: Vec<Vec<usize>> = (0..radio.len()).map(|v| radio.neighbors(v).iter().copied().collect()).collect();
    let (forward, covered) = oos_core(&order, &neighbors, source);
    let forward_set: BTreeSet<usize> = (0..forward.len()).filter(|&v| forward[v]).collect();
    let covered_set: BTreeSet<usize> = (0..covered.len()).filter(|&v| covered[v]).collect();
    let uncovered = (0..covered.len()).filter(|&v| !covered[v]).collect();
    Ok(BroadcastState {
        rebroadcast_count: forward_set.len() - 1,
        covered: covered_set,
        forward_set,
        uncovered,
        events: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BroadcastSummary {
    pub trials: usize,
    pub self_pruning_mean_rebroadcasts: f64,
    pub self_pruning_coverage: f64,
    pub oos_rebroadcasts: usize,
    pub oos_coverage: f64,
}

pub fn broadcast_compare(
    tree: &ZigbeeTree,
    radio: &RadioGraph,
    source: usize,
    trials: usize,
    max_backoff: u64,
    seed: Seed,
) -> Result<BroadcastSummary> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let n = radio.len();
    let mut rebroadcasts = 0usize;
    let mut coverage = 0.0;
    for t in 0..trials {
        let sp = self_pruning_broadcast(tree, radio, source, max_backoff, seed.derive(t as u64))?;
        rebroadcasts += sp.rebroadcast_count;
        coverage += sp.coverage(n);
    }
    let oos = oos_select(tree, radio, source)?;
    Ok(BroadcastSummary {
        trials,
        self_pruning_mean_rebroadcasts: rebroadcasts as f64 / trials as f64,
        self_pruning_coverage: coverage / trials as f64,
        oos_rebroadcasts: oos.rebroadcast_count,
        oos_coverage: oos.coverage(n),
    })
}

/// Breadth-first spanning tree of `radio` from node 0, children in index
/// order, addressed with the smallest `(n_chl, d_l)` that fits.
pub fn bfs_tree(radio: &RadioGraph) -> Result<ZigbeeTree> {
    let n = radio.len();
    let mut children = vec![Vec::new(); n];
    let mut depth = vec![u32::MAX; n];
    depth[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(v) = queue.pop_front() {
        for &u in radio.neighbors(v) {
            if depth[u] == u32::MAX {
                depth[u] = depth[v] + 1;
                children[v].push(u);
                queue.push_back(u);
            }
        }
    }
    let n_chl = children.iter().map(Vec::len).max().unwrap_or(0).max(1) as u32;
    let d_l = depth.iter().copied().filter(|&d| d != u32::MAX).max().unwrap_or(0);
    assign_addresses(&TreeShape { children, roles: None }, n_chl, d_l)
}

/// Random connected geometric topology: `n` nodes uniform in the unit
/// square, radio links within `range`, tree = BFS tree from node 0.
pub fn random_topology(n: usize, range: f64, seed: Seed) -> Result<(ZigbeeTree, RadioGraph)> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one node".into()));
    }
    for attempt in 0..10_000u64 {
        let mut rng = seed.derive(attempt).rng();
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect();
        let mut radio = RadioGraph::new(n);
        for a in 0..n {
            for b in a + 1..n {
                let d = ((pts[a].0 - pts[b].0).powi(2) + (pts[a].1 - pts[b].1).powi(2)).sqrt();
                if d <= range {
                    radio.add_edge(a, b)?;
                }
            }
        }
        if !radio.is_connected() {
            continue;
        }
        if let Ok(tree) = bfs_tree(&radio) {
            return Ok((tree, radio));
        }
    }
    Err(Error::InvalidParameter(format!("no connected topology with n={n}, range={range}")))
}

/// Exhaustive comparison of OOS against the minimum forward set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardSetStudy {
    pub nodes: usize,
    /// Connected labelled graphs examined.
    pub graphs: u64,
    /// Sum of OOS forward-set sizes (source included).
    pub oos_total: u64,
    /// Sum of minimum forward-set sizes.
    pub min_total: u64,
    /// Graphs where OOS hit the minimum.
    pub optimal: u64,
    /// Worst OOS/minimum ratio, as `(oos, min)`.
    pub worst: (u64, u64),
    /// Graphs where the OOS forward set left a node uncovered.
    pub incomplete: u64,
}

impl ForwardSetStudy {
    pub fn mean_ratio(&self) -> f64 {
        self.oos_total as f64 / self.min_total as f64
    }
}

fn mask_connected(adj: &[u32], within: u32) -> bool {
    if within == 0 {
        return true;
    }
    let start = within & within.wrapping_neg();
    let mut seen = start;
    let mut frontier = start;
    while frontier != 0 {
        let v = frontier.trailing_zeros() as usize;
        frontier &= frontier - 1;
        let next = adj[v] & within & !seen;
        seen |= next;
        frontier |= next;
    }
    seen == within
}

/// Forward-set candidates containing node 0, smallest first.
fn candidate_sets(n: usize) -> Vec<u32> {
    let mut sets: Vec<u32> = (0u32..1 << (n - 1)).map(|rest| (rest << 1) | 1).collect();
    sets.sort_by_key(|s| (s.count_ones(), *s));
    sets
}

/// Size of the smallest forward set containing node 0 whose members form a
/// connected subgraph and whose closed neighbourhood covers every node.
fn min_forward_set(adj: &[u32], candidates: &[u32], full: u32) -> u32 {
    for &set in candidates {
        let mut cover = set;
        let mut s = set;
        while s != 0 {
            let v = s.trailing_zeros() as usize;
            s &= s - 1;
            cover |= adj[v];
        }
        if cover == full && mask_connected(adj, set) {
            return set.count_ones();
        }
    }
    full.count_ones()
}

fn study_range(nodes: usize, pairs: &[(usize, usize)], edge_sets: std::ops::Range<u64>) -> ForwardSetStudy {
    let mut study = ForwardSetStudy { nodes, graphs: 0, oos_total: 0, min_total: 0, optimal: 0, worst: (1, 1), incomplete: 0 };
    let full = (1u32 << nodes) - 1;
    let candidates = candidate_sets(nodes);
    let mut adj = vec![0u32; nodes];
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    let mut order = Vec::with_capacity(nodes);
    for edges in edge_sets {
        adj.iter_mut().for_each(|a| *a = 0);
        for (i, &(a, b)) in pairs.iter().enumerate() {
            if edges >> i & 1 == 1 {
                adj[a] |= 1 << b;
                adj[b] |= 1 << a;
            }
        }
        if !mask_connected(&adj, full) {
            continue;
        }
        for (v, list) in neighbors.iter_mut().enumerate() {
            list.clear();
            list.extend((0..nodes).filter(|&u| adj[v] >> u & 1 == 1));
        }
        // BFS from 0 with children in index order is exactly the level order
        // of the BFS tree.
        order.clear();
        let mut seen = 1u32;
        order.push(0);
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            head += 1;
            for &u in &neighbors[v] {
                if seen >> u & 1 == 0 {
                    seen |= 1 << u;
                    order.push(u);
                }
            }
        }
        let (forward, covered) = oos_core(&order, &neighbors, 0);
        if covered.iter().any(|&c| !c) {
            study.incomplete += 1;
        }
        let oos = forward.iter().filter(|&&f| f).count() as u64;
        let min = min_forward_set(&adj, &candidates, full) as u64;
        study.graphs += 1;
        study.oos_total += oos;
        study.min_total += min;
        if oos == min {
            study.optimal += 1;
        }
        if oos * study.worst.1 > study.worst.0 * min {
            study.worst = (oos, min);
        }
    }
    study
}

/// Enumerates every connected labelled graph on `nodes` vertices with
/// source 0 and the BFS tree from node 0, comparing OOS with brute force.
/// Work is split across threads; the result does not depend on the split.
pub fn forward_set_study(nodes: usize) -> ForwardSetStudy {
    assert!((2..=8).contains(&nodes), "exhaustive study supports 2..=8 nodes");
    let pairs: Vec<(usize, usize)> = (0..nodes).flat_map(|a| (a + 1..nodes).map(move |b| (a, b))).collect();
    let total = 1u64 << pairs.len();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()) as u64;
    let chunks = if total < 1 << 12 { 1 } else { workers * 4 };
    let bounds: Vec<u64> = (0..=chunks).map(|i| total * i / chunks).collect();
    let parts: Vec<ForwardSetStudy> = std::thread::scope(|s| {
        let pairs = &pairs;
        let mut handles = Vec::new();
        for w in 0..workers.min(chunks) {
            let bounds = &bounds;
            handles.push(s.spawn(move || {
                (w..chunks)
                    .step_by(workers as usize)
                    .map(|c| (c, study_range(nodes, pairs, bounds[c as usize]..bounds[c as usize + 1])))
                    .collect::<Vec<_>>()
            }));
        }
        let mut all: Vec<(u64, ForwardSetStudy)> =
            handles.into_iter().flat_map(|h| h.join().expect("study worker panicked")).collect();
        all.sort_by_key(|(c, _)| *c);
        all.into_iter().map(|(_, p)| p).collect()
    });
    let mut study = ForwardSetStudy { nodes, graphs: 0, oos_total: 0, min_total: 0, optimal: 0, worst: (1, 1), incomplete: 0 };
    for p in parts {
        study.graphs += p.graphs;
        study.oos_total += p.oos_total;
        study.min_total += p.min_total;
        study.optimal += p.optimal;
        study.incomplete += p.incomplete;
        // strict comparison keeps the first worst case in enumeration order
        if p.worst.0 * study.worst.1 > study.worst.0 * p.worst.1 {
            study.worst = p.worst;
        }
    }
    study
}

/// Topology file: `[tree]` lines `parent child`, `[radio]` lines `a b`, and
/// an optional `[params]` section with `n_chl`, `d_l` and `source`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub tree: ZigbeeTree,
    pub radio: RadioGraph,
    pub source: usize,
}

impl Topology {
    pub fn parse(text: &str) -> Result<Self> {
        let mut section = String::new();
        let mut tree_edges = Vec::new();
        let mut radio_edges = Vec::new();
        let mut params: BTreeMap<String, u64> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let cfg_err = |msg: String| Error::Config { line: line_no, msg };
            match section.as_str() {
                "params" => {
                    let (k, v) = line.split_once('=').ok_or_else(|| cfg_err(format!("expected key = value: `{line}`")))?;
                    let v = v.trim().parse().map_err(|e| cfg_err(format!("{k}: {e}")))?;
                    params.insert(k.trim().to_string(), v);
                }
                "tree" | "radio" => {
                    let mut it = line.split_whitespace().map(str::parse::<usize>);
                    let (Some(Ok(a)), Some(Ok(b)), None) = (it.next(), it.next(), it.next()) else {
                        return Err(cfg_err(format!("expected two node indices: `{line}`")));
                    };
                    if section == "tree" {
                        tree_edges.push((a, b));
                    } else {
                        radio_edges.push((a, b));
                    }
                }
                other => return Err(cfg_err(format!("line outside a known section [{other}]"))),
            }
        }
        let num_nodes = tree_edges
            .iter()
            .chain(&radio_edges)
            .flat_map(|&(a, b)| [a, b])
            .max()
            .map_or(1, |m| m + 1);
        let shape = TreeShape::from_edges(num_nodes, &tree_edges);
        let n_chl = match params.get("n_chl") {
            Some(&v) => v as u32,
            None => shape.children.iter().map(Vec::len).max().unwrap_or(1).max(1) as u32,
        };
        let d_l = match params.get("d_l") {
            Some(&v) => v as u32,
            None => tree_depth(&shape),
        };
        let tree = assign_addresses(&shape, n_chl, d_l)?;
        let radio = RadioGraph::from_tree(&tree, &radio_edges)?;
        let source = params.get("source").copied().unwrap_or(0) as usize;
        if source >= num_nodes {
            return Err(Error::InvalidTree(format!("source {source} not in topology")));
        }
        Ok(Self { tree, radio, source })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("[params]\nn_chl = {}\nd_l = {}\nsource = {}\n\n[tree]\n", self.tree.n_chl, self.tree.d_l, self.source);
        for (p, c) in self.tree.edges() {
            s.push_str(&format!("{p} {c}\n"));
        }
        s.push_str("\n[radio]\n");
        let tree_edges: BTreeSet<(usize, usize)> = self.tree.edges().into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
        for e in self.radio.edges() {
            if !tree_edges.contains(&e) {
                s.push_str(&format!("{} {}\n", e.0, e.1));
            }
        }
        s
    }
}

fn tree_depth(shape: &TreeShape) -> u32 {
    let mut best = 0;
    let mut stack = vec![(0usize, 0u32)];
    let mut guard = 0;
    while let Some((v, d)) = stack.pop() {
        guard += 1;
        if guard > shape.children.len() * 2 + 2 {
            break;
        }
        best = best.max(d);
        stack.extend(shape.children[v].iter().map(|&c| (c, d + 1)));
    }
    best
}
