//! Chimera hardware graphs, minor embeddings and embedded Ising models.
//!
//! Qubit ids follow row-major cell order and shore-major order inside a cell:
//! `id = ((row * cols + col) * 2 + side) * shore + k`. Side `0` qubits couple
//! to the same qubit of the cells above and below, side `1` qubits to the
//! cells left and right, and every side-0 qubit of a cell couples to every
//! side-1 qubit of the same cell.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::formulation::IsingModel;
use crate::rng::{self, StreamRng};

/// Coupler range of the reference device.
pub const DEVICE_J_RANGE: f64 = 1.0;
/// Bias range of the reference device.
pub const DEVICE_H_RANGE: f64 = 2.0;

/// A Chimera graph with optional faulty (inactive) qubits.
#[derive(Debug, Clone)]
pub struct HardwareGraph {
    pub rows: usize,
    pub cols: usize,
    pub shore: usize,
    pub faults: BTreeSet<usize>,
    active: Vec<bool>,
    adjacency: Vec<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HardwareGraphFile {
    rows: usize,
    cols: usize,
    shore: usize,
    faults: Vec<usize>,
}

/// Standard Chimera adjacency minus faulty qubits and their couplers.
pub fn build_chimera(rows: usize, cols: usize, shore: usize, faults: &BTreeSet<usize>) -> Result<HardwareGraph> {
    if rows == 0 || cols == 0 || shore == 0 {
        return param(format!("chimera dimensions must be positive, got {rows}x{cols}x{shore}"));
    }
    let total = rows * cols * 2 * shore;
    let mut active = vec![true; total];
    for &f in faults {
        if f < total {
            active[f] = false;
        }
    }
    let mut g = HardwareGraph {
        rows,
        cols,
        shore,
        faults: faults.iter().copied().filter(|&f| f < total).collect(),
        active,
        adjacency: vec![Vec::new(); total],
    };
    let link = |g: &mut HardwareGraph, a: usize, b: usize| {
        if g.active[a] && g.active[b] {
            g.adjacency[a].push(b);
            g.adjacency[b].push(a);
        }
    };
    for r in 0..rows {
        for c in 0..cols {
            for k in 0..shore {
                for k2 in 0..shore {
                    link(&mut g, g_id(rows, cols, shore, r, c, 0, k), g_id(rows, cols, shore, r, c, 1, k2));
                }
                if r + 1 < rows {
                    link(&mut g, g_id(rows, cols, shore, r, c, 0, k), g_id(rows, cols, shore, r + 1, c, 0, k));
                }
                if c + 1 < cols {
                    link(&mut g, g_id(rows, cols, shore, r, c, 1, k), g_id(rows, cols, shore, r, c + 1, 1, k));
                }
            }
        }
    }
    for adj in &mut g.adjacency {
        adj.sort_unstable();
    }
    Ok(g)
}

fn g_id(_rows: usize, cols: usize, shore: usize, r: usize, c: usize, side: usize, k: usize) -> usize {
    ((r * cols + c) * 2 + side) * shore + k
}

impl HardwareGraph {
    pub fn qubit(&self, row: usize, col: usize, side: usize, k: usize) -> usize {
        g_id(self.rows, self.cols, self.shore, row, col, side, k)
    }

    /// `(row, col, side, k)` of a qubit id.
    pub fn coords(&self, q: usize) -> (usize, usize, usize, usize) {
        let k = q % self.shore;
        let rest = q / self.shore;
        let side = rest % 2;
        let cell = rest / 2;
        (cell / self.cols, cell % self.cols, side, k)
    }

    pub fn cell_of(&self, q: usize) -> (usize, usize) {
        let (r, c, _, _) = self.coords(q);
        (r, c)
    }

    pub fn total_qubits(&self) -> usize {
        self.active.len()
    }

    pub fn is_active(&self, q: usize) -> bool {
        self.active.get(q).copied().unwrap_or(false)
    }

    pub fn active_qubits(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.active.len()).filter(|&q| self.active[q])
    }

    pub fn num_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn neighbors(&self, q: usize) -> &[usize] {
        &self.adjacency[q]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a < self.adjacency.len() && self.adjacency[a].binary_search(&b).is_ok()
    }

    /// Couplers as `(a, b)` with `a < b`, ascending.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, adj) in self.adjacency.iter().enumerate() {
            out.extend(adj.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn to_json(&self) -> Result<String> {
        let f = HardwareGraphFile {
            rows: self.rows,
            cols: self.cols,
            shore: self.shore,
            faults: self.faults.iter().copied().collect(),
        };
        Ok(serde_json::to_string_pretty(&f)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: HardwareGraphFile = serde_json::from_str(text)?;
        build_chimera(f.rows, f.cols, f.shore, &f.faults.into_iter().collect())
    }
}

/// Logical spin `i` is represented by the physical qubits `chains[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Embedding {
    pub chains: Vec<Vec<usize>>,
}

impl Embedding {
    pub fn new(mut chains: Vec<Vec<usize>>) -> Self {
        for c in &mut chains {
            c.sort_unstable();
            c.dedup();
        }
        Self { chains }
    }

    pub fn num_logical(&self) -> usize {
        self.chains.len()
    }

    pub fn num_physical(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    /// Distinct unit cells touched by any chain.
    pub fn cells_used(&self, g: &HardwareGraph) -> usize {
        self.chains
            .iter()
            .flatten()
            .map(|&q| g.cell_of(q))
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Checks disjointness, activity, chain connectivity and coverage of every
    /// logical edge by at least one coupler.
    pub fn validate(&self, g: &HardwareGraph, logical_edges: &[(usize, usize)]) -> Result<()> {
        let mut owner = BTreeMap::new();
        for (i, chain) in self.chains.iter().enumerate() {
            if chain.is_empty() {
                return Err(Error::EmbeddingMismatch(format!("chain {i} is empty")));
            }
            for &q in chain {
                if !g.is_active(q) {
                    return Err(Error::EmbeddingMismatch(format!("chain {i} uses inactive qubit {q}")));
                }
                if let Some(j) = owner.insert(q, i) {
                    return Err(Error::EmbeddingMismatch(format!("qubit {q} shared by chains {j} and {i}")));
                }
            }
            if !is_connected(chain, g) {
                return Err(Error::EmbeddingMismatch(format!("chain {i} is not connected")));
            }
        }
        for &(a, b) in logical_edges {
            if a >= self.chains.len() || b >= self.chains.len() {
                return Err(Error::EmbeddingMismatch(format!("logical edge ({a}, {b}) has no chain")));
            }
            if chain_coupler(&self.chains[a], &self.chains[b], g).is_none() {
                return Err(Error::EmbeddingMismatch(format!("no coupler between chains {a} and {b}")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let map: BTreeMap<usize, &Vec<usize>> = self.chains.iter().enumerate().collect();
        Ok(serde_json::to_string_pretty(&map)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<usize, Vec<usize>> = serde_json::from_str(text)?;
        if map.keys().enumerate().any(|(i, &k)| i != k) {
            return Err(Error::Parse("embedding keys must be 0..n without gaps".into()));
        }
        Ok(Self::new(map.into_values().collect()))
    }
}

fn is_connected(chain: &[usize], g: &HardwareGraph) -> bool {
    let members: BTreeSet<usize> = chain.iter().copied().collect();
    let mut seen = BTreeSet::from([chain[0]]);
    let mut queue = VecDeque::from([chain[0]]);
    while let Some(q) = queue.pop_front() {
        for &p in g.neighbors(q) {
            if members.contains(&p) && seen.insert(p) {
                queue.push_back(p);
            }
        }
    }
    seen.len() == members.len()
}

/// Lowest `(min, max)` qubit pair joining two chains.
fn chain_coupler(a: &[usize], b: &[usize], g: &HardwareGraph) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    for &p in a {
        for &q in b {
            if g.has_edge(p, q) {
                let e = (p.min(q), p.max(q));
                if best.is_none_or(|cur| e < cur) {
                    best = Some(e);
                }
            }
        }
    }
    best
}

/// Edges of the complete graph on `n` vertices.
pub fn complete_graph_edges(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// Chain length of the clique template for `n` logical spins.
pub fn clique_chain_length(n: usize, shore: usize) -> usize {
    n.div_ceil(shore) + 1
}

/// Triangle clique template: with `c = ⌈n/L⌉` groups, chain `(grp, k)` runs
/// along the side-1 shore of row `grp` over columns `0..=grp` and along the
/// side-0 shore of column `grp` over rows `grp..c`, meeting in cell
/// `(grp, grp)`. Every chain has length `c + 1` and the template occupies the
/// `c(c+1)/2` cells on and below the diagonal of a `c × c` block. Chains
/// touching a faulty qubit are skipped; the block is moved over the graph in
/// row-major order until `n` intact chains are found.
pub fn clique_embed(n: usize, g: &HardwareGraph) -> Result<Embedding> {
    if n == 0 {
        return param("cannot embed an empty clique");
    }
    let c = n.div_ceil(g.shore);
    if c > g.rows || c > g.cols {
        return Err(Error::EmbeddingInfeasible {
            reason: format!("K_{n} needs a {c}x{c} cell block, graph is {}x{}", g.rows, g.cols),
            attempts: 0,
        });
    }
    let mut attempts = 0;
    for r0 in 0..=g.rows - c {
        for c0 in 0..=g.cols - c {
            attempts += 1;
            let mut chains = Vec::with_capacity(n);
            'chains: for grp in 0..c {
                for k in 0..g.shore {
                    let mut chain = Vec::with_capacity(c + 1);
                    for j in 0..=grp {
                        chain.push(g.qubit(r0 + grp, c0 + j, 1, k));
                    }
                    for i in grp..c {
                        chain.push(g.qubit(r0 + i, c0 + grp, 0, k));
                    }
                    if chain.iter().all(|&q| g.is_active(q)) {
                        chains.push(chain);
                        if chains.len() == n {
                            break 'chains;
                        }
                    }
                }
            }
            if chains.len() == n {
                return Ok(Embedding::new(chains));
            }
        }
    }
    Err(Error::EmbeddingInfeasible {
        reason: format!("faults block every placement of the K_{n} template"),
        attempts,
    })
}

/// Tuning knobs of [`randomized_embed`].
#[derive(Debug, Clone, Copy)]
pub struct RandomizedEmbedParams {
    pub seed: u64,
    pub max_tries: usize,
    /// Rip-up-and-reroute rounds per attempt.
    pub max_rounds: usize,
    /// Extra rounds spent shortening chains once no qubit is shared.
    pub polish_rounds: usize,
    /// An attempt is abandoned after this many rounds without a new lowest overlap.
    pub stall_rounds: usize,
}

impl RandomizedEmbedParams {
    pub fn new(seed: u64, max_tries: usize) -> Self {
        Self {
            seed,
            max_tries,
            max_rounds: 20,
            polish_rounds: 2,
            stall_rounds: 6,
        }
    }
}

/// Compressed adjacency of the active qubits, shared by every attempt.
struct Csr {
    start: Vec<u32>,
    targets: Vec<u32>,
    active: Vec<usize>,
}

impl Csr {
    fn new(g: &HardwareGraph) -> Self {
        let mut start = Vec::with_capacity(g.total_qubits() + 1);
        let mut targets = Vec::new();
        start.push(0);
        for q in 0..g.total_qubits() {
            targets.extend(g.neighbors(q).iter().map(|&p| p as u32));
            start.push(targets.len() as u32);
        }
        Self {
            start,
            targets,
            active: g.active_qubits().collect(),
        }
    }

    fn neighbors(&self, q: usize) -> &[u32] {
        &self.targets[self.start[q] as usize..self.start[q + 1] as usize]
    }
}

/// Ceiling on a qubit weight; saturated weights still compare as very expensive.
const MAX_WEIGHT: u64 = 1 << 48;

/// Monotone priority queue for integer distances: a ring of unit-width
/// buckets covering the next `RING` distances, plus a heap for jumps past it.
struct BucketQueue {
    ring: Vec<Vec<u32>>,
    in_ring: usize,
    cur: u64,
    far: BinaryHeap<Reverse<(u64, u32)>>,
}

const RING: u64 = 1024;

impl BucketQueue {
    fn new() -> Self {
        Self {
            ring: vec![Vec::new(); RING as usize],
            in_ring: 0,
            cur: 0,
            far: BinaryHeap::new(),
        }
    }

    fn push(&mut self, d: u64, q: u32) {
        debug_assert!(d >= self.cur);
        if d - self.cur < RING {
            self.ring[(d % RING) as usize].push(q);
            self.in_ring += 1;
        } else {
            self.far.push(Reverse((d, q)));
        }
    }

    fn pop(&mut self) -> Option<(u64, u32)> {
        loop {
            if let Some(q) = self.ring[(self.cur % RING) as usize].pop() {
                self.in_ring -= 1;
                return Some((self.cur, q));
            }
            if self.in_ring == 0 {
                let Reverse((d, _)) = *self.far.peek()?;
                self.cur = d;
            } else {
                self.cur += 1;
            }
            while let Some(&Reverse((d, q))) = self.far.peek() {
                if d - self.cur >= RING {
                    break;
                }
                self.far.pop();
                self.ring[(d % RING) as usize].push(q);
                self.in_ring += 1;
            }
        }
    }
}

struct Router<'a> {
    csr: &'a Csr,
    adj: Vec<Vec<usize>>,
    chains: Vec<Vec<usize>>,
    usage: Vec<u32>,
    /// Rounds each qubit has spent shared; raises its cost so stalemates break.
    history: Vec<u64>,
}

impl Router<'_> {
    fn weight(&self, q: usize, base: u64) -> u64 {
        base.saturating_pow(self.usage[q]).saturating_mul(1 + self.history[q]).min(MAX_WEIGHT)
    }

    fn bump_history(&mut self, base: u64) {
        for (h, &u) in self.history.iter_mut().zip(&self.usage) {
            if u > 1 {
                *h += base;
            }
        }
    }

    /// Node-weighted shortest paths from `sources`; entering qubit `q` costs `weights[q]`.
    fn dijkstra(&self, sources: &[usize], weights: &[u64]) -> (Vec<u64>, Vec<u32>) {
        let total = weights.len();
        let mut dist = vec![u64::MAX; total];
        let mut parent = vec![u32::MAX; total];
        let mut queue = BucketQueue::new();
        for &s in sources {
            dist[s] = 0;
            queue.push(0, s as u32);
        }
        while let Some((d, q)) = queue.pop() {
            let q = q as usize;
            if d > dist[q] {
                continue;
            }
            for &p in self.csr.neighbors(q) {
                let nd = d.saturating_add(weights[p as usize]);
                if nd < dist[p as usize] {
                    dist[p as usize] = nd;
                    parent[p as usize] = q as u32;
                    queue.push(nd, p);
                }
            }
        }
        (dist, parent)
    }

    fn remove(&mut self, v: usize) {
        for &q in &self.chains[v] {
            self.usage[q] -= 1;
        }
        self.chains[v].clear();
    }

    fn insert(&mut self, v: usize, chain: Vec<usize>) {
        for &q in &chain {
            self.usage[q] += 1;
        }
        self.chains[v] = chain;
    }

    /// Routes a chain for `v` that touches every placed neighbor chain. The
    /// root minimizes the summed distance to all neighbor chains, so a shared
    /// root pays its weight once per neighbor.
    fn route(&self, v: usize, base: u64, rng: &mut StreamRng) -> Option<Vec<usize>> {
        let placed: Vec<usize> = self.adj[v]
            .iter()
            .copied()
            .filter(|&u| !self.chains[u].is_empty())
            .collect();
        let candidates = &self.csr.active;
        if placed.is_empty() {
            let least = candidates.iter().map(|&q| self.usage[q]).min()?;
            let free: Vec<usize> = candidates.iter().copied().filter(|&q| self.usage[q] == least).collect();
            return free.choose(rng).map(|&q| vec![q]);
        }
        let weights: Vec<u64> = (0..self.usage.len()).map(|q| self.weight(q, base)).collect();
        let trees: Vec<(Vec<u64>, Vec<u32>)> = placed
            .iter()
            .map(|&u| self.dijkstra(&self.chains[u], &weights))
            .collect();
        let mut best = u64::MAX;
        let mut roots = Vec::new();
        for &q in candidates {
            let w = weights[q];
            let cost = trees.iter().fold(0u64, |acc, (dist, _)| {
                let d = dist[q];
                acc.saturating_add(if d == 0 { w } else { d })
            });
            if cost == u64::MAX {
                continue;
            }
            match cost.cmp(&best) {
                std::cmp::Ordering::Less => {
                    best = cost;
                    roots.clear();
                    roots.push(q);
                }
                std::cmp::Ordering::Equal => roots.push(q),
                std::cmp::Ordering::Greater => {}
            }
        }
        let root = *roots.choose(rng)?;
        let mut chain = BTreeSet::from([root]);
        for (k, (dist, parent)) in trees.iter().enumerate() {
            let target = &self.chains[placed[k]];
            let mut q = root;
            while dist[q] != 0 {
                chain.insert(q);
                q = parent[q] as usize;
            }
            debug_assert!(target.contains(&q));
        }
        Some(chain.into_iter().collect())
    }

    /// Other chains holding any qubit of chain `v`.
    fn sharing(&self, v: usize) -> Vec<usize> {
        let shared: Vec<usize> = self.chains[v].iter().copied().filter(|&q| self.usage[q] > 1).collect();
        if shared.is_empty() {
            return Vec::new();
        }
        (0..self.chains.len())
            .filter(|&u| u != v && self.chains[u].iter().any(|q| shared.contains(q)))
            .collect()
    }

    fn overlap(&self) -> u32 {
        self.usage.iter().map(|&u| u.saturating_sub(1)).sum()
    }
}

/// Randomized-placement, shortest-path minor embedding in the style of
/// Cai, Macready and Roy: chains are placed in random order, then repeatedly
/// ripped up and rerouted with qubit weights growing exponentially in their
/// current usage, and linearly in how long they have been shared, until no
/// qubit is shared.
pub fn randomized_embed(
    logical_edges: &[(usize, usize)],
    g: &HardwareGraph,
    params: &RandomizedEmbedParams,
) -> Result<Embedding> {
    if logical_edges.is_empty() {
        return param("logical graph has no edges");
    }
    let n = logical_edges.iter().map(|&(a, b)| a.max(b)).max().unwrap_or(0) + 1;
    let mut adj = vec![BTreeSet::new(); n];
    for &(a, b) in logical_edges {
        if a == b {
            return param(format!("logical self-loop on {a}"));
        }
        adj[a].insert(b);
        adj[b].insert(a);
    }
    let adj: Vec<Vec<usize>> = adj.into_iter().map(|s| s.into_iter().collect()).collect();
    let base = (2 * (g.rows + g.cols) * g.shore) as u64;
    let csr = Csr::new(g);
    for attempt in 0..params.max_tries {
        let mut rng = rng::substream(params.seed, attempt as u64);
        let mut router = Router {
            csr: &csr,
            adj: adj.clone(),
            chains: vec![Vec::new(); n],
            usage: vec![0; g.total_qubits()],
            history: vec![0; g.total_qubits()],
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut ok = true;
        for &v in &order {
            match router.route(v, base, &mut rng) {
                Some(chain) => router.insert(v, chain),
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let mut clean_rounds = 0;
        let mut best_overlap = u32::MAX;
        let mut stalled = 0;
        for _ in 0..params.max_rounds {
            let overlap = router.overlap();
            if overlap == 0 {
                clean_rounds += 1;
                if clean_rounds > params.polish_rounds {
                    break;
                }
            } else if overlap < best_overlap {
                best_overlap = overlap;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled >= params.stall_rounds {
                    break;
                }
            }
            router.bump_history(base);
            order.shuffle(&mut rng);
            for &v in &order {
                let was_clean = router.overlap() == 0;
                // Chains that share a qubit with `v` are ripped up with it, so
                // that two chains stacked on one hub cannot pin each other.
                let mut group = vec![v];
                group.extend(router.sharing(v));
                let old: Vec<Vec<usize>> = group.iter().map(|&u| router.chains[u].clone()).collect();
                let old_len: usize = old.iter().map(Vec::len).sum();
                for &u in &group {
                    router.remove(u);
                }
                let mut routed = true;
                for &u in &group {
                    match router.route(u, base, &mut rng) {
                        Some(chain) => router.insert(u, chain),
                        None => {
                            routed = false;
                            break;
                        }
                    }
                }
                let new_len: usize = group.iter().map(|&u| router.chains[u].len()).sum();
                // Once clean, only accept reroutes that stay clean and do not grow.
                if !routed || (was_clean && (router.overlap() > 0 || new_len > old_len)) {
                    for &u in &group {
                        router.remove(u);
                    }
                    for (&u, chain) in group.iter().zip(old) {
                        router.insert(u, chain);
                    }
                }
            }
        }
        if router.overlap() == 0 {
            let emb = Embedding::new(router.chains);
            if emb.validate(g, logical_edges).is_ok() {
                return Ok(emb);
            }
        }
    }
    Err(Error::EmbeddingInfeasible {
        reason: format!("no overlap-free embedding of {n} logical spins found"),
        attempts: params.max_tries,
    })
}

/// Mean, sample variance (divisor `n − 1`) and maximum of chain lengths.
pub fn chain_stats(emb: &Embedding) -> Result<(f64, f64, usize)> {
    let lens: Vec<f64> = emb.chains.iter().map(|c| c.len() as f64).collect();
    if lens.is_empty() {
        return param("embedding has no chains");
    }
    let n = lens.len() as f64;
    let mean = lens.iter().sum::<f64>() / n;
    let var = if lens.len() > 1 {
        lens.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let max = emb.chains.iter().map(Vec::len).max().unwrap_or(0);
    Ok((mean, var, max))
}

/// One physical coupler of an embedded model, between local qubit indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupler {
    pub a: usize,
    pub b: usize,
    pub value: f64,
    pub intra_chain: bool,
}

/// A logical Ising model mapped onto hardware qubits.
///
/// Physical energy is `Σ h_q s_q + Σ J_pq s_p s_q` over [`Self::qubits`]; the
/// logical offset is carried separately in [`Self::offset`].
#[derive(Debug, Clone)]
pub struct EmbeddedIsing {
    /// Physical ids of the embedded qubits, ascending. Local index `i` refers to `qubits[i]`.
    pub qubits: Vec<usize>,
    pub h: Vec<f64>,
    pub couplers: Vec<Coupler>,
    pub chain_strength: f64,
    pub rescale: f64,
    pub embedding: Embedding,
    pub offset: f64,
    /// `chains_local[i]` lists local qubit indices of logical spin `i`.
    pub chains_local: Vec<Vec<usize>>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl EmbeddedIsing {
    pub fn num_qubits(&self) -> usize {
        self.qubits.len()
    }

    pub fn local_index(&self, physical: usize) -> Option<usize> {
        self.qubits.binary_search(&physical).ok()
    }

    pub fn physical_h(&self) -> BTreeMap<usize, f64> {
        self.qubits.iter().copied().zip(self.h.iter().copied()).collect()
    }

    pub fn physical_j(&self) -> BTreeMap<(usize, usize), f64> {
        self.couplers
            .iter()
            .map(|c| ((self.qubits[c.a], self.qubits[c.b]), c.value))
            .collect()
    }

    /// `(neighbor, coupling)` pairs of a local qubit.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// Energy of physical spins indexed by local qubit index.
    pub fn energy(&self, spins: &[i8]) -> f64 {
        let mut e = 0.0;
        for (i, &h) in self.h.iter().enumerate() {
            e += h * f64::from(spins[i]);
        }
        for c in &self.couplers {
            e += c.value * f64::from(spins[c.a] * spins[c.b]);
        }
        e
    }

    /// Factor by which the programmed model must be divided to fit the
    /// device ranges `|J| ≤ 1` and `|h| ≤ 2`; at least 1.
    pub fn device_scale(&self) -> f64 {
        let j = self.couplers.iter().fold(0.0, |m: f64, c| m.max(c.value.abs()));
        let h = self.h.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
        (j / DEVICE_J_RANGE).max(h / DEVICE_H_RANGE).max(1.0)
    }

    /// Energy carried by intra-chain couplers when every chain is aligned.
    pub fn chain_energy_constant(&self) -> f64 {
        self.couplers.iter().filter(|c| c.intra_chain).map(|c| c.value).sum()
    }

    /// Energy of the non-chain part of a state: all biases plus inter-chain couplers.
    pub fn inter_chain_energy(&self, spins: &[i8]) -> f64 {
        let mut e = 0.0;
        for (i, &h) in self.h.iter().enumerate() {
            e += h * f64::from(spins[i]);
        }
        for c in self.couplers.iter().filter(|c| !c.intra_chain) {
            e += c.value * f64::from(spins[c.a] * spins[c.b]);
        }
        e
    }

    /// Physical state with every chain set to its logical spin.
    pub fn spread(&self, logical: &[i8]) -> Vec<i8> {
        let mut out = vec![1; self.qubits.len()];
        for (i, chain) in self.chains_local.iter().enumerate() {
            for &q in chain {
                out[q] = logical[i];
            }
        }
        out
    }

    pub(crate) fn rebuild_neighbors(&mut self) {
        let mut nb = vec![Vec::new(); self.qubits.len()];
        for c in &self.couplers {
            nb[c.a].push((c.b, c.value));
            nb[c.b].push((c.a, c.value));
        }
        self.neighbors = nb;
    }
}

/// Maps a logical model onto hardware: couplings are scaled by
/// `1 / max|J|` and placed on the lowest coupler between the two chains, each
/// scaled bias is split equally over its chain, and every coupler inside a
/// chain carries `chain_strength`.
pub fn embed_ising(
    model: &IsingModel,
    emb: &Embedding,
    g: &HardwareGraph,
    chain_strength: f64,
) -> Result<EmbeddedIsing> {
    if emb.num_logical() != model.n() {
        return Err(Error::EmbeddingMismatch(format!(
            "embedding has {} chains, model has {} spins",
            emb.num_logical(),
            model.n()
        )));
    }
    let edges = model.edges();
    let pairs: Vec<(usize, usize)> = edges.iter().map(|&(i, j, _)| (i, j)).collect();
    emb.validate(g, &pairs)?;
    let j_max = model.max_abs_coupling();
    let rescale = if j_max > 0.0 { 1.0 / j_max } else { 1.0 };

    let qubits: Vec<usize> = {
        let mut q: Vec<usize> = emb.chains.iter().flatten().copied().collect();
        q.sort_unstable();
        q
    };
    let local = |p: usize| qubits.binary_search(&p).expect("embedded qubit");
    let chains_local: Vec<Vec<usize>> = emb
        .chains
        .iter()
        .map(|c| c.iter().map(|&p| local(p)).collect())
        .collect();

    let mut h = vec![0.0; qubits.len()];
    for (i, chain) in chains_local.iter().enumerate() {
        let share = model.h[i] * rescale / chain.len() as f64;
        for &q in chain {
            h[q] = share;
        }
    }

    let mut couplers = Vec::new();
    for chain in &emb.chains {
        for (x, &p) in chain.iter().enumerate() {
            for &q in &chain[x + 1..] {
                if g.has_edge(p, q) {
                    couplers.push(Coupler {
                        a: local(p),
                        b: local(q),
                        value: chain_strength,
                        intra_chain: true,
                    });
                }
            }
        }
    }
    for &(i, j, value) in &edges {
        let (p, q) = chain_coupler(&emb.chains[i], &emb.chains[j], g)
            .ok_or_else(|| Error::EmbeddingMismatch(format!("no coupler between chains {i} and {j}")))?;
        couplers.push(Coupler {
            a: local(p),
            b: local(q),
            value: value * rescale,
            intra_chain: false,
        });
    }
    couplers.sort_by_key(|c| (c.a, c.b));

    let mut out = EmbeddedIsing {
        qubits,
        h,
        couplers,
        chain_strength,
        rescale,
        embedding: emb.clone(),
        offset: model.offset,
        chains_local,
        neighbors: Vec::new(),
    };
    out.rebuild_neighbors();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::full_spectrum;
    use rand::Rng;

    fn fault_free(r: usize, c: usize) -> HardwareGraph {
        build_chimera(r, c, 4, &BTreeSet::new()).unwrap()
    }

    #[test]
    fn chimera_sizes() {
        let g = fault_free(16, 16);
        assert_eq!(g.num_active(), 2048);
        // 256 cells * 16 + vertical 15*16*4 + horizontal 16*15*4.
        assert_eq!(g.num_edges(), 256 * 16 + 2 * 960);
        let avg = 2.0 * g.num_edges() as f64 / g.num_active() as f64;
        assert!((avg - 5.875).abs() < 1e-12);

        let cell = fault_free(1, 1);
        assert_eq!(cell.num_active(), 8);
        assert_eq!(cell.num_edges(), 16);
    }

    #[test]
    fn two_cells_join_horizontal_shores() {
        let g = fault_free(1, 2);
        assert_eq!(g.num_active(), 16);
        let inter: Vec<(usize, usize)> = g
            .edges()
            .into_iter()
            .filter(|&(a, b)| g.cell_of(a) != g.cell_of(b))
            .collect();
        assert_eq!(inter.len(), 4);
        for (a, b) in inter {
            let (_, _, sa, ka) = g.coords(a);
            let (_, _, sb, kb) = g.coords(b);
            assert_eq!((sa, sb), (1, 1));
            assert_eq!(ka, kb);
        }
    }

    #[test]
    fn faults_remove_incident_couplers() {
        let g = build_chimera(1, 1, 4, &BTreeSet::from([0])).unwrap();
        assert_eq!(g.num_active(), 7);
        assert_eq!(g.num_edges(), 12);
        assert!(!g.has_edge(0, 4));
        let back = HardwareGraph::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back.num_edges(), 12);
        assert!(build_chimera(0, 1, 4, &BTreeSet::new()).is_err());
    }

    #[test]
    fn clique_chain_law() {
        let g = fault_free(16, 16);
        for (n, len) in [(4, 2), (8, 3), (12, 4), (16, 5), (20, 6), (6, 3)] {
            let emb = clique_embed(n, &g).unwrap();
            assert_eq!(emb.num_logical(), n);
            assert!(emb.chains.iter().all(|c| c.len() == len), "n={n}");
            emb.validate(&g, &complete_graph_edges(n)).unwrap();
        }
        assert_eq!(clique_embed(20, &g).unwrap().cells_used(&g), 15);
        assert_eq!(clique_embed(64, &g).unwrap().num_logical(), 64);
        assert!(clique_embed(65, &g).is_err());
    }

    #[test]
    fn clique_routes_around_faults() {
        let clean = fault_free(4, 4);
        let emb = clique_embed(8, &clean).unwrap();
        let fault = emb.chains[0][0];
        let g = build_chimera(4, 4, 4, &BTreeSet::from([fault])).unwrap();
        let emb = clique_embed(8, &g).unwrap();
        emb.validate(&g, &complete_graph_edges(8)).unwrap();
        assert!(emb.chains.iter().flatten().all(|&q| q != fault));
    }

    #[test]
    fn randomized_small_cases() {
        let g = fault_free(1, 1);
        let emb = randomized_embed(&[(0, 1)], &g, &RandomizedEmbedParams::new(3, 5)).unwrap();
        assert_eq!(emb.chains.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 1]);
        assert!(g.has_edge(emb.chains[0][0], emb.chains[1][0]));
        assert!(randomized_embed(&[], &g, &RandomizedEmbedParams::new(3, 5)).is_err());
        assert!(matches!(
            randomized_embed(&complete_graph_edges(12), &g, &RandomizedEmbedParams::new(0, 2)),
            Err(Error::EmbeddingInfeasible { attempts: 2, .. })
        ));
    }

    #[test]
    fn randomized_is_deterministic() {
        let g = fault_free(6, 6);
        let edges = complete_graph_edges(8);
        let p = RandomizedEmbedParams::new(17, 10);
        let a = randomized_embed(&edges, &g, &p).unwrap();
        let b = randomized_embed(&edges, &g, &p).unwrap();
        assert_eq!(a, b);
        a.validate(&g, &edges).unwrap();
    }

    #[test]
    fn chain_stat_examples() {
        let emb = Embedding::new(vec![vec![0], vec![4, 1, 5]]);
        assert_eq!(chain_stats(&emb).unwrap(), (2.0, 2.0, 3));
        assert_eq!(chain_stats(&Embedding::new(vec![vec![0, 4]])).unwrap(), (2.0, 0.0, 2));
        let g = fault_free(16, 16);
        let (mean, var, max) = chain_stats(&clique_embed(20, &g).unwrap()).unwrap();
        assert_eq!((mean, var, max), (6.0, 0.0, 6));
    }

    #[test]
    fn validator_catches_defects() {
        let g = fault_free(2, 2);
        let edges = [(0, 1)];
        // Shared qubit.
        assert!(Embedding::new(vec![vec![0], vec![0, 4]]).validate(&g, &edges).is_err());
        // Disconnected chain: two side-0 qubits of one cell.
        assert!(Embedding::new(vec![vec![0, 1], vec![4]]).validate(&g, &edges).is_err());
        // No coupler between chains.
        assert!(Embedding::new(vec![vec![0], vec![1]]).validate(&g, &edges).is_err());
        assert!(Embedding::new(vec![vec![0], vec![4]]).validate(&g, &edges).is_ok());
    }

    #[test]
    fn embedding_file_round_trip() {
        let g = fault_free(4, 4);
        let emb = clique_embed(8, &g).unwrap();
        assert_eq!(Embedding::from_json(&emb.to_json().unwrap()).unwrap(), emb);
        assert!(Embedding::from_json("{\"1\": [0]}").is_err());
    }

    fn random_model(n: usize, seed: u64) -> IsingModel {
        let mut r = rng::substream(seed, 0);
        let mut m = IsingModel::zeros(n);
        for i in 0..n {
            m.h[i] = r.gen_range(-0.1..0.1);
            for j in i + 1..n {
                m.set_coupling(i, j, r.gen_range(-0.1..0.1)).unwrap();
            }
        }
        m.offset = 0.3;
        m
    }

    #[test]
    fn embedded_couplings_are_rescaled() {
        let g = fault_free(16, 16);
        let model = random_model(8, 1);
        let emb = clique_embed(8, &g).unwrap();
        let e = embed_ising(&model, &emb, &g, -1.0).unwrap();
        let inter: Vec<f64> = e.couplers.iter().filter(|c| !c.intra_chain).map(|c| c.value).collect();
        assert_eq!(inter.len(), 28);
        assert!(inter.iter().all(|v| v.abs() <= 1.0));
        assert!(inter.iter().any(|v| v.abs() == 1.0));
        assert!(e.couplers.iter().filter(|c| c.intra_chain).all(|c| c.value == -1.0));
        assert_eq!(e.offset, 0.3);
    }

    #[test]
    fn unit_chains_keep_biases() {
        let g = fault_free(1, 1);
        let mut model = IsingModel::zeros(2);
        model.h = vec![0.3, -0.2];
        model.set_coupling(0, 1, 0.5).unwrap();
        let emb = randomized_embed(&[(0, 1)], &g, &RandomizedEmbedParams::new(1, 3)).unwrap();
        let e = embed_ising(&model, &emb, &g, -1.0).unwrap();
        assert_eq!(e.rescale, 2.0);
        let ph = e.physical_h();
        assert_eq!(ph[&emb.chains[0][0]], 0.6);
        assert_eq!(ph[&emb.chains[1][0]], -0.4);
        let bad = Embedding::new(vec![vec![0], vec![1]]);
        assert!(embed_ising(&model, &bad, &g, -1.0).is_err());
    }

    #[test]
    fn consistent_states_map_affinely() {
        let g = fault_free(16, 16);
        for n in [5, 8, 12] {
            let model = random_model(n, n as u64);
            let emb = clique_embed(n, &g).unwrap();
            let e = embed_ising(&model, &emb, &g, -1.0).unwrap();
            let chain_const = e.chain_energy_constant();
            for mask in 0..1u64 << n {
                let spins: Vec<i8> = (0..n).map(|i| if mask >> i & 1 == 1 { 1 } else { -1 }).collect();
                let phys = e.spread(&spins);
                let logical = model.energy(&spins).unwrap();
                let via = (e.energy(&phys) - chain_const) / e.rescale + model.offset;
                assert!((logical - via).abs() < 1e-12, "n={n} mask={mask}");
            }
        }
    }

    #[test]
    fn strong_chains_preserve_ground_state() {
        let g = fault_free(16, 16);
        for (n, seed) in [(4, 3), (6, 4)] {
            let model = random_model(n, seed);
            let emb = clique_embed(n, &g).unwrap();
            let e = embed_ising(&model, &emb, &g, -8.0).unwrap();
            let nq = e.num_qubits();
            assert!(nq <= 20);
            let mut best = (f64::INFINITY, 0u64);
            for mask in 0..1u64 << nq {
                let s: Vec<i8> = (0..nq).map(|i| if mask >> i & 1 == 1 { 1 } else { -1 }).collect();
                let en = e.energy(&s);
                if en < best.0 {
                    best = (en, mask);
                }
            }
            let s: Vec<i8> = (0..nq).map(|i| if best.1 >> i & 1 == 1 { 1 } else { -1 }).collect();
            let decoded: Vec<i8> = e.chains_local.iter().map(|c| s[c[0]]).collect();
            for c in &e.chains_local {
                assert!(c.iter().all(|&q| s[q] == s[c[0]]));
            }
            let spectrum = full_spectrum(&model).unwrap();
            let ground = model.energy(&decoded).unwrap();
            assert!((ground - spectrum.ground_energy()).abs() < 1e-12);
        }
    }
}
