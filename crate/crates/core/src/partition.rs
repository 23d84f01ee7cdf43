//! Edge partitioning into self-sufficient training partitions.
//!
//! A partitioner assigns every training edge to exactly one partition (its
//! *core* edges). [`neighborhood_expand`] then adds the *support* edges and
//! vertices that an `n`-layer message-passing model needs to embed every
//! core-edge endpoint without looking outside the partition.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Triplet};

pub const FORMAT_VERSION: u32 = 1;

/// Default slack for the vertex-cut balance constraint.
pub const DEFAULT_IMBALANCE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VertexRole {
    /// Endpoint of core edges in this partition only.
    Core,
    /// Endpoint of core edges here and in at least one other partition.
    Replicated,
    /// Present only to complete n-hop dependencies.
    Support,
}

impl VertexRole {
    pub fn as_str(self) -> &'static str {
        match self {
            VertexRole::Core => "core",
            VertexRole::Replicated => "replicated",
            VertexRole::Support => "support",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "core" => Some(VertexRole::Core),
            "replicated" => Some(VertexRole::Replicated),
            "support" => Some(VertexRole::Support),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionerKind {
    VertexCut,
    Random,
}

impl PartitionerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PartitionerKind::VertexCut => "vertexcut",
            PartitionerKind::Random => "random",
        }
    }
}

impl std::str::FromStr for PartitionerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vertexcut" | "vertex-cut" => Ok(PartitionerKind::VertexCut),
            "random" => Ok(PartitionerKind::Random),
            _ => Err(Error::Validation(format!(
                "unknown partitioner '{s}' (expected vertexcut or random)"
            ))),
        }
    }
}

impl fmt::Display for PartitionerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One worker's share of the graph, in global entity ids.
///
/// Local ids number the core-edge endpoints (core and replicated vertices,
/// ascending by global id) first, then support vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub id: usize,
    pub core_edges: Vec<Triplet>,
    pub support_edges: Vec<Triplet>,
    core_vertices: Vec<u32>,
    replicated_vertices: Vec<u32>,
    support_vertices: Vec<u32>,
    local_to_global: Vec<u32>,
    global_to_local: HashMap<u32, u32>,
    pub hop_count: usize,
}

impl Partition {
    fn build(
        id: usize,
        core_edges: Vec<Triplet>,
        support_edges: Vec<Triplet>,
        roles: Vec<(u32, VertexRole)>,
        hop_count: usize,
    ) -> Self {
        let mut core_vertices = Vec::new();
        let mut replicated_vertices = Vec::new();
        let mut support_vertices = Vec::new();
        for (v, role) in roles {
            match role {
                VertexRole::Core => core_vertices.push(v),
                VertexRole::Replicated => replicated_vertices.push(v),
                VertexRole::Support => support_vertices.push(v),
            }
        }
        core_vertices.sort_unstable();
        replicated_vertices.sort_unstable();
        support_vertices.sort_unstable();
        let mut endpoints: Vec<u32> = core_vertices
            .iter()
            .chain(&replicated_vertices)
            .copied()
            .collect();
        endpoints.sort_unstable();
        let local_to_global: Vec<u32> = endpoints
            .into_iter()
            .chain(support_vertices.iter().copied())
            .collect();
        let global_to_local = local_to_global
            .iter()
            .enumerate()
            .map(|(l, &g)| (g, l as u32))
            .collect();
        Partition {
            id,
            core_edges,
            support_edges,
            core_vertices,
            replicated_vertices,
            support_vertices,
            local_to_global,
            global_to_local,
            hop_count,
        }
    }

    pub fn core_vertices(&self) -> &[u32] {
        &self.core_vertices
    }

    pub fn replicated_vertices(&self) -> &[u32] {
        &self.replicated_vertices
    }

    pub fn support_vertices(&self) -> &[u32] {
        &self.support_vertices
    }

    /// Number of core-edge endpoints; these hold local ids `0..n`.
    pub fn num_endpoints(&self) -> usize {
        self.core_vertices.len() + self.replicated_vertices.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.local_to_global.len()
    }

    pub fn local_to_global(&self) -> &[u32] {
        &self.local_to_global
    }

    pub fn local_id(&self, global: u32) -> Option<u32> {
        self.global_to_local.get(&global).copied()
    }

    pub fn global_id(&self, local: u32) -> u32 {
        self.local_to_global[local as usize]
    }

    pub fn role(&self, global: u32) -> Option<VertexRole> {
        let local = self.local_id(global)? as usize;
        if local >= self.num_endpoints() {
            Some(VertexRole::Support)
        } else if self.replicated_vertices.binary_search(&global).is_ok() {
            Some(VertexRole::Replicated)
        } else {
            Some(VertexRole::Core)
        }
    }

    pub fn total_edges(&self) -> usize {
        self.core_edges.len() + self.support_edges.len()
    }

    /// Core followed by support edges, mapped to local ids.
    pub fn local_edges(&self) -> Vec<Triplet> {
        self.core_edges
            .iter()
            .chain(&self.support_edges)
            .map(|t| self.to_local(t))
            .collect()
    }

    pub fn local_core_edges(&self) -> Vec<Triplet> {
        self.core_edges.iter().map(|t| self.to_local(t)).collect()
    }

    fn to_local(&self, t: &Triplet) -> Triplet {
        Triplet::new(
            self.global_to_local[&t.head],
            t.rel,
            self.global_to_local[&t.tail],
        )
    }

    fn roles(&self) -> impl Iterator<Item = (u32, VertexRole)> + '_ {
        self.local_to_global.iter().enumerate().map(|(l, &g)| {
            let role = if l >= self.num_endpoints() {
                VertexRole::Support
            } else if self.replicated_vertices.binary_search(&g).is_ok() {
                VertexRole::Replicated
            } else {
                VertexRole::Core
            };
            (g, role)
        })
    }
}

/// Provenance carried with a partition set and persisted in its manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionMeta {
    pub partitioner: String,
    pub seed: u64,
    pub hops: usize,
    pub graph_checksum: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionSet {
    pub partitions: Vec<Partition>,
    pub num_entities: usize,
    pub num_relations: usize,
    pub meta: PartitionMeta,
}

impl PartitionSet {
    pub fn len(&self) -> usize {
        self.partitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partitions.is_empty()
    }

    pub fn replication_factor(&self) -> Result<f64> {
        replication_factor(self)
    }

    /// Checks that this set was derived from `graph` and expanded for
    /// `hops` message-passing layers.
    pub fn verify_provenance(&self, graph: &KnowledgeGraph, hops: usize) -> Result<()> {
        let sum = graph.checksum();
        if self.meta.graph_checksum != sum {
            return Err(Error::Provenance(format!(
                "partitions were built from graph {} but the loaded graph is {}",
                self.meta.graph_checksum, sum
            )));
        }
        if self.meta.hops != hops || self.partitions.iter().any(|p| p.hop_count != hops) {
            return Err(Error::Provenance(format!(
                "partitions are expanded for {} hops but the model has {hops} layers",
                self.meta.hops
            )));
        }
        Ok(())
    }
}

/// Groups edges by assignment and labels vertices core or replicated.
fn from_assignment(
    graph: &KnowledgeGraph,
    assignment: &[usize],
    num_parts: usize,
    meta: PartitionMeta,
) -> PartitionSet {
    let mut core: Vec<Vec<Triplet>> = vec![Vec::new(); num_parts];
    for (t, &p) in graph.edges().iter().zip(assignment) {
        core[p].push(*t);
    }
    let mut owners = vec![0u32; graph.num_entities()];
    let mut last_seen = vec![usize::MAX; graph.num_entities()];
    for (p, edges) in core.iter().enumerate() {
        for t in edges {
            for v in [t.head, t.tail] {
                if last_seen[v as usize] != p {
                    last_seen[v as usize] = p;
                    owners[v as usize] += 1;
                }
            }
        }
    }
    let partitions = core
        .into_iter()
        .enumerate()
        .map(|(id, edges)| {
            let mut vs: Vec<u32> = edges.iter().flat_map(|t| [t.head, t.tail]).collect();
            vs.sort_unstable();
            vs.dedup();
            let roles = vs
                .into_iter()
                .map(|v| {
                    let role = if owners[v as usize] > 1 {
                        VertexRole::Replicated
                    } else {
                        VertexRole::Core
                    };
                    (v, role)
                })
                .collect();
            Partition::build(id, edges, Vec::new(), roles, 0)
        })
        .collect();
    PartitionSet {
        partitions,
        num_entities: graph.num_entities(),
        num_relations: graph.num_relations(),
        meta,
    }
}

fn check_parts(graph: &KnowledgeGraph, num_parts: usize) -> Result<()> {
    if num_parts == 0 {
        return Err(Error::Validation("num_parts must be >= 1".into()));
    }
    if num_parts > graph.edges().len() {
        return Err(Error::Validation(format!(
            "cannot split {} edges into {num_parts} partitions",
            graph.edges().len()
        )));
    }
    Ok(())
}

/// Edge stream for the vertex-cut partitioner: a breadth-first walk over
/// the bidirectional view that emits a vertex's unseen incident edges when
/// the vertex is dequeued, so the stream grows contiguous regions. Walk
/// roots are taken in ascending degree order, ties broken by a seeded
/// permutation.
fn locality_stream(graph: &KnowledgeGraph, seed: u64) -> Vec<u32> {
    let inc = graph.incidence();
    let mut roots: Vec<u32> = (0..graph.num_entities() as u32).collect();
    roots.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // start each component at a peripheral vertex
    roots.sort_by_key(|&v| inc[v as usize].len());
    let mut visited = vec![false; graph.num_entities()];
    let mut emitted = vec![false; graph.edges().len()];
    let mut order = Vec::with_capacity(graph.edges().len());
    let mut queue = std::collections::VecDeque::new();
    for root in roots {
        if visited[root as usize] {
            continue;
        }
        visited[root as usize] = true;
        queue.push_back(root);
        while let Some(u) = queue.pop_front() {
            for &e in &inc[u as usize] {
                if emitted[e as usize] {
                    continue;
                }
                emitted[e as usize] = true;
                order.push(e);
                let t = graph.edges()[e as usize];
                let w = if t.head == u { t.tail } else { t.head };
                if !visited[w as usize] {
                    visited[w as usize] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    order
}

/// Greedy streaming vertex-cut in the HDRF family with a hard balance cap
/// of `(1 + imbalance) * |E| / P` core edges per partition.
pub fn vertex_cut_partition_with(
    graph: &KnowledgeGraph,
    num_parts: usize,
    seed: u64,
    imbalance: f64,
) -> Result<PartitionSet> {
    check_parts(graph, num_parts)?;
    if !(imbalance >= 0.0) {
        return Err(Error::Validation("imbalance must be >= 0".into()));
    }
    const LAMBDA: f64 = 1.0;
    const EPS: f64 = 1.0;
    let m = graph.edges().len();
    let capacity = m
        .div_ceil(num_parts)
        .max(((1.0 + imbalance) * m as f64 / num_parts as f64).floor() as usize);

    let mut sizes = vec![0usize; num_parts];
    let mut partial_degree = vec![0u32; graph.num_entities()];
    let mut replicas: Vec<Vec<u16>> = vec![Vec::new(); graph.num_entities()];
    let mut assignment = vec![0usize; m];

    for e in locality_stream(graph, seed) {
        let t = graph.edges()[e as usize];
        let (u, v) = (t.head as usize, t.tail as usize);
        partial_degree[u] += 1;
        if v != u {
            partial_degree[v] += 1;
        }
        let (du, dv) = (partial_degree[u] as f64, partial_degree[v] as f64);
        let theta_u = du / (du + dv);
        let theta_v = 1.0 - theta_u;
        let max_size = *sizes.iter().max().unwrap() as f64;
        let min_size = *sizes.iter().min().unwrap() as f64;

        let mut best = usize::MAX;
        let mut best_score = f64::NEG_INFINITY;
        for p in 0..num_parts {
            if sizes[p] >= capacity {
                continue;
            }
            let g = |x: usize, theta: f64| {
                if replicas[x].contains(&(p as u16)) {
                    2.0 - theta
                } else {
                    0.0
                }
            };
            let rep = g(u, theta_u) + if v != u { g(v, theta_v) } else { 0.0 };
            let bal = LAMBDA * (max_size - sizes[p] as f64) / (EPS + max_size - min_size);
            let score = rep + bal;
            if score > best_score {
                best_score = score;
                best = p;
            }
        }
        assignment[e as usize] = best;
        sizes[best] += 1;
        for x in [u, v] {
            if !replicas[x].contains(&(best as u16)) {
                replicas[x].push(best as u16);
            }
        }
    }

    Ok(from_assignment(
        graph,
        &assignment,
        num_parts,
        PartitionMeta {
            partitioner: PartitionerKind::VertexCut.as_str().into(),
            seed,
            hops: 0,
            graph_checksum: graph.checksum(),
        },
    ))
}

pub fn vertex_cut_partition(
    graph: &KnowledgeGraph,
    num_parts: usize,
    seed: u64,
) -> Result<PartitionSet> {
    vertex_cut_partition_with(graph, num_parts, seed, DEFAULT_IMBALANCE)
}

/// Uniform random edge assignment (baseline).
pub fn random_edge_partition(
    graph: &KnowledgeGraph,
    num_parts: usize,
    seed: u64,
) -> Result<PartitionSet> {
    check_parts(graph, num_parts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignment: Vec<usize> = (0..graph.edges().len())
        .map(|_| rng.gen_range(0..num_parts))
        .collect();
    Ok(from_assignment(
        graph,
        &assignment,
        num_parts,
        PartitionMeta {
            partitioner: PartitionerKind::Random.as_str().into(),
            seed,
            hops: 0,
            graph_checksum: graph.checksum(),
        },
    ))
}

pub fn partition(
    graph: &KnowledgeGraph,
    kind: PartitionerKind,
    num_parts: usize,
    seed: u64,
) -> Result<PartitionSet> {
    match kind {
        PartitionerKind::VertexCut => vertex_cut_partition(graph, num_parts, seed),
        PartitionerKind::Random => random_edge_partition(graph, num_parts, seed),
    }
}

/// Adds support edges and vertices so that every core-edge endpoint has its
/// full `hops`-hop bidirectional neighborhood inside the partition.
///
/// Support sets are recomputed from the core edges, so expanding an already
/// expanded set with the same hop count changes nothing.
pub fn neighborhood_expand(
    pset: &PartitionSet,
    graph: &KnowledgeGraph,
    hops: usize,
) -> Result<PartitionSet> {
    if pset.num_entities != graph.num_entities() {
        return Err(Error::Integrity(format!(
            "partition set covers {} entities, graph has {}",
            pset.num_entities,
            graph.num_entities()
        )));
    }
    let mut by_triplet: HashMap<Triplet, Vec<u32>> = HashMap::new();
    for (i, t) in graph.edges().iter().enumerate().rev() {
        by_triplet.entry(*t).or_default().push(i as u32);
    }
    let mut core_ids = Vec::with_capacity(pset.len());
    for p in &pset.partitions {
        let mut ids = Vec::with_capacity(p.core_edges.len());
        for t in &p.core_edges {
            let id = by_triplet.get_mut(t).and_then(Vec::pop).ok_or_else(|| {
                Error::Integrity(format!(
                    "core edge {t} of partition {} is not a (remaining) graph edge",
                    p.id
                ))
            })?;
            ids.push(id);
        }
        core_ids.push(ids);
    }

    let inc = graph.incidence();
    let partitions = pset
        .partitions
        .par_iter()
        .zip(core_ids)
        .map(|(p, core)| expand_one(p, &core, graph, &inc, hops))
        .collect();
    Ok(PartitionSet {
        partitions,
        num_entities: pset.num_entities,
        num_relations: pset.num_relations,
        meta: PartitionMeta {
            hops,
            ..pset.meta.clone()
        },
    })
}

fn expand_one(
    p: &Partition,
    core: &[u32],
    graph: &KnowledgeGraph,
    inc: &[Vec<u32>],
    hops: usize,
) -> Partition {
    let mut seen_edge = vec![false; graph.edges().len()];
    for &e in core {
        seen_edge[e as usize] = true;
    }
    let mut seen_vertex = vec![false; graph.num_entities()];
    let mut frontier: Vec<u32> = p.local_to_global[..p.num_endpoints()].to_vec();
    for &v in &frontier {
        seen_vertex[v as usize] = true;
    }
    let mut support_edges = Vec::new();
    let mut support_vertices = Vec::new();
    for _ in 0..hops {
        let mut next = Vec::new();
        for &v in &frontier {
            for &e in &inc[v as usize] {
                if !seen_edge[e as usize] {
                    seen_edge[e as usize] = true;
                    support_edges.push(e);
                }
                let t = graph.edges()[e as usize];
                let w = if t.head == v { t.tail } else { t.head };
                if !seen_vertex[w as usize] {
                    seen_vertex[w as usize] = true;
                    next.push(w);
                    support_vertices.push(w);
                }
            }
        }
        frontier = next;
    }
    support_edges.sort_unstable();
    let roles = p
        .roles()
        .take(p.num_endpoints())
        .chain(support_vertices.into_iter().map(|v| (v, VertexRole::Support)))
        .collect();
    Partition::build(
        p.id,
        p.core_edges.clone(),
        support_edges
            .into_iter()
            .map(|e| graph.edges()[e as usize])
            .collect(),
        roles,
        hops,
    )
}

/// `(1/|V|) * sum_i |V(E_i)|` over whichever edges (core and support) each
/// partition currently holds. Isolated vertices count in `|V|` only.
pub fn replication_factor(pset: &PartitionSet) -> Result<f64> {
    if pset.num_entities == 0 {
        return Err(Error::Validation(
            "replication factor is undefined for a graph without vertices".into(),
        ));
    }
    let mut mark = vec![usize::MAX; pset.num_entities];
    let mut total = 0usize;
    for (i, p) in pset.partitions.iter().enumerate() {
        for t in p.core_edges.iter().chain(&p.support_edges) {
            for v in [t.head, t.tail] {
                if mark[v as usize] != i {
                    mark[v as usize] = i;
                    total += 1;
                }
            }
        }
    }
    Ok(total as f64 / pset.num_entities as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionRow {
    pub id: usize,
    pub core_edges: usize,
    pub support_edges: usize,
    pub total_edges: usize,
    pub core_vertices: usize,
    pub replicated_vertices: usize,
    pub support_vertices: usize,
    pub total_vertices: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: impl IntoIterator<Item = usize>) -> Self {
        let v: Vec<f64> = values.into_iter().map(|x| x as f64).collect();
        if v.is_empty() {
            return MeanStd::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        MeanStd {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionStats {
    pub rows: Vec<PartitionRow>,
    pub core_edges: MeanStd,
    pub support_edges: MeanStd,
    pub total_edges: MeanStd,
    pub total_vertices: MeanStd,
    pub hops: usize,
    pub replication_factor: f64,
}

pub fn partition_stats(pset: &PartitionSet) -> Result<PartitionStats> {
    let rows: Vec<PartitionRow> = pset
        .partitions
        .iter()
        .map(|p| PartitionRow {
            id: p.id,
            core_edges: p.core_edges.len(),
            support_edges: p.support_edges.len(),
            total_edges: p.total_edges(),
            core_vertices: p.core_vertices.len(),
            replicated_vertices: p.replicated_vertices.len(),
            support_vertices: p.support_vertices.len(),
            total_vertices: p.num_vertices(),
        })
        .collect();
    Ok(PartitionStats {
        core_edges: MeanStd::of(rows.iter().map(|r| r.core_edges)),
        support_edges: MeanStd::of(rows.iter().map(|r| r.support_edges)),
        total_edges: MeanStd::of(rows.iter().map(|r| r.total_edges)),
        total_vertices: MeanStd::of(rows.iter().map(|r| r.total_vertices)),
        hops: pset.meta.hops,
        replication_factor: replication_factor(pset)?,
        rows,
    })
}

impl fmt::Display for PartitionStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>5} {:>12} {:>14} {:>12} {:>10} {:>11} {:>10} {:>10}",
            "part", "core_edges", "support_edges", "total_edges", "core_v", "replicated", "support_v", "total_v"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>5} {:>12} {:>14} {:>12} {:>10} {:>11} {:>10} {:>10}",
                r.id,
                r.core_edges,
                r.support_edges,
                r.total_edges,
                r.core_vertices,
                r.replicated_vertices,
                r.support_vertices,
                r.total_vertices
            )?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "{:>12} {:>22} {:>22} {:>8}",
            "#partitions", "#core edges", "#total edges", "RF"
        )?;
        writeln!(
            f,
            "{:>12} {:>22} {:>22} {:>8.2}",
            self.rows.len(),
            format!("{:.0} ± {:.1}", self.core_edges.mean, self.core_edges.std),
            format!("{:.0} ± {:.1}", self.total_edges.mean, self.total_edges.std),
            self.replication_factor
        )
    }
}

fn write_edges(path: &Path, edges: &[Triplet]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in edges {
        writeln!(w, "{}\t{}\t{}", t.head, t.rel, t.tail).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_owned(),
        msg: msg.into(),
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => format_err(path, "missing file"),
        _ => Error::io(path, e),
    })
}

fn parse_edges(path: &Path, text: &str) -> Result<Vec<Triplet>> {
    text.lines()
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            let cols: Vec<u32> = l
                .split('\t')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| format_err(path, format!("line {}: bad edge '{l}'", i + 1)))?;
            match cols[..] {
                [h, r, t] => Ok(Triplet::new(h, r, t)),
                _ => Err(format_err(path, format!("line {}: expected 3 columns", i + 1))),
            }
        })
        .collect()
}

fn content_digest(meta_fields: &[(String, String)], files: &[Vec<u8>]) -> String {
    let mut h = Sha256::new();
    for (k, v) in meta_fields {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    for f in files {
        h.update((f.len() as u64).to_le_bytes());
        h.update(f);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn meta_fields(pset: &PartitionSet) -> Vec<(String, String)> {
    vec![
        ("version".into(), FORMAT_VERSION.to_string()),
        ("num_parts".into(), pset.len().to_string()),
        ("hops".into(), pset.meta.hops.to_string()),
        ("seed".into(), pset.meta.seed.to_string()),
        ("partitioner".into(), pset.meta.partitioner.clone()),
        ("graph_checksum".into(), pset.meta.graph_checksum.clone()),
        ("num_entities".into(), pset.num_entities.to_string()),
        ("num_relations".into(), pset.num_relations.to_string()),
    ]
}

const PART_FILES: [&str; 3] = ["core_edges.tsv", "support_edges.tsv", "vertices.tsv"];

/// Writes `meta` plus `p<i>/{core_edges,support_edges,vertices}.tsv`.
pub fn write_partitions(pset: &PartitionSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut contents = Vec::new();
    for p in &pset.partitions {
        let pdir = dir.join(format!("p{}", p.id));
        fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
        write_edges(&pdir.join(PART_FILES[0]), &p.core_edges)?;
        write_edges(&pdir.join(PART_FILES[1]), &p.support_edges)?;
        let mut vertices = String::new();
        for (l, (g, role)) in p.roles().enumerate() {
            vertices.push_str(&format!("{g}\t{}\t{l}\n", role.as_str()));
        }
        let vpath = pdir.join(PART_FILES[2]);
        fs::write(&vpath, &vertices).map_err(|e| Error::io(&vpath, e))?;
        for name in PART_FILES {
            let path = pdir.join(name);
            contents.push(fs::read(&path).map_err(|e| Error::io(&path, e))?);
        }
    }
    let fields = meta_fields(pset);
    let mut meta = String::new();
    for (k, v) in &fields {
        meta.push_str(&format!("{k}={v}\n"));
    }
    meta.push_str(&format!(
        "content_checksum={}\n",
        content_digest(&fields, &contents)
    ));
    let mpath = dir.join("meta");
    fs::write(&mpath, meta).map_err(|e| Error::io(&mpath, e))
}

pub fn read_partitions(dir: &Path) -> Result<PartitionSet> {
    let mpath = dir.join("meta");
    let text = read_file(&mpath)?;
    let mut kv: HashMap<String, String> = HashMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format_err(&mpath, format!("bad line '{line}'")))?;
        kv.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    let get = |k: &str| {
        kv.get(k)
            .cloned()
            .ok_or_else(|| format_err(&mpath, format!("missing key '{k}'")))
    };
    let num = |k: &str| -> Result<u64> {
        get(k)?
            .parse()
            .map_err(|_| format_err(&mpath, format!("key '{k}' is not an integer")))
    };
    let version = num("version")?;
    if version != FORMAT_VERSION as u64 {
        return Err(format_err(&mpath, format!("unsupported version {version}")));
    }
    let num_parts = num("num_parts")? as usize;
    let hops = num("hops")? as usize;
    let meta = PartitionMeta {
        partitioner: get("partitioner")?,
        seed: num("seed")?,
        hops,
        graph_checksum: get("graph_checksum")?,
    };
    let num_entities = num("num_entities")? as usize;
    let num_relations = num("num_relations")? as usize;
    let expected_digest = get("content_checksum")?;

    let mut partitions = Vec::with_capacity(num_parts);
    let mut contents = Vec::new();
    for id in 0..num_parts {
        let pdir = dir.join(format!("p{id}"));
        let texts = PART_FILES
            .iter()
            .map(|name| read_file(&pdir.join(name)))
            .collect::<Result<Vec<_>>>()?;
        let core_edges = parse_edges(&pdir.join(PART_FILES[0]), &texts[0])?;
        let support_edges = parse_edges(&pdir.join(PART_FILES[1]), &texts[1])?;
        let vpath = pdir.join(PART_FILES[2]);
        let mut roles = Vec::new();
        for (i, line) in texts[2].lines().filter(|l| !l.is_empty()).enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            let parsed = match cols[..] {
                [g, role, l] => g
                    .parse::<u32>()
                    .ok()
                    .zip(VertexRole::parse(role))
                    .zip(l.parse::<usize>().ok()),
                _ => None,
            };
            let ((g, role), l) = parsed
                .ok_or_else(|| format_err(&vpath, format!("line {}: bad vertex row", i + 1)))?;
            if l != i {
                return Err(format_err(&vpath, format!("line {}: local ids must be dense", i + 1)));
            }
            roles.push((g, role));
        }
        let file_order: Vec<u32> = roles.iter().map(|&(g, _)| g).collect();
        let p = Partition::build(id, core_edges, support_edges, roles, hops);
        if p.local_to_global != file_order {
            return Err(format_err(&vpath, "vertex rows are not in canonical local-id order"));
        }
        partitions.push(p);
        contents.extend(texts.into_iter().map(String::into_bytes));
    }
    let pset = PartitionSet {
        partitions,
        num_entities,
        num_relations,
        meta,
    };
    if content_digest(&meta_fields(&pset), &contents) != expected_digest {
        return Err(Error::Provenance(format!(
            "{} does not match its content checksum",
            dir.display()
        )));
    }
    Ok(pset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generate_synthetic;

    fn path_graph(n: u32) -> KnowledgeGraph {
        let edges = (0..n - 1).map(|i| Triplet::new(i, 0, i + 1)).collect();
        KnowledgeGraph::new(n as usize, 1, edges).unwrap()
    }

    #[test]
    fn single_partition_is_identity() {
        let (g, _) = generate_synthetic(100, 2, 3.0, 1).unwrap();
        let ps = vertex_cut_partition(&g, 1, 9).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!(ps.partitions[0].core_edges, g.edges());
        assert!(ps.partitions[0].replicated_vertices().is_empty());
        let covered = (0..100u32)
            .filter(|&v| !g.in_edges(v).is_empty() || !g.out_edges(v).is_empty())
            .count();
        assert_eq!(ps.replication_factor().unwrap(), covered as f64 / 100.0);

        let r = random_edge_partition(&g, 1, 3).unwrap();
        assert_eq!(r.partitions, ps.partitions);
    }

    #[test]
    fn too_many_parts_is_rejected() {
        let g = path_graph(3);
        assert!(matches!(vertex_cut_partition(&g, 3, 0), Err(Error::Validation(_))));
        assert!(matches!(random_edge_partition(&g, 0, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn path_graph_splits_at_one_vertex() {
        let g = path_graph(7);
        for seed in 0..20 {
            let ps = vertex_cut_partition(&g, 2, seed).unwrap();
            let sizes: Vec<_> = ps.partitions.iter().map(|p| p.core_edges.len()).collect();
            assert_eq!(sizes, vec![3, 3], "seed {seed}");
            let replicated: usize = ps
                .partitions
                .iter()
                .map(|p| p.replicated_vertices().len())
                .sum();
            // one cut vertex, listed in both partitions
            assert_eq!(replicated, 2, "seed {seed}");
        }
    }

    #[test]
    fn replication_factor_two_full_copies() {
        let g = path_graph(4);
        let ps = vertex_cut_partition(&g, 1, 0).unwrap();
        let mut doubled = ps.clone();
        let mut copy = ps.partitions[0].clone();
        copy.id = 1;
        doubled.partitions.push(copy);
        assert_eq!(replication_factor(&doubled).unwrap(), 2.0);
    }

    #[test]
    fn replication_factor_undefined_on_empty_graph() {
        let g = KnowledgeGraph::new(0, 0, vec![]).unwrap();
        let ps = from_assignment(
            &g,
            &[],
            1,
            PartitionMeta {
                partitioner: "vertexcut".into(),
                seed: 0,
                hops: 0,
                graph_checksum: g.checksum(),
            },
        );
        assert!(replication_factor(&ps).is_err());
    }

    #[test]
    fn zero_hop_expansion_is_identity_and_expansion_is_idempotent() {
        let (g, _) = generate_synthetic(200, 3, 4.0, 5).unwrap();
        let ps = vertex_cut_partition(&g, 4, 2).unwrap();
        assert_eq!(neighborhood_expand(&ps, &g, 0).unwrap(), ps);
        let once = neighborhood_expand(&ps, &g, 2).unwrap();
        let twice = neighborhood_expand(&once, &g, 2).unwrap();
        assert_eq!(once, twice);
        assert!(once.partitions.iter().all(|p| p.hop_count == 2));
    }

    #[test]
    fn roles_are_disjoint_and_local_ids_dense() {
        let (g, _) = generate_synthetic(300, 3, 4.0, 8).unwrap();
        let ps = neighborhood_expand(&vertex_cut_partition(&g, 4, 1).unwrap(), &g, 1).unwrap();
        for p in &ps.partitions {
            for &v in p.support_vertices() {
                assert_eq!(p.role(v), Some(VertexRole::Support));
            }
            for t in &p.core_edges {
                assert!(matches!(
                    p.role(t.head),
                    Some(VertexRole::Core | VertexRole::Replicated)
                ));
            }
            for (l, &gid) in p.local_to_global().iter().enumerate() {
                assert_eq!(p.local_id(gid), Some(l as u32));
            }
        }
    }

    #[test]
    fn write_read_round_trip_and_tamper_detection() {
        let (g, _) = generate_synthetic(150, 2, 3.0, 4).unwrap();
        let ps = neighborhood_expand(&vertex_cut_partition(&g, 3, 6).unwrap(), &g, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_partitions(&ps, dir.path()).unwrap();
        let back = read_partitions(dir.path()).unwrap();
        assert_eq!(back, ps);
        back.verify_provenance(&g, 2).unwrap();
        assert!(matches!(back.verify_provenance(&g, 1), Err(Error::Provenance(_))));

        let meta = fs::read_to_string(dir.path().join("meta")).unwrap();
        fs::write(dir.path().join("meta"), meta.replace("hops=2", "hops=1")).unwrap();
        assert!(matches!(read_partitions(dir.path()), Err(Error::Provenance(_))));

        fs::remove_file(dir.path().join("p1/support_edges.tsv")).unwrap();
        assert!(matches!(read_partitions(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn provenance_rejects_other_graph() {
        let (g, _) = generate_synthetic(100, 2, 3.0, 4).unwrap();
        let (other, _) = generate_synthetic(100, 2, 3.0, 5).unwrap();
        let ps = neighborhood_expand(&vertex_cut_partition(&g, 2, 0).unwrap(), &g, 1).unwrap();
        assert!(matches!(ps.verify_provenance(&other, 1), Err(Error::Provenance(_))));
    }
}
