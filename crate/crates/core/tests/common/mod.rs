//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use kgdist::graph::{generate_synthetic, Features, KnowledgeGraph, Triplet};
use kgdist::model::{
    encode, init_params, loss_and_grad, InputMode, InputRows, MappedFeatures, Matrix,
    ModelConfig, ModelParams,
};
use kgdist::partition::{neighborhood_expand, partition, Partition, PartitionSet, PartitionerKind};
use kgdist::sampler::{
    build_compute_graph, make_batches, sample_negatives, EdgeMiniBatch, LabeledEdge, LocalGraph,
};
use kgdist::trainer::{Optimizer, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random multi-relational graph without self-loops or duplicate triplets.
pub fn random_graph(seed: u64, max_vertices: usize, max_relations: usize) -> KnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(6..=max_vertices);
    let r = rng.gen_range(1..=max_relations);
    let m = rng.gen_range(n..=3 * n);
    let mut seen = HashSet::new();
    let mut edges = Vec::new();
    while edges.len() < m {
        let h = rng.gen_range(0..n as u32);
        let t = rng.gen_range(0..n as u32);
        let rel = rng.gen_range(0..r as u32);
        let e = Triplet::new(h, rel, t);
        if h != t && seen.insert(e) {
            edges.push(e);
        }
    }
    KnowledgeGraph::new(n, r, edges).unwrap()
}

pub fn random_features(rows: usize, dim: usize, seed: u64) -> Features {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Features::new(rows, dim, data).unwrap()
}

pub fn path_graph(n: u32) -> KnowledgeGraph {
    let edges = (0..n - 1).map(|i| Triplet::new(i, 0, i + 1)).collect();
    KnowledgeGraph::new(n as usize, 1, edges).unwrap()
}

pub fn star_graph(leaves: u32) -> KnowledgeGraph {
    let edges = (1..=leaves).map(|i| Triplet::new(0, i % 2, i)).collect();
    KnowledgeGraph::new(leaves as usize + 1, 2, edges).unwrap()
}

pub fn two_triangles() -> KnowledgeGraph {
    let e = |h, r, t| Triplet::new(h, r, t);
    KnowledgeGraph::new(
        6,
        2,
        vec![e(0, 0, 1), e(1, 1, 2), e(2, 0, 0), e(3, 1, 4), e(4, 0, 5), e(5, 1, 3), e(2, 1, 3), e(5, 0, 0)],
    )
    .unwrap()
}

/// Small graphs used across the partition properties.
pub fn partition_fixtures() -> Vec<(String, KnowledgeGraph)> {
    let mut out = vec![
        ("path-12".to_string(), path_graph(12)),
        ("star-9".to_string(), star_graph(9)),
        ("two-triangles".to_string(), two_triangles()),
    ];
    for s in 0..4 {
        out.push((format!("random-{s}"), random_graph(100 + s, 30, 3)));
    }
    for s in 0..3 {
        let (g, _) = generate_synthetic(200, 3, 4.0, s).unwrap();
        out.push((format!("synthetic-{s}"), g));
    }
    out
}

pub fn expanded(
    g: &KnowledgeGraph,
    kind: PartitionerKind,
    parts: usize,
    hops: usize,
    seed: u64,
) -> PartitionSet {
    let ps = partition(g, kind, parts, seed).unwrap();
    neighborhood_expand(&ps, g, hops).unwrap()
}

/// Bidirectional hop distances from `root`, up to `limit`.
pub fn bfs_distances(g: &KnowledgeGraph, root: u32, limit: usize) -> HashMap<u32, usize> {
    let mut adj: HashMap<u32, Vec<u32>> = HashMap::new();
    for t in g.edges() {
        adj.entry(t.head).or_default().push(t.tail);
        adj.entry(t.tail).or_default().push(t.head);
    }
    let mut dist = HashMap::from([(root, 0usize)]);
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        let d = dist[&u];
        if d == limit {
            continue;
        }
        for &w in adj.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
            if let std::collections::hash_map::Entry::Vacant(slot) = dist.entry(w) {
                slot.insert(d + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Edges and vertices an `hops`-layer encoder reads to embed `root`: every
/// vertex within `hops`, and every edge touching a vertex within `hops - 1`.
pub fn brute_closure(g: &KnowledgeGraph, root: u32, hops: usize) -> (BTreeSet<u32>, BTreeSet<Triplet>) {
    let dist = bfs_distances(g, root, hops);
    let vertices: BTreeSet<u32> = dist.keys().copied().collect();
    let edges = if hops == 0 {
        BTreeSet::new()
    } else {
        g.edges()
            .iter()
            .filter(|t| {
                dist.get(&t.head).is_some_and(|&d| d < hops) || dist.get(&t.tail).is_some_and(|&d| d < hops)
            })
            .copied()
            .collect()
    };
    (vertices, edges)
}

/// Replication factor recomputed from partition edge lists.
pub fn brute_replication_factor(ps: &PartitionSet) -> f64 {
    let covered: usize = ps
        .partitions
        .iter()
        .map(|p| {
            p.core_edges
                .iter()
                .chain(&p.support_edges)
                .flat_map(|t| [t.head, t.tail])
                .collect::<HashSet<_>>()
                .len()
        })
        .sum();
    covered as f64 / ps.num_entities as f64
}

/// Dense per-vertex RGCN forward pass over every edge of `edges`, written
/// directly from the layer definition with full relation matrices.
pub fn naive_encode(
    params: &ModelParams,
    num_vertices: usize,
    edges: &[Triplet],
    inputs: &dyn Fn(usize) -> Vec<f64>,
) -> Vec<Vec<f64>> {
    let cfg = &params.config;
    let r = cfg.num_relations as u32;
    let mut out_count: HashMap<(u32, u32), usize> = HashMap::new();
    let mut in_count: HashMap<(u32, u32), usize> = HashMap::new();
    for t in edges {
        *out_count.entry((t.head, t.rel)).or_default() += 1;
        *in_count.entry((t.tail, t.rel)).or_default() += 1;
    }
    let mut h: Vec<Vec<f64>> = (0..num_vertices).map(inputs).collect();
    for l in 0..cfg.num_layers {
        let (din, dout) = (cfg.dims[l], cfg.dims[l + 1]);
        let mul = |x: &[f64], w: &Matrix| -> Vec<f64> {
            (0..dout)
                .map(|o| (0..din).map(|i| x[i] * w.data[i * dout + o]).sum())
                .collect()
        };
        let self_w = params.relation_weight(l, 2 * r);
        let mut next: Vec<Vec<f64>> = h.iter().map(|x| mul(x, &self_w)).collect();
        for t in edges {
            let fwd = params.relation_weight(l, t.rel);
            let c = out_count[&(t.head, t.rel)] as f64;
            for (o, m) in next[t.head as usize].iter_mut().zip(mul(&h[t.tail as usize], &fwd)) {
                *o += m / c;
            }
            let inv = params.relation_weight(l, t.rel + r);
            let c = in_count[&(t.tail, t.rel)] as f64;
            for (o, m) in next[t.tail as usize].iter_mut().zip(mul(&h[t.head as usize], &inv)) {
                *o += m / c;
            }
        }
        if l + 1 < cfg.num_layers {
            for row in &mut next {
                for x in row {
                    *x = x.max(0.0);
                }
            }
        }
        h = next;
    }
    h
}

/// Mean-tie filtered rank of the true entity, by enumeration.
pub fn brute_rank(
    emb: &Matrix,
    params: &ModelParams,
    t: &Triplet,
    corrupt_head: bool,
    known: &HashSet<Triplet>,
) -> f64 {
    let score = |h: u32, tl: u32| {
        let (a, m, b) = (emb.row(h as usize), params.decoder_row(t.rel), emb.row(tl as usize));
        let mut s = 0.0;
        for k in 0..a.len() {
            s += a[k] * m[k] * b[k];
        }
        s
    };
    let truth = score(t.head, t.tail);
    let (mut greater, mut ties) = (0usize, 0usize);
    for e in 0..emb.rows as u32 {
        let cand = if corrupt_head {
            Triplet::new(e, t.rel, t.tail)
        } else {
            Triplet::new(t.head, t.rel, e)
        };
        if cand == *t || known.contains(&cand) {
            continue;
        }
        let s = score(cand.head, cand.tail);
        if s > truth {
            greater += 1;
        } else if s == truth {
            ties += 1;
        }
    }
    1.0 + greater as f64 + ties as f64 / 2.0
}

/// Upper `alpha` quantile of chi-square with `df` degrees of freedom
/// (Wilson-Hilferty).
pub fn chi_square_critical(df: usize, z_alpha: f64) -> f64 {
    let k = df as f64;
    let a = 2.0 / (9.0 * k);
    k * (1.0 - a + z_alpha * a.sqrt()).powi(3)
}

pub struct Fixture {
    pub graph: KnowledgeGraph,
    pub params: ModelParams,
    pub features: Option<Features>,
}

/// Up to 30 vertices, 2 layers, 2 bases.
pub fn model_fixture(seed: u64, mode: InputMode) -> Fixture {
    let graph = random_graph(seed, 30, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let mut cfg = ModelConfig::uniform(2, 4, 2, graph.num_relations(), mode);
    cfg.dims = vec![3, 5, 4];
    let params = init_params(&cfg, graph.num_entities(), &mut rng).unwrap();
    let features = (mode == InputMode::Features).then(|| random_features(graph.num_entities(), 3, seed));
    Fixture {
        graph,
        params,
        features,
    }
}

/// A labeled batch over the whole fixture graph: every edge as a positive
/// plus one corruption each.
pub fn full_batch(g: &KnowledgeGraph, seed: u64) -> EdgeMiniBatch {
    let n = g.num_entities() as u32;
    let local = LocalGraph::new(g.num_entities(), g.num_entities(), g.num_relations(), g.edges().to_vec(), vec![]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let neg = sample_negatives(&local, 1, &mut rng).unwrap();
    assert!(neg.iter().all(|e| e.triplet.head < n && e.triplet.tail < n));
    let mut edges: Vec<LabeledEdge> = g.edges().iter().copied().map(LabeledEdge::positive).collect();
    edges.extend(neg);
    EdgeMiniBatch::new(edges)
}

pub fn whole_graph_local(g: &KnowledgeGraph) -> LocalGraph {
    LocalGraph::new(g.num_entities(), g.num_entities(), g.num_relations(), g.edges().to_vec(), vec![]).unwrap()
}

pub fn batch_loss(fx: &Fixture, params: &ModelParams, batch: &EdgeMiniBatch) -> (f64, kgdist::model::Gradients) {
    let local = whole_graph_local(&fx.graph);
    let cg = build_compute_graph(&batch.seed_vertices, &local, params.config.num_layers).unwrap();
    let inputs = fx.features.as_ref().map(|f| f as &dyn InputRows);
    loss_and_grad(params, batch, &cg, inputs, None).unwrap()
}

/// Largest violation of `|a - n| <= rel * max(|a|, |n|) + abs` between the
/// analytic gradient and central differences, over every coordinate.
pub fn gradient_check(fx: &Fixture, batch: &EdgeMiniBatch, h: f64, rel: f64, abs: f64) -> (usize, usize, f64) {
    let (_, grads) = batch_loss(fx, &fx.params, batch);
    let mut checked = 0;
    let mut failures = 0;
    let mut worst = 0.0f64;
    let mut compare = |a: f64, n: f64| {
        checked += 1;
        let err = (a - n).abs();
        let bound = rel * a.abs().max(n.abs()) + abs;
        if err > bound {
            failures += 1;
        }
        worst = worst.max(err / (a.abs().max(n.abs()).max(abs)));
    };
    for i in 0..fx.params.dense.len() {
        let mut p = fx.params.clone();
        p.dense[i] += h;
        let up = batch_loss(fx, &p, batch).0;
        p.dense[i] -= 2.0 * h;
        let down = batch_loss(fx, &p, batch).0;
        compare(grads.dense[i], (up - down) / (2.0 * h));
    }
    if let Some(table) = &fx.params.embedding {
        let sparse = grads.embedding.as_ref().expect("embedding gradient");
        let mut full = Matrix::zeros(table.rows, table.cols);
        for (i, &row) in sparse.rows.iter().enumerate() {
            full.row_mut(row as usize).copy_from_slice(sparse.values.row(i));
        }
        for i in 0..table.data.len() {
            let mut p = fx.params.clone();
            p.embedding.as_mut().unwrap().data[i] += h;
            let up = batch_loss(fx, &p, batch).0;
            p.embedding.as_mut().unwrap().data[i] -= 2.0 * h;
            let down = batch_loss(fx, &p, batch).0;
            compare(full.data[i], (up - down) / (2.0 * h));
        }
    }
    (checked, failures, worst)
}

/// Non-distributed reference loop: one partition, no reduction barrier.
pub fn plain_training_loop(
    p: &Partition,
    graph: &KnowledgeGraph,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> ModelParams {
    let initial = init_params(model, graph.num_entities(), &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
    let mut params = initial.with_embedding_rows(p.local_to_global());
    let local = LocalGraph::from_partition(p, model.num_relations).unwrap();
    let positives: Vec<LabeledEdge> = local.core.iter().copied().map(LabeledEdge::positive).collect();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ p.id as u64);
    for _ in 0..cfg.epochs {
        let neg = sample_negatives(&local, model.negatives_per_positive, &mut rng).unwrap();
        let b = cfg.batch_size.unwrap_or(positives.len() + neg.len());
        let batches = make_batches(&positives, &neg, b, &mut rng, None).unwrap();
        for batch in &batches {
            let cg = build_compute_graph(&batch.seed_vertices, &local, model.num_layers).unwrap();
            let mapped = graph.features().map(|f| MappedFeatures {
                features: f,
                local_to_global: p.local_to_global(),
            });
            let inputs = mapped.as_ref().map(|m| m as &dyn InputRows);
            let (_, g) = loss_and_grad(&params, batch, &cg, inputs, None).unwrap();
            opt.step(&mut params, &g.dense, g.embedding.as_ref()).unwrap();
        }
    }
    // scatter the local table back into global row order
    if let (Some(global), Some(localt)) = (initial.embedding.as_ref(), params.embedding.as_ref()) {
        let mut table = global.clone();
        for (l, &g) in p.local_to_global().iter().enumerate() {
            table.row_mut(g as usize).copy_from_slice(localt.row(l));
        }
        params.embedding = Some(table);
    }
    params
}

/// Random labeled mini-batch drawn from one partition's core edges.
pub fn random_minibatch(local: &LocalGraph, size: usize, rng: &mut ChaCha8Rng) -> EdgeMiniBatch {
    let mut core = local.core.clone();
    core.shuffle(rng);
    core.truncate(size.max(1));
    let mut edges: Vec<LabeledEdge> = core.iter().copied().map(LabeledEdge::positive).collect();
    for t in &core {
        let e = rng.gen_range(0..local.num_endpoints as u32);
        edges.push(LabeledEdge::negative(Triplet::new(t.head, t.rel, e)));
    }
    EdgeMiniBatch::new(edges)
}

/// Encodes the batch seeds through the compute graph and compares against
/// the naive full-partition pass. Returns the worst row-wise relative error.
pub fn compute_graph_vs_full(
    params_global: &ModelParams,
    features: Option<&Features>,
    p: &Partition,
    local: &LocalGraph,
    batch: &EdgeMiniBatch,
) -> f64 {
    let params = params_global.with_embedding_rows(p.local_to_global());
    let mapped = features.map(|f| MappedFeatures {
        features: f,
        local_to_global: p.local_to_global(),
    });
    let inputs = mapped.as_ref().map(|m| m as &dyn InputRows);
    let cg = build_compute_graph(&batch.seed_vertices, local, params.config.num_layers).unwrap();
    let fast = encode(&params, &cg, inputs).unwrap();
    let row_input = |v: usize| -> Vec<f64> {
        match (&params.embedding, features) {
            (Some(t), _) => t.row(v).to_vec(),
            (None, Some(f)) => f.row(p.local_to_global()[v] as usize).to_vec(),
            _ => unreachable!(),
        }
    };
    let full = naive_encode(&params, local.num_vertices, &local.edges, &row_input);
    let mut worst = 0.0f64;
    for (i, &v) in cg.seeds().iter().enumerate() {
        let a = fast.row(i);
        let b = &full[v as usize];
        let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        worst = worst.max(if scale == 0.0 { diff } else { diff / scale });
    }
    worst
}
