//! Partition-local negative sampling, edge mini-batches, and the layered
//! dependency graph each mini-batch needs for message passing.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Triplet;
use crate::partition::Partition;

/// Rejection-sampling budget per negative.
pub const MAX_SAMPLING_ATTEMPTS: usize = 100;

/// A partition re-indexed to local ids, as one worker sees it.
///
/// Local ids `0..num_endpoints` are the core-edge endpoints.
#[derive(Clone, Debug)]
pub struct LocalGraph {
    pub num_vertices: usize,
    pub num_endpoints: usize,
    pub num_relations: usize,
    /// Positive training edges.
    pub core: Vec<Triplet>,
    /// Core edges followed by support edges.
    pub edges: Vec<Triplet>,
    positives: HashSet<Triplet>,
}

impl LocalGraph {
    pub fn new(
        num_vertices: usize,
        num_endpoints: usize,
        num_relations: usize,
        core: Vec<Triplet>,
        support: Vec<Triplet>,
    ) -> Result<Self> {
        let edges: Vec<Triplet> = core.iter().chain(&support).copied().collect();
        for t in &edges {
            if t.head as usize >= num_vertices || t.tail as usize >= num_vertices {
                return Err(Error::Integrity(format!(
                    "local edge {t} outside 0..{num_vertices}"
                )));
            }
            if t.rel as usize >= num_relations {
                return Err(Error::Integrity(format!("local edge {t} has unknown relation")));
            }
        }
        if core
            .iter()
            .any(|t| t.head as usize >= num_endpoints || t.tail as usize >= num_endpoints)
        {
            return Err(Error::Integrity(
                "core edge endpoint outside the endpoint id range".into(),
            ));
        }
        let positives = edges.iter().copied().collect();
        Ok(LocalGraph {
            num_vertices,
            num_endpoints,
            num_relations,
            core,
            edges,
            positives,
        })
    }

    pub fn from_partition(p: &Partition, num_relations: usize) -> Result<Self> {
        let core = p.local_core_edges();
        let all = p.local_edges();
        let support = all[core.len()..].to_vec();
        LocalGraph::new(p.num_vertices(), p.num_endpoints(), num_relations, core, support)
    }

    /// Is `t` a core or support edge of this partition?
    pub fn is_positive(&self, t: &Triplet) -> bool {
        self.positives.contains(t)
    }
}

/// A training example; `label` is 1 for positives and 0 for negatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LabeledEdge {
    pub triplet: Triplet,
    pub label: u8,
}

impl LabeledEdge {
    pub fn positive(triplet: Triplet) -> Self {
        LabeledEdge { triplet, label: 1 }
    }

    pub fn negative(triplet: Triplet) -> Self {
        LabeledEdge { triplet, label: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMiniBatch {
    pub edges: Vec<LabeledEdge>,
    /// Sorted, deduplicated endpoints of `edges`.
    pub seed_vertices: Vec<u32>,
}

impl EdgeMiniBatch {
    pub fn new(edges: Vec<LabeledEdge>) -> Self {
        let mut seed_vertices: Vec<u32> = edges
            .iter()
            .flat_map(|e| [e.triplet.head, e.triplet.tail])
            .collect();
        seed_vertices.sort_unstable();
        seed_vertices.dedup();
        EdgeMiniBatch {
            edges,
            seed_vertices,
        }
    }
}

/// Corrupts each core edge `negatives_per_positive` times, replacing head or
/// tail (probability 1/2 each) with a uniformly drawn core-edge endpoint.
/// Candidates that are local positives, or that would be self-loops, are
/// redrawn.
pub fn sample_negatives<R: Rng + ?Sized>(
    graph: &LocalGraph,
    negatives_per_positive: usize,
    rng: &mut R,
) -> Result<Vec<LabeledEdge>> {
    let mut out = Vec::with_capacity(graph.core.len() * negatives_per_positive);
    if negatives_per_positive == 0 {
        return Ok(out);
    }
    if graph.num_endpoints < 2 {
        return Err(Error::Sampling {
            edge: graph.core.first().copied().unwrap_or(Triplet::new(0, 0, 0)),
            msg: "partition has fewer than two core vertices".into(),
        });
    }
    let n = graph.num_endpoints as u32;
    for &t in &graph.core {
        for _ in 0..negatives_per_positive {
            let mut found = None;
            for _ in 0..MAX_SAMPLING_ATTEMPTS {
                let e = rng.gen_range(0..n);
                let cand = if rng.gen_bool(0.5) {
                    Triplet::new(e, t.rel, t.tail)
                } else {
                    Triplet::new(t.head, t.rel, e)
                };
                if cand.head != cand.tail && !graph.is_positive(&cand) {
                    found = Some(cand);
                    break;
                }
            }
            let cand = found.ok_or_else(|| Error::Sampling {
                edge: t,
                msg: format!("no valid corruption in {MAX_SAMPLING_ATTEMPTS} attempts"),
            })?;
            out.push(LabeledEdge::negative(cand));
        }
    }
    Ok(out)
}

/// Number of batches of size `batch_size` needed to cover `n` edges.
pub fn natural_batch_count(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size.max(1))
}

/// Shuffles positives and negatives together and cuts them into batches of
/// at most `batch_size`. With `num_batches` set, the shuffled stream wraps
/// around (or is cut short) so that exactly that many full-size batches come
/// out.
pub fn make_batches<R: Rng + ?Sized>(
    positives: &[LabeledEdge],
    negatives: &[LabeledEdge],
    batch_size: usize,
    rng: &mut R,
    num_batches: Option<usize>,
) -> Result<Vec<EdgeMiniBatch>> {
    if batch_size == 0 {
        return Err(Error::Validation("batch size must be >= 1".into()));
    }
    let mut stream: Vec<LabeledEdge> = positives.iter().chain(negatives).copied().collect();
    stream.shuffle(rng);
    let batches = match num_batches {
        None => stream
            .chunks(batch_size)
            .map(|c| EdgeMiniBatch::new(c.to_vec()))
            .collect(),
        Some(_) if stream.is_empty() => {
            return Err(Error::Validation(
                "cannot fill a fixed number of batches from an empty edge stream".into(),
            ))
        }
        Some(k) => (0..k)
            .map(|b| {
                let edges = (0..batch_size)
                    .map(|i| stream[(b * batch_size + i) % stream.len()])
                    .collect();
                EdgeMiniBatch::new(edges)
            })
            .collect(),
    };
    Ok(batches)
}

/// Relation id used for self-loop entries: `2 * num_relations`.
pub fn self_loop_relation(num_relations: usize) -> u32 {
    2 * num_relations as u32
}

/// One message: `target` aggregates `source` under relation `rel`, scaled
/// by `norm`. `target`/`source` index [`ComputeGraph::vertices`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgEdge {
    pub target: u32,
    pub rel: u32,
    pub source: u32,
    pub norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CgLayer {
    pub edges: Vec<CgEdge>,
}

/// Layered n-hop dependency graph of a set of seed vertices.
///
/// `vertices` is ordered so that its first `layer_sizes[k]` entries are the
/// vertices within `k` hops of the seeds; the first `layer_sizes[0]` are the
/// seeds themselves, ascending. `layers[k]` computes representations for
/// the first `layer_sizes[k]` vertices from the first `layer_sizes[k + 1]`,
/// so `layers[0]` is the output layer.
///
/// Relations `0..R` are forward edges, `R..2R` their inverses, and `2R` the
/// self-loop.
#[derive(Clone, Debug, PartialEq)]
pub struct ComputeGraph {
    pub vertices: Vec<u32>,
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<CgLayer>,
    pub num_relations: usize,
}

impl ComputeGraph {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn seeds(&self) -> &[u32] {
        &self.vertices[..self.layer_sizes[0]]
    }

    /// Vertices whose inputs the forward pass reads.
    pub fn input_vertices(&self) -> &[u32] {
        &self.vertices[..*self.layer_sizes.last().unwrap()]
    }

    /// Row of `vertex` among the seed outputs.
    pub fn seed_index(&self, vertex: u32) -> Option<usize> {
        self.seeds().binary_search(&vertex).ok()
    }

    /// Active vertex set of layer `k` (0 = output).
    pub fn layer_vertex_set(&self, k: usize) -> &[u32] {
        &self.vertices[..self.layer_sizes[k]]
    }
}

/// Sets `norm = 1 / c` where `c` counts the edges sharing the entry's
/// target and relation.
fn normalize(edges: &mut [CgEdge], targets: usize) {
    let mut start = vec![0u32; targets + 1];
    for e in edges.iter() {
        start[e.target as usize + 1] += 1;
    }
    for i in 0..targets {
        start[i + 1] += start[i];
    }
    let mut fill = start.clone();
    let mut by_target = vec![0u32; edges.len()];
    for (i, e) in edges.iter().enumerate() {
        let slot = &mut fill[e.target as usize];
        by_target[*slot as usize] = i as u32;
        *slot += 1;
    }
    let mut rels: Vec<(u32, u32)> = Vec::new();
    for t in 0..targets {
        let group = &by_target[start[t] as usize..start[t + 1] as usize];
        rels.clear();
        rels.extend(group.iter().map(|&i| (edges[i as usize].rel, i)));
        rels.sort_unstable();
        for run in rels.chunk_by(|a, b| a.0 == b.0) {
            let norm = 1.0 / run.len() as f64;
            for &(_, i) in run {
                edges[i as usize].norm = norm;
            }
        }
    }
}

/// Builds the `hops`-layer dependency graph of `seeds` over the bidirectional
/// view of `graph`. Each hop is one sweep over the partition's edge list.
pub fn build_compute_graph(seeds: &[u32], graph: &LocalGraph, hops: usize) -> Result<ComputeGraph> {
    let mut seeds = seeds.to_vec();
    seeds.sort_unstable();
    seeds.dedup();
    if let Some(&bad) = seeds.iter().find(|&&v| v as usize >= graph.num_vertices) {
        return Err(Error::Integrity(format!(
            "seed vertex {bad} is not in the partition ({} vertices)",
            graph.num_vertices
        )));
    }
    let r = graph.num_relations as u32;
    let self_rel = self_loop_relation(graph.num_relations);
    let mut pos = vec![u32::MAX; graph.num_vertices];
    for (i, &v) in seeds.iter().enumerate() {
        pos[v as usize] = i as u32;
    }
    let mut vertices = seeds;
    let mut layer_sizes = vec![vertices.len()];
    let mut layers = Vec::with_capacity(hops);

    for _ in 0..hops {
        let active = vertices.len() as u32;
        let mut edges = Vec::new();
        let visit = |v: u32, vertices: &mut Vec<u32>, pos: &mut [u32]| {
            if pos[v as usize] == u32::MAX {
                pos[v as usize] = vertices.len() as u32;
                vertices.push(v);
            }
            pos[v as usize]
        };
        for t in &graph.edges {
            let (ph, pt) = (pos[t.head as usize], pos[t.tail as usize]);
            if ph < active {
                let source = visit(t.tail, &mut vertices, &mut pos);
                edges.push(CgEdge {
                    target: ph,
                    rel: t.rel,
                    source,
                    norm: 1.0,
                });
            }
            if pt < active {
                let source = visit(t.head, &mut vertices, &mut pos);
                edges.push(CgEdge {
                    target: pt,
                    rel: t.rel + r,
                    source,
                    norm: 1.0,
                });
            }
        }
        normalize(&mut edges, active as usize);
        edges.extend((0..active).map(|i| CgEdge {
            target: i,
            rel: self_rel,
            source: i,
            norm: 1.0,
        }));
        layer_sizes.push(vertices.len());
        layers.push(CgLayer { edges });
    }
    Ok(ComputeGraph {
        vertices,
        layer_sizes,
        layers,
        num_relations: graph.num_relations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labeled(n: usize) -> Vec<LabeledEdge> {
        (0..n as u32)
            .map(|i| LabeledEdge::positive(Triplet::new(i, 0, i + 1)))
            .collect()
    }

    #[test]
    fn zero_negatives() {
        let g = LocalGraph::new(3, 3, 1, vec![Triplet::new(0, 0, 1)], vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_negatives(&g, 0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn exhausted_corruptions_name_the_edge() {
        // Both legal-looking corruptions of (0,0,1) are self-loops.
        let g = LocalGraph::new(2, 2, 1, vec![Triplet::new(0, 0, 1)], vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        match sample_negatives(&g, 1, &mut rng) {
            Err(Error::Sampling { edge, .. }) => assert_eq!(edge, Triplet::new(0, 0, 1)),
            other => panic!("expected sampling error, got {other:?}"),
        }
    }

    #[test]
    fn batches_chunk_and_wrap() {
        let edges = labeled(10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = make_batches(&edges, &[], 4, &mut rng, None).unwrap();
        assert_eq!(b.iter().map(|x| x.edges.len()).collect::<Vec<_>>(), [4, 4, 2]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = make_batches(&edges, &[], 4, &mut rng, Some(4)).unwrap();
        assert_eq!(w.iter().map(|x| x.edges.len()).collect::<Vec<_>>(), [4, 4, 4, 4]);
        let stream: Vec<_> = w.iter().flat_map(|x| x.edges.clone()).collect();
        let first: HashSet<_> = stream[..10].iter().collect();
        assert_eq!(first.len(), 10);
        assert_eq!(stream[10..], stream[..6]);
        // same shuffle as the unforced call
        let plain: Vec<_> = b.iter().flat_map(|x| x.edges.clone()).collect();
        assert_eq!(stream[..10], plain[..]);
    }

    #[test]
    fn full_batch_is_one_batch() {
        let edges = labeled(7);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = make_batches(&edges, &[], 7, &mut rng, None).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].seed_vertices, (0..8).collect::<Vec<u32>>());
    }

    #[test]
    fn zero_hop_graph_is_just_the_seeds() {
        let g = LocalGraph::new(4, 4, 1, vec![Triplet::new(0, 0, 1)], vec![]).unwrap();
        let cg = build_compute_graph(&[1, 0], &g, 0).unwrap();
        assert_eq!(cg.vertices, vec![0, 1]);
        assert!(cg.layers.is_empty());
        assert_eq!(cg.layer_sizes, vec![2]);
    }

    #[test]
    fn unknown_seed_is_integrity_error() {
        let g = LocalGraph::new(2, 2, 1, vec![Triplet::new(0, 0, 1)], vec![]).unwrap();
        assert!(matches!(
            build_compute_graph(&[5], &g, 1),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn normalization_counts_per_relation() {
        // vertex 0 receives two forward-relation messages and one inverse
        let g = LocalGraph::new(
            4,
            4,
            1,
            vec![
                Triplet::new(0, 0, 1),
                Triplet::new(0, 0, 2),
                Triplet::new(3, 0, 0),
            ],
            vec![],
        )
        .unwrap();
        let cg = build_compute_graph(&[0], &g, 1).unwrap();
        let into0: Vec<_> = cg.layers[0].edges.iter().filter(|e| e.target == 0).collect();
        assert_eq!(into0.len(), 4);
        for e in into0 {
            let expected = match e.rel {
                0 => 0.5,
                _ => 1.0,
            };
            assert_eq!(e.norm, expected);
        }
    }
}
