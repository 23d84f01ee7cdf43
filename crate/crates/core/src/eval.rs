//! Ranking evaluation for link prediction: filtered candidate sets, rank
//! computation with explicit tie handling, MRR and Hits@k.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Triplet};
use crate::model::{distmult, encode, InputRows, Matrix, ModelParams};
use crate::sampler::{build_compute_graph, LocalGraph};

pub const HITS_AT: [usize; 3] = [1, 3, 10];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Head,
    Tail,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Head => "head",
            Side::Tail => "tail",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TiePolicy {
    /// Average position among tied candidates.
    #[default]
    Mean,
    /// Ties rank below the true entity.
    Optimistic,
    /// Ties rank above the true entity.
    Pessimistic,
}

impl std::str::FromStr for TiePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(TiePolicy::Mean),
            "optimistic" => Ok(TiePolicy::Optimistic),
            "pessimistic" => Ok(TiePolicy::Pessimistic),
            _ => Err(Error::Validation(format!("unknown tie policy '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankRecord {
    pub triplet: Triplet,
    pub corrupted_side: Side,
    pub rank: f64,
    pub num_candidates: usize,
    /// Given-candidates mode only: the true tail was missing from the list.
    pub true_appended: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    pub records: Vec<RankRecord>,
}

impl EvalResult {
    pub fn from_records(records: Vec<RankRecord>) -> Self {
        let n = records.len();
        if n == 0 {
            return EvalResult {
                mrr: 0.0,
                hits: HITS_AT.iter().map(|&k| (k, 0.0)).collect(),
                records,
            };
        }
        let mrr = records.iter().map(|r| 1.0 / r.rank).sum::<f64>() / n as f64;
        let hits = HITS_AT
            .iter()
            .map(|&k| {
                let c = records.iter().filter(|r| r.rank <= k as f64).count();
                (k, c as f64 / n as f64)
            })
            .collect();
        EvalResult { mrr, hits, records }
    }

    pub fn hits_at(&self, k: usize) -> f64 {
        self.hits.get(&k).copied().unwrap_or(0.0)
    }

    /// Metrics restricted to records that corrupted `side`.
    pub fn for_side(&self, side: Side) -> EvalResult {
        EvalResult::from_records(
            self.records
                .iter()
                .filter(|r| r.corrupted_side == side)
                .cloned()
                .collect(),
        )
    }
}

impl fmt::Display for EvalResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "side", "records", "MRR", "Hits@1", "Hits@3", "Hits@10"
        )?;
        let mut row = |name: &str, r: &EvalResult| {
            writeln!(
                f,
                "{:<8} {:>8} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                name,
                r.records.len(),
                r.mrr,
                r.hits_at(1),
                r.hits_at(3),
                r.hits_at(10)
            )
        };
        for side in [Side::Head, Side::Tail] {
            let s = self.for_side(side);
            if !s.records.is_empty() {
                row(side.as_str(), &s)?;
            }
        }
        row("both", self)
    }
}

/// Known triplets indexed for filtering.
#[derive(Clone, Debug, Default)]
pub struct KnownTriples {
    tails: HashMap<(u32, u32), Vec<u32>>,
    heads: HashMap<(u32, u32), Vec<u32>>,
    all: HashSet<Triplet>,
}

impl KnownTriples {
    pub fn new<'a>(triples: impl IntoIterator<Item = &'a Triplet>) -> Self {
        let mut k = KnownTriples::default();
        for t in triples {
            if k.all.insert(*t) {
                k.tails.entry((t.head, t.rel)).or_default().push(t.tail);
                k.heads.entry((t.rel, t.tail)).or_default().push(t.head);
            }
        }
        k
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.all.contains(t)
    }

    /// Entities that, placed on `side` of `t`, give a known triplet.
    pub fn colliding(&self, t: &Triplet, side: Side) -> &[u32] {
        let hit = match side {
            Side::Tail => self.tails.get(&(t.head, t.rel)),
            Side::Head => self.heads.get(&(t.rel, t.tail)),
        };
        hit.map_or(&[], Vec::as_slice)
    }
}

fn substitute(t: &Triplet, side: Side, e: u32) -> Triplet {
    match side {
        Side::Head => Triplet::new(e, t.rel, t.tail),
        Side::Tail => Triplet::new(t.head, t.rel, e),
    }
}

fn true_entity(t: &Triplet, side: Side) -> u32 {
    match side {
        Side::Head => t.head,
        Side::Tail => t.tail,
    }
}

/// Entities whose substitution on `side` yields an unknown triplet, plus the
/// true entity; ascending.
pub fn filtered_candidates(
    test: &Triplet,
    side: Side,
    known: &KnownTriples,
    num_entities: usize,
) -> Vec<u32> {
    let truth = true_entity(test, side);
    (0..num_entities as u32)
        .filter(|&e| e == truth || !known.contains(&substitute(test, side, e)))
        .collect()
}

/// 1-based rank of `true_entity` among `candidates` by descending score.
pub fn rank_triplet(
    scores: &[f64],
    candidates: &[u32],
    true_entity: u32,
    policy: TiePolicy,
) -> Result<f64> {
    let idx = candidates
        .iter()
        .position(|&c| c == true_entity)
        .ok_or_else(|| {
            Error::Integrity(format!("true entity {true_entity} is not among the candidates"))
        })?;
    let truth = scores[idx];
    let (mut greater, mut ties) = (0usize, 0usize);
    for (i, &s) in scores.iter().enumerate() {
        if i == idx {
            continue;
        }
        if s > truth {
            greater += 1;
        } else if s == truth {
            ties += 1;
        }
    }
    Ok(tie_rank(greater, ties, policy))
}

fn tie_rank(greater: usize, ties: usize, policy: TiePolicy) -> f64 {
    let base = 1.0 + greater as f64;
    match policy {
        TiePolicy::Mean => base + ties as f64 / 2.0,
        TiePolicy::Optimistic => base,
        TiePolicy::Pessimistic => base + ties as f64,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Protocol {
    /// Rank against every non-colliding entity, corrupting head and tail.
    Filtered,
    /// Rank the true tail against a fixed list per evaluated triplet.
    Candidates(Vec<Vec<u32>>),
}

/// Full-graph embeddings for every entity: one compute graph whose seeds
/// are all vertices, over the training adjacency.
pub fn encode_all(
    params: &ModelParams,
    graph: &KnowledgeGraph,
    features: Option<&dyn InputRows>,
) -> Result<Matrix> {
    let n = graph.num_entities();
    if let Some(t) = &params.embedding {
        if t.rows != n {
            return Err(Error::Shape(format!(
                "embedding table has {} rows for {n} entities",
                t.rows
            )));
        }
    }
    let local = LocalGraph::new(n, n, graph.num_relations(), graph.edges().to_vec(), vec![])?;
    let seeds: Vec<u32> = (0..n as u32).collect();
    let cg = build_compute_graph(&seeds, &local, params.config.num_layers)?;
    encode(params, &cg, features)
}

/// Ranks `triples` with precomputed entity embeddings (row = entity id).
pub fn evaluate_embeddings(
    embeddings: &Matrix,
    params: &ModelParams,
    triples: &[Triplet],
    known: &KnownTriples,
    protocol: &Protocol,
    policy: TiePolicy,
) -> Result<EvalResult> {
    let n = embeddings.rows;
    for t in triples {
        if t.head as usize >= n || t.tail as usize >= n {
            return Err(Error::Reference(format!("triplet {t} outside 0..{n}")));
        }
        if t.rel as usize >= params.config.num_relations {
            return Err(Error::Reference(format!("triplet {t} has unknown relation")));
        }
    }
    if let Protocol::Candidates(lists) = protocol {
        if lists.len() != triples.len() {
            return Err(Error::Validation(format!(
                "{} candidate lists for {} triplets",
                lists.len(),
                triples.len()
            )));
        }
        if let Some(bad) = lists.iter().flatten().find(|&&c| c as usize >= n) {
            return Err(Error::Validation(format!("candidate {bad} outside 0..{n}")));
        }
    }

    let per_triplet = |(i, t): (usize, &Triplet)| -> Vec<RankRecord> {
        let m = params.decoder_row(t.rel);
        match protocol {
            Protocol::Filtered => [Side::Head, Side::Tail]
                .into_iter()
                .map(|side| {
                    let anchor = match side {
                        Side::Head => embeddings.row(t.tail as usize),
                        Side::Tail => embeddings.row(t.head as usize),
                    };
                    let truth = true_entity(t, side);
                    let truth_score = distmult(anchor, m, embeddings.row(truth as usize));
                    let mut excluded: Vec<u32> = known
                        .colliding(t, side)
                        .iter()
                        .copied()
                        .filter(|&e| e != truth)
                        .collect();
                    excluded.sort_unstable();
                    let (mut greater, mut ties) = (0usize, 0usize);
                    for e in 0..n as u32 {
                        if e == truth || excluded.binary_search(&e).is_ok() {
                            continue;
                        }
                        let s = distmult(anchor, m, embeddings.row(e as usize));
                        if s > truth_score {
                            greater += 1;
                        } else if s == truth_score {
                            ties += 1;
                        }
                    }
                    RankRecord {
                        triplet: *t,
                        corrupted_side: side,
                        rank: tie_rank(greater, ties, policy),
                        num_candidates: n - excluded.len(),
                        true_appended: false,
                    }
                })
                .collect(),
            Protocol::Candidates(lists) => {
                let mut cands = lists[i].clone();
                let appended = !cands.contains(&t.tail);
                if appended {
                    cands.push(t.tail);
                }
                let head = embeddings.row(t.head as usize);
                let scores: Vec<f64> = cands
                    .iter()
                    .map(|&c| distmult(head, m, embeddings.row(c as usize)))
                    .collect();
                let rank = rank_triplet(&scores, &cands, t.tail, policy)
                    .expect("true tail is always among the candidates");
                vec![RankRecord {
                    triplet: *t,
                    corrupted_side: Side::Tail,
                    rank,
                    num_candidates: cands.len(),
                    true_appended: appended,
                }]
            }
        }
    };
    let records: Vec<RankRecord> = triples
        .par_iter()
        .enumerate()
        .flat_map_iter(per_triplet)
        .collect();
    Ok(EvalResult::from_records(records))
}

/// Encodes the full training graph and ranks `triples`.
pub fn evaluate(
    params: &ModelParams,
    graph: &KnowledgeGraph,
    triples: &[Triplet],
    known: &KnownTriples,
    protocol: &Protocol,
    policy: TiePolicy,
) -> Result<EvalResult> {
    let emb = encode_all(params, graph, graph.features().map(|f| f as &dyn InputRows))?;
    evaluate_embeddings(&emb, params, triples, known, protocol, policy)
}

/// Reads `test_index<TAB>c1,c2,...` lines into one list per evaluated
/// triplet.
pub fn read_candidates(path: &Path, num_triples: usize) -> Result<Vec<Vec<u32>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lists: Vec<Option<Vec<u32>>> = vec![None; num_triples];
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_owned(),
            line: lineno + 1,
            msg,
        };
        let (idx, rest) = line
            .split_once('\t')
            .ok_or_else(|| err("expected `index<TAB>candidates`".into()))?;
        let idx: usize = idx.trim().parse().map_err(|_| err(format!("bad index '{idx}'")))?;
        let cands = rest
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<u32>().map_err(|_| err(format!("bad candidate '{s}'"))))
            .collect::<Result<Vec<_>>>()?;
        let slot = lists.get_mut(idx).ok_or_else(|| {
            Error::Validation(format!(
                "candidate line for triplet {idx}, but only {num_triples} are evaluated"
            ))
        })?;
        if slot.replace(cands).is_some() {
            return Err(err(format!("duplicate candidate line for triplet {idx}")));
        }
    }
    lists
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::Validation(format!("no candidates for triplet {i}"))))
        .collect()
}

/// One line per rank record, then a `#`-prefixed summary block.
pub fn write_results(result: &EvalResult, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "# head\trel\ttail\tside\trank\tnum_candidates\ttrue_appended").map_err(io)?;
    for r in &result.records {
        let t = r.triplet;
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            t.head,
            t.rel,
            t.tail,
            r.corrupted_side.as_str(),
            r.rank,
            r.num_candidates,
            r.true_appended as u8
        )
        .map_err(io)?;
    }
    writeln!(w, "# records={}", result.records.len()).map_err(io)?;
    writeln!(w, "# mrr={}", result.mrr).map_err(io)?;
    for (k, v) in &result.hits {
        writeln!(w, "# hits@{k}={v}").map_err(io)?;
    }
    for side in [Side::Head, Side::Tail] {
        let s = result.for_side(side);
        if !s.records.is_empty() {
            writeln!(w, "# {}_mrr={}", side.as_str(), s.mrr).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(rank: f64) -> RankRecord {
        RankRecord {
            triplet: Triplet::new(0, 0, 1),
            corrupted_side: Side::Tail,
            rank,
            num_candidates: 10,
            true_appended: false,
        }
    }

    #[test]
    fn all_rank_one() {
        let r = EvalResult::from_records(vec![record(1.0); 4]);
        assert_eq!(r.mrr, 1.0);
        assert_eq!(r.hits_at(1), 1.0);
    }

    #[test]
    fn ranks_one_two_four() {
        let r = EvalResult::from_records(vec![record(1.0), record(2.0), record(4.0)]);
        assert!((r.mrr - 7.0 / 12.0).abs() < 1e-15);
        assert!((r.hits_at(1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.hits_at(3) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.hits_at(10), 1.0);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_triplet(&[1.0, 9.0, 3.0], &[0, 1, 2], 1, TiePolicy::Mean).unwrap(), 1.0);
        assert_eq!(rank_triplet(&[5.0, 4.0, 3.0], &[0, 1, 2], 1, TiePolicy::Mean).unwrap(), 2.0);
        let tied = [7.0, 7.0, 1.0];
        assert_eq!(rank_triplet(&tied, &[0, 1, 2], 0, TiePolicy::Mean).unwrap(), 1.5);
        assert_eq!(rank_triplet(&tied, &[0, 1, 2], 0, TiePolicy::Optimistic).unwrap(), 1.0);
        assert_eq!(rank_triplet(&tied, &[0, 1, 2], 0, TiePolicy::Pessimistic).unwrap(), 2.0);
        assert!(matches!(
            rank_triplet(&[1.0], &[3], 4, TiePolicy::Mean),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn filter_excludes_known_collisions() {
        let known = KnownTriples::new(&[Triplet::new(0, 0, 1), Triplet::new(0, 0, 2)]);
        let c = filtered_candidates(&Triplet::new(0, 0, 1), Side::Tail, &known, 4);
        assert_eq!(c, vec![0, 1, 3]);
        let none = KnownTriples::new(&[Triplet::new(0, 0, 1)]);
        assert_eq!(
            filtered_candidates(&Triplet::new(0, 0, 1), Side::Head, &none, 4),
            vec![0, 1, 2, 3]
        );
    }

    #[test]
    fn candidates_file_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.tsv");
        fs::write(&p, "0\t1,2,3\n1\t4\n").unwrap();
        assert_eq!(read_candidates(&p, 2).unwrap(), vec![vec![1, 2, 3], vec![4]]);
        assert!(matches!(read_candidates(&p, 3), Err(Error::Validation(_))));
        assert!(matches!(read_candidates(&p, 1), Err(Error::Validation(_))));
    }
}
