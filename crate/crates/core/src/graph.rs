//! Knowledge-graph data model: triplets, adjacency indices, loaders for the
//! tab-separated benchmark format, and a seeded synthetic generator.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One `(head, relation, tail)` edge with dense 0-based ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub head: u32,
    pub rel: u32,
    pub tail: u32,
}

impl Triplet {
    pub const fn new(head: u32, rel: u32, tail: u32) -> Self {
        Triplet { head, rel, tail }
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head, self.rel, self.tail)
    }
}

/// Row-major `rows x dim` matrix of per-vertex input features.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    dim: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Shape(format!(
                "feature buffer holds {} values, expected {rows} x {dim}",
                data.len()
            )));
        }
        Ok(Features { dim, data })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Features {
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.data[v * self.dim..(v + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// String <-> id dictionary for entities or relations.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i as u32).is_some() {
                return Err(Error::Validation(format!("duplicate dictionary name '{n}'")));
            }
        }
        Ok(Vocab { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    /// Reads `id<TAB>name` lines. Ids must cover `0..n` exactly once.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(id), Some(name), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(parse_err(path, lineno, "expected `id<TAB>name`"));
            };
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| parse_err(path, lineno, &format!("bad id '{id}'")))?;
            pairs.push((id, name.to_owned()));
        }
        let mut names = vec![None; pairs.len()];
        for (id, name) in pairs {
            match names.get_mut(id) {
                Some(slot @ None) => *slot = Some(name),
                _ => {
                    return Err(Error::Format {
                        path: path.to_owned(),
                        msg: format!("dictionary ids must be dense 0..n without repeats (id {id})"),
                    })
                }
            }
        }
        Vocab::from_names(names.into_iter().map(Option::unwrap).collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (i, n) in self.names.iter().enumerate() {
            writeln!(w, "{i}\t{n}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, Default)]
pub struct Dictionaries {
    pub entities: Vocab,
    pub relations: Vocab,
}

impl Dictionaries {
    pub fn read(entities: &Path, relations: &Path) -> Result<Self> {
        Ok(Dictionaries {
            entities: Vocab::read(entities)?,
            relations: Vocab::read(relations)?,
        })
    }
}

/// Relational multigraph. Immutable once built.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    num_entities: usize,
    num_relations: usize,
    edges: Vec<Triplet>,
    out_index: Vec<Vec<(u32, u32)>>,
    in_index: Vec<Vec<(u32, u32)>>,
    features: Option<Features>,
    entity_names: Option<Vocab>,
    relation_names: Option<Vocab>,
}

impl KnowledgeGraph {
    pub fn new(num_entities: usize, num_relations: usize, edges: Vec<Triplet>) -> Result<Self> {
        let mut out_index = vec![Vec::new(); num_entities];
        let mut in_index = vec![Vec::new(); num_entities];
        for t in &edges {
            if t.head as usize >= num_entities || t.tail as usize >= num_entities {
                return Err(Error::Reference(format!(
                    "edge {t} references an entity outside 0..{num_entities}"
                )));
            }
            if t.rel as usize >= num_relations {
                return Err(Error::Reference(format!(
                    "edge {t} references a relation outside 0..{num_relations}"
                )));
            }
            out_index[t.head as usize].push((t.rel, t.tail));
            in_index[t.tail as usize].push((t.rel, t.head));
        }
        Ok(KnowledgeGraph {
            num_entities,
            num_relations,
            edges,
            out_index,
            in_index,
            features: None,
            entity_names: None,
            relation_names: None,
        })
    }

    pub fn with_names(mut self, entities: Vocab, relations: Vocab) -> Result<Self> {
        if entities.len() != self.num_entities || relations.len() != self.num_relations {
            return Err(Error::Shape(format!(
                "dictionaries have {}/{} names for {}/{} entities/relations",
                entities.len(),
                relations.len(),
                self.num_entities,
                self.num_relations
            )));
        }
        self.entity_names = Some(entities);
        self.relation_names = Some(relations);
        Ok(self)
    }

    pub fn with_features(mut self, features: Features) -> Result<Self> {
        if features.rows() != self.num_entities && !(features.dim() == 0 && self.num_entities == 0)
        {
            return Err(Error::Shape(format!(
                "feature matrix has {} rows for {} entities",
                features.rows(),
                self.num_entities
            )));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn edges(&self) -> &[Triplet] {
        &self.edges
    }

    pub fn out_edges(&self, v: u32) -> &[(u32, u32)] {
        &self.out_index[v as usize]
    }

    pub fn in_edges(&self, v: u32) -> &[(u32, u32)] {
        &self.in_index[v as usize]
    }

    pub fn features(&self) -> Option<&Features> {
        self.features.as_ref()
    }

    pub fn entity_names(&self) -> Option<&Vocab> {
        self.entity_names.as_ref()
    }

    pub fn relation_names(&self) -> Option<&Vocab> {
        self.relation_names.as_ref()
    }

    /// SHA-256 over entity/relation counts and the ordered edge list.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_entities as u64).to_le_bytes());
        h.update((self.num_relations as u64).to_le_bytes());
        h.update((self.edges.len() as u64).to_le_bytes());
        for t in &self.edges {
            h.update(t.head.to_le_bytes());
            h.update(t.rel.to_le_bytes());
            h.update(t.tail.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Edge-id incidence lists over the bidirectional view: for every vertex,
    /// the indices into [`edges`](Self::edges) of all edges touching it.
    /// A self-loop is listed once.
    pub fn incidence(&self) -> Vec<Vec<u32>> {
        let mut inc = vec![Vec::new(); self.num_entities];
        for (i, t) in self.edges.iter().enumerate() {
            inc[t.head as usize].push(i as u32);
            if t.tail != t.head {
                inc[t.tail as usize].push(i as u32);
            }
        }
        inc
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<Triplet>,
    pub valid: Vec<Triplet>,
    pub test: Vec<Triplet>,
}

impl DatasetSplit {
    pub fn all(&self) -> impl Iterator<Item = &Triplet> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }
}

fn parse_err(path: &Path, lineno: usize, msg: &str) -> Error {
    Error::Parse {
        path: path.to_owned(),
        line: lineno + 1,
        msg: msg.to_owned(),
    }
}

enum Resolver<'a> {
    Auto {
        entities: Vocab,
        relations: Vocab,
    },
    Fixed(&'a Dictionaries),
}

impl Resolver<'_> {
    fn resolve(&mut self, token: &str, entity: bool) -> std::result::Result<u32, String> {
        match self {
            Resolver::Auto {
                entities,
                relations,
            } => Ok(if entity {
                entities.intern(token)
            } else {
                relations.intern(token)
            }),
            Resolver::Fixed(d) => {
                let (vocab, kind) = if entity {
                    (&d.entities, "entity")
                } else {
                    (&d.relations, "relation")
                };
                if let Some(id) = vocab.get(token) {
                    return Ok(id);
                }
                match token.parse::<u32>() {
                    Ok(id) if (id as usize) < vocab.len() => Ok(id),
                    Ok(id) => Err(format!(
                        "{kind} id {id} out of dictionary range 0..{}",
                        vocab.len()
                    )),
                    Err(_) => Err(format!("{kind} '{token}' not in dictionary")),
                }
            }
        }
    }
}

fn read_triples_into(path: &Path, resolver: &mut Resolver<'_>) -> Result<Vec<Triplet>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(parse_err(
                path,
                lineno,
                &format!("expected 3 tab-separated columns, found {}", cols.len()),
            ));
        }
        let reference = |msg: String| {
            Error::Reference(format!("{}:{}: {msg}", path.display(), lineno + 1))
        };
        let head = resolver.resolve(cols[0], true).map_err(reference)?;
        let rel = resolver.resolve(cols[1], false).map_err(reference)?;
        let tail = resolver.resolve(cols[2], true).map_err(reference)?;
        out.push(Triplet { head, rel, tail });
    }
    Ok(out)
}

/// File locations for a benchmark-style dataset.
#[derive(Clone, Debug, Default)]
pub struct DatasetPaths {
    pub train: PathBuf,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub entity_dict: Option<PathBuf>,
    pub relation_dict: Option<PathBuf>,
}

impl DatasetPaths {
    /// `train.txt`, `valid.txt`, `test.txt` and optional `entities.dict` /
    /// `relations.dict` inside `dir`.
    pub fn from_dir(dir: &Path) -> Self {
        let opt = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        DatasetPaths {
            train: dir.join("train.txt"),
            valid: opt("valid.txt"),
            test: opt("test.txt"),
            entity_dict: opt("entities.dict"),
            relation_dict: opt("relations.dict"),
        }
    }
}

/// Loads a single triples file. Every edge lands in `split.train`.
pub fn load_triples(
    path: &Path,
    dicts: Option<&Dictionaries>,
) -> Result<(KnowledgeGraph, DatasetSplit)> {
    load_splits(path, None, None, dicts)
}

/// Loads train/valid/test files. Adjacency is built from train edges only;
/// entity and relation counts span all splits.
pub fn load_dataset(paths: &DatasetPaths) -> Result<(KnowledgeGraph, DatasetSplit)> {
    let dicts = match (&paths.entity_dict, &paths.relation_dict) {
        (Some(e), Some(r)) => Some(Dictionaries::read(e, r)?),
        (None, None) => None,
        _ => {
            return Err(Error::Validation(
                "entity and relation dictionaries must be given together".into(),
            ))
        }
    };
    load_splits(
        &paths.train,
        paths.valid.as_deref(),
        paths.test.as_deref(),
        dicts.as_ref(),
    )
}

fn load_splits(
    train: &Path,
    valid: Option<&Path>,
    test: Option<&Path>,
    dicts: Option<&Dictionaries>,
) -> Result<(KnowledgeGraph, DatasetSplit)> {
    let mut resolver = match dicts {
        Some(d) => Resolver::Fixed(d),
        None => Resolver::Auto {
            entities: Vocab::default(),
            relations: Vocab::default(),
        },
    };
    let mut split = DatasetSplit {
        train: read_triples_into(train, &mut resolver)?,
        ..Default::default()
    };
    if let Some(p) = valid {
        split.valid = read_triples_into(p, &mut resolver)?;
    }
    if let Some(p) = test {
        split.test = read_triples_into(p, &mut resolver)?;
    }
    let (entities, relations) = match resolver {
        Resolver::Auto {
            entities,
            relations,
        } => (entities, relations),
        Resolver::Fixed(d) => (d.entities.clone(), d.relations.clone()),
    };
    let graph = KnowledgeGraph::new(entities.len(), relations.len(), split.train.clone())?
        .with_names(entities, relations)?;
    Ok((graph, split))
}

/// Writes triplets as `head<TAB>relation<TAB>tail`, using names when the graph
/// carries dictionaries.
pub fn write_triples(graph: &KnowledgeGraph, triples: &[Triplet], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let ent = |id: u32| match graph.entity_names() {
        Some(v) => v.names()[id as usize].clone(),
        None => id.to_string(),
    };
    let rel = |id: u32| match graph.relation_names() {
        Some(v) => v.names()[id as usize].clone(),
        None => id.to_string(),
    };
    for t in triples {
        writeln!(w, "{}\t{}\t{}", ent(t.head), rel(t.rel), ent(t.tail))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a dataset directory readable by [`DatasetPaths::from_dir`], always
/// including dictionaries so ids survive the round trip.
pub fn write_dataset(graph: &KnowledgeGraph, split: &DatasetSplit, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_triples(graph, &split.train, &dir.join("train.txt"))?;
    write_triples(graph, &split.valid, &dir.join("valid.txt"))?;
    write_triples(graph, &split.test, &dir.join("test.txt"))?;
    let ids = |n: usize| Vocab::from_names((0..n).map(|i| i.to_string()).collect());
    let entities = match graph.entity_names() {
        Some(v) => v.clone(),
        None => ids(graph.num_entities())?,
    };
    let relations = match graph.relation_names() {
        Some(v) => v.clone(),
        None => ids(graph.num_relations())?,
    };
    entities.write(&dir.join("entities.dict"))?;
    relations.write(&dir.join("relations.dict"))
}

/// Reads `vertex_id v_1 ... v_d` lines, one per entity.
pub fn load_features(path: &Path, graph: KnowledgeGraph) -> Result<KnowledgeGraph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let n = graph.num_entities();
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut dim: Option<usize> = None;
    let mut count = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        let id_tok = toks.next().unwrap_or_default();
        let id: usize = id_tok
            .parse()
            .map_err(|_| parse_err(path, lineno, &format!("bad vertex id '{id_tok}'")))?;
        let vals = toks
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| parse_err(path, lineno, &format!("non-numeric token '{t}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None => dim = Some(vals.len()),
            Some(d) if d != vals.len() => {
                return Err(Error::Shape(format!(
                    "{}:{}: row has {} values, expected {d}",
                    path.display(),
                    lineno + 1,
                    vals.len()
                )))
            }
            _ => {}
        }
        let slot = rows.get_mut(id).ok_or_else(|| {
            Error::Shape(format!(
                "{}:{}: vertex id {id} outside 0..{n}",
                path.display(),
                lineno + 1
            ))
        })?;
        if slot.replace(vals).is_some() {
            return Err(parse_err(path, lineno, &format!("duplicate row for vertex {id}")));
        }
        count += 1;
    }
    if count != n {
        return Err(Error::Shape(format!(
            "{} has {count} feature rows for {n} entities",
            path.display()
        )));
    }
    let dim = dim.unwrap_or(0);
    let data = rows.into_iter().flat_map(Option::unwrap).collect();
    let features = Features::new(n, dim, data)?;
    graph.with_features(features)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DegreeSummary {
    pub min: usize,
    pub mean: f64,
    pub max: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GraphStats {
    pub num_entities: usize,
    pub num_relations: usize,
    pub num_edges: usize,
    pub in_degree: DegreeSummary,
    pub out_degree: DegreeSummary,
}

impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "entities   {}", self.num_entities)?;
        writeln!(f, "relations  {}", self.num_relations)?;
        writeln!(f, "edges      {}", self.num_edges)?;
        for (name, d) in [("in-degree ", self.in_degree), ("out-degree", self.out_degree)] {
            writeln!(f, "{name} min {} mean {:.3} max {}", d.min, d.mean, d.max)?;
        }
        Ok(())
    }
}

fn summarize(degrees: impl Iterator<Item = usize>) -> DegreeSummary {
    let (mut min, mut max, mut sum, mut n) = (usize::MAX, 0, 0usize, 0usize);
    for d in degrees {
        min = min.min(d);
        max = max.max(d);
        sum += d;
        n += 1;
    }
    if n == 0 {
        return DegreeSummary::default();
    }
    DegreeSummary {
        min,
        mean: sum as f64 / n as f64,
        max,
    }
}

pub fn graph_stats(graph: &KnowledgeGraph) -> GraphStats {
    GraphStats {
        num_entities: graph.num_entities,
        num_relations: graph.num_relations,
        num_edges: graph.edges.len(),
        in_degree: summarize(graph.in_index.iter().map(Vec::len)),
        out_degree: summarize(graph.out_index.iter().map(Vec::len)),
    }
}

/// Share of tails drawn inside the head's community; the rest are uniform
/// over all vertices.
const INTRA_COMMUNITY: f64 = 0.95;
/// Probability that a tail copies an earlier tail of the same community
/// (preferential attachment) instead of being drawn uniformly.
const COPY_PROB: f64 = 0.9;

/// Seeded synthetic knowledge graph with skewed in-degrees and community
/// locality, split 90/5/5 into train/valid/test. No duplicate triplets and
/// no self-loops.
pub fn generate_synthetic(
    num_entities: usize,
    num_relations: usize,
    avg_degree: f64,
    seed: u64,
) -> Result<(KnowledgeGraph, DatasetSplit)> {
    let target = synthetic_target(num_entities, num_relations, avg_degree)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = num_entities;

    let num_communities = ((n as f64).sqrt() / 2.0).round().max(1.0) as usize;
    let community_of = |v: usize| v * num_communities / n;
    let community_range = |c: usize| {
        let lo = (c * n).div_ceil(num_communities);
        let hi = ((c + 1) * n).div_ceil(num_communities);
        lo..hi
    };
    let mut urns: Vec<Vec<u32>> = vec![Vec::new(); num_communities];

    let mut seen = HashSet::with_capacity(target);
    let mut edges = Vec::with_capacity(target);
    let max_attempts = target.saturating_mul(50).max(1000);
    let mut attempts = 0;
    while edges.len() < target && attempts < max_attempts {
        attempts += 1;
        let head = rng.gen_range(0..n);
        let tail = if num_communities > 1 && !rng.gen_bool(INTRA_COMMUNITY) {
            rng.gen_range(0..n)
        } else {
            let c = community_of(head);
            let urn = &urns[c];
            if !urn.is_empty() && rng.gen_bool(COPY_PROB) {
                urn[rng.gen_range(0..urn.len())] as usize
            } else {
                rng.gen_range(community_range(c))
            }
        };
        if tail == head {
            continue;
        }
        let t = Triplet::new(head as u32, rng.gen_range(0..num_relations) as u32, tail as u32);
        if seen.insert(t) {
            urns[community_of(tail)].push(tail as u32);
            edges.push(t);
        }
    }

    split_synthetic(edges, n, num_relations, &mut rng)
}

/// Total edge count giving `avg_degree` train edges per entity after the
/// 90/5/5 split.
fn synthetic_target(num_entities: usize, num_relations: usize, avg_degree: f64) -> Result<usize> {
    if num_entities < 2 {
        return Err(Error::Validation("num_entities must be >= 2".into()));
    }
    if num_relations < 1 {
        return Err(Error::Validation("num_relations must be >= 1".into()));
    }
    if !(avg_degree > 0.0 && avg_degree.is_finite()) {
        return Err(Error::Validation("avg_degree must be positive".into()));
    }
    let n = num_entities;
    let capacity = (n * (n - 1)).saturating_mul(num_relations);
    Ok(((n as f64 * avg_degree / 0.9).round() as usize).clamp(1, capacity))
}

fn split_synthetic(
    mut edges: Vec<Triplet>,
    num_entities: usize,
    num_relations: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(KnowledgeGraph, DatasetSplit)> {
    edges.shuffle(rng);
    let m = edges.len();
    let n_valid = m / 20;
    let n_test = m / 20;
    let test = edges.split_off(m - n_test);
    let valid = edges.split_off(m - n_test - n_valid);
    let split = DatasetSplit {
        train: edges,
        valid,
        test,
    };
    let graph = KnowledgeGraph::new(num_entities, num_relations, split.train.clone())?;
    Ok((graph, split))
}

/// Largest id offset of a short-range edge in [`generate_local`].
const LOCAL_WINDOW: usize = 32;
/// Share of [`generate_local`] edges joining uniformly drawn vertices.
const LONG_RANGE: f64 = 0.01;

/// Seeded synthetic graph with spatial locality and no hubs: most edges
/// join vertices whose ids differ by at most a small window, the rest are
/// uniform. Same split, argument checks and guarantees as
/// [`generate_synthetic`].
pub fn generate_local(
    num_entities: usize,
    num_relations: usize,
    avg_degree: f64,
    seed: u64,
) -> Result<(KnowledgeGraph, DatasetSplit)> {
    let target = synthetic_target(num_entities, num_relations, avg_degree)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = num_entities;
    let mut seen = HashSet::with_capacity(target);
    let mut edges = Vec::with_capacity(target);
    let max_attempts = target.saturating_mul(50).max(1000);
    let mut attempts = 0;
    while edges.len() < target && attempts < max_attempts {
        attempts += 1;
        let head = rng.gen_range(0..n);
        let tail = if rng.gen_bool(LONG_RANGE) {
            rng.gen_range(0..n)
        } else {
            let d = rng.gen_range(1..=LOCAL_WINDOW);
            if rng.gen_bool(0.5) {
                head + d
            } else {
                head.wrapping_sub(d)
            }
        };
        if tail >= n || tail == head {
            continue;
        }
        let t = Triplet::new(head as u32, rng.gen_range(0..num_relations) as u32, tail as u32);
        if seen.insert(t) {
            edges.push(t);
        }
    }
    split_synthetic(edges, n, num_relations, &mut rng)
}
