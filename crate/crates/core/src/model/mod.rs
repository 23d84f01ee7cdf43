//! RGCN encoder with basis-decomposed relation weights and a DistMult
//! decoder, trained on logistic cross-entropy with hand-derived gradients.
//!
//! All dense parameters live in one flat buffer described by
//! [`ParamLayout`]; that buffer is also the gradient payload that workers
//! average.

mod checkpoint;
mod forward;

use std::fmt;
use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Features, Triplet};

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use forward::{encode, loss_and_grad, sigmoid, softplus, ForwardPass};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputMode {
    /// Fixed per-vertex feature rows.
    Features,
    /// A learned per-vertex embedding table.
    Embedding,
}

impl InputMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::Features => "features",
            InputMode::Embedding => "embedding",
        }
    }
}

impl std::str::FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "features" | "feature-input" => Ok(InputMode::Features),
            "embedding" | "learned-embedding" => Ok(InputMode::Embedding),
            _ => Err(Error::Validation(format!("unknown input mode '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    /// `[d_in, d_1, ..., d_out]`, length `num_layers + 1`.
    pub dims: Vec<usize>,
    pub num_bases: usize,
    /// Relation count before adding inverses.
    pub num_relations: usize,
    pub negatives_per_positive: usize,
    pub dropout: f64,
    pub mode: InputMode,
}

impl ModelConfig {
    /// `num_layers` layers of uniform width `dim`.
    pub fn uniform(
        num_layers: usize,
        dim: usize,
        num_bases: usize,
        num_relations: usize,
        mode: InputMode,
    ) -> Self {
        ModelConfig {
            num_layers,
            dims: vec![dim; num_layers + 1],
            num_bases,
            num_relations,
            negatives_per_positive: 1,
            dropout: 0.0,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 1 {
            return Err(Error::Validation("num_layers must be >= 1".into()));
        }
        if self.num_bases < 1 {
            return Err(Error::Validation("num_bases must be >= 1".into()));
        }
        if self.dims.len() != self.num_layers + 1 {
            return Err(Error::Validation(format!(
                "dims has {} entries, expected num_layers + 1 = {}",
                self.dims.len(),
                self.num_layers + 1
            )));
        }
        if self.dims.contains(&0) {
            return Err(Error::Validation("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Validation("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Forward relations, inverse relations, and the self-loop.
    pub fn extended_relations(&self) -> usize {
        2 * self.num_relations + 1
    }
}

/// Offsets of each dense block inside the flat parameter buffer.
///
/// Per layer `l`: bases `[b][i][o]` (`B x d_l x d_{l+1}`), then coefficients
/// `[r][b]` (`(2R+1) x B`). After all layers: decoder diagonals `[r][k]`
/// (`R x d_out`).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    bases: Vec<Range<usize>>,
    coeffs: Vec<Range<usize>>,
    decoder: Range<usize>,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut off = 0;
        let mut bases = Vec::new();
        let mut coeffs = Vec::new();
        for l in 0..cfg.num_layers {
            let nb = cfg.num_bases * cfg.dims[l] * cfg.dims[l + 1];
            bases.push(off..off + nb);
            off += nb;
            let nc = cfg.extended_relations() * cfg.num_bases;
            coeffs.push(off..off + nc);
            off += nc;
        }
        let decoder = off..off + cfg.num_relations * cfg.output_dim();
        ParamLayout {
            bases,
            coeffs,
            decoder,
        }
    }

    pub fn bases(&self, layer: usize) -> Range<usize> {
        self.bases[layer].clone()
    }

    pub fn coeffs(&self, layer: usize) -> Range<usize> {
        self.coeffs[layer].clone()
    }

    pub fn decoder(&self) -> Range<usize> {
        self.decoder.clone()
    }

    pub fn len(&self) -> usize {
        self.decoder.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(name, range, shape)` for every dense block, in buffer order.
    pub fn blocks(&self, cfg: &ModelConfig) -> Vec<(String, Range<usize>, Vec<usize>)> {
        let mut out = Vec::new();
        for l in 0..self.bases.len() {
            out.push((
                format!("bases.{l}"),
                self.bases(l),
                vec![cfg.num_bases, cfg.dims[l], cfg.dims[l + 1]],
            ));
            out.push((
                format!("coeffs.{l}"),
                self.coeffs(l),
                vec![cfg.extended_relations(), cfg.num_bases],
            ));
        }
        out.push((
            "decoder".into(),
            self.decoder(),
            vec![cfg.num_relations, cfg.output_dim()],
        ));
        out
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Learned input vectors, one row per vertex id.
pub type EmbeddingTable = Matrix;

/// Source of layer-0 inputs for the vertices of a compute graph.
pub trait InputRows: Sync {
    fn dim(&self) -> usize;
    fn row(&self, vertex: u32) -> &[f64];
}

impl InputRows for Features {
    fn dim(&self) -> usize {
        Features::dim(self)
    }

    fn row(&self, vertex: u32) -> &[f64] {
        Features::row(self, vertex as usize)
    }
}

impl InputRows for Matrix {
    fn dim(&self) -> usize {
        self.cols
    }

    fn row(&self, vertex: u32) -> &[f64] {
        Matrix::row(self, vertex as usize)
    }
}

/// Global feature rows viewed through a local -> global id map.
pub struct MappedFeatures<'a> {
    pub features: &'a Features,
    pub local_to_global: &'a [u32],
}

impl InputRows for MappedFeatures<'_> {
    fn dim(&self) -> usize {
        self.features.dim()
    }

    fn row(&self, vertex: u32) -> &[f64] {
        self.features
            .row(self.local_to_global[vertex as usize] as usize)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub dense: Vec<f64>,
    /// Present in [`InputMode::Embedding`] only.
    pub embedding: Option<EmbeddingTable>,
}

impl ModelParams {
    pub fn bases(&self, layer: usize) -> &[f64] {
        &self.dense[self.layout.bases(layer)]
    }

    pub fn coeffs(&self, layer: usize) -> &[f64] {
        &self.dense[self.layout.coeffs(layer)]
    }

    pub fn decoder(&self) -> &[f64] {
        &self.dense[self.layout.decoder()]
    }

    pub fn decoder_row(&self, rel: u32) -> &[f64] {
        let d = self.config.output_dim();
        &self.decoder()[rel as usize * d..(rel as usize + 1) * d]
    }

    /// `W_r = sum_b a_rb V_b` for extended relation `rel` at `layer`, as a
    /// row-major `d_l x d_{l+1}` matrix.
    pub fn relation_weight(&self, layer: usize, rel: u32) -> Matrix {
        let (din, dout) = (self.config.dims[layer], self.config.dims[layer + 1]);
        let nb = self.config.num_bases;
        let bases = self.bases(layer);
        let coeffs = self.coeffs(layer);
        let mut w = Matrix::zeros(din, dout);
        for b in 0..nb {
            let a = coeffs[rel as usize * nb + b];
            for (wv, vv) in w.data.iter_mut().zip(&bases[b * din * dout..(b + 1) * din * dout]) {
                *wv += a * vv;
            }
        }
        w
    }

    pub fn num_trainable(&self) -> usize {
        self.dense.len() + self.embedding.as_ref().map_or(0, |e| e.data.len())
    }

    pub fn is_finite(&self) -> bool {
        self.dense.iter().all(|x| x.is_finite())
            && self
                .embedding
                .as_ref()
                .is_none_or(|e| e.data.iter().all(|x| x.is_finite()))
    }

    /// Copy whose embedding table holds only the given rows, in order.
    pub fn with_embedding_rows(&self, rows: &[u32]) -> ModelParams {
        let embedding = self.embedding.as_ref().map(|table| {
            let mut local = Matrix::zeros(rows.len(), table.cols);
            for (i, &g) in rows.iter().enumerate() {
                local.row_mut(i).copy_from_slice(table.row(g as usize));
            }
            local
        });
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            dense: self.dense.clone(),
            embedding,
        }
    }
}

/// Gradient rows for the embedding vectors a batch touched.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRows {
    pub rows: Vec<u32>,
    pub values: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub dense: Vec<f64>,
    pub embedding: Option<SparseRows>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            dense: vec![0.0; params.dense.len()],
            embedding: None,
        }
    }
}

fn glorot<R: Rng + ?Sized>(rng: &mut R, buf: &mut [f64], fan_in: usize, fan_out: usize) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for x in buf {
        *x = rng.gen_range(-a..a);
    }
}

/// Glorot-uniform bases, coefficients and decoder diagonals; unit-variance
/// uniform embedding rows (one per entity) in embedding mode.
pub fn init_params<R: Rng + ?Sized>(
    config: &ModelConfig,
    num_entities: usize,
    rng: &mut R,
) -> Result<ModelParams> {
    config.validate()?;
    let layout = ParamLayout::new(config);
    let mut dense = vec![0.0; layout.len()];
    for l in 0..config.num_layers {
        let (din, dout) = (config.dims[l], config.dims[l + 1]);
        glorot(rng, &mut dense[layout.bases(l)], din, dout);
        glorot(
            rng,
            &mut dense[layout.coeffs(l)],
            config.extended_relations(),
            config.num_bases,
        );
    }
    glorot(
        rng,
        &mut dense[layout.decoder()],
        config.num_relations,
        config.output_dim(),
    );
    let embedding = match config.mode {
        InputMode::Features => None,
        InputMode::Embedding => {
            let mut t = Matrix::zeros(num_entities, config.input_dim());
            let a = 3f64.sqrt();
            for x in &mut t.data {
                *x = rng.gen_range(-a..a);
            }
            Some(t)
        }
    };
    Ok(ModelParams {
        config: config.clone(),
        layout,
        dense,
        embedding,
    })
}

/// DistMult score `sum_k h_s[k] * m_r[k] * h_t[k]`.
pub fn distmult(head: &[f64], rel_diag: &[f64], tail: &[f64]) -> f64 {
    head.iter()
        .zip(rel_diag)
        .zip(tail)
        .map(|((h, m), t)| h * m * t)
        .sum()
}

/// Scores `triplet` using seed embeddings produced by [`encode`] over a
/// compute graph whose seeds are `seeds`.
pub fn score(
    embeddings: &Matrix,
    seeds: &[u32],
    params: &ModelParams,
    triplet: &Triplet,
) -> Result<f64> {
    let row = |v: u32| {
        seeds
            .binary_search(&v)
            .map(|i| embeddings.row(i))
            .map_err(|_| Error::Integrity(format!("no embedding for vertex {v}")))
    };
    if triplet.rel as usize >= params.config.num_relations {
        return Err(Error::Integrity(format!("unknown relation in {triplet}")));
    }
    Ok(distmult(
        row(triplet.head)?,
        params.decoder_row(triplet.rel),
        row(triplet.tail)?,
    ))
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "layers={} dims={:?} bases={} relations={} mode={}",
            self.num_layers,
            self.dims,
            self.num_bases,
            self.num_relations,
            self.mode.as_str()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ModelConfig {
        ModelConfig::uniform(2, 8, 2, 3, InputMode::Embedding)
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(&cfg(), 10, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = init_params(&cfg(), 10, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.coeffs(0).len(), 7 * 2);
    }

    #[test]
    fn single_basis_couples_relations() {
        let mut c = cfg();
        c.num_bases = 1;
        let p = init_params(&c, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let v = p.bases(0);
        for r in 0..c.extended_relations() as u32 {
            let w = p.relation_weight(0, r);
            let a = p.coeffs(0)[r as usize];
            for (x, y) in w.data.iter().zip(v) {
                assert_eq!(*x, a * y);
            }
        }
    }

    #[test]
    fn basis_statistics_match_glorot_target() {
        let c = ModelConfig::uniform(1, 64, 4, 2, InputMode::Features);
        let p = init_params(&c, 0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let v = p.bases(0);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let target = 2.0 / (64.0 + 64.0);
        assert!(mean.abs() < 4.0 * (target / n).sqrt(), "mean {mean}");
        assert!(var > target / 2.0 && var < target * 2.0, "var {var}");
    }

    #[test]
    fn distmult_values() {
        assert_eq!(distmult(&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]), 63.0);
        let h = [0.3, -1.2, 2.0];
        let t = [1.5, 0.1, -0.7];
        assert_eq!(distmult(&h, &[1.0; 3], &t), h.iter().zip(&t).map(|(a, b)| a * b).sum());
        let m = [0.2, 0.9, -1.1];
        assert_eq!(distmult(&h, &m, &t), distmult(&t, &m, &h));
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.dims.pop();
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.num_bases = 0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.num_layers = 0;
        c.dims = vec![4];
        assert!(c.validate().is_err());
    }

    #[test]
    fn parameter_count_for_benchmark_shapes() {
        // 2 layers, width 100, 2 bases, 237 relations, 14,541 entity rows
        let c = ModelConfig::uniform(2, 100, 2, 237, InputMode::Embedding);
        let layout = ParamLayout::new(&c);
        let dense = layout.len();
        let total = dense + 14_541 * 100;
        assert_eq!(dense, 2 * (2 * 100 * 100 + 475 * 2) + 237 * 100);
        assert!((1_000_000..10_000_000).contains(&total), "{total}");
    }
}
