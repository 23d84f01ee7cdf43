use rand::{Rng, RngCore};

use super::{Gradients, InputRows, Matrix, ModelParams, SparseRows};
use crate::error::{Error, Result};
use crate::sampler::{ComputeGraph, EdgeMiniBatch};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Activations of one forward pass, kept for the backward pass.
pub struct ForwardPass<'a> {
    cg: &'a ComputeGraph,
    /// `acts[0]` are the layer inputs; `acts[l + 1]` the output of layer `l`.
    acts: Vec<Matrix>,
    pre: Vec<Matrix>,
    /// Per layer and basis: `z[b][v] = sum_e a_{r_e b} * norm_e * h_src(e)`.
    zs: Vec<Vec<Matrix>>,
    dropout_masks: Vec<Option<Vec<f64>>>,
    trainable_inputs: bool,
}

fn gather_inputs(
    params: &ModelParams,
    cg: &ComputeGraph,
    inputs: Option<&dyn InputRows>,
) -> Result<(Matrix, bool)> {
    let din = params.config.input_dim();
    let (src, trainable): (&dyn InputRows, bool) = match (&params.embedding, inputs) {
        (Some(table), _) => (table, true),
        (None, Some(f)) => (f, false),
        (None, None) => {
            return Err(Error::Shape(
                "feature-input model evaluated without feature rows".into(),
            ))
        }
    };
    if src.dim() != din {
        return Err(Error::Shape(format!(
            "input width {} does not match model input width {din}",
            src.dim()
        )));
    }
    let verts = cg.input_vertices();
    let mut h = Matrix::zeros(verts.len(), din);
    for (i, &v) in verts.iter().enumerate() {
        h.row_mut(i).copy_from_slice(src.row(v));
    }
    Ok((h, trainable))
}

impl<'a> ForwardPass<'a> {
    /// Runs every layer. Dropout is applied to hidden-layer outputs only when
    /// `dropout_rng` is given and the configured rate is positive.
    pub fn run(
        params: &ModelParams,
        cg: &'a ComputeGraph,
        inputs: Option<&dyn InputRows>,
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<Self> {
        let cfg = &params.config;
        let n = cfg.num_layers;
        if cg.num_layers() != n {
            return Err(Error::Shape(format!(
                "compute graph has {} layers, model has {n}",
                cg.num_layers()
            )));
        }
        if cg.num_relations != cfg.num_relations {
            return Err(Error::Shape(format!(
                "compute graph has {} relations, model has {}",
                cg.num_relations, cfg.num_relations
            )));
        }
        let (h0, trainable_inputs) = gather_inputs(params, cg, inputs)?;
        let nb = cfg.num_bases;
        let keep = 1.0 - cfg.dropout;

        let mut acts = vec![h0];
        let mut pre = Vec::with_capacity(n);
        let mut zs = Vec::with_capacity(n);
        let mut dropout_masks = Vec::with_capacity(n);
        for l in 0..n {
            let layer = &cg.layers[n - 1 - l];
            let targets = cg.layer_sizes[n - 1 - l];
            let (din, dout) = (cfg.dims[l], cfg.dims[l + 1]);
            let h = &acts[l];
            let coeffs = params.coeffs(l);
            let bases = params.bases(l);

            let mut z = vec![Matrix::zeros(targets, din); nb];
            for e in &layer.edges {
                let src = h.row(e.source as usize);
                for (b, zb) in z.iter_mut().enumerate() {
                    let w = coeffs[e.rel as usize * nb + b] * e.norm;
                    for (acc, x) in zb.row_mut(e.target as usize).iter_mut().zip(src) {
                        *acc += w * x;
                    }
                }
            }

            let mut out = Matrix::zeros(targets, dout);
            for v in 0..targets {
                let row = out.row_mut(v);
                for (b, zb) in z.iter().enumerate() {
                    let vb = &bases[b * din * dout..(b + 1) * din * dout];
                    for (i, &zi) in zb.row(v).iter().enumerate() {
                        if zi == 0.0 {
                            continue;
                        }
                        for (o, w) in row.iter_mut().zip(&vb[i * dout..(i + 1) * dout]) {
                            *o += zi * w;
                        }
                    }
                }
            }
            // ReLU would silently turn NaN into 0
            if !out.data.iter().all(|x| x.is_finite()) {
                return Err(Error::Numeric(format!("non-finite activations in layer {l}")));
            }
            let last = l + 1 == n;
            let mut mask = None;
            let mut act = out.clone();
            if !last {
                for x in &mut act.data {
                    *x = x.max(0.0);
                }
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    if cfg.dropout > 0.0 {
                        let m: Vec<f64> = (0..act.data.len())
                            .map(|_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 })
                            .collect();
                        for (x, s) in act.data.iter_mut().zip(&m) {
                            *x *= s;
                        }
                        mask = Some(m);
                    }
                }
            }
            pre.push(out);
            zs.push(z);
            dropout_masks.push(mask);
            acts.push(act);
        }
        Ok(ForwardPass {
            cg,
            acts,
            pre,
            zs,
            dropout_masks,
            trainable_inputs,
        })
    }

    /// Output rows for the compute graph's seed vertices, ascending by id.
    pub fn embeddings(&self) -> &Matrix {
        self.acts.last().unwrap()
    }

    pub fn into_embeddings(mut self) -> Matrix {
        self.acts.pop().unwrap()
    }

    /// Mean logistic cross-entropy over `batch` and its exact gradient.
    pub fn loss_and_backward(
        &self,
        params: &ModelParams,
        batch: &EdgeMiniBatch,
    ) -> Result<(f64, Gradients)> {
        let cfg = &params.config;
        let n = cfg.num_layers;
        if batch.edges.is_empty() {
            return Err(Error::Validation("empty mini-batch".into()));
        }
        let emb = self.embeddings();
        let dout = cfg.output_dim();
        let scale = 1.0 / batch.edges.len() as f64;
        let mut grads = Gradients::zeros_like(params);
        let dec_range = params.layout.decoder();

        let mut loss = 0.0;
        let mut d_emb = Matrix::zeros(emb.rows, dout);
        for le in &batch.edges {
            let t = le.triplet;
            let (hi, ti) = match (self.cg.seed_index(t.head), self.cg.seed_index(t.tail)) {
                (Some(h), Some(t)) => (h, t),
                _ => {
                    return Err(Error::Integrity(format!(
                        "batch edge {t} has an endpoint outside the compute graph seeds"
                    )))
                }
            };
            if t.rel as usize >= cfg.num_relations {
                return Err(Error::Integrity(format!("unknown relation in {t}")));
            }
            let m = params.decoder_row(t.rel);
            let (eh, et) = (emb.row(hi), emb.row(ti));
            let g = super::distmult(eh, m, et);
            let y = le.label as f64;
            let l = if le.label == 1 { softplus(-g) } else { softplus(g) };
            if !l.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at triplet {t}")));
            }
            loss += l;
            let dg = (sigmoid(g) - y) * scale;
            let rel_off = dec_range.start + t.rel as usize * dout;
            for k in 0..dout {
                grads.dense[rel_off + k] += dg * eh[k] * et[k];
            }
            for k in 0..dout {
                d_emb.data[hi * dout + k] += dg * m[k] * et[k];
            }
            for k in 0..dout {
                d_emb.data[ti * dout + k] += dg * m[k] * eh[k];
            }
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite batch loss".into()));
        }

        let nb = cfg.num_bases;
        let mut d_out = d_emb;
        for l in (0..n).rev() {
            let layer = &self.cg.layers[n - 1 - l];
            let targets = self.cg.layer_sizes[n - 1 - l];
            let (din, dout) = (cfg.dims[l], cfg.dims[l + 1]);
            let h = &self.acts[l];
            let mut d_pre = d_out;
            if l + 1 < n {
                if let Some(mask) = &self.dropout_masks[l] {
                    for (d, s) in d_pre.data.iter_mut().zip(mask) {
                        *d *= s;
                    }
                }
                for (d, p) in d_pre.data.iter_mut().zip(&self.pre[l].data) {
                    if *p <= 0.0 {
                        *d = 0.0;
                    }
                }
            }

            let bases = params.bases(l);
            let coeffs = params.coeffs(l);
            let base_off = params.layout.bases(l).start;
            let coeff_off = params.layout.coeffs(l).start;
            let mut dz = vec![Matrix::zeros(targets, din); nb];
            for b in 0..nb {
                let vb = &bases[b * din * dout..(b + 1) * din * dout];
                let zb = &self.zs[l][b];
                let dvb = &mut grads.dense[base_off + b * din * dout..base_off + (b + 1) * din * dout];
                for v in 0..targets {
                    let dp = d_pre.row(v);
                    if dp.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    for (i, &zi) in zb.row(v).iter().enumerate() {
                        let wrow = &vb[i * dout..(i + 1) * dout];
                        let grow = &mut dvb[i * dout..(i + 1) * dout];
                        let mut acc = 0.0;
                        for o in 0..dout {
                            grow[o] += zi * dp[o];
                            acc += dp[o] * wrow[o];
                        }
                        dz[b].data[v * din + i] = acc;
                    }
                }
            }

            let need_dh = l > 0 || self.trainable_inputs;
            let mut d_h = Matrix::zeros(if need_dh { h.rows } else { 0 }, din);
            for e in &layer.edges {
                let src = h.row(e.source as usize);
                for (b, dzb) in dz.iter().enumerate() {
                    let g = dzb.row(e.target as usize);
                    let ci = e.rel as usize * nb + b;
                    let dot: f64 = src.iter().zip(g).map(|(x, y)| x * y).sum();
                    grads.dense[coeff_off + ci] += e.norm * dot;
                    if need_dh {
                        let w = coeffs[ci] * e.norm;
                        for (acc, gi) in d_h.row_mut(e.source as usize).iter_mut().zip(g) {
                            *acc += w * gi;
                        }
                    }
                }
            }
            d_out = d_h;
        }
        if self.trainable_inputs {
            grads.embedding = Some(SparseRows {
                rows: self.cg.input_vertices().to_vec(),
                values: d_out,
            });
        }
        Ok((loss, grads))
    }
}

/// Seed-vertex embeddings (`|seeds| x d_out`) with dropout off.
pub fn encode(
    params: &ModelParams,
    cg: &ComputeGraph,
    inputs: Option<&dyn InputRows>,
) -> Result<Matrix> {
    Ok(ForwardPass::run(params, cg, inputs, None)?.into_embeddings())
}

/// Forward and backward over one mini-batch.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &EdgeMiniBatch,
    cg: &ComputeGraph,
    inputs: Option<&dyn InputRows>,
    dropout_rng: Option<&mut dyn RngCore>,
) -> Result<(f64, Gradients)> {
    ForwardPass::run(params, cg, inputs, dropout_rng)?.loss_and_backward(params, batch)
}
