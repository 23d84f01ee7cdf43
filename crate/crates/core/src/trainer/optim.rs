use crate::error::{Error, Result};
use crate::model::{Matrix, ModelParams, SparseRows};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::default()),
            _ => Err(Error::Validation(format!("unknown optimizer '{s}'"))),
        }
    }
}

/// Optimizer state for one replica. Dense moments cover the flat parameter
/// buffer; embedding moments are per table row and only touched rows move.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
    emb_m: Option<Matrix>,
    emb_v: Option<Matrix>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ModelParams) -> Self {
        let adam = matches!(kind, OptimizerKind::Adam { .. });
        let moments = |n| if adam { vec![0.0; n] } else { Vec::new() };
        let table = || {
            params
                .embedding
                .as_ref()
                .filter(|_| adam)
                .map(|t| Matrix::zeros(t.rows, t.cols))
        };
        Optimizer {
            kind,
            lr,
            clip_norm: None,
            step: 0,
            m: moments(params.dense.len()),
            v: moments(params.dense.len()),
            emb_m: table(),
            emb_v: table(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    /// Applies one update with the (already averaged) dense gradient and the
    /// replica's own sparse embedding gradient.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        dense_grad: &[f64],
        embedding_grad: Option<&SparseRows>,
    ) -> Result<()> {
        if dense_grad.len() != params.dense.len() {
            return Err(Error::Shape(format!(
                "gradient has {} values for {} parameters",
                dense_grad.len(),
                params.dense.len()
            )));
        }
        self.step += 1;
        let scale = match self.clip_norm {
            Some(c) => {
                let norm = dense_grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let t = self.step as f64;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.dense.iter_mut().zip(dense_grad) {
                    *p -= self.lr * scale * g;
                }
                if let (Some(table), Some(sg)) = (params.embedding.as_mut(), embedding_grad) {
                    for (i, &row) in sg.rows.iter().enumerate() {
                        for (p, g) in table.row_mut(row as usize).iter_mut().zip(sg.values.row(i)) {
                            *p -= self.lr * g;
                        }
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powf(t);
                let c2 = 1.0 - beta2.powf(t);
                let lr = self.lr;
                let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                };
                for i in 0..params.dense.len() {
                    update(
                        &mut params.dense[i],
                        &mut self.m[i],
                        &mut self.v[i],
                        scale * dense_grad[i],
                    );
                }
                if let (Some(table), Some(sg), Some(em), Some(ev)) = (
                    params.embedding.as_mut(),
                    embedding_grad,
                    self.emb_m.as_mut(),
                    self.emb_v.as_mut(),
                ) {
                    for (i, &row) in sg.rows.iter().enumerate() {
                        let r = row as usize;
                        let p = table.row_mut(r);
                        let (m, v) = (em.row_mut(r), ev.row_mut(r));
                        for k in 0..p.len() {
                            update(&mut p[k], &mut m[k], &mut v[k], sg.values.data[i * sg.values.cols + k]);
                        }
                    }
                }
            }
        }
        if !params.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite parameters after optimizer step {}",
                self.step
            )));
        }
        Ok(())
    }
}
