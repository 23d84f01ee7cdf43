//! Data-parallel training: one worker thread per partition, gradient
//! averaging through [`ReduceBarrier`] after every batch.

mod allreduce;
mod bench;
mod optim;

use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use allreduce::{allreduce_mean, ReduceBarrier};
pub use bench::{bench_components, BenchConfig, BenchRow, BenchTable};
pub use optim::{Optimizer, OptimizerKind};

use crate::error::{Error, Result};
use crate::eval::{evaluate, KnownTriples, Protocol, TiePolicy};
use crate::graph::{KnowledgeGraph, Triplet};
use crate::model::{init_params, ForwardPass, InputRows, MappedFeatures, Matrix, ModelConfig, ModelParams};
use crate::partition::{Partition, PartitionSet};
use crate::sampler::{
    build_compute_graph, make_batches, natural_batch_count, sample_negatives, LabeledEdge,
    LocalGraph,
};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// `None` trains full-batch (or, with `fixed_num_batches`, splits each
    /// worker's edges evenly over the fixed count).
    pub batch_size: Option<usize>,
    pub fixed_num_batches: Option<usize>,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub num_workers: usize,
    /// Validation every this many epochs; 0 disables it.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            batch_size: None,
            fixed_num_batches: None,
            learning_rate: 0.01,
            optimizer: OptimizerKind::default(),
            clip_norm: None,
            seed: 0,
            num_workers: 1,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation("learning rate must be > 0".into()));
        }
        if self.num_workers == 0 {
            return Err(Error::Validation("need at least one worker".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Validation("batch size must be >= 1".into()));
        }
        if self.fixed_num_batches == Some(0) {
            return Err(Error::Validation("fixed batch count must be >= 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Validation("clip norm must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Seconds spent per component, summed over an epoch's batches.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ComponentTimes {
    pub sampling: f64,
    pub cg_build: f64,
    pub encode: f64,
    /// Loss, backward pass, gradient reduction and optimizer step.
    pub update: f64,
}

impl ComponentTimes {
    pub fn total(&self) -> f64 {
        self.sampling + self.cg_build + self.encode + self.update
    }

    fn add(&mut self, o: &ComponentTimes) {
        self.sampling += o.sampling;
        self.cg_build += o.cg_build;
        self.encode += o.encode;
        self.update += o.update;
    }

    fn scale(&self, k: f64) -> ComponentTimes {
        ComponentTimes {
            sampling: self.sampling * k,
            cg_build: self.cg_build * k,
            encode: self.encode * k,
            update: self.update * k,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss over all workers and rounds.
    pub loss: f64,
    pub val_mrr: Option<f64>,
    pub wall_secs: f64,
    /// Per-worker component times, averaged over workers.
    pub times: ComponentTimes,
    /// Reduction rounds each worker took part in.
    pub rounds: Vec<usize>,
    /// Batches each worker's own edges filled before wrap-around.
    pub natural_batches: Vec<usize>,
    /// Labeled edges each worker trained on (positives and negatives).
    pub examples: Vec<usize>,
}

impl EpochRecord {
    /// Component times per batch.
    pub fn per_batch(&self) -> ComponentTimes {
        let rounds = self.rounds.first().copied().unwrap_or(0).max(1);
        self.times.scale(1.0 / rounds as f64)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub num_workers: usize,
    pub epochs: Vec<EpochRecord>,
    /// Dense parameters compared bitwise across workers after every epoch.
    pub replicas_identical: bool,
}

impl TrainReport {
    pub fn loss_curve(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pb = self.per_batch();
        write!(f, "epoch {:>4}  loss {:.6}", self.epoch, self.loss)?;
        if let Some(m) = self.val_mrr {
            write!(f, "  val_mrr {m:.4}")?;
        }
        write!(
            f,
            "  time {:.3}s  rounds {}  per batch: cg {:.2e}s encode {:.2e}s update {:.2e}s",
            self.wall_secs,
            self.rounds.first().copied().unwrap_or(0),
            pb.cg_build,
            pb.encode,
            pb.update
        )
    }
}

pub struct Validation<'a> {
    pub triples: &'a [Triplet],
    pub known: &'a KnownTriples,
}

pub struct TrainOutcome {
    /// Worker 0's dense parameters; in embedding mode the global table is
    /// merged from the workers' local copies.
    pub params: ModelParams,
    pub report: TrainReport,
}

struct Worker<'a> {
    index: usize,
    partition: &'a Partition,
    local: LocalGraph,
    positives: Vec<LabeledEdge>,
    params: ModelParams,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    features: Option<MappedFeatures<'a>>,
}

struct EpochPlan {
    rounds: usize,
    batch_sizes: Vec<usize>,
    natural: Vec<usize>,
    examples: Vec<usize>,
}

fn plan_epoch(workers: &[Worker<'_>], cfg: &TrainConfig, s: usize) -> Result<EpochPlan> {
    let examples: Vec<usize> = workers.iter().map(|w| w.positives.len() * (s + 1)).collect();
    if let Some((w, _)) = examples.iter().enumerate().find(|(_, &n)| n == 0) {
        return Err(Error::Validation(format!("partition {w} has no training edges")));
    }
    let batch_sizes: Vec<usize> = examples
        .iter()
        .map(|&n| match (cfg.batch_size, cfg.fixed_num_batches) {
            (Some(b), _) => b,
            (None, Some(k)) => n.div_ceil(k),
            (None, None) => n,
        })
        .collect();
    let natural: Vec<usize> = examples
        .iter()
        .zip(&batch_sizes)
        .map(|(&n, &b)| natural_batch_count(n, b))
        .collect();
    let rounds = cfg
        .fixed_num_batches
        .unwrap_or_else(|| natural.iter().copied().max().unwrap_or(0));
    Ok(EpochPlan {
        rounds,
        batch_sizes,
        natural,
        examples,
    })
}

struct WorkerEpoch {
    losses: Vec<f64>,
    times: ComponentTimes,
    rounds: usize,
}

impl Worker<'_> {
    fn run_epoch(
        &mut self,
        plan: &EpochPlan,
        first_round: u64,
        barrier: &ReduceBarrier,
        batch_cursor: &mut usize,
    ) -> Result<WorkerEpoch> {
        let cfg = self.params.config.clone();
        let mut times = ComponentTimes::default();
        let t = Instant::now();
        let negatives = sample_negatives(&self.local, cfg.negatives_per_positive, &mut self.rng)?;
        let wrap = (plan.natural[self.index] != plan.rounds).then_some(plan.rounds);
        let batches = make_batches(
            &self.positives,
            &negatives,
            plan.batch_sizes[self.index],
            &mut self.rng,
            wrap,
        )?;
        times.sampling += t.elapsed().as_secs_f64();
        if batches.len() != plan.rounds {
            return Err(Error::Sync(format!(
                "worker {} formed {} batches for {} reduction rounds",
                self.index,
                batches.len(),
                plan.rounds
            )));
        }

        let mut losses = Vec::with_capacity(batches.len());
        for (b, batch) in batches.iter().enumerate() {
            *batch_cursor = b;
            let t = Instant::now();
            let cg = build_compute_graph(&batch.seed_vertices, &self.local, cfg.num_layers)?;
            let t_cg = t.elapsed().as_secs_f64();

            let t = Instant::now();
            let inputs = self.features.as_ref().map(|f| f as &dyn InputRows);
            let pass = ForwardPass::run(
                &self.params,
                &cg,
                inputs,
                Some(&mut self.dropout_rng as &mut dyn RngCore),
            )?;
            let t_enc = t.elapsed().as_secs_f64();

            let t = Instant::now();
            let (loss, grads) = pass.loss_and_backward(&self.params, batch)?;
            drop(pass);
            let mean = barrier.reduce(self.index, first_round + b as u64, grads.dense)?;
            self.optimizer
                .step(&mut self.params, &mean, grads.embedding.as_ref())?;
            times.update += t.elapsed().as_secs_f64();
            times.cg_build += t_cg;
            times.encode += t_enc;
            losses.push(loss);
        }
        Ok(WorkerEpoch {
            losses,
            times,
            rounds: batches.len(),
        })
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".to_string()
    }
}

/// Global embedding table from worker-local copies: each entity takes the
/// mean of the copies held by workers where it is a core-edge endpoint,
/// falling back to support copies, then to its initial value.
fn merge_embeddings(initial: &Matrix, workers: &[Worker<'_>]) -> Matrix {
    let mut endpoint_copies: Vec<Vec<&[f64]>> = vec![Vec::new(); initial.rows];
    let mut support_copies: Vec<Vec<&[f64]>> = vec![Vec::new(); initial.rows];
    for w in workers {
        let table = w.params.embedding.as_ref().expect("embedding mode");
        let endpoints = w.partition.num_endpoints();
        for (l, &g) in w.partition.local_to_global().iter().enumerate() {
            let copies = if l < endpoints {
                &mut endpoint_copies
            } else {
                &mut support_copies
            };
            copies[g as usize].push(table.row(l));
        }
    }
    let mut out = initial.clone();
    for v in 0..initial.rows {
        let copies = if endpoint_copies[v].is_empty() {
            &support_copies[v]
        } else {
            &endpoint_copies[v]
        };
        if !copies.is_empty() {
            let mean = allreduce_mean(copies).expect("rows share the table width");
            out.row_mut(v).copy_from_slice(&mean);
        }
    }
    out
}

fn global_params(initial: &ModelParams, workers: &[Worker<'_>]) -> ModelParams {
    let mut p = workers[0].params.clone();
    p.embedding = initial
        .embedding
        .as_ref()
        .map(|t| merge_embeddings(t, workers));
    p
}

/// Runs data-parallel training over `pset` (one worker per partition).
pub fn train(
    pset: &PartitionSet,
    graph: &KnowledgeGraph,
    model: &ModelConfig,
    cfg: &TrainConfig,
    validation: Option<Validation<'_>>,
) -> Result<TrainOutcome> {
    train_with(pset, graph, model, cfg, validation, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    pset: &PartitionSet,
    graph: &KnowledgeGraph,
    model: &ModelConfig,
    cfg: &TrainConfig,
    validation: Option<Validation<'_>>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    if pset.len() != cfg.num_workers {
        return Err(Error::Validation(format!(
            "{} workers requested for {} partitions",
            cfg.num_workers,
            pset.len()
        )));
    }
    if pset.num_entities != graph.num_entities() || pset.num_relations != graph.num_relations() {
        return Err(Error::Provenance(
            "partition set was built from a different graph".into(),
        ));
    }
    if model.num_relations != graph.num_relations() {
        return Err(Error::Validation(format!(
            "model has {} relations, graph has {}",
            model.num_relations,
            graph.num_relations()
        )));
    }
    if let Some(p) = pset.partitions.iter().find(|p| p.hop_count != model.num_layers) {
        return Err(Error::Provenance(format!(
            "partition {} was expanded with {} hops but the model has {} layers",
            p.id, p.hop_count, model.num_layers
        )));
    }
    let features = match model.mode {
        crate::model::InputMode::Features => {
            let f = graph.features().ok_or_else(|| {
                Error::Validation("feature-input mode needs a feature matrix".into())
            })?;
            if f.dim() != model.input_dim() {
                return Err(Error::Shape(format!(
                    "features have width {}, model input width is {}",
                    f.dim(),
                    model.input_dim()
                )));
            }
            Some(f)
        }
        crate::model::InputMode::Embedding => None,
    };

    let initial = init_params(model, graph.num_entities(), &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let mut workers = pset
        .partitions
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let local = LocalGraph::from_partition(p, model.num_relations)?;
            let positives = local.core.iter().copied().map(LabeledEdge::positive).collect();
            let params = initial.with_embedding_rows(p.local_to_global());
            let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, &params);
            optimizer.clip_norm = cfg.clip_norm;
            let worker_seed = cfg.seed ^ p.id as u64;
            let mut dropout_rng = ChaCha8Rng::seed_from_u64(worker_seed);
            dropout_rng.set_stream(1);
            Ok(Worker {
                index,
                partition: p,
                local,
                positives,
                params,
                optimizer,
                rng: ChaCha8Rng::seed_from_u64(worker_seed),
                dropout_rng,
                features: features.map(|f| MappedFeatures {
                    features: f,
                    local_to_global: p.local_to_global(),
                }),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = TrainReport {
        num_workers: workers.len(),
        epochs: Vec::with_capacity(cfg.epochs),
        replicas_identical: true,
    };
    let mut round_base = 0u64;
    for epoch in 1..=cfg.epochs {
        let plan = plan_epoch(&workers, cfg, model.negatives_per_positive)?;
        let barrier = ReduceBarrier::new(workers.len());
        let start = Instant::now();
        let results: Vec<Result<WorkerEpoch>> = std::thread::scope(|s| {
            let handles: Vec<_> = workers
                .iter_mut()
                .map(|w| {
                    let (plan, barrier) = (&plan, &barrier);
                    s.spawn(move || {
                        let mut cursor = 0usize;
                        let index = w.index;
                        let out = catch_unwind(AssertUnwindSafe(|| {
                            w.run_epoch(plan, round_base, barrier, &mut cursor)
                        }));
                        let out = match out {
                            Ok(r) => r,
                            Err(payload) => Err(Error::Worker {
                                worker: index,
                                batch: cursor,
                                msg: panic_message(payload.as_ref()),
                            }),
                        };
                        if let Err(e) = &out {
                            barrier.abort(format!("worker {index} stopped: {e}"));
                        }
                        out
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panics are caught"))
                .collect()
        });
        let wall = start.elapsed().as_secs_f64();

        let mut first_err = None;
        let mut epochs_ok = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Ok(e) => epochs_ok.push(e),
                Err(e) => {
                    // the root cause outranks the barrier errors it triggers
                    let replace = match &first_err {
                        None => true,
                        Some(Error::Sync(_)) => !matches!(e, Error::Sync(_)),
                        Some(_) => false,
                    };
                    if replace {
                        first_err = Some(e);
                    }
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        round_base += plan.rounds as u64;

        let rounds: Vec<usize> = epochs_ok.iter().map(|e| e.rounds).collect();
        if rounds.iter().any(|&r| r != plan.rounds) {
            return Err(Error::Sync(format!("unequal reduction rounds {rounds:?}")));
        }
        // per-worker means, then the same tree mean as the gradients
        let worker_losses: Vec<[f64; 1]> = epochs_ok
            .iter()
            .map(|e| [e.losses.iter().sum::<f64>() / e.losses.len().max(1) as f64])
            .collect();
        let refs: Vec<&[f64]> = worker_losses.iter().map(|l| l.as_slice()).collect();
        let loss = allreduce_mean(&refs)?[0];
        let mut times = ComponentTimes::default();
        for e in &epochs_ok {
            times.add(&e.times);
        }
        let times = times.scale(1.0 / epochs_ok.len() as f64);

        let reference: Vec<u64> = workers[0].params.dense.iter().map(|x| x.to_bits()).collect();
        report.replicas_identical &= workers
            .iter()
            .all(|w| w.params.dense.iter().map(|x| x.to_bits()).eq(reference.iter().copied()));

        let val_mrr = match &validation {
            Some(v) if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 => {
                let p = global_params(&initial, &workers);
                Some(
                    evaluate(&p, graph, v.triples, v.known, &Protocol::Filtered, TiePolicy::Mean)?
                        .mrr,
                )
            }
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            loss,
            val_mrr,
            wall_secs: wall,
            times,
            rounds,
            natural_batches: plan.natural.clone(),
            examples: plan.examples.clone(),
        };
        on_epoch(&record);
        report.epochs.push(record);
    }

    Ok(TrainOutcome {
        params: global_params(&initial, &workers),
        report,
    })
}
