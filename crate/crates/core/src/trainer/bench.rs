use std::fmt;

use super::{train, ComponentTimes, TrainConfig};
use crate::error::Result;
use crate::graph::KnowledgeGraph;
use crate::model::ModelConfig;
use crate::partition::{neighborhood_expand, partition, PartitionerKind};

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub workers: Vec<usize>,
    pub partitioners: Vec<PartitionerKind>,
    pub model: ModelConfig,
    /// `num_workers` is overridden per row.
    pub train: TrainConfig,
    pub partition_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub partitioner: PartitionerKind,
    pub workers: usize,
    pub replication_factor: f64,
    pub mean_total_edges: f64,
    pub rounds: usize,
    /// Mean per-batch component times over workers and epochs.
    pub per_batch: ComponentTimes,
    pub epoch_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

/// Partitions, expands and trains once per (partitioner, worker count),
/// recording per-batch component times and epoch wall time.
pub fn bench_components(graph: &KnowledgeGraph, cfg: &BenchConfig) -> Result<BenchTable> {
    let mut rows = Vec::new();
    for &kind in &cfg.partitioners {
        for &p in &cfg.workers {
            let ps = partition(graph, kind, p, cfg.partition_seed)?;
            let ps = neighborhood_expand(&ps, graph, cfg.model.num_layers)?;
            let rf = ps.replication_factor()?;
            let mean_total_edges = ps.partitions.iter().map(|x| x.total_edges()).sum::<usize>()
                as f64
                / p as f64;
            let tc = TrainConfig {
                num_workers: p,
                eval_every: 0,
                ..cfg.train.clone()
            };
            let out = train(&ps, graph, &cfg.model, &tc, None)?;
            let epochs = out.report.epochs.len().max(1) as f64;
            let mut per_batch = ComponentTimes::default();
            let mut epoch_secs = 0.0;
            for e in &out.report.epochs {
                per_batch.add(&e.per_batch());
                epoch_secs += e.wall_secs;
            }
            rows.push(BenchRow {
                partitioner: kind,
                workers: p,
                replication_factor: rf,
                mean_total_edges,
                rounds: out
                    .report
                    .epochs
                    .first()
                    .and_then(|e| e.rounds.first().copied())
                    .unwrap_or(0),
                per_batch: per_batch.scale(1.0 / epochs),
                epoch_secs: epoch_secs / epochs,
            });
        }
    }
    Ok(BenchTable { rows })
}

impl BenchTable {
    pub fn row(&self, kind: PartitionerKind, workers: usize) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.partitioner == kind && r.workers == workers)
    }

    /// Tab-separated form with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "partitioner\tworkers\trf\tmean_total_edges\trounds\tsampling_s\tcg_build_s\tencode_s\tupdate_s\tepoch_s\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.1}\t{}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6}\n",
                r.partitioner,
                r.workers,
                r.replication_factor,
                r.mean_total_edges,
                r.rounds,
                r.per_batch.sampling,
                r.per_batch.cg_build,
                r.per_batch.encode,
                r.per_batch.update,
                r.epoch_secs
            ));
        }
        out
    }
}

impl fmt::Display for BenchTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<11} {:>7} {:>7} {:>12} {:>7} {:>12} {:>12} {:>12} {:>10}",
            "partitioner", "workers", "RF", "total edges", "rounds", "cg build", "encode", "update", "epoch"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<11} {:>7} {:>7.3} {:>12.0} {:>7} {:>11.3}ms {:>11.3}ms {:>11.3}ms {:>9.3}s",
                r.partitioner.as_str(),
                r.workers,
                r.replication_factor,
                r.mean_total_edges,
                r.rounds,
                r.per_batch.cg_build * 1e3,
                r.per_batch.encode * 1e3,
                r.per_batch.update * 1e3,
                r.epoch_secs
            )?;
        }
        Ok(())
    }
}
