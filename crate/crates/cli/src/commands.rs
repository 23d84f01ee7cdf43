use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use kgdist::eval::{evaluate, read_candidates, write_results, KnownTriples, Protocol, Side, TiePolicy};
use kgdist::graph::{
    generate_local, generate_synthetic, graph_stats, load_dataset, load_features, write_dataset,
    DatasetPaths, DatasetSplit, KnowledgeGraph,
};
use kgdist::model::{read_checkpoint, write_checkpoint, InputMode, ModelConfig};
use kgdist::partition::{
    neighborhood_expand, partition, partition_stats, read_partitions, write_partitions,
    PartitionerKind,
};
use kgdist::trainer::{bench_components, train_with, BenchConfig, OptimizerKind, TrainConfig, Validation};
use sha2::{Digest, Sha256};

use crate::config::{
    BenchArgs, ConfigFile, DataArgs, Effective, EvalArgs, ModelArgs, RunArgs, Section, TrainArgs,
};
use crate::{Command, UsageError};

/// Input files and graph identity recorded with every run.
#[derive(Default)]
struct Provenance {
    inputs: Vec<PathBuf>,
    graph_checksum: Option<String>,
}

impl Provenance {
    fn add(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let mut files = Vec::new();
        for p in &self.inputs {
            collect_files(p, &mut files)?;
        }
        files.sort();
        files.dedup();
        let mut out = String::new();
        if let Some(sum) = &self.graph_checksum {
            let _ = writeln!(out, "graph_checksum={sum}");
        }
        for f in files {
            let bytes = fs::read(&f).with_context(|| format!("reading {}", f.display()))?;
            let _ = writeln!(out, "{:x}  {}", Sha256::digest(&bytes), f.display());
        }
        let path = dir.join("checksums.txt");
        fs::write(&path, out).with_context(|| format!("writing {}", path.display()))
    }
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        for entry in fs::read_dir(path).with_context(|| format!("listing {}", path.display()))? {
            collect_files(&entry?.path(), out)?;
        }
    } else if path.exists() {
        out.push(path.to_path_buf());
    }
    Ok(())
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

struct Dataset {
    graph: KnowledgeGraph,
    split: DatasetSplit,
}

fn load(data: &DataArgs, prov: &mut Provenance) -> Result<Dataset> {
    let dir = data.data.as_ref().ok_or_else(|| usage("--data is required"))?;
    let paths = DatasetPaths::from_dir(dir);
    let (mut graph, split) = load_dataset(&paths)?;
    prov.add(&paths.train);
    for p in [&paths.valid, &paths.test, &paths.entity_dict, &paths.relation_dict]
        .into_iter()
        .flatten()
    {
        prov.add(p);
    }
    if let Some(f) = &data.features {
        graph = load_features(f, graph)?;
        prov.add(f);
    }
    prov.graph_checksum = Some(graph.checksum());
    Ok(Dataset { graph, split })
}

fn model_config(m: &ModelArgs, graph: &KnowledgeGraph) -> Result<ModelConfig> {
    let mode: InputMode = m.mode.as_deref().unwrap().parse()?;
    let mut cfg = ModelConfig::uniform(
        m.layers.unwrap(),
        m.dim.unwrap(),
        m.bases.unwrap(),
        graph.num_relations(),
        mode,
    );
    cfg.negatives_per_positive = m.negatives.unwrap();
    cfg.dropout = m.dropout.unwrap();
    if mode == InputMode::Features {
        let f = graph
            .features()
            .ok_or_else(|| usage("feature mode needs --features"))?;
        cfg.dims[0] = f.dim();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_config(t: &TrainArgs, workers: usize) -> Result<TrainConfig> {
    let optimizer: OptimizerKind = t.optimizer.as_deref().unwrap().parse()?;
    let cfg = TrainConfig {
        epochs: t.epochs.unwrap(),
        batch_size: t.batch_size,
        fixed_num_batches: t.fixed_batches,
        learning_rate: t.learning_rate.unwrap(),
        optimizer,
        clip_norm: t.clip_norm,
        seed: t.seed.unwrap(),
        num_workers: workers,
        eval_every: t.eval_every.unwrap(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let items = s
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse::<T>().map_err(|e| usage(format!("bad {what} '{x}': {e}"))))
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        return Err(usage(format!("empty {what} list")));
    }
    Ok(items)
}

pub fn run(cmd: Command, config: Option<&Path>) -> Result<()> {
    let file = ConfigFile::load(config)?;
    let mut eff = Effective::default();
    let mut prov = Provenance::default();
    if let Some(c) = config {
        prov.add(c);
    }
    match cmd {
        Command::Generate { gen, out } => {
            let gen = file.resolve(gen)?;
            eff.add(&gen)?;
            let args = (gen.entities.unwrap(), gen.relations.unwrap(), gen.avg_degree.unwrap(), gen.seed.unwrap());
            let (graph, split) = match gen.shape.as_deref().unwrap() {
                "skewed" => generate_synthetic(args.0, args.1, args.2, args.3)?,
                "local" => generate_local(args.0, args.1, args.2, args.3)?,
                other => {
                    return Err(kgdist::Error::Validation(format!(
                        "unknown shape '{other}' (expected skewed or local)"
                    ))
                    .into())
                }
            };
            create_out(&out)?;
            write_dataset(&graph, &split, &out)?;
            prov.graph_checksum = Some(graph.checksum());
            eff.write(&out)?;
            prov.write(&out)?;
            print!("{}", graph_stats(&graph));
            println!(
                "split      train {} valid {} test {}",
                split.train.len(),
                split.valid.len(),
                split.test.len()
            );
            Ok(())
        }
        Command::Stats { data, out } => {
            let data = file.resolve(data)?;
            eff.add(&data)?;
            let ds = load(&data, &mut prov)?;
            let mut text = graph_stats(&ds.graph).to_string();
            let _ = writeln!(
                text,
                "split      train {} valid {} test {}",
                ds.split.train.len(),
                ds.split.valid.len(),
                ds.split.test.len()
            );
            let _ = writeln!(text, "checksum   {}", ds.graph.checksum());
            print!("{text}");
            if let Some(out) = out {
                create_out(&out)?;
                write_text(&out, "stats.txt", &text)?;
                eff.write(&out)?;
                prov.write(&out)?;
            }
            Ok(())
        }
        Command::Partition { data, part, out } => {
            let data = file.resolve(data)?;
            let part = file.resolve(part)?;
            eff.add(&data)?;
            eff.add(&part)?;
            let kind: PartitionerKind = part.partitioner.as_deref().unwrap().parse()?;
            let ds = load(&data, &mut prov)?;
            let ps = partition(&ds.graph, kind, part.parts.unwrap(), part.seed.unwrap())?;
            let ps = neighborhood_expand(&ps, &ds.graph, part.hops.unwrap())?;
            create_out(&out)?;
            eff.write(&out)?;
            prov.write(&out)?;
            write_partitions(&ps, &out)?;
            let stats = partition_stats(&ps)?.to_string();
            write_text(&out, "stats.txt", &stats)?;
            print!("{stats}");
            Ok(())
        }
        Command::Train {
            data,
            run,
            model,
            train,
            out,
        } => {
            let data = file.resolve(data)?;
            let run = file.resolve(run)?;
            let model = file.resolve(model)?;
            let train = file.resolve(train)?;
            for s in [&data as &dyn AddTo, &run, &model, &train] {
                s.add_to(&mut eff)?;
            }
            cmd_train(&data, &run, &model, &train, &out, &eff, &mut prov)
        }
        Command::Eval { data, eval, out } => {
            let data = file.resolve(data)?;
            let eval = file.resolve(eval)?;
            eff.add(&data)?;
            eff.add(&eval)?;
            cmd_eval(&data, &eval, &out, &eff, &mut prov)
        }
        Command::Bench {
            data,
            bench,
            model,
            train,
            out,
        } => {
            let data = file.resolve(data)?;
            let bench = file.resolve(bench)?;
            let model = file.resolve(model)?;
            let train = file.resolve(train)?;
            for s in [&data as &dyn AddTo, &bench, &model, &train] {
                s.add_to(&mut eff)?;
            }
            cmd_bench(&data, &bench, &model, &train, &out, &eff, &mut prov)
        }
    }
}

trait AddTo {
    fn add_to(&self, eff: &mut Effective) -> Result<()>;
}

impl<S: Section> AddTo for S {
    fn add_to(&self, eff: &mut Effective) -> Result<()> {
        eff.add(self)
    }
}

fn cmd_train(
    data: &DataArgs,
    run: &RunArgs,
    model: &ModelArgs,
    train: &TrainArgs,
    out: &Path,
    eff: &Effective,
    prov: &mut Provenance,
) -> Result<()> {
    let parts_dir = run
        .parts_dir
        .as_ref()
        .ok_or_else(|| usage("--parts-dir is required"))?;
    let ds = load(data, prov)?;
    let mcfg = model_config(model, &ds.graph)?;
    let pset = read_partitions(parts_dir)?;
    prov.add(&parts_dir.join("meta"));
    for p in &pset.partitions {
        prov.add(&parts_dir.join(format!("p{}", p.id)));
    }
    pset.verify_provenance(&ds.graph, mcfg.num_layers)?;
    let tcfg = train_config(train, run.workers.unwrap_or(pset.len()))?;

    create_out(out)?;
    eff.write(out)?;
    prov.write(out)?;

    let known = KnownTriples::new(ds.split.all());
    let validation = (tcfg.eval_every > 0 && !ds.split.valid.is_empty()).then(|| Validation {
        triples: &ds.split.valid,
        known: &known,
    });
    let mut metrics = String::new();
    let mut timings = String::new();
    let outcome = train_with(&pset, &ds.graph, &mcfg, &tcfg, validation, |rec| {
        println!("{rec}");
        let _ = write!(metrics, "epoch={} loss={}", rec.epoch, rec.loss);
        if let Some(m) = rec.val_mrr {
            let _ = write!(metrics, " val_mrr={m}");
        }
        let _ = writeln!(metrics, " rounds={}", rec.rounds.first().copied().unwrap_or(0));
        let t = &rec.times;
        let _ = writeln!(
            timings,
            "epoch={} wall_s={:.6} sampling_s={:.6} cg_build_s={:.6} encode_s={:.6} update_s={:.6}",
            rec.epoch, rec.wall_secs, t.sampling, t.cg_build, t.encode, t.update
        );
    });
    // keep whatever finished before a failure
    write_text(out, "metrics.txt", &metrics)?;
    write_text(out, "timings.log", &timings)?;
    let outcome = outcome?;
    write_checkpoint(&outcome.params, &out.join("checkpoint.txt"))?;
    println!(
        "trained {} epochs on {} workers; checkpoint {}",
        outcome.report.epochs.len(),
        outcome.report.num_workers,
        out.join("checkpoint.txt").display()
    );
    Ok(())
}

fn cmd_eval(
    data: &DataArgs,
    eval: &EvalArgs,
    out: &Path,
    eff: &Effective,
    prov: &mut Provenance,
) -> Result<()> {
    let ckpt = eval
        .checkpoint
        .as_ref()
        .ok_or_else(|| usage("--checkpoint is required"))?;
    let policy: TiePolicy = eval.ties.as_deref().unwrap().parse()?;
    let candidates_mode = match eval.protocol.as_deref().unwrap() {
        "filtered" => false,
        "candidates" => true,
        other => {
            return Err(usage(format!(
                "unknown protocol '{other}' (expected filtered or candidates)"
            )))
        }
    };
    if candidates_mode && eval.candidates.is_none() {
        return Err(usage("--protocol candidates needs --candidates FILE"));
    }
    let ds = load(data, prov)?;
    let triples = match eval.split.as_deref().unwrap() {
        "test" => &ds.split.test,
        "valid" => &ds.split.valid,
        other => return Err(usage(format!("unknown split '{other}' (expected test or valid)"))),
    };
    if triples.is_empty() {
        return Err(kgdist::Error::Validation("the evaluated split is empty".into()).into());
    }
    let params = read_checkpoint(ckpt)?;
    prov.add(ckpt);
    if params.config.num_relations != ds.graph.num_relations() {
        return Err(kgdist::Error::Provenance(format!(
            "checkpoint has {} relations, dataset has {}",
            params.config.num_relations,
            ds.graph.num_relations()
        ))
        .into());
    }
    if params.config.mode == InputMode::Features && ds.graph.features().is_none() {
        return Err(usage("the checkpoint was trained on features; pass --features"));
    }
    let protocol = match &eval.candidates {
        Some(path) if candidates_mode => {
            prov.add(path);
            Protocol::Candidates(read_candidates(path, triples.len())?)
        }
        _ => Protocol::Filtered,
    };
    let known = KnownTriples::new(ds.split.all());
    let res = evaluate(&params, &ds.graph, triples, &known, &protocol, policy)?;

    create_out(out)?;
    eff.write(out)?;
    prov.write(out)?;
    write_results(&res, &out.join("results.tsv"))?;
    let mut metrics = format!("records={}\nmrr={}\n", res.records.len(), res.mrr);
    for (k, v) in &res.hits {
        let _ = writeln!(metrics, "hits@{k}={v}");
    }
    for side in [Side::Head, Side::Tail] {
        let s = res.for_side(side);
        if !s.records.is_empty() {
            let _ = writeln!(metrics, "{}_mrr={}", side.as_str(), s.mrr);
        }
    }
    write_text(out, "metrics.txt", &metrics)?;
    let summary = res.to_string();
    write_text(out, "summary.txt", &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_bench(
    data: &DataArgs,
    bench: &BenchArgs,
    model: &ModelArgs,
    train: &TrainArgs,
    out: &Path,
    eff: &Effective,
    prov: &mut Provenance,
) -> Result<()> {
    let workers: Vec<usize> = parse_list(bench.workers.as_deref().unwrap(), "worker count")?;
    let partitioners: Vec<PartitionerKind> =
        parse_list(bench.partitioners.as_deref().unwrap(), "partitioner")?;
    let ds = load(data, prov)?;
    let mcfg = model_config(model, &ds.graph)?;
    let tcfg = train_config(train, 1)?;
    create_out(out)?;
    eff.write(out)?;
    prov.write(out)?;
    let table = bench_components(
        &ds.graph,
        &BenchConfig {
            workers,
            partitioners,
            model: mcfg,
            train: tcfg,
            partition_seed: bench.partition_seed.unwrap(),
        },
    )?;
    write_text(out, "bench.tsv", &table.to_tsv())?;
    let text = table.to_string();
    write_text(out, "bench.txt", &text)?;
    print!("{text}");
    Ok(())
}
