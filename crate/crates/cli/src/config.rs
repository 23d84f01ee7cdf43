//! Run configuration: one TOML section per flag group. Flags override the
//! file, the file overrides built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// Declares a flag group whose fields are all optional on the command line
/// and in the file; fields with a default are always `Some` after `resolve`.
macro_rules! section {
    (
        $(#[$sm:meta])*
        $name:ident = $key:literal {
            $( $(#[$fm:meta])* $field:ident : $ty:ty $(= $def:expr)? ),* $(,)?
        }
    ) => {
        $(#[$sm])*
        #[derive(Args, Serialize, Deserialize, Clone, Debug, Default, PartialEq)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $( $(#[$fm])* #[arg(long)] pub $field: Option<$ty>, )*
        }

        impl Section for $name {
            const KEY: &'static str = $key;

            fn resolve(self, file: Self) -> Self {
                $name { $( $field: self.$field.or(file.$field) $( .or(Some($def)) )?, )* }
            }
        }
    };
}

pub trait Section: Serialize + DeserializeOwned + Default {
    const KEY: &'static str;
    fn resolve(self, file: Self) -> Self;
}

section! {
    DataArgs = "data" {
        /// Dataset directory with train.txt and optional valid.txt, test.txt,
        /// entities.dict, relations.dict.
        data: PathBuf,
        /// Vertex feature file (`id v1 ... vd` per line).
        features: PathBuf,
    }
}

section! {
    GenerateArgs = "generate" {
        entities: usize = 1000,
        relations: usize = 10,
        avg_degree: f64 = 4.0,
        /// skewed (hub-heavy communities) or local (id-local edges).
        shape: String = "skewed".to_string(),
        seed: u64 = 0,
    }
}

section! {
    PartitionArgs = "partition" {
        parts: usize = 1,
        hops: usize = 2,
        /// vertexcut or random.
        partitioner: String = "vertexcut".to_string(),
        seed: u64 = 0,
    }
}

section! {
    ModelArgs = "model" {
        layers: usize = 2,
        /// Hidden and output width; the input width follows the features in
        /// feature mode.
        dim: usize = 16,
        bases: usize = 2,
        /// Corruptions per positive edge.
        negatives: usize = 1,
        dropout: f64 = 0.0,
        /// embedding (learned input rows) or features.
        mode: String = "embedding".to_string(),
    }
}

section! {
    TrainArgs = "train" {
        epochs: usize = 10,
        batch_size: usize,
        /// Reduction rounds per epoch for every worker.
        fixed_batches: usize,
        learning_rate: f64 = 0.01,
        /// adam or sgd.
        optimizer: String = "adam".to_string(),
        clip_norm: f64,
        seed: u64 = 0,
        /// Validate every this many epochs; 0 disables it.
        eval_every: usize = 0,
    }
}

section! {
    RunArgs = "run" {
        /// Partition directory written by `partition`.
        parts_dir: PathBuf,
        /// Defaults to the number of partitions.
        workers: usize,
    }
}

section! {
    EvalArgs = "eval" {
        checkpoint: PathBuf,
        /// filtered or candidates.
        protocol: String = "filtered".to_string(),
        /// `index<TAB>c1,c2,...` lines, one per evaluated triplet.
        candidates: PathBuf,
        /// test or valid.
        split: String = "test".to_string(),
        /// mean, optimistic or pessimistic.
        ties: String = "mean".to_string(),
    }
}

section! {
    BenchArgs = "bench" {
        /// Comma-separated worker counts.
        workers: String = "1,2,4".to_string(),
        /// Comma-separated partitioners.
        partitioners: String = "vertexcut,random".to_string(),
        partition_seed: u64 = 0,
    }
}

const SECTIONS: [&str; 8] = ["data", "generate", "partition", "model", "train", "run", "eval", "bench"];

/// Parsed config file, kept as a table so each command picks its sections.
#[derive(Default)]
pub struct ConfigFile {
    table: toml::Table,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        if let Some(bad) = table.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(UsageError(format!(
                "config {}: unknown section [{bad}] (expected one of {})",
                path.display(),
                SECTIONS.join(", ")
            ))
            .into());
        }
        Ok(ConfigFile { table })
    }

    /// Flags over file over defaults.
    pub fn resolve<S: Section>(&self, flags: S) -> Result<S> {
        let file = match self.table.get(S::KEY) {
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| UsageError(format!("config section [{}]: {e}", S::KEY)))?,
            None => S::default(),
        };
        Ok(flags.resolve(file))
    }
}

/// Effective configuration, written next to every command's outputs.
#[derive(Default)]
pub struct Effective {
    table: toml::Table,
}

impl Effective {
    pub fn add<S: Section>(&mut self, section: &S) -> Result<()> {
        let value = toml::Value::try_from(section).context("serializing effective config")?;
        self.table.insert(S::KEY.to_string(), value);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("config.toml");
        let text = toml::to_string(&self.table).context("serializing effective config")?;
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file = ConfigFile {
            table: "[train]\nepochs = 3\nlearning_rate = 0.5\n".parse().unwrap(),
        };
        let flags = TrainArgs {
            epochs: Some(7),
            ..TrainArgs::default()
        };
        let t = file.resolve(flags).unwrap();
        assert_eq!(t.epochs, Some(7));
        assert_eq!(t.learning_rate, Some(0.5));
        assert_eq!(t.optimizer.as_deref(), Some("adam"));
        assert_eq!(t.batch_size, None);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let file = ConfigFile {
            table: "[train]\nepoch = 3\n".parse().unwrap(),
        };
        assert!(file.resolve(TrainArgs::default()).is_err());
    }

    #[test]
    fn effective_config_round_trips() {
        let m = ConfigFile::default().resolve(ModelArgs::default()).unwrap();
        let mut eff = Effective::default();
        eff.add(&m).unwrap();
        let text = toml::to_string(&eff.table).unwrap();
        let back = ConfigFile {
            table: text.parse().unwrap(),
        };
        assert_eq!(back.resolve(ModelArgs::default()).unwrap(), m);
    }
}
