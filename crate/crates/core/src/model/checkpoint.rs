//! Plain-text checkpoint: a header with the model configuration, then one
//! `block <name> <shape>` section per parameter block. Values use Rust's
//! shortest round-trip float formatting, so a read-back is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{InputMode, Matrix, ModelConfig, ModelParams, ParamLayout};
use crate::error::{Error, Result};

const MAGIC: &str = "kgdist-checkpoint";
const VERSION: u32 = 1;
const PER_LINE: usize = 8;

fn push_values(out: &mut String, values: &[f64]) {
    for chunk in values.chunks(PER_LINE) {
        let line: Vec<String> = chunk.iter().map(|x| format!("{x:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

pub fn write_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let c = &params.config;
    let mut out = String::new();
    let dims: Vec<String> = c.dims.iter().map(usize::to_string).collect();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "num_layers={}", c.num_layers);
    let _ = writeln!(out, "dims={}", dims.join(","));
    let _ = writeln!(out, "num_bases={}", c.num_bases);
    let _ = writeln!(out, "num_relations={}", c.num_relations);
    let _ = writeln!(out, "negatives_per_positive={}", c.negatives_per_positive);
    let _ = writeln!(out, "dropout={:e}", c.dropout);
    let _ = writeln!(out, "mode={}", c.mode.as_str());
    for (name, range, shape) in params.layout.blocks(c) {
        let shape: Vec<String> = shape.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "block {name} {}", shape.join("x"));
        push_values(&mut out, &params.dense[range]);
    }
    if let Some(t) = &params.embedding {
        let _ = writeln!(out, "block embedding {}x{}", t.rows, t.cols);
        push_values(&mut out, &t.data);
    }
    out.push_str("end\n");
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    path: &'a Path,
    lines: std::iter::Peekable<std::str::Lines<'a>>,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_owned(),
            msg: msg.into(),
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        self.lines
            .next()
            .ok_or_else(|| self.err("unexpected end of file"))
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        line.strip_prefix(key)
            .and_then(|s| s.strip_prefix('='))
            .ok_or_else(|| self.err(format!("expected '{key}=...', found '{line}'")))
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.field(key)?;
        v.parse()
            .map_err(|_| self.err(format!("bad value '{v}' for {key}")))
    }

    fn block(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let header = self.next()?;
        let expected: Vec<String> = shape.iter().map(usize::to_string).collect();
        let expected = format!("block {name} {}", expected.join("x"));
        if header != expected {
            return Err(self.err(format!("expected '{expected}', found '{header}'")));
        }
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        while values.len() < len {
            let line = self.next()?;
            for tok in line.split_whitespace() {
                values.push(
                    tok.parse::<f64>()
                        .map_err(|_| self.err(format!("bad number '{tok}' in {name}")))?,
                );
            }
        }
        if values.len() != len {
            return Err(self.err(format!("block {name} has {} values, expected {len}", values.len())));
        }
        Ok(values)
    }
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        path,
        lines: text.lines().peekable(),
    };
    let magic = r.next()?;
    if magic != format!("{MAGIC} {VERSION}") {
        return Err(r.err(format!("not a version-{VERSION} checkpoint")));
    }
    let num_layers = r.parse("num_layers")?;
    let dims = r
        .field("dims")?
        .split(',')
        .map(|d| d.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| r.err("bad dims"))?;
    let config = ModelConfig {
        num_layers,
        dims,
        num_bases: r.parse("num_bases")?,
        num_relations: r.parse("num_relations")?,
        negatives_per_positive: r.parse("negatives_per_positive")?,
        dropout: r.parse("dropout")?,
        mode: r.field("mode")?.parse::<InputMode>()?,
    };
    config.validate()?;
    let layout = ParamLayout::new(&config);
    let mut dense = vec![0.0; layout.len()];
    for (name, range, shape) in layout.blocks(&config) {
        dense[range].copy_from_slice(&r.block(&name, &shape)?);
    }
    let embedding = match config.mode {
        InputMode::Features => None,
        InputMode::Embedding => {
            let Some(&header) = r.lines.peek() else {
                return Err(r.err("missing embedding block"));
            };
            let shape = header
                .strip_prefix("block embedding ")
                .and_then(|s| s.split_once('x'))
                .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
                .ok_or_else(|| r.err("missing embedding block"))?;
            let data = r.block("embedding", &[shape.0, shape.1])?;
            Some(Matrix {
                rows: shape.0,
                cols: shape.1,
                data,
            })
        }
    };
    if r.next()? != "end" {
        return Err(r.err("trailing data after last block"));
    }
    Ok(ModelParams {
        config,
        layout,
        dense,
        embedding,
    })
}
