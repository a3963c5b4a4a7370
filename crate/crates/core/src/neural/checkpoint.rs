//! Plain-text parameter checkpoints.
//!
//! ```text
//! tsmom-checkpoint
//! opset 1
//! seed 42
//! meta <key> <value...>          (zero or more)
//! tensors <count>
//! tensor <name> <rows> <cols>
//! <rows*cols values, space separated, row-major>
//! ...
//! adam <step> <lr> <beta1> <beta2> <eps>    (optional)
//! m <name>
//! <values>
//! v <name>
//! <values>
//! ...
//! end
//! ```
//!
//! Values use the shortest decimal form that parses back to the same float,
//! so a save/load cycle is exact.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::scalar::Real;

use super::optim::{Adam, AdamConfig};
use super::tensor::Tensor;
use super::{NeuralError, OPSET_VERSION};

const MAGIC: &str = "tsmom-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub opset: u32,
    pub seed: u64,
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<T>)>,
    pub adam: Option<Adam<T>>,
}

fn bad(msg: impl Into<String>) -> NeuralError {
    NeuralError::Checkpoint(msg.into())
}

fn write_values<T: Real, W: Write>(w: &mut W, t: &Tensor<T>) -> std::io::Result<()> {
    let mut first = true;
    for x in t.data() {
        if !first {
            w.write_all(b" ")?;
        }
        first = false;
        write!(w, "{x}")?;
    }
    writeln!(w)
}

fn parse<F: FromStr>(s: Option<&str>, what: &str) -> Result<F, NeuralError> {
    s.and_then(|v| v.parse().ok()).ok_or_else(|| bad(format!("bad or missing {what}")))
}

impl<T: Real> Checkpoint<T> {
    pub fn new(seed: u64, tensors: Vec<(String, Tensor<T>)>) -> Self {
        Self { opset: OPSET_VERSION, seed, meta: Vec::new(), tensors, adam: None }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), NeuralError> {
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "opset {}", self.opset)?;
        writeln!(w, "seed {}", self.seed)?;
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(bad(format!("meta key {k:?} not storable")));
            }
            writeln!(w, "meta {k} {v}")?;
        }
        writeln!(w, "tensors {}", self.tensors.len())?;
        for (name, t) in &self.tensors {
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(bad(format!("tensor name {name:?} not storable")));
            }
            writeln!(w, "tensor {name} {} {}", t.rows(), t.cols())?;
            write_values(&mut w, t)?;
        }
        if let Some(adam) = &self.adam {
            if adam.m.len() != self.tensors.len() {
                return Err(bad("optimizer state does not match tensor list"));
            }
            let c = adam.config;
            writeln!(w, "adam {} {} {} {} {}", adam.step, c.lr, c.beta1, c.beta2, c.eps)?;
            for ((name, _), (m, v)) in self.tensors.iter().zip(adam.m.iter().zip(&adam.v)) {
                writeln!(w, "m {name}")?;
                write_values(&mut w, m)?;
                writeln!(w, "v {name}")?;
                write_values(&mut w, v)?;
            }
        }
        writeln!(w, "end")?;
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self, NeuralError> {
        let mut lines = BufReader::new(r).lines();
        let mut next_line = || -> Result<String, NeuralError> {
            lines.next().ok_or_else(|| bad("unexpected end of file"))?.map_err(NeuralError::from)
        };
        if next_line()?.trim() != MAGIC {
            return Err(bad("missing header"));
        }
        let l = next_line()?;
        let mut it = l.split_whitespace();
        if it.next() != Some("opset") {
            return Err(bad("missing opset"));
        }
        let opset: u32 = parse(it.next(), "opset")?;
        if opset != OPSET_VERSION {
            return Err(bad(format!("opset {opset} unsupported (expected {OPSET_VERSION})")));
        }
        let l = next_line()?;
        let mut it = l.split_whitespace();
        if it.next() != Some("seed") {
            return Err(bad("missing seed"));
        }
        let seed: u64 = parse(it.next(), "seed")?;

        let mut meta = Vec::new();
        let mut l = next_line()?;
        while let Some(rest) = l.strip_prefix("meta ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.push((k.to_string(), v.to_string()));
            l = next_line()?;
        }
        let mut it = l.split_whitespace();
        if it.next() != Some("tensors") {
            return Err(bad("missing tensor count"));
        }
        let count: usize = parse(it.next(), "tensor count")?;

        let read_values = |line: String, n: usize, what: &str| -> Result<Vec<T>, NeuralError> {
            let vals: Vec<T> = line
                .split_whitespace()
                .map(|s| s.parse::<T>().map_err(|_| bad(format!("unparseable value {s:?} in {what}"))))
                .collect::<Result<_, _>>()?;
            if vals.len() != n {
                return Err(bad(format!("{what}: expected {n} values, found {}", vals.len())));
            }
            Ok(vals)
        };

        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let l = next_line()?;
            let mut it = l.split_whitespace();
            if it.next() != Some("tensor") {
                return Err(bad("expected tensor record"));
            }
            let name = it.next().ok_or_else(|| bad("tensor without name"))?.to_string();
            let rows: usize = parse(it.next(), "rows")?;
            let cols: usize = parse(it.next(), "cols")?;
            let vals = read_values(next_line()?, rows * cols, &name)?;
            tensors.push((name, Tensor::new([rows, cols], vals)?));
        }

        let mut adam = None;
        let l = next_line()?;
        let l = if let Some(rest) = l.strip_prefix("adam ") {
            let mut it = rest.split_whitespace();
            let step: u64 = parse(it.next(), "adam step")?;
            let config = AdamConfig {
                lr: parse(it.next(), "lr")?,
                beta1: parse(it.next(), "beta1")?,
                beta2: parse(it.next(), "beta2")?,
                eps: parse(it.next(), "eps")?,
            };
            let (mut m, mut v) = (Vec::new(), Vec::new());
            for (name, t) in &tensors {
                for (tag, dst) in [("m", &mut m), ("v", &mut v)] {
                    let head = next_line()?;
                    if head != format!("{tag} {name}") {
                        return Err(bad(format!("expected optimizer record {tag} {name}")));
                    }
                    let vals = read_values(next_line()?, t.len(), name)?;
                    dst.push(Tensor::new(t.shape(), vals)?);
                }
            }
            adam = Some(Adam { config, step, m, v });
            next_line()?
        } else {
            l
        };
        if l.trim() != "end" {
            return Err(bad("missing end marker"));
        }
        Ok(Self { opset, seed, meta, tensors, adam })
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        let f = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        Self::read(std::fs::File::open(path)?)
    }
}
