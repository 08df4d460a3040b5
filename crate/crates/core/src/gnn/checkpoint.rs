//! Plain-text checkpoint format for [`PredictorModel`].
//!
//! ```text
//! meg-predictor-checkpoint v1
//! task classification 2          (or: task regression)
//! hidden_size 32
//! dropout 0.1
//! layers 3 4                     (conv layers, head layers)
//! param conv0.w_self 10 32
//! <rows*cols values, row-major, space separated>
//! ...
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::io::{BufRead, Write};

use super::{Dense, GnnError, GraphConvLayer, PredictorModel};
use crate::data::Task;
use crate::tensor::Matrix;

pub const CHECKPOINT_SCHEMA: &str = "meg-predictor-checkpoint v1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported checkpoint schema {found:?} (expected {CHECKPOINT_SCHEMA:?})")]
    Schema { found: String },
    #[error("malformed checkpoint at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("checkpoint describes an inconsistent model: {0}")]
    Model(#[from] GnnError),
}

fn write_param<W: Write>(w: &mut W, name: &str, m: &Matrix) -> std::io::Result<()> {
    writeln!(w, "param {name} {} {}", m.rows(), m.cols())?;
    let values: Vec<String> = m.data().iter().map(|v| v.to_string()).collect();
    writeln!(w, "{}", values.join(" "))
}

impl PredictorModel {
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        writeln!(w, "{CHECKPOINT_SCHEMA}")?;
        match self.task {
            Task::Classification { n_classes } => writeln!(w, "task classification {n_classes}")?,
            Task::Regression => writeln!(w, "task regression")?,
        }
        writeln!(w, "hidden_size {}", self.hidden_size)?;
        writeln!(w, "dropout {}", self.dropout)?;
        writeln!(w, "layers {} {}", self.convs.len(), self.head.len())?;
        for (k, c) in self.convs.iter().enumerate() {
            write_param(&mut w, &format!("conv{k}.w_self"), &c.w_self)?;
            write_param(&mut w, &format!("conv{k}.w_neigh"), &c.w_neigh)?;
            write_param(&mut w, &format!("conv{k}.bias"), &c.bias)?;
        }
        for (k, d) in self.head.iter().enumerate() {
            write_param(&mut w, &format!("head{k}.weight"), &d.weight)?;
            write_param(&mut w, &format!("head{k}.bias"), &d.bias)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self, CheckpointError> {
        let mut lines = Reader {
            lines: r.lines(),
            line: 0,
        };
        let schema = lines.next_line()?;
        if schema.trim() != CHECKPOINT_SCHEMA {
            return Err(CheckpointError::Schema {
                found: schema.trim().to_string(),
            });
        }
        let task_line = lines.keyed("task")?;
        let task = match task_line.as_slice() {
            [kind] if kind == "regression" => Task::Regression,
            [kind, n] if kind == "classification" => Task::Classification {
                n_classes: lines.parse(n)?,
            },
            _ => return Err(lines.malformed("unknown task")),
        };
        let hidden_size = lines.single("hidden_size")?;
        let dropout = lines.single("dropout")?;
        let counts = lines.keyed("layers")?;
        if counts.len() != 2 {
            return Err(lines.malformed("expected conv and head layer counts"));
        }
        let (n_conv, n_head): (usize, usize) = (lines.parse(&counts[0])?, lines.parse(&counts[1])?);
        let mut convs = Vec::with_capacity(n_conv);
        for k in 0..n_conv {
            convs.push(GraphConvLayer {
                w_self: lines.param(&format!("conv{k}.w_self"))?,
                w_neigh: lines.param(&format!("conv{k}.w_neigh"))?,
                bias: lines.param(&format!("conv{k}.bias"))?,
            });
        }
        let mut head = Vec::with_capacity(n_head);
        for k in 0..n_head {
            head.push(Dense {
                weight: lines.param(&format!("head{k}.weight"))?,
                bias: lines.param(&format!("head{k}.bias"))?,
            });
        }
        Ok(PredictorModel::from_parts(
            task,
            hidden_size,
            dropout,
            convs,
            head,
        )?)
    }
}

struct Reader<I> {
    lines: I,
    line: usize,
}

impl<I: Iterator<Item = std::io::Result<String>>> Reader<I> {
    fn malformed(&self, message: &str) -> CheckpointError {
        CheckpointError::Malformed {
            line: self.line,
            message: message.to_string(),
        }
    }

    fn next_line(&mut self) -> Result<String, CheckpointError> {
        self.line += 1;
        match self.lines.next() {
            Some(l) => Ok(l?),
            None => Err(self.malformed("unexpected end of file")),
        }
    }

    fn parse<T: std::str::FromStr>(&self, s: &str) -> Result<T, CheckpointError> {
        s.parse()
            .map_err(|_| self.malformed(&format!("cannot parse {s:?}")))
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<String>, CheckpointError> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(self.malformed(&format!("expected `{key}`")));
        }
        Ok(parts.map(str::to_string).collect())
    }

    fn single<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, CheckpointError> {
        match self.keyed(key)?.as_slice() {
            [v] => self.parse(v),
            _ => Err(self.malformed(&format!("`{key}` takes one value"))),
        }
    }

    fn param(&mut self, name: &str) -> Result<Matrix, CheckpointError> {
        let header = self.keyed("param")?;
        if header.len() != 3 || header[0] != name {
            return Err(self.malformed(&format!("expected parameter {name}")));
        }
        let rows: usize = self.parse(&header[1])?;
        let cols: usize = self.parse(&header[2])?;
        let values = self
            .next_line()?
            .split_whitespace()
            .map(|v| self.parse::<f64>(v))
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != rows * cols {
            return Err(self.malformed(&format!(
                "{name}: {} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Ok(Matrix::from_vec(rows, cols, values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    #[test]
    fn round_trip_is_exact() {
        for task in [Task::Classification { n_classes: 3 }, Task::Regression] {
            let model = PredictorModel::new(task, 8, &[6, 4], 0.1, 11);
            let mut buf = Vec::new();
            model.save(&mut buf).unwrap();
            let back = PredictorModel::load(buf.as_slice()).unwrap();
            assert_eq!(back, model);
            let m = parse_smiles("CC(=O)N").unwrap();
            assert_eq!(back.predict(&m).unwrap(), model.predict(&m).unwrap());
        }
    }

    #[test]
    fn rejects_other_schema() {
        let model = PredictorModel::new(Task::Regression, 4, &[4], 0.1, 1);
        let mut buf = Vec::new();
        model.save(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("v1", "v2");
        assert!(matches!(
            PredictorModel::load(text.as_bytes()),
            Err(CheckpointError::Schema { .. })
        ));
    }

    #[test]
    fn rejects_truncated_and_inconsistent() {
        let model = PredictorModel::new(Task::Regression, 4, &[4], 0.1, 1);
        let mut buf = Vec::new();
        model.save(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(8).collect::<Vec<_>>().join("\n");
        assert!(matches!(
            PredictorModel::load(cut.as_bytes()),
            Err(CheckpointError::Malformed { .. })
        ));
        let wrong = text.replace("hidden_size 4", "hidden_size 5");
        assert!(matches!(
            PredictorModel::load(wrong.as_bytes()),
            Err(CheckpointError::Model(_))
        ));
    }
}
