//! Versioned text checkpoints.
//!
//! A checkpoint is a magic line, a schema line and then one record per line:
//! a tag followed by whitespace-separated values. Floats are written in
//! scientific notation with 17 significant digits, so every value reloads
//! bit-exactly and save → load → save is byte-identical.

use std::path::Path;

use crate::at::Perturbation;
use crate::diffnet::{Activation, Dense, Network, OptimKind, OptimState};
use crate::double_oracle::{DoState, EpochRecord};
use crate::error::{Error, Result};
use crate::metagame::{format_f64, MixedStrategy, PayoffMatrix};
use crate::supernet::{CandidateOp, Cell, Supernet};
use crate::tensor::Matrix;

pub const MAGIC: &str = "DONAS-CHECKPOINT";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Default)]
pub struct Writer {
    out: String,
}

impl Writer {
    pub fn new() -> Self {
        Writer::default()
    }

    pub fn record(&mut self, tag: &str, values: impl IntoIterator<Item = String>) {
        self.out.push_str(tag);
        for v in values {
            self.out.push(' ');
            self.out.push_str(&v);
        }
        self.out.push('\n');
    }

    pub fn value(&mut self, tag: &str, v: impl ToString) {
        self.record(tag, [v.to_string()]);
    }

    pub fn floats(&mut self, tag: &str, xs: &[f64]) {
        self.record(tag, std::iter::once(xs.len().to_string()).chain(xs.iter().map(|&x| format_f64(x))));
    }

    pub fn finish(self) -> String {
        self.out
    }
}

/// Line reader that reports positions as byte offsets.
pub struct Reader<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(text: &'a str) -> Self {
        Reader { text, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    fn err_at(&self, at: usize, msg: impl std::fmt::Display) -> Error {
        Error::Checkpoint(format!("at byte {at}: {msg}"))
    }

    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let rest = &self.text[start..];
        let Some(end) = rest.find('\n') else {
            return Err(Error::Checkpoint(format!(
                "truncated file: expected {what} at byte {start}, file ends at byte {}",
                self.text.len()
            )));
        };
        self.pos = start + end + 1;
        Ok((start, &rest[..end]))
    }

    /// The values of the next record, which must carry `tag`.
    pub fn record(&mut self, tag: &str) -> Result<(usize, Vec<&'a str>)> {
        let (at, line) = self.next_line(&format!("'{tag}' record"))?;
        let mut parts = line.split(' ');
        let got = parts.next().unwrap_or("");
        if got != tag {
            return Err(self.err_at(at, format!("expected '{tag}' record, found '{got}'")));
        }
        Ok((at, parts.collect()))
    }

    pub fn value<T: std::str::FromStr>(&mut self, tag: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let (at, vals) = self.record(tag)?;
        if vals.len() != 1 {
            return Err(self.err_at(at, format!("'{tag}' expects one value, found {}", vals.len())));
        }
        vals[0].parse().map_err(|e| self.err_at(at, format!("bad '{tag}' value {:?}: {e}", vals[0])))
    }

    pub fn floats(&mut self, tag: &str) -> Result<Vec<f64>> {
        let (at, vals) = self.record(tag)?;
        let n: usize = vals
            .first()
            .ok_or_else(|| self.err_at(at, format!("'{tag}' is missing its length")))?
            .parse()
            .map_err(|e| self.err_at(at, format!("bad '{tag}' length: {e}")))?;
        if vals.len() != n + 1 {
            return Err(self.err_at(at, format!("'{tag}' declares {n} values, found {}", vals.len() - 1)));
        }
        vals[1..]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| self.err_at(at, format!("bad float {v:?} in '{tag}': {e}"))))
            .collect()
    }

    /// Wraps a construction error with the offset of the record that began it.
    pub fn invalid(&self, at: usize, e: Error) -> Error {
        self.err_at(at, e)
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos == self.text.len() {
            Ok(())
        } else {
            Err(self.err_at(self.pos, "trailing data after the last record"))
        }
    }
}

pub trait Persist: Sized {
    fn write(&self, w: &mut Writer);
    fn read(r: &mut Reader<'_>) -> Result<Self>;
}

impl Persist for usize {
    fn write(&self, w: &mut Writer) {
        w.value("index", self);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        r.value("index")
    }
}

impl Persist for Matrix {
    fn write(&self, w: &mut Writer) {
        w.record("matrix", [self.rows().to_string(), self.cols().to_string()]);
        w.floats("data", self.data());
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let at = r.offset();
        let rows: Vec<usize> = dims(r, "matrix", 2)?;
        let data = r.floats("data")?;
        Matrix::from_vec(rows[0], rows[1], data).map_err(|e| r.invalid(at, e))
    }
}

fn dims(r: &mut Reader<'_>, tag: &str, n: usize) -> Result<Vec<usize>> {
    let (at, vals) = r.record(tag)?;
    if vals.len() != n {
        return Err(r.invalid(at, Error::Input(format!("'{tag}' expects {n} sizes"))));
    }
    vals.iter()
        .map(|v| v.parse().map_err(|e| r.invalid(at, Error::Input(format!("bad size {v:?}: {e}")))))
        .collect()
}

impl Persist for Dense {
    fn write(&self, w: &mut Writer) {
        w.value("dense", self.activation);
        self.weight.write(w);
        w.floats("bias", &self.bias);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let at = r.offset();
        let act: Activation = r.value("dense")?;
        let weight = Matrix::read(r)?;
        let bias = r.floats("bias")?;
        Dense::new(weight, bias, act).map_err(|e| r.invalid(at, e))
    }
}

impl Persist for Network {
    fn write(&self, w: &mut Writer) {
        w.value("network", self.layers().len());
        for l in self.layers() {
            l.write(w);
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let at = r.offset();
        let n: usize = r.value("network")?;
        let layers = (0..n).map(|_| Dense::read(r)).collect::<Result<Vec<_>>>()?;
        Network::new(layers).map_err(|e| r.invalid(at, e))
    }
}

impl Persist for Supernet {
    fn write(&self, w: &mut Writer) {
        w.value("supernet", self.cells().len());
        for c in self.cells() {
            w.record("cell", [c.input_dim().to_string(), c.output_dim().to_string(), c.ops.len().to_string()]);
            for op in &c.ops {
                match op {
                    CandidateOp::Identity => w.record("op", ["identity".to_string()]),
                    CandidateOp::Dense(d) => {
                        w.record("op", ["dense".to_string()]);
                        d.write(w);
                    }
                }
            }
            w.floats("alpha", &c.alpha);
        }
        match self.head() {
            Some(h) => {
                w.value("head", "some");
                h.write(w);
            }
            None => w.value("head", "none"),
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let at = r.offset();
        let n: usize = r.value("supernet")?;
        let mut cells = Vec::with_capacity(n);
        for _ in 0..n {
            let cell_at = r.offset();
            let d = dims(r, "cell", 3)?;
            let mut ops = Vec::with_capacity(d[2]);
            for _ in 0..d[2] {
                let kind: String = r.value("op")?;
                ops.push(match kind.as_str() {
                    "identity" => CandidateOp::Identity,
                    "dense" => CandidateOp::Dense(Dense::read(r)?),
                    other => return Err(r.invalid(cell_at, Error::Input(format!("unknown op kind {other:?}")))),
                });
            }
            let alpha = r.floats("alpha")?;
            cells.push(Cell::new(d[0], d[1], ops, alpha).map_err(|e| r.invalid(cell_at, e))?);
        }
        let head_at = r.offset();
        let head = match r.value::<String>("head")?.as_str() {
            "some" => Some(Dense::read(r)?),
            "none" => None,
            other => return Err(r.invalid(head_at, Error::Input(format!("bad head marker {other:?}")))),
        };
        Supernet::new(cells, head).map_err(|e| r.invalid(at, e))
    }
}

impl Persist for Perturbation {
    fn write(&self, w: &mut Writer) {
        w.value("perturbation", format_f64(self.eps));
        self.delta.write(w);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let eps: f64 = r.value("perturbation")?;
        Ok(Perturbation {
            delta: Matrix::read(r)?,
            eps,
        })
    }
}

impl Persist for OptimState {
    fn write(&self, w: &mut Writer) {
        let kind = match self.kind {
            OptimKind::Sgd => "sgd",
            OptimKind::Adam => "adam",
        };
        w.record("optim", [kind.to_string(), format_f64(self.lr), self.t.to_string()]);
        w.floats("m", &self.m);
        w.floats("v", &self.v);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let (at, vals) = r.record("optim")?;
        let bad = |m: String| r.invalid(at, Error::Input(m));
        if vals.len() != 3 {
            return Err(bad("'optim' expects kind, lr and step count".into()));
        }
        let kind = match vals[0] {
            "sgd" => OptimKind::Sgd,
            "adam" => OptimKind::Adam,
            other => return Err(bad(format!("unknown optimizer {other:?}"))),
        };
        let lr = vals[1].parse().map_err(|e| bad(format!("bad lr: {e}")))?;
        let t = vals[2].parse().map_err(|e| bad(format!("bad step count: {e}")))?;
        Ok(OptimState {
            kind,
            lr,
            m: r.floats("m")?,
            v: r.floats("v")?,
            t,
        })
    }
}

impl Persist for MixedStrategy {
    fn write(&self, w: &mut Writer) {
        w.floats("mixed", self.probs());
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let at = r.offset();
        let p = r.floats("mixed")?;
        MixedStrategy::new(p).map_err(|e| r.invalid(at, e))
    }
}

impl Persist for PayoffMatrix {
    fn write(&self, w: &mut Writer) {
        w.record("payoff", [self.n_rows().to_string(), self.n_cols().to_string()]);
        w.floats("entries", self.entries());
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let at = r.offset();
        let d = dims(r, "payoff", 2)?;
        let e = r.floats("entries")?;
        PayoffMatrix::new(d[0], d[1], e).map_err(|e| r.invalid(at, e))
    }
}

impl Persist for EpochRecord {
    fn write(&self, w: &mut Writer) {
        w.record(
            "epoch_record",
            [
                self.epoch.to_string(),
                format_f64(self.game_value),
                format_f64(self.gen_gain),
                format_f64(self.dis_gain),
                self.row_pool.to_string(),
                self.col_pool.to_string(),
                self.terminated.to_string(),
            ],
        );
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let (at, v) = r.record("epoch_record")?;
        let bad = |m: String| r.invalid(at, Error::Input(m));
        if v.len() != 7 {
            return Err(bad(format!("'epoch_record' expects 7 fields, found {}", v.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("bad integer {s:?}: {e}")));
        let float = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("bad float {s:?}: {e}")));
        Ok(EpochRecord {
            epoch: int(v[0])?,
            game_value: float(v[1])?,
            gen_gain: float(v[2])?,
            dis_gain: float(v[3])?,
            row_pool: int(v[4])?,
            col_pool: int(v[5])?,
            terminated: v[6].parse().map_err(|e| bad(format!("bad flag {:?}: {e}", v[6])))?,
        })
    }
}

fn write_seq<T: Persist>(w: &mut Writer, tag: &str, xs: &[T]) {
    w.value(tag, xs.len());
    for x in xs {
        x.write(w);
    }
}

fn read_seq<T: Persist>(r: &mut Reader<'_>, tag: &str) -> Result<Vec<T>> {
    let n: usize = r.value(tag)?;
    (0..n).map(|_| T::read(r)).collect()
}

/// Everything needed to continue a run at an epoch boundary.
#[derive(Debug, Clone)]
pub struct Checkpoint<R, C> {
    pub mode: String,
    pub seed: u64,
    /// Mode-specific running counter (gradient steps taken by the oracles).
    pub counter: u64,
    pub state: DoState<R, C>,
}

impl<R: Persist, C: Persist> Checkpoint<R, C> {
    pub fn to_text(&self) -> String {
        let mut w = Writer::new();
        w.out.push_str(MAGIC);
        w.out.push('\n');
        w.value("schema", SCHEMA_VERSION);
        w.value("mode", &self.mode);
        w.value("seed", self.seed);
        w.value("counter", self.counter);
        let s = &self.state;
        w.value("epoch", s.epoch);
        w.value("terminated", s.terminated);
        write_seq(&mut w, "rows", &s.rows);
        write_seq(&mut w, "cols", &s.cols);
        s.matrix.write(&mut w);
        s.sigma_row.write(&mut w);
        s.sigma_col.write(&mut w);
        write_seq(&mut w, "trace", &s.trace);
        w.finish()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = Reader::new(text);
        let magic = text.split('\n').next().unwrap_or("");
        if magic != MAGIC || !text.contains('\n') {
            return Err(Error::Checkpoint(format!(
                "bad header: expected magic '{MAGIC}', found {:?}",
                magic.chars().take(40).collect::<String>()
            )));
        }
        r.next_line("magic")?;
        let version: u32 = r.value("schema")?;
        if version != SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!(
                "schema version {version} is not supported; this build reads version {SCHEMA_VERSION}"
            )));
        }
        let mode = r.value("mode")?;
        let seed = r.value("seed")?;
        let counter = r.value("counter")?;
        let epoch = r.value("epoch")?;
        let terminated = r.value("terminated")?;
        let rows: Vec<R> = read_seq(&mut r, "rows")?;
        let cols: Vec<C> = read_seq(&mut r, "cols")?;
        let at = r.offset();
        let matrix = PayoffMatrix::read(&mut r)?;
        let sigma_row = MixedStrategy::read(&mut r)?;
        let sigma_col = MixedStrategy::read(&mut r)?;
        if matrix.n_rows() != rows.len()
            || matrix.n_cols() != cols.len()
            || sigma_row.len() != rows.len()
            || sigma_col.len() != cols.len()
        {
            return Err(r.invalid(at, Error::Input("payoff matrix and strategies disagree with the pools".into())));
        }
        let trace = read_seq(&mut r, "trace")?;
        r.finish()?;
        Ok(Checkpoint {
            mode,
            seed,
            counter,
            state: DoState {
                rows,
                cols,
                matrix,
                sigma_row,
                sigma_col,
                epoch,
                trace,
                terminated,
            },
        })
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, self.to_text()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
