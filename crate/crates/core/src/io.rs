//! CSV reading and writing for logs, estimates, and metrics.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! value read back parses to the same bits and output is byte-stable.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::BanditError;
use crate::harness::{AggregateReport, TrialMetrics};
use crate::model::{ActionVector, ContextBatch, History, RepresentationMatrix};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("round {0} is missing from {1}")]
    MissingRound(usize, &'static str),

    #[error("dimension mismatch in {file}: {detail}")]
    DimensionMismatch { file: String, detail: String },

    #[error("non-numeric cell in {file} at row {row}, column {col}: {value:?}")]
    NonNumericCell {
        file: String,
        row: usize,
        col: usize,
        value: String,
    },

    #[error("{file}: {message}")]
    Csv { file: String, message: String },

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Model(#[from] BanditError),
}

pub type IoResult<T> = std::result::Result<T, IoError>;

/// Formats a float with the shortest representation that parses back to
/// the same value.
pub fn fmt_float<T: Real>(v: T) -> String {
    format!("{v}")
}

fn fmt_opt<T: Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

struct Table {
    file: String,
    header: Vec<String>,
    /// `(line number, cells)`; the header is line 1.
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table<R: Read>(reader: R, file: &str) -> IoResult<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let csv_err = |e: csv::Error| IoError::Csv {
        file: file.to_string(),
        message: e.to_string(),
    };
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let cells: Vec<String> = rec.iter().map(|s| s.trim().to_string()).collect();
        if cells.len() != header.len() {
            return Err(IoError::DimensionMismatch {
                file: file.to_string(),
                detail: format!("row {} has {} cells, header has {}", i + 2, cells.len(), header.len()),
            });
        }
        rows.push((i + 2, cells));
    }
    Ok(Table {
        file: file.to_string(),
        header,
        rows,
    })
}

impl Table {
    fn check_header(&self, fixed: &[&str], prefix: Option<&str>) -> IoResult<usize> {
        let mismatch = |detail: String| IoError::DimensionMismatch {
            file: self.file.clone(),
            detail,
        };
        if self.header.len() < fixed.len() || self.header[..fixed.len()] != *fixed {
            return Err(mismatch(format!("header must start with {}", fixed.join(","))));
        }
        let extra = self.header.len() - fixed.len();
        match prefix {
            Some(p) => {
                for (k, name) in self.header[fixed.len()..].iter().enumerate() {
                    if *name != format!("{p}{}", k + 1) {
                        return Err(mismatch(format!("expected column {p}{}, found {name}", k + 1)));
                    }
                }
                if extra == 0 {
                    return Err(mismatch(format!("no {p}* columns")));
                }
            }
            None if extra != 0 => return Err(mismatch(format!("unexpected columns after {}", fixed.join(",")))),
            None => {}
        }
        Ok(extra)
    }

    fn index(&self, row: usize, col: usize, cell: &str) -> IoResult<usize> {
        cell.parse::<usize>().ok().filter(|&v| v >= 1).ok_or_else(|| IoError::NonNumericCell {
            file: self.file.clone(),
            row,
            col: col + 1,
            value: cell.to_string(),
        })
    }

    fn number<T: Real>(&self, row: usize, col: usize, cell: &str) -> IoResult<T> {
        cell.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(T::lit)
            .ok_or_else(|| IoError::NonNumericCell {
                file: self.file.clone(),
                row,
                col: col + 1,
                value: cell.to_string(),
            })
    }

    fn duplicate(&self, row: usize, what: String) -> IoError {
        IoError::DimensionMismatch {
            file: self.file.clone(),
            detail: format!("duplicate {what} at row {row}"),
        }
    }
}

/// Reads a log from readers in the three-file schema:
/// `t,a_1..a_{d_a}`, `t,l,x_1..x_{d_x}`, and `t,l,y`.
pub fn read_history<T: Real, A: Read, C: Read, Y: Read>(actions: A, contexts: C, rewards: Y) -> IoResult<History<T>> {
    let at = read_table(actions, "actions.csv")?;
    let ct = read_table(contexts, "contexts.csv")?;
    let yt = read_table(rewards, "rewards.csv")?;
    at.check_header(&["t"], Some("a_"))?;
    ct.check_header(&["t", "l"], Some("x_"))?;
    yt.check_header(&["t", "l", "y"], None)?;

    let mut acts: BTreeMap<usize, DVector<T>> = BTreeMap::new();
    for (row, cells) in &at.rows {
        let t = at.index(*row, 0, &cells[0])?;
        let vals = cells[1..]
            .iter()
            .enumerate()
            .map(|(k, c)| at.number::<T>(*row, k + 1, c))
            .collect::<IoResult<Vec<T>>>()?;
        if acts.insert(t, DVector::from_vec(vals)).is_some() {
            return Err(at.duplicate(*row, format!("round {t}")));
        }
    }
    let mut ctx: BTreeMap<usize, BTreeMap<usize, DVector<T>>> = BTreeMap::new();
    for (row, cells) in &ct.rows {
        let t = ct.index(*row, 0, &cells[0])?;
        let l = ct.index(*row, 1, &cells[1])?;
        let vals = cells[2..]
            .iter()
            .enumerate()
            .map(|(k, c)| ct.number::<T>(*row, k + 2, c))
            .collect::<IoResult<Vec<T>>>()?;
        if ctx.entry(t).or_default().insert(l, DVector::from_vec(vals)).is_some() {
            return Err(ct.duplicate(*row, format!("(t, l) = ({t}, {l})")));
        }
    }
    let mut ys: BTreeMap<usize, BTreeMap<usize, T>> = BTreeMap::new();
    for (row, cells) in &yt.rows {
        let t = yt.index(*row, 0, &cells[0])?;
        let l = yt.index(*row, 1, &cells[1])?;
        let y = yt.number::<T>(*row, 2, &cells[2])?;
        if ys.entry(t).or_default().insert(l, y).is_some() {
            return Err(yt.duplicate(*row, format!("(t, l) = ({t}, {l})")));
        }
    }

    let last = [acts.keys().last(), ctx.keys().last(), ys.keys().last()]
        .into_iter()
        .flatten()
        .copied()
        .max()
        .unwrap_or(0);
    let targets = ctx.values().next().map_or(0, |m| m.len());
    let mut history = History::new();
    for t in 1..=last {
        let a = acts.remove(&t).ok_or(IoError::MissingRound(t, "actions.csv"))?;
        let xs = ctx.remove(&t).ok_or(IoError::MissingRound(t, "contexts.csv"))?;
        let yr = ys.remove(&t).ok_or(IoError::MissingRound(t, "rewards.csv"))?;
        let complete = |keys: Vec<usize>| keys.len() == targets && keys.iter().enumerate().all(|(i, &l)| l == i + 1);
        if !complete(xs.keys().copied().collect()) {
            return Err(IoError::DimensionMismatch {
                file: "contexts.csv".into(),
                detail: format!("round {t} does not have targets 1..={targets}"),
            });
        }
        if !complete(yr.keys().copied().collect()) {
            return Err(IoError::DimensionMismatch {
                file: "rewards.csv".into(),
                detail: format!("round {t} does not have targets 1..={targets}"),
            });
        }
        let batch = ContextBatch::new(t, xs.into_values().collect())?;
        let y = DVector::from_iterator(targets, yr.into_values());
        history.push(ActionVector::new(a)?, batch, y)?;
    }
    Ok(history)
}

pub fn load_history_csv<T: Real>(actions: &Path, contexts: &Path, rewards: &Path) -> IoResult<History<T>> {
    read_history(
        std::fs::File::open(actions)?,
        std::fs::File::open(contexts)?,
        std::fs::File::open(rewards)?,
    )
}

fn csv_write_err(file: &str) -> impl Fn(csv::Error) -> IoError + '_ {
    move |e| IoError::Csv {
        file: file.to_string(),
        message: e.to_string(),
    }
}

/// Writes the three-file schema.
pub fn write_history<T: Real, A: Write, C: Write, Y: Write>(history: &History<T>, actions: A, contexts: C, rewards: Y) -> IoResult<()> {
    let (d_a, d_x, _) = history
        .dims()
        .ok_or_else(|| BanditError::InsufficientData("empty history".into()))?;
    let mut wa = csv::Writer::from_writer(actions);
    let mut wc = csv::Writer::from_writer(contexts);
    let mut wy = csv::Writer::from_writer(rewards);
    let ea = csv_write_err("actions.csv");
    let ec = csv_write_err("contexts.csv");
    let ey = csv_write_err("rewards.csv");
    let mut head = vec!["t".to_string()];
    head.extend((1..=d_a).map(|i| format!("a_{i}")));
    wa.write_record(&head).map_err(&ea)?;
    let mut head = vec!["t".to_string(), "l".to_string()];
    head.extend((1..=d_x).map(|j| format!("x_{j}")));
    wc.write_record(&head).map_err(&ec)?;
    wy.write_record(["t", "l", "y"]).map_err(&ey)?;
    for r in history.rounds() {
        let t = r.batch.round().to_string();
        let mut rec = vec![t.clone()];
        rec.extend(r.action.values().iter().map(|&v| fmt_float(v)));
        wa.write_record(&rec).map_err(&ea)?;
        for (l, x) in r.batch.matrix().column_iter().enumerate() {
            let mut rec = vec![t.clone(), (l + 1).to_string()];
            rec.extend(x.iter().map(|&v| fmt_float(v)));
            wc.write_record(&rec).map_err(&ec)?;
            wy.write_record([t.clone(), (l + 1).to_string(), fmt_float(r.rewards[l])]).map_err(&ey)?;
        }
    }
    wa.flush()?;
    wc.flush()?;
    wy.flush()?;
    Ok(())
}

/// Writes `actions.csv`, `contexts.csv`, and `rewards.csv` into `dir`.
pub fn save_history<T: Real>(history: &History<T>, dir: &Path) -> IoResult<()> {
    std::fs::create_dir_all(dir)?;
    write_history(
        history,
        std::fs::File::create(dir.join("actions.csv"))?,
        std::fs::File::create(dir.join("contexts.csv"))?,
        std::fs::File::create(dir.join("rewards.csv"))?,
    )
}

/// Sidecar metadata for a saved estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaMeta {
    pub d_a: usize,
    pub d_x: usize,
    pub lambda: Option<f64>,
    pub round: Option<usize>,
    pub prng: String,
}

/// Dense matrix, one CSV row per matrix row, no header.
pub fn write_matrix<T: Real, W: Write>(m: &DMatrix<T>, out: W) -> IoResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let err = csv_write_err("matrix");
    for row in m.row_iter() {
        w.write_record(row.iter().map(|&v| fmt_float(v))).map_err(&err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix<T: Real, R: Read>(input: R, file: &str) -> IoResult<RepresentationMatrix<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut rows: Vec<Vec<T>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| IoError::Csv {
            file: file.to_string(),
            message: e.to_string(),
        })?;
        let vals = rec
            .iter()
            .enumerate()
            .map(|(j, c)| {
                c.trim().parse::<f64>().ok().filter(|v| v.is_finite()).map(T::lit).ok_or_else(|| IoError::NonNumericCell {
                    file: file.to_string(),
                    row: i + 1,
                    col: j + 1,
                    value: c.to_string(),
                })
            })
            .collect::<IoResult<Vec<T>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != vals.len() {
                return Err(IoError::DimensionMismatch {
                    file: file.to_string(),
                    detail: format!("row {} has {} entries, row 1 has {}", i + 1, vals.len(), first.len()),
                });
            }
        }
        rows.push(vals);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(IoError::DimensionMismatch {
            file: file.to_string(),
            detail: "empty matrix".into(),
        });
    }
    let (r, c) = (rows.len(), rows[0].len());
    let flat: Vec<T> = rows.into_iter().flatten().collect();
    Ok(RepresentationMatrix::from_row_slice(r, c, &flat)?)
}

pub fn load_theta<T: Real>(path: &Path) -> IoResult<RepresentationMatrix<T>> {
    read_matrix(std::fs::File::open(path)?, &path.display().to_string())
}

pub const METRICS_HEADER: [&str; 9] = [
    "trial",
    "t",
    "inst_regret",
    "avg_regret",
    "cum_reward",
    "explored",
    "degenerate",
    "lambda_t",
    "frob_err",
];

pub const AGGREGATE_HEADER: [&str; 5] = ["t", "mean_avg_regret", "q05", "q95", "mean_gain"];

/// Streams per-round metrics rows; trials are written in the order given.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
    with_frob_err: bool,
}

impl<W: Write> MetricsWriter<W> {
    /// `with_frob_err = false` leaves that column blank (ground truth unknown).
    pub fn new(out: W, with_frob_err: bool) -> IoResult<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(METRICS_HEADER).map_err(csv_write_err("metrics.csv"))?;
        Ok(Self { inner, with_frob_err })
    }

    pub fn write_trial<T: Real>(&mut self, trial: usize, m: &TrialMetrics<T>) -> IoResult<()> {
        let err = csv_write_err("metrics.csv");
        for r in &m.rounds {
            self.inner
                .write_record([
                    trial.to_string(),
                    r.t.to_string(),
                    fmt_float(r.inst_regret),
                    fmt_float(r.avg_regret),
                    fmt_float(r.cum_reward),
                    u8::from(r.explored).to_string(),
                    u8::from(r.degenerate).to_string(),
                    fmt_opt(r.lambda_t),
                    if self.with_frob_err { fmt_opt(r.frob_err) } else { String::new() },
                ])
                .map_err(&err)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> IoResult<W> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| IoError::Io(e.into_error()))
    }
}

pub fn write_aggregate<T: Real, W: Write>(report: &AggregateReport<T>, out: W) -> IoResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = csv_write_err("aggregate.csv");
    w.write_record(AGGREGATE_HEADER).map_err(&err)?;
    for r in &report.rows {
        w.write_record([
            r.t.to_string(),
            fmt_float(r.mean_avg_regret),
            fmt_float(r.q05),
            fmt_float(r.q95),
            fmt_opt(r.mean_gain),
        ])
        .map_err(&err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(a: &str, c: &str, y: &str) -> IoResult<History<f64>> {
        read_history(a.as_bytes(), c.as_bytes(), y.as_bytes())
    }

    #[test]
    fn minimal_fixture() {
        let h = load("t,a_1\n1,1\n", "t,l,x_1\n1,1,1\n", "t,l,y\n1,1,1\n").unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h.dims(), Some((1, 1, 1)));
    }

    #[test]
    fn missing_round() {
        let a = "t,a_1\n1,1\n2,1\n3,1\n";
        let c = "t,l,x_1\n1,1,1\n2,1,1\n3,1,1\n";
        let y = "t,l,y\n1,1,1\n2,1,1\n";
        assert!(matches!(load(a, c, y), Err(IoError::MissingRound(3, "rewards.csv"))));
    }

    #[test]
    fn non_numeric_cell_location() {
        let err = load("t,a_1,a_2\n1,1,abc\n", "t,l,x_1\n1,1,1\n", "t,l,y\n1,1,1\n").unwrap_err();
        match err {
            IoError::NonNumericCell { row, col, .. } => assert_eq!((row, col), (2, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dimension_mismatches() {
        // Round 2 has only one of two targets.
        let a = "t,a_1\n1,1\n2,1\n";
        let c = "t,l,x_1\n1,1,1\n1,2,1\n2,1,1\n";
        let y = "t,l,y\n1,1,1\n1,2,1\n2,1,1\n";
        assert!(matches!(load(a, c, y), Err(IoError::DimensionMismatch { .. })));
        assert!(matches!(
            load("t,b_1\n1,1\n", "t,l,x_1\n1,1,1\n", "t,l,y\n1,1,1\n"),
            Err(IoError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            load("t,a_1\n1,1,2\n", "t,l,x_1\n1,1,1\n", "t,l,y\n1,1,1\n"),
            Err(IoError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn round_trip_is_bitwise() {
        let vals = [0.1, -1.0 / 3.0, 1e-300, 123456.789, std::f64::consts::PI, -0.0];
        let mut h = History::new();
        for t in 1..=3 {
            let a = ActionVector::from_slice(&[vals[t], vals[t + 1]]).unwrap();
            let b = ContextBatch::new(t, vec![DVector::from_column_slice(&vals[..3]), DVector::from_column_slice(&vals[3..])]).unwrap();
            h.push(a, b, DVector::from_column_slice(&[vals[0] * t as f64, vals[5]])).unwrap();
        }
        let (mut a, mut c, mut y) = (Vec::new(), Vec::new(), Vec::new());
        write_history(&h, &mut a, &mut c, &mut y).unwrap();
        let back: History<f64> = read_history(&a[..], &c[..], &y[..]).unwrap();
        assert_eq!(back.len(), h.len());
        for (r1, r2) in h.rounds().iter().zip(back.rounds()) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(r1.action.values().as_slice()), bits(r2.action.values().as_slice()));
            assert_eq!(bits(r1.batch.matrix().as_slice()), bits(r2.batch.matrix().as_slice()));
            assert_eq!(bits(r1.rewards.as_slice()), bits(r2.rewards.as_slice()));
        }
    }

    #[test]
    fn matrix_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.3, 1e-17, -5.0, 2.5e10]);
        let mut buf = Vec::new();
        write_matrix(&m, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "0.1,0.2,0.3\n0.00000000000000001,-5,25000000000\n");
        let back: RepresentationMatrix<f64> = read_matrix(&buf[..], "m").unwrap();
        assert_eq!(back.entries(), &m);
        assert!(read_matrix::<f64, _>("1,2\n3\n".as_bytes(), "m").is_err());
    }
}
