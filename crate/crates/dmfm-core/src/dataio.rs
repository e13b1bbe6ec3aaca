//! Matrix time-series container, the two on-disk formats (long CSV and the
//! `DMX1` binary layout) and exponential-smoothing detrending.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::numcore::Mat;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("missing cell (t={t}, row={row}, col={col})")]
    Gap { t: usize, row: usize, col: usize },
    #[error("smoothing parameter {0} outside (0, 1]")]
    BadAlpha(f64),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesFormat {
    CsvLong,
    DmxBinary,
}

/// An ordered sequence of equally sized real matrices.
///
/// Every frame is `d1 x d2` with finite entries and the series is nonempty.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSeries {
    d1: usize,
    d2: usize,
    frames: Vec<Mat>,
}

/// Series living in factor dimensions (`r1 x r2`). Same representation.
pub type FactorSeries = MatrixSeries;

impl MatrixSeries {
    pub fn new(frames: Vec<Mat>) -> Result<Self, DataError> {
        let first = frames
            .first()
            .ok_or_else(|| DataError::Shape("series must contain at least one frame".into()))?;
        let (d1, d2) = (first.nrows(), first.ncols());
        if d1 == 0 || d2 == 0 {
            return Err(DataError::Shape("frames must be nonempty".into()));
        }
        for (t, f) in frames.iter().enumerate() {
            if f.nrows() != d1 || f.ncols() != d2 {
                return Err(DataError::Shape(format!(
                    "frame {t} is {}x{}, expected {d1}x{d2}",
                    f.nrows(),
                    f.ncols()
                )));
            }
            if f.iter().any(|x| !x.is_finite()) {
                return Err(DataError::NonFinite(format!("frame {t}")));
            }
        }
        Ok(Self { d1, d2, frames })
    }

    pub fn rows(&self) -> usize {
        self.d1
    }

    pub fn cols(&self) -> usize {
        self.d2
    }

    /// Number of time points T.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frame at 0-based time index.
    pub fn frame(&self, t: usize) -> &Mat {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[Mat] {
        &self.frames
    }

    /// Sub-series over the first `t_len` frames.
    pub fn prefix(&self, t_len: usize) -> MatrixSeries {
        assert!(t_len >= 1 && t_len <= self.len());
        MatrixSeries {
            d1: self.d1,
            d2: self.d2,
            frames: self.frames[..t_len].to_vec(),
        }
    }
}

pub fn read_series(path: &Path, format: SeriesFormat) -> Result<MatrixSeries, DataError> {
    match format {
        SeriesFormat::CsvLong => read_csv(path),
        SeriesFormat::DmxBinary => read_dmx(path),
    }
}

pub fn write_series(
    series: &MatrixSeries,
    path: &Path,
    format: SeriesFormat,
) -> Result<(), DataError> {
    match format {
        SeriesFormat::CsvLong => write_csv(series, path),
        SeriesFormat::DmxBinary => write_dmx(series, path),
    }
}

const CSV_HEADER: &str = "t,row,col,value";

fn read_csv(path: &Path) -> Result<MatrixSeries, DataError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or(DataError::Parse { line: 1, msg: "empty file".into() })?;
    if header.trim() != CSV_HEADER {
        return Err(DataError::Parse {
            line: 1,
            msg: format!("expected header '{CSV_HEADER}', got '{}'", header.trim()),
        });
    }
    let mut cells: HashMap<(usize, usize, usize), f64> = HashMap::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parts: Vec<&str> = trimmed.split(',').collect();
        if parts.len() != 4 {
            return Err(DataError::Parse {
                line: line_no,
                msg: format!("expected 4 fields, got {}", parts.len()),
            });
        }
        let t: usize = parts[0].trim().parse().map_err(|e| DataError::Parse {
            line: line_no,
            msg: format!("bad t index: {e}"),
        })?;
        let row: usize = parts[1].trim().parse().map_err(|e| DataError::Parse {
            line: line_no,
            msg: format!("bad row index: {e}"),
        })?;
        let col: usize = parts[2].trim().parse().map_err(|e| DataError::Parse {
            line: line_no,
            msg: format!("bad col index: {e}"),
        })?;
        let value: f64 = parts[3].trim().parse().map_err(|e| DataError::Parse {
            line: line_no,
            msg: format!("bad value: {e}"),
        })?;
        if t == 0 || row == 0 || col == 0 {
            return Err(DataError::Parse {
                line: line_no,
                msg: "indices are 1-based; found 0".into(),
            });
        }
        if !value.is_finite() {
            return Err(DataError::NonFinite(format!("line {line_no}")));
        }
        if cells.insert((t, row, col), value).is_some() {
            return Err(DataError::Parse {
                line: line_no,
                msg: format!("duplicate cell (t={t}, row={row}, col={col})"),
            });
        }
    }
    if cells.is_empty() {
        return Err(DataError::Shape("no cells in file".into()));
    }
    let t_len = cells.keys().map(|k| k.0).max().unwrap();
    // Every frame must agree on its dimensions.
    let mut dims: Vec<(usize, usize)> = vec![(0, 0); t_len];
    for &(t, row, col) in cells.keys() {
        let d = &mut dims[t - 1];
        d.0 = d.0.max(row);
        d.1 = d.1.max(col);
    }
    let (d1, d2) = dims[0];
    for (t, &(r, c)) in dims.iter().enumerate() {
        if r == 0 {
            return Err(DataError::Gap { t: t + 1, row: 1, col: 1 });
        }
        if (r, c) != (d1, d2) {
            return Err(DataError::Shape(format!(
                "frame {} spans {}x{}, frame 1 spans {d1}x{d2}",
                t + 1,
                r,
                c
            )));
        }
    }
    let mut frames = Vec::with_capacity(t_len);
    for t in 1..=t_len {
        let mut m = Mat::zeros(d1, d2);
        for row in 1..=d1 {
            for col in 1..=d2 {
                let v = cells
                    .get(&(t, row, col))
                    .ok_or(DataError::Gap { t, row, col })?;
                m[(row - 1, col - 1)] = *v;
            }
        }
        frames.push(m);
    }
    MatrixSeries::new(frames)
}

fn write_csv(series: &MatrixSeries, path: &Path) -> Result<(), DataError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{CSV_HEADER}")?;
    for (t, frame) in series.frames.iter().enumerate() {
        for row in 0..series.d1 {
            for col in 0..series.d2 {
                // {:?} prints the shortest decimal that round-trips the f64.
                writeln!(w, "{},{},{},{:?}", t + 1, row + 1, col + 1, frame[(row, col)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

const DMX_MAGIC: &[u8; 4] = b"DMX1";
const DMX_VERSION: u32 = 1;

fn read_dmx(path: &Path) -> Result<MatrixSeries, DataError> {
    let mut file = BufReader::new(File::open(path)?);
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)?;
    let fail = |msg: &str| DataError::Parse { line: 0, msg: msg.into() };
    if buf.len() < 32 {
        return Err(fail("file shorter than the 32-byte header"));
    }
    if &buf[0..4] != DMX_MAGIC {
        return Err(fail("bad magic bytes"));
    }
    let u64_at = |off: usize| u64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
    let t_len = u64_at(4) as usize;
    let d1 = u64_at(12) as usize;
    let d2 = u64_at(20) as usize;
    let version = u32::from_le_bytes(buf[28..32].try_into().unwrap());
    if version != DMX_VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let n_vals = t_len
        .checked_mul(d1)
        .and_then(|x| x.checked_mul(d2))
        .ok_or_else(|| DataError::Shape("header dimensions overflow".into()))?;
    let expected = 32 + 8 * n_vals;
    if buf.len() != expected {
        return Err(fail(&format!(
            "payload length {} does not match header ({expected} bytes expected)",
            buf.len()
        )));
    }
    let mut frames = Vec::with_capacity(t_len);
    let mut off = 32;
    for _ in 0..t_len {
        let mut m = Mat::zeros(d1, d2);
        for row in 0..d1 {
            for col in 0..d2 {
                let v = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
                m[(row, col)] = v;
                off += 8;
            }
        }
        frames.push(m);
    }
    MatrixSeries::new(frames)
}

fn write_dmx(series: &MatrixSeries, path: &Path) -> Result<(), DataError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(DMX_MAGIC)?;
    w.write_all(&(series.len() as u64).to_le_bytes())?;
    w.write_all(&(series.d1 as u64).to_le_bytes())?;
    w.write_all(&(series.d2 as u64).to_le_bytes())?;
    w.write_all(&DMX_VERSION.to_le_bytes())?;
    for frame in &series.frames {
        for row in 0..series.d1 {
            for col in 0..series.d2 {
                w.write_all(&frame[(row, col)].to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Exponential-smoothing detrend: the trend follows
/// `B_t = alpha * Y_t + (1 - alpha) * B_{t-1}` with `B_1 = Y_1`, and the
/// detrended series is `Y_t - B_t`. Returns `(detrended, trend)`.
pub fn exp_smooth_detrend(
    series: &MatrixSeries,
    alpha: f64,
) -> Result<(MatrixSeries, MatrixSeries), DataError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(DataError::BadAlpha(alpha));
    }
    let mut trend = Vec::with_capacity(series.len());
    let mut detrended = Vec::with_capacity(series.len());
    let mut b = series.frame(0).clone();
    trend.push(b.clone());
    detrended.push(series.frame(0) - &b);
    for t in 1..series.len() {
        b = series.frame(t) * alpha + &b * (1.0 - alpha);
        trend.push(b.clone());
        detrended.push(series.frame(t) - &b);
    }
    Ok((MatrixSeries::new(detrended)?, MatrixSeries::new(trend)?))
}
