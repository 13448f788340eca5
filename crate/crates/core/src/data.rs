//! Traffic series loading, calendar indexing, windowing, splitting, and
//! z-score normalization.
//!
//! Two on-disk formats are accepted:
//!
//! * the `STF1` binary container: an ASCII header line `STF1 <N> <T>\n`
//!   followed by `N·T` little-endian 64-bit floats in node-major order;
//! * CSV import: `T` rows of `N` columns with a one-line header.
//!
//! Both expect a sidecar text file at `<path>.meta` holding
//! `start_time=<ISO-8601>` and `interval_minutes=<int>` (overridable when
//! constructing in memory).

use std::fs;
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use chrono::{Datelike, NaiveDateTime, Timelike};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A raw node×time traffic matrix with its calendar metadata.
#[derive(Debug, Clone)]
pub struct SeriesDataset {
    values: Tensor, // [N, T], node-major
    start_time: NaiveDateTime,
    interval_minutes: u32,
    steps_per_day: usize,
    start_offset: usize,  // steps since midnight at t = 0
    start_weekday: usize, // 0 = Monday
}

impl SeriesDataset {
    /// Wraps a node-major `[N, T]` matrix, validating calendar metadata and
    /// rejecting non-finite cells.
    pub fn new(values: Tensor, start_time: NaiveDateTime, interval_minutes: u32) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(Error::shape(
                "SeriesDataset::new",
                "rank-2 [nodes, steps]",
                format!("{:?}", values.shape()),
            ));
        }
        if interval_minutes == 0 || 1440 % interval_minutes != 0 {
            return Err(Error::InvalidArgument(format!(
                "interval_minutes must divide 1440 exactly, got {interval_minutes}"
            )));
        }
        if start_time.second() != 0
            || (start_time.hour() * 60 + start_time.minute()) % interval_minutes != 0
        {
            return Err(Error::InvalidArgument(format!(
                "start_time {start_time} is not aligned to the {interval_minutes}-minute grid"
            )));
        }
        let t = values.cols();
        if let Some(flat) = values.first_non_finite() {
            return Err(Error::NonFiniteData {
                path: "<memory>".into(),
                node: flat / t,
                step: flat % t,
            });
        }
        let steps_per_day = (1440 / interval_minutes) as usize;
        let start_offset =
            ((start_time.hour() * 60 + start_time.minute()) / interval_minutes) as usize;
        let start_weekday = start_time.weekday().num_days_from_monday() as usize;
        Ok(SeriesDataset {
            values,
            start_time,
            interval_minutes,
            steps_per_day,
            start_offset,
            start_weekday,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.values.rows()
    }

    pub fn n_steps(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    /// Full time series of one node.
    pub fn node_series(&self, node: usize) -> &[f64] {
        self.values.row(node)
    }

    pub fn steps_per_day(&self) -> usize {
        self.steps_per_day
    }

    pub fn interval_minutes(&self) -> u32 {
        self.interval_minutes
    }

    pub fn start_time(&self) -> NaiveDateTime {
        self.start_time
    }

    /// `(day_index, week_index)` of time step `t`:
    /// `day_index = (offset(start_time) + t) mod N_d`, and the week index
    /// advances by one (mod 7) every `N_d` steps from the start weekday.
    pub fn time_indices(&self, t: usize) -> Result<(usize, usize)> {
        if t >= self.n_steps() {
            return Err(Error::IndexOutOfRange {
                what: "time step",
                index: t,
                len: self.n_steps(),
            });
        }
        Ok(self.time_indices_signed(t as i64))
    }

    /// Same as [`time_indices`](Self::time_indices) but total over signed
    /// steps, so callers can index one step before the series start (the
    /// initial timestamp of the first window lies at `t - T_h = -1`).
    pub fn time_indices_signed(&self, t: i64) -> (usize, usize) {
        let n_d = self.steps_per_day as i64;
        let abs = self.start_offset as i64 + t;
        let day_index = abs.rem_euclid(n_d) as usize;
        let days = abs.div_euclid(n_d);
        let week_index = (self.start_weekday as i64 + days).rem_euclid(7) as usize;
        (day_index, week_index)
    }

    /// Calendar lookups for a window anchored at `anchor_t`: the initial
    /// timestamp `anchor_t - t_h` and the terminal timestamp `anchor_t`.
    pub fn calendar_indices(&self, anchor_t: usize, t_h: usize) -> CalendarIndices {
        let (day_start, week_start) = self.time_indices_signed(anchor_t as i64 - t_h as i64);
        let (day_end, week_end) = self.time_indices_signed(anchor_t as i64);
        CalendarIndices {
            day_start,
            week_start,
            day_end,
            week_end,
        }
    }

    /// Loads a dataset, detecting the container by content: `STF1` magic
    /// means the binary format, anything else is parsed as CSV. Calendar
    /// metadata comes from the `<path>.meta` sidecar.
    pub fn load(path: &Path) -> Result<Self> {
        let meta = read_sidecar(path)?;
        Self::load_with_meta(path, meta.start_time, meta.interval_minutes)
    }

    /// Loads a dataset with explicit calendar metadata (no sidecar needed).
    pub fn load_with_meta(
        path: &Path,
        start_time: NaiveDateTime,
        interval_minutes: u32,
    ) -> Result<Self> {
        let mut head = [0u8; 5];
        let n_read = fs::File::open(path)
            .and_then(|mut f| {
                let n = f.read(&mut head)?;
                Ok(n)
            })
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        if n_read == 5 && &head == b"STF1 " {
            load_stf(path, start_time, interval_minutes)
        } else {
            load_csv(path, start_time, interval_minutes)
        }
    }

    /// Writes the `STF1` container plus its `<path>.meta` sidecar.
    pub fn save_stf(&self, path: &Path) -> Result<()> {
        let display = path.display().to_string();
        let mut buf = Vec::with_capacity(32 + self.values.len() * 8);
        buf.extend_from_slice(format!("STF1 {} {}\n", self.n_nodes(), self.n_steps()).as_bytes());
        for v in self.values.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(&display, e))?;

        let meta_path = sidecar_path(path);
        let meta = format!(
            "start_time={}\ninterval_minutes={}\n",
            self.start_time.format("%Y-%m-%dT%H:%M:%S"),
            self.interval_minutes
        );
        fs::write(&meta_path, meta)
            .map_err(|e| Error::io(meta_path.display().to_string(), e))?;
        Ok(())
    }
}

/// Calendar lookups for one window: day-of-day-slot and weekday indices at
/// the window's initial and terminal timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalendarIndices {
    pub day_start: usize,
    pub week_start: usize,
    pub day_end: usize,
    pub week_end: usize,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta");
    std::path::PathBuf::from(s)
}

struct Sidecar {
    start_time: NaiveDateTime,
    interval_minutes: u32,
}

/// Parses `start_time=<ISO-8601>` accepting either `T` or space separators.
pub fn parse_start_time(s: &str) -> Result<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .or_else(|_| {
            chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").map(|d| d.and_hms_opt(0, 0, 0).unwrap())
        })
        .map_err(|e| Error::InvalidArgument(format!("cannot parse start_time '{s}': {e}")))
}

fn read_sidecar(data_path: &Path) -> Result<Sidecar> {
    let path = sidecar_path(data_path);
    let display = path.display().to_string();
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&display, e))?;
    let mut start_time = None;
    let mut interval = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: display.clone(),
            line: lineno + 1,
            message: "expected key=value".into(),
        })?;
        match key.trim() {
            "start_time" => start_time = Some(parse_start_time(value.trim())?),
            "interval_minutes" => {
                interval = Some(value.trim().parse::<u32>().map_err(|e| Error::Parse {
                    path: display.clone(),
                    line: lineno + 1,
                    message: format!("bad interval_minutes: {e}"),
                })?)
            }
            _ => {} // unknown keys are ignored so the format can grow
        }
    }
    match (start_time, interval) {
        (Some(start_time), Some(interval_minutes)) => Ok(Sidecar {
            start_time,
            interval_minutes,
        }),
        _ => Err(Error::Parse {
            path: display,
            line: 0,
            message: "sidecar must define start_time and interval_minutes".into(),
        }),
    }
}

fn load_stf(path: &Path, start_time: NaiveDateTime, interval_minutes: u32) -> Result<SeriesDataset> {
    let display = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(&display, e))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Parse {
            path: display.clone(),
            line: 1,
            message: "missing header line".into(),
        })?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| Error::Parse {
        path: display.clone(),
        line: 1,
        message: "header is not ASCII".into(),
    })?;
    let mut parts = header.split_whitespace();
    let magic = parts.next().unwrap_or("");
    if magic != "STF1" {
        return Err(Error::Parse {
            path: display,
            line: 1,
            message: format!("bad magic '{magic}', expected 'STF1'"),
        });
    }
    let parse_dim = |s: Option<&str>, what: &str| -> Result<usize> {
        s.and_then(|v| v.parse::<usize>().ok())
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::Parse {
                path: display.clone(),
                line: 1,
                message: format!("bad {what} in header '{header}'"),
            })
    };
    let n = parse_dim(parts.next(), "node count")?;
    let t = parse_dim(parts.next(), "step count")?;

    let payload = &bytes[newline + 1..];
    if payload.len() != n * t * 8 {
        return Err(Error::Parse {
            path: display,
            line: 2,
            message: format!(
                "payload holds {} bytes, header {}x{} requires {}",
                payload.len(),
                n,
                t,
                n * t * 8
            ),
        });
    }
    let mut data = Vec::with_capacity(n * t);
    for (i, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFiniteData {
                path: display,
                node: i / t,
                step: i % t,
            });
        }
        data.push(v);
    }
    let values = Tensor::from_vec(&[n, t], data)?;
    SeriesDataset::new(values, start_time, interval_minutes)
}

fn load_csv(path: &Path, start_time: NaiveDateTime, interval_minutes: u32) -> Result<SeriesDataset> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: display.clone(),
        line: 1,
        message: "empty file".into(),
    })?;
    let n = header.split(',').count();
    if n == 0 || header.trim().is_empty() {
        return Err(Error::Parse {
            path: display,
            line: 1,
            message: "empty header".into(),
        });
    }

    // CSV rows are time-major; transpose into the node-major matrix.
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(n);
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|e| Error::Parse {
                path: display.clone(),
                line: lineno + 1,
                message: format!("bad number '{}': {e}", field.trim()),
            })?;
            row.push(v);
        }
        if row.len() != n {
            return Err(Error::Parse {
                path: display,
                line: lineno + 1,
                message: format!("expected {} columns, found {}", n, row.len()),
            });
        }
        rows.push(row);
    }
    let t = rows.len();
    if t == 0 {
        return Err(Error::Parse {
            path: display,
            line: 2,
            message: "no data rows".into(),
        });
    }
    let mut data = vec![0.0; n * t];
    for (step, row) in rows.iter().enumerate() {
        for (node, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteData {
                    path: display,
                    node,
                    step,
                });
            }
            data[node * t + step] = v;
        }
    }
    let values = Tensor::from_vec(&[n, t], data)?;
    SeriesDataset::new(values, start_time, interval_minutes)
}

/// One forecasting instance: `t_h` steps of history ending at `anchor_t`
/// and `t_p` future steps starting at `anchor_t + 1`. Samples index into
/// the dataset; they hold no copies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSample {
    pub anchor_t: usize,
    pub t_h: usize,
    pub t_p: usize,
}

impl WindowSample {
    /// First time step of the history window.
    pub fn history_start(&self) -> usize {
        self.anchor_t + 1 - self.t_h
    }

    /// History slice of one node out of a `[N, T]` matrix (raw or
    /// normalized values alike).
    pub fn history<'a>(&self, values: &'a Tensor, node: usize) -> &'a [f64] {
        let row = values.row(node);
        &row[self.history_start()..=self.anchor_t]
    }

    /// Target slice of one node.
    pub fn target<'a>(&self, values: &'a Tensor, node: usize) -> &'a [f64] {
        let row = values.row(node);
        &row[self.anchor_t + 1..self.anchor_t + 1 + self.t_p]
    }

    /// Copies the history of all nodes into an `[N, t_h]` matrix.
    pub fn history_matrix(&self, values: &Tensor) -> Tensor {
        let n = values.rows();
        let mut out = Tensor::zeros(&[n, self.t_h]);
        for i in 0..n {
            out.row_mut(i).copy_from_slice(self.history(values, i));
        }
        out
    }

    /// Copies the target of all nodes into an `[N, t_p]` matrix.
    pub fn target_matrix(&self, values: &Tensor) -> Tensor {
        let n = values.rows();
        let mut out = Tensor::zeros(&[n, self.t_p]);
        for i in 0..n {
            out.row_mut(i).copy_from_slice(self.target(values, i));
        }
        out
    }
}

/// All stride-1 windows over the series, in chronological order:
/// exactly `T - t_h - t_p + 1` samples.
pub fn make_windows(ds: &SeriesDataset, t_h: usize, t_p: usize) -> Result<Vec<WindowSample>> {
    if t_h == 0 || t_p == 0 {
        return Err(Error::InvalidArgument(
            "history and horizon lengths must be positive".into(),
        ));
    }
    let t = ds.n_steps();
    if t < t_h + t_p {
        return Err(Error::InvalidArgument(format!(
            "series has {t} steps, need at least t_h + t_p = {}",
            t_h + t_p
        )));
    }
    Ok((t_h - 1..t - t_p)
        .map(|anchor_t| WindowSample { anchor_t, t_h, t_p })
        .collect())
}

/// Chronological 6:2:2 split at `floor(0.6·M)` and `floor(0.8·M)`.
pub fn split_samples(samples: &[WindowSample]) -> Result<(&[WindowSample], &[WindowSample], &[WindowSample])> {
    let (train, val, test) = split_ranges(samples.len())?;
    Ok((&samples[train], &samples[val], &samples[test]))
}

pub(crate) fn split_ranges(m: usize) -> Result<(Range<usize>, Range<usize>, Range<usize>)> {
    if m < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 samples to split 6:2:2, got {m}"
        )));
    }
    let a = (0.6 * m as f64).floor() as usize;
    let b = (0.8 * m as f64).floor() as usize;
    Ok((0..a, a..b, b..m))
}

/// Global z-score parameters fitted on the training portion only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Normalizer {
    #[inline]
    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    #[inline]
    pub fn denormalize(&self, x: f64) -> f64 {
        x * self.std + self.mean
    }

    pub fn normalize_tensor(&self, x: &Tensor) -> Tensor {
        x.map(|v| self.normalize(v))
    }
}

/// Fits mean/std over every history entry of the training samples, all
/// nodes jointly. Errors on zero variance.
pub fn fit_normalizer(ds: &SeriesDataset, train: &[WindowSample]) -> Result<Normalizer> {
    if train.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot fit normalizer on an empty training split".into(),
        ));
    }
    let values = ds.values();
    let mut count = 0u64;
    let mut sum = 0.0;
    for s in train {
        for node in 0..ds.n_nodes() {
            let h = s.history(values, node);
            sum += h.iter().sum::<f64>();
            count += h.len() as u64;
        }
    }
    let mean = sum / count as f64;
    let mut sq = 0.0;
    for s in train {
        for node in 0..ds.n_nodes() {
            for &v in s.history(values, node) {
                sq += (v - mean) * (v - mean);
            }
        }
    }
    let std = (sq / count as f64).sqrt();
    if std <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(Normalizer { mean, std })
}

/// A dataset with its windows, chronological 6:2:2 split, and the
/// normalizer fitted on the training portion. This is the unit the
/// trainer and evaluator consume.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub ds: SeriesDataset,
    pub norm: Normalizer,
    /// The full series normalized with `norm`; model inputs are sliced
    /// from here, targets and metrics stay on the raw scale.
    pub norm_values: Tensor,
    samples: Vec<WindowSample>,
    train: Range<usize>,
    val: Range<usize>,
    test: Range<usize>,
}

impl PreparedData {
    pub fn new(ds: SeriesDataset, t_h: usize, t_p: usize) -> Result<Self> {
        let samples = make_windows(&ds, t_h, t_p)?;
        let (train, val, test) = split_ranges(samples.len())?;
        let norm = fit_normalizer(&ds, &samples[train.clone()])?;
        let norm_values = norm.normalize_tensor(ds.values());
        Ok(PreparedData {
            ds,
            norm,
            norm_values,
            samples,
            train,
            val,
            test,
        })
    }

    pub fn samples(&self) -> &[WindowSample] {
        &self.samples
    }

    pub fn train(&self) -> &[WindowSample] {
        &self.samples[self.train.clone()]
    }

    pub fn val(&self) -> &[WindowSample] {
        &self.samples[self.val.clone()]
    }

    pub fn test(&self) -> &[WindowSample] {
        &self.samples[self.test.clone()]
    }

    pub fn split(&self, name: &str) -> Result<&[WindowSample]> {
        match name {
            "train" => Ok(self.train()),
            "val" => Ok(self.val()),
            "test" => Ok(self.test()),
            other => Err(Error::InvalidArgument(format!(
                "unknown split '{other}', expected train|val|test"
            ))),
        }
    }

    /// Replaces the fitted normalizer (e.g. with the one a checkpoint was
    /// trained under) and re-normalizes the cached values.
    pub fn with_normalizer(mut self, norm: Normalizer) -> Self {
        self.norm = norm;
        self.norm_values = norm.normalize_tensor(self.ds.values());
        self
    }

    /// Last raw time step touched by a training-sample target; the
    /// training portion of the series is `0..train_end_step()`.
    pub fn train_end_step(&self) -> usize {
        self.train()
            .last()
            .map(|s| s.anchor_t + s.t_p + 1)
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn monday_midnight() -> NaiveDateTime {
        // 2018-01-01 was a Monday.
        NaiveDate::from_ymd_opt(2018, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap()
    }

    fn toy_dataset(n: usize, t: usize, interval: u32) -> SeriesDataset {
        let data: Vec<f64> = (0..n * t).map(|i| i as f64).collect();
        SeriesDataset::new(
            Tensor::from_vec(&[n, t], data).unwrap(),
            monday_midnight(),
            interval,
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_interval_and_nonfinite() {
        let v = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        assert!(SeriesDataset::new(v.clone(), monday_midnight(), 7).is_err());
        let bad = Tensor::from_vec(&[1, 2], vec![1.0, f64::NAN]).unwrap();
        let err = SeriesDataset::new(bad, monday_midnight(), 5).unwrap_err();
        assert!(matches!(err, Error::NonFiniteData { node: 0, step: 1, .. }));
    }

    #[test]
    fn time_indices_calendar_arithmetic() {
        // 5-minute interval => 288 steps per day.
        let ds = toy_dataset(1, 600, 5);
        assert_eq!(ds.time_indices(0).unwrap(), (0, 0));
        assert_eq!(ds.time_indices(288).unwrap(), (0, 1));
        assert_eq!(ds.time_indices(289).unwrap(), (1, 1));
        assert!(ds.time_indices(600).is_err());
    }

    #[test]
    fn time_indices_periodicity() {
        let ds = toy_dataset(1, 5000, 5);
        let n_d = ds.steps_per_day();
        for t in [0usize, 3, 100, 287, 300] {
            let a = ds.time_indices(t).unwrap();
            let b = ds.time_indices(t + 7 * n_d).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn signed_indices_step_before_start() {
        let ds = toy_dataset(1, 10, 5);
        // One step before Monday 00:00 is Sunday's last slot.
        assert_eq!(ds.time_indices_signed(-1), (287, 6));
    }

    #[test]
    fn offset_start_time() {
        // Start Wednesday 06:00 at 60-minute interval: offset 6 of 24.
        let start = NaiveDate::from_ymd_opt(2018, 1, 3)
            .unwrap()
            .and_hms_opt(6, 0, 0)
            .unwrap();
        let data: Vec<f64> = (0..48).map(|i| i as f64).collect();
        let ds =
            SeriesDataset::new(Tensor::from_vec(&[1, 48], data).unwrap(), start, 60).unwrap();
        assert_eq!(ds.time_indices(0).unwrap(), (6, 2));
        assert_eq!(ds.time_indices(18).unwrap(), (0, 3)); // midnight Thursday
    }

    #[test]
    fn window_count_and_indexing() {
        let ds = toy_dataset(1, 10, 5);
        let ws = make_windows(&ds, 3, 2).unwrap();
        assert_eq!(ws.len(), 6); // T - T_h - T_p + 1
        let first = ws[0];
        assert_eq!(first.anchor_t, 2);
        assert_eq!(first.history(ds.values(), 0), &[0.0, 1.0, 2.0]);
        assert_eq!(first.target(ds.values(), 0), &[3.0, 4.0]);
        let last = *ws.last().unwrap();
        assert_eq!(last.anchor_t + last.t_p, ds.n_steps() - 1);
    }

    #[test]
    fn window_count_matches_anchor_enumeration() {
        // Exhaustively enumerate valid anchors for the PEMS08-12 shape.
        let ds = toy_dataset(2, 500, 5);
        let (t_h, t_p) = (12, 12);
        let ws = make_windows(&ds, t_h, t_p).unwrap();
        let mut anchors = 0;
        for a in 0..ds.n_steps() {
            if a + 1 >= t_h && a + t_p < ds.n_steps() {
                anchors += 1;
            }
        }
        assert_eq!(ws.len(), anchors);
        assert_eq!(ws.len(), ds.n_steps() - 23);
    }

    #[test]
    fn windows_too_small_series() {
        let ds = toy_dataset(1, 10, 5);
        assert!(make_windows(&ds, 8, 3).is_err());
    }

    #[test]
    fn split_sizes() {
        let mk = |m: usize| -> Vec<WindowSample> {
            (0..m)
                .map(|anchor_t| WindowSample {
                    anchor_t,
                    t_h: 1,
                    t_p: 1,
                })
                .collect()
        };
        let s100 = mk(100);
        let (a, b, c) = split_samples(&s100).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (60, 20, 20));

        let s10 = mk(10);
        let (a, b, c) = split_samples(&s10).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (6, 2, 2));

        // Floor arithmetic on the PEMS08-12 sample count.
        let s = mk(17833);
        let (a, b, c) = split_samples(&s).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (10699, 3567, 3567));
        assert_eq!(a.len() + b.len() + c.len(), 17833);

        assert!(split_samples(&mk(9)).is_err());
    }

    #[test]
    fn split_is_chronological_partition() {
        let ds = toy_dataset(1, 64, 5);
        let ws = make_windows(&ds, 4, 4).unwrap();
        let (train, val, test) = split_samples(&ws).unwrap();
        assert_eq!(train.len() + val.len() + test.len(), ws.len());
        assert!(train.last().unwrap().anchor_t < val[0].anchor_t);
        assert!(val.last().unwrap().anchor_t < test[0].anchor_t);
    }

    #[test]
    fn normalizer_hand_case_and_errors() {
        let values = Tensor::from_vec(&[1, 12], vec![0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0]).unwrap();
        let ds = SeriesDataset::new(values, monday_midnight(), 5).unwrap();
        let ws = make_windows(&ds, 2, 1).unwrap();
        let (train, _, _) = split_samples(&ws).unwrap();
        let norm = fit_normalizer(&ds, train).unwrap();
        assert!((norm.mean - 1.0).abs() < 1e-12);
        assert!((norm.std - 1.0).abs() < 1e-12);
        assert_eq!(norm.normalize(0.0), -1.0);
        assert_eq!(norm.normalize(2.0), 1.0);

        let constant = Tensor::from_vec(&[1, 12], vec![3.0; 12]).unwrap();
        let ds = SeriesDataset::new(constant, monday_midnight(), 5).unwrap();
        let ws = make_windows(&ds, 2, 1).unwrap();
        assert!(matches!(
            fit_normalizer(&ds, &ws).unwrap_err(),
            Error::ZeroVariance
        ));
    }

    #[test]
    fn stf_roundtrip_preserves_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.stf");
        let ds = toy_dataset(2, 10, 5);
        ds.save_stf(&path).unwrap();

        let header = fs::read(&path).unwrap();
        assert!(header.starts_with(b"STF1 2 10\n"));

        let loaded = SeriesDataset::load(&path).unwrap();
        assert_eq!(loaded.values(), ds.values());
        assert_eq!(loaded.start_time(), ds.start_time());
        assert_eq!(loaded.interval_minutes(), 5);
    }

    #[test]
    fn stf_truncation_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.stf");
        let ds = toy_dataset(2, 10, 5);
        ds.save_stf(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            SeriesDataset::load(&path).unwrap_err(),
            Error::Parse { .. }
        ));
    }

    #[test]
    fn csv_import_values_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        fs::write(&path, "a,b\n1.0,10.0\n2.0,20.0\n3.0,30.0\n").unwrap();
        let ds = SeriesDataset::load_with_meta(&path, monday_midnight(), 5).unwrap();
        assert_eq!(ds.n_nodes(), 2);
        assert_eq!(ds.n_steps(), 3);
        assert_eq!(ds.node_series(0), &[1.0, 2.0, 3.0]);
        assert_eq!(ds.node_series(1), &[10.0, 20.0, 30.0]);

        fs::write(&path, "a,b\n1.0,oops\n").unwrap();
        let err = SeriesDataset::load_with_meta(&path, monday_midnight(), 5).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }

        fs::write(&path, "a,b\n1.0\n").unwrap();
        assert!(SeriesDataset::load_with_meta(&path, monday_midnight(), 5).is_err());
    }

    #[test]
    fn prepared_data_pipeline() {
        let ds = toy_dataset(2, 60, 5);
        let prep = PreparedData::new(ds, 4, 2).unwrap();
        assert_eq!(prep.samples().len(), 55);
        assert_eq!(prep.train().len(), 33);
        assert_eq!(prep.val().len(), 11);
        assert_eq!(prep.test().len(), 11);
        // Normalized values are the z-scored raw values.
        let raw = prep.ds.values().data()[5];
        let normed = prep.norm_values.data()[5];
        assert!((prep.norm.denormalize(normed) - raw).abs() < 1e-12);
    }
}
