//! Frames, CSV files, normalization, windowing, synthetic shift streams and
//! the hex state-file format.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use crate::adjusters::AffineAdjuster;
use crate::error::{Error, Result};
use crate::numerics::{Mat64, Rng, Vec64};
use crate::retrain::{LaraConfig, LaraState};
use crate::ruminate::RuminateConfig;
use crate::vae::{Dense, VaeModel, LAYER_NAMES};

/// Multichannel series with strictly increasing timestamps and optional 0/1
/// anomaly labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    timestamps: Vec<i64>,
    values: Mat64,
    labels: Option<Vec<u8>>,
}

impl SeriesFrame {
    pub fn new(timestamps: Vec<i64>, values: Mat64, labels: Option<Vec<u8>>) -> Result<Self> {
        if timestamps.len() != values.rows() {
            return Err(Error::shape(format!(
                "{} timestamps for {} rows",
                timestamps.len(),
                values.rows()
            )));
        }
        if let Some(i) = timestamps.windows(2).position(|p| p[1] <= p[0]) {
            return Err(Error::invalid(format!(
                "timestamps must increase strictly (row {})",
                i + 1
            )));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite("frame values".into()));
        }
        if let Some(l) = &labels {
            if l.len() != timestamps.len() {
                return Err(Error::shape(format!(
                    "{} labels for {} rows",
                    l.len(),
                    timestamps.len()
                )));
            }
            if l.iter().any(|&v| v > 1) {
                return Err(Error::invalid("labels must be 0 or 1"));
            }
        }
        Ok(Self {
            timestamps,
            values,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn values(&self) -> &Mat64 {
        &self.values
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn without_labels(&self) -> SeriesFrame {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    /// Rows in `range` as a new frame.
    pub fn slice(&self, range: Range<usize>) -> Result<SeriesFrame> {
        if range.start > range.end || range.end > self.len() {
            return Err(Error::invalid(format!(
                "row range {}..{} outside a frame of {} rows",
                range.start,
                range.end,
                self.len()
            )));
        }
        let d = self.channels();
        let values = Mat64::from_vec(
            range.len(),
            d,
            self.values.as_slice()[range.start * d..range.end * d].to_vec(),
        )?;
        Ok(Self {
            timestamps: self.timestamps[range.clone()].to_vec(),
            values,
            labels: self.labels.as_ref().map(|l| l[range].to_vec()),
        })
    }
}

fn csv_err(row: usize, msg: impl Into<String>) -> Error {
    Error::Csv { row, msg: msg.into() }
}

/// Parses a frame. Row numbers in errors count the header as row 1.
pub fn read_csv<R: Read>(reader: R) -> Result<SeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(csv_err(1, e.to_string())),
        None => return Err(csv_err(1, "empty file, expected a header")),
    };
    let names: Vec<&str> = header.iter().collect();
    if names.first() != Some(&"timestamp") {
        return Err(csv_err(1, "header must start with 'timestamp'"));
    }
    let has_labels = names.last() == Some(&"label");
    let channels = names.len() - 1 - usize::from(has_labels);
    if channels == 0 {
        return Err(csv_err(1, "header names no value columns"));
    }
    for (j, name) in names[1..=channels].iter().enumerate() {
        if *name != format!("dim_{j}") {
            return Err(csv_err(1, format!("expected column 'dim_{j}', found '{name}'")));
        }
    }

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in records.enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| csv_err(row, e.to_string()))?;
        if record.len() != names.len() {
            return Err(csv_err(
                row,
                format!("expected {} fields, found {}", names.len(), record.len()),
            ));
        }
        let ts: i64 = record[0]
            .parse()
            .map_err(|_| csv_err(row, format!("timestamp '{}' is not an integer", &record[0])))?;
        if timestamps.last().is_some_and(|&prev| ts <= prev) {
            return Err(csv_err(row, "timestamps must increase strictly"));
        }
        timestamps.push(ts);
        for j in 1..=channels {
            let cell = &record[j];
            if cell.is_empty() {
                return Err(csv_err(row, format!("missing value in column dim_{}", j - 1)));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| csv_err(row, format!("value '{cell}' is not a number")))?;
            if !v.is_finite() {
                return Err(csv_err(row, format!("value '{cell}' is not finite")));
            }
            values.push(v);
        }
        if has_labels {
            let label = match &record[channels + 1] {
                "0" => 0,
                "1" => 1,
                other => return Err(csv_err(row, format!("label '{other}' must be 0 or 1"))),
            };
            labels.push(label);
        }
    }
    let values = Mat64::from_vec(timestamps.len(), channels, values)?;
    SeriesFrame::new(timestamps, values, has_labels.then_some(labels))
}

fn file_error(path: &Path, source: std::io::Error) -> Error {
    Error::File {
        path: path.display().to_string(),
        source,
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| file_error(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| file_error(path, e))
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<SeriesFrame> {
    read_csv(BufReader::new(open(path.as_ref())?))
}

pub fn write_csv<W: Write>(frame: &SeriesFrame, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend((0..frame.channels()).map(|j| format!("dim_{j}")));
    if frame.labels.is_some() {
        header.push("label".into());
    }
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(&header).map_err(io)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..frame.len() {
        record.clear();
        record.push(frame.timestamps[i].to_string());
        record.extend(frame.values.row(i).iter().map(|v| v.to_string()));
        if let Some(l) = &frame.labels {
            record.push(l[i].to_string());
        }
        w.write_record(&record).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(frame: &SeriesFrame, path: impl AsRef<Path>) -> Result<()> {
    write_csv(frame, BufWriter::new(create(path.as_ref())?))
}

/// Per-channel mean and standard deviation from a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScore {
    pub mean: Vec64,
    pub std: Vec64,
}

pub const STD_FLOOR: f64 = 1e-8;

impl ZScore {
    pub fn fit(frame: &SeriesFrame) -> Result<Self> {
        if frame.is_empty() {
            return Err(Error::invalid("cannot normalize an empty frame"));
        }
        let n = frame.len() as f64;
        let d = frame.channels();
        let mut mean = vec![0.0; d];
        for i in 0..frame.len() {
            for (m, v) in mean.iter_mut().zip(frame.values.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..frame.len() {
            for ((s, v), m) in var.iter_mut().zip(frame.values.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, frame: &SeriesFrame) -> Result<SeriesFrame> {
        if frame.channels() != self.mean.len() {
            return Err(Error::shape(format!(
                "statistics for {} channels applied to {}",
                self.mean.len(),
                frame.channels()
            )));
        }
        let mut values = frame.values.clone();
        for i in 0..frame.len() {
            for ((v, m), s) in values.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s.max(STD_FLOOR);
            }
        }
        Ok(SeriesFrame {
            values,
            ..frame.clone()
        })
    }
}

/// Normalizes with `stats`, or with statistics fitted on `frame` itself.
pub fn zscore_normalize(frame: &SeriesFrame, stats: Option<&ZScore>) -> Result<(SeriesFrame, ZScore)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => ZScore::fit(frame)?,
    };
    Ok((stats.apply(frame)?, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub w: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { w: 50, stride: 1 }
    }
}

/// Flattened windows (index `t * d + j`) and the row index each one ends at.
#[derive(Debug, Clone, PartialEq)]
pub struct Windows {
    pub windows: Vec<Vec64>,
    pub ends: Vec<usize>,
}

pub fn make_windows(frame: &SeriesFrame, spec: WindowSpec) -> Result<Windows> {
    if spec.w == 0 || spec.stride == 0 {
        return Err(Error::invalid("window length and stride must be at least 1"));
    }
    if frame.len() < spec.w {
        return Err(Error::invalid(format!(
            "series of {} rows is shorter than the window length {}",
            frame.len(),
            spec.w
        )));
    }
    let d = frame.channels();
    let count = (frame.len() - spec.w) / spec.stride + 1;
    let data = frame.values.as_slice();
    let mut windows = Vec::with_capacity(count);
    let mut ends = Vec::with_capacity(count);
    for k in 0..count {
        let start = k * spec.stride;
        windows.push(data[start * d..(start + spec.w) * d].to_vec());
        ends.push(start + spec.w - 1);
    }
    Ok(Windows { windows, ends })
}

/// Spreads window scores over `len` rows: each row takes the score of the
/// latest window ending at or before it, and rows before the first window end
/// take the first window's score.
pub fn expand_window_scores(scores: &[f64], ends: &[usize], len: usize) -> Result<Vec64> {
    if scores.is_empty() || scores.len() != ends.len() {
        return Err(Error::shape(format!(
            "{} window scores for {} window ends",
            scores.len(),
            ends.len()
        )));
    }
    let mut out = Vec::with_capacity(len);
    let mut k = 0;
    for t in 0..len {
        while k + 1 < ends.len() && ends[k + 1] <= t {
            k += 1;
        }
        out.push(scores[k]);
    }
    Ok(out)
}

/// Parameters of one stationary regime.
#[derive(Debug, Clone, PartialEq)]
pub struct Regime {
    pub amplitude: f64,
    /// Base frequency in cycles per step.
    pub frequency: f64,
    pub level: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSpec {
    pub len: usize,
    pub channels: usize,
    pub changepoint: usize,
    pub pre: Regime,
    pub post: Regime,
    pub anomaly_rate: f64,
    /// Anomaly size in units of the affected channel's standard deviation.
    pub anomaly_magnitude: f64,
    pub seed: u64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            len: 2000,
            channels: 4,
            changepoint: 1000,
            pre: Regime {
                amplitude: 1.0,
                frequency: 0.02,
                level: 0.0,
                noise: 0.1,
            },
            post: Regime {
                amplitude: 1.6,
                frequency: 0.031,
                level: 0.8,
                noise: 0.1,
            },
            anomaly_rate: 0.01,
            anomaly_magnitude: 3.0,
            seed: 0,
        }
    }
}

impl ShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::invalid("shift spec needs at least one channel"));
        }
        if self.changepoint == 0 || self.changepoint >= self.len {
            return Err(Error::invalid(format!(
                "changepoint {} must lie strictly inside a series of length {}",
                self.changepoint, self.len
            )));
        }
        if !(self.anomaly_rate > 0.0 && self.anomaly_rate < 0.2) {
            return Err(Error::invalid(format!(
                "anomaly rate {} must lie in (0, 0.2)",
                self.anomaly_rate
            )));
        }
        for r in [&self.pre, &self.post] {
            let ok = [r.amplitude, r.frequency, r.level, r.noise]
                .iter()
                .all(|v| v.is_finite())
                && r.amplitude >= 0.0
                && r.frequency > 0.0
                && r.noise >= 0.0;
            if !ok {
                return Err(Error::invalid(format!("invalid regime {r:?}")));
            }
        }
        if !(self.anomaly_magnitude > 0.0 && self.anomaly_magnitude.is_finite()) {
            return Err(Error::invalid("anomaly magnitude must be positive"));
        }
        Ok(())
    }
}

const SLOW_WEIGHT: f64 = 1.0;
const SLOW_RATIO: f64 = 8.0;
const SEGMENT_MIN: usize = 3;
const SEGMENT_MAX: usize = 12;

/// Two-tone sinusoid per channel, switching regime at the changepoint, with
/// labelled level-shift and spike segments covering `round(rate * len)` rows.
pub fn synth_shift_stream(spec: &ShiftSpec) -> Result<SeriesFrame> {
    spec.validate()?;
    let (t_len, d) = (spec.len, spec.channels);
    let mut rng = Rng::new(spec.seed);
    let phases: Vec<[f64; 3]> = (0..d).map(|_| [0; 3].map(|_| 2.0 * PI * rng.uniform())).collect();

    let mut values = Mat64::zeros(t_len, d);
    for t in 0..t_len {
        let r = if t < spec.changepoint { &spec.pre } else { &spec.post };
        for (j, p) in phases.iter().enumerate() {
            let f = r.frequency * (1.0 + 0.15 * j as f64);
            let tt = t as f64;
            let v = r.level
                + r.amplitude * (2.0 * PI * f * tt + p[0]).sin()
                + 0.5 * r.amplitude * (2.0 * PI * 2.3 * f * tt + p[1]).sin()
                + SLOW_WEIGHT * r.amplitude * (2.0 * PI * f / SLOW_RATIO * tt + p[2]).sin()
                + r.noise * rng.normal();
            values.set(t, j, v);
        }
    }

    let target = ((spec.anomaly_rate * t_len as f64).round() as usize).max(1);
    let mut labels = vec![0u8; t_len];
    let mut placed = 0;
    let mut attempts = 0;
    while placed < target {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::invalid("could not place anomaly segments; rate too high"));
        }
        let len = (SEGMENT_MIN + rng.below(SEGMENT_MAX - SEGMENT_MIN + 1)).min(target - placed);
        let start = rng.below(t_len - len + 1);
        let lo = start.saturating_sub(1);
        let hi = (start + len + 1).min(t_len);
        if labels[lo..hi].contains(&1) {
            continue;
        }
        let r = if start < spec.changepoint {
            &spec.pre
        } else {
            &spec.post
        };
        let scale = spec.anomaly_magnitude
            * ((0.625 + 0.5 * SLOW_WEIGHT * SLOW_WEIGHT) * r.amplitude * r.amplitude + r.noise * r.noise).sqrt();
        let affected: Vec<usize> = {
            let mut chans: Vec<usize> = (0..d).collect();
            rng.shuffle(&mut chans);
            chans.truncate(1 + rng.below(d.div_ceil(2)));
            chans
        };
        let spike = rng.uniform() < 0.5;
        let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
        #[allow(clippy::needless_range_loop)]
        for t in start..start + len {
            labels[t] = 1;
            for &j in &affected {
                let bump = if spike {
                    let s = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                    s * 1.5 * scale
                } else {
                    sign * scale
                };
                values.set(t, j, values.get(t, j) + bump);
            }
        }
        placed += len;
    }
    SeriesFrame::new((0..t_len as i64).collect(), values, Some(labels))
}

pub const STATE_VERSION: &str = "lara-state 1";

/// Model stored in a state file.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredModel {
    Vae(VaeModel),
    Lara(LaraState),
}

/// Contents of a state file: a model plus optional normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFile {
    pub model: StoredModel,
    pub norm: Option<ZScore>,
}

impl StateFile {
    /// The stored model as a retrainable state; a bare VAE becomes
    /// generation 0 with `config`.
    pub fn into_lara(self, config: LaraConfig) -> LaraState {
        match self.model {
            StoredModel::Vae(m) => LaraState::new(m, config),
            StoredModel::Lara(s) => s,
        }
    }

    pub fn base(&self) -> &VaeModel {
        match &self.model {
            StoredModel::Vae(m) => m,
            StoredModel::Lara(s) => s.base(),
        }
    }
}

/// Upper-case IEEE-754 bit pattern, 16 hex digits.
pub fn f64_to_hex(v: f64) -> String {
    format!("{:016X}", v.to_bits())
}

pub fn hex_to_f64(s: &str) -> Option<f64> {
    if s.len() != 16 {
        return None;
    }
    u64::from_str_radix(s, 16).ok().map(f64::from_bits)
}

fn hex_line(out: &mut impl Write, name: &str, values: &[f64]) -> std::io::Result<()> {
    write!(out, "{name} =")?;
    for v in values {
        write!(out, " {}", f64_to_hex(*v))?;
    }
    writeln!(out)
}

pub fn write_state<W: Write>(file: &StateFile, writer: W) -> Result<()> {
    let mut out = BufWriter::new(writer);
    writeln!(out, "{STATE_VERSION}")?;
    let base = file.base();
    let kind = match file.model {
        StoredModel::Vae(_) => "vae",
        StoredModel::Lara(_) => "lara",
    };
    writeln!(out, "kind = {kind}")?;
    writeln!(
        out,
        "dims = {} {} {} {}",
        base.window(),
        base.channels(),
        base.latent(),
        base.hidden()
    )?;
    for (layer, name) in base.layers().iter().zip(LAYER_NAMES) {
        hex_line(&mut out, &format!("{name}.weight"), layer.weight.as_slice())?;
        hex_line(&mut out, &format!("{name}.bias"), &layer.bias)?;
    }
    if let StoredModel::Lara(state) = &file.model {
        hex_line(&mut out, "m_z.weight", state.m_z().weight().as_slice())?;
        hex_line(&mut out, "m_z.bias", state.m_z().bias())?;
        hex_line(&mut out, "m_x.weight", state.m_x().weight().as_slice())?;
        hex_line(&mut out, "m_x.bias", state.m_x().bias())?;
        let cfg = state.config();
        writeln!(out, "generation = {}", state.generation())?;
        writeln!(
            out,
            "ruminate = {} {} {}",
            cfg.ruminate.n_restored, cfg.ruminate.n_samples, cfg.ruminate.seed
        )?;
        writeln!(out, "mx_input = {}", cfg.mx_input)?;
    }
    if let Some(norm) = &file.norm {
        hex_line(&mut out, "norm.mean", &norm.mean)?;
        hex_line(&mut out, "norm.std", &norm.std)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_state(file: &StateFile, path: impl AsRef<Path>) -> Result<()> {
    write_state(file, create(path.as_ref())?)
}

struct StateReader {
    lines: Vec<(usize, String, String)>,
    pos: usize,
    last_line: usize,
}

impl StateReader {
    fn err(line: usize, msg: impl Into<String>) -> Error {
        Error::StateFormat { line, msg: msg.into() }
    }

    fn peek_name(&self) -> Option<&str> {
        self.lines.get(self.pos).map(|(_, n, _)| n.as_str())
    }

    fn field(&mut self, name: &str) -> Result<(usize, String)> {
        match self.lines.get(self.pos) {
            Some((line, n, v)) if n == name => {
                self.pos += 1;
                Ok((*line, v.clone()))
            }
            Some((line, n, _)) => Err(Self::err(*line, format!("expected '{name}', found '{n}'"))),
            None => Err(Self::err(
                self.last_line + 1,
                format!("truncated file: missing '{name}'"),
            )),
        }
    }

    fn ints(&mut self, name: &str, count: usize) -> Result<Vec<u64>> {
        let (line, v) = self.field(name)?;
        let out: Vec<u64> = v
            .split_whitespace()
            .map(|s| {
                s.parse::<u64>()
                    .map_err(|_| Self::err(line, format!("'{s}' is not an integer")))
            })
            .collect::<Result<_>>()?;
        if out.len() != count {
            return Err(Self::err(
                line,
                format!("'{name}' needs {count} integers, found {}", out.len()),
            ));
        }
        Ok(out)
    }

    fn floats(&mut self, name: &str, count: usize) -> Result<Vec64> {
        let (line, v) = self.field(name)?;
        let out: Vec64 = v
            .split_whitespace()
            .map(|s| hex_to_f64(s).ok_or_else(|| Self::err(line, format!("malformed hex word '{s}'"))))
            .collect::<Result<_>>()?;
        if out.len() != count {
            return Err(Self::err(
                line,
                format!("'{name}' needs {count} values, found {}", out.len()),
            ));
        }
        Ok(out)
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Mat64> {
        Mat64::from_vec(rows, cols, self.floats(name, rows * cols)?)
    }
}

pub fn read_state<R: BufRead>(reader: R) -> Result<StateFile> {
    let mut lines = Vec::new();
    let mut last_line = 0;
    let mut version = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let number = i + 1;
        last_line = number;
        if number == 1 {
            version = Some(line.trim().to_string());
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (name, value) = line
            .split_once(" = ")
            .or_else(|| line.trim_end().strip_suffix(" =").map(|n| (n, "")))
            .ok_or_else(|| StateReader::err(number, "expected 'name = value'"))?;
        lines.push((number, name.trim().to_string(), value.trim().to_string()));
    }
    match version.as_deref() {
        None => return Err(StateReader::err(1, "empty file")),
        Some(v) if v != STATE_VERSION => {
            return Err(StateReader::err(
                1,
                format!("unsupported version '{v}', expected '{STATE_VERSION}'"),
            ))
        }
        _ => {}
    }
    let mut r = StateReader {
        lines,
        pos: 0,
        last_line,
    };

    let (kind_line, kind) = r.field("kind")?;
    let dims = r.ints("dims", 4)?;
    let (window, channels, latent, hidden) = (dims[0] as usize, dims[1] as usize, dims[2] as usize, dims[3] as usize);
    let input = window * channels;
    let shapes = [
        (input, hidden),
        (hidden, latent),
        (hidden, latent),
        (latent, hidden),
        (hidden, input),
        (hidden, input),
    ];
    let mut layers = Vec::with_capacity(6);
    for ((fan_in, fan_out), name) in shapes.into_iter().zip(LAYER_NAMES) {
        let weight = r.matrix(&format!("{name}.weight"), fan_out, fan_in)?;
        let bias = r.floats(&format!("{name}.bias"), fan_out)?;
        layers.push(Dense { weight, bias });
    }
    let layers: [Dense; 6] = layers.try_into().expect("six layers");
    let base = VaeModel::from_layers(window, channels, layers)?;

    let model = match kind.as_str() {
        "vae" => StoredModel::Vae(base),
        "lara" => {
            let m_z = AffineAdjuster::new(r.matrix("m_z.weight", latent, latent)?, r.floats("m_z.bias", latent)?)?;
            let m_x = AffineAdjuster::new(r.matrix("m_x.weight", input, input)?, r.floats("m_x.bias", input)?)?;
            let generation = r.ints("generation", 1)?[0];
            let rum = r.ints("ruminate", 3)?;
            let (line, mode) = r.field("mx_input")?;
            let mx_input = mode
                .parse()
                .map_err(|_| StateReader::err(line, format!("unknown mx_input '{mode}'")))?;
            let config = LaraConfig {
                ruminate: RuminateConfig {
                    n_restored: rum[0] as usize,
                    n_samples: rum[1] as usize,
                    seed: rum[2],
                },
                mx_input,
            };
            StoredModel::Lara(LaraState::from_parts(base, m_z, m_x, generation, config)?)
        }
        other => return Err(StateReader::err(kind_line, format!("unknown model kind '{other}'"))),
    };
    let norm = if r.peek_name() == Some("norm.mean") {
        Some(ZScore {
            mean: r.floats("norm.mean", channels)?,
            std: r.floats("norm.std", channels)?,
        })
    } else {
        None
    };
    if let Some((line, name, _)) = r.lines.get(r.pos) {
        return Err(StateReader::err(*line, format!("unexpected entry '{name}'")));
    }
    Ok(StateFile { model, norm })
}

pub fn load_state(path: impl AsRef<Path>) -> Result<StateFile> {
    read_state(BufReader::new(open(path.as_ref())?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_frame() -> SeriesFrame {
        let values = Mat64::from_rows(&[vec![0.1, -2.5], vec![1e-300, 3.0], vec![7.25, 1.0 / 3.0]]).unwrap();
        SeriesFrame::new(vec![10, 11, 15], values, Some(vec![0, 1, 0])).unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let frame = tiny_frame();
        let mut buf = Vec::new();
        write_csv(&frame, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp,dim_0,dim_1,label\n"));
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, frame);
        let mut again = Vec::new();
        write_csv(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn csv_errors_name_rows() {
        let missing = "timestamp,dim_0,dim_1\n0,1.0,2.0\n1,,3.0\n";
        assert!(matches!(read_csv(missing.as_bytes()), Err(Error::Csv { row: 3, .. })));
        let order = "timestamp,dim_0\n0,1\n2,1\n2,1\n";
        assert!(matches!(read_csv(order.as_bytes()), Err(Error::Csv { row: 4, .. })));
        let text = "timestamp,dim_0\n0,abc\n";
        assert!(matches!(read_csv(text.as_bytes()), Err(Error::Csv { row: 2, .. })));
        let header = "time,dim_0\n0,1\n";
        assert!(matches!(read_csv(header.as_bytes()), Err(Error::Csv { row: 1, .. })));
        let short = "timestamp,dim_0,dim_1\n0,1\n";
        assert!(matches!(read_csv(short.as_bytes()), Err(Error::Csv { row: 2, .. })));
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let values = Mat64::from_rows(&[vec![5.0, 1.0], vec![5.0, 2.0], vec![5.0, 3.0]]).unwrap();
        let frame = SeriesFrame::new(vec![0, 1, 2], values, None).unwrap();
        let (norm, stats) = zscore_normalize(&frame, None).unwrap();
        assert_eq!(stats.std[0], 0.0);
        assert!((0..3).all(|i| norm.values().get(i, 0) == 0.0));
    }

    #[test]
    fn window_count_and_layout() {
        let values = Mat64::from_vec(5, 2, (0..10).map(f64::from).collect()).unwrap();
        let frame = SeriesFrame::new((0..5).collect(), values, None).unwrap();
        let w = make_windows(&frame, WindowSpec { w: 3, stride: 1 }).unwrap();
        assert_eq!(w.windows.len(), 3);
        assert_eq!(w.ends, vec![2, 3, 4]);
        assert_eq!(w.windows[1], vec![2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let p = make_windows(&frame, WindowSpec { w: 2, stride: 2 }).unwrap();
        assert_eq!(p.windows.len(), 2);
        assert!(make_windows(&frame, WindowSpec { w: 6, stride: 1 }).is_err());
    }

    #[test]
    fn window_scores_cover_every_row() {
        let s = expand_window_scores(&[1.0, 2.0, 3.0], &[2, 3, 4], 5).unwrap();
        assert_eq!(s, vec![1.0, 1.0, 1.0, 2.0, 3.0]);
        let s = expand_window_scores(&[1.0, 2.0], &[1, 3], 5).unwrap();
        assert_eq!(s, vec![1.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn synth_is_deterministic_and_labelled_at_rate() {
        let spec = ShiftSpec {
            seed: 42,
            ..ShiftSpec::default()
        };
        let a = synth_shift_stream(&spec).unwrap();
        assert_eq!(a, synth_shift_stream(&spec).unwrap());
        let frac = a.labels().unwrap().iter().filter(|&&l| l == 1).count() as f64 / a.len() as f64;
        assert!((frac - 0.01).abs() <= 0.003, "{frac}");
    }

    #[test]
    fn invalid_shift_specs() {
        let bad = [
            ShiftSpec {
                changepoint: 0,
                ..ShiftSpec::default()
            },
            ShiftSpec {
                anomaly_rate: 0.2,
                ..ShiftSpec::default()
            },
            ShiftSpec {
                channels: 0,
                ..ShiftSpec::default()
            },
        ];
        for spec in bad {
            assert!(synth_shift_stream(&spec).is_err());
        }
    }

    #[test]
    fn one_is_the_expected_hex_word() {
        assert_eq!(f64_to_hex(1.0), "3FF0000000000000");
        assert_eq!(hex_to_f64("3FF0000000000000"), Some(1.0));
        assert_eq!(hex_to_f64("3FF"), None);
        assert_eq!(hex_to_f64("ZZZZZZZZZZZZZZZZ"), None);
    }

    #[test]
    fn state_errors() {
        let model = VaeModel::new(2, 1, 1, 2, 0).unwrap();
        let mut buf = Vec::new();
        write_state(
            &StateFile {
                model: StoredModel::Vae(model),
                norm: None,
            },
            &mut buf,
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();

        let wrong_version = text.replacen("lara-state 1", "lara-state 9", 1);
        assert!(matches!(
            read_state(wrong_version.as_bytes()),
            Err(Error::StateFormat { line: 1, .. })
        ));

        let truncated: String = text.lines().take(6).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            read_state(truncated.as_bytes()),
            Err(Error::StateFormat { line: 7, .. })
        ));

        let bad_hex = text.replacen("dec.mean.bias = ", "dec.mean.bias = XYZ ", 1);
        assert!(matches!(read_state(bad_hex.as_bytes()), Err(Error::StateFormat { .. })));
    }
}
