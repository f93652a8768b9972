//! File formats for snapshot sets, models and POD bases.
//!
//! Every object has two encodings:
//!
//! * **Text**: `#`-prefixed header lines of comma-separated `key=value`
//!   pairs followed by CSV data rows. Floats use the shortest representation
//!   that parses back to the same bits. A trailing `# crc32=xxxxxxxx` line
//!   holds the CRC-32 of every byte before it. Writers always emit it; it is
//!   mandatory when reading models and bases and optional for snapshots, so
//!   hand-made or externally produced snapshot files can be ingested.
//! * **Binary**: little-endian, laid out as
//!
//!   | offset | size | content |
//!   |---|---|---|
//!   | 0 | 8 | magic (`SLSISNAP`, `SLSIMODL` or `SLSIBASI`) |
//!   | 8 | 4 | format version, `u32` (currently 1) |
//!   | 12 | 8 | payload length `L`, `u64` |
//!   | 20 | `L` | payload |
//!   | 20 + `L` | 4 | CRC-32 of the payload, `u32` |
//!
//!   Counts are `u64`, flags `u8`, reals `f64`, matrices row-major without
//!   a shape prefix (shapes follow from earlier counts). See `README.md` for
//!   the per-object payload fields.
//!
//! Readers detect the encoding from the leading bytes. Path-based writers
//! pick binary for a `.bin` extension and text otherwise.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::compression::PodBasis;
use crate::inference::LossReport;
use crate::integrator::{InputSignal, MidpointRule, TimeGrid};
use crate::linalg::{Matrix, Spectrum};
use crate::snapshots::{SnapshotSet, Trajectory};
use crate::stableparam::{LinearModel, Provenance, StableParams};

pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unrecognized file signature at byte {offset}")]
    BadMagic { offset: u64 },
    #[error("expected a {expected} file, found a {found} file")]
    WrongKind { expected: &'static str, found: &'static str },
    #[error("unsupported format version {found} at byte {offset}")]
    UnsupportedVersion { found: u32, offset: u64 },
    #[error("truncated file: {needed} more bytes needed at byte {offset}")]
    Truncated { offset: u64, needed: u64 },
    #[error("checksum mismatch at byte {offset}: stored {stored:08x}, computed {computed:08x}")]
    Checksum { offset: u64, stored: u32, computed: u32 },
    #[error("missing checksum line at byte {offset}")]
    MissingChecksum { offset: u64 },
    #[error("malformed content at byte {offset}: {reason}")]
    Malformed { offset: u64, reason: String },
    #[error("invalid data: {0}")]
    Invalid(String),
}

fn malformed(offset: usize, reason: impl Into<String>) -> IoError {
    IoError::Malformed {
        offset: offset as u64,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Binary,
}

impl Format {
    /// Binary for a `.bin` extension, text otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("bin") => Self::Binary,
            _ => Self::Text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Snapshots,
    Model,
    Basis,
}

impl Kind {
    const ALL: [Kind; 3] = [Kind::Snapshots, Kind::Model, Kind::Basis];

    fn magic(self) -> &'static [u8; 8] {
        match self {
            Kind::Snapshots => b"SLSISNAP",
            Kind::Model => b"SLSIMODL",
            Kind::Basis => b"SLSIBASI",
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Snapshots => "snapshots",
            Kind::Model => "model",
            Kind::Basis => "basis",
        }
    }

    fn text_signature(self) -> String {
        format!("# slsi {} v", self.name())
    }

    fn checksum_required(self) -> bool {
        !matches!(self, Kind::Snapshots)
    }
}

/// A model together with the raw stable factors it was assembled from.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredModel {
    pub model: LinearModel,
    /// Present exactly when the provenance is stable-parameterized.
    pub params: Option<StableParams>,
}

impl StoredModel {
    pub fn stable(params: StableParams) -> Result<Self, IoError> {
        let model = params.assemble().map_err(|e| IoError::Invalid(e.to_string()))?;
        Ok(Self {
            model,
            params: Some(params),
        })
    }

    pub fn unconstrained(model: LinearModel) -> Self {
        Self { model, params: None }
    }

    fn validate(&self) -> Result<(), IoError> {
        let m = &self.model;
        if !m.a.is_square() {
            return Err(IoError::Invalid("drift matrix is not square".into()));
        }
        if let Some(b) = &m.b {
            if b.rows() != m.a.rows() {
                return Err(IoError::Invalid("input matrix row count differs from state dimension".into()));
            }
        }
        match (m.provenance, &self.params) {
            (Provenance::StableParameterized, None) => {
                Err(IoError::Invalid("stable-parameterized model without factors".into()))
            }
            (Provenance::Unconstrained, Some(_)) => Err(IoError::Invalid("unconstrained model with factors".into())),
            (Provenance::StableParameterized, Some(p)) => {
                p.validate().map_err(|e| IoError::Invalid(e.to_string()))?;
                if p.state_dim() != m.state_dim() || p.bbar.as_ref().map(Matrix::cols) != m.b.as_ref().map(Matrix::cols)
                {
                    return Err(IoError::Invalid("factor shapes differ from the model".into()));
                }
                Ok(())
            }
            (Provenance::Unconstrained, None) => Ok(()),
        }
    }

    /// Checks that the stored drift and input matrices are what the stored
    /// factors assemble to.
    fn check_consistency(&self, offset: usize) -> Result<(), IoError> {
        if let Some(p) = &self.params {
            let drift = p.drift();
            let tol = 1e-12 * (1.0 + drift.max_abs());
            if (&drift - &self.model.a).max_abs() > tol {
                return Err(malformed(offset, "stored drift matrix does not match its stable factors"));
            }
            if p.bbar != self.model.b {
                return Err(malformed(offset, "stored input matrix does not match its factor"));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- numbers

/// Shortest round-trip decimal. Scientific notation outside `[1e-5, 1e16)`
/// keeps very small and very large magnitudes compact.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn push_row(out: &mut String, prefix: &str, values: &[f64]) {
    out.push_str(prefix);
    for v in values {
        out.push(',');
        out.push_str(&format_f64(*v));
    }
    out.push('\n');
}

// ---------------------------------------------------------------- text

struct Line<'a> {
    offset: usize,
    text: &'a str,
}

/// Header pairs and data rows of a text file, after signature and checksum
/// handling.
struct TextDoc<'a> {
    headers: Vec<(usize, HashMap<&'a str, &'a str>)>,
    rows: Vec<(usize, Vec<&'a str>)>,
}

fn split_lines(text: &str) -> Vec<Line<'_>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for raw in text.split_inclusive('\n') {
        let trimmed = raw.trim_end_matches(['\n', '\r']);
        out.push(Line { offset, text: trimmed });
        offset += raw.len();
    }
    out
}

fn parse_pairs<'a>(line: &Line<'a>) -> Result<HashMap<&'a str, &'a str>, IoError> {
    let body = line.text.trim_start_matches('#');
    let mut map = HashMap::new();
    for part in body.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| malformed(line.offset, format!("expected key=value, found `{part}`")))?;
        if map.insert(k.trim(), v.trim()).is_some() {
            return Err(malformed(line.offset, format!("duplicate key `{}`", k.trim())));
        }
    }
    Ok(map)
}

fn parse_text(text: &str, kind: Kind) -> Result<TextDoc<'_>, IoError> {
    let lines = split_lines(text);
    let first = lines.first().ok_or(IoError::BadMagic { offset: 0 })?;
    let sig = kind.text_signature();
    let version = match first.text.strip_prefix(&sig) {
        Some(v) => v,
        None => {
            for other in Kind::ALL {
                if first.text.starts_with(&other.text_signature()) {
                    return Err(IoError::WrongKind {
                        expected: kind.name(),
                        found: other.name(),
                    });
                }
            }
            return Err(IoError::BadMagic { offset: 0 });
        }
    };
    let version: u32 = version
        .trim()
        .parse()
        .map_err(|_| malformed(0, format!("bad version `{}`", version.trim())))?;
    if version != FORMAT_VERSION {
        return Err(IoError::UnsupportedVersion {
            found: version,
            offset: sig.len() as u64,
        });
    }

    let mut doc = TextDoc {
        headers: Vec::new(),
        rows: Vec::new(),
    };
    let mut checksum_seen = false;
    for line in &lines[1..] {
        if checksum_seen {
            if line.text.trim().is_empty() {
                continue;
            }
            return Err(malformed(line.offset, "content after checksum line"));
        }
        if line.text.trim().is_empty() {
            continue;
        }
        if line.text.starts_with('#') {
            let pairs = parse_pairs(line)?;
            if let Some(stored) = pairs.get("crc32") {
                if pairs.len() != 1 {
                    return Err(malformed(line.offset, "checksum line must hold only crc32"));
                }
                let stored = u32::from_str_radix(stored, 16)
                    .map_err(|_| malformed(line.offset, format!("bad checksum `{stored}`")))?;
                let computed = crc32fast::hash(&text.as_bytes()[..line.offset]);
                if stored != computed {
                    return Err(IoError::Checksum {
                        offset: line.offset as u64,
                        stored,
                        computed,
                    });
                }
                checksum_seen = true;
            } else if !pairs.is_empty() {
                doc.headers.push((line.offset, pairs));
            }
        } else {
            doc.rows.push((line.offset, line.text.split(',').map(str::trim).collect()));
        }
    }
    if kind.checksum_required() && !checksum_seen {
        return Err(IoError::MissingChecksum {
            offset: text.len() as u64,
        });
    }
    Ok(doc)
}

fn append_checksum(mut body: String) -> String {
    let crc = crc32fast::hash(body.as_bytes());
    let _ = writeln!(body, "# crc32={crc:08x}");
    body
}

fn parse_num<T: std::str::FromStr>(s: &str, offset: usize, what: &str) -> Result<T, IoError> {
    s.parse().map_err(|_| malformed(offset, format!("bad {what} `{s}`")))
}

fn parse_reals(fields: &[&str], offset: usize) -> Result<Vec<f64>, IoError> {
    fields
        .iter()
        .map(|f| {
            let v: f64 = parse_num(f, offset, "number")?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(malformed(offset, format!("non-finite value `{f}`")))
            }
        })
        .collect()
}

struct Header<'a, 'b> {
    offset: usize,
    pairs: &'b HashMap<&'a str, &'a str>,
}

impl Header<'_, '_> {
    fn check_keys(&self, allowed: &[&str]) -> Result<(), IoError> {
        for k in self.pairs.keys() {
            if !allowed.contains(k) {
                return Err(malformed(self.offset, format!("unknown key `{k}`")));
            }
        }
        Ok(())
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, IoError> {
        self.pairs.get(key).map(|v| parse_num(v, self.offset, key)).transpose()
    }

    fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T, IoError> {
        self.get(key)?
            .ok_or_else(|| malformed(self.offset, format!("missing key `{key}`")))
    }

    fn flag(&self, key: &str) -> Result<bool, IoError> {
        match self.pairs.get(key).copied() {
            None | Some("0") | Some("false") => Ok(false),
            Some("1") | Some("true") => Ok(true),
            Some(v) => Err(malformed(self.offset, format!("bad flag {key}=`{v}`"))),
        }
    }
}

/// Fills matrix rows from `tag,i,values...` data rows.
struct RowSink {
    matrix: Matrix,
    filled: Vec<bool>,
    name: String,
}

impl RowSink {
    fn new(rows: usize, cols: usize, name: impl Into<String>) -> Self {
        Self {
            matrix: Matrix::zeros(rows, cols),
            filled: vec![false; rows],
            name: name.into(),
        }
    }

    fn put(&mut self, i: usize, values: &[f64], offset: usize) -> Result<(), IoError> {
        if i >= self.matrix.rows() {
            return Err(malformed(offset, format!("{} row {i} out of range", self.name)));
        }
        if values.len() != self.matrix.cols() {
            return Err(malformed(
                offset,
                format!("{} row has {} values, expected {}", self.name, values.len(), self.matrix.cols()),
            ));
        }
        if std::mem::replace(&mut self.filled[i], true) {
            return Err(malformed(offset, format!("duplicate {} row {i}", self.name)));
        }
        self.matrix.row_mut(i).copy_from_slice(values);
        Ok(())
    }

    fn finish(self, offset: usize) -> Result<Matrix, IoError> {
        if let Some(i) = self.filled.iter().position(|f| !f) {
            return Err(malformed(offset, format!("missing {} row {i}", self.name)));
        }
        Ok(self.matrix)
    }
}

// ---------------------------------------------------------------- binary

struct Encoder(Vec<u8>);

impl Encoder {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn reals(&mut self, v: &[f64]) {
        for x in v {
            self.f64(*x);
        }
    }

    fn finish(self, kind: Kind) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.0.len() + HEADER_LEN + 4);
        out.extend_from_slice(kind.magic());
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.0.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.0);
        out.extend_from_slice(&crc32fast::hash(&self.0).to_le_bytes());
        out
    }
}

struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Decoder<'a> {
    /// Checks the frame and returns a decoder over the payload.
    fn open(bytes: &'a [u8], kind: Kind) -> Result<Self, IoError> {
        if bytes.len() < 8 {
            return Err(IoError::Truncated {
                offset: bytes.len() as u64,
                needed: (HEADER_LEN - bytes.len()) as u64,
            });
        }
        if &bytes[..8] != kind.magic() {
            return match Kind::ALL.into_iter().find(|k| &bytes[..8] == k.magic()) {
                Some(other) => Err(IoError::WrongKind {
                    expected: kind.name(),
                    found: other.name(),
                }),
                None => Err(IoError::BadMagic { offset: 0 }),
            };
        }
        if bytes.len() < HEADER_LEN {
            return Err(IoError::Truncated {
                offset: bytes.len() as u64,
                needed: (HEADER_LEN - bytes.len()) as u64,
            });
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(IoError::UnsupportedVersion {
                found: version,
                offset: 8,
            });
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let total = (HEADER_LEN as u64).saturating_add(len).saturating_add(4);
        if (bytes.len() as u64) < total {
            return Err(IoError::Truncated {
                offset: bytes.len() as u64,
                needed: total - bytes.len() as u64,
            });
        }
        if (bytes.len() as u64) > total {
            return Err(malformed(total as usize, "trailing bytes after checksum"));
        }
        let end = HEADER_LEN + len as usize;
        let payload = &bytes[HEADER_LEN..end];
        let stored = u32::from_le_bytes(bytes[end..end + 4].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(IoError::Checksum {
                offset: end as u64,
                stored,
                computed,
            });
        }
        Ok(Self {
            buf: payload,
            pos: 0,
            base: HEADER_LEN,
        })
    }

    fn offset(&self) -> usize {
        self.base + self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let left = self.buf.len() - self.pos;
        if n > left {
            return Err(IoError::Truncated {
                offset: self.offset() as u64,
                needed: (n - left) as u64,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, IoError> {
        Ok(self.take(1)?[0])
    }

    fn flag(&mut self) -> Result<bool, IoError> {
        let at = self.offset();
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(malformed(at, format!("bad flag byte {v}"))),
        }
    }

    fn count(&mut self) -> Result<usize, IoError> {
        let at = self.offset();
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        // any count larger than the payload cannot be honest
        if v > self.buf.len() as u64 {
            return Err(malformed(at, format!("count {v} exceeds payload size")));
        }
        Ok(v as usize)
    }

    fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn reals(&mut self, n: usize) -> Result<Vec<f64>, IoError> {
        let at = self.offset();
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| malformed(at, "size overflow"))?)?;
        let v: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(malformed(at + 8 * i, "non-finite value"));
        }
        Ok(v)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix, IoError> {
        let at = self.offset();
        let n = rows.checked_mul(cols).ok_or_else(|| malformed(at, "size overflow"))?;
        Matrix::from_vec(rows, cols, self.reals(n)?).map_err(|e| malformed(at, e.to_string()))
    }

    fn finish(self) -> Result<(), IoError> {
        if self.pos != self.buf.len() {
            return Err(malformed(self.offset(), "unused payload bytes"));
        }
        Ok(())
    }
}

fn sniff_binary(bytes: &[u8]) -> bool {
    bytes.len() >= 4 && &bytes[..4] == b"SLSI"
}

fn as_text(bytes: &[u8]) -> Result<&str, IoError> {
    std::str::from_utf8(bytes).map_err(|e| malformed(e.valid_up_to(), "invalid UTF-8"))
}

// ---------------------------------------------------------------- snapshots

fn midpoint_code(rule: MidpointRule) -> u8 {
    match rule {
        MidpointRule::LinearInterpolation => 0,
        MidpointRule::ZeroOrderHold => 1,
    }
}

fn check_writable(data: &SnapshotSet) -> Result<(), IoError> {
    data.validate().map_err(|e| IoError::Invalid(e.to_string()))
}

pub fn snapshots_to_text(data: &SnapshotSet) -> Result<String, IoError> {
    check_writable(data)?;
    let mut s = format!("{}{}\n", Kind::Snapshots.text_signature(), FORMAT_VERSION);
    let _ = writeln!(s, "# n={}, traj={}", data.state_dim(), data.len());
    for (k, t) in data.trajectories.iter().enumerate() {
        let m = t.inputs.as_ref().map_or(0, InputSignal::dim);
        let _ = write!(
            s,
            "# trajectory={k}, N={}, t0={}, dt={}, m={m}, derivatives={}",
            t.samples(),
            format_f64(t.grid.t0),
            format_f64(t.grid.dt),
            u8::from(t.derivatives.is_some())
        );
        if let Some(u) = &t.inputs {
            let _ = write!(s, ", midpoint={}", u.midpoint_rule.as_str());
        }
        s.push('\n');
    }
    for (k, t) in data.trajectories.iter().enumerate() {
        for j in 0..t.samples() {
            push_row(&mut s, &format!("x,{k},{j}"), &t.states.column(j));
        }
        if let Some(u) = &t.inputs {
            for j in 0..t.samples() {
                push_row(&mut s, &format!("u,{k},{j}"), &u.samples.column(j));
            }
        }
        if let Some(d) = &t.derivatives {
            for j in 0..t.samples() {
                push_row(&mut s, &format!("d,{k},{j}"), &d.column(j));
            }
        }
    }
    Ok(append_checksum(s))
}

struct TrajectoryHeader {
    offset: usize,
    samples: usize,
    t0: f64,
    dt: f64,
    m: usize,
    derivatives: bool,
    midpoint: MidpointRule,
}

pub fn snapshots_from_text(text: &str) -> Result<SnapshotSet, IoError> {
    let doc = parse_text(text, Kind::Snapshots)?;
    let mut global: Option<(usize, usize, usize)> = None;
    let mut traj_headers: Vec<Option<TrajectoryHeader>> = Vec::new();
    for (offset, pairs) in &doc.headers {
        let h = Header {
            offset: *offset,
            pairs,
        };
        if pairs.contains_key("trajectory") {
            h.check_keys(&["trajectory", "N", "t0", "dt", "m", "derivatives", "midpoint"])?;
            let k: usize = h.require("trajectory")?;
            let samples: usize = h.require("N")?;
            if samples < 2 {
                return Err(malformed(*offset, "a trajectory needs at least 2 samples"));
            }
            let midpoint = match pairs.get("midpoint") {
                None => MidpointRule::default(),
                Some(v) => MidpointRule::parse(v).ok_or_else(|| malformed(*offset, format!("bad midpoint `{v}`")))?,
            };
            let th = TrajectoryHeader {
                offset: *offset,
                samples,
                t0: h.get("t0")?.unwrap_or(0.0),
                dt: h.require("dt")?,
                m: h.get("m")?.unwrap_or(0),
                derivatives: h.flag("derivatives")?,
                midpoint,
            };
            if k >= traj_headers.len() {
                traj_headers.resize_with(k + 1, || None);
            }
            if traj_headers[k].replace(th).is_some() {
                return Err(malformed(*offset, format!("duplicate trajectory {k}")));
            }
        } else {
            h.check_keys(&["n", "traj"])?;
            if global.is_some() {
                return Err(malformed(*offset, "duplicate dimension header"));
            }
            global = Some((*offset, h.require("n")?, h.require("traj")?));
        }
    }
    let (goff, n, count) = global.ok_or_else(|| malformed(0, "missing `n=..., traj=...` header"))?;
    if count == 0 {
        return Err(IoError::Invalid("snapshot set has no trajectories".into()));
    }
    if n == 0 {
        return Err(malformed(goff, "state dimension must be positive"));
    }
    if traj_headers.len() != count || traj_headers.iter().any(Option::is_none) {
        return Err(malformed(goff, format!("expected headers for trajectories 0..{count}")));
    }
    let headers: Vec<TrajectoryHeader> = traj_headers.into_iter().map(|h| h.expect("checked")).collect();

    // per trajectory: states, inputs, derivatives, stored as sample-major rows
    let mut sinks: Vec<[Option<RowSink>; 3]> = headers
        .iter()
        .enumerate()
        .map(|(k, h)| {
            [
                Some(RowSink::new(h.samples, n, format!("trajectory {k} state"))),
                (h.m > 0).then(|| RowSink::new(h.samples, h.m, format!("trajectory {k} input"))),
                h.derivatives
                    .then(|| RowSink::new(h.samples, n, format!("trajectory {k} derivative"))),
            ]
        })
        .collect();
    for (offset, fields) in &doc.rows {
        if fields.len() < 3 {
            return Err(malformed(*offset, "data row needs kind, trajectory and sample index"));
        }
        let slot = match fields[0] {
            "x" => 0,
            "u" => 1,
            "d" => 2,
            other => return Err(malformed(*offset, format!("unknown row kind `{other}`"))),
        };
        let k: usize = parse_num(fields[1], *offset, "trajectory index")?;
        let j: usize = parse_num(fields[2], *offset, "sample index")?;
        let sink = sinks
            .get_mut(k)
            .ok_or_else(|| malformed(*offset, format!("trajectory {k} out of range")))?[slot]
            .as_mut()
            .ok_or_else(|| malformed(*offset, format!("trajectory {k} declares no `{}` rows", fields[0])))?;
        sink.put(j, &parse_reals(&fields[3..], *offset)?, *offset)?;
    }
    let end = text.len();
    let mut trajectories = Vec::with_capacity(count);
    for (h, [x, u, d]) in headers.into_iter().zip(sinks) {
        let grid = TimeGrid::new(h.t0, h.dt, h.samples - 1).map_err(|e| malformed(h.offset, e.to_string()))?;
        let mut t = Trajectory::new(grid, x.expect("always present").finish(end)?.transpose());
        if let Some(u) = u {
            t = t.with_inputs(InputSignal::new(u.finish(end)?.transpose(), h.midpoint));
        }
        if let Some(d) = d {
            t = t.with_derivatives(d.finish(end)?.transpose());
        }
        trajectories.push(t);
    }
    SnapshotSet::new(trajectories).map_err(|e| IoError::Invalid(e.to_string()))
}

pub fn snapshots_to_bytes(data: &SnapshotSet) -> Result<Vec<u8>, IoError> {
    check_writable(data)?;
    let mut e = Encoder(Vec::new());
    e.u64(data.state_dim());
    e.u64(data.len());
    for t in &data.trajectories {
        e.u64(t.grid.steps);
        e.f64(t.grid.t0);
        e.f64(t.grid.dt);
        e.u64(t.inputs.as_ref().map_or(0, InputSignal::dim));
        e.u8(t.inputs.as_ref().map_or(0, |u| midpoint_code(u.midpoint_rule)));
        e.u8(u8::from(t.derivatives.is_some()));
    }
    for t in &data.trajectories {
        e.reals(t.states.as_slice());
        if let Some(u) = &t.inputs {
            e.reals(u.samples.as_slice());
        }
        if let Some(d) = &t.derivatives {
            e.reals(d.as_slice());
        }
    }
    Ok(e.finish(Kind::Snapshots))
}

pub fn snapshots_from_bytes(bytes: &[u8]) -> Result<SnapshotSet, IoError> {
    let mut d = Decoder::open(bytes, Kind::Snapshots)?;
    let n = d.count()?;
    let count = d.count()?;
    if count == 0 {
        return Err(IoError::Invalid("snapshot set has no trajectories".into()));
    }
    let mut headers = Vec::with_capacity(count);
    for _ in 0..count {
        let at = d.offset();
        let steps = d.count()?;
        let t0 = d.f64()?;
        let dt = d.f64()?;
        let m = d.count()?;
        let rule_at = d.offset();
        let rule = match d.u8()? {
            0 => MidpointRule::LinearInterpolation,
            1 => MidpointRule::ZeroOrderHold,
            v => return Err(malformed(rule_at, format!("bad midpoint code {v}"))),
        };
        let deriv = d.flag()?;
        let grid = TimeGrid::new(t0, dt, steps).map_err(|e| malformed(at, e.to_string()))?;
        headers.push((grid, m, rule, deriv));
    }
    let mut trajectories = Vec::with_capacity(count);
    for (grid, m, rule, deriv) in headers {
        let nodes = grid.nodes();
        let mut t = Trajectory::new(grid, d.matrix(n, nodes)?);
        if m > 0 {
            t = t.with_inputs(InputSignal::new(d.matrix(m, nodes)?, rule));
        }
        if deriv {
            t = t.with_derivatives(d.matrix(n, nodes)?);
        }
        trajectories.push(t);
    }
    d.finish()?;
    SnapshotSet::new(trajectories).map_err(|e| IoError::Invalid(e.to_string()))
}

// ---------------------------------------------------------------- models

fn push_matrix(s: &mut String, tag: &str, m: &Matrix) {
    for i in 0..m.rows() {
        push_row(s, &format!("{tag},{i}"), m.row(i));
    }
}

pub fn model_to_text(stored: &StoredModel) -> Result<String, IoError> {
    stored.validate()?;
    let m = &stored.model;
    let mut s = format!("{}{}\n", Kind::Model.text_signature(), FORMAT_VERSION);
    let _ = writeln!(
        s,
        "# n={}, m={}, provenance={}",
        m.state_dim(),
        m.input_dim(),
        m.provenance.as_str()
    );
    push_matrix(&mut s, "A", &m.a);
    if let Some(b) = &m.b {
        push_matrix(&mut s, "B", b);
    }
    if let Some(p) = &stored.params {
        push_matrix(&mut s, "Jbar", &p.jbar);
        push_matrix(&mut s, "Rbar", &p.rbar);
        push_matrix(&mut s, "Qbar", &p.qbar);
        if let Some(b) = &p.bbar {
            push_matrix(&mut s, "Bbar", b);
        }
    }
    Ok(append_checksum(s))
}

fn single_header<'a, 'b>(doc: &'b TextDoc<'a>, keys: &[&str]) -> Result<Header<'a, 'b>, IoError> {
    match doc.headers.as_slice() {
        [(offset, pairs)] => {
            let h = Header {
                offset: *offset,
                pairs,
            };
            h.check_keys(keys)?;
            Ok(h)
        }
        [] => Err(malformed(0, "missing header line")),
        [_, (offset, _), ..] => Err(malformed(*offset, "unexpected extra header line")),
    }
}

pub fn model_from_text(text: &str) -> Result<StoredModel, IoError> {
    let doc = parse_text(text, Kind::Model)?;
    let h = single_header(&doc, &["n", "m", "provenance"])?;
    let n: usize = h.require("n")?;
    let m: usize = h.get("m")?.unwrap_or(0);
    if n == 0 {
        return Err(malformed(h.offset, "state dimension must be positive"));
    }
    let prov_str: String = h.require("provenance")?;
    let provenance =
        Provenance::parse(&prov_str).ok_or_else(|| malformed(h.offset, format!("unknown provenance `{prov_str}`")))?;
    let stable = provenance == Provenance::StableParameterized;
    let mut sinks: HashMap<&str, RowSink> = HashMap::new();
    sinks.insert("A", RowSink::new(n, n, "A"));
    if m > 0 {
        sinks.insert("B", RowSink::new(n, m, "B"));
    }
    if stable {
        for tag in ["Jbar", "Rbar", "Qbar"] {
            sinks.insert(tag, RowSink::new(n, n, tag));
        }
        if m > 0 {
            sinks.insert("Bbar", RowSink::new(n, m, "Bbar"));
        }
    }
    for (offset, fields) in &doc.rows {
        if fields.len() < 2 {
            return Err(malformed(*offset, "data row needs a tag and a row index"));
        }
        let sink = sinks
            .get_mut(fields[0])
            .ok_or_else(|| malformed(*offset, format!("unexpected row tag `{}`", fields[0])))?;
        let i: usize = parse_num(fields[1], *offset, "row index")?;
        sink.put(i, &parse_reals(&fields[2..], *offset)?, *offset)?;
    }
    let end = text.len();
    let mut take = |tag: &str| sinks.remove(tag).map(|s| s.finish(end)).transpose();
    let a = take("A")?.expect("inserted");
    let b = take("B")?;
    let params = if stable {
        Some(StableParams {
            jbar: take("Jbar")?.expect("inserted"),
            rbar: take("Rbar")?.expect("inserted"),
            qbar: take("Qbar")?.expect("inserted"),
            bbar: take("Bbar")?,
        })
    } else {
        None
    };
    let stored = StoredModel {
        model: LinearModel { a, b, provenance },
        params,
    };
    stored.validate()?;
    stored.check_consistency(h.offset)?;
    Ok(stored)
}

pub fn model_to_bytes(stored: &StoredModel) -> Result<Vec<u8>, IoError> {
    stored.validate()?;
    let m = &stored.model;
    let mut e = Encoder(Vec::new());
    e.u8(match m.provenance {
        Provenance::StableParameterized => 0,
        Provenance::Unconstrained => 1,
    });
    e.u64(m.state_dim());
    e.u64(m.input_dim());
    e.reals(m.a.as_slice());
    if let Some(b) = &m.b {
        e.reals(b.as_slice());
    }
    if let Some(p) = &stored.params {
        e.reals(p.jbar.as_slice());
        e.reals(p.rbar.as_slice());
        e.reals(p.qbar.as_slice());
        if let Some(b) = &p.bbar {
            e.reals(b.as_slice());
        }
    }
    Ok(e.finish(Kind::Model))
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<StoredModel, IoError> {
    let mut d = Decoder::open(bytes, Kind::Model)?;
    let at = d.offset();
    let provenance = match d.u8()? {
        0 => Provenance::StableParameterized,
        1 => Provenance::Unconstrained,
        v => return Err(malformed(at, format!("bad provenance code {v}"))),
    };
    let n = d.count()?;
    let m = d.count()?;
    if n == 0 {
        return Err(malformed(at + 1, "state dimension must be positive"));
    }
    let a = d.matrix(n, n)?;
    let b = if m > 0 { Some(d.matrix(n, m)?) } else { None };
    let params = if provenance == Provenance::StableParameterized {
        Some(StableParams {
            jbar: d.matrix(n, n)?,
            rbar: d.matrix(n, n)?,
            qbar: d.matrix(n, n)?,
            bbar: if m > 0 { Some(d.matrix(n, m)?) } else { None },
        })
    } else {
        None
    };
    d.finish()?;
    let stored = StoredModel {
        model: LinearModel { a, b, provenance },
        params,
    };
    stored.validate()?;
    stored.check_consistency(at)?;
    Ok(stored)
}

// ---------------------------------------------------------------- bases

fn check_basis(b: &PodBasis) -> Result<(), IoError> {
    let bad = |s: &str| Err(IoError::Invalid(s.into()));
    if b.r == 0 || b.ur.cols() != b.r || b.r > b.sigma_all.len() {
        return bad("basis rank is inconsistent with its columns or singular values");
    }
    if b.center.as_ref().is_some_and(|c| c.len() != b.ur.rows()) {
        return bad("center length differs from the basis row count");
    }
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if !finite(&b.sigma_all) || !finite(&[b.energy_captured, b.tail_bound]) || !b.ur.is_finite() {
        return bad("basis contains non-finite values");
    }
    Ok(())
}

pub fn basis_to_text(b: &PodBasis) -> Result<String, IoError> {
    check_basis(b)?;
    let mut s = format!("{}{}\n", Kind::Basis.text_signature(), FORMAT_VERSION);
    let _ = writeln!(
        s,
        "# n={}, r={}, sigmas={}, centered={}, energy={}, tail={}",
        b.ur.rows(),
        b.r,
        b.sigma_all.len(),
        u8::from(b.center.is_some()),
        format_f64(b.energy_captured),
        format_f64(b.tail_bound)
    );
    push_row(&mut s, "sigma", &b.sigma_all);
    push_matrix(&mut s, "U", &b.ur);
    if let Some(c) = &b.center {
        push_row(&mut s, "center", c);
    }
    Ok(append_checksum(s))
}

pub fn basis_from_text(text: &str) -> Result<PodBasis, IoError> {
    let doc = parse_text(text, Kind::Basis)?;
    let h = single_header(&doc, &["n", "r", "sigmas", "centered", "energy", "tail"])?;
    let n: usize = h.require("n")?;
    let r: usize = h.require("r")?;
    let k: usize = h.require("sigmas")?;
    let centered = h.flag("centered")?;
    let energy_captured: f64 = h.require("energy")?;
    let tail_bound: f64 = h.require("tail")?;
    let mut sigma = None;
    let mut center = None;
    let mut u = RowSink::new(n, r, "U");
    for (offset, fields) in &doc.rows {
        match fields[0] {
            "sigma" if sigma.is_none() => {
                let v = parse_reals(&fields[1..], *offset)?;
                if v.len() != k {
                    return Err(malformed(*offset, format!("{} singular values, expected {k}", v.len())));
                }
                sigma = Some(v);
            }
            "center" if centered && center.is_none() => {
                let v = parse_reals(&fields[1..], *offset)?;
                if v.len() != n {
                    return Err(malformed(*offset, format!("center has {} values, expected {n}", v.len())));
                }
                center = Some(v);
            }
            "U" if fields.len() >= 2 => {
                let i: usize = parse_num(fields[1], *offset, "row index")?;
                u.put(i, &parse_reals(&fields[2..], *offset)?, *offset)?;
            }
            other => return Err(malformed(*offset, format!("unexpected row `{other}`"))),
        }
    }
    let end = text.len();
    let basis = PodBasis {
        ur: u.finish(end)?,
        sigma_all: sigma.ok_or_else(|| malformed(end, "missing sigma row"))?,
        r,
        energy_captured,
        tail_bound,
        center: match (centered, center) {
            (true, None) => return Err(malformed(end, "missing center row")),
            (_, c) => c,
        },
    };
    check_basis(&basis)?;
    Ok(basis)
}

pub fn basis_to_bytes(b: &PodBasis) -> Result<Vec<u8>, IoError> {
    check_basis(b)?;
    let mut e = Encoder(Vec::new());
    e.u64(b.ur.rows());
    e.u64(b.r);
    e.u64(b.sigma_all.len());
    e.f64(b.energy_captured);
    e.f64(b.tail_bound);
    e.u8(u8::from(b.center.is_some()));
    e.reals(&b.sigma_all);
    e.reals(b.ur.as_slice());
    if let Some(c) = &b.center {
        e.reals(c);
    }
    Ok(e.finish(Kind::Basis))
}

pub fn basis_from_bytes(bytes: &[u8]) -> Result<PodBasis, IoError> {
    let mut d = Decoder::open(bytes, Kind::Basis)?;
    let n = d.count()?;
    let r = d.count()?;
    let k = d.count()?;
    let energy_captured = d.f64()?;
    let tail_bound = d.f64()?;
    let centered = d.flag()?;
    let sigma_all = d.reals(k)?;
    let ur = d.matrix(n, r)?;
    let center = if centered { Some(d.reals(n)?) } else { None };
    d.finish()?;
    let basis = PodBasis {
        ur,
        sigma_all,
        r,
        energy_captured,
        tail_bound,
        center,
    };
    check_basis(&basis)?;
    Ok(basis)
}

// ---------------------------------------------------------------- paths

fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let err = |source| IoError::File {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(err)?;
    std::fs::rename(&tmp, path).map_err(err)
}

fn decode<T>(
    bytes: &[u8],
    bin: impl FnOnce(&[u8]) -> Result<T, IoError>,
    text: impl FnOnce(&str) -> Result<T, IoError>,
) -> Result<T, IoError> {
    if sniff_binary(bytes) {
        bin(bytes)
    } else {
        text(as_text(bytes)?)
    }
}

pub fn write_snapshots(data: &SnapshotSet, path: &Path) -> Result<(), IoError> {
    let bytes = match Format::from_path(path) {
        Format::Binary => snapshots_to_bytes(data)?,
        Format::Text => snapshots_to_text(data)?.into_bytes(),
    };
    write_file(path, &bytes)
}

pub fn read_snapshots(path: &Path) -> Result<SnapshotSet, IoError> {
    decode(&read_file(path)?, snapshots_from_bytes, snapshots_from_text)
}

pub fn write_model(stored: &StoredModel, path: &Path) -> Result<(), IoError> {
    let bytes = match Format::from_path(path) {
        Format::Binary => model_to_bytes(stored)?,
        Format::Text => model_to_text(stored)?.into_bytes(),
    };
    write_file(path, &bytes)
}

pub fn read_model(path: &Path) -> Result<StoredModel, IoError> {
    decode(&read_file(path)?, model_from_bytes, model_from_text)
}

pub fn write_basis(basis: &PodBasis, path: &Path) -> Result<(), IoError> {
    let bytes = match Format::from_path(path) {
        Format::Binary => basis_to_bytes(basis)?,
        Format::Text => basis_to_text(basis)?.into_bytes(),
    };
    write_file(path, &bytes)
}

pub fn read_basis(path: &Path) -> Result<PodBasis, IoError> {
    decode(&read_file(path)?, basis_from_bytes, basis_from_text)
}

// ---------------------------------------------------------------- reports

/// `update,lr,loss` rows for the recorded updates.
pub fn loss_history_csv(report: &LossReport) -> String {
    let mut s = String::from("update,lr,loss\n");
    for (i, (lr, loss)) in report.learning_rates.iter().zip(&report.losses).enumerate() {
        let _ = writeln!(s, "{i},{},{}", format_f64(*lr), format_f64(*loss));
    }
    s
}

/// One row per eigenvalue, sorted by real part, plus the largest real part
/// on every row.
pub fn eigen_report_csv(spectrum: &Spectrum) -> String {
    let mut s = String::from("index,re,im,max_re\n");
    let max_re = format_f64(spectrum.max_real());
    for (i, l) in spectrum.sorted().iter().enumerate() {
        let _ = writeln!(s, "{i},{},{},{max_re}", format_f64(l.re), format_f64(l.im));
    }
    s
}
