//! On-disk formats for traces, windows, features, signatures and cluster
//! output.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conditioning::{RawTrace, Window};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::topology::TopoSignature;

pub const TRACE_MAGIC: &[u8; 4] = b"PPGT";
pub const WINDOWS_MAGIC: &[u8; 4] = b"PPGW";
pub const FEATURES_MAGIC: &[u8; 4] = b"PGFE";
pub const SIGNATURES_MAGIC: &[u8; 4] = b"PGTS";
const VERSION: u32 = 1;

fn format_err(what: &'static str, detail: impl Into<String>) -> Error {
    Error::Format { what, detail: detail.into() }
}

/// Reads a file that a previous stage must have produced.
pub fn read_artifact(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// Little-endian cursor over a byte slice.
struct Reader<'a> {
    bytes: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(format_err(self.what, "truncated"));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(format_err(self.what, "bad magic"));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(format_err(self.what, format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// `count` values of `width` bytes, checked against the remaining length
    /// before anything is allocated.
    fn block(&mut self, count: u64, width: usize) -> Result<&'a [u8]> {
        let len = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(width))
            .ok_or_else(|| format_err(self.what, "length overflow"))?;
        self.take(len)
    }

    fn finish(&self) -> Result<()> {
        if !self.bytes.is_empty() {
            return Err(format_err(self.what, "trailing bytes"));
        }
        Ok(())
    }
}

fn f32s(block: &[u8]) -> impl Iterator<Item = f64> + '_ {
    block.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
}

fn f64s(block: &[u8]) -> impl Iterator<Item = f64> + '_ {
    block.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "trace".into(), |s| s.to_string_lossy().into_owned())
}

/// Text trace: `# source_id=..`, `# fs_hz=..`, then one sample per line.
/// An empty sample list is allowed here; the conditioning chain decides
/// what to do with it.
pub fn parse_trace_csv(text: &str, fallback_id: &str) -> Result<RawTrace> {
    let mut source_id = None;
    let mut fs_hz = None;
    let mut samples = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            let (key, value) = meta
                .split_once('=')
                .ok_or_else(|| format_err("trace", format!("line {}: malformed header", n + 1)))?;
            match key.trim() {
                "source_id" => source_id = Some(value.trim().to_string()),
                "fs_hz" => {
                    let fs: f64 = value
                        .trim()
                        .parse()
                        .map_err(|_| format_err("trace", format!("line {}: bad fs_hz", n + 1)))?;
                    fs_hz = Some(fs);
                }
                _ => {}
            }
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| format_err("trace", format!("line {}: not a number: {line:?}", n + 1)))?;
        if !v.is_finite() {
            return Err(format_err("trace", format!("line {}: non-finite sample", n + 1)));
        }
        samples.push(v);
    }
    let fs_hz = fs_hz.ok_or_else(|| format_err("trace", "missing `# fs_hz=` header"))?;
    if !(fs_hz.is_finite() && fs_hz > 0.0) {
        return Err(format_err("trace", "fs_hz must be positive"));
    }
    Ok(RawTrace {
        samples,
        fs_hz,
        source_id: source_id.unwrap_or_else(|| fallback_id.to_string()),
    })
}

pub fn parse_trace_bin(bytes: &[u8], source_id: &str) -> Result<RawTrace> {
    let mut r = Reader { bytes, what: "trace" };
    r.magic(TRACE_MAGIC)?;
    let fs_hz = r.f64()?;
    if !(fs_hz.is_finite() && fs_hz > 0.0) {
        return Err(format_err("trace", "fs_hz must be positive"));
    }
    let count = r.u64()?;
    let samples: Vec<f64> = f32s(r.block(count, 4)?).collect();
    r.finish()?;
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(format_err("trace", "non-finite sample"));
    }
    Ok(RawTrace {
        samples,
        fs_hz,
        source_id: source_id.to_string(),
    })
}

/// Reads either trace format, chosen by the leading magic bytes.
pub fn read_trace(path: &Path) -> Result<RawTrace> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(TRACE_MAGIC) {
        parse_trace_bin(&bytes, &stem(path))
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|_| format_err("trace", "neither PPGT nor UTF-8 text"))?;
        parse_trace_csv(text, &stem(path))
    }
}

pub fn write_trace_csv(path: &Path, trace: &RawTrace) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# source_id={}", trace.source_id)?;
    writeln!(w, "# fs_hz={}", trace.fs_hz)?;
    for v in &trace.samples {
        writeln!(w, "{v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_bin(path: &Path, trace: &RawTrace) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TRACE_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&trace.fs_hz.to_le_bytes())?;
    w.write_all(&(trace.samples.len() as u64).to_le_bytes())?;
    for &v in &trace.samples {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct WindowIndexRow {
    window_id: usize,
    source_id: String,
    start_index: usize,
    degenerate: u8,
}

/// Window samples are stored as f32, so a round trip rounds them.
pub fn write_windows(bin_path: &Path, index_path: &Path, windows: &[Window], win_len: usize) -> Result<()> {
    if let Some(w) = windows.iter().find(|w| w.samples.len() != win_len) {
        return Err(Error::Parameter(format!(
            "window {}@{} has {} samples, expected {win_len}",
            w.source_id,
            w.start_index,
            w.samples.len()
        )));
    }
    let mut w = BufWriter::new(File::create(bin_path)?);
    w.write_all(WINDOWS_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(win_len as u32).to_le_bytes())?;
    w.write_all(&(windows.len() as u64).to_le_bytes())?;
    for win in windows {
        for &v in &win.samples {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;

    let mut csv = csv::Writer::from_path(index_path).map_err(csv_err)?;
    for (i, win) in windows.iter().enumerate() {
        csv.serialize(WindowIndexRow {
            window_id: i,
            source_id: win.source_id.clone(),
            start_index: win.start_index,
            degenerate: u8::from(win.degenerate),
        })
        .map_err(csv_err)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn parse_windows_bin(bytes: &[u8]) -> Result<(usize, Vec<Vec<f64>>)> {
    let mut r = Reader { bytes, what: "windows" };
    r.magic(WINDOWS_MAGIC)?;
    let win_len = r.u32()? as usize;
    let count = r.u64()?;
    let block = r.block(count, 4 * win_len)?;
    r.finish()?;
    let rows = if win_len == 0 {
        vec![Vec::new(); count as usize]
    } else {
        block.chunks_exact(4 * win_len).map(|c| f32s(c).collect()).collect()
    };
    Ok((win_len, rows))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => format_err("csv", format!("{other:?}")),
    }
}

pub fn read_windows(bin_path: &Path, index_path: &Path) -> Result<Vec<Window>> {
    let (_, rows) = parse_windows_bin(&read_artifact(bin_path)?)?;
    let index = read_artifact(index_path)?;
    let mut reader = csv::Reader::from_reader(index.as_slice());
    let meta: Vec<WindowIndexRow> = reader.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err)?;
    if meta.len() != rows.len() {
        return Err(format_err(
            "windows",
            format!("index lists {} windows, data holds {}", meta.len(), rows.len()),
        ));
    }
    meta.into_iter()
        .zip(rows)
        .enumerate()
        .map(|(i, (m, samples))| {
            if m.window_id != i {
                return Err(format_err("windows", format!("index row {i} has window_id {}", m.window_id)));
            }
            Ok(Window {
                samples,
                source_id: m.source_id,
                start_index: m.start_index,
                degenerate: m.degenerate != 0,
            })
        })
        .collect()
}

/// Backbone features of the non-degenerate windows, keyed by window id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub window_ids: Vec<u64>,
    pub features: Matrix,
}

pub fn write_features(path: &Path, f: &FeatureFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FEATURES_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(f.features.cols() as u32).to_le_bytes())?;
    w.write_all(&(f.features.rows() as u64).to_le_bytes())?;
    for (id, row) in f.window_ids.iter().zip(f.features.iter_rows()) {
        w.write_all(&id.to_le_bytes())?;
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureFile> {
    let bytes = read_artifact(path)?;
    let mut r = Reader { bytes: &bytes, what: "features" };
    r.magic(FEATURES_MAGIC)?;
    let dim = r.u32()? as usize;
    let count = r.u64()?;
    let block = r.block(count, 8 * (dim + 1))?;
    r.finish()?;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for row in block.chunks_exact(8 * (dim + 1)) {
        ids.push(u64::from_le_bytes(row[..8].try_into().expect("8 bytes")));
        data.extend(f64s(&row[8..]));
    }
    Ok(FeatureFile {
        window_ids: ids,
        features: Matrix::from_vec(count as usize, dim, data)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignatureRow {
    pub window_id: u64,
    #[serde(rename = "n_H1")]
    pub n_h1: usize,
    #[serde(rename = "sum_H1")]
    pub sum_h1: f64,
    #[serde(rename = "max_H0")]
    pub max_h0: f64,
    #[serde(rename = "mean_H0")]
    pub mean_h0: f64,
}

impl SignatureRow {
    pub fn new(window_id: u64, s: &TopoSignature) -> Self {
        Self {
            window_id,
            n_h1: s.n_h1,
            sum_h1: s.sum_h1,
            max_h0: s.max_h0,
            mean_h0: s.mean_h0,
        }
    }

    pub fn signature(&self) -> TopoSignature {
        TopoSignature {
            n_h1: self.n_h1,
            sum_h1: self.sum_h1,
            max_h0: self.max_h0,
            mean_h0: self.mean_h0,
        }
    }
}

pub fn write_signatures_csv(path: &Path, rows: &[SignatureRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_signatures_csv(path: &Path) -> Result<Vec<SignatureRow>> {
    let bytes = read_artifact(path)?;
    csv::Reader::from_reader(bytes.as_slice())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)
}

/// `PGTS`: u32 version, u64 count, then per row u64 window id, u64 n_H1 and
/// three f64 values.
pub fn write_signatures_bin(path: &Path, rows: &[SignatureRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SIGNATURES_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(rows.len() as u64).to_le_bytes())?;
    for r in rows {
        w.write_all(&r.window_id.to_le_bytes())?;
        w.write_all(&(r.n_h1 as u64).to_le_bytes())?;
        for v in [r.sum_h1, r.max_h0, r.mean_h0] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_signatures_bin(path: &Path) -> Result<Vec<SignatureRow>> {
    let bytes = read_artifact(path)?;
    let mut r = Reader { bytes: &bytes, what: "signatures" };
    r.magic(SIGNATURES_MAGIC)?;
    let count = r.u64()?;
    let block = r.block(count, 40)?;
    r.finish()?;
    Ok(block
        .chunks_exact(40)
        .map(|c| {
            let mut vals = f64s(&c[16..]);
            SignatureRow {
                window_id: u64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                n_h1: u64::from_le_bytes(c[8..16].try_into().expect("8 bytes")) as usize,
                sum_h1: vals.next().expect("three values"),
                max_h0: vals.next().expect("three values"),
                mean_h0: vals.next().expect("three values"),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub window_id: u64,
    pub label: i64,
    pub sqi: u8,
    pub core_distance: Option<f64>,
}

pub fn write_cluster_csv(path: &Path, rows: &[ClusterRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cluster_csv(path: &Path) -> Result<Vec<ClusterRow>> {
    let bytes = read_artifact(path)?;
    csv::Reader::from_reader(bytes.as_slice())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub window_id: u64,
    pub truth: u8,
}

pub fn write_truth_csv(path: &Path, truth: &[u8]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for (i, &t) in truth.iter().enumerate() {
        w.serialize(TruthRow { window_id: i as u64, truth: t }).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth_csv(path: &Path) -> Result<Vec<TruthRow>> {
    let bytes = read_artifact(path)?;
    csv::Reader::from_reader(bytes.as_slice())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&read_artifact(path)?)?)
}
