//! Binary dataset files (`HMDS`) and their plain-text metadata sidecars.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "HMDS" | version u32 | kind u32 | N u64 | K u64 | N_RF u64 | count u64
//!        | snr_db f64 | flags u32
//! pilots:       row_dim u64 | received f64[count * row_dim] | truth f64[count * 2N]?
//! correlation:  method u32 | quadrature u64 | carrier_hz f64 | spacing_m f64
//!               | entries f64[N * N * 2], row-major, interleaved re/im
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use hmimo_core::channel::PilotBatch;
use hmimo_core::correlation::{ArrayGeometry, CorrelationMatrix, CorrelationMethod};
use hmimo_core::linalg::{CMatrix, C64};

pub const MAGIC: &[u8; 4] = b"HMDS";
pub const VERSION: u32 = 1;
const FLAG_TRUTH: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Pilots = 1,
    Correlation = 2,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("not an HMDS file")]
    BadMagic,
    #[error("unsupported HMDS version {0}")]
    Version(u32),
    #[error("expected a {expected:?} dataset, found kind {found}")]
    WrongKind { expected: Kind, found: u32 },
    #[error("malformed dataset: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub kind: u32,
    pub n_antennas: usize,
    pub n_slots: usize,
    pub n_rf: usize,
    pub count: usize,
    pub snr_db: f64,
    pub has_truth: bool,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.0.reserve(vs.len() * 8);
        vs.iter().for_each(|&v| self.f64(v));
    }
    fn header(&mut self, h: &Header) {
        self.0.extend_from_slice(MAGIC);
        self.u32(VERSION);
        self.u32(h.kind);
        self.u64(h.n_antennas);
        self.u64(h.n_slots);
        self.u64(h.n_rf);
        self.u64(h.count);
        self.f64(h.snr_db);
        self.u32(if h.has_truth { FLAG_TRUTH } else { 0 });
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| DatasetError::Malformed("unexpected end of file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| DatasetError::Malformed(format!("size {v} out of range")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| DatasetError::Malformed("payload too large".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn header(&mut self) -> Result<Header> {
        if self.take(4)? != MAGIC {
            return Err(DatasetError::BadMagic);
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(DatasetError::Version(version));
        }
        Ok(Header {
            kind: self.u32()?,
            n_antennas: self.u64()?,
            n_slots: self.u64()?,
            n_rf: self.u64()?,
            count: self.u64()?,
            snr_db: self.f64()?,
            has_truth: self.u32()? & FLAG_TRUTH != 0,
        })
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(DatasetError::Malformed(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(io_err(path))?;
    Ok(buf)
}

/// Pilot file contents together with the acquisition shape.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotFile {
    pub header: Header,
    pub batch: PilotBatch,
}

pub fn encode_pilots(batch: &PilotBatch, n_antennas: usize, n_slots: usize, n_rf: usize) -> Vec<u8> {
    let header = Header {
        kind: Kind::Pilots as u32,
        n_antennas,
        n_slots,
        n_rf,
        count: batch.count(),
        snr_db: batch.snr_db,
        has_truth: batch.has_truth(),
    };
    let mut w = Writer(Vec::with_capacity(64 + 8 * (batch.received.len() + batch.truth.len())));
    w.header(&header);
    w.u64(batch.output_dim);
    w.f64s(&batch.received);
    w.f64s(&batch.truth);
    w.0
}

pub fn decode_pilots(bytes: &[u8]) -> Result<PilotFile> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let header = r.header()?;
    if header.kind != Kind::Pilots as u32 {
        return Err(DatasetError::WrongKind {
            expected: Kind::Pilots,
            found: header.kind,
        });
    }
    let row_dim = r.u64()?;
    let received = r.f64s(header.count * row_dim)?;
    let channel_dim = 2 * header.n_antennas;
    let truth = if header.has_truth {
        r.f64s(header.count * channel_dim)?
    } else {
        Vec::new()
    };
    r.finish()?;
    let batch = PilotBatch {
        received,
        truth,
        output_dim: row_dim,
        channel_dim,
        true_noise_std: hmimo_core::channel::real_noise_std(header.snr_db),
        snr_db: header.snr_db,
        seed: 0,
    };
    Ok(PilotFile { header, batch })
}

pub fn write_pilots(path: &Path, batch: &PilotBatch, n_antennas: usize, n_slots: usize, n_rf: usize) -> Result<()> {
    write_file(path, &encode_pilots(batch, n_antennas, n_slots, n_rf))
}

/// Reads a pilot file, taking the noise level and seed from the sidecar when present.
pub fn read_pilots(path: &Path) -> Result<PilotFile> {
    let mut file = decode_pilots(&read_file(path)?)?;
    if let Ok(meta) = Metadata::read(&sidecar_path(path)) {
        if let Some(s) = meta.get_f64("true_noise_std") {
            file.batch.true_noise_std = s;
        }
        if let Some(seed) = meta.get("noise_seed").and_then(|s| s.parse().ok()) {
            file.batch.seed = seed;
        }
    }
    Ok(file)
}

pub fn encode_correlation(r: &CorrelationMatrix) -> Vec<u8> {
    let n = r.dim();
    let header = Header {
        kind: Kind::Correlation as u32,
        n_antennas: n,
        n_slots: 0,
        n_rf: 0,
        count: 1,
        snr_db: f64::NAN,
        has_truth: false,
    };
    let mut w = Writer(Vec::with_capacity(96 + 16 * n * n));
    w.header(&header);
    w.u32(r.method.code());
    w.u64(r.quadrature_points);
    w.f64(r.geometry.carrier_freq_hz);
    w.f64(r.geometry.antenna_spacing_m);
    for i in 0..n {
        for j in 0..n {
            let z = r.entries[(i, j)];
            w.f64(z.re);
            w.f64(z.im);
        }
    }
    w.0
}

pub fn decode_correlation(bytes: &[u8]) -> Result<CorrelationMatrix> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let header = r.header()?;
    if header.kind != Kind::Correlation as u32 {
        return Err(DatasetError::WrongKind {
            expected: Kind::Correlation,
            found: header.kind,
        });
    }
    let code = r.u32()?;
    let method = CorrelationMethod::from_code(code)
        .ok_or_else(|| DatasetError::Malformed(format!("unknown correlation method {code}")))?;
    let quadrature_points = r.u64()?;
    let carrier = r.f64()?;
    let spacing = r.f64()?;
    let n = header.n_antennas;
    let geometry = ArrayGeometry::new(n, carrier, spacing).map_err(|e| DatasetError::Malformed(e.to_string()))?;
    let flat = r.f64s(2 * n * n)?;
    r.finish()?;
    let entries = CMatrix::from_fn(n, n, |i, j| {
        let k = 2 * (i * n + j);
        C64::new(flat[k], flat[k + 1])
    });
    Ok(CorrelationMatrix {
        entries,
        geometry,
        method,
        quadrature_points,
    })
}

pub fn write_correlation(path: &Path, r: &CorrelationMatrix) -> Result<()> {
    write_file(path, &encode_correlation(r))
}

pub fn read_correlation(path: &Path) -> Result<CorrelationMatrix> {
    decode_correlation(&read_file(path)?)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Ordered `key=value` metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata(pub BTreeMap<String, String>);

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.0.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
                .filter_map(|l| l.split_once('='))
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .collect(),
        )
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.render().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        Ok(Self::parse(&String::from_utf8_lossy(&bytes)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hmimo_core::correlation::build_ff_iso;

    fn batch(truth: bool) -> PilotBatch {
        PilotBatch {
            received: (0..24).map(|i| i as f64 * 0.5).collect(),
            truth: if truth { (0..24).map(|i| -(i as f64)).collect() } else { vec![] },
            output_dim: 8,
            channel_dim: 8,
            true_noise_std: hmimo_core::channel::real_noise_std(10.0),
            snr_db: 10.0,
            seed: 0,
        }
    }

    #[test]
    fn pilots_round_trip() {
        for truth in [true, false] {
            let b = batch(truth);
            let file = decode_pilots(&encode_pilots(&b, 4, 1, 4)).unwrap();
            assert_eq!(file.batch, b);
            assert_eq!(file.header.count, 3);
            assert_eq!(file.header.has_truth, truth);
        }
    }

    #[test]
    fn correlation_round_trip() {
        let geom = ArrayGeometry::table_one(9).unwrap();
        let r = build_ff_iso(&geom);
        let back = decode_correlation(&encode_correlation(&r)).unwrap();
        assert_eq!(back.entries, r.entries);
        assert_eq!(back.method, r.method);
        assert_eq!(back.geometry, r.geometry);
    }

    #[test]
    fn rejects_corrupt_files() {
        let mut bytes = encode_pilots(&batch(true), 4, 1, 4);
        assert!(matches!(decode_pilots(&bytes[..bytes.len() - 1]), Err(DatasetError::Malformed(_))));
        bytes[0] = b'X';
        assert!(matches!(decode_pilots(&bytes), Err(DatasetError::BadMagic)));
        let r = encode_correlation(&build_ff_iso(&ArrayGeometry::table_one(4).unwrap()));
        assert!(matches!(decode_pilots(&r), Err(DatasetError::WrongKind { .. })));
    }

    #[test]
    fn metadata_round_trip() {
        let mut m = Metadata::new();
        m.set("seed", 7).set("true_noise_std", 0.25);
        let back = Metadata::parse(&m.render());
        assert_eq!(back, m);
        assert_eq!(back.get_f64("true_noise_std"), Some(0.25));
    }
}
