//! On-disk formats.
//!
//! Binary files are little-endian with a four-byte magic and a `u32` format
//! version. Text files are CSV (plot data) or TOML (specs and reports).
//! Every write goes to a temporary sibling first and is renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array3};
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::channel::{CsiDataset, ScenarioSpec, SpatialPointSet};
use crate::charting::{Activation, AutoencoderParams, ChannelChart, Diagnostics, Layer};
use crate::error::{Error, Result};
use crate::features::{Domain, FeatureConfig, FeatureSet, Transform};
use crate::metrics::QualityReport;

pub const DATASET_MAGIC: &[u8; 4] = b"CCDS";
pub const FEATURES_MAGIC: &[u8; 4] = b"CCFS";
pub const PARAMS_MAGIC: &[u8; 4] = b"CCAE";
pub const FORMAT_VERSION: u32 = 1;

const LAYER_TAG: &[u8; 4] = b"LAYR";

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(&tmp, e));
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn new(magic: &[u8; 4]) -> Self {
        let mut buf = magic.to_vec();
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        Self { buf }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u64(&mut self, v: usize) {
        self.buf.extend_from_slice(&(v as u64).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for &v in vs {
            self.f64(v);
        }
    }
}

struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
    path: &'a Path,
}

impl<'a> Decoder<'a> {
    fn new(buf: &'a [u8], magic: &[u8; 4], what: &'static str, path: &'a Path) -> Result<Self> {
        let mut d = Self {
            buf,
            pos: 0,
            what,
            path,
        };
        if d.take(4)? != magic {
            return Err(d.err(format!("bad magic, expected {:?}", String::from_utf8_lossy(magic))));
        }
        let version = d.u32()?;
        if version != FORMAT_VERSION {
            return Err(d.err(format!("unsupported format version {version}")));
        }
        Ok(d)
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::format(self.what, self.path, message)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        };
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| self.err(format!("size {v} does not fit in memory")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// Reads `count` floats after checking that enough bytes remain.
    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = count
            .checked_mul(8)
            .ok_or_else(|| self.err("element count overflows"))?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn to_toml<T: Serialize>(value: &T, what: &'static str, path: &Path) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::format(what, path, e.to_string()))
}

fn from_toml<T: DeserializeOwned>(text: &str, what: &'static str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::format(what, path, e.to_string()))
}

/// Sidecar path holding the scenario of a dataset file.
pub fn dataset_sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".toml");
    path.with_file_name(name)
}

pub fn write_scenario(path: &Path, spec: &ScenarioSpec) -> Result<()> {
    atomic_write(path, to_toml(spec, "scenario", path)?.as_bytes())
}

pub fn read_scenario(path: &Path) -> Result<ScenarioSpec> {
    from_toml(&read_text(path)?, "scenario", path)
}

/// Writes the binary dataset and its scenario sidecar.
pub fn write_dataset(path: &Path, dataset: &CsiDataset) -> Result<()> {
    let (n, t, m) = dataset.snapshots.dim();
    let d = dataset.positions.positions.ncols();
    let mut e = Encoder::new(DATASET_MAGIC);
    for v in [n, t, m, d] {
        e.u64(v);
    }
    e.f64s(dataset.positions.positions.iter());
    for h in dataset.snapshots.iter() {
        e.f64(h.re);
        e.f64(h.im);
    }
    write_scenario(&dataset_sidecar(path), &dataset.spec)?;
    atomic_write(path, &e.buf)
}

pub fn read_dataset(path: &Path) -> Result<CsiDataset> {
    let spec = read_scenario(&dataset_sidecar(path))?;
    let bytes = read_bytes(path)?;
    let mut dec = Decoder::new(&bytes, DATASET_MAGIC, "dataset", path)?;
    let (n, t, m, d) = (dec.u64()?, dec.u64()?, dec.u64()?, dec.u64()?);
    let pos = dec.f64s(n.checked_mul(d).ok_or_else(|| dec.err("position count overflows"))?)?;
    let count = n
        .checked_mul(t)
        .and_then(|v| v.checked_mul(m))
        .and_then(|v| v.checked_mul(2))
        .ok_or_else(|| dec.err("snapshot count overflows"))?;
    let raw = dec.f64s(count)?;
    dec.finish()?;
    if spec.num_locations != n || spec.snapshots_per_location != t || spec.csi_len() != m {
        return Err(dec.err(format!(
            "header {n} x {t} x {m} disagrees with the scenario sidecar ({} x {} x {})",
            spec.num_locations,
            spec.snapshots_per_location,
            spec.csi_len()
        )));
    }
    let positions = Array2::from_shape_vec((n, d), pos).map_err(|e| dec.err(e.to_string()))?;
    let values: Vec<Complex64> = raw.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
    let snapshots = Array3::from_shape_vec((n, t, m), values).map_err(|e| dec.err(e.to_string()))?;
    Ok(CsiDataset {
        snapshots,
        positions: SpatialPointSet::new(positions),
        spec,
    })
}

pub fn write_features(path: &Path, features: &FeatureSet) -> Result<()> {
    let mut e = Encoder::new(FEATURES_MAGIC);
    e.u64(features.len());
    e.u64(features.dim());
    e.u8(features.config.domain.code());
    e.u8(features.config.transform.code());
    e.f64(features.config.sigma);
    e.f64s(features.vectors.iter());
    atomic_write(path, &e.buf)
}

pub fn read_features(path: &Path) -> Result<FeatureSet> {
    let bytes = read_bytes(path)?;
    let mut dec = Decoder::new(&bytes, FEATURES_MAGIC, "feature", path)?;
    let (n, m) = (dec.u64()?, dec.u64()?);
    let domain = dec.u8()?;
    let domain = Domain::from_code(domain).ok_or_else(|| dec.err(format!("unknown domain code {domain}")))?;
    let transform = dec.u8()?;
    let transform =
        Transform::from_code(transform).ok_or_else(|| dec.err(format!("unknown transform code {transform}")))?;
    let sigma = dec.f64()?;
    let values = dec.f64s(n.checked_mul(m).ok_or_else(|| dec.err("element count overflows"))?)?;
    dec.finish()?;
    Ok(FeatureSet {
        vectors: Array2::from_shape_vec((n, m), values).map_err(|e| dec.err(e.to_string()))?,
        config: FeatureConfig::new(domain, transform, sigma),
    })
}

/// Chart CSV `n,z1,...,zD'` with `x,y` appended when positions are given.
pub fn chart_csv(chart: &ChannelChart, positions: Option<&SpatialPointSet>) -> Result<String> {
    if let Some(p) = positions {
        if p.len() != chart.len() {
            return Err(Error::Contract(format!(
                "{} positions for a chart of {} points",
                p.len(),
                chart.len()
            )));
        }
    }
    let dims = chart.dims();
    let mut out = String::from("n");
    for d in 1..=dims {
        out.push_str(&format!(",z{d}"));
    }
    if positions.is_some() {
        out.push_str(",x,y");
    }
    out.push('\n');
    for n in 0..chart.len() {
        out.push_str(&n.to_string());
        for d in 0..dims {
            out.push_str(&format!(",{}", chart.points[(d, n)]));
        }
        if let Some(p) = positions {
            let [x, y] = p.point(n);
            out.push_str(&format!(",{x},{y}"));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_chart(path: &Path, chart: &ChannelChart, positions: Option<&SpatialPointSet>) -> Result<()> {
    atomic_write(path, chart_csv(chart, positions)?.as_bytes())
}

/// Reads chart coordinates; trailing `x,y` columns are ignored.
pub fn read_chart(path: &Path) -> Result<ChannelChart> {
    let text = read_text(path)?;
    let err = |m: String| Error::format("chart", path, m);
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| err("empty file".into()))?
        .split(',')
        .collect();
    if header.first() != Some(&"n") {
        return Err(err("header must start with n".into()));
    }
    let dims = header.iter().skip(1).take_while(|h| h.starts_with('z')).count();
    for (d, h) in header[1..=dims].iter().enumerate() {
        if *h != format!("z{}", d + 1) {
            return Err(err(format!("unexpected column {h:?}")));
        }
    }
    let extra = &header[1 + dims..];
    if !(extra.is_empty() || extra == ["x", "y"]) {
        return Err(err(format!("unexpected columns {extra:?}")));
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); dims];
    for (row, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(err(format!(
                "row {row} has {} fields, expected {}",
                fields.len(),
                header.len()
            )));
        }
        if fields[0].parse::<usize>().ok() != Some(row) {
            return Err(err(format!("row {row} has index {:?}", fields[0])));
        }
        for d in 0..dims {
            let v = fields[1 + d]
                .parse::<f64>()
                .map_err(|e| err(format!("row {row}, column z{}: {e}", d + 1)))?;
            cols[d].push(v);
        }
    }
    let n = cols.first().map_or(0, Vec::len);
    let points = Array2::from_shape_fn((dims, n), |(d, i)| cols[d][i]);
    Ok(ChannelChart::from_points(points, ""))
}

#[derive(Serialize, Deserialize)]
struct DiagnosticsFile {
    method: String,
    #[serde(flatten)]
    diagnostics: Diagnostics,
}

pub fn write_diagnostics(path: &Path, chart: &ChannelChart) -> Result<()> {
    let file = DiagnosticsFile {
        method: chart.method.clone(),
        diagnostics: chart.diagnostics.clone(),
    };
    atomic_write(path, to_toml(&file, "diagnostics", path)?.as_bytes())
}

/// Returns the method tag and solver diagnostics.
pub fn read_diagnostics(path: &Path) -> Result<(String, Diagnostics)> {
    let file: DiagnosticsFile = from_toml(&read_text(path)?, "diagnostics", path)?;
    Ok((file.method, file.diagnostics))
}

pub fn write_report(path: &Path, report: &QualityReport) -> Result<()> {
    atomic_write(path, to_toml(report, "report", path)?.as_bytes())
}

pub fn read_report(path: &Path) -> Result<QualityReport> {
    from_toml(&read_text(path)?, "report", path)
}

pub fn sweep_csv(rows: &[(usize, f64, f64)]) -> String {
    let mut out = String::from("k,ct,tw\n");
    for (k, ct, tw) in rows {
        out.push_str(&format!("{k},{ct},{tw}\n"));
    }
    out
}

pub fn write_sweep(path: &Path, rows: &[(usize, f64, f64)]) -> Result<()> {
    atomic_write(path, sweep_csv(rows).as_bytes())
}

pub fn read_sweep(path: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let text = read_text(path)?;
    let err = |m: String| Error::format("sweep", path, m);
    let mut lines = text.lines();
    if lines.next() != Some("k,ct,tw") {
        return Err(err("header must be k,ct,tw".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(row, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(err(format!("row {row} has {} fields", f.len())));
            }
            let bad = |e: String| err(format!("row {row}: {e}"));
            Ok((
                f[0].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                f[1].parse()
                    .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                f[2].parse()
                    .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            ))
        })
        .collect()
}

pub fn write_pairs(path: &Path, pairs: &[(f64, f64)]) -> Result<()> {
    let mut out = String::from("spatial_m,dissimilarity\n");
    for (s, d) in pairs {
        out.push_str(&format!("{s},{d}\n"));
    }
    atomic_write(path, out.as_bytes())
}

pub fn write_params(path: &Path, params: &AutoencoderParams) -> Result<()> {
    params.validate()?;
    let mut e = Encoder::new(PARAMS_MAGIC);
    e.u64(params.layers.len());
    e.u64(params.encoder_layers);
    for (layer, act) in params.layers.iter().zip(&params.activations) {
        e.buf.extend_from_slice(LAYER_TAG);
        e.u8(act.code());
        let (fan_out, fan_in) = layer.weights.dim();
        e.u64(fan_out);
        e.u64(fan_in);
        e.f64s(layer.weights.iter());
        e.u64(layer.bias.len());
        e.f64s(layer.bias.iter());
    }
    atomic_write(path, &e.buf)
}

pub fn read_params(path: &Path) -> Result<AutoencoderParams> {
    let bytes = read_bytes(path)?;
    let mut dec = Decoder::new(&bytes, PARAMS_MAGIC, "autoencoder parameter", path)?;
    let count = dec.u64()?;
    let encoder_layers = dec.u64()?;
    let mut layers = Vec::new();
    let mut activations = Vec::new();
    for i in 0..count {
        if dec.take(4)? != LAYER_TAG {
            return Err(dec.err(format!("missing tag of layer {i}")));
        }
        let code = dec.u8()?;
        activations
            .push(Activation::from_code(code).ok_or_else(|| dec.err(format!("unknown activation code {code}")))?);
        let (fan_out, fan_in) = (dec.u64()?, dec.u64()?);
        let w = dec.f64s(
            fan_out
                .checked_mul(fan_in)
                .ok_or_else(|| dec.err("layer size overflows"))?,
        )?;
        let nb = dec.u64()?;
        let b = dec.f64s(nb)?;
        layers.push(Layer {
            weights: Array2::from_shape_vec((fan_out, fan_in), w).map_err(|e| dec.err(e.to_string()))?,
            bias: Array1::from_vec(b),
        });
    }
    dec.finish()?;
    let params = AutoencoderParams {
        layers,
        activations,
        encoder_layers,
    };
    params.validate().map_err(|e| dec.err(e.to_string()))?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::synthesize_dataset;
    use crate::charting::AutoencoderSpec;

    fn small_spec() -> ScenarioSpec {
        ScenarioSpec {
            num_locations: 4,
            snapshots_per_location: 2,
            curve_points: vec![],
            ..ScenarioSpec::default()
        }
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ccds");
        let ds = synthesize_dataset(&small_spec()).unwrap();
        write_dataset(&path, &ds).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"CCDS");
        assert_eq!(bytes.len(), 8 + 32 + 8 * 4 * 2 + 16 * 4 * 2 * 32);
    }

    #[test]
    fn infinite_snr_survives_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        let spec = ScenarioSpec {
            snr_db: f64::INFINITY,
            ..ScenarioSpec::default()
        };
        write_scenario(&path, &spec).unwrap();
        assert_eq!(read_scenario(&path).unwrap(), spec);
    }

    #[test]
    fn truncated_dataset_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ccds");
        write_dataset(&path, &synthesize_dataset(&small_spec()).unwrap()).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format { .. })));
        fs::write(&path, b"XXXX").unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn features_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ccfs");
        let fs_ = FeatureSet {
            vectors: Array2::from_shape_fn((3, 5), |(i, j)| (i * 5 + j) as f64 * 0.1 - 0.7),
            config: FeatureConfig::new(Domain::Antenna, Transform::Angle, f64::INFINITY),
        };
        write_features(&path, &fs_).unwrap();
        assert_eq!(read_features(&path).unwrap(), fs_);
    }

    #[test]
    fn chart_csv_layout_and_round_trip() {
        let chart = ChannelChart::from_points(ndarray::array![[0.1, -2.5e-17], [3.0, 1.0 / 3.0]], "pca");
        let pos = SpatialPointSet::new(ndarray::array![[1.0, 2.0], [3.5, -4.0]]);
        let text = chart_csv(&chart, Some(&pos)).unwrap();
        assert_eq!(text.lines().next(), Some("n,z1,z2,x,y"));
        assert_eq!(text.lines().nth(1), Some("0,0.1,3,1,2"));
        let dir = tempfile::tempdir().unwrap();
        for p in [Some(&pos), None] {
            let path = dir.path().join("c.csv");
            write_chart(&path, &chart, p).unwrap();
            assert_eq!(read_chart(&path).unwrap().points, chart.points);
        }
    }

    #[test]
    fn diagnostics_round_trip() {
        let mut chart = ChannelChart::from_points(Array2::zeros((2, 1)), "sm+");
        chart.diagnostics.iterations = 7;
        chart.diagnostics.final_objective = Some(0.125);
        chart.diagnostics.objective_history = vec![1.0, 0.5, 0.125];
        chart.diagnostics.settings.insert("shrink".into(), "0.5".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.toml");
        write_diagnostics(&path, &chart).unwrap();
        let (method, diag) = read_diagnostics(&path).unwrap();
        assert_eq!(method, "sm+");
        assert_eq!(diag, chart.diagnostics);
    }

    #[test]
    fn report_and_sweep_round_trip() {
        let report = QualityReport {
            k: 3,
            ct_global: 0.9,
            tw_global: 0.8,
            ct_std: 0.01,
            tw_std: 0.02,
            ct_pointwise: vec![0.9, 0.9],
            tw_pointwise: vec![0.7, 0.9],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.toml");
        write_report(&path, &report).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        for key in ["k =", "ct_global", "tw_global", "ct_std", "tw_std"] {
            assert!(text.contains(key), "{key}");
        }
        assert_eq!(read_report(&path).unwrap(), report);

        let rows = vec![(1, 1.0, 0.5), (2, 0.25, 1.0 / 7.0)];
        let path = dir.path().join("s.csv");
        write_sweep(&path, &rows).unwrap();
        assert_eq!(read_sweep(&path).unwrap(), rows);
    }

    #[test]
    fn params_round_trip() {
        let spec = AutoencoderSpec {
            hidden: vec![3],
            encoder_activations: vec![Activation::Tanh, Activation::Identity],
            decoder_activations: vec![Activation::Relu, Activation::Identity],
            ..AutoencoderSpec::default()
        };
        let params = AutoencoderParams::init(&spec, 4, 2, 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ccae");
        write_params(&path, &params).unwrap();
        assert_eq!(read_params(&path).unwrap(), params);
    }

    #[test]
    fn atomic_write_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.txt");
        atomic_write(&path, b"one").unwrap();
        atomic_write(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        let names: Vec<_> = fs::read_dir(path.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_features(Path::new("/nonexistent/f.ccfs")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
