//! File formats: binary ensemble tensors with a JSON sidecar, JSON parameter
//! documents and CSV region maps.
//!
//! Tensor layout (little-endian):
//!
//! ```text
//! "AXS1" | u32 M | u32 N | u32 T | u32 R | f64[M] lat | f64[N] lon | u8[M*N] mask | f64[R*T*N*M] values
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{EnsembleTensor, GridGeometry, RegionMap};
use crate::params::CovarianceParams;
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"AXS1";
const HEADER_LEN: usize = 4 + 4 * 4;

/// Metadata stored next to a tensor as `<name>.meta.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    #[serde(default)]
    pub scenario_id: String,
    #[serde(default)]
    pub co2: Vec<f64>,
    #[serde(default)]
    pub units: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Serializes a tensor to the binary layout. Fails before producing any bytes
/// if the tensor holds a non-finite value.
pub fn encode_tensor<T: Real>(t: &EnsembleTensor<T>) -> Result<Vec<u8>> {
    t.validate()?;
    let g = t.geometry();
    let (r, nt, n, m) = t.dims();
    let dim = |x: usize, name: &str| -> Result<u32> {
        u32::try_from(x).map_err(|_| Error::Dimension(format!("{name} = {x} does not fit the u32 header")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (m + n) + m * n + 8 * t.values().len());
    out.extend_from_slice(MAGIC);
    for (x, name) in [(m, "M"), (n, "N"), (nt, "T"), (r, "R")] {
        out.extend_from_slice(&dim(x, name)?.to_le_bytes());
    }
    for v in g.latitudes().iter().chain(g.longitudes()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(g.land_mask());
    for v in t.values() {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    Ok(out)
}

fn f64_at(bytes: &[u8], offset: usize) -> f64 {
    f64::from_le_bytes(bytes[offset..offset + 8].try_into().expect("8-byte slice"))
}

/// Parses the binary layout. Metadata fields are left empty.
pub fn decode_tensor(bytes: &[u8]) -> Result<EnsembleTensor<f64>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Header(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Header(format!("bad magic {:?}", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4-byte slice")) as usize;
    let (m, n, t, r) = (word(0), word(1), word(2), word(3));
    if m == 0 || n == 0 || t == 0 || r == 0 {
        return Err(Error::Header(format!("zero dimension in header (M={m}, N={n}, T={t}, R={r})")));
    }
    let geom_len = m
        .checked_mul(n)
        .and_then(|mn| mn.checked_add(8 * (m + n)))
        .ok_or_else(|| Error::Header("header dimensions overflow".into()))?;
    let payload_start = HEADER_LEN + geom_len;
    if bytes.len() < payload_start {
        return Err(Error::Header("file ends inside the geometry section".into()));
    }
    let expected = [r, t, n, m, 8]
        .iter()
        .try_fold(1usize, |acc, &x| acc.checked_mul(x))
        .ok_or_else(|| Error::Header("header dimensions overflow".into()))?;
    let found = bytes.len() - payload_start;
    if found != expected {
        return Err(Error::PayloadLength { expected, found });
    }
    let mut off = HEADER_LEN;
    let lats: Vec<f64> = (0..m).map(|i| f64_at(bytes, off + 8 * i)).collect();
    off += 8 * m;
    let lons: Vec<f64> = (0..n).map(|i| f64_at(bytes, off + 8 * i)).collect();
    off += 8 * n;
    let mask = bytes[off..off + m * n].to_vec();
    let values: Vec<f64> = bytes[payload_start..].chunks_exact(8).map(|c| f64_at(c, 0)).collect();
    let geom = GridGeometry::new(lats, lons, mask)?;
    EnsembleTensor::new(geom, r, t, values)
}

/// Writes the tensor and its sidecar.
pub fn write_tensor<T: Real>(t: &EnsembleTensor<T>, path: &Path) -> Result<()> {
    let bytes = encode_tensor(t)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let meta = TensorMeta { scenario_id: t.scenario_id.clone(), co2: t.co2.clone(), units: t.units.clone() };
    write_json(&meta, &sidecar_path(path))
}

/// Reads a tensor and, when present, its sidecar.
pub fn read_tensor(path: &Path) -> Result<EnsembleTensor<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut t = decode_tensor(&bytes)?;
    let side = sidecar_path(path);
    if side.exists() {
        let meta: TensorMeta = read_json(&side)?;
        t = t.with_co2(meta.co2)?.with_scenario(meta.scenario_id);
        t.units = meta.units;
    }
    Ok(t)
}

pub fn write_json<S: Serialize + ?Sized>(value: &S, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ParamsDocument {
    Bare(CovarianceParams<f64>),
    Wrapped { params: CovarianceParams<f64> },
}

/// Reads covariance parameters from either a bare parameter document or any
/// report that carries them under a top-level `params` key.
pub fn read_params(path: &Path) -> Result<CovarianceParams<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ParamsDocument = serde_json::from_str(&text)
        .map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    let p = match doc {
        ParamsDocument::Bare(p) | ParamsDocument::Wrapped { params: p } => p,
    };
    p.validate()?;
    Ok(p)
}

pub fn write_params(p: &CovarianceParams<f64>, path: &Path) -> Result<()> {
    p.validate()?;
    write_json(p, path)
}

#[derive(Debug, Serialize, Deserialize)]
struct RegionRow {
    lat_index: usize,
    lon_index: usize,
    region_id: u32,
}

/// Reads a `lat_index, lon_index, region_id` CSV (1-based) for the given grid.
pub fn read_regions(path: &Path, geom: &GridGeometry) -> Result<RegionMap> {
    let (m, n) = (geom.n_lat(), geom.n_lon());
    let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), message };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(format!("{other:?}")),
        })?;
    let mut ids = vec![0u32; m * n];
    for row in rdr.deserialize::<RegionRow>() {
        let row = row.map_err(|e| parse_err(e.to_string()))?;
        if row.lat_index == 0 || row.lat_index > m || row.lon_index == 0 || row.lon_index > n {
            return Err(parse_err(format!("pixel ({}, {}) outside the {m}x{n} grid", row.lat_index, row.lon_index)));
        }
        let p = geom.pixel(row.lon_index - 1, row.lat_index - 1);
        if ids[p] != 0 {
            return Err(parse_err(format!("pixel ({}, {}) assigned twice", row.lat_index, row.lon_index)));
        }
        ids[p] = row.region_id;
    }
    if let Some(p) = ids.iter().position(|&id| id == 0) {
        return Err(parse_err(format!("pixel ({}, {}) has no region", p % m + 1, p / m + 1)));
    }
    RegionMap::new(m, n, ids)
}

pub fn write_regions(map: &RegionMap, path: &Path) -> Result<()> {
    let (m, n) = map.dims();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    for i in 0..m {
        for j in 0..n {
            w.serialize(RegionRow { lat_index: i + 1, lon_index: j + 1, region_id: map.ids()[j * m + i] })
                .map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ArCoefficients, BandSpectrum, Coherence};
    use proptest::prelude::*;

    fn tensor() -> EnsembleTensor<f64> {
        let g = GridGeometry::regular(vec![-10.0, 0.0, 3.75, 20.0], 8)
            .unwrap()
            .with_mask((0..32).map(|i| (i % 3 == 0) as u8).collect())
            .unwrap();
        let vals: Vec<f64> = (0..320).map(|i| (i as f64 * 0.37).sin() * 1e3).collect();
        EnsembleTensor::new(g, 2, 5, vals).unwrap().with_scenario("drop")
    }

    #[test]
    fn decode_shapes_and_truncation() {
        let t = tensor();
        let bytes = encode_tensor(&t).unwrap();
        let back = decode_tensor(&bytes).unwrap();
        assert_eq!(back.dims(), (2, 5, 8, 4));
        assert_eq!(back.values().len(), 320);
        let err = decode_tensor(&bytes[..bytes.len() - 8]).unwrap_err();
        assert!(err.to_string().contains("payload length mismatch"), "{err}");
    }

    #[test]
    fn header_errors() {
        let mut bytes = encode_tensor(&tensor()).unwrap();
        assert!(matches!(decode_tensor(&bytes[..10]), Err(Error::Header(_))));
        bytes[0] = b'X';
        assert!(matches!(decode_tensor(&bytes), Err(Error::Header(_))));
        let mut zero = encode_tensor(&tensor()).unwrap();
        zero[16..20].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_tensor(&zero), Err(Error::Header(_))));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let mut bytes = encode_tensor(&tensor()).unwrap();
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&f64::INFINITY.to_le_bytes());
        assert!(matches!(decode_tensor(&bytes), Err(Error::NonFinite(319))));
    }

    #[test]
    fn nan_rejected_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        let mut t = tensor();
        t.values_mut()[3] = f64::NAN;
        assert!(write_tensor(&t, &path).is_err());
        assert!(!path.exists());
    }

    #[test]
    fn file_round_trip_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
        let t = tensor().with_co2(vec![280.0; 7]).unwrap();
        write_tensor(&t, &a).unwrap();
        write_tensor(&t, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let back = read_tensor(&a).unwrap();
        assert_eq!(back, t);
        assert!(sidecar_path(&a).ends_with("a.meta.json"));
    }

    #[test]
    fn params_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let p = CovarianceParams {
            bands: vec![BandSpectrum { phi: 0.1 + 0.2, alpha: 1.0 / 3.0, nu: 1.5 }],
            coherence: Coherence { xi: 0.9696, tau: 0.2080 },
            ar: ArCoefficients { phi_ocean: 0.1141, phi_land: 0.1010 },
        };
        write_params(&p, &path).unwrap();
        assert_eq!(read_params(&path).unwrap(), p);
    }

    #[test]
    fn params_domain_and_missing_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        fs::write(
            &path,
            r#"{"bands": [], "coherence": {"xi": 1.2, "tau": 0.2}, "ar": {"phi_ocean": 0.1, "phi_land": 0.1}}"#,
        )
        .unwrap();
        assert!(matches!(read_params(&path), Err(Error::Domain(_))));
        fs::write(&path, r#"{"bands": [], "coherence": {"xi": 0.5}}"#).unwrap();
        assert!(matches!(read_params(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn regions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let g = GridGeometry::equispaced(6, 8, 60.0).unwrap();
        let map = RegionMap::blocks(&g, 3, 2);
        write_regions(&map, &path).unwrap();
        assert_eq!(read_regions(&path, &g).unwrap(), map);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("lat_index,lon_index,region_id"));
        let truncated: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        fs::write(&path, truncated).unwrap();
        assert!(read_regions(&path, &g).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn tensor_bytes_round_trip(vals in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 24)) {
            let g = GridGeometry::regular(vec![-5.0, 5.0], 4).unwrap();
            let t = EnsembleTensor::new(g, 3, 1, vals).unwrap();
            let bytes = encode_tensor(&t).unwrap();
            let back = decode_tensor(&bytes).unwrap();
            prop_assert!(t.values().iter().zip(back.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(encode_tensor(&back).unwrap(), bytes);
        }

        #[test]
        fn params_json_round_trip(xi in 1e-6f64..0.999999, tau in 1e-6f64..5.0, phi in 1e-3f64..1e3, f0 in -0.99f64..0.99) {
            let p = CovarianceParams {
                bands: vec![BandSpectrum { phi, alpha: 0.5, nu: 1.0 }],
                coherence: Coherence { xi, tau },
                ar: ArCoefficients { phi_ocean: f0, phi_land: -f0 },
            };
            let text = serde_json::to_string(&p).unwrap();
            let back: CovarianceParams<f64> = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
