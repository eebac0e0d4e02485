//! Grid geometry, ensemble tensors and region maps.
//!
//! Values are stored in one flat buffer with latitude varying fastest, then
//! longitude, then time, then realization: `((r*T + t)*N + n)*M + m`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

const LONGITUDE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    latitudes: Vec<f64>,
    longitudes: Vec<f64>,
    /// 1 for land, 0 for ocean, latitude fastest.
    land_mask: Vec<u8>,
}

impl GridGeometry {
    pub fn new(latitudes: Vec<f64>, longitudes: Vec<f64>, land_mask: Vec<u8>) -> Result<Self> {
        let geom = Self { latitudes, longitudes, land_mask };
        geom.validate()?;
        Ok(geom)
    }

    /// Regular longitude grid `360 n / N` with the given latitudes and an all-ocean mask.
    pub fn regular(latitudes: Vec<f64>, n_lon: usize) -> Result<Self> {
        let mask = vec![0; latitudes.len() * n_lon];
        Self::new(latitudes, regular_longitudes(n_lon), mask)
    }

    /// `m` equally spaced latitudes between `-span/2` and `span/2` degrees (inclusive).
    pub fn equispaced(m: usize, n_lon: usize, span: f64) -> Result<Self> {
        let lats = if m == 1 {
            vec![0.0]
        } else {
            (0..m).map(|i| -span / 2.0 + span * i as f64 / (m - 1) as f64).collect()
        };
        Self::regular(lats, n_lon)
    }

    pub fn with_mask(mut self, land_mask: Vec<u8>) -> Result<Self> {
        self.land_mask = land_mask;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.latitudes.len();
        let n = self.longitudes.len();
        if m == 0 {
            return Err(Error::Dimension("at least one latitude band is required".into()));
        }
        if n < 2 {
            return Err(Error::Dimension(format!("need at least 2 longitudes, got {n}")));
        }
        for w in self.latitudes.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Domain(format!(
                    "latitudes must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if let Some(bad) = self.latitudes.iter().find(|l| !(l.abs() < 90.0)) {
            return Err(Error::Domain(format!("latitude {bad} is a pole or outside (-90, 90)")));
        }
        for (i, (&lon, want)) in self.longitudes.iter().zip(regular_longitudes(n)).enumerate() {
            if !((lon - want).abs() <= LONGITUDE_TOL) {
                return Err(Error::Domain(format!(
                    "longitude {i} is {lon}, regular grid requires {want}"
                )));
            }
        }
        if self.land_mask.len() != m * n {
            return Err(Error::Dimension(format!(
                "land mask has {} entries, expected {}",
                self.land_mask.len(),
                m * n
            )));
        }
        if let Some(v) = self.land_mask.iter().find(|&&v| v > 1) {
            return Err(Error::Domain(format!("land mask entries must be 0 or 1, found {v}")));
        }
        Ok(())
    }

    pub fn n_lat(&self) -> usize {
        self.latitudes.len()
    }

    pub fn n_lon(&self) -> usize {
        self.longitudes.len()
    }

    /// Number of pixels `M * N`.
    pub fn n_pixels(&self) -> usize {
        self.latitudes.len() * self.longitudes.len()
    }

    pub fn latitudes(&self) -> &[f64] {
        &self.latitudes
    }

    pub fn longitudes(&self) -> &[f64] {
        &self.longitudes
    }

    pub fn land_mask(&self) -> &[u8] {
        &self.land_mask
    }

    /// Pixel offset within one time slice.
    #[inline]
    pub fn pixel(&self, n: usize, m: usize) -> usize {
        n * self.latitudes.len() + m
    }

    pub fn is_land(&self, n: usize, m: usize) -> bool {
        self.land_mask[self.pixel(n, m)] == 1
    }

    /// Geometry restricted to a single latitude band.
    pub fn band(&self, m: usize) -> Self {
        let n = self.n_lon();
        let mask = (0..n).map(|j| self.land_mask[self.pixel(j, m)]).collect();
        Self { latitudes: vec![self.latitudes[m]], longitudes: self.longitudes.clone(), land_mask: mask }
    }
}

pub fn regular_longitudes(n: usize) -> Vec<f64> {
    (0..n).map(|i| 360.0 * i as f64 / n as f64).collect()
}

/// `R` realizations of a `T x N x M` field under one forcing scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleTensor<T> {
    geometry: GridGeometry,
    n_real: usize,
    n_time: usize,
    values: Vec<T>,
    /// Annual CO2 in ppm. Empty when unknown, otherwise at least `T` long; the
    /// last `T` entries are the run years and anything before is history.
    pub co2: Vec<f64>,
    pub scenario_id: String,
    pub units: String,
}

impl<T: Real> EnsembleTensor<T> {
    pub fn new(geometry: GridGeometry, n_real: usize, n_time: usize, values: Vec<T>) -> Result<Self> {
        geometry.validate()?;
        if n_real == 0 || n_time == 0 {
            return Err(Error::Dimension(format!("zero dimension (R={n_real}, T={n_time})")));
        }
        let expected = n_real * n_time * geometry.n_pixels();
        if values.len() != expected {
            return Err(Error::Dimension(format!(
                "tensor has {} values, expected R*T*N*M = {expected}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            geometry,
            n_real,
            n_time,
            values,
            co2: Vec::new(),
            scenario_id: String::new(),
            units: String::new(),
        })
    }

    pub fn zeros(geometry: GridGeometry, n_real: usize, n_time: usize) -> Result<Self> {
        let len = n_real * n_time * geometry.n_pixels();
        Self::new(geometry, n_real, n_time, vec![T::zero(); len])
    }

    pub fn with_co2(mut self, co2: Vec<f64>) -> Result<Self> {
        validate_co2(&co2, self.n_time)?;
        self.co2 = co2;
        Ok(self)
    }

    pub fn with_scenario(mut self, id: impl Into<String>) -> Self {
        self.scenario_id = id.into();
        self
    }

    /// Checks the invariants that public mutation could have broken.
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        validate_co2(&self.co2, self.n_time)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn n_real(&self) -> usize {
        self.n_real
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    /// `(R, T, N, M)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n_real, self.n_time, self.geometry.n_lon(), self.geometry.n_lat())
    }

    #[inline]
    pub fn index(&self, r: usize, t: usize, n: usize, m: usize) -> usize {
        flat_index(self.dims(), r, t, n, m)
    }

    #[inline]
    pub fn get(&self, r: usize, t: usize, n: usize, m: usize) -> T {
        self.values[self.index(r, t, n, m)]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// All `T * N * M` values of realization `r`.
    pub fn realization(&self, r: usize) -> &[T] {
        let len = self.n_time * self.geometry.n_pixels();
        &self.values[r * len..(r + 1) * len]
    }

    /// The `N * M` field of realization `r` at time `t`.
    pub fn field(&self, r: usize, t: usize) -> &[T] {
        let p = self.geometry.n_pixels();
        let start = (r * self.n_time + t) * p;
        &self.values[start..start + p]
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> EnsembleTensor<U> {
        EnsembleTensor {
            geometry: self.geometry.clone(),
            n_real: self.n_real,
            n_time: self.n_time,
            values: self.values.iter().map(|&v| f(v)).collect(),
            co2: self.co2.clone(),
            scenario_id: self.scenario_id.clone(),
            units: self.units.clone(),
        }
    }
}

fn validate_co2(co2: &[f64], n_time: usize) -> Result<()> {
    if co2.is_empty() {
        return Ok(());
    }
    if co2.len() < n_time {
        return Err(Error::Dimension(format!(
            "CO2 series has {} entries, need at least T = {n_time}",
            co2.len()
        )));
    }
    if let Some(c) = co2.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
        return Err(Error::Domain(format!("CO2 concentrations must be positive, found {c}")));
    }
    Ok(())
}

/// Flat offset of `(r, t, n, m)` for dimensions `(R, T, N, M)`.
#[inline]
pub fn flat_index(dims: (usize, usize, usize, usize), r: usize, t: usize, n: usize, m: usize) -> usize {
    let (_, nt, nn, nm) = dims;
    ((r * nt + t) * nn + n) * nm + m
}

/// Inverse of [`flat_index`].
pub fn unflatten(dims: (usize, usize, usize, usize), mut idx: usize) -> (usize, usize, usize, usize) {
    let (_, nt, nn, nm) = dims;
    let m = idx % nm;
    idx /= nm;
    let n = idx % nn;
    idx /= nn;
    let t = idx % nt;
    (idx / nt, t, n, m)
}

/// Assignment of every pixel to one of `C` regions, ids `1..=C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    n_lat: usize,
    n_lon: usize,
    /// Region id per pixel, latitude fastest.
    ids: Vec<u32>,
    n_regions: usize,
}

impl RegionMap {
    pub fn new(n_lat: usize, n_lon: usize, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != n_lat * n_lon {
            return Err(Error::Dimension(format!(
                "region map has {} entries, expected {}",
                ids.len(),
                n_lat * n_lon
            )));
        }
        let n_regions = ids.iter().copied().max().unwrap_or(0) as usize;
        if ids.iter().any(|&id| id == 0) {
            return Err(Error::Domain("region ids are 1-based; found 0".into()));
        }
        let mut counts = vec![0usize; n_regions];
        for &id in &ids {
            counts[id as usize - 1] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Domain(format!("region {} has no pixels", empty + 1)));
        }
        Ok(Self { n_lat, n_lon, ids, n_regions })
    }

    /// Rectangular blocks: `lat_blocks` bands of latitude times `lon_blocks`
    /// sectors of longitude. Block counts are clamped to the grid size.
    pub fn blocks(geom: &GridGeometry, lat_blocks: usize, lon_blocks: usize) -> Self {
        let (m, n) = (geom.n_lat(), geom.n_lon());
        let lb = lat_blocks.clamp(1, m);
        let nb = lon_blocks.clamp(1, n);
        let mut ids = vec![0u32; m * n];
        for j in 0..n {
            for i in 0..m {
                let bi = i * lb / m;
                let bj = j * nb / n;
                ids[j * m + i] = (bi * nb + bj + 1) as u32;
            }
        }
        Self::new(m, n, ids).expect("block partition covers every region")
    }

    /// The default 6 x 8 partition.
    pub fn default_for(geom: &GridGeometry) -> Self {
        Self::blocks(geom, 6, 8)
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_lat, self.n_lon)
    }

    /// Zero-based region index of pixel `p` (latitude-fastest offset).
    #[inline]
    pub fn region_of(&self, p: usize) -> usize {
        self.ids[p] as usize - 1
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn check_geometry(&self, geom: &GridGeometry) -> Result<()> {
        if self.n_lat != geom.n_lat() || self.n_lon != geom.n_lon() {
            return Err(Error::Dimension(format!(
                "region map is {}x{}, grid is {}x{}",
                self.n_lat,
                self.n_lon,
                geom.n_lat(),
                geom.n_lon()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_irregular_longitudes() {
        let err = GridGeometry::new(vec![0.0], vec![0.0, 170.0], vec![0, 0]).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn rejects_poles_and_unsorted_latitudes() {
        assert!(GridGeometry::regular(vec![-90.0, 0.0], 4).is_err());
        assert!(GridGeometry::regular(vec![10.0, 5.0], 4).is_err());
        assert!(GridGeometry::regular(vec![], 4).is_err());
        assert!(GridGeometry::regular(vec![0.0], 1).is_err());
    }

    #[test]
    fn mask_length_checked() {
        let g = GridGeometry::regular(vec![0.0, 10.0], 4).unwrap();
        assert!(g.clone().with_mask(vec![0; 7]).is_err());
        assert!(g.with_mask(vec![1; 8]).is_ok());
    }

    #[test]
    fn tensor_rejects_nan_and_zero_dims() {
        let g = GridGeometry::regular(vec![0.0], 2).unwrap();
        assert!(matches!(
            EnsembleTensor::new(g.clone(), 1, 1, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(1))
        ));
        assert!(EnsembleTensor::<f64>::new(g, 0, 1, vec![]).is_err());
    }

    #[test]
    fn field_slices_follow_layout() {
        let g = GridGeometry::regular(vec![0.0, 5.0, 10.0], 4).unwrap();
        let vals: Vec<f64> = (0..2 * 3 * 12).map(|i| i as f64).collect();
        let e = EnsembleTensor::new(g, 2, 3, vals).unwrap();
        assert_eq!(e.get(1, 2, 3, 1), e.index(1, 2, 3, 1) as f64);
        assert_eq!(e.field(1, 2)[e.geometry().pixel(3, 1)], e.get(1, 2, 3, 1));
        assert_eq!(e.realization(1)[0], 36.0);
    }

    #[test]
    fn region_blocks_cover_grid() {
        let g = GridGeometry::equispaced(12, 16, 80.0).unwrap();
        let map = RegionMap::default_for(&g);
        assert_eq!(map.n_regions(), 48);
        let small = GridGeometry::equispaced(2, 4, 10.0).unwrap();
        assert_eq!(RegionMap::default_for(&small).n_regions(), 8);
    }

    #[test]
    fn region_map_rejects_gaps() {
        assert!(RegionMap::new(1, 2, vec![1, 3]).is_err());
        assert!(RegionMap::new(1, 2, vec![0, 1]).is_err());
    }

    proptest! {
        #[test]
        fn flat_index_is_bijective(r in 1usize..4, t in 1usize..5, n in 1usize..6, m in 1usize..5) {
            let dims = (r, t, n, m);
            let total = r * t * n * m;
            let mut seen = vec![false; total];
            for a in 0..r { for b in 0..t { for c in 0..n { for d in 0..m {
                let i = flat_index(dims, a, b, c, d);
                prop_assert!(i < total);
                prop_assert!(!seen[i]);
                seen[i] = true;
                prop_assert_eq!(unflatten(dims, i), (a, b, c, d));
            }}}}
        }
    }
}
