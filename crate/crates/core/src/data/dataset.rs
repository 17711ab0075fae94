//! On-disk dataset format.
//!
//! A dataset is a directory holding three files:
//!
//! * `values.pstd` : `"PSTD1"`, `u64` slice count `T`, `u64` point count
//!   `N`, then `T·N` little-endian `f64` values, one row per time slice.
//!   NaN marks a missing reading.
//! * `points.csv` : header `index,lat,lng`, one row per point.
//! * `meta.txt` : `key=value` lines: `start_time` (ISO-8601, no zone) and
//!   `slice_minutes`.

use std::io::{self, Read};
use std::path::Path;

use chrono::{Duration, NaiveDateTime};

use super::DataError;
use crate::numerics::Tensor;
use crate::spatial::GeoPoint;

pub const DATASET_MAGIC: &[u8; 5] = b"PSTD1";
pub const VALUES_FILE: &str = "values.pstd";
pub const POINTS_FILE: &str = "points.csv";
pub const META_FILE: &str = "meta.txt";
const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Traffic matrix `[T, N]` with point coordinates and a time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub values: Tensor<f64>,
    pub points: Vec<GeoPoint>,
    pub start_time: NaiveDateTime,
    pub slice_minutes: u32,
    /// Cells filled by carry-forward while loading.
    pub imputed: usize,
}

impl RawDataset {
    pub fn new(values: Tensor<f64>, points: Vec<GeoPoint>, start_time: NaiveDateTime, slice_minutes: u32) -> Result<Self, DataError> {
        let shape = values.shape();
        if shape.len() != 2 {
            return Err(DataError::Malformed(format!("values must be [T, N], got {shape:?}")));
        }
        if points.len() != shape[1] {
            return Err(DataError::CoordinateCount {
                coordinates: points.len(),
                columns: shape[1],
            });
        }
        if slice_minutes == 0 || 1440 % slice_minutes != 0 {
            return Err(DataError::Meta(format!("slice_minutes={slice_minutes} must divide a day")));
        }
        let mut seen = vec![false; points.len()];
        for p in &points {
            if p.index >= points.len() || std::mem::replace(&mut seen[p.index], true) {
                return Err(DataError::Malformed(format!("point index {} duplicated or out of range", p.index)));
            }
        }
        let mut points = points;
        points.sort_by_key(|p| p.index);
        Ok(Self {
            values,
            points,
            start_time,
            slice_minutes,
            imputed: 0,
        })
    }

    pub fn n_slices(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn n_points(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn slices_per_day(&self) -> usize {
        (1440 / self.slice_minutes) as usize
    }

    /// Calendar time of slice `t`.
    pub fn timestamp(&self, t: usize) -> NaiveDateTime {
        self.start_time + Duration::minutes(self.slice_minutes as i64 * t as i64)
    }

    /// Rows `start..start+len` as a `[len, N]` matrix.
    pub fn slice_rows(&self, start: usize, len: usize) -> Tensor<f64> {
        let n = self.n_points();
        Tensor::new(vec![len, n], self.values.data()[start * n..(start + len) * n].to_vec()).expect("rows in range")
    }
}

pub fn load_dataset(dir: &Path) -> Result<RawDataset, DataError> {
    let (t, n, mut values) = read_values(&dir.join(VALUES_FILE))?;
    let points = read_points(&dir.join(POINTS_FILE))?;
    if points.len() != n {
        return Err(DataError::CoordinateCount {
            coordinates: points.len(),
            columns: n,
        });
    }
    let (start_time, slice_minutes) = read_meta(&dir.join(META_FILE))?;
    let imputed = impute_carry_forward(&mut values, n);
    if imputed > 0 {
        log::warn!("{}: imputed {imputed} missing value(s) by carry-forward", dir.display());
    }
    let values = Tensor::new(vec![t, n], values).map_err(|e| DataError::Malformed(e.to_string()))?;
    let mut ds = RawDataset::new(values, points, start_time, slice_minutes)?;
    ds.imputed = imputed;
    Ok(ds)
}

pub fn save_dataset(ds: &RawDataset, dir: &Path) -> Result<(), DataError> {
    std::fs::create_dir_all(dir)?;
    let (t, n) = (ds.n_slices(), ds.n_points());
    let mut buf = Vec::with_capacity(21 + t * n * 8);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&(t as u64).to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    for v in ds.values.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(dir.join(VALUES_FILE), buf)?;

    let mut w = csv::Writer::from_path(dir.join(POINTS_FILE))?;
    w.write_record(["index", "lat", "lng"])?;
    for p in &ds.points {
        w.write_record([p.index.to_string(), format!("{:?}", p.lat), format!("{:?}", p.lng)])?;
    }
    w.flush()?;

    std::fs::write(
        dir.join(META_FILE),
        format!(
            "start_time={}\nslice_minutes={}\n",
            ds.start_time.format(TIME_FORMAT),
            ds.slice_minutes
        ),
    )?;
    Ok(())
}

fn read_values(path: &Path) -> Result<(usize, usize, Vec<f64>), DataError> {
    let mut f = std::fs::File::open(path)?;
    let mut header = [0u8; 21];
    f.read_exact(&mut header).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => DataError::Malformed("values header truncated".into()),
        _ => DataError::Io(e),
    })?;
    if &header[..5] != DATASET_MAGIC {
        return Err(DataError::Malformed("bad magic header: expected PSTD1".into()));
    }
    let t = u64::from_le_bytes(header[5..13].try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(header[13..21].try_into().unwrap()) as usize;
    if n == 0 {
        return Err(DataError::Malformed("header declares zero points".into()));
    }
    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;
    if payload.len() % 8 != 0 || payload.len() / 8 != t * n {
        return Err(DataError::Ragged {
            values: payload.len() as f64 / 8.0,
            rows: t,
            columns: n,
        });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((t, n, values))
}

fn read_points(path: &Path) -> Result<Vec<GeoPoint>, DataError> {
    let mut r = csv::Reader::from_path(path)?;
    let headers: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers != ["index", "lat", "lng"] {
        return Err(DataError::Malformed(format!("points header must be index,lat,lng, got {}", headers.join(","))));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| -> Result<&str, DataError> {
            rec.get(i)
                .map(str::trim)
                .ok_or_else(|| DataError::Malformed(format!("points row {} has {} fields", line + 1, rec.len())))
        };
        let parse_err = |what: &str| DataError::Malformed(format!("points row {}: bad {what}", line + 1));
        let index = field(0)?.parse().map_err(|_| parse_err("index"))?;
        let lat = field(1)?.parse().map_err(|_| parse_err("lat"))?;
        let lng = field(2)?.parse().map_err(|_| parse_err("lng"))?;
        out.push(GeoPoint::new(index, lat, lng));
    }
    Ok(out)
}

fn read_meta(path: &Path) -> Result<(NaiveDateTime, u32), DataError> {
    let text = std::fs::read_to_string(path)?;
    let mut start = None;
    let mut minutes = None;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| DataError::Meta(format!("expected key=value, got `{line}`")))?;
        match k.trim() {
            "start_time" => {
                start = Some(
                    NaiveDateTime::parse_from_str(v.trim(), TIME_FORMAT)
                        .map_err(|e| DataError::Meta(format!("start_time `{}`: {e}", v.trim())))?,
                )
            }
            "slice_minutes" => {
                minutes = Some(
                    v.trim()
                        .parse()
                        .map_err(|_| DataError::Meta(format!("slice_minutes `{}` is not an integer", v.trim())))?,
                )
            }
            other => log::debug!("ignoring unknown meta key `{other}`"),
        }
    }
    Ok((
        start.ok_or_else(|| DataError::Meta("missing start_time".into()))?,
        minutes.ok_or_else(|| DataError::Meta("missing slice_minutes".into()))?,
    ))
}

/// Replaces NaNs with the previous slice's value for the same point (zero
/// when no earlier value exists). Returns the number of cells filled.
pub fn impute_carry_forward(values: &mut [f64], n: usize) -> usize {
    let mut filled = 0;
    for i in 0..values.len() {
        if values[i].is_nan() {
            values[i] = if i >= n { values[i - n] } else { 0.0 };
            filled += 1;
        }
    }
    filled
}
