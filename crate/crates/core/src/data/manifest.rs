//! Metadata CSV ingestion and emission.
//!
//! Required columns: trace_name, receiver_latitude, receiver_longitude,
//! source_latitude, source_longitude, p_arrival_sample, s_arrival_sample,
//! snr_db (three values, semicolon-separated), source_distance_km.
//! Optional: orientation_ok (0/1). Malformed rows are collected into a
//! rejects report, never silently dropped.

use super::SEQ_LEN;
use crate::error::{Error, Result};
use crate::geo::{haversine_km, GeoPoint};
use std::path::Path;

pub const REQUIRED_COLUMNS: [&str; 9] = [
    "trace_name",
    "receiver_latitude",
    "receiver_longitude",
    "source_latitude",
    "source_longitude",
    "p_arrival_sample",
    "s_arrival_sample",
    "snr_db",
    "source_distance_km",
];

/// Maximum accepted disagreement between the stored distance and the
/// haversine of the stored coordinates.
pub const DISTANCE_CONSISTENCY_KM: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct ManifestRow {
    pub trace_name: String,
    pub receiver: GeoPoint,
    pub source: GeoPoint,
    pub p_arrival_sample: usize,
    pub s_arrival_sample: usize,
    pub snr_db: [f64; 3],
    pub source_distance_km: f64,
    pub orientation_ok: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct Reject {
    /// 1-based data-row index (headers excluded).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct ManifestLoad {
    pub rows: Vec<ManifestRow>,
    pub rejects: Vec<Reject>,
}

struct Columns {
    trace_name: usize,
    receiver_lat: usize,
    receiver_lon: usize,
    source_lat: usize,
    source_lon: usize,
    p_arrival: usize,
    s_arrival: usize,
    snr: usize,
    distance: usize,
    orientation: Option<usize>,
}

fn resolve_columns(path: &Path, headers: &csv::StringRecord) -> Result<Columns> {
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(path, format!("missing required column `{name}`")))
    };
    Ok(Columns {
        trace_name: find("trace_name")?,
        receiver_lat: find("receiver_latitude")?,
        receiver_lon: find("receiver_longitude")?,
        source_lat: find("source_latitude")?,
        source_lon: find("source_longitude")?,
        p_arrival: find("p_arrival_sample")?,
        s_arrival: find("s_arrival_sample")?,
        snr: find("snr_db")?,
        distance: find("source_distance_km")?,
        orientation: headers.iter().position(|h| h == "orientation_ok"),
    })
}

fn parse_row(record: &csv::StringRecord, cols: &Columns) -> std::result::Result<ManifestRow, String> {
    let field = |i: usize, name: &str| -> std::result::Result<&str, String> {
        record.get(i).ok_or_else(|| format!("short row, no `{name}`"))
    };
    let parse_f64 = |i: usize, name: &str| -> std::result::Result<f64, String> {
        field(i, name)?
            .trim()
            .parse::<f64>()
            .map_err(|_| format!("unparseable {name}"))
    };
    let parse_usize = |i: usize, name: &str| -> std::result::Result<usize, String> {
        let v = parse_f64(i, name)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(format!("non-integer {name}"));
        }
        Ok(v as usize)
    };

    let lat = parse_f64(cols.receiver_lat, "receiver_latitude")?;
    let lon = parse_f64(cols.receiver_lon, "receiver_longitude")?;
    let receiver = GeoPoint::new(lat, lon).map_err(|_| {
        if !(-90.0..=90.0).contains(&lat) {
            "latitude range".to_string()
        } else {
            "longitude range".to_string()
        }
    })?;
    let lat = parse_f64(cols.source_lat, "source_latitude")?;
    let lon = parse_f64(cols.source_lon, "source_longitude")?;
    let source = GeoPoint::new(lat, lon).map_err(|_| {
        if !(-90.0..=90.0).contains(&lat) {
            "latitude range".to_string()
        } else {
            "longitude range".to_string()
        }
    })?;

    let p = parse_usize(cols.p_arrival, "p_arrival_sample")?;
    let s = parse_usize(cols.s_arrival, "s_arrival_sample")?;
    if p >= SEQ_LEN || s >= SEQ_LEN {
        return Err("arrival out of range".to_string());
    }
    if p >= s {
        return Err("arrival order".to_string());
    }

    let snr_raw = field(cols.snr, "snr_db")?;
    let parts: Vec<&str> = snr_raw.split(';').map(str::trim).collect();
    if parts.len() != 3 {
        return Err("snr format (expected three ;-separated values)".to_string());
    }
    let mut snr = [0.0f64; 3];
    for (dst, part) in snr.iter_mut().zip(&parts) {
        *dst = part.parse::<f64>().map_err(|_| "snr format".to_string())?;
    }

    let distance = parse_f64(cols.distance, "source_distance_km")?;
    if !(distance >= 0.0) {
        return Err("negative distance".to_string());
    }
    let hav = haversine_km(receiver, source);
    if (hav - distance).abs() > DISTANCE_CONSISTENCY_KM {
        return Err(format!(
            "distance-coordinate mismatch ({distance:.3} km stored vs {hav:.3} km haversine)"
        ));
    }

    let orientation_ok = match cols.orientation {
        Some(i) => match record.get(i).map(str::trim) {
            None | Some("") => None,
            Some("0") => Some(false),
            Some("1") => Some(true),
            Some(other) => return Err(format!("unparseable orientation_ok `{other}`")),
        },
        None => None,
    };

    Ok(ManifestRow {
        trace_name: field(cols.trace_name, "trace_name")?.to_string(),
        receiver,
        source,
        p_arrival_sample: p,
        s_arrival_sample: s,
        snr_db: snr,
        source_distance_km: distance,
        orientation_ok,
    })
}

/// Reads a metadata CSV into typed rows plus a rejects report.
pub fn load_manifest(path: &Path) -> Result<ManifestLoad> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::format(path, format!("cannot open: {e}")),
        _ => Error::format(path, e.to_string()),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    let cols = resolve_columns(path, &headers)?;

    let mut load = ManifestLoad::default();
    for (idx, record) in reader.records().enumerate() {
        let row_no = idx + 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                load.rejects.push(Reject {
                    row: row_no,
                    reason: format!("csv parse: {e}"),
                });
                continue;
            }
        };
        match parse_row(&record, &cols) {
            Ok(row) => load.rows.push(row),
            Err(reason) => load.rejects.push(Reject {
                row: row_no,
                reason,
            }),
        }
    }
    Ok(load)
}

/// Writes rows in the column layout [`load_manifest`] expects.
pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
    let with_orientation = rows.iter().any(|r| r.orientation_ok.is_some());
    if with_orientation {
        header.push("orientation_ok");
    }
    w.write_record(&header)?;
    for r in rows {
        let mut fields = vec![
            r.trace_name.clone(),
            r.receiver.lat().to_string(),
            r.receiver.lon().to_string(),
            r.source.lat().to_string(),
            r.source.lon().to_string(),
            r.p_arrival_sample.to_string(),
            r.s_arrival_sample.to_string(),
            format!("{};{};{}", r.snr_db[0], r.snr_db[1], r.snr_db[2]),
            r.source_distance_km.to_string(),
        ];
        if with_orientation {
            fields.push(match r.orientation_ok {
                Some(true) => "1".to_string(),
                Some(false) => "0".to_string(),
                None => String::new(),
            });
        }
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    const HEADER: &str = "trace_name,receiver_latitude,receiver_longitude,source_latitude,source_longitude,p_arrival_sample,s_arrival_sample,snr_db,source_distance_km";

    #[test]
    fn three_valid_rows_no_rejects() {
        // Distances below are haversine-consistent by construction.
        let a = GeoPoint::new(38.034, -120.38).unwrap();
        let b = GeoPoint::new(38.2, -120.5).unwrap();
        let d = haversine_km(a, b);
        let mut content = format!("{HEADER}\n");
        for i in 0..3 {
            content.push_str(&format!(
                "t{i},38.034,-120.38,38.2,-120.5,500,900,30;31;32,{d}\n"
            ));
        }
        let f = write_csv(&content);
        let load = load_manifest(f.path()).unwrap();
        assert_eq!(load.rows.len(), 3);
        assert!(load.rejects.is_empty());
    }

    #[test]
    fn latitude_out_of_range_is_rejected_with_reason() {
        let content = format!("{HEADER}\nbad,91.0,-120.38,38.2,-120.5,500,900,30;31;32,20\n");
        let f = write_csv(&content);
        let load = load_manifest(f.path()).unwrap();
        assert!(load.rows.is_empty());
        assert_eq!(load.rejects.len(), 1);
        assert_eq!(load.rejects[0].reason, "latitude range");
    }

    #[test]
    fn missing_column_names_it() {
        let content = "trace_name,receiver_latitude\nx,1.0\n";
        let f = write_csv(content);
        match load_manifest(f.path()) {
            Err(Error::Format { reason, .. }) => {
                assert!(reason.contains("receiver_longitude"), "{reason}")
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn arrival_order_rejected() {
        let a = GeoPoint::new(38.034, -120.38).unwrap();
        let b = GeoPoint::new(38.2, -120.5).unwrap();
        let d = haversine_km(a, b);
        let content =
            format!("{HEADER}\nx,38.034,-120.38,38.2,-120.5,900,500,30;31;32,{d}\n");
        let f = write_csv(&content);
        let load = load_manifest(f.path()).unwrap();
        assert_eq!(load.rejects[0].reason, "arrival order");
    }

    #[test]
    fn figure_station_round_trips_exactly() {
        let rows = vec![ManifestRow {
            trace_name: "fig1".to_string(),
            receiver: GeoPoint::new(38.034, -120.38).unwrap(),
            source: GeoPoint::new(38.1, -120.3).unwrap(),
            p_arrival_sample: 1234,
            s_arrival_sample: 2345,
            snr_db: [31.25, 29.5, 33.125],
            source_distance_km: haversine_km(
                GeoPoint::new(38.034, -120.38).unwrap(),
                GeoPoint::new(38.1, -120.3).unwrap(),
            ),
            orientation_ok: Some(true),
        }];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_manifest(f.path(), &rows).unwrap();
        let load = load_manifest(f.path()).unwrap();
        assert!(load.rejects.is_empty());
        let r = &load.rows[0];
        assert_eq!(r.receiver.lat(), 38.034);
        assert_eq!(r.receiver.lon(), -120.38);
        assert_eq!(r.p_arrival_sample, 1234);
        assert_eq!(r.snr_db, rows[0].snr_db);
        assert_eq!(r.source_distance_km, rows[0].source_distance_km);
        assert_eq!(r.orientation_ok, Some(true));
    }
}
