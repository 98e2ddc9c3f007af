//! Record model, ingestion, filtering, splits, and input assembly.

pub mod manifest;
pub mod store;
pub mod synth;

pub use manifest::{load_manifest, write_manifest, ManifestLoad, ManifestRow, Reject};
pub use store::{pack_store, unpack_by_ids, unpack_store, StoredTrace};
pub use synth::{generate, synth_trace, DistanceSampling, SyntheticSpec, WaveletSpec};

use crate::error::{Error, Result};
use crate::geo::{haversine_km, within_radius, GeoPoint};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Samples per record: 60 s at 100 Hz.
pub const SEQ_LEN: usize = 6000;
pub const SAMPLE_RATE_HZ: f64 = 100.0;
/// Waveform channels: E-W, N-S, U-D.
pub const CHANNELS: usize = 3;

/// One waveform with its event/station metadata.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub trace_id: String,
    /// `[3][6000]` row-major.
    pub waveform: Vec<f32>,
    pub p_arrival_sample: usize,
    pub s_arrival_sample: usize,
    pub station: GeoPoint,
    pub source: GeoPoint,
    pub epicentral_km: f64,
    pub snr_db: [f64; 3],
}

impl TraceRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        trace_id: String,
        waveform: Vec<f32>,
        p_arrival_sample: usize,
        s_arrival_sample: usize,
        station: GeoPoint,
        source: GeoPoint,
        epicentral_km: f64,
        snr_db: [f64; 3],
    ) -> Result<Self> {
        if waveform.len() != CHANNELS * SEQ_LEN {
            return Err(Error::invalid(format!(
                "waveform has {} samples, expected {}",
                waveform.len(),
                CHANNELS * SEQ_LEN
            )));
        }
        if !(p_arrival_sample < s_arrival_sample && s_arrival_sample < SEQ_LEN) {
            return Err(Error::invalid(format!(
                "arrivals must satisfy p < s < {SEQ_LEN}, got p={p_arrival_sample} s={s_arrival_sample}"
            )));
        }
        if !(epicentral_km >= 0.0) {
            return Err(Error::invalid("epicentral distance must be >= 0"));
        }
        let hav = haversine_km(station, source);
        if (hav - epicentral_km).abs() > manifest::DISTANCE_CONSISTENCY_KM {
            return Err(Error::invalid(format!(
                "epicentral_km {epicentral_km:.3} disagrees with haversine {hav:.3} by more than {} km",
                manifest::DISTANCE_CONSISTENCY_KM
            )));
        }
        Ok(TraceRecord {
            trace_id,
            waveform,
            p_arrival_sample,
            s_arrival_sample,
            station,
            source,
            epicentral_km,
            snr_db,
        })
    }

    /// S-P interval in seconds.
    pub fn sp_interval_s(&self) -> f64 {
        (self.s_arrival_sample - self.p_arrival_sample) as f64 / SAMPLE_RATE_HZ
    }
}

/// Metadata every filterable row exposes.
pub trait TraceMeta {
    fn epicentral_km(&self) -> f64;
    fn snr_db(&self) -> [f64; 3];
    fn station(&self) -> GeoPoint;
    fn orientation_ok(&self) -> Option<bool>;
}

impl TraceMeta for TraceRecord {
    fn epicentral_km(&self) -> f64 {
        self.epicentral_km
    }
    fn snr_db(&self) -> [f64; 3] {
        self.snr_db
    }
    fn station(&self) -> GeoPoint {
        self.station
    }
    fn orientation_ok(&self) -> Option<bool> {
        None
    }
}

impl TraceMeta for ManifestRow {
    fn epicentral_km(&self) -> f64 {
        self.source_distance_km
    }
    fn snr_db(&self) -> [f64; 3] {
        self.snr_db
    }
    fn station(&self) -> GeoPoint {
        self.receiver
    }
    fn orientation_ok(&self) -> Option<bool> {
        self.orientation_ok
    }
}

/// Subset selection thresholds. Rows survive with distance at most
/// `max_epicentral_km` and mean SNR strictly above `min_snr_db`; with a
/// local center set, the station must also lie within the radius.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    pub max_epicentral_km: f64,
    pub min_snr_db: f64,
    pub local_center: Option<GeoPoint>,
    pub local_radius_km: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            max_epicentral_km: 110.0,
            min_snr_db: 25.0,
            local_center: None,
            local_radius_km: 300.0,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_epicentral_km > 0.0) || !(self.local_radius_km > 0.0) {
            return Err(Error::invalid("filter thresholds must be positive"));
        }
        Ok(())
    }
}

/// Keeps rows passing the distance, SNR, orientation, and (optionally)
/// local-radius criteria. Idempotent by construction.
pub fn apply_filters<T: TraceMeta + Clone>(rows: &[T], spec: &FilterSpec) -> Result<Vec<T>> {
    spec.validate()?;
    let mut missing_orientation = 0usize;
    let mut out = Vec::new();
    for row in rows {
        if row.epicentral_km() > spec.max_epicentral_km {
            continue;
        }
        let snr = row.snr_db();
        let mean_snr = (snr[0] + snr[1] + snr[2]) / 3.0;
        if !(mean_snr > spec.min_snr_db) {
            continue;
        }
        match row.orientation_ok() {
            Some(false) => continue,
            Some(true) => {}
            None => missing_orientation += 1,
        }
        if let Some(center) = spec.local_center {
            if !within_radius(center, row.station(), spec.local_radius_km)? {
                continue;
            }
        }
        out.push(row.clone());
    }
    if missing_orientation > 0 {
        log::info!(
            "orientation filter skipped for {missing_orientation} rows without an orientation_ok column"
        );
    }
    Ok(out)
}

/// Proportions and seed of the train/val/test partition.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub test_frac: f64,
    pub val_frac_of_train: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_frac: 0.8,
            test_frac: 0.2,
            val_frac_of_train: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let ok_frac = |f: f64| f > 0.0 && f < 1.0;
        if !ok_frac(self.train_frac) || !ok_frac(self.test_frac) || !ok_frac(self.val_frac_of_train)
        {
            return Err(Error::invalid("split fractions must lie in (0, 1)"));
        }
        if (self.train_frac + self.test_frac - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("train_frac + test_frac must equal 1"));
        }
        Ok(())
    }
}

/// Index partition for `n` rows: disjoint, exhaustive, seeded.
#[derive(Debug, Clone)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    if n < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 rows to split, got {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let n_test = ((n as f64) * spec.test_frac).floor() as usize;
    let n_train_full = n - n_test;
    let n_val = ((n_train_full as f64) * spec.val_frac_of_train).floor() as usize;

    let test = order[..n_test].to_vec();
    let val = order[n_test..n_test + n_val].to_vec();
    let train = order[n_test + n_val..].to_vec();
    Ok(SplitIndices { train, val, test })
}

/// Seeded disjoint exhaustive partition of the rows themselves.
pub fn split<T: Clone>(rows: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let idx = split_indices(rows.len(), spec)?;
    let pick = |ids: &[usize]| ids.iter().map(|&i| rows[i].clone()).collect();
    Ok((pick(&idx.train), pick(&idx.val), pick(&idx.test)))
}

/// Boxcar encoding of the P-to-S window: 1.0 on `[p, s)`, 0.0 elsewhere.
/// Its sum is exactly `s - p`, i.e. 100 times the S-P interval in
/// seconds.
pub fn build_ps_channel(p: usize, s: usize, len: usize) -> Result<Vec<f32>> {
    if !(p < s && s < len) {
        return Err(Error::invalid(format!(
            "need p < s < len, got p={p} s={s} len={len}"
        )));
    }
    let mut ch = vec![0.0f32; len];
    ch[p..s].fill(1.0);
    Ok(ch)
}

/// Writes one record's model input into `out` (`[C][SEQ_LEN]` row-major,
/// C = 3 or 4). Waveform channels are optionally z-scored per trace;
/// the boxcar channel is appended last and never normalized.
pub fn assemble_into(
    record: &TraceRecord,
    include_ps: bool,
    normalize: bool,
    out: &mut [f32],
) -> Result<()> {
    let channels = if include_ps { CHANNELS + 1 } else { CHANNELS };
    if out.len() != channels * SEQ_LEN {
        return Err(Error::invalid(format!(
            "assemble buffer has {} samples, expected {}",
            out.len(),
            channels * SEQ_LEN
        )));
    }
    for ch in 0..CHANNELS {
        let src = &record.waveform[ch * SEQ_LEN..(ch + 1) * SEQ_LEN];
        let dst = &mut out[ch * SEQ_LEN..(ch + 1) * SEQ_LEN];
        if normalize {
            let mut mean = 0.0f64;
            for &v in src {
                mean += v as f64;
            }
            mean /= SEQ_LEN as f64;
            let mut var = 0.0f64;
            for &v in src {
                let d = v as f64 - mean;
                var += d * d;
            }
            var /= SEQ_LEN as f64;
            if var <= f64::EPSILON {
                log::warn!(
                    "trace {}: channel {ch} has zero variance, left as zeros",
                    record.trace_id
                );
                dst.fill(0.0);
            } else {
                let inv = 1.0 / var.sqrt();
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = ((v as f64 - mean) * inv) as f32;
                }
            }
        } else {
            dst.copy_from_slice(src);
        }
    }
    if include_ps {
        let ps = build_ps_channel(record.p_arrival_sample, record.s_arrival_sample, SEQ_LEN)?;
        out[CHANNELS * SEQ_LEN..].copy_from_slice(&ps);
    }
    Ok(())
}

/// Model input for one record: `[C, 6000]`, C = 3 or 4.
pub fn assemble_input(record: &TraceRecord, include_ps: bool, normalize: bool) -> Result<Tensor<f32>> {
    let channels = if include_ps { CHANNELS + 1 } else { CHANNELS };
    let mut data = vec![0.0f32; channels * SEQ_LEN];
    assemble_into(record, include_ps, normalize, &mut data)?;
    Tensor::from_vec(vec![channels, SEQ_LEN], data)
}

/// Writes a dataset directory: `manifest.csv` plus the packed waveform
/// store and its index.
pub fn write_dataset(dir: &Path, records: &[TraceRecord]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let rows: Vec<ManifestRow> = records
        .iter()
        .map(|r| ManifestRow {
            trace_name: r.trace_id.clone(),
            receiver: r.station,
            source: r.source,
            p_arrival_sample: r.p_arrival_sample,
            s_arrival_sample: r.s_arrival_sample,
            snr_db: r.snr_db,
            source_distance_km: r.epicentral_km,
            orientation_ok: None,
        })
        .collect();
    write_manifest(&dir.join("manifest.csv"), &rows)?;
    let traces: Vec<StoredTrace> = records
        .iter()
        .map(|r| StoredTrace {
            trace_id: r.trace_id.clone(),
            p_arrival_sample: r.p_arrival_sample as u32,
            s_arrival_sample: r.s_arrival_sample as u32,
            waveform: r.waveform.clone(),
        })
        .collect();
    pack_store(&traces, &dir.join("waveforms.sw6k"))?;
    Ok(())
}

/// Loads a dataset directory written by [`write_dataset`], joining the
/// manifest with the waveform store by trace id.
pub fn load_dataset(dir: &Path) -> Result<Vec<TraceRecord>> {
    let manifest_path = dir.join("manifest.csv");
    let load = load_manifest(&manifest_path)?;
    if !load.rejects.is_empty() {
        log::warn!(
            "{}: {} rows rejected during load",
            manifest_path.display(),
            load.rejects.len()
        );
    }
    let stored = unpack_store(&dir.join("waveforms.sw6k"))?;
    let mut by_id: std::collections::HashMap<&str, &StoredTrace> =
        stored.iter().map(|t| (t.trace_id.as_str(), t)).collect();
    let mut out = Vec::with_capacity(load.rows.len());
    for row in &load.rows {
        let t = by_id
            .remove(row.trace_name.as_str())
            .ok_or_else(|| Error::NotFound(format!("waveform for trace {}", row.trace_name)))?;
        out.push(TraceRecord::new(
            row.trace_name.clone(),
            t.waveform.clone(),
            row.p_arrival_sample,
            row.s_arrival_sample,
            row.receiver,
            row.source,
            row.source_distance_km,
            row.snr_db,
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta_row(distance: f64, snr: [f64; 3], station: GeoPoint) -> ManifestRow {
        let bearing = 0.7;
        let source = crate::geo::destination_point(station, bearing, distance).unwrap();
        ManifestRow {
            trace_name: "t".into(),
            receiver: station,
            source,
            p_arrival_sample: 100,
            s_arrival_sample: 500,
            snr_db: snr,
            source_distance_km: distance,
            orientation_ok: None,
        }
    }

    #[test]
    fn filter_boundaries() {
        let station = GeoPoint::new(36.0, -119.0).unwrap();
        let rows = vec![
            meta_row(111.0, [30.0, 30.0, 30.0], station),
            meta_row(110.0, [30.0, 30.0, 30.0], station),
            meta_row(50.0, [25.0, 25.0, 25.0], station),
            meta_row(50.0, [26.0, 25.0, 25.1], station),
        ];
        let kept = apply_filters(&rows, &FilterSpec::default()).unwrap();
        // 111 km is "further than 110 km"; mean SNR exactly 25 is
        // "25dB and lower"; both go.
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].source_distance_km, 110.0);
        assert!((kept[1].snr_db[0] - 26.0).abs() < 1e-12);
    }

    #[test]
    fn filter_is_idempotent() {
        let station = GeoPoint::new(36.0, -119.0).unwrap();
        let rows: Vec<ManifestRow> = (0..50)
            .map(|i| meta_row(10.0 + i as f64 * 3.0, [20.0 + i as f64, 25.0, 30.0], station))
            .collect();
        let once = apply_filters(&rows, &FilterSpec::default()).unwrap();
        let twice = apply_filters(&once, &FilterSpec::default()).unwrap();
        assert_eq!(once.len(), twice.len());
    }

    #[test]
    fn local_radius_filter() {
        let center = crate::geo::CALIFORNIA_CENTER;
        let near = meta_row(50.0, [30.0; 3], GeoPoint::new(37.0, -119.0).unwrap());
        let far = meta_row(50.0, [30.0; 3], GeoPoint::new(48.0, -122.0).unwrap());
        let spec = FilterSpec {
            local_center: Some(center),
            ..FilterSpec::default()
        };
        let kept = apply_filters(&[near, far], &spec).unwrap();
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn orientation_column_honored_when_present() {
        let station = GeoPoint::new(36.0, -119.0).unwrap();
        let mut good = meta_row(50.0, [30.0; 3], station);
        good.orientation_ok = Some(true);
        let mut bad = meta_row(50.0, [30.0; 3], station);
        bad.orientation_ok = Some(false);
        let kept = apply_filters(&[good, bad], &FilterSpec::default()).unwrap();
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn split_100_rows_is_72_8_20() {
        let rows: Vec<usize> = (0..100).collect();
        let (train, val, test) = split(&rows, &SplitSpec::default()).unwrap();
        assert_eq!(train.len(), 72);
        assert_eq!(val.len(), 8);
        assert_eq!(test.len(), 20);
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_seeded() {
        let spec = SplitSpec {
            seed: 9,
            ..SplitSpec::default()
        };
        let idx1 = split_indices(1000, &spec).unwrap();
        let idx2 = split_indices(1000, &spec).unwrap();
        assert_eq!(idx1.train, idx2.train);
        assert_eq!(idx1.val, idx2.val);
        assert_eq!(idx1.test, idx2.test);

        let mut all: Vec<usize> = idx1
            .train
            .iter()
            .chain(&idx1.val)
            .chain(&idx1.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());

        let other = split_indices(
            1000,
            &SplitSpec {
                seed: 10,
                ..SplitSpec::default()
            },
        )
        .unwrap();
        assert_ne!(idx1.train, other.train);
    }

    #[test]
    fn split_rejects_tiny_inputs() {
        assert!(split_indices(2, &SplitSpec::default()).is_err());
    }

    #[test]
    fn ps_channel_boxcar() {
        let ch = build_ps_channel(1000, 1500, SEQ_LEN).unwrap();
        let sum: f32 = ch.iter().sum();
        assert_eq!(sum, 500.0);
        assert_eq!(ch[999], 0.0);
        assert_eq!(ch[1000], 1.0);
        assert_eq!(ch[1499], 1.0);
        assert_eq!(ch[1500], 0.0);

        assert!(build_ps_channel(0, 6000, SEQ_LEN).is_err());
        assert!(build_ps_channel(100, 100, SEQ_LEN).is_err());
        assert!(build_ps_channel(200, 100, SEQ_LEN).is_err());
    }

    fn sample_record() -> TraceRecord {
        let spec = synth::SyntheticSpec {
            n: 1,
            noise_sigma: 0.3,
            ..Default::default()
        };
        synth::generate(&spec).unwrap().pop().unwrap()
    }

    #[test]
    fn assemble_shapes_and_boxcar_placement() {
        let r = sample_record();
        let t3 = assemble_input(&r, false, true).unwrap();
        assert_eq!(t3.shape(), &[3, SEQ_LEN]);
        let t4 = assemble_input(&r, true, true).unwrap();
        assert_eq!(t4.shape(), &[4, SEQ_LEN]);
        let ps = &t4.data()[3 * SEQ_LEN..];
        let sum: f32 = ps.iter().sum();
        assert_eq!(
            sum as usize,
            r.s_arrival_sample - r.p_arrival_sample
        );
    }

    #[test]
    fn normalized_channels_are_zscored() {
        let r = sample_record();
        let t = assemble_input(&r, false, true).unwrap();
        for ch in 0..3 {
            let c = &t.data()[ch * SEQ_LEN..(ch + 1) * SEQ_LEN];
            let mean: f64 = c.iter().map(|&v| v as f64).sum::<f64>() / SEQ_LEN as f64;
            let var: f64 =
                c.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / SEQ_LEN as f64;
            assert!(mean.abs() <= 1e-5, "channel {ch} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() <= 1e-3, "channel {ch} std {}", var.sqrt());
        }
    }

    #[test]
    fn zero_variance_channel_left_as_zeros() {
        let mut r = sample_record();
        r.waveform[..SEQ_LEN].fill(3.25);
        let t = assemble_input(&r, false, true).unwrap();
        assert!(t.data()[..SEQ_LEN].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dataset_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = synth::SyntheticSpec {
            n: 12,
            ..Default::default()
        };
        let records = synth::generate(&spec).unwrap();
        write_dataset(dir.path(), &records).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 12);
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.trace_id, b.trace_id);
            assert_eq!(a.waveform, b.waveform);
            assert_eq!(a.p_arrival_sample, b.p_arrival_sample);
            assert_eq!(a.s_arrival_sample, b.s_arrival_sample);
        }
    }
}
