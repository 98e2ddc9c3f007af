//! Spherical geodesy: regression targets and geographic subsetting.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Mean Earth radius in kilometers, the conventional haversine constant.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Geographic center of California, the default center of the local
/// station subset.
pub const CALIFORNIA_CENTER: GeoPoint = GeoPoint {
    lat: 36.7783,
    lon: -119.4179,
};

/// A validated latitude/longitude pair in degrees.
///
/// Latitude lies in `[-90, 90]`; longitude in `(-180, 180]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeoPoint", into = "RawGeoPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGeoPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawGeoPoint> for GeoPoint {
    type Error = Error;
    fn try_from(raw: RawGeoPoint) -> Result<Self> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl From<GeoPoint> for RawGeoPoint {
    fn from(p: GeoPoint) -> Self {
        RawGeoPoint {
            lat: p.lat,
            lon: p.lon,
        }
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::invalid(format!("latitude {lat} outside [-90, 90]")));
        }
        if !lon.is_finite() || !(lon > -180.0 && lon <= 180.0) {
            return Err(Error::invalid(format!("longitude {lon} outside (-180, 180]")));
        }
        Ok(GeoPoint { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Great-circle distance in kilometers on a sphere of radius
/// [`EARTH_RADIUS_KM`].
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlat = (b.lat - a.lat).to_radians() / 2.0;
    let dlon = (b.lon - a.lon).to_radians() / 2.0;
    let h = dlat.sin().powi(2) + lat1.cos() * lat2.cos() * dlon.sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Whether `p` lies within `r_km` of `center` (great-circle).
pub fn within_radius(center: GeoPoint, p: GeoPoint, r_km: f64) -> Result<bool> {
    if !(r_km > 0.0) {
        return Err(Error::invalid(format!("radius must be positive, got {r_km}")));
    }
    Ok(haversine_km(center, p) <= r_km)
}

/// Classical S-minus-P distance estimate: `d = dt / (1/vs - 1/vp)`.
pub fn sp_interval_to_distance(dt_s: f64, vp_kms: f64, vs_kms: f64) -> Result<f64> {
    if !(vp_kms > 0.0 && vs_kms > 0.0) || vs_kms >= vp_kms {
        return Err(Error::invalid(format!(
            "need vp > vs > 0, got vp={vp_kms} vs={vs_kms}"
        )));
    }
    if !(dt_s >= 0.0) {
        return Err(Error::invalid(format!("S-P interval must be >= 0, got {dt_s}")));
    }
    Ok(dt_s / (1.0 / vs_kms - 1.0 / vp_kms))
}

/// Point reached by traveling `distance_km` from `start` along the given
/// initial bearing (radians, clockwise from north) on the sphere.
///
/// The synthetic generator uses this to place sources so that the
/// haversine distance back to the station reproduces the drawn distance.
pub fn destination_point(start: GeoPoint, bearing_rad: f64, distance_km: f64) -> Result<GeoPoint> {
    let ang = distance_km / EARTH_RADIUS_KM;
    let lat1 = start.lat.to_radians();
    let lon1 = start.lon.to_radians();
    let lat2 = (lat1.sin() * ang.cos() + lat1.cos() * ang.sin() * bearing_rad.cos()).asin();
    let lon2 = lon1
        + (bearing_rad.sin() * ang.sin() * lat1.cos()).atan2(ang.cos() - lat1.sin() * lat2.sin());
    // Normalize longitude into (-180, 180].
    let mut lon_deg = lon2.to_degrees();
    while lon_deg <= -180.0 {
        lon_deg += 360.0;
    }
    while lon_deg > 180.0 {
        lon_deg -= 360.0;
    }
    GeoPoint::new(lat2.to_degrees().clamp(-90.0, 90.0), lon_deg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_validation() {
        assert!(GeoPoint::new(38.034, -120.38).is_ok());
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(-91.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, 180.0).is_ok());
        assert!(GeoPoint::new(0.0, -180.0).is_err());
        assert!(GeoPoint::new(0.0, 181.0).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn haversine_closed_forms() {
        let o = GeoPoint::new(0.0, 0.0).unwrap();
        assert_eq!(haversine_km(o, o), 0.0);

        // One degree along a meridian: R * pi / 180.
        let p = GeoPoint::new(1.0, 0.0).unwrap();
        let want = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        assert!((haversine_km(o, p) - want).abs() / want < 1e-12);
        assert!((haversine_km(o, p) - 111.1949).abs() < 1e-4);

        // Equatorial antipodes: pi * R.
        let q = GeoPoint::new(0.0, 180.0).unwrap();
        let want = std::f64::consts::PI * EARTH_RADIUS_KM;
        assert!((haversine_km(o, q) - want).abs() / want < 1e-12);
        assert!((haversine_km(o, q) - 20015.087).abs() < 1e-3);
    }

    #[test]
    fn haversine_is_symmetric() {
        let a = GeoPoint::new(38.034, -120.38).unwrap();
        let b = GeoPoint::new(36.7783, -119.4179).unwrap();
        assert_eq!(haversine_km(a, b), haversine_km(b, a));
    }

    #[test]
    fn within_radius_cases() {
        let c = GeoPoint::new(36.7783, -119.4179).unwrap();
        assert!(within_radius(c, c, 300.0).unwrap());
        // Three degrees of longitude east at this latitude is ~267 km.
        let p = GeoPoint::new(36.7783, -116.4179).unwrap();
        let d = haversine_km(c, p);
        assert_eq!(within_radius(c, p, 300.0).unwrap(), d <= 300.0);
        assert!(within_radius(c, p, 300.0).unwrap());
        assert!(within_radius(c, p, 0.0).is_err());
    }

    #[test]
    fn sp_interval_examples() {
        assert_eq!(sp_interval_to_distance(0.0, 6.0, 3.5).unwrap(), 0.0);
        let d1 = sp_interval_to_distance(1.0, 6.0, 3.5).unwrap();
        assert!((d1 - 8.4).abs() < 1e-12);
        let d5 = sp_interval_to_distance(5.0, 6.0, 3.5).unwrap();
        assert!((d5 - 42.0).abs() < 1e-12);
        // Linear in dt, exactly in f64 for exact inputs.
        assert_eq!(sp_interval_to_distance(2.0, 6.0, 3.5).unwrap(), 2.0 * d1);
        assert!(sp_interval_to_distance(1.0, 3.5, 6.0).is_err());
        assert!(sp_interval_to_distance(-1.0, 6.0, 3.5).is_err());
    }

    #[test]
    fn destination_round_trips_through_haversine() {
        let station = CALIFORNIA_CENTER;
        for i in 0..32 {
            let bearing = i as f64 * 0.196;
            let d = 5.0 + i as f64 * 9.0;
            let src = destination_point(station, bearing, d).unwrap();
            let back = haversine_km(station, src);
            assert!(
                (back - d).abs() < 1e-9,
                "bearing {bearing}: {back} vs {d}"
            );
        }
    }
}
