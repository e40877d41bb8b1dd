//! Spherical-earth helpers shared by the POI, TAZ and synthetic-city code.

use serde::{Deserialize, Serialize};

/// Mean Earth radius (IUGG), metres.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// WGS-84 position in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub const fn new(lon: f64, lat: f64) -> Self {
        GeoPoint { lon, lat }
    }
}

/// Great-circle distance in metres.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.clamp(0.0, 1.0).sqrt().asin()
}

/// Point reached by travelling `distance_m` from `origin` along the initial
/// `bearing_deg` (clockwise from north).
pub fn destination(origin: GeoPoint, bearing_deg: f64, distance_m: f64) -> GeoPoint {
    let delta = distance_m / EARTH_RADIUS_M;
    let theta = bearing_deg.to_radians();
    let phi1 = origin.lat.to_radians();
    let lambda1 = origin.lon.to_radians();
    let phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos()).asin();
    let lambda2 = lambda1
        + (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * phi2.sin());
    GeoPoint::new(lambda2.to_degrees(), phi2.to_degrees())
}

/// Shift a point by metric east/north offsets using a local equirectangular
/// approximation around the point's latitude.
pub fn offset_m(origin: GeoPoint, east_m: f64, north_m: f64) -> GeoPoint {
    let lat = origin.lat + (north_m / EARTH_RADIUS_M).to_degrees();
    let lon = origin.lon + (east_m / (EARTH_RADIUS_M * origin.lat.to_radians().cos())).to_degrees();
    GeoPoint::new(lon, lat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_distance() {
        let p = GeoPoint::new(116.4, 39.9);
        assert_eq!(haversine_m(p, p), 0.0);
    }

    #[test]
    fn one_degree_of_latitude() {
        let a = GeoPoint::new(0.0, 0.0);
        let b = GeoPoint::new(0.0, 1.0);
        let expected = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        assert!((haversine_m(a, b) - expected).abs() < 1e-6);
    }

    #[test]
    fn destination_inverts_haversine() {
        let o = GeoPoint::new(116.39, 39.91);
        for bearing in [0.0, 37.0, 90.0, 181.0, 300.0] {
            for d in [1.0, 499.0, 500.0, 501.0, 12_000.0] {
                let p = destination(o, bearing, d);
                assert!(
                    (haversine_m(o, p) - d).abs() < 1e-6,
                    "bearing {bearing} d {d}"
                );
            }
        }
    }
}
