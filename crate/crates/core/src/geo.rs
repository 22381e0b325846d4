//! Geographic primitives: great-circle distances, timed routes and a
//! uniform-grid spatial index over route waypoints.
//!
//! Coordinates are decimal degrees, distances meters, times seconds on the
//! simulation clock.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::TripId;

/// Mean Earth radius used for every distance in the crate.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Upper bound on the spacing between consecutive route waypoints.
pub const MAX_WAYPOINT_SPACING_M: f64 = 500.0;

/// Default grid cell edge.
pub const DEFAULT_CELL_SIZE_M: f64 = 1_000.0;

// Slack on the spacing check so routes densified in floating point still pass.
const SPACING_TOLERANCE_M: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let p = GeoPoint { lat, lon };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(Error::InvalidCoordinate { lat, lon })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }

    pub fn distance_to(&self, other: &GeoPoint) -> f64 {
        haversine_distance(*self, *other)
    }

    fn to_unit_vector(self) -> [f64; 3] {
        let (lat, lon) = (self.lat.to_radians(), self.lon.to_radians());
        [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
    }

    fn from_unit_vector(v: [f64; 3]) -> Self {
        let lat = v[2].atan2((v[0] * v[0] + v[1] * v[1]).sqrt());
        let lon = v[1].atan2(v[0]);
        GeoPoint {
            lat: lat.to_degrees(),
            lon: lon.to_degrees(),
        }
    }
}

/// Great-circle distance in meters.
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.clamp(0.0, 1.0).sqrt().asin()
}

/// Point at fraction `f` along the great circle from `a` to `b`.
pub fn interpolate(a: GeoPoint, b: GeoPoint, f: f64) -> GeoPoint {
    let angle = haversine_distance(a, b) / EARTH_RADIUS_M;
    if angle < 1e-12 {
        return a;
    }
    let (va, vb) = (a.to_unit_vector(), b.to_unit_vector());
    let s = angle.sin();
    let ka = ((1.0 - f) * angle).sin() / s;
    let kb = (f * angle).sin() / s;
    GeoPoint::from_unit_vector([
        ka * va[0] + kb * vb[0],
        ka * va[1] + kb * vb[1],
        ka * va[2] + kb * vb[2],
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub fn new(min_lat: f64, min_lon: f64, max_lat: f64, max_lon: f64) -> Result<Self> {
        GeoPoint::new(min_lat, min_lon)?;
        GeoPoint::new(max_lat, max_lon)?;
        if !(min_lat < max_lat && min_lon < max_lon) {
            return Err(Error::InvalidArgument(format!(
                "degenerate bounding box [{min_lat}, {min_lon}] .. [{max_lat}, {max_lon}]"
            )));
        }
        Ok(BoundingBox {
            min_lat,
            min_lon,
            max_lat,
            max_lon,
        })
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint {
            lat: 0.5 * (self.min_lat + self.max_lat),
            lon: 0.5 * (self.min_lon + self.max_lon),
        }
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.min_lat..=self.max_lat).contains(&p.lat)
            && (self.min_lon..=self.max_lon).contains(&p.lon)
    }

    fn enclosing<'a>(points: impl IntoIterator<Item = &'a GeoPoint>) -> Option<Self> {
        points.into_iter().fold(None, |acc, p| {
            Some(match acc {
                None => BoundingBox {
                    min_lat: p.lat,
                    min_lon: p.lon,
                    max_lat: p.lat,
                    max_lon: p.lon,
                },
                Some(b) => BoundingBox {
                    min_lat: b.min_lat.min(p.lat),
                    min_lon: b.min_lon.min(p.lon),
                    max_lat: b.max_lat.max(p.lat),
                    max_lon: b.max_lon.max(p.lon),
                },
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedWaypoint {
    pub point: GeoPoint,
    /// Seconds on the simulation clock.
    pub time: f64,
}

/// A driver's trip as timestamped waypoints.
///
/// Invariants: at least two waypoints, strictly increasing times, and no
/// two consecutive waypoints more than [`MAX_WAYPOINT_SPACING_M`] apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedRoute {
    waypoints: Vec<TimedWaypoint>,
}

impl TimedRoute {
    pub fn new(waypoints: Vec<TimedWaypoint>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::InvalidRoute(format!(
                "{} waypoints, need at least 2",
                waypoints.len()
            )));
        }
        for (i, w) in waypoints.iter().enumerate() {
            if !w.point.is_valid() {
                return Err(Error::InvalidCoordinate {
                    lat: w.point.lat,
                    lon: w.point.lon,
                });
            }
            if !(w.time.is_finite() && w.time >= 0.0) {
                return Err(Error::InvalidRoute(format!(
                    "waypoint {i} has invalid time {}",
                    w.time
                )));
            }
        }
        for (i, pair) in waypoints.windows(2).enumerate() {
            if pair[1].time <= pair[0].time {
                return Err(Error::InvalidRoute(format!(
                    "waypoint times not strictly increasing at index {}",
                    i + 1
                )));
            }
            let gap = haversine_distance(pair[0].point, pair[1].point);
            if gap > MAX_WAYPOINT_SPACING_M + SPACING_TOLERANCE_M {
                return Err(Error::InvalidRoute(format!(
                    "waypoints {i} and {} are {gap:.1} m apart (max {MAX_WAYPOINT_SPACING_M} m)",
                    i + 1
                )));
            }
        }
        Ok(TimedRoute { waypoints })
    }

    /// Straight great-circle route from `from` to `to`, departing at
    /// `depart` and driven at constant `speed_mps`, densified so that
    /// consecutive waypoints are at most `max_spacing_m` apart.
    pub fn straight_line(
        from: GeoPoint,
        to: GeoPoint,
        depart: f64,
        speed_mps: f64,
        max_spacing_m: f64,
    ) -> Result<Self> {
        if !(speed_mps > 0.0 && speed_mps.is_finite()) {
            return Err(Error::InvalidArgument(format!("speed {speed_mps} m/s")));
        }
        if !(max_spacing_m > 0.0 && max_spacing_m <= MAX_WAYPOINT_SPACING_M) {
            return Err(Error::InvalidArgument(format!(
                "waypoint spacing {max_spacing_m} m"
            )));
        }
        let length = haversine_distance(from, to);
        if length <= 0.0 {
            return Err(Error::InvalidRoute("zero-length route".into()));
        }
        let segments = (length / max_spacing_m).ceil().max(1.0) as usize;
        let duration = length / speed_mps;
        let waypoints = (0..=segments)
            .map(|i| {
                let f = i as f64 / segments as f64;
                let point = match i {
                    0 => from,
                    _ if i == segments => to,
                    _ => interpolate(from, to, f),
                };
                TimedWaypoint {
                    point,
                    time: depart + f * duration,
                }
            })
            .collect();
        TimedRoute::new(waypoints)
    }

    pub fn waypoints(&self) -> &[TimedWaypoint] {
        &self.waypoints
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn origin(&self) -> GeoPoint {
        self.waypoints[0].point
    }

    pub fn destination(&self) -> GeoPoint {
        self.waypoints[self.waypoints.len() - 1].point
    }

    pub fn departure_time(&self) -> f64 {
        self.waypoints[0].time
    }

    pub fn arrival_time(&self) -> f64 {
        self.waypoints[self.waypoints.len() - 1].time
    }

    pub fn duration(&self) -> f64 {
        self.arrival_time() - self.departure_time()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestPoint {
    pub index: usize,
    pub distance: f64,
    pub arrival_time: f64,
}

/// Waypoint at position `>= from_index` closest to `p`, ties resolved to the
/// smallest index. `None` when `from_index` is past the end of the route.
pub fn nearest_point_on_route(
    route: &TimedRoute,
    p: GeoPoint,
    from_index: usize,
) -> Option<NearestPoint> {
    let mut best: Option<NearestPoint> = None;
    for (index, w) in route.waypoints().iter().enumerate().skip(from_index) {
        let distance = haversine_distance(w.point, p);
        if best.is_none_or(|b| distance < b.distance) {
            best = Some(NearestPoint {
                index,
                distance,
                arrival_time: w.time,
            });
        }
    }
    best
}

/// Uniform lat/lon grid mapping cells to the trips whose waypoints fall in
/// them. Built once and read-only afterwards.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell_size_m: f64,
    cell_lat_deg: f64,
    cell_lon_deg: f64,
    bounds: Option<BoundingBox>,
    cells: HashMap<(i64, i64), Vec<TripId>>,
}

impl GridIndex {
    pub fn build<'a, I>(routes: I, cell_size_m: f64) -> Result<Self>
    where
        I: IntoIterator<Item = (TripId, &'a TimedRoute)>,
    {
        if !(cell_size_m > 0.0 && cell_size_m.is_finite()) {
            return Err(Error::InvalidArgument(format!("cell size {cell_size_m} m")));
        }
        let routes: Vec<_> = routes.into_iter().collect();
        let bounds = BoundingBox::enclosing(
            routes
                .iter()
                .flat_map(|(_, r)| r.waypoints().iter().map(|w| &w.point)),
        );
        let cell_lat_deg = (cell_size_m / EARTH_RADIUS_M).to_degrees();
        let ref_lat = bounds.map_or(0.0, |b| b.center().lat);
        let cell_lon_deg = cell_lat_deg / ref_lat.to_radians().cos().max(0.01);

        let mut index = GridIndex {
            cell_size_m,
            cell_lat_deg,
            cell_lon_deg,
            bounds,
            cells: HashMap::new(),
        };
        for (id, route) in routes {
            for w in route.waypoints() {
                let cell = index.cell_of(w.point);
                index.cells.entry(cell).or_default().push(id);
            }
        }
        for ids in index.cells.values_mut() {
            ids.sort_unstable();
            ids.dedup();
        }
        Ok(index)
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size_m
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    fn origin(&self) -> (f64, f64) {
        self.bounds.map_or((0.0, 0.0), |b| (b.min_lat, b.min_lon))
    }

    fn cell_of(&self, p: GeoPoint) -> (i64, i64) {
        let (lat0, lon0) = self.origin();
        (
            ((p.lat - lat0) / self.cell_lat_deg).floor() as i64,
            ((p.lon - lon0) / self.cell_lon_deg).floor() as i64,
        )
    }

    /// Trips with at least one waypoint possibly within `radius_m` of
    /// `center`, sorted and without duplicates. May contain false
    /// positives, never false negatives.
    pub fn query(&self, center: GeoPoint, radius_m: f64) -> Vec<TripId> {
        let mut out = Vec::new();
        let Some(bounds) = self.bounds else {
            return out;
        };
        if radius_m.is_nan() || radius_m <= 0.0 {
            return out;
        }
        let (lat_lo, lat_hi, lon_window) = search_window(center, radius_m);
        let lat_lo = lat_lo.max(bounds.min_lat);
        let lat_hi = lat_hi.min(bounds.max_lat);
        let (lon_lo, lon_hi) = match lon_window {
            Some((lo, hi)) => (lo.max(bounds.min_lon), hi.min(bounds.max_lon)),
            None => (bounds.min_lon, bounds.max_lon),
        };
        if lat_lo > lat_hi || lon_lo > lon_hi {
            return out;
        }
        let (r0, c0) = self.cell_of(GeoPoint {
            lat: lat_lo,
            lon: lon_lo,
        });
        let (r1, c1) = self.cell_of(GeoPoint {
            lat: lat_hi,
            lon: lon_hi,
        });
        // Widen by one cell to absorb floor() rounding at cell borders.
        for row in (r0 - 1)..=(r1 + 1) {
            for col in (c0 - 1)..=(c1 + 1) {
                if let Some(ids) = self.cells.get(&(row, col)) {
                    out.extend_from_slice(ids);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Conservative lat/lon window enclosing every point within `radius_m` of
/// `center`. The longitude window is `None` when it wraps the antimeridian
/// or reaches a pole.
fn search_window(center: GeoPoint, radius_m: f64) -> (f64, f64, Option<(f64, f64)>) {
    let angular = radius_m / EARTH_RADIUS_M;
    let dlat = angular.to_degrees() * (1.0 + 1e-9) + 1e-12;
    let lat_lo = center.lat - dlat;
    let lat_hi = center.lat + dlat;

    // hav(d) >= cos(lat1) cos(lat2) hav(dlon), so any point within the
    // radius satisfies hav(dlon) <= hav(angular) / (cos(lat1) * min cos(lat2)).
    let min_cos = lat_lo.to_radians().cos().min(lat_hi.to_radians().cos());
    let denom = center.lat.to_radians().cos() * min_cos;
    let lon_window = if lat_lo <= -90.0 || lat_hi >= 90.0 || denom <= 1e-12 {
        None
    } else {
        let h = (angular / 2.0).sin().powi(2) / denom;
        if h >= 1.0 {
            None
        } else {
            let dlon = (2.0 * h.sqrt().asin()).to_degrees() * (1.0 + 1e-9) + 1e-12;
            let (lo, hi) = (center.lon - dlon, center.lon + dlon);
            (lo >= -180.0 && hi <= 180.0).then_some((lo, hi))
        }
    };
    (lat_lo, lat_hi, lon_window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    // Spherical law of cosines, used as an independent reference.
    fn cosine_law(a: GeoPoint, b: GeoPoint) -> f64 {
        let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
        let c = p1.sin() * p2.sin() + p1.cos() * p2.cos() * (b.lon - a.lon).to_radians().cos();
        EARTH_RADIUS_M * c.clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn known_distances() {
        let p = pt(40.7, -74.0);
        assert_eq!(haversine_distance(p, p), 0.0);
        let degree = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        assert!((haversine_distance(pt(0.0, 0.0), pt(0.0, 1.0)) - degree).abs() < 1e-6);
        assert!((degree - 111_194.93).abs() < 0.01);
        let half = EARTH_RADIUS_M * std::f64::consts::PI;
        assert!((haversine_distance(pt(0.0, 0.0), pt(0.0, 180.0)) - half).abs() < 1e-6);
        assert!((haversine_distance(pt(90.0, 0.0), pt(-90.0, 0.0)) - half).abs() < 1e-6);
    }

    #[test]
    fn invalid_coordinates_rejected() {
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, 181.0).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn route_validation() {
        let wp = |lat: f64, t: f64| TimedWaypoint {
            point: pt(lat, 0.0),
            time: t,
        };
        assert!(TimedRoute::new(vec![wp(0.0, 0.0)]).is_err());
        assert!(TimedRoute::new(vec![wp(0.0, 5.0), wp(0.001, 5.0)]).is_err());
        assert!(TimedRoute::new(vec![wp(0.0, 0.0), wp(0.01, 10.0)]).is_err());
        assert!(TimedRoute::new(vec![wp(0.0, 0.0), wp(0.004, 10.0)]).is_ok());
    }

    #[test]
    fn straight_line_route() {
        let (a, b) = (pt(40.65, -74.0), pt(40.75, -73.9));
        let r = TimedRoute::straight_line(a, b, 3_600.0, 10.0, 250.0).unwrap();
        let length = haversine_distance(a, b);
        assert_eq!(r.origin(), a);
        assert_eq!(r.destination(), b);
        assert_eq!(r.departure_time(), 3_600.0);
        assert!((r.duration() - length / 10.0).abs() < 1e-9);
        for w in r.waypoints().windows(2) {
            assert!(haversine_distance(w[0].point, w[1].point) <= 250.0 + 1e-6);
        }
        assert!(TimedRoute::straight_line(a, a, 0.0, 10.0, 250.0).is_err());
        assert!(TimedRoute::straight_line(a, b, 0.0, 10.0, 600.0).is_err());
    }

    #[test]
    fn nearest_point_examples() {
        let r = TimedRoute::straight_line(pt(0.0, 0.0), pt(0.0, 0.02), 0.0, 10.0, 250.0).unwrap();
        let n = nearest_point_on_route(&r, pt(0.0, 0.0), 0).unwrap();
        assert_eq!((n.index, n.distance), (0, 0.0));
        let last = r.len() - 1;
        assert_eq!(
            nearest_point_on_route(&r, pt(0.0, 0.0), 3).unwrap().index,
            3
        );
        assert_eq!(
            nearest_point_on_route(&r, pt(0.0, 0.05), 0).unwrap().index,
            last
        );
        assert!(nearest_point_on_route(&r, pt(0.0, 0.0), r.len()).is_none());
    }

    #[test]
    fn empty_index_returns_nothing() {
        let index = GridIndex::build(std::iter::empty(), 1_000.0).unwrap();
        assert!(index.is_empty());
        assert!(index.query(pt(0.0, 0.0), 5_000.0).is_empty());
        assert!(GridIndex::build(std::iter::empty(), 0.0).is_err());
    }

    fn random_routes(seed: u64, n: usize) -> Vec<(TripId, TimedRoute)> {
        use rand::Rng;
        let mut rng = crate::rng::seeded(seed, &[1]);
        (0..n)
            .map(|i| {
                let a = pt(rng.gen_range(40.6..40.8), rng.gen_range(-74.1..-73.8));
                let b = pt(rng.gen_range(40.6..40.8), rng.gen_range(-74.1..-73.8));
                let r = TimedRoute::straight_line(a, b, 0.0, 8.0, 400.0).unwrap();
                (TripId(i as u32), r)
            })
            .collect()
    }

    #[test]
    fn grid_query_covers_brute_force() {
        use rand::Rng;
        let routes = random_routes(11, 500);
        let index = GridIndex::build(routes.iter().map(|(id, r)| (*id, r)), 1_000.0).unwrap();
        let mut rng = crate::rng::seeded(12, &[2]);
        for _ in 0..100 {
            let c = pt(rng.gen_range(40.55..40.85), rng.gen_range(-74.15..-73.75));
            let radius = rng.gen_range(100.0..10_000.0);
            let got = index.query(c, radius);
            assert!(got.windows(2).all(|w| w[0] < w[1]));
            for (id, r) in &routes {
                let near = r
                    .waypoints()
                    .iter()
                    .any(|w| haversine_distance(w.point, c) <= radius);
                if near {
                    assert!(got.binary_search(id).is_ok(), "trip {id} missing");
                }
            }
        }
    }

    #[test]
    fn grid_query_near_pole() {
        let r =
            TimedRoute::straight_line(pt(89.99, 0.0), pt(89.99, 170.0), 0.0, 10.0, 250.0).unwrap();
        let index = GridIndex::build([(TripId(0), &r)], 1_000.0).unwrap();
        assert_eq!(index.query(pt(90.0, 0.0), 2_000.0), vec![TripId(0)]);
    }

    proptest! {
        #[test]
        fn haversine_metric_properties(
            la in -89.0..89.0f64, lo in -179.0..179.0f64,
            lb in -89.0..89.0f64, mb in -179.0..179.0f64,
        ) {
            let (a, b) = (pt(la, lo), pt(lb, mb));
            let d = haversine_distance(a, b);
            prop_assert!(d >= 0.0);
            prop_assert!(d <= EARTH_RADIUS_M * std::f64::consts::PI + 1e-6);
            prop_assert!((d - haversine_distance(b, a)).abs() < 1e-9);
            if d > 1_000.0 {
                prop_assert!((d - cosine_law(a, b)).abs() < 1e-3 * d.max(1.0));
            }
        }

        #[test]
        fn nearest_point_matches_scan(
            seed in 0u64..1_000, qlat in 40.6..40.8f64, qlon in -74.1..-73.8f64, from in 0usize..30,
        ) {
            let (_, route) = random_routes(seed, 1).pop().unwrap();
            let q = pt(qlat, qlon);
            let got = nearest_point_on_route(&route, q, from);
            let scan = route
                .waypoints()
                .iter()
                .enumerate()
                .skip(from)
                .map(|(i, w)| (i, haversine_distance(w.point, q)))
                .reduce(|best, cur| if cur.1 < best.1 { cur } else { best });
            prop_assert_eq!(got.map(|n| (n.index, n.distance)), scan);
            if let Some(n) = got {
                prop_assert!(n.index >= from);
            }
        }

        #[test]
        fn interpolation_stays_on_segment(
            la in -60.0..60.0f64, lo in -170.0..170.0f64, dlat in -0.5..0.5f64, dlon in -0.5..0.5f64, f in 0.0..1.0f64,
        ) {
            let (a, b) = (pt(la, lo), pt(la + dlat, lo + dlon));
            let m = interpolate(a, b, f);
            let total = haversine_distance(a, b);
            prop_assert!((haversine_distance(a, m) - f * total).abs() < 1e-6);
            prop_assert!((haversine_distance(a, m) + haversine_distance(m, b) - total).abs() < 1e-6);
        }
    }
}
