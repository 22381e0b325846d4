//! Ride database, synthetic population and trip generation, endpoint
//! clustering and commuter-query derivation.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{
    haversine_distance, BoundingBox, GeoPoint, GridIndex, TimedRoute, TimedWaypoint,
    EARTH_RADIUS_M, MAX_WAYPOINT_SPACING_M,
};
use crate::ids::{QueryId, TripId, UserId};
use crate::matching::{count_candidates, RideQuery};
use crate::rng::seeded;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// One offered trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub trip_id: TripId,
    pub driver_id: UserId,
    pub route: TimedRoute,
    pub departure_day: u32,
}

impl Trip {
    /// Builds a trip; the day index is derived from the departure time.
    pub fn new(trip_id: TripId, driver_id: UserId, route: TimedRoute) -> Self {
        let departure_day = (route.departure_time() / SECONDS_PER_DAY).floor() as u32;
        Trip {
            trip_id,
            driver_id,
            route,
            departure_day,
        }
    }

    /// Start of the departure day on the simulation clock.
    pub fn day_offset(&self) -> f64 {
        f64::from(self.departure_day) * SECONDS_PER_DAY
    }

    /// Departure time measured from midnight of the departure day.
    pub fn departure_time_of_day(&self) -> f64 {
        self.route.departure_time() - self.day_offset()
    }
}

/// Non-negative topic weights with at least one positive entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicVector(Vec<f64>);

impl TopicVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(
                "topic weights must be finite and non-negative".into(),
            ));
        }
        if !weights.iter().any(|w| *w > 0.0) {
            return Err(Error::ZeroNorm);
        }
        Ok(TopicVector(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: UserId,
    pub topics: TopicVector,
    pub friend_ids: Vec<UserId>,
    pub is_driver: bool,
    pub is_passenger: bool,
}

/// A recurring passenger request derived from a user's own trips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommuterQuery {
    pub query_id: QueryId,
    pub user_id: UserId,
    pub q_sp: GeoPoint,
    pub q_dp: GeoPoint,
    /// Desired departure, seconds after midnight.
    pub q_dt: f64,
    pub hour: u8,
    /// Day of the trip the query was derived from.
    pub source_day: u32,
}

/// Immutable ride database with its spatial index.
#[derive(Debug, Clone)]
pub struct TripStore {
    trips: Vec<Trip>,
    by_id: HashMap<TripId, usize>,
    index: GridIndex,
}

impl TripStore {
    pub fn new(mut trips: Vec<Trip>, cell_size_m: f64) -> Result<Self> {
        trips.sort_by_key(|t| t.trip_id);
        let mut by_id = HashMap::with_capacity(trips.len());
        for (i, t) in trips.iter().enumerate() {
            if by_id.insert(t.trip_id, i).is_some() {
                return Err(Error::Data(format!("duplicate trip id {}", t.trip_id)));
            }
        }
        let index = GridIndex::build(trips.iter().map(|t| (t.trip_id, &t.route)), cell_size_m)?;
        Ok(TripStore {
            trips,
            by_id,
            index,
        })
    }

    /// Trips in ascending id order.
    pub fn trips(&self) -> &[Trip] {
        &self.trips
    }

    pub fn get(&self, id: TripId) -> Option<&Trip> {
        self.by_id.get(&id).map(|&i| &self.trips[i])
    }

    pub fn index(&self) -> &GridIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.trips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trips.is_empty()
    }

    pub fn n_days(&self) -> u32 {
        self.trips
            .iter()
            .map(|t| t.departure_day + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn trips_of_driver(&self, driver: UserId) -> Vec<&Trip> {
        self.trips
            .iter()
            .filter(|t| t.driver_id == driver)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub n_users: usize,
    pub topic_dim: usize,
    pub friends_per_user: usize,
    /// Probability that a topic carries positive weight for a user.
    pub topic_density: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            n_users: 56,
            topic_dim: 50,
            friends_per_user: 10,
            topic_density: 0.2,
        }
    }
}

/// Random users with sparse non-negative topic vectors and random friend
/// sets. Every user both drives and rides.
pub fn generate_population(cfg: &PopulationConfig, seed: u64) -> Result<Vec<UserRecord>> {
    if cfg.n_users < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 users, got {}",
            cfg.n_users
        )));
    }
    if cfg.topic_dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 topics, got {}",
            cfg.topic_dim
        )));
    }
    if !(cfg.topic_density > 0.0 && cfg.topic_density <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "topic density {} outside (0, 1]",
            cfg.topic_density
        )));
    }
    let mut rng = seeded(seed, &[0x0070_6f70]);
    let n_friends = cfg.friends_per_user.min(cfg.n_users - 1);
    let mut users = Vec::with_capacity(cfg.n_users);
    for u in 0..cfg.n_users {
        let mut weights: Vec<f64> = (0..cfg.topic_dim)
            .map(|_| {
                if rng.gen::<f64>() < cfg.topic_density {
                    rng.gen_range(0.05..1.0)
                } else {
                    0.0
                }
            })
            .collect();
        if !weights.iter().any(|w| *w > 0.0) {
            let k = rng.gen_range(0..cfg.topic_dim);
            weights[k] = rng.gen_range(0.05..1.0);
        }
        let others: Vec<u32> = (0..cfg.n_users as u32).filter(|&v| v != u as u32).collect();
        let mut friend_ids: Vec<UserId> = others
            .choose_multiple(&mut rng, n_friends)
            .map(|&v| UserId(v))
            .collect();
        friend_ids.sort_unstable();
        users.push(UserRecord {
            user_id: UserId(u as u32),
            topics: TopicVector::new(weights)?,
            friend_ids,
            is_driver: true,
            is_passenger: true,
        });
    }
    Ok(users)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripGenConfig {
    pub n_days: u32,
    pub bbox: BoundingBox,
    pub hourly_weights: Vec<f64>,
    pub trips_per_user_day: usize,
    pub n_hubs: usize,
    /// Endpoints are drawn uniformly within this distance of their hub.
    pub hub_jitter_m: f64,
    pub speed_kmh: f64,
    /// Trips shorter than this are discarded and redrawn.
    pub min_duration_s: f64,
    pub waypoint_spacing_m: f64,
}

/// Midday-peaked departure profile over the 24 hours of the day.
pub const DEFAULT_HOURLY_WEIGHTS: [f64; 24] = [
    0.5, 0.3, 0.2, 0.2, 0.3, 0.6, 1.5, 3.0, 4.5, 5.0, 5.5, 6.5, 7.5, 7.5, 7.0, 6.5, 6.0, 6.0, 5.0,
    4.0, 3.0, 2.0, 1.5, 1.0,
];

impl Default for TripGenConfig {
    fn default() -> Self {
        TripGenConfig {
            n_days: 14,
            bbox: BoundingBox {
                min_lat: 40.62,
                min_lon: -74.06,
                max_lat: 40.80,
                max_lon: -73.86,
            },
            hourly_weights: DEFAULT_HOURLY_WEIGHTS.to_vec(),
            trips_per_user_day: 5,
            n_hubs: 25,
            hub_jitter_m: 300.0,
            speed_kmh: 30.0,
            min_duration_s: 20.0 * 60.0,
            waypoint_spacing_m: 250.0,
        }
    }
}

impl TripGenConfig {
    pub fn speed_mps(&self) -> f64 {
        self.speed_kmh / 3.6
    }

    fn validate(&self) -> Result<()> {
        BoundingBox::new(
            self.bbox.min_lat,
            self.bbox.min_lon,
            self.bbox.max_lat,
            self.bbox.max_lon,
        )?;
        if self.hourly_weights.len() != 24 {
            return Err(Error::InvalidArgument(format!(
                "expected 24 hourly weights, got {}",
                self.hourly_weights.len()
            )));
        }
        if self
            .hourly_weights
            .iter()
            .any(|w| !w.is_finite() || *w < 0.0)
            || !self.hourly_weights.iter().any(|w| *w > 0.0)
        {
            return Err(Error::InvalidArgument(
                "hourly weights must be non-negative and not all zero".into(),
            ));
        }
        if self.n_hubs < 2 {
            return Err(Error::InvalidArgument("need at least 2 hubs".into()));
        }
        let positive = |v: f64| v > 0.0;
        let non_negative = |v: f64| v >= 0.0;
        if !positive(self.speed_kmh)
            || !non_negative(self.min_duration_s)
            || !non_negative(self.hub_jitter_m)
        {
            return Err(Error::InvalidArgument(
                "speed, minimum duration and jitter must be non-negative".into(),
            ));
        }
        if !(self.waypoint_spacing_m > 0.0 && self.waypoint_spacing_m <= MAX_WAYPOINT_SPACING_M) {
            return Err(Error::InvalidArgument(format!(
                "waypoint spacing {} m outside (0, {MAX_WAYPOINT_SPACING_M}]",
                self.waypoint_spacing_m
            )));
        }
        Ok(())
    }
}

/// Hub locations drawn uniformly inside the bounding box.
pub fn generate_hubs(cfg: &TripGenConfig, seed: u64) -> Vec<GeoPoint> {
    let mut rng = seeded(seed, &[0x0068_7562]);
    (0..cfg.n_hubs)
        .map(|_| GeoPoint {
            lat: rng.gen_range(cfg.bbox.min_lat..cfg.bbox.max_lat),
            lon: rng.gen_range(cfg.bbox.min_lon..cfg.bbox.max_lon),
        })
        .collect()
}

fn jitter(rng: &mut ChaCha8Rng, hub: GeoPoint, radius_m: f64) -> GeoPoint {
    if radius_m <= 0.0 {
        return hub;
    }
    let r = radius_m * rng.gen::<f64>().sqrt();
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let dlat = (r * theta.sin() / EARTH_RADIUS_M).to_degrees();
    let dlon = (r * theta.cos() / (EARTH_RADIUS_M * hub.lat.to_radians().cos())).to_degrees();
    GeoPoint {
        lat: (hub.lat + dlat).clamp(-90.0, 90.0),
        lon: (hub.lon + dlon).clamp(-180.0, 180.0),
    }
}

const MAX_REDRAWS: usize = 10_000;

/// Synthetic trips for every driver in the population.
///
/// Departure hours follow `hourly_weights`; origin and destination are
/// jittered hub locations joined by a straight densified route driven at
/// constant speed. Trips shorter than `min_duration_s` are redrawn.
pub fn generate_trips(
    population: &[UserRecord],
    cfg: &TripGenConfig,
    seed: u64,
) -> Result<Vec<Trip>> {
    cfg.validate()?;
    let hubs = generate_hubs(cfg, seed);
    let mut rng = seeded(seed, &[0x7472_6970]);
    let hours = WeightedIndex::new(&cfg.hourly_weights)
        .map_err(|e| Error::InvalidArgument(format!("hourly weights: {e}")))?;
    let speed = cfg.speed_mps();
    let mut trips = Vec::new();
    let mut next_id = 0u32;
    for day in 0..cfg.n_days {
        for user in population.iter().filter(|u| u.is_driver) {
            for _ in 0..cfg.trips_per_user_day {
                let hour = hours.sample(&mut rng);
                let depart = f64::from(day) * SECONDS_PER_DAY
                    + hour as f64 * 3600.0
                    + rng.gen_range(0.0..3600.0);
                let route = draw_route(&mut rng, &hubs, cfg, depart, speed)?;
                trips.push(Trip::new(TripId(next_id), user.user_id, route));
                next_id += 1;
            }
        }
    }
    Ok(trips)
}

fn draw_route(
    rng: &mut ChaCha8Rng,
    hubs: &[GeoPoint],
    cfg: &TripGenConfig,
    depart: f64,
    speed: f64,
) -> Result<TimedRoute> {
    for _ in 0..MAX_REDRAWS {
        let a = rng.gen_range(0..hubs.len());
        let b = rng.gen_range(0..hubs.len());
        if a == b {
            continue;
        }
        let from = jitter(rng, hubs[a], cfg.hub_jitter_m);
        let to = jitter(rng, hubs[b], cfg.hub_jitter_m);
        if haversine_distance(from, to) / speed < cfg.min_duration_s {
            continue;
        }
        return TimedRoute::straight_line(from, to, depart, speed, cfg.waypoint_spacing_m);
    }
    Err(Error::InvalidArgument(format!(
        "no hub pair yields a trip of at least {} s; enlarge the bounding box",
        cfg.min_duration_s
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub leader: GeoPoint,
    pub centroid: GeoPoint,
    /// Indices into the clustered input.
    pub members: Vec<usize>,
}

/// Leader clustering in input order: each point joins the first cluster
/// whose leader lies within `radius_m`, otherwise it founds a new one.
pub fn cluster_endpoints(points: &[GeoPoint], radius_m: f64) -> Result<Vec<Cluster>> {
    if radius_m.is_nan() || radius_m <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "cluster radius {radius_m} m"
        )));
    }
    let mut clusters: Vec<Cluster> = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        match clusters
            .iter_mut()
            .find(|c| haversine_distance(c.leader, p) <= radius_m)
        {
            Some(c) => c.members.push(i),
            None => clusters.push(Cluster {
                leader: p,
                centroid: p,
                members: vec![i],
            }),
        }
    }
    for c in &mut clusters {
        let n = c.members.len() as f64;
        let (lat, lon) = c.members.iter().fold((0.0, 0.0), |(la, lo), &i| {
            (la + points[i].lat, lo + points[i].lon)
        });
        c.centroid = GeoPoint {
            lat: lat / n,
            lon: lon / n,
        };
    }
    Ok(clusters)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDerivation {
    pub cluster_radius_m: f64,
    pub min_distance_m: f64,
    pub min_matches: usize,
    pub max_per_hour: usize,
    pub delta_m: f64,
    pub tau_s: f64,
    /// Restrict matching to trips on the query's own day.
    pub same_day: bool,
}

impl Default for QueryDerivation {
    fn default() -> Self {
        QueryDerivation {
            cluster_radius_m: 400.0,
            min_distance_m: 10_000.0,
            min_matches: 15,
            max_per_hour: 100,
            delta_m: 3_000.0,
            tau_s: 5_400.0,
            same_day: false,
        }
    }
}

impl QueryDerivation {
    pub fn ride_query(&self, q: &CommuterQuery, day: Option<u32>) -> RideQuery {
        RideQuery {
            user_id: q.user_id,
            q_sp: q.q_sp,
            q_dp: q.q_dp,
            q_dt: q.q_dt,
            day,
            delta: self.delta_m,
            tau: self.tau_s,
        }
    }

    fn matching_day(&self, q: &CommuterQuery) -> Option<u32> {
        self.same_day.then_some(q.source_day)
    }

    /// Whether `q` passes the distance and match-count filters.
    pub fn is_feasible(&self, q: &CommuterQuery, store: &TripStore) -> bool {
        haversine_distance(q.q_sp, q.q_dp) >= self.min_distance_m
            && count_candidates(&self.ride_query(q, self.matching_day(q)), store)
                >= self.min_matches
    }
}

/// Commuter queries for one user.
///
/// Origins and destinations of the user's trips are clustered together;
/// each trip yields the query (origin centroid, destination centroid,
/// departure time of day). Duplicates, short requests and requests with too
/// few matches are dropped, then at most `max_per_hour` queries per hour are
/// kept by seeded uniform sampling. Query ids are left at zero.
pub fn derive_queries(
    user: &UserRecord,
    user_trips: &[&Trip],
    store: &TripStore,
    params: &QueryDerivation,
    seed: u64,
) -> Result<Vec<CommuterQuery>> {
    let endpoints: Vec<GeoPoint> = user_trips
        .iter()
        .flat_map(|t| [t.route.origin(), t.route.destination()])
        .collect();
    let clusters = cluster_endpoints(&endpoints, params.cluster_radius_m)?;
    let mut centroid_of = vec![GeoPoint { lat: 0.0, lon: 0.0 }; endpoints.len()];
    for c in &clusters {
        for &m in &c.members {
            centroid_of[m] = c.centroid;
        }
    }

    let mut seen = Vec::new();
    let mut feasible = Vec::new();
    for (i, trip) in user_trips.iter().enumerate() {
        let q_dt = trip.departure_time_of_day();
        let q = CommuterQuery {
            query_id: QueryId(0),
            user_id: user.user_id,
            q_sp: centroid_of[2 * i],
            q_dp: centroid_of[2 * i + 1],
            q_dt,
            hour: ((q_dt / 3600.0).floor() as u8).min(23),
            source_day: trip.departure_day,
        };
        let key = (
            q.q_sp.lat.to_bits(),
            q.q_sp.lon.to_bits(),
            q.q_dp.lat.to_bits(),
            q.q_dp.lon.to_bits(),
            q.q_dt.to_bits(),
        );
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        if params.is_feasible(&q, store) {
            feasible.push(q);
        }
    }
    let mut rng = seeded(seed, &[0x7175_6572, u64::from(user.user_id.0)]);
    Ok(cap_per_hour(feasible, params.max_per_hour, &mut rng))
}

/// Keeps at most `max_per_hour` queries in each hour, chosen uniformly at
/// random; survivors keep their input order.
pub fn cap_per_hour<R: Rng>(
    queries: Vec<CommuterQuery>,
    max_per_hour: usize,
    rng: &mut R,
) -> Vec<CommuterQuery> {
    let mut by_hour: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, q) in queries.iter().enumerate() {
        by_hour.entry(q.hour).or_default().push(i);
    }
    let mut keep = vec![false; queries.len()];
    for idx in by_hour.values() {
        if idx.len() <= max_per_hour {
            idx.iter().for_each(|&i| keep[i] = true);
        } else {
            for &i in idx.choose_multiple(rng, max_per_hour) {
                keep[i] = true;
            }
        }
    }
    queries
        .into_iter()
        .zip(keep)
        .filter_map(|(q, k)| k.then_some(q))
        .collect()
}

/// Queries for every passenger, ids assigned in (user, derivation) order.
pub fn derive_all_queries(
    population: &[UserRecord],
    store: &TripStore,
    params: &QueryDerivation,
    seed: u64,
) -> Result<Vec<CommuterQuery>> {
    let mut out = Vec::new();
    for user in population.iter().filter(|u| u.is_passenger) {
        let own = store.trips_of_driver(user.user_id);
        out.extend(derive_queries(user, &own, store, params, seed)?);
    }
    for (i, q) in out.iter_mut().enumerate() {
        q.query_id = QueryId(i as u32);
    }
    Ok(out)
}

// CSV I/O

const TRIP_HEADER: [&str; 6] = ["trip_id", "driver_id", "seq", "lat", "lon", "unix_time"];
const QUERY_HEADER: [&str; 9] = [
    "query_id",
    "user_id",
    "sp_lat",
    "sp_lon",
    "dp_lat",
    "dp_lon",
    "q_dt",
    "hour",
    "source_day",
];

/// CSV writer that emits `header` even when no rows follow.
pub(crate) fn csv_writer<W: Write>(writer: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    w.write_record(header)?;
    Ok(w)
}

#[derive(Debug, Serialize, Deserialize)]
struct WaypointRow {
    trip_id: u32,
    driver_id: u32,
    seq: usize,
    lat: f64,
    lon: f64,
    unix_time: f64,
}

/// One row per waypoint: `trip_id,driver_id,seq,lat,lon,unix_time`.
pub fn write_trips_csv<W: Write>(trips: &[Trip], writer: W) -> Result<()> {
    let mut w = csv_writer(writer, &TRIP_HEADER)?;
    for t in trips {
        for (seq, wp) in t.route.waypoints().iter().enumerate() {
            w.serialize(WaypointRow {
                trip_id: t.trip_id.0,
                driver_id: t.driver_id.0,
                seq,
                lat: wp.point.lat,
                lon: wp.point.lon,
                unix_time: wp.time,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trips_csv<R: Read>(reader: R) -> Result<Vec<Trip>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.iter().ne(TRIP_HEADER) {
        return Err(Error::Data(format!(
            "trip CSV header {:?}, expected {:?}",
            headers.iter().collect::<Vec<_>>(),
            TRIP_HEADER
        )));
    }
    let mut grouped: BTreeMap<u32, (u32, Vec<(usize, TimedWaypoint)>)> = BTreeMap::new();
    for row in r.deserialize() {
        let row: WaypointRow = row?;
        let point = GeoPoint::new(row.lat, row.lon)?;
        let entry = grouped
            .entry(row.trip_id)
            .or_insert_with(|| (row.driver_id, Vec::new()));
        if entry.0 != row.driver_id {
            return Err(Error::Data(format!(
                "trip {} lists drivers {} and {}",
                row.trip_id, entry.0, row.driver_id
            )));
        }
        entry.1.push((
            row.seq,
            TimedWaypoint {
                point,
                time: row.unix_time,
            },
        ));
    }
    grouped
        .into_iter()
        .map(|(id, (driver, mut wps))| {
            wps.sort_by_key(|(seq, _)| *seq);
            if wps.iter().enumerate().any(|(i, (seq, _))| *seq != i) {
                return Err(Error::Data(format!("trip {id} has gaps in its sequence")));
            }
            let route = TimedRoute::new(wps.into_iter().map(|(_, w)| w).collect())
                .map_err(|e| Error::Data(format!("trip {id}: {e}")))?;
            Ok(Trip::new(TripId(id), UserId(driver), route))
        })
        .collect()
}

/// `user_id,topic_0,...,topic_{D-1},friends` with `;`-separated friend ids.
pub fn write_users_csv<W: Write>(users: &[UserRecord], writer: W) -> Result<()> {
    let dim = users.first().map_or(0, |u| u.topics.dim());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["user_id".to_string()];
    header.extend((0..dim).map(|k| format!("topic_{k}")));
    header.push("friends".into());
    w.write_record(&header)?;
    for u in users {
        if u.topics.dim() != dim {
            return Err(Error::InvalidArgument(
                "users differ in topic dimension".into(),
            ));
        }
        let mut rec = vec![u.user_id.to_string()];
        rec.extend(u.topics.as_slice().iter().map(|v| v.to_string()));
        rec.push(
            u.friend_ids
                .iter()
                .map(|f| f.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_users_csv<R: Read>(reader: R) -> Result<Vec<UserRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let n = headers.len();
    let well_formed = n >= 3
        && &headers[0] == "user_id"
        && &headers[n - 1] == "friends"
        && (1..n - 1).all(|k| headers[k] == format!("topic_{}", k - 1));
    if !well_formed {
        return Err(Error::Data("malformed user CSV header".into()));
    }
    let mut users = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse_err = |what: &str| Error::Data(format!("user CSV: bad {what} in {rec:?}"));
        let user_id: UserId = rec[0].parse().map_err(|_| parse_err("user_id"))?;
        let topics = (1..n - 1)
            .map(|k| rec[k].trim().parse::<f64>().map_err(|_| parse_err("topic")))
            .collect::<Result<Vec<_>>>()?;
        let friend_ids = rec[n - 1]
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.parse::<UserId>().map_err(|_| parse_err("friend id")))
            .collect::<Result<Vec<_>>>()?;
        if friend_ids.contains(&user_id) {
            return Err(Error::Data(format!(
                "user {user_id} lists itself as friend"
            )));
        }
        users.push(UserRecord {
            user_id,
            topics: TopicVector::new(topics)
                .map_err(|e| Error::Data(format!("user {user_id}: {e}")))?,
            friend_ids,
            is_driver: true,
            is_passenger: true,
        });
    }
    Ok(users)
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryRow {
    query_id: u32,
    user_id: u32,
    sp_lat: f64,
    sp_lon: f64,
    dp_lat: f64,
    dp_lon: f64,
    q_dt: f64,
    hour: u8,
    source_day: u32,
}

pub fn write_queries_csv<W: Write>(queries: &[CommuterQuery], writer: W) -> Result<()> {
    let mut w = csv_writer(writer, &QUERY_HEADER)?;
    for q in queries {
        w.serialize(QueryRow {
            query_id: q.query_id.0,
            user_id: q.user_id.0,
            sp_lat: q.q_sp.lat,
            sp_lon: q.q_sp.lon,
            dp_lat: q.q_dp.lat,
            dp_lon: q.q_dp.lon,
            q_dt: q.q_dt,
            hour: q.hour,
            source_day: q.source_day,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_queries_csv<R: Read>(reader: R) -> Result<Vec<CommuterQuery>> {
    let mut r = csv::Reader::from_reader(reader);
    if r.headers()?.iter().ne(QUERY_HEADER) {
        return Err(Error::Data("malformed query CSV header".into()));
    }
    r.deserialize()
        .map(|row| {
            let row: QueryRow = row?;
            Ok(CommuterQuery {
                query_id: QueryId(row.query_id),
                user_id: UserId(row.user_id),
                q_sp: GeoPoint::new(row.sp_lat, row.sp_lon)?,
                q_dp: GeoPoint::new(row.dp_lat, row.dp_lon)?,
                q_dt: row.q_dt,
                hour: row.hour,
                source_day: row.source_day,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn small_population(n: usize) -> Vec<UserRecord> {
        generate_population(
            &PopulationConfig {
                n_users: n,
                ..PopulationConfig::default()
            },
            5,
        )
        .unwrap()
    }

    #[test]
    fn default_population_invariants() {
        let users = generate_population(&PopulationConfig::default(), 1).unwrap();
        assert_eq!(users.len(), 56);
        for (i, u) in users.iter().enumerate() {
            assert_eq!(u.user_id, UserId(i as u32));
            assert_eq!(u.topics.dim(), 50);
            assert!(u.topics.as_slice().iter().all(|w| *w >= 0.0));
            assert!(u.topics.as_slice().iter().any(|w| *w > 0.0));
            assert_eq!(u.friend_ids.len(), 10);
            assert!(u.friend_ids.windows(2).all(|w| w[0] < w[1]));
            assert!(!u.friend_ids.contains(&u.user_id));
            assert!(u.friend_ids.iter().all(|f| (f.0 as usize) < 56));
        }
        assert_eq!(
            users,
            generate_population(&PopulationConfig::default(), 1).unwrap()
        );
        assert_ne!(
            users,
            generate_population(&PopulationConfig::default(), 2).unwrap()
        );
    }

    #[test]
    fn two_users_are_mutual_friends() {
        let users = small_population(2);
        assert_eq!(users[0].friend_ids, vec![UserId(1)]);
        assert_eq!(users[1].friend_ids, vec![UserId(0)]);
        assert!(generate_population(
            &PopulationConfig {
                n_users: 1,
                ..PopulationConfig::default()
            },
            1
        )
        .is_err());
    }

    #[test]
    fn topic_vector_validation() {
        assert!(TopicVector::new(vec![0.0, 0.0]).is_err());
        assert!(TopicVector::new(vec![-0.1, 1.0]).is_err());
        assert!(TopicVector::new(vec![0.0, 0.3]).is_ok());
    }

    #[test]
    fn fifteen_km_at_thirty_kmh_takes_half_an_hour() {
        let a = pt(40.65, -74.0);
        let b = GeoPoint {
            lat: 40.65 + (15_000.0 / EARTH_RADIUS_M).to_degrees(),
            lon: -74.0,
        };
        let cfg = TripGenConfig::default();
        let r = TimedRoute::straight_line(a, b, 0.0, cfg.speed_mps(), 250.0).unwrap();
        assert!((r.duration() - 1_800.0).abs() < 1e-6);
        assert_eq!(r.len(), 61);
    }

    #[test]
    fn generated_trips_respect_configuration() {
        let users = small_population(10);
        let cfg = TripGenConfig {
            n_days: 3,
            ..TripGenConfig::default()
        };
        let trips = generate_trips(&users, &cfg, 9).unwrap();
        assert_eq!(trips.len(), 10 * 3 * 5);
        for t in &trips {
            assert!(t.route.duration() >= cfg.min_duration_s);
            assert!(t.departure_day < 3);
            assert!((0.0..SECONDS_PER_DAY).contains(&t.departure_time_of_day()));
            for w in t.route.waypoints() {
                assert!(w.point.is_valid());
            }
        }
        assert_eq!(trips, generate_trips(&users, &cfg, 9).unwrap());
    }

    #[test]
    fn point_mass_hour() {
        let users = small_population(10);
        let mut weights = vec![0.0; 24];
        weights[12] = 1.0;
        let cfg = TripGenConfig {
            n_days: 2,
            hourly_weights: weights,
            ..TripGenConfig::default()
        };
        for t in generate_trips(&users, &cfg, 3).unwrap() {
            let tod = t.departure_time_of_day();
            assert!((12.0 * 3600.0..13.0 * 3600.0).contains(&tod), "{tod}");
        }
    }

    #[test]
    fn hourly_histogram_follows_weights() {
        let users = small_population(100);
        let cfg = TripGenConfig {
            n_days: 1,
            trips_per_user_day: 100,
            ..TripGenConfig::default()
        };
        let trips = generate_trips(&users, &cfg, 4).unwrap();
        let n = trips.len() as f64;
        assert_eq!(n, 10_000.0);
        let total: f64 = DEFAULT_HOURLY_WEIGHTS.iter().sum();
        let mut counts = [0usize; 24];
        for t in &trips {
            counts[(t.departure_time_of_day() / 3600.0) as usize] += 1;
        }
        for (h, &c) in counts.iter().enumerate() {
            let p = DEFAULT_HOURLY_WEIGHTS[h] / total;
            let sigma = (n * p * (1.0 - p)).sqrt();
            assert!(
                (c as f64 - n * p).abs() <= 3.0 * sigma,
                "hour {h}: {c} vs {}",
                n * p
            );
        }
    }

    #[test]
    fn tiny_bbox_cannot_meet_minimum_duration() {
        let users = small_population(2);
        let cfg = TripGenConfig {
            bbox: BoundingBox::new(40.70, -74.0, 40.701, -73.999).unwrap(),
            ..TripGenConfig::default()
        };
        assert!(generate_trips(&users, &cfg, 1).is_err());
    }

    #[test]
    fn clustering_examples() {
        let a = pt(40.70, -74.00);
        let near = pt(40.7015, -74.00);
        let far = pt(40.79, -74.00);
        let one = cluster_endpoints(&[a, near], 400.0).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].members, vec![0, 1]);
        assert!((one[0].centroid.lat - 40.70075).abs() < 1e-12);
        let two = cluster_endpoints(&[a, far, near], 400.0).unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two[0].members, vec![0, 2]);
        assert_eq!(two[1].members, vec![1]);
        assert!(cluster_endpoints(&[a], 0.0).is_err());
        assert!(cluster_endpoints(&[], 400.0).unwrap().is_empty());
    }

    fn trip(id: u32, driver: u32, from: GeoPoint, to: GeoPoint, depart: f64) -> Trip {
        let route = TimedRoute::straight_line(from, to, depart, 25.0 / 3.6, 250.0).unwrap();
        Trip::new(TripId(id), UserId(driver), route)
    }

    fn user(id: u32) -> UserRecord {
        UserRecord {
            user_id: UserId(id),
            topics: TopicVector::new(vec![1.0, 0.5]).unwrap(),
            friend_ids: vec![UserId(id + 1)],
            is_driver: true,
            is_passenger: true,
        }
    }

    fn commute_world(n_others: u32, length_deg: f64) -> (TripStore, Vec<Trip>) {
        let (a, b) = (pt(40.62, -74.0), pt(40.62 + length_deg, -74.0));
        let own = trip(0, 0, a, b, 8.0 * 3600.0);
        let mut trips = vec![own.clone()];
        for k in 1..=n_others {
            trips.push(trip(k, k, a, b, 8.0 * 3600.0 + 60.0 * f64::from(k)));
        }
        (TripStore::new(trips, 1_000.0).unwrap(), vec![own])
    }

    #[test]
    fn derivation_filters() {
        let params = QueryDerivation::default();
        let derive = |n_others, len| {
            let (store, own) = commute_world(n_others, len);
            let refs: Vec<&Trip> = own.iter().collect();
            derive_queries(&user(0), &refs, &store, &params, 1).unwrap()
        };
        assert_eq!(derive(15, 0.11).len(), 1);
        assert!(derive(14, 0.11).is_empty());
        assert!(derive(20, 0.072).is_empty());
        let q = &derive(15, 0.11)[0];
        assert_eq!(q.hour, 8);
        assert_eq!(q.q_dt, 8.0 * 3600.0);
    }

    #[test]
    fn duplicate_trips_yield_one_query() {
        let (store, _) = commute_world(20, 0.11);
        let own: Vec<&Trip> = vec![&store.trips()[0], &store.trips()[0]];
        let qs = derive_queries(&user(0), &own, &store, &QueryDerivation::default(), 1).unwrap();
        assert_eq!(qs.len(), 1);
    }

    fn query_at(hour: u8, k: u32) -> CommuterQuery {
        CommuterQuery {
            query_id: QueryId(k),
            user_id: UserId(0),
            q_sp: pt(40.7, -74.0),
            q_dp: pt(40.8, -74.0),
            q_dt: f64::from(hour) * 3600.0 + f64::from(k),
            hour,
            source_day: 0,
        }
    }

    #[test]
    fn hourly_cap() {
        let mut qs: Vec<CommuterQuery> = (0..150).map(|k| query_at(9, k)).collect();
        qs.extend((150..160).map(|k| query_at(10, k)));
        let mut rng = seeded(1, &[]);
        let kept = cap_per_hour(qs, 100, &mut rng);
        assert_eq!(kept.iter().filter(|q| q.hour == 9).count(), 100);
        assert_eq!(kept.iter().filter(|q| q.hour == 10).count(), 10);
        assert!(kept.windows(2).all(|w| w[0].query_id < w[1].query_id));
    }

    #[test]
    fn derived_queries_are_feasible() {
        let users = small_population(20);
        let cfg = TripGenConfig {
            n_days: 4,
            ..TripGenConfig::default()
        };
        let store = TripStore::new(generate_trips(&users, &cfg, 2).unwrap(), 1_000.0).unwrap();
        let params = QueryDerivation {
            min_matches: 3,
            ..QueryDerivation::default()
        };
        let qs = derive_all_queries(&users, &store, &params, 2).unwrap();
        assert!(!qs.is_empty());
        for (i, q) in qs.iter().enumerate() {
            assert_eq!(q.query_id, QueryId(i as u32));
            assert!(params.is_feasible(q, &store));
            assert!(haversine_distance(q.q_sp, q.q_dp) >= params.min_distance_m);
        }
    }

    #[test]
    fn duplicate_trip_ids_rejected() {
        let (store, own) = commute_world(1, 0.11);
        let mut trips = store.trips().to_vec();
        trips.push(own[0].clone());
        assert!(matches!(
            TripStore::new(trips, 1_000.0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn csv_round_trips() {
        let users = small_population(6);
        let cfg = TripGenConfig {
            n_days: 2,
            ..TripGenConfig::default()
        };
        let trips = generate_trips(&users, &cfg, 8).unwrap();
        let mut buf = Vec::new();
        write_trips_csv(&trips, &mut buf).unwrap();
        assert_eq!(read_trips_csv(buf.as_slice()).unwrap(), trips);

        let mut buf = Vec::new();
        write_users_csv(&users, &mut buf).unwrap();
        assert_eq!(read_users_csv(buf.as_slice()).unwrap(), users);

        let qs: Vec<CommuterQuery> = (0..5).map(|k| query_at(7 + k as u8, k)).collect();
        let mut buf = Vec::new();
        write_queries_csv(&qs, &mut buf).unwrap();
        assert_eq!(read_queries_csv(buf.as_slice()).unwrap(), qs);
    }

    #[test]
    fn malformed_csv_rejected() {
        let bad_trips = "trip,driver,seq,lat,lon,time\n0,0,0,40.7,-74.0,0\n";
        assert!(matches!(
            read_trips_csv(bad_trips.as_bytes()),
            Err(Error::Data(_))
        ));
        let gap =
            "trip_id,driver_id,seq,lat,lon,unix_time\n0,0,0,40.7,-74.0,0\n0,0,2,40.701,-74.0,10\n";
        assert!(read_trips_csv(gap.as_bytes()).is_err());
        let bad_users = "user_id,topic_1,friends\n0,1.0,\n";
        assert!(matches!(
            read_users_csv(bad_users.as_bytes()),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            read_queries_csv("query_id,user_id\n".as_bytes()),
            Err(Error::Data(_))
        ));
    }

    proptest! {
        #[test]
        fn leaders_are_separated_and_members_close(
            coords in prop::collection::vec((40.70..40.72f64, -74.01..-73.99f64), 1..100),
        ) {
            let points: Vec<GeoPoint> = coords.iter().map(|&(a, b)| pt(a, b)).collect();
            let clusters = cluster_endpoints(&points, 400.0).unwrap();
            let mut seen = vec![false; points.len()];
            for (ci, c) in clusters.iter().enumerate() {
                for &m in &c.members {
                    prop_assert!(!seen[m]);
                    seen[m] = true;
                    prop_assert!(haversine_distance(c.leader, points[m]) <= 400.0);
                }
                for other in &clusters[..ci] {
                    prop_assert!(haversine_distance(other.leader, c.leader) > 400.0);
                }
            }
            prop_assert!(seen.iter().all(|s| *s));
        }
    }
}
