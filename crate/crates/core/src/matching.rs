//! Candidate-ride retrieval.
//!
//! A trip matches a request when the passenger can walk to the route within
//! `delta` of the origin, leave it within `delta` of the destination further
//! along, and the driver reaches the pickup point no earlier than the
//! desired departure and at most `tau` later. Pickup and drop-off points
//! are the route waypoints nearest to origin and destination.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{nearest_point_on_route, GeoPoint};
use crate::ids::{TripId, UserId};
use crate::trips::{Trip, TripStore};

pub const DEFAULT_DELTA_M: f64 = 3_000.0;
pub const DEFAULT_TAU_S: f64 = 5_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RideQuery {
    pub user_id: UserId,
    pub q_sp: GeoPoint,
    pub q_dp: GeoPoint,
    /// Desired departure, seconds after midnight.
    pub q_dt: f64,
    /// `Some(k)` matches only trips departing on day `k`; `None` matches
    /// trips of any day by time of day.
    pub day: Option<u32>,
    /// Pickup and drop-off area radius, meters.
    pub delta: f64,
    /// Maximum pickup delay, seconds.
    pub tau: f64,
}

impl RideQuery {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "delta {} and tau {} must be positive",
                self.delta, self.tau
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutePoint {
    pub point: GeoPoint,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateRide {
    pub trip_id: TripId,
    pub driver_id: UserId,
    pub pickup: RoutePoint,
    pub dropoff: RoutePoint,
    /// Walk from origin to pickup, meters.
    pub d_p: f64,
    /// Walk from drop-off to destination, meters.
    pub d_d: f64,
    /// Wait between desired departure and driver arrival, seconds.
    pub t_p: f64,
}

/// Evaluates the match predicate for one trip, ignoring the day filter.
pub fn match_trip(query: &RideQuery, trip: &Trip) -> Option<CandidateRide> {
    if trip.driver_id == query.user_id {
        return None;
    }
    let route = &trip.route;
    let pickup = nearest_point_on_route(route, query.q_sp, 0)?;
    if pickup.distance > query.delta {
        return None;
    }
    let t_p = pickup.arrival_time - trip.day_offset() - query.q_dt;
    if !(0.0..=query.tau).contains(&t_p) {
        return None;
    }
    let dropoff = nearest_point_on_route(route, query.q_dp, pickup.index + 1)?;
    if dropoff.distance > query.delta {
        return None;
    }
    let wps = route.waypoints();
    Some(CandidateRide {
        trip_id: trip.trip_id,
        driver_id: trip.driver_id,
        pickup: RoutePoint {
            point: wps[pickup.index].point,
            index: pickup.index,
        },
        dropoff: RoutePoint {
            point: wps[dropoff.index].point,
            index: dropoff.index,
        },
        d_p: pickup.distance,
        d_d: dropoff.distance,
        t_p,
    })
}

fn day_matches(query: &RideQuery, trip: &Trip) -> bool {
    query.day.is_none_or(|d| trip.departure_day == d)
}

// Necessary condition for 0 <= t_p <= tau: the desired departure window
// overlaps the driving window.
fn time_overlaps(query: &RideQuery, trip: &Trip) -> bool {
    let start = trip.route.departure_time() - trip.day_offset();
    let end = trip.route.arrival_time() - trip.day_offset();
    start <= query.q_dt + query.tau && end >= query.q_dt
}

fn sorted_intersection<'a>(a: &'a [TripId], b: &'a [TripId]) -> impl Iterator<Item = TripId> + 'a {
    let mut j = 0;
    a.iter().copied().filter(move |id| {
        while j < b.len() && b[j] < *id {
            j += 1;
        }
        j < b.len() && b[j] == *id
    })
}

/// Candidates in ascending trip-id order. The passenger's own trips are
/// never offered back to them.
pub fn candidates_sorted(query: &RideQuery, store: &TripStore) -> Vec<CandidateRide> {
    let near_origin = store.index().query(query.q_sp, query.delta);
    let near_destination = store.index().query(query.q_dp, query.delta);
    sorted_intersection(&near_origin, &near_destination)
        .filter_map(|id| store.get(id))
        .filter(|t| day_matches(query, t) && time_overlaps(query, t))
        .filter_map(|t| match_trip(query, t))
        .collect()
}

pub fn count_candidates(query: &RideQuery, store: &TripStore) -> usize {
    candidates_sorted(query, store).len()
}

/// Candidate rides in a random order drawn from `rng`.
pub fn find_candidates<R: Rng + ?Sized>(
    query: &RideQuery,
    store: &TripStore,
    rng: &mut R,
) -> Result<Vec<CandidateRide>> {
    query.validate()?;
    let mut out = candidates_sorted(query, store);
    out.shuffle(rng);
    Ok(out)
}
