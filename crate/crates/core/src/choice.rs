//! Ground-truth passenger model used to simulate feedback.
//!
//! A user's utility for a ride is their homophily times the social
//! similarity with the driver plus one category weight per feature group,
//! chosen by the bin the pickup delay and each walking distance fall in.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::UserId;
use crate::matching::CandidateRide;
use crate::ranking::{
    FeatureConfig, Outcome, DELAY_BINS, DROPOFF_BINS, N_FEATURES, PICKUP_BINS, SIM,
};
use crate::trips::{TopicVector, UserRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UserCategory {
    /// Homophilous, prefers short walks and short waits.
    U1,
    /// Homophilous, tolerates long walks and long waits.
    U2,
    /// Heterophilous, prefers short walks and short waits.
    U3,
    /// Heterophilous, tolerates long walks and long waits.
    U4,
}

const LAZY: [f64; 3] = [0.8, 0.15, 0.05];
const ACTIVE: [f64; 3] = [0.05, 0.15, 0.8];

impl UserCategory {
    pub const ALL: [UserCategory; 4] = [
        UserCategory::U1,
        UserCategory::U2,
        UserCategory::U3,
        UserCategory::U4,
    ];

    pub fn homophily(self) -> f64 {
        match self {
            UserCategory::U1 | UserCategory::U2 => 0.9,
            UserCategory::U3 | UserCategory::U4 => 0.1,
        }
    }

    /// Weights of the three bins, shared by walking distances and delay.
    pub fn bin_weights(self) -> [f64; 3] {
        match self {
            UserCategory::U1 | UserCategory::U3 => LAZY,
            UserCategory::U2 | UserCategory::U4 => ACTIVE,
        }
    }

    pub fn others(self) -> [UserCategory; 3] {
        let mut out = [self; 3];
        let mut k = 0;
        for c in Self::ALL {
            if c != self {
                out[k] = c;
                k += 1;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: UserId,
    pub category: UserCategory,
    pub homophily: f64,
    pub omega_t: [f64; 3],
    pub omega_dp: [f64; 3],
    pub omega_dd: [f64; 3],
    pub topics: TopicVector,
    /// Acceptance threshold.
    pub threshold: f64,
}

impl UserProfile {
    pub fn new(
        user_id: UserId,
        category: UserCategory,
        topics: TopicVector,
        threshold: f64,
    ) -> Self {
        let w = category.bin_weights();
        UserProfile {
            user_id,
            category,
            homophily: category.homophily(),
            omega_t: w,
            omega_dp: w,
            omega_dd: w,
            topics,
            threshold,
        }
    }

    pub fn set_category(&mut self, category: UserCategory) {
        *self = UserProfile::new(self.user_id, category, self.topics.clone(), self.threshold);
    }

    /// The utility expressed as weights over ranking features.
    pub fn ground_truth_weights(&self) -> [f64; N_FEATURES] {
        let mut w = [0.0; N_FEATURES];
        w[SIM] = self.homophily;
        w[PICKUP_BINS..PICKUP_BINS + 3].copy_from_slice(&self.omega_dp);
        w[DROPOFF_BINS..DROPOFF_BINS + 3].copy_from_slice(&self.omega_dd);
        w[DELAY_BINS..DELAY_BINS + 3].copy_from_slice(&self.omega_t);
        w
    }
}

pub fn cosine_similarity(a: &TopicVector, b: &TopicVector) -> Result<f64> {
    let (a, b) = (a.as_slice(), b.as_slice());
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "topic dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot / (na * nb)).clamp(0.0, 1.0))
}

fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Median topic similarity between `user` and their friends.
pub fn compute_homophily(user: &UserRecord, population: &[UserRecord]) -> Result<f64> {
    if user.friend_ids.is_empty() {
        return Err(Error::NoFriends(user.user_id));
    }
    let by_id: HashMap<UserId, &UserRecord> = population.iter().map(|u| (u.user_id, u)).collect();
    let sims = user
        .friend_ids
        .iter()
        .map(|f| {
            let friend = by_id.get(f).ok_or_else(|| {
                Error::Data(format!("friend {f} of user {} unknown", user.user_id))
            })?;
            cosine_similarity(&user.topics, &friend.topics)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(median(sims).expect("friend list is non-empty"))
}

// Sum of w_j * 1{value in range j}; range 0 is closed, the others are
// open on the left.
fn binned_term(value: f64, bounds: &[f64; 3], weights: &[f64; 3]) -> Option<f64> {
    let mut total = 0.0;
    let mut hits = 0;
    let mut lower = 0.0;
    for j in 0..3 {
        let inside = if j == 0 {
            value >= lower && value <= bounds[j]
        } else {
            value > lower && value <= bounds[j]
        };
        if inside {
            total += weights[j];
            hits += 1;
        }
        lower = bounds[j];
    }
    (hits == 1).then_some(total)
}

/// Utility of `ride` for `user` given a precomputed similarity to the driver.
pub fn utility_with_similarity(
    user: &UserProfile,
    ride: &CandidateRide,
    sim: f64,
    cfg: &FeatureConfig,
) -> Result<f64> {
    let outside = |what: &str, v: f64| {
        Error::InvalidArgument(format!("{what} {v} lies outside the utility bins"))
    };
    let delay = binned_term(ride.t_p, &cfg.t_bounds, &user.omega_t)
        .ok_or_else(|| outside("t_p", ride.t_p))?;
    let pickup = binned_term(ride.d_p, &cfg.d_bounds, &user.omega_dp)
        .ok_or_else(|| outside("d_p", ride.d_p))?;
    let dropoff = binned_term(ride.d_d, &cfg.d_bounds, &user.omega_dd)
        .ok_or_else(|| outside("d_d", ride.d_d))?;
    Ok(user.homophily * sim + delay + pickup + dropoff)
}

pub fn utility(
    user: &UserProfile,
    ride: &CandidateRide,
    driver_topics: &TopicVector,
    cfg: &FeatureConfig,
) -> Result<f64> {
    let sim = cosine_similarity(&user.topics, driver_topics)?;
    utility_with_similarity(user, ride, sim, cfg)
}

/// How a user picks among several acceptable rides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceRule {
    /// Highest utility above the threshold, earliest position on ties.
    #[default]
    MaxUtility,
    /// First ride in list order above the threshold.
    FirstAboveThreshold,
}

/// Decision on a shown list given the utility of each shown ride.
pub fn choose(utilities: &[f64], threshold: f64, rule: ChoiceRule) -> Outcome {
    let mut above = utilities.iter().enumerate().filter(|(_, &u)| u > threshold);
    let pick = match rule {
        ChoiceRule::FirstAboveThreshold => above.next(),
        ChoiceRule::MaxUtility => above.fold(None, |best: Option<(usize, &f64)>, cur| match best {
            Some(b) if *b.1 >= *cur.1 => Some(b),
            _ => Some(cur),
        }),
    };
    pick.map_or(Outcome::RejectedAll, |(i, _)| Outcome::Accepted(i))
}
