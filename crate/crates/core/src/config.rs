//! Flat key-value run configuration (TOML syntax, unknown keys rejected).
//!
//! Every key is optional; missing keys take the defaults below.
//!
//! ```toml
//! # world
//! seed = 1                      # world generation seed
//! n_users = 56
//! topic_dim = 50
//! friends_per_user = 10
//! topic_density = 0.2           # share of topics a user cares about
//! n_days = 14                   # days of trips in the ride database
//! trips_per_user_day = 5
//! n_hubs = 25
//! hub_jitter_m = 300.0
//! bbox = [40.62, -74.06, 40.80, -73.86]   # min_lat, min_lon, max_lat, max_lon
//! hourly_weights = [ ...24 values... ]
//! speed_kmh = 30.0
//! min_trip_minutes = 20.0
//! waypoint_spacing_m = 250.0
//! cell_size_m = 1000.0
//! # queries and matching
//! cluster_radius_m = 400.0
//! min_query_distance_m = 10000.0
//! min_matches = 15
//! max_queries_per_hour = 100
//! delta_m = 3000.0
//! tau_s = 5400.0
//! same_day_matching = false
//! d_bounds = [1000.0, 2000.0, 3000.0]
//! t_bounds = [1800.0, 3600.0, 5400.0]
//! # experiments
//! sim_days = 20
//! epsilons = [0.0, 0.1, 0.2, 1.0]
//! thresholds = [0.0, 1.0, 2.0]
//! scenario = "static"           # or "dynamic"
//! switch_period_days = 5
//! eta = 0.01
//! list_size = 10
//! n_seeds = 10
//! first_seed = 1
//! choice_rule = "max_utility"   # or "first_above_threshold"
//! ideal_baseline = true
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::choice::ChoiceRule;
use crate::error::{Error, Result};
use crate::geo::BoundingBox;
use crate::ranking::FeatureConfig;
use crate::sim::{ExperimentConfig, Scenario, WorldConfig};
use crate::trips::{PopulationConfig, QueryDerivation, TripGenConfig, DEFAULT_HOURLY_WEIGHTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub n_users: usize,
    pub topic_dim: usize,
    pub friends_per_user: usize,
    pub topic_density: f64,
    pub n_days: u32,
    pub trips_per_user_day: usize,
    pub n_hubs: usize,
    pub hub_jitter_m: f64,
    pub bbox: [f64; 4],
    pub hourly_weights: Vec<f64>,
    pub speed_kmh: f64,
    pub min_trip_minutes: f64,
    pub waypoint_spacing_m: f64,
    pub cell_size_m: f64,

    pub cluster_radius_m: f64,
    pub min_query_distance_m: f64,
    pub min_matches: usize,
    pub max_queries_per_hour: usize,
    pub delta_m: f64,
    pub tau_s: f64,
    pub same_day_matching: bool,
    pub d_bounds: [f64; 3],
    pub t_bounds: [f64; 3],

    pub sim_days: u32,
    pub epsilons: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub scenario: Scenario,
    pub switch_period_days: u32,
    pub eta: f64,
    pub list_size: usize,
    pub n_seeds: usize,
    pub first_seed: u64,
    pub choice_rule: ChoiceRule,
    pub ideal_baseline: bool,
}

impl Default for Config {
    fn default() -> Self {
        let world = WorldConfig::default();
        let exp = ExperimentConfig::default();
        let b = world.trips.bbox;
        Config {
            seed: 1,
            n_users: world.population.n_users,
            topic_dim: world.population.topic_dim,
            friends_per_user: world.population.friends_per_user,
            topic_density: world.population.topic_density,
            n_days: world.trips.n_days,
            trips_per_user_day: world.trips.trips_per_user_day,
            n_hubs: world.trips.n_hubs,
            hub_jitter_m: world.trips.hub_jitter_m,
            bbox: [b.min_lat, b.min_lon, b.max_lat, b.max_lon],
            hourly_weights: DEFAULT_HOURLY_WEIGHTS.to_vec(),
            speed_kmh: world.trips.speed_kmh,
            min_trip_minutes: world.trips.min_duration_s / 60.0,
            waypoint_spacing_m: world.trips.waypoint_spacing_m,
            cell_size_m: world.cell_size_m,
            cluster_radius_m: world.derivation.cluster_radius_m,
            min_query_distance_m: world.derivation.min_distance_m,
            min_matches: world.derivation.min_matches,
            max_queries_per_hour: world.derivation.max_per_hour,
            delta_m: world.derivation.delta_m,
            tau_s: world.derivation.tau_s,
            same_day_matching: world.derivation.same_day,
            d_bounds: exp.features.d_bounds,
            t_bounds: exp.features.t_bounds,
            sim_days: exp.sim_days,
            epsilons: vec![0.0, 0.1, 0.2, 1.0],
            thresholds: vec![0.0, 1.0, 2.0],
            scenario: exp.scenario,
            switch_period_days: exp.switch_period_days,
            eta: exp.eta,
            list_size: exp.list_size,
            n_seeds: 10,
            first_seed: 1,
            choice_rule: exp.choice_rule,
            ideal_baseline: true,
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.into()))
            }
        };
        check(self.n_users >= 2, "n_users must be at least 2")?;
        check(self.topic_dim >= 2, "topic_dim must be at least 2")?;
        check(self.n_days >= 1, "n_days must be at least 1")?;
        check(!self.epsilons.is_empty(), "epsilons must not be empty")?;
        check(!self.thresholds.is_empty(), "thresholds must not be empty")?;
        check(self.n_seeds >= 1, "n_seeds must be at least 1")?;
        check(self.cell_size_m > 0.0, "cell_size_m must be positive")?;
        check(
            self.cluster_radius_m > 0.0,
            "cluster_radius_m must be positive",
        )?;
        check(
            self.delta_m > 0.0 && self.tau_s > 0.0,
            "delta_m and tau_s must be positive",
        )?;
        BoundingBox::new(self.bbox[0], self.bbox[1], self.bbox[2], self.bbox[3])
            .map_err(|e| Error::Config(format!("bbox: {e}")))?;
        self.features()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        for &eps in &self.epsilons {
            self.experiment(eps, self.thresholds[0], self.scenario)
                .validate()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        for &c in &self.thresholds {
            check(c.is_finite() && c >= 0.0, "thresholds must be non-negative")?;
        }
        Ok(())
    }

    pub fn features(&self) -> FeatureConfig {
        FeatureConfig {
            d_bounds: self.d_bounds,
            t_bounds: self.t_bounds,
        }
    }

    pub fn world(&self) -> WorldConfig {
        WorldConfig {
            population: PopulationConfig {
                n_users: self.n_users,
                topic_dim: self.topic_dim,
                friends_per_user: self.friends_per_user,
                topic_density: self.topic_density,
            },
            trips: TripGenConfig {
                n_days: self.n_days,
                bbox: BoundingBox {
                    min_lat: self.bbox[0],
                    min_lon: self.bbox[1],
                    max_lat: self.bbox[2],
                    max_lon: self.bbox[3],
                },
                hourly_weights: self.hourly_weights.clone(),
                trips_per_user_day: self.trips_per_user_day,
                n_hubs: self.n_hubs,
                hub_jitter_m: self.hub_jitter_m,
                speed_kmh: self.speed_kmh,
                min_duration_s: self.min_trip_minutes * 60.0,
                waypoint_spacing_m: self.waypoint_spacing_m,
            },
            derivation: self.derivation(),
            cell_size_m: self.cell_size_m,
        }
    }

    pub fn derivation(&self) -> QueryDerivation {
        QueryDerivation {
            cluster_radius_m: self.cluster_radius_m,
            min_distance_m: self.min_query_distance_m,
            min_matches: self.min_matches,
            max_per_hour: self.max_queries_per_hour,
            delta_m: self.delta_m,
            tau_s: self.tau_s,
            same_day: self.same_day_matching,
        }
    }

    pub fn experiment(&self, epsilon: f64, threshold: f64, scenario: Scenario) -> ExperimentConfig {
        ExperimentConfig {
            sim_days: self.sim_days,
            epsilon,
            threshold,
            list_size: self.list_size,
            scenario,
            switch_period_days: self.switch_period_days,
            eta: self.eta,
            choice_rule: self.choice_rule,
            features: self.features(),
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64)
            .map(|i| self.first_seed + i)
            .collect()
    }
}
