//! Day-by-day replay of commuter queries against simulated users.
//!
//! Every day each user issues their recurring queries in time-of-day order.
//! The user's ranker builds a recommendation list, the ground-truth choice
//! model accepts a ride or rejects the list, and the ranker learns from the
//! outcome. Two daily metrics are tracked: the mean position of the best
//! available ride in the shown list and the share of accepted requests.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::choice::{
    choose, cosine_similarity, utility_with_similarity, ChoiceRule, UserCategory, UserProfile,
};
use crate::error::{Error, Result};
use crate::ids::{QueryId, UserId};
use crate::matching::candidates_sorted;
use crate::ranking::{
    extract_features, select_indices, FeatureConfig, FeatureVector, Outcome, Ranker,
};
use crate::rng::seeded;
use crate::trips::{
    csv_writer, derive_all_queries, generate_population, generate_trips, CommuterQuery,
    PopulationConfig, QueryDerivation, TripGenConfig, TripStore, UserRecord,
};

const CATEGORY_STREAM: u64 = 0xca7e;
const LIST_STREAM: u64 = 0x1157;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Categories fixed for the whole run.
    Static,
    /// Every user switches to a different category periodically.
    Dynamic,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Static => "static",
            Scenario::Dynamic => "dynamic",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Scenario::Static),
            "dynamic" => Ok(Scenario::Dynamic),
            other => Err(Error::Config(format!(
                "unknown scenario {other:?}, expected static or dynamic"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub sim_days: u32,
    pub epsilon: f64,
    pub threshold: f64,
    pub list_size: usize,
    pub scenario: Scenario,
    pub switch_period_days: u32,
    pub eta: f64,
    pub choice_rule: ChoiceRule,
    pub features: FeatureConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sim_days: 20,
            epsilon: 0.2,
            threshold: 0.0,
            list_size: crate::ranking::DEFAULT_LIST_SIZE,
            scenario: Scenario::Static,
            switch_period_days: 5,
            eta: crate::ranking::DEFAULT_ETA,
            choice_rule: ChoiceRule::MaxUtility,
            features: FeatureConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sim_days < 1 {
            return Err(Error::Config("sim_days must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "epsilon {} outside [0, 1]",
                self.epsilon
            )));
        }
        if self.list_size < 1 {
            return Err(Error::Config("list_size must be at least 1".into()));
        }
        if self.scenario == Scenario::Dynamic && self.switch_period_days < 1 {
            return Err(Error::Config(
                "switch_period_days must be at least 1".into(),
            ));
        }
        if !self.threshold.is_finite() || self.threshold < 0.0 {
            return Err(Error::Config(format!("threshold {}", self.threshold)));
        }
        self.features.validate()?;
        Ranker::new(self.eta, self.epsilon)?;
        Ok(())
    }

    pub fn is_switch_day(&self, day: u32) -> bool {
        self.scenario == Scenario::Dynamic && day > 0 && day.is_multiple_of(self.switch_period_days)
    }
}

/// How the shown list is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankingPolicy {
    /// Per-user online ranker with epsilon-greedy exploration.
    Learned,
    /// Oracle ordering by true utility; nothing is learned.
    Ideal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub population: PopulationConfig,
    pub trips: TripGenConfig,
    pub derivation: QueryDerivation,
    pub cell_size_m: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            population: PopulationConfig::default(),
            trips: TripGenConfig::default(),
            derivation: QueryDerivation::default(),
            cell_size_m: crate::geo::DEFAULT_CELL_SIZE_M,
        }
    }
}

/// Users, ride database and commuter queries.
#[derive(Debug, Clone)]
pub struct World {
    pub population: Vec<UserRecord>,
    pub store: TripStore,
    pub queries: Vec<CommuterQuery>,
    pub derivation: QueryDerivation,
}

impl World {
    pub fn generate(cfg: &WorldConfig, seed: u64) -> Result<Self> {
        let population = generate_population(&cfg.population, seed)?;
        let trips = generate_trips(&population, &cfg.trips, seed)?;
        let store = TripStore::new(trips, cfg.cell_size_m)?;
        let queries = derive_all_queries(&population, &store, &cfg.derivation, seed)?;
        Ok(World {
            population,
            store,
            queries,
            derivation: cfg.derivation.clone(),
        })
    }
}

#[derive(Debug, Clone)]
struct PreparedCandidate {
    features: FeatureVector,
    /// True utility under each category, indexed like `UserCategory::ALL`.
    utilities: [f64; 4],
}

#[derive(Debug, Clone)]
struct PreparedQuery {
    query_id: QueryId,
    /// Candidates in trip-id order; one entry per trip day when matching is
    /// restricted to the same day, a single entry otherwise.
    by_day: Vec<Vec<PreparedCandidate>>,
}

#[derive(Debug, Clone)]
struct PreparedUser {
    user_id: UserId,
    queries: Vec<PreparedQuery>,
}

fn category_slot(c: UserCategory) -> usize {
    UserCategory::ALL
        .iter()
        .position(|&x| x == c)
        .expect("known category")
}

/// A world with every query's candidate set, features and per-category
/// utilities resolved once, so that many runs can share it.
#[derive(Debug, Clone)]
pub struct PreparedWorld {
    users: Vec<PreparedUser>,
    features: FeatureConfig,
}

impl PreparedWorld {
    pub fn new(world: &World, features: &FeatureConfig) -> Result<Self> {
        features.validate()?;
        let by_id: BTreeMap<UserId, &UserRecord> =
            world.population.iter().map(|u| (u.user_id, u)).collect();
        let mut per_user: BTreeMap<UserId, Vec<&CommuterQuery>> = BTreeMap::new();
        for q in &world.queries {
            per_user.entry(q.user_id).or_default().push(q);
        }
        let days: Vec<Option<u32>> = if world.derivation.same_day {
            (0..world.store.n_days().max(1)).map(Some).collect()
        } else {
            vec![None]
        };

        let mut users = Vec::with_capacity(per_user.len());
        for (user_id, mut queries) in per_user {
            let user = by_id
                .get(&user_id)
                .ok_or_else(|| Error::Data(format!("query for unknown user {user_id}")))?;
            queries.sort_by(|a, b| a.q_dt.total_cmp(&b.q_dt).then(a.query_id.cmp(&b.query_id)));
            let profiles: Vec<UserProfile> = UserCategory::ALL
                .iter()
                .map(|&c| UserProfile::new(user_id, c, user.topics.clone(), 0.0))
                .collect();
            let mut prepared = Vec::with_capacity(queries.len());
            for q in queries {
                let mut by_day = Vec::with_capacity(days.len());
                for &day in &days {
                    let rq = world.derivation.ride_query(q, day);
                    rq.validate()?;
                    let cands = candidates_sorted(&rq, &world.store)
                        .into_iter()
                        .map(|ride| {
                            let driver = by_id.get(&ride.driver_id).ok_or_else(|| {
                                Error::Data(format!(
                                    "trip {} has unknown driver {}",
                                    ride.trip_id, ride.driver_id
                                ))
                            })?;
                            let sim = cosine_similarity(&user.topics, &driver.topics)?;
                            let x = extract_features(&ride, sim, features)?;
                            let mut utilities = [0.0; 4];
                            for (slot, p) in profiles.iter().enumerate() {
                                utilities[slot] = utility_with_similarity(p, &ride, sim, features)?;
                            }
                            Ok(PreparedCandidate {
                                features: x,
                                utilities,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    by_day.push(cands);
                }
                prepared.push(PreparedQuery {
                    query_id: q.query_id,
                    by_day,
                });
            }
            users.push(PreparedUser {
                user_id,
                queries: prepared,
            });
        }
        Ok(PreparedWorld {
            users,
            features: *features,
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_queries(&self) -> usize {
        self.users.iter().map(|u| u.queries.len()).sum()
    }

    pub fn user_ids(&self) -> Vec<UserId> {
        self.users.iter().map(|u| u.user_id).collect()
    }

    /// Candidate counts of every query on its first matching day.
    pub fn candidate_counts(&self) -> Vec<usize> {
        self.users
            .iter()
            .flat_map(|u| u.queries.iter().map(|q| q.by_day[0].len()))
            .collect()
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        &self.features
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub day: u32,
    pub user_id: UserId,
    pub query_id: QueryId,
    /// 1-based position of the best ride, `list_size + 1` when not shown.
    pub best_rank: usize,
    pub accepted: bool,
    pub accepted_rank: Option<usize>,
    pub n_candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyMetrics {
    pub day: u32,
    pub mean_best_rank: f64,
    pub success_probability: f64,
    pub reject_ratio: f64,
    pub n_queries: usize,
}

/// Result of one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: Vec<DailyMetrics>,
    pub outcomes: Option<Vec<QueryOutcome>>,
    /// Final rankers of the learned policy, in user order.
    pub rankers: Vec<(UserId, Ranker)>,
    /// Category of every user on every day, `[day][user]`.
    pub categories: Vec<Vec<UserCategory>>,
}

/// 1-based position of the highest-utility candidate in `shown`, or
/// `list_size + 1` when it is absent. `utilities` is indexed in canonical
/// trip-id order and ties go to the earliest candidate.
pub fn best_match_rank(shown: &[usize], utilities: &[f64], list_size: usize) -> usize {
    let best = utilities
        .iter()
        .enumerate()
        .fold(None, |acc: Option<(usize, f64)>, (i, &u)| match acc {
            Some((_, b)) if b >= u => acc,
            _ => Some((i, u)),
        })
        .map(|(i, _)| i);
    best.and_then(|b| shown.iter().position(|&s| s == b))
        .map_or(list_size + 1, |p| p + 1)
}

/// Share of accepted requests.
pub fn success_probability(outcomes: &[QueryOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Empty("no query outcomes"));
    }
    Ok(outcomes.iter().filter(|o| o.accepted).count() as f64 / outcomes.len() as f64)
}

fn daily_metrics(day: u32, outcomes: &[QueryOutcome]) -> DailyMetrics {
    let n = outcomes.len();
    if n == 0 {
        return DailyMetrics {
            day,
            mean_best_rank: f64::NAN,
            success_probability: f64::NAN,
            reject_ratio: f64::NAN,
            n_queries: 0,
        };
    }
    let accepted = outcomes.iter().filter(|o| o.accepted).count();
    let rank_sum: usize = outcomes.iter().map(|o| o.best_rank).sum();
    let success = accepted as f64 / n as f64;
    DailyMetrics {
        day,
        mean_best_rank: rank_sum as f64 / n as f64,
        success_probability: success,
        reject_ratio: (n - accepted) as f64 / n as f64,
        n_queries: n,
    }
}

/// Balanced category assignment: users are shuffled and dealt the four
/// categories in turn.
fn assign_categories(n_users: usize, rng: &mut ChaCha8Rng) -> Vec<UserCategory> {
    let mut order: Vec<usize> = (0..n_users).collect();
    order.shuffle(rng);
    let mut out = vec![UserCategory::U1; n_users];
    for (k, &u) in order.iter().enumerate() {
        out[u] = UserCategory::ALL[k % 4];
    }
    out
}

/// Runs one seed of the experiment.
pub fn run_seed(
    cfg: &ExperimentConfig,
    world: &PreparedWorld,
    seed: u64,
    policy: RankingPolicy,
    record_outcomes: bool,
) -> Result<SeedRun> {
    cfg.validate()?;
    if world.n_queries() == 0 {
        return Err(Error::Empty("query set"));
    }
    let k = cfg.list_size;
    let mut cat_rng = seeded(seed, &[CATEGORY_STREAM]);
    let mut categories = assign_categories(world.users.len(), &mut cat_rng);
    let mut rankers: Vec<Ranker> = world
        .users
        .iter()
        .map(|_| Ranker::new(cfg.eta, cfg.epsilon))
        .collect::<Result<_>>()?;
    let mut list_rngs: Vec<ChaCha8Rng> = world
        .users
        .iter()
        .map(|u| seeded(seed, &[LIST_STREAM, u64::from(u.user_id.0)]))
        .collect();

    let mut metrics = Vec::with_capacity(cfg.sim_days as usize);
    let mut all_outcomes = record_outcomes.then(Vec::new);
    let mut history = Vec::with_capacity(cfg.sim_days as usize);
    let mut day_outcomes = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut shown: Vec<usize> = Vec::with_capacity(k);
    let mut shuffled_feats: Vec<FeatureVector> = Vec::new();

    for day in 0..cfg.sim_days {
        if cfg.is_switch_day(day) {
            for c in categories.iter_mut() {
                let others = c.others();
                *c = others[cat_rng.gen_range(0..others.len())];
            }
        }
        history.push(categories.clone());
        day_outcomes.clear();

        for (ui, user) in world.users.iter().enumerate() {
            let slot = category_slot(categories[ui]);
            let rng = &mut list_rngs[ui];
            let ranker = &mut rankers[ui];
            for q in &user.queries {
                let cands = &q.by_day[day as usize % q.by_day.len()];
                if cands.is_empty() {
                    continue;
                }
                let utilities: Vec<f64> = cands.iter().map(|c| c.utilities[slot]).collect();
                order.clear();
                order.extend(0..cands.len());
                order.shuffle(rng);

                shown.clear();
                match policy {
                    RankingPolicy::Learned => {
                        shuffled_feats.clear();
                        shuffled_feats.extend(order.iter().map(|&i| cands[i].features));
                        let picks = select_indices(ranker, &shuffled_feats, k, rng);
                        shown.extend(picks.into_iter().map(|p| order[p]));
                    }
                    RankingPolicy::Ideal => {
                        let mut by_utility: Vec<usize> = (0..cands.len()).collect();
                        by_utility.sort_by(|&a, &b| utilities[b].total_cmp(&utilities[a]));
                        shown.extend(by_utility.into_iter().take(k));
                    }
                }

                let best_rank = best_match_rank(&shown, &utilities, k);
                let shown_utils: Vec<f64> = shown.iter().map(|&i| utilities[i]).collect();
                let outcome = choose(&shown_utils, cfg.threshold, cfg.choice_rule);
                if policy == RankingPolicy::Learned {
                    let shown_feats: Vec<FeatureVector> =
                        shown.iter().map(|&i| cands[i].features).collect();
                    ranker.process_feedback(&shown_feats, outcome)?;
                }
                let accepted_rank = match outcome {
                    Outcome::Accepted(p) => Some(p + 1),
                    Outcome::RejectedAll => None,
                };
                day_outcomes.push(QueryOutcome {
                    day,
                    user_id: user.user_id,
                    query_id: q.query_id,
                    best_rank,
                    accepted: accepted_rank.is_some(),
                    accepted_rank,
                    n_candidates: cands.len(),
                });
            }
        }
        metrics.push(daily_metrics(day, &day_outcomes));
        if let Some(all) = all_outcomes.as_mut() {
            all.extend(day_outcomes.iter().cloned());
        }
    }

    Ok(SeedRun {
        seed,
        metrics,
        outcomes: all_outcomes,
        rankers: world.users.iter().map(|u| u.user_id).zip(rankers).collect(),
        categories: history,
    })
}

/// Per-day mean and sample standard deviation across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSeedDaily {
    pub day: u32,
    pub mean_best_rank: f64,
    pub std_best_rank: f64,
    pub success_probability: f64,
    pub std_success: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub runs: Vec<SeedRun>,
    pub aggregate: Vec<CrossSeedDaily>,
}

impl ExperimentResult {
    /// Cross-seed mean of the best-match rank over days `[from, to)`.
    pub fn window_mean_rank(&self, from: u32, to: u32) -> f64 {
        window_mean(&self.aggregate, from, to, |d| d.mean_best_rank)
    }

    pub fn window_success(&self, from: u32, to: u32) -> f64 {
        window_mean(&self.aggregate, from, to, |d| d.success_probability)
    }
}

fn window_mean(
    days: &[CrossSeedDaily],
    from: u32,
    to: u32,
    f: impl Fn(&CrossSeedDaily) -> f64,
) -> f64 {
    let vals: Vec<f64> = days
        .iter()
        .filter(|d| d.day >= from && d.day < to)
        .map(f)
        .collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

pub fn aggregate(runs: &[SeedRun]) -> Vec<CrossSeedDaily> {
    let n_days = runs.iter().map(|r| r.metrics.len()).max().unwrap_or(0);
    (0..n_days)
        .map(|d| {
            let ranks: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.metrics.get(d))
                .map(|m| m.mean_best_rank)
                .collect();
            let succ: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.metrics.get(d))
                .map(|m| m.success_probability)
                .collect();
            let (mean_best_rank, std_best_rank) = mean_and_std(&ranks);
            let (success_probability, std_success) = mean_and_std(&succ);
            CrossSeedDaily {
                day: d as u32,
                mean_best_rank,
                std_best_rank,
                success_probability,
                std_success,
                n_seeds: ranks.len(),
            }
        })
        .collect()
}

/// Runs every seed (in parallel) and aggregates the daily metrics.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    world: &PreparedWorld,
    seeds: &[u64],
    policy: RankingPolicy,
    record_outcomes: bool,
) -> Result<ExperimentResult> {
    if seeds.is_empty() {
        return Err(Error::Empty("seed list"));
    }
    let runs = seeds
        .par_iter()
        .map(|&s| run_seed(cfg, world, s, policy, record_outcomes))
        .collect::<Result<Vec<_>>>()?;
    let aggregate = aggregate(&runs);
    Ok(ExperimentResult { runs, aggregate })
}

/// Same loop as [`run_experiment`] with the oracle ordering and no learning.
pub fn ideal_ranker_baseline(
    cfg: &ExperimentConfig,
    world: &PreparedWorld,
    seeds: &[u64],
) -> Result<ExperimentResult> {
    run_experiment(cfg, world, seeds, RankingPolicy::Ideal, false)
}

/// Identifies one cell of a sweep in metric files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellLabel {
    /// `None` for the ideal baseline.
    pub epsilon: Option<f64>,
    pub threshold: f64,
    pub scenario: Scenario,
}

impl CellLabel {
    pub fn epsilon_label(&self) -> String {
        self.epsilon
            .map_or_else(|| "ideal".to_string(), |e| e.to_string())
    }

    /// `eps-{epsilon}_C-{threshold}_{scenario}`
    pub fn key(&self) -> String {
        format!(
            "eps-{}_C-{}_{}",
            self.epsilon_label(),
            self.threshold,
            self.scenario
        )
    }

    /// `metrics_{key}` for learned cells, `ideal_C-{threshold}_{scenario}`
    /// for the baseline.
    pub fn file_stem(&self) -> String {
        match self.epsilon {
            Some(_) => format!("metrics_{}", self.key()),
            None => format!("ideal_C-{}_{}", self.threshold, self.scenario),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub day: u32,
    pub epsilon: String,
    #[serde(rename = "C")]
    pub threshold: f64,
    pub scenario: Scenario,
    pub mean_best_rank: f64,
    pub success_prob: f64,
    pub reject_ratio: f64,
    pub n_queries: usize,
}

pub const METRICS_HEADER: [&str; 9] = [
    "seed",
    "day",
    "epsilon",
    "C",
    "scenario",
    "mean_best_rank",
    "success_prob",
    "reject_ratio",
    "n_queries",
];

const OUTCOME_HEADER: [&str; 8] = [
    "seed",
    "day",
    "user_id",
    "query_id",
    "best_rank",
    "accepted",
    "accepted_rank",
    "n_candidates",
];

/// One row per seed and day, columns as in [`METRICS_HEADER`].
pub fn write_metrics_csv<W: Write>(label: &CellLabel, runs: &[SeedRun], writer: W) -> Result<()> {
    let mut w = csv_writer(writer, &METRICS_HEADER)?;
    for run in runs {
        for m in &run.metrics {
            w.serialize(MetricsRow {
                seed: run.seed,
                day: m.day,
                epsilon: label.epsilon_label(),
                threshold: label.threshold,
                scenario: label.scenario,
                mean_best_rank: m.mean_best_rank,
                success_prob: m.success_probability,
                reject_ratio: m.reject_ratio,
                n_queries: m.n_queries,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(reader: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(reader);
    if r.headers()?.iter().ne(METRICS_HEADER) {
        return Err(Error::Data("unexpected metrics CSV header".into()));
    }
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

#[derive(Debug, Serialize)]
struct OutcomeRow {
    seed: u64,
    day: u32,
    user_id: u32,
    query_id: u32,
    best_rank: usize,
    accepted: bool,
    accepted_rank: Option<usize>,
    n_candidates: usize,
}

pub fn write_outcomes_csv<W: Write>(runs: &[SeedRun], writer: W) -> Result<()> {
    let mut w = csv_writer(writer, &OUTCOME_HEADER)?;
    for run in runs {
        for o in run.outcomes.iter().flatten() {
            w.serialize(OutcomeRow {
                seed: run.seed,
                day: o.day,
                user_id: o.user_id.0,
                query_id: o.query_id.0,
                best_rank: o.best_rank,
                accepted: o.accepted,
                accepted_rank: o.accepted_rank,
                n_candidates: o.n_candidates,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
