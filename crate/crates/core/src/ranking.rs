//! Per-user online pairwise learning-to-rank.
//!
//! Each candidate ride is mapped to a ten-dimensional feature vector: the
//! social similarity with the driver followed by one-hot bin indicators for
//! pickup walk, drop-off walk and pickup delay. A user's ranker is a linear
//! weight vector over those features. Recommendation lists interleave the
//! ranker's ordering with uniform exploration (epsilon-greedy), and every
//! accepted ride yields labelled pairs that drive a hinge-margin SGD step.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::UserId;
use crate::matching::CandidateRide;

pub const N_FEATURES: usize = 10;
pub const DEFAULT_LIST_SIZE: usize = 10;
pub const DEFAULT_ETA: f64 = 0.01;

/// Offsets of the feature groups inside a [`FeatureVector`].
pub const SIM: usize = 0;
pub const PICKUP_BINS: usize = 1;
pub const DROPOFF_BINS: usize = 4;
pub const DELAY_BINS: usize = 7;

/// Upper bounds of the three distance bins and the three delay bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub d_bounds: [f64; 3],
    pub t_bounds: [f64; 3],
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            d_bounds: [1_000.0, 2_000.0, 3_000.0],
            t_bounds: [1_800.0, 3_600.0, 5_400.0],
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        for b in [self.d_bounds, self.t_bounds] {
            if !(b[0] > 0.0 && b[0] < b[1] && b[1] < b[2] && b[2].is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "bin bounds {b:?} must be positive and strictly increasing"
                )));
            }
        }
        Ok(())
    }
}

/// Bin of `value`: 0 for `[0, b1]`, 1 for `(b1, b2]`, 2 for `(b2, b3]`.
pub fn bin_index(value: f64, bounds: &[f64; 3]) -> Option<usize> {
    if value.is_nan() || value < 0.0 {
        return None;
    }
    bounds.iter().position(|&b| value <= b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    pub fn as_array(&self) -> &[f64; N_FEATURES] {
        &self.0
    }

    pub fn dot(&self, w: &[f64; N_FEATURES]) -> f64 {
        self.0.iter().zip(w).map(|(x, w)| x * w).sum()
    }

    pub fn sub(&self, other: &FeatureVector) -> [f64; N_FEATURES] {
        std::array::from_fn(|k| self.0[k] - other.0[k])
    }
}

pub fn extract_features(
    ride: &CandidateRide,
    sim: f64,
    cfg: &FeatureConfig,
) -> Result<FeatureVector> {
    if !(0.0..=1.0).contains(&sim) {
        return Err(Error::InvalidArgument(format!(
            "similarity {sim} outside [0, 1]"
        )));
    }
    let out_of_range = |what: &str, v: f64| {
        Error::InvalidArgument(format!("{what} {v} lies outside the feature bins"))
    };
    let p = bin_index(ride.d_p, &cfg.d_bounds).ok_or_else(|| out_of_range("d_p", ride.d_p))?;
    let d = bin_index(ride.d_d, &cfg.d_bounds).ok_or_else(|| out_of_range("d_d", ride.d_d))?;
    let t = bin_index(ride.t_p, &cfg.t_bounds).ok_or_else(|| out_of_range("t_p", ride.t_p))?;
    let mut x = [0.0; N_FEATURES];
    x[SIM] = sim;
    x[PICKUP_BINS + p] = 1.0;
    x[DROPOFF_BINS + d] = 1.0;
    x[DELAY_BINS + t] = 1.0;
    Ok(FeatureVector(x))
}

/// A user's linear ranking model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranker {
    pub weights: [f64; N_FEATURES],
    pub eta: f64,
    pub epsilon: f64,
}

impl Ranker {
    /// Zero-initialised ranker.
    pub fn new(eta: f64, epsilon: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {eta}")));
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidArgument(format!(
                "exploration rate {epsilon} outside [0, 1]"
            )));
        }
        Ok(Ranker {
            weights: [0.0; N_FEATURES],
            eta,
            epsilon,
        })
    }

    pub fn score(&self, x: &FeatureVector) -> f64 {
        x.dot(&self.weights)
    }

    /// Sequential hinge-margin SGD over `pairs`. Returns how many pairs
    /// changed the weights.
    pub fn update(&mut self, pairs: &[TrainingPair]) -> usize {
        let mut applied = 0;
        for pair in pairs {
            let y = pair.y.value();
            let diff = pair.x_a.sub(&pair.x_b);
            let margin = y * diff
                .iter()
                .zip(&self.weights)
                .map(|(d, w)| d * w)
                .sum::<f64>();
            if margin < 1.0 {
                for (w, d) in self.weights.iter_mut().zip(diff) {
                    *w += self.eta * y * d;
                }
                applied += 1;
            }
        }
        applied
    }

    /// Learns from the user's reaction to `shown`. A rejected list carries
    /// no pairwise information and leaves the model untouched.
    pub fn process_feedback(&mut self, shown: &[FeatureVector], outcome: Outcome) -> Result<usize> {
        match outcome {
            Outcome::RejectedAll => Ok(0),
            Outcome::Accepted(idx) => {
                let pairs = infer_pairs(shown, idx)?;
                Ok(self.update(&pairs))
            }
        }
    }
}

/// Ordering of `features` by descending score. Equal scores keep their
/// input order.
pub fn exploitative_order(ranker: &Ranker, features: &[FeatureVector]) -> Vec<usize> {
    let scores: Vec<f64> = features.iter().map(|x| ranker.score(x)).collect();
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Epsilon-greedy list construction over an already shuffled candidate
/// list. Each of the first `k` positions is filled, with probability
/// `1 - epsilon`, by the best-scored candidate not yet shown and otherwise
/// by a uniformly drawn candidate not yet shown. Returns positions into
/// `features`.
pub fn select_indices<R: Rng + ?Sized>(
    ranker: &Ranker,
    features: &[FeatureVector],
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    let order = exploitative_order(ranker, features);
    let n = k.min(features.len());
    let mut placed = vec![false; features.len()];
    let mut shown = Vec::with_capacity(n);
    let mut cursor = 0;
    for _ in 0..n {
        let pick = if rng.gen::<f64>() < ranker.epsilon {
            let remaining = features.len() - shown.len();
            let nth = rng.gen_range(0..remaining);
            (0..features.len())
                .filter(|&i| !placed[i])
                .nth(nth)
                .expect("remaining count matches unplaced candidates")
        } else {
            while placed[order[cursor]] {
                cursor += 1;
            }
            order[cursor]
        };
        placed[pick] = true;
        shown.push(pick);
    }
    shown
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationList<T> {
    pub entries: Vec<(T, FeatureVector)>,
}

impl<T> RecommendationList<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn features(&self) -> Vec<FeatureVector> {
        self.entries.iter().map(|(_, x)| *x).collect()
    }
}

pub fn build_recommendation<T: Clone, R: Rng + ?Sized>(
    ranker: &Ranker,
    explorative: &[(T, FeatureVector)],
    k: usize,
    rng: &mut R,
) -> RecommendationList<T> {
    let features: Vec<FeatureVector> = explorative.iter().map(|(_, x)| *x).collect();
    let entries = select_indices(ranker, &features, k, rng)
        .into_iter()
        .map(|i| explorative[i].clone())
        .collect();
    RecommendationList { entries }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    /// The first ride of the pair is the more relevant one.
    Positive,
    /// The second ride of the pair is the more relevant one.
    Negative,
}

impl Label {
    pub fn value(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = Error;

    fn try_from(v: i8) -> Result<Self> {
        match v {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            _ => Err(Error::InvalidArgument(format!(
                "pair label {v}, expected +1 or -1"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingPair {
    pub x_a: FeatureVector,
    pub x_b: FeatureVector,
    pub y: Label,
}

/// Reaction of a user to a recommendation list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    /// Zero-based position of the accepted ride.
    Accepted(usize),
    RejectedAll,
}

/// Pairs implied by accepting `shown[accepted]`: rides above it become
/// `(x_j, x_s, -1)`, rides below it `(x_s, x_j, +1)`.
pub fn infer_pairs(shown: &[FeatureVector], accepted: usize) -> Result<Vec<TrainingPair>> {
    let Some(&x_s) = shown.get(accepted) else {
        return Err(Error::InvalidArgument(format!(
            "accepted position {accepted} outside a list of {}",
            shown.len()
        )));
    };
    Ok(shown
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != accepted)
        .map(|(j, &x_j)| {
            if j < accepted {
                TrainingPair {
                    x_a: x_j,
                    x_b: x_s,
                    y: Label::Negative,
                }
            } else {
                TrainingPair {
                    x_a: x_s,
                    x_b: x_j,
                    y: Label::Positive,
                }
            }
        })
        .collect())
}

/// Writes `user_id,w_0,...,w_9` rows. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_rankers<'a, W, I>(rankers: I, writer: W) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (UserId, &'a Ranker)>,
{
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["user_id".to_string()];
    header.extend((0..N_FEATURES).map(|k| format!("w_{k}")));
    w.write_record(&header)?;
    for (user, r) in rankers {
        let mut rec = vec![user.to_string()];
        rec.extend(r.weights.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rankers<R: Read>(reader: R) -> Result<Vec<(UserId, [f64; N_FEATURES])>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != N_FEATURES + 1 {
            return Err(Error::Data(format!(
                "ranker row has {} fields, expected {}",
                rec.len(),
                N_FEATURES + 1
            )));
        }
        let bad = |f: &str| Error::Data(format!("ranker CSV: cannot parse {f:?}"));
        let user: UserId = rec[0].parse().map_err(|_| bad(&rec[0]))?;
        let mut w = [0.0; N_FEATURES];
        for (k, slot) in w.iter_mut().enumerate() {
            *slot = rec[k + 1].parse().map_err(|_| bad(&rec[k + 1]))?;
        }
        out.push((user, w));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use crate::ids::TripId;
    use crate::matching::RoutePoint;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn ride(d_p: f64, d_d: f64, t_p: f64) -> CandidateRide {
        let rp = RoutePoint {
            point: GeoPoint { lat: 0.0, lon: 0.0 },
            index: 0,
        };
        CandidateRide {
            trip_id: TripId(0),
            driver_id: UserId(0),
            pickup: rp,
            dropoff: RoutePoint { index: 1, ..rp },
            d_p,
            d_d,
            t_p,
        }
    }

    fn fv(v: [f64; N_FEATURES]) -> FeatureVector {
        FeatureVector(v)
    }

    fn basis(k: usize) -> FeatureVector {
        let mut x = [0.0; N_FEATURES];
        x[k] = 1.0;
        FeatureVector(x)
    }

    #[test]
    fn first_bins() {
        let x =
            extract_features(&ride(500.0, 500.0, 600.0), 1.0, &FeatureConfig::default()).unwrap();
        assert_eq!(x.0, [1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn bin_edges() {
        let cfg = FeatureConfig::default();
        let x = extract_features(&ride(1000.0, 2000.0, 3600.0), 0.0, &cfg).unwrap();
        assert_eq!(x.0[1..4], [1.0, 0.0, 0.0]);
        assert_eq!(x.0[4..7], [0.0, 1.0, 0.0]);
        assert_eq!(x.0[7..10], [0.0, 1.0, 0.0]);
        let x = extract_features(&ride(1001.0, 3000.0, 0.0), 0.0, &cfg).unwrap();
        assert_eq!(x.0[1..4], [0.0, 1.0, 0.0]);
        assert_eq!(x.0[4..7], [0.0, 0.0, 1.0]);
        assert_eq!(x.0[7..10], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn out_of_bin_is_rejected() {
        let cfg = FeatureConfig::default();
        assert!(extract_features(&ride(3000.5, 0.0, 0.0), 0.5, &cfg).is_err());
        assert!(extract_features(&ride(0.0, 0.0, 5400.1), 0.5, &cfg).is_err());
        assert!(extract_features(&ride(0.0, 0.0, -1.0), 0.5, &cfg).is_err());
        assert!(extract_features(&ride(0.0, 0.0, 0.0), 1.5, &cfg).is_err());
    }

    #[test]
    fn score_examples() {
        let mut r = Ranker::new(0.01, 0.0).unwrap();
        let x = extract_features(&ride(10.0, 10.0, 10.0), 0.7, &FeatureConfig::default()).unwrap();
        assert_eq!(r.score(&x), 0.0);
        r.weights[SIM] = 1.0;
        assert_eq!(r.score(&x), 0.7);
    }

    #[test]
    fn ranker_rejects_bad_parameters() {
        assert!(Ranker::new(0.0, 0.1).is_err());
        assert!(Ranker::new(0.01, 1.1).is_err());
        assert!(Ranker::new(0.01, -0.1).is_err());
    }

    #[test]
    fn pure_exploitation_is_top_k() {
        let mut r = Ranker::new(0.01, 0.0).unwrap();
        r.weights = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let feats: Vec<_> = [0.3, 0.9, 0.1, 0.5, 0.7]
            .iter()
            .map(|&s| {
                let mut x = [0.0; N_FEATURES];
                x[0] = s;
                fv(x)
            })
            .collect();
        let shown = select_indices(&r, &feats, 3, &mut seeded(3, &[]));
        assert_eq!(shown, vec![1, 4, 3]);
        let all = select_indices(&r, &feats, 10, &mut seeded(3, &[]));
        assert_eq!(all, vec![1, 4, 3, 0, 2]);
    }

    #[test]
    fn ties_keep_explorative_order() {
        let r = Ranker::new(0.01, 0.0).unwrap();
        let feats = vec![basis(1), basis(2), basis(3)];
        assert_eq!(
            select_indices(&r, &feats, 3, &mut seeded(0, &[])),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn list_is_replayable_and_duplicate_free() {
        let mut r = Ranker::new(0.01, 0.5).unwrap();
        r.weights[0] = 1.0;
        let feats: Vec<_> = (0..30)
            .map(|i| {
                let mut x = [0.0; N_FEATURES];
                x[0] = i as f64 / 30.0;
                fv(x)
            })
            .collect();
        let a = select_indices(&r, &feats, 10, &mut seeded(11, &[]));
        let b = select_indices(&r, &feats, 10, &mut seeded(11, &[]));
        assert_eq!(a, b);
        let mut d = a.clone();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 10);
    }

    #[test]
    fn short_candidate_list() {
        let r = Ranker::new(0.01, 0.3).unwrap();
        let items: Vec<(u32, FeatureVector)> = (0..4).map(|i| (i, basis(i as usize))).collect();
        let list = build_recommendation(&r, &items, 10, &mut seeded(1, &[]));
        assert_eq!(list.len(), 4);
    }

    #[test]
    fn worked_pair_example() {
        let xs: Vec<_> = (1..=4).map(basis).collect();
        let pairs = infer_pairs(&xs, 2).unwrap();
        assert_eq!(
            pairs,
            vec![
                TrainingPair {
                    x_a: xs[0],
                    x_b: xs[2],
                    y: Label::Negative
                },
                TrainingPair {
                    x_a: xs[1],
                    x_b: xs[2],
                    y: Label::Negative
                },
                TrainingPair {
                    x_a: xs[2],
                    x_b: xs[3],
                    y: Label::Positive
                },
            ]
        );
        assert!(infer_pairs(&xs[..1], 0).unwrap().is_empty());
        assert!(infer_pairs(&xs, 4).is_err());
    }

    #[test]
    fn single_step_from_zero() {
        let mut r = Ranker::new(0.01, 0.0).unwrap();
        let (a, b) = (basis(0), basis(3));
        let applied = r.update(&[TrainingPair {
            x_a: a,
            x_b: b,
            y: Label::Positive,
        }]);
        assert_eq!(applied, 1);
        let mut expected = [0.0; N_FEATURES];
        expected[0] = 0.01;
        expected[3] = -0.01;
        assert_eq!(r.weights, expected);
    }

    #[test]
    fn satisfied_margin_skips_update() {
        let mut r = Ranker::new(0.01, 0.0).unwrap();
        r.weights[0] = 2.0;
        let before = r.clone();
        let pair = TrainingPair {
            x_a: basis(0),
            x_b: basis(5),
            y: Label::Positive,
        };
        assert_eq!(r.update(&[pair]), 0);
        assert_eq!(r, before);
        // Identical features add the zero vector even though the margin is 0.
        assert_eq!(
            r.update(&[TrainingPair {
                x_a: basis(2),
                x_b: basis(2),
                y: Label::Negative
            }]),
            1
        );
        assert_eq!(r.weights, before.weights);
    }

    #[test]
    fn feedback() {
        let mut r = Ranker::new(0.01, 0.2).unwrap();
        let shown: Vec<_> = (0..10).map(basis).collect();
        let before = r.clone();
        assert_eq!(r.process_feedback(&shown, Outcome::RejectedAll).unwrap(), 0);
        assert_eq!(r, before);
        assert_eq!(r.process_feedback(&shown, Outcome::Accepted(0)).unwrap(), 9);
        r.weights = [0.0; N_FEATURES];
        r.weights[0] = 5.0;
        let before = r.clone();
        assert_eq!(r.process_feedback(&shown, Outcome::Accepted(0)).unwrap(), 0);
        assert_eq!(r, before);
    }

    #[test]
    fn label_from_integer() {
        assert_eq!(Label::try_from(1).unwrap(), Label::Positive);
        assert_eq!(Label::try_from(-1).unwrap(), Label::Negative);
        assert!(Label::try_from(0).is_err());
    }

    #[test]
    fn ranker_csv_round_trip() {
        let mut a = Ranker::new(0.01, 0.1).unwrap();
        a.weights = [
            0.1,
            -0.0,
            1e-300,
            -3.5,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
            7.0,
            0.2 + 0.1,
            -1e10,
            2.0,
        ];
        let mut buf = Vec::new();
        write_rankers([(UserId(4), &a)], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("user_id,w_0,w_1,w_2,w_3,w_4,w_5,w_6,w_7,w_8,w_9\n4,"));
        let back = read_rankers(&buf[..]).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].0, UserId(4));
        for (x, y) in back[0].1.iter().zip(a.weights) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn uniform_exploration_frequencies() {
        let ranker = Ranker::new(0.01, 1.0).unwrap();
        let feats: Vec<FeatureVector> = (0..5).map(basis).collect();
        let mut rng = seeded(21, &[]);
        let n = 10_000;
        let mut first = [0usize; 5];
        for _ in 0..n {
            first[select_indices(&ranker, &feats, 3, &mut rng)[0]] += 1;
        }
        let sigma = (n as f64 * 0.2 * 0.8).sqrt();
        for c in first {
            assert!(
                (c as f64 - 0.2 * n as f64).abs() <= 3.0 * sigma,
                "{first:?}"
            );
        }
    }

    fn any_ride() -> impl Strategy<Value = (f64, f64, f64, f64)> {
        (
            0.0..=3_000.0f64,
            0.0..=3_000.0f64,
            0.0..=5_400.0f64,
            0.0..=1.0f64,
        )
    }

    fn any_vector() -> impl Strategy<Value = FeatureVector> {
        prop::array::uniform10(-2.0..2.0f64).prop_map(FeatureVector)
    }

    proptest! {
        #[test]
        fn one_hot_groups((d_p, d_d, t_p, sim) in any_ride()) {
            let x = extract_features(&ride(d_p, d_d, t_p), sim, &FeatureConfig::default()).unwrap();
            prop_assert_eq!(x.0[SIM], sim);
            for g in [PICKUP_BINS, DROPOFF_BINS, DELAY_BINS] {
                let group = &x.0[g..g + 3];
                prop_assert!(group.iter().all(|v| *v == 0.0 || *v == 1.0));
                prop_assert_eq!(group.iter().sum::<f64>(), 1.0);
            }
        }

        #[test]
        fn positive_scaling_keeps_the_list(
            w in prop::array::uniform10(-2.0..2.0f64),
            feats in prop::collection::vec(any_vector(), 1..20),
            shift in -10i32..10,
            eps in 0.0..=1.0f64,
            seed in 0u64..1_000,
        ) {
            let mut a = Ranker::new(0.01, eps).unwrap();
            a.weights = w;
            let mut b = a.clone();
            let c = 2f64.powi(shift);
            b.weights.iter_mut().for_each(|x| *x *= c);
            let la = select_indices(&a, &feats, 10, &mut seeded(seed, &[]));
            let lb = select_indices(&b, &feats, 10, &mut seeded(seed, &[]));
            prop_assert_eq!(la, lb);
        }

        #[test]
        fn lists_are_duplicate_free(
            feats in prop::collection::vec(any_vector(), 0..25),
            k in 0usize..15,
            eps in 0.0..=1.0f64,
            seed in 0u64..1_000,
        ) {
            let r = Ranker::new(0.01, eps).unwrap();
            let list = select_indices(&r, &feats, k, &mut seeded(seed, &[]));
            prop_assert_eq!(list.len(), k.min(feats.len()));
            let mut sorted = list.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), list.len());
        }

        #[test]
        fn update_raises_margin_by_step(
            w in prop::array::uniform10(-0.5..0.5f64),
            a in any_vector(),
            b in any_vector(),
            positive in any::<bool>(),
            eta in 0.001..0.2f64,
        ) {
            let y = if positive { Label::Positive } else { Label::Negative };
            let mut r = Ranker::new(eta, 0.0).unwrap();
            r.weights = w;
            let d = a.sub(&b);
            let margin = |w: &[f64; N_FEATURES]| y.value() * d.iter().zip(w).map(|(d, w)| d * w).sum::<f64>();
            let before = margin(&r.weights);
            let applied = r.update(&[TrainingPair { x_a: a, x_b: b, y }]);
            if before < 1.0 {
                prop_assert_eq!(applied, 1);
                let norm2: f64 = d.iter().map(|v| v * v).sum();
                prop_assert!((margin(&r.weights) - (before + eta * norm2)).abs() < 1e-9);
            } else {
                prop_assert_eq!(applied, 0);
                prop_assert_eq!(r.weights, w);
            }
        }

        #[test]
        fn pairs_all_involve_the_accepted_ride(
            shown in prop::collection::vec(any_vector(), 1..12),
            pick in any::<prop::sample::Index>(),
        ) {
            let s = pick.index(shown.len());
            let pairs = infer_pairs(&shown, s).unwrap();
            prop_assert_eq!(pairs.len(), shown.len() - 1);
            for p in &pairs {
                match p.y {
                    Label::Negative => prop_assert_eq!(p.x_b, shown[s]),
                    Label::Positive => prop_assert_eq!(p.x_a, shown[s]),
                }
            }
        }
    }
}
