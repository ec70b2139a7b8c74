//! Accuracy-boosted federated averaging.
//!
//! The best-scoring client gets unnormalized mass `boost`, every other client
//! mass 1, and the masses are normalized by `K - 1 + boost`. The global model
//! is the elementwise convex combination of the local weights under those
//! factors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neuralnet::{Tensor, WeightSet};
use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum FedError {
    #[error("no updates to aggregate")]
    Empty,
    #[error("accuracy {value} of entry {index} outside [0, 1]")]
    AccuracyRange { index: usize, value: f64 },
    #[error("boost must be finite and at least 1, got {0}")]
    InvalidBoost(f64),
    #[error("{updates} updates but {factors} factors")]
    LengthMismatch { updates: usize, factors: usize },
    #[error("factors sum to {0}, expected 1")]
    FactorSum(f64),
    #[error("factor {value} of entry {index} is not in [0, 1]")]
    FactorRange { index: usize, value: f64 },
    #[error("update from client {client} does not match the shapes of the first update")]
    ShapeMismatch { client: u64 },
    #[error("update from client {client} is for round {found}, expected {expected}")]
    RoundMismatch {
        client: u64,
        expected: u64,
        found: u64,
    },
    #[error("non-finite weight in update from client {client}")]
    NonFinite { client: u64 },
}

/// One fog client's submission for a round.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub client_id: u64,
    pub round: u64,
    pub weights: WeightSet<f32>,
    pub reported_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPolicy {
    pub boost: f64,
}

impl Default for ScalingPolicy {
    fn default() -> Self {
        Self { boost: 2.0 }
    }
}

const FACTOR_SUM_TOL: f64 = 1e-9;

/// Normalized scaling factors, in input order. Ties on the best accuracy go
/// to the lowest position. `boost = 1` gives uniform averaging.
pub fn scale_factors<T: Scalar>(
    accuracies: &[T],
    policy: &ScalingPolicy,
) -> Result<Vec<T>, FedError> {
    if accuracies.is_empty() {
        return Err(FedError::Empty);
    }
    if !(policy.boost.is_finite() && policy.boost >= 1.0) {
        return Err(FedError::InvalidBoost(policy.boost));
    }
    for (index, a) in accuracies.iter().enumerate() {
        let value = a.to_f64().unwrap_or(f64::NAN);
        if !(0.0..=1.0).contains(&value) {
            return Err(FedError::AccuracyRange { index, value });
        }
    }
    let best = crate::neuralnet::argmax(accuracies);
    let boost = T::of(policy.boost);
    let total = T::of((accuracies.len() - 1) as f64) + boost;
    Ok((0..accuracies.len())
        .map(|i| {
            if i == best {
                boost / total
            } else {
                T::one() / total
            }
        })
        .collect())
}

/// Elementwise `sum_k factor_k * w_k`, accumulated in f64 in ascending
/// `client_id` order so the result does not depend on submission order.
pub fn aggregate(updates: &[LocalUpdate], factors: &[f64]) -> Result<WeightSet<f32>, FedError> {
    if updates.is_empty() {
        return Err(FedError::Empty);
    }
    if updates.len() != factors.len() {
        return Err(FedError::LengthMismatch {
            updates: updates.len(),
            factors: factors.len(),
        });
    }
    for (index, &value) in factors.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(FedError::FactorRange { index, value });
        }
    }
    let sum: f64 = factors.iter().sum();
    if (sum - 1.0).abs() > FACTOR_SUM_TOL {
        return Err(FedError::FactorSum(sum));
    }
    let first = &updates[0];
    for u in updates {
        if u.round != first.round {
            return Err(FedError::RoundMismatch {
                client: u.client_id,
                expected: first.round,
                found: u.round,
            });
        }
        if !u.weights.same_shapes(&first.weights) {
            return Err(FedError::ShapeMismatch {
                client: u.client_id,
            });
        }
        if !u.weights.all_finite() {
            return Err(FedError::NonFinite {
                client: u.client_id,
            });
        }
    }

    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| updates[i].client_id);

    let tensors = first
        .weights
        .tensors()
        .iter()
        .enumerate()
        .map(|(t, proto)| {
            let mut acc = vec![0.0f64; proto.values.len()];
            for &k in &order {
                let f = factors[k];
                for (a, &v) in acc.iter_mut().zip(&updates[k].weights.tensors()[t].values) {
                    *a += f * v as f64;
                }
            }
            Tensor {
                shape: proto.shape.clone(),
                values: acc.into_iter().map(|v| v as f32).collect(),
            }
        })
        .collect();
    Ok(WeightSet::new(tensors).expect("shapes copied from a valid update"))
}

/// Scaling then aggregation. Factors are computed over the updates sorted by
/// `client_id` (so ties favour the lowest id) and returned aligned with the
/// input order.
pub fn federated_fuse(
    updates: &[LocalUpdate],
    policy: &ScalingPolicy,
) -> Result<(WeightSet<f32>, Vec<f64>), FedError> {
    if updates.is_empty() {
        return Err(FedError::Empty);
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| updates[i].client_id);
    let sorted_acc: Vec<f64> = order
        .iter()
        .map(|&i| updates[i].reported_accuracy)
        .collect();
    let sorted_factors = scale_factors(&sorted_acc, policy)?;
    let mut factors = vec![0.0; updates.len()];
    for (pos, &i) in order.iter().enumerate() {
        factors[i] = sorted_factors[pos];
    }
    let global = aggregate(updates, &factors)?;
    Ok((global, factors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(v: f32) -> WeightSet<f32> {
        WeightSet::new(vec![Tensor {
            shape: vec![1],
            values: vec![v],
        }])
        .unwrap()
    }

    fn update(client_id: u64, weights: WeightSet<f32>, acc: f64) -> LocalUpdate {
        LocalUpdate {
            client_id,
            round: 1,
            weights,
            reported_accuracy: acc,
        }
    }

    #[test]
    fn factor_examples() {
        let p = ScalingPolicy::default();
        assert_eq!(scale_factors(&[0.9], &p).unwrap(), vec![1.0]);
        assert_eq!(
            scale_factors(&[0.8, 0.9, 0.7], &p).unwrap(),
            vec![0.25, 0.5, 0.25]
        );
        let tie = scale_factors(&[0.9, 0.9], &p).unwrap();
        assert_eq!(tie, vec![2.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn factor_errors() {
        let p = ScalingPolicy::default();
        assert_eq!(scale_factors::<f64>(&[], &p), Err(FedError::Empty));
        assert!(matches!(
            scale_factors(&[0.5, 1.2], &p),
            Err(FedError::AccuracyRange { index: 1, .. })
        ));
        assert!(matches!(
            scale_factors(&[f64::NAN], &p),
            Err(FedError::AccuracyRange { .. })
        ));
        assert!(scale_factors(&[0.5], &ScalingPolicy { boost: 0.5 }).is_err());
    }

    #[test]
    fn boost_one_is_uniform() {
        for k in 1..=40 {
            let acc: Vec<f64> = (0..k).map(|i| (i as f64 * 0.37) % 1.0).collect();
            let f = scale_factors(&acc, &ScalingPolicy { boost: 1.0 }).unwrap();
            assert!(f.iter().all(|&v| v == 1.0 / k as f64));
        }
    }

    #[test]
    fn mean_of_two_models() {
        let ups = [update(1, single(0.0), 0.5), update(2, single(1.0), 0.5)];
        let g = aggregate(&ups, &[0.5, 0.5]).unwrap();
        assert_eq!(g.tensors()[0].values, vec![0.5]);
    }

    #[test]
    fn single_update_is_identity() {
        let w = WeightSet::new(vec![Tensor {
            shape: vec![2, 2],
            values: vec![0.1, -3.5, 7.25, 1e-7],
        }])
        .unwrap();
        let (g, f) =
            federated_fuse(&[update(4, w.clone(), 0.3)], &ScalingPolicy::default()).unwrap();
        assert_eq!(f, vec![1.0]);
        assert_eq!(g, w);
    }

    #[test]
    fn ten_identical_updates() {
        let w = single(0.123_456_7);
        let ups: Vec<LocalUpdate> = (0..10).map(|i| update(i, w.clone(), 0.9)).collect();
        let (g, f) = federated_fuse(&ups, &ScalingPolicy::default()).unwrap();
        assert_eq!(
            g.tensors()[0].values[0].to_bits(),
            w.tensors()[0].values[0].to_bits()
        );
        assert_eq!(f[0], 2.0 / 11.0);
        assert!(f[1..].iter().all(|&v| v == 1.0 / 11.0));
    }

    #[test]
    fn increasing_accuracy_boosts_last() {
        let ups: Vec<LocalUpdate> = (0..5)
            .map(|i| update(i, single(i as f32), 0.5 + 0.1 * i as f64))
            .collect();
        let (_, f) = federated_fuse(&ups, &ScalingPolicy::default()).unwrap();
        assert_eq!(f[4], 2.0 / 6.0);
    }

    #[test]
    fn fuse_ties_go_to_lowest_client_id() {
        let ups = [update(7, single(1.0), 0.9), update(3, single(2.0), 0.9)];
        let (g, f) = federated_fuse(&ups, &ScalingPolicy::default()).unwrap();
        assert_eq!(f, vec![1.0 / 3.0, 2.0 / 3.0]);
        assert!((g.tensors()[0].values[0] - 5.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn aggregate_errors() {
        let a = update(1, single(0.0), 0.5);
        assert_eq!(
            federated_fuse(&[], &ScalingPolicy::default()).unwrap_err(),
            FedError::Empty
        );
        assert!(matches!(
            aggregate(std::slice::from_ref(&a), &[0.5, 0.5]),
            Err(FedError::LengthMismatch { .. })
        ));
        assert!(matches!(
            aggregate(&[a.clone(), a.clone()], &[0.5, 0.6]),
            Err(FedError::FactorRange { .. } | FedError::FactorSum(_))
        ));
        assert!(matches!(
            aggregate(&[a.clone(), a.clone()], &[0.5, 0.4]),
            Err(FedError::FactorSum(_))
        ));

        let wide = update(
            2,
            WeightSet::new(vec![Tensor {
                shape: vec![2],
                values: vec![0.0; 2],
            }])
            .unwrap(),
            0.5,
        );
        assert!(matches!(
            aggregate(&[a.clone(), wide], &[0.5, 0.5]),
            Err(FedError::ShapeMismatch { client: 2 })
        ));

        let nan = update(3, single(f32::NAN), 0.5);
        assert!(matches!(
            aggregate(&[a.clone(), nan], &[0.5, 0.5]),
            Err(FedError::NonFinite { client: 3 })
        ));

        let mut late = a.clone();
        late.round = 2;
        late.client_id = 9;
        assert!(matches!(
            aggregate(&[a, late], &[0.5, 0.5]),
            Err(FedError::RoundMismatch { client: 9, .. })
        ));
    }

    proptest! {
        #[test]
        fn factors_are_a_distribution(acc in prop::collection::vec(0.0f64..=1.0, 1..100), boost in 1.0f64..10.0) {
            let f = scale_factors(&acc, &ScalingPolicy { boost }).unwrap();
            prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(f.iter().all(|&v| v > 0.0 && v <= 1.0));
        }

        #[test]
        fn argmax_survives_scaling(acc in prop::collection::vec(0.0f64..=1.0, 1..30), c in 0.01f64..=1.0) {
            let p = ScalingPolicy::default();
            let f = scale_factors(&acc, &p).unwrap();
            let scaled: Vec<f64> = acc.iter().map(|a| a * c).collect();
            let g = scale_factors(&scaled, &p).unwrap();
            let top = |v: &[f64]| v.iter().position(|&x| x == v.iter().cloned().fold(0.0, f64::max)).unwrap();
            prop_assert_eq!(top(&f), top(&g));
        }

        #[test]
        fn permuting_updates_permutes_factors(
            vals in prop::collection::vec((-100.0f32..100.0, 0.0f64..=1.0), 1..12),
            rot in 0usize..12,
        ) {
            let ups: Vec<LocalUpdate> = vals.iter().enumerate().map(|(i, &(v, a))| update(i as u64, single(v), a)).collect();
            let mut perm = ups.clone();
            let r = rot % perm.len();
            perm.rotate_left(r);
            let (g1, f1) = federated_fuse(&ups, &ScalingPolicy::default()).unwrap();
            let (g2, f2) = federated_fuse(&perm, &ScalingPolicy::default()).unwrap();
            let mut f1r = f1.clone();
            f1r.rotate_left(r);
            prop_assert_eq!(f1r, f2);
            prop_assert_eq!(g1.tensors()[0].values[0].to_bits(), g2.tensors()[0].values[0].to_bits());
        }

        #[test]
        fn global_is_within_local_bounds(
            vals in prop::collection::vec(prop::collection::vec(-1e3f32..1e3, 4), 1..8),
            acc_seed in any::<u64>(),
        ) {
            let mut rng = crate::rng::SeededRng::new(acc_seed);
            let ups: Vec<LocalUpdate> = vals.iter().enumerate().map(|(i, v)| {
                let w = WeightSet::new(vec![Tensor { shape: vec![4], values: v.clone() }]).unwrap();
                update(i as u64, w, rng.unit())
            }).collect();
            let (g, _) = federated_fuse(&ups, &ScalingPolicy::default()).unwrap();
            for j in 0..4 {
                let lo = vals.iter().map(|v| v[j]).fold(f32::INFINITY, f32::min);
                let hi = vals.iter().map(|v| v[j]).fold(f32::NEG_INFINITY, f32::max);
                let x = g.tensors()[0].values[j];
                prop_assert!(lo <= x && x <= hi);
            }
        }
    }
}
