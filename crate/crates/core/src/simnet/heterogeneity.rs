use num_traits::{FromPrimitive, Num};

use super::SimError;

/// Spread of worker update times.
///
/// With `m` the first worker holding the minimum time,
/// `H = 1 - (1 / (W - 1)) * sum_{w != m} (phi_m / phi_w)`. Every ratio is in
/// `(0, 1]`, so `H` lies in `[0, 1)` and is zero exactly when all times are
/// equal. Generic so it can be evaluated exactly over rationals.
pub fn heterogeneity<T>(times: &[T]) -> Result<T, SimError>
where
    T: Num + PartialOrd + Clone + FromPrimitive,
{
    if times.len() < 2 {
        return Err(SimError::TooFewWorkers(times.len()));
    }
    if let Some(index) = times
        .iter()
        .position(|t| t.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater))
    {
        return Err(SimError::NonPositiveTime { index });
    }
    let mut min_at = 0;
    for (i, t) in times.iter().enumerate().skip(1) {
        if *t < times[min_at] {
            min_at = i;
        }
    }
    let fastest = times[min_at].clone();
    let mut sum = T::zero();
    for (i, t) in times.iter().enumerate() {
        if i != min_at {
            sum = sum + fastest.clone() / t.clone();
        }
    }
    let others = T::from_usize(times.len() - 1).expect("worker count fits the scalar");
    Ok(T::one() - sum / others)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(heterogeneity(&[5.0, 5.0, 5.0]).unwrap(), 0.0);
        assert_eq!(heterogeneity(&[2.0, 1.0]).unwrap(), 0.5);
        assert_eq!(heterogeneity(&[4.0, 2.0, 1.0]).unwrap(), 0.625);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(matches!(
            heterogeneity(&[1.0]),
            Err(SimError::TooFewWorkers(1))
        ));
        assert!(matches!(
            heterogeneity::<f64>(&[]),
            Err(SimError::TooFewWorkers(0))
        ));
        assert!(matches!(
            heterogeneity(&[1.0, 0.0]),
            Err(SimError::NonPositiveTime { index: 1 })
        ));
        assert!(matches!(
            heterogeneity(&[-1.0, 2.0]),
            Err(SimError::NonPositiveTime { index: 0 })
        ));
        assert!(heterogeneity(&[1.0, f64::NAN]).is_err());
    }

    fn rational(v: &[i64]) -> Vec<BigRational> {
        v.iter()
            .map(|&x| BigRational::from_integer(x.into()))
            .collect()
    }

    #[test]
    fn exact_rational_values() {
        let h = heterogeneity(&rational(&[4, 2, 1])).unwrap();
        assert_eq!(h, BigRational::new(5.into(), 8.into()));
        assert_eq!(
            heterogeneity(&rational(&[3, 3])).unwrap(),
            BigRational::from_integer(0.into())
        );
    }

    proptest! {
        #[test]
        fn scale_invariance_is_exact_over_rationals(
            v in prop::collection::vec(1i64..1000, 2..12),
            num in 1i64..500,
            den in 1i64..500,
        ) {
            let c = BigRational::new(num.into(), den.into());
            let times = rational(&v);
            let scaled: Vec<BigRational> = times.iter().map(|t| t * &c).collect();
            prop_assert_eq!(heterogeneity(&times).unwrap(), heterogeneity(&scaled).unwrap());
        }

        #[test]
        fn bounded_and_zero_only_when_equal(v in prop::collection::vec(1e-3f64..1e3, 2..20)) {
            let h = heterogeneity(&v).unwrap();
            prop_assert!((0.0..1.0).contains(&h));
            let all_equal = v.iter().all(|&t| t == v[0]);
            prop_assert_eq!(h == 0.0, all_equal);
        }
    }
}
