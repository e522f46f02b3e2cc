/// Euclidean projection onto the probability simplex `{x >= 0, sum x = 1}`.
///
/// Sort-based threshold search: the projection is `max(v - tau, 0)` where
/// `tau` is fixed by the largest prefix of the descending order that stays
/// active.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (i + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        } else {
            break;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Active-set oracle: solve the equality-constrained QP on the free set,
    /// drop coordinates that go negative, repeat until feasible.
    fn active_set_projection(v: &[f64]) -> Vec<f64> {
        let mut free: Vec<bool> = vec![true; v.len()];
        loop {
            let count = free.iter().filter(|f| **f).count();
            let sum: f64 = v.iter().zip(&free).filter(|(_, f)| **f).map(|(x, _)| x).sum();
            let shift = (sum - 1.0) / count as f64;
            let x: Vec<f64> = v
                .iter()
                .zip(&free)
                .map(|(&vi, &f)| if f { vi - shift } else { 0.0 })
                .collect();
            let mut changed = false;
            for (i, xi) in x.iter().enumerate() {
                if free[i] && *xi < 0.0 {
                    free[i] = false;
                    changed = true;
                }
            }
            if !changed {
                return x;
            }
        }
    }

    fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    #[test]
    fn simplex_point_is_fixed() {
        let v = vec![0.1, 0.2, 0.3, 0.4];
        let p = project_simplex(&v);
        for (a, b) in v.iter().zip(&p) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_active_coordinate() {
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn matches_active_set_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let v: Vec<f64> = (0..25).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = project_simplex(&v);
            let oracle = active_set_projection(&v);
            for (a, b) in fast.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-9);
            }
            assert!(fast.iter().all(|x| *x >= 0.0));
            assert!((fast.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn idempotent_and_nonexpansive(
            a in prop::collection::vec(-5.0f64..5.0, 1..30),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<f64> = a.iter().map(|x| x + rng.random_range(-1.0..1.0)).collect();
            let pa = project_simplex(&a);
            let pb = project_simplex(&b);
            let ppa = project_simplex(&pa);
            for (x, y) in pa.iter().zip(&ppa) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!(dist_sq(&pa, &pb) <= dist_sq(&a, &b) + 1e-12);
        }
    }
}
