use rand::Rng;

/// Simulates the per-update mean work when each of `m` micro-batches picks
/// a system uniformly. Returns `(empirical variance, sigma^2 / m)`.
pub fn load_balance_variance<R: Rng + ?Sized>(work_times: &[f64], m: usize, trials: usize, rng: &mut R) -> (f64, f64) {
    assert!(!work_times.is_empty() && m >= 1 && trials >= 2);
    let k = work_times.len() as f64;
    let mu = work_times.iter().sum::<f64>() / k;
    let sigma2 = work_times.iter().map(|w| (w - mu).powi(2)).sum::<f64>() / k;
    let means: Vec<f64> = (0..trials)
        .map(|_| (0..m).map(|_| work_times[rng.random_range(0..work_times.len())]).sum::<f64>() / m as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / trials as f64;
    let var = means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
    (var, sigma2 / m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_point_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (e1, a1) = load_balance_variance(&[1.0, 3.0], 1, 100_000, &mut rng);
        assert_eq!(a1, 1.0);
        assert!((e1 - 1.0).abs() < 0.02);
        let (e4, a4) = load_balance_variance(&[1.0, 3.0], 4, 100_000, &mut rng);
        assert_eq!(a4, 0.25);
        assert!((e4 - 0.25).abs() < 0.01);
    }
}
