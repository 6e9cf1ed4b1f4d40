//! T5-style bucketed relative positions with a periodic-aware displacement.

/// Signed displacement `j - i`; on a periodic axis the minimal image in
/// `[-floor(n/2), ceil(n/2) - 1]`.
pub fn periodic_displacement(i: usize, j: usize, n: usize, periodic: bool) -> i64 {
    let d = j as i64 - i as i64;
    if !periodic || n == 0 {
        return d;
    }
    let n = n as i64;
    let half = n / 2;
    (d + half).rem_euclid(n) - half
}

/// Bucketing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RpeConfig {
    pub buckets: usize,
    pub max_exact: usize,
    pub max_distance: usize,
}

impl RpeConfig {
    /// Negative displacements use buckets `[0, B/2)` (bucket 0 is `d = 0`),
    /// positive ones `[B/2 + 1, B)`. Exact below `max_exact`, logarithmic
    /// beyond, saturating at `max_distance`.
    pub fn bucket(&self, d: i64) -> usize {
        let half = self.buckets / 2;
        let offset = if d > 0 { half } else { 0 };
        let n = d.unsigned_abs() as usize;
        let within = if n < self.max_exact {
            n
        } else {
            let ratio = (n as f64 / self.max_exact as f64).ln() / (self.max_distance as f64 / self.max_exact as f64).ln();
            let v = self.max_exact + (ratio * (half - self.max_exact) as f64) as usize;
            v.min(half - 1)
        };
        offset + within
    }

    /// Row-major `[len, len]` bucket matrix for query `i`, key `j`.
    pub fn bucket_matrix(&self, len: usize, periodic: bool) -> Vec<usize> {
        let mut out = Vec::with_capacity(len * len);
        for i in 0..len {
            for j in 0..len {
                out.push(self.bucket(periodic_displacement(i, j, len, periodic)));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: RpeConfig = RpeConfig {
        buckets: 32,
        max_exact: 8,
        max_distance: 128,
    };

    #[test]
    fn displacement_examples() {
        assert_eq!(periodic_displacement(0, 7, 8, true), -1);
        assert_eq!(periodic_displacement(0, 4, 8, true), -4);
        assert_eq!(periodic_displacement(0, 3, 8, false), 3);
        assert_eq!(periodic_displacement(5, 0, 8, true), 3);
        for n in 1..12usize {
            for i in 0..n {
                for j in 0..n {
                    let d = periodic_displacement(i, j, n, true);
                    assert!(d >= -((n / 2) as i64) && d < (n as i64 + 1) / 2);
                    assert_eq!((d - (j as i64 - i as i64)).rem_euclid(n as i64), 0);
                }
            }
        }
    }

    #[test]
    fn zero_has_a_dedicated_bucket() {
        let zero = CFG.bucket(0);
        for d in -300i64..=300 {
            if d != 0 {
                assert_ne!(CFG.bucket(d), zero);
            }
        }
    }

    #[test]
    fn sign_separation_and_range() {
        for d in 1i64..500 {
            assert_ne!(CFG.bucket(d), CFG.bucket(-d));
            assert!(CFG.bucket(d) < 32 && CFG.bucket(-d) < 32);
        }
        assert!(CFG.bucket(i64::MAX) < 32);
        assert!(CFG.bucket(i64::MIN + 1) < 32);
    }

    #[test]
    fn monotone_within_each_sign() {
        let mut prev_pos = CFG.bucket(0);
        let mut prev_neg = CFG.bucket(0);
        for n in 1i64..=64 {
            let p = CFG.bucket(n);
            let m = CFG.bucket(-n);
            if n > 1 {
                assert!(p >= prev_pos && m >= prev_neg, "n={n}");
            }
            if n < 8 {
                assert_eq!(m, n as usize);
                assert_eq!(p, 16 + n as usize);
            }
            prev_pos = p;
            prev_neg = m;
        }
    }
}
