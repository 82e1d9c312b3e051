//! Small numeric helpers: deterministic seed derivation, summary statistics,
//! ranks, and a Kolmogorov-Smirnov statistic used by the test suites.

/// Serde adapter for matrix fields: row-major data plus an explicit
/// dimension, e.g. `{"dim": [2, 2], "data": [1.0, 0.0, 0.0, 1.0]}`.
pub mod mat_serde {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct MatRepr {
        dim: [usize; 2],
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        MatRepr {
            dim: [m.nrows(), m.ncols()],
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let r = MatRepr::deserialize(d)?;
        if r.data.len() != r.dim[0] * r.dim[1] {
            return Err(serde::de::Error::custom(format!(
                "matrix data length {} does not match dim {:?}",
                r.data.len(),
                r.dim
            )));
        }
        Ok(DMatrix::from_row_slice(r.dim[0], r.dim[1], &r.data))
    }
}

/// Derive an independent child seed from a root seed and a stream index.
///
/// SplitMix64 finalizer over `seed + (index + 1) * GOLDEN_GAMMA`; used to give
/// every site / replicate / proposal batch its own RNG stream so results do
/// not depend on scheduling order.
pub fn subseed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (denominator n - 1).
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Empirical quantile with linear interpolation between order statistics
/// (the common "type 7" definition). `p` is clamped to [0, 1].
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    assert!(!xs.is_empty(), "quantile of empty slice");
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p = p.clamp(0.0, 1.0);
    let h = p * (s.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        s[lo]
    } else {
        s[lo] + (h - lo as f64) * (s[hi] - s[lo])
    }
}

/// Ranks (1-based) with ties replaced by their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // Positions i..=j share the value; average of ranks i+1..=j+1.
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> f64 {
    let n = xs.len();
    assert!(n > 0);
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max(((i + 1) as f64 / nf - f).abs());
        d = d.max((f - i as f64 / nf).abs());
    }
    d
}

/// Asymptotic 1% critical value for the one-sample KS statistic.
pub fn ks_crit_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn subseed_streams_differ() {
        let a = subseed(42, 0);
        let b = subseed(42, 1);
        let c = subseed(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        // Stable across calls.
        assert_eq!(a, subseed(42, 0));
    }

    #[test]
    fn quantile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(quantile(&xs, 0.0), 1.0);
        assert_abs_diff_eq!(quantile(&xs, 1.0), 4.0);
        assert_abs_diff_eq!(quantile(&xs, 0.5), 2.5);
    }

    #[test]
    fn midranks_average_ties() {
        let r = average_ranks(&[10.0, 20.0, 20.0, 30.0]);
        assert_eq!(r, vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn ks_detects_wrong_distribution() {
        // Uniform grid tested against U(0,1): tiny statistic.
        let xs: Vec<f64> = (1..1000).map(|i| i as f64 / 1000.0).collect();
        let d_unif = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!(d_unif < 0.01);
        // Same grid against U(0,2): large statistic.
        let d_wrong = ks_statistic(&xs, |x| (x / 2.0).clamp(0.0, 1.0));
        assert!(d_wrong > 0.2);
    }
}
