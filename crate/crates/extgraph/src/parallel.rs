//! Thin facade over rayon so every data-parallel loop in the crate has a
//! sequential fallback. Results are collected in index order, so outputs are
//! identical with and without the `parallel` feature (and for any thread
//! count).

use crate::error::Result;

/// Map `f` over `0..n`, in parallel when the `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over `0..n` sequentially.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Fallible variant of [`map_indexed`]; the first error (in index order)
/// wins, keeping failures deterministic too.
pub fn try_map_indexed<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let results = map_indexed(n, f);
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_index_order() {
        let v = map_indexed(100, |i| i * i);
        assert_eq!(v[7], 49);
        assert_eq!(v.len(), 100);
        assert!(v.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn first_error_wins() {
        let r = try_map_indexed(10, |i| {
            if i >= 3 {
                Err(crate::error::Error::DegenerateInput(format!("at {i}")))
            } else {
                Ok(i)
            }
        });
        match r {
            Err(crate::error::Error::DegenerateInput(msg)) => assert_eq!(msg, "at 3"),
            other => panic!("unexpected: {other:?}"),
        }
    }
}
