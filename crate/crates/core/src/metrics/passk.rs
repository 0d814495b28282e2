use crate::error::{Error, Result};

/// Unbiased single-question estimate `1 − C(n−c, k) / C(n, k)`, evaluated as
/// a running product so no binomial coefficient is ever formed.
pub fn pass_at_k_single(n: usize, c: usize, k: usize) -> Result<f64> {
    if k == 0 || k > n || c > n {
        return Err(Error::Input(format!("pass@k needs 1 <= k <= n and c <= n, got n={n} c={c} k={k}")));
    }
    if n - c < k {
        return Ok(1.0);
    }
    let miss: f64 = (0..k).map(|i| (n - c - i) as f64 / (n - i) as f64).product();
    Ok(1.0 - miss)
}

/// Mean over questions of the per-question estimate.
pub fn pass_at_k(counts: &[(usize, usize)], k: usize) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::Input("pass@k needs at least one question".into()));
    }
    let mut total = 0.0;
    for &(n, c) in counts {
        total += pass_at_k_single(n, c, k)?;
    }
    Ok(total / counts.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        for k in 1..=5 {
            assert_eq!(pass_at_k_single(5, 5, k).unwrap(), 1.0);
            assert_eq!(pass_at_k_single(5, 0, k).unwrap(), 0.0);
        }
        assert!((pass_at_k_single(4, 1, 2).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn k_above_n_is_an_error() {
        assert!(pass_at_k(&[(4, 1)], 5).is_err());
        assert!(pass_at_k(&[], 1).is_err());
    }
}
