//! Small numeric helpers shared across modules.

/// Sum that is bit-identical under any permutation of `values`: terms are
/// sorted before accumulation. Reorders the slice in place.
pub fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// Mean with [`sorted_sum`] semantics; `None` for an empty slice.
pub fn sorted_mean(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(sorted_sum(values) / values.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_invariant() {
        let mut a = vec![1e16, 1.0, -1e16, 3.5, 1e-3, 7.0];
        let mut b = vec![7.0, 1e-3, 3.5, -1e16, 1.0, 1e16];
        assert_eq!(sorted_sum(&mut a).to_bits(), sorted_sum(&mut b).to_bits());
        assert_eq!(sorted_mean(&mut []), None);
    }
}
