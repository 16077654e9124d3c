//! Running median with symmetric window shrinking at the boundaries.

/// Median filter whose window at index `i` is `x[i-h ..= i+h]` with
/// `h = min(half, i, n-1-i)`. Every window therefore has an odd number of
/// samples and stays centered on `i`; no padding is introduced.
pub fn median_filter(x: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let mut sorted: Vec<f64> = Vec::with_capacity(2 * half + 1);
    // Current window is x[lo..hi] (half-open).
    let (mut lo, mut hi) = (0usize, 0usize);
    for i in 0..n {
        let h = half.min(i).min(n - 1 - i);
        let (want_lo, want_hi) = (i - h, i + h + 1);
        while hi < want_hi {
            let v = x[hi];
            let pos = sorted.partition_point(|s| s.total_cmp(&v).is_lt());
            sorted.insert(pos, v);
            hi += 1;
        }
        while lo < want_lo {
            let v = x[lo];
            let pos = sorted.partition_point(|s| s.total_cmp(&v).is_lt());
            sorted.remove(pos);
            lo += 1;
        }
        out.push(sorted[sorted.len() / 2]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive(x: &[f64], half: usize) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let h = half.min(i).min(n - 1 - i);
                let mut w = x[i - h..=i + h].to_vec();
                w.sort_by(f64::total_cmp);
                w[w.len() / 2]
            })
            .collect()
    }

    #[test]
    fn edges_shrink_symmetrically() {
        let x = [5.0, 1.0, 4.0, 2.0, 3.0];
        // i=0 -> [5]; i=1 -> [5,1,4]; i=2 -> all; i=3 -> [4,2,3]; i=4 -> [3]
        assert_eq!(median_filter(&x, 2), vec![5.0, 4.0, 3.0, 3.0, 3.0]);
    }

    proptest! {
        #[test]
        fn sliding_matches_naive(x in prop::collection::vec(-100.0f64..100.0, 1..200), half in 0usize..20) {
            prop_assert_eq!(median_filter(&x, half), naive(&x, half));
        }
    }
}
