//! Bioconvolving templates.

use crate::dsp::convolve;
use crate::error::{Error, Result};
use crate::keys::BioKey;
use crate::preprocess::BeatSegment;

/// Stacked per-piece convolutions, length `l - k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BioTemplate {
    pub values: Vec<f64>,
    pub bio_k: usize,
    pub segment_length: usize,
}

/// Element-wise mean of equal-length beats.
pub fn ensemble_average(beats: &[BeatSegment]) -> Result<Vec<f64>> {
    let first = beats.first().ok_or(Error::EmptyInput("no beats to average"))?;
    let l = first.len();
    let mut sum = vec![0.0; l];
    for beat in beats {
        if beat.len() != l {
            return Err(Error::LengthMismatch {
                expected: l,
                found: beat.len(),
            });
        }
        for (s, v) in sum.iter_mut().zip(&beat.samples) {
            *s += v;
        }
    }
    let n = beats.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Cut `avg` into `k` equal pieces; split piece `i` at `r_i` and convolve
/// the two parts; stack the results in ascending piece order.
pub fn build_bio_template(avg: &[f64], key: &BioKey) -> Result<BioTemplate> {
    if avg.len() != key.segment_length() {
        return Err(Error::LengthMismatch {
            expected: key.segment_length(),
            found: avg.len(),
        });
    }
    let piece_len = key.piece_length();
    let mut values = Vec::with_capacity(avg.len() - key.piece_count());
    for (piece, &r) in avg.chunks_exact(piece_len).zip(key.splits()) {
        let (head, tail) = piece.split_at(r);
        values.extend(convolve(head, tail));
    }
    Ok(BioTemplate {
        values,
        bio_k: key.piece_count(),
        segment_length: key.segment_length(),
    })
}

/// Probe template from `N_v` presented beats and the presented key.
pub fn bio_probe(beats: &[BeatSegment], key: &BioKey) -> Result<BioTemplate> {
    build_bio_template(&ensemble_average(beats)?, key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::keys::gen_bio_key;

    fn beat(samples: Vec<f64>) -> BeatSegment {
        BeatSegment {
            samples,
            fs: 1000.0,
            duration_s: 0.8,
        }
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn brute_conv(a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for n in 0..out.len() {
            for i in 0..a.len() {
                if n >= i && n - i < b.len() {
                    out[n] += a[i] * b[n - i];
                }
            }
        }
        out
    }

    #[test]
    fn average_of_one_and_of_opposites() {
        let x = vec![1.0, -2.0, 3.5];
        assert_eq!(ensemble_average(&[beat(x.clone())]).unwrap(), x);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!(ensemble_average(&[beat(x), beat(neg)])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn average_matches_naive_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let beats: Vec<_> = (0..15).map(|_| beat(random_vec(&mut rng, 800))).collect();
        let avg = ensemble_average(&beats).unwrap();
        for (j, &a) in avg.iter().enumerate() {
            let mut acc = 0.0;
            for b in &beats {
                acc += b.samples[j];
            }
            assert!((a - acc / 15.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn average_errors() {
        assert!(ensemble_average(&[]).is_err());
        assert!(ensemble_average(&[beat(vec![0.0; 3]), beat(vec![0.0; 4])]).is_err());
    }

    #[test]
    fn template_length_is_l_minus_k() {
        let key = gen_bio_key(800, 4, 1).unwrap();
        let t = build_bio_template(&vec![0.5; 800], &key).unwrap();
        assert_eq!(t.values.len(), 796);
    }

    #[test]
    fn unit_head_is_identity_kernel() {
        let key = BioKey::new(8, vec![1, 2]).unwrap();
        let avg = [1.0, 5.0, 6.0, 7.0, 2.0, 3.0, 4.0, 5.0];
        let t = build_bio_template(&avg, &key).unwrap();
        // piece 0: [1] * [5,6,7]; piece 1: [2,3] * [4,5]
        assert_eq!(t.values, vec![5.0, 6.0, 7.0, 8.0, 22.0, 15.0]);
    }

    #[test]
    fn blocks_match_brute_force_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let avg = random_vec(&mut rng, 40);
        let key = BioKey::new(40, vec![3, 3, 7, 1]).unwrap();
        let t = build_bio_template(&avg, &key).unwrap();
        let mut want = Vec::new();
        for (i, piece) in avg.chunks(10).enumerate() {
            let r = key.splits()[i];
            want.extend(brute_conv(&piece[..r], &piece[r..]));
        }
        for (a, b) in t.values.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn zero_piece_gives_zero_block() {
        let key = BioKey::new(8, vec![2, 2]).unwrap();
        let t = build_bio_template(&[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0], &key).unwrap();
        assert_eq!(&t.values[..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn key_length_mismatch_is_an_error() {
        let key = gen_bio_key(800, 4, 1).unwrap();
        assert!(build_bio_template(&[0.0; 400], &key).is_err());
    }

    #[test]
    fn probe_of_one_beat_is_its_template() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_vec(&mut rng, 80);
        let key = gen_bio_key(80, 4, 2).unwrap();
        assert_eq!(
            bio_probe(&[beat(x.clone())], &key).unwrap(),
            build_bio_template(&x, &key).unwrap()
        );
    }

    #[test]
    fn different_keys_give_different_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let beats: Vec<_> = (0..3).map(|_| beat(random_vec(&mut rng, 800))).collect();
        for s in 0..100u64 {
            let a = gen_bio_key(800, 4, 2 * s).unwrap();
            let b = gen_bio_key(800, 4, 2 * s + 1).unwrap();
            assert_ne!(bio_probe(&beats, &a).unwrap(), bio_probe(&beats, &b).unwrap());
        }
    }

    proptest! {
        #[test]
        fn quadratic_scaling(seed in any::<u64>(), c in -4.0f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let avg = random_vec(&mut rng, 120);
            let key = gen_bio_key(120, 4, seed).unwrap();
            let base = build_bio_template(&avg, &key).unwrap();
            let scaled_avg: Vec<f64> = avg.iter().map(|v| c * v).collect();
            let scaled = build_bio_template(&scaled_avg, &key).unwrap();
            for (a, b) in base.values.iter().zip(&scaled.values) {
                prop_assert!((c * c * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn single_split_change_alters_its_block(seed in any::<u64>(), piece in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let avg = random_vec(&mut rng, 80);
            let key = gen_bio_key(80, 4, seed).unwrap();
            let mut splits = key.splits().to_vec();
            splits[piece] = if splits[piece] == 19 { 18 } else { splits[piece] + 1 };
            let other = BioKey::new(80, splits).unwrap();
            let a = build_bio_template(&avg, &key).unwrap();
            let b = build_bio_template(&avg, &other).unwrap();
            let block = 19;
            let range = piece * block..(piece + 1) * block;
            prop_assert_ne!(&a.values[range.clone()], &b.values[range]);
        }
    }
}
