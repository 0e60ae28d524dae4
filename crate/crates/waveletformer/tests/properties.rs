//! Randomized property tests for the structural invariants.

use proptest::prelude::*;
use waveletformer::attention::{window_merge, window_partition};
use waveletformer::data::{apply_asm, synth_depth, DepthKind, HazeParams};
use waveletformer::tape::Tape;
use waveletformer::tensor::Tensor;
use waveletformer::wavelet::{dwt2d, idwt2d, WaveletFamily};

fn family_strategy() -> impl Strategy<Value = WaveletFamily> {
    prop_oneof![
        Just(WaveletFamily::Haar),
        Just(WaveletFamily::Db2),
        Just(WaveletFamily::Db4),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dwt_reconstructs_and_conserves_energy(
        family in family_strategy(),
        half_h in 2usize..12,
        half_w in 2usize..12,
        channels in 1usize..4,
        seed in 0u64..1_000_000,
    ) {
        let x = Tensor::rand_uniform(&[1, channels, 2 * half_h, 2 * half_w], -2.0, 2.0, seed);
        let s = dwt2d(&x, family).unwrap();
        prop_assert!((s.energy() - x.sq_norm()).abs() < 1e-10);
        let r = idwt2d(&s, family).unwrap();
        prop_assert!(r.max_abs_diff(&x) < 1e-10);
    }

    #[test]
    fn window_partition_is_a_bijection(
        win in 1usize..5,
        grid_h in 1usize..4,
        grid_w in 1usize..4,
        channels in 1usize..5,
        seed in 0u64..1_000_000,
    ) {
        let (h, w) = (win * grid_h, win * grid_w);
        let x = Tensor::rand_uniform(&[1, channels, h, w], -1.0, 1.0, seed);
        let tokens = window_partition(&x, win).unwrap();
        prop_assert_eq!(tokens.shape(), &[grid_h * grid_w, win * win, channels]);
        let back = window_merge(&tokens, [1, channels, h, w], win).unwrap();
        prop_assert_eq!(back.data(), x.data());

        // multiset equality: partitioning permutes, never mixes
        let mut a: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = tokens.data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn softmax_lanes_are_stochastic_and_shift_invariant(
        rows in 1usize..5,
        cols in 2usize..9,
        shift in -20.0f64..20.0,
        seed in 0u64..1_000_000,
    ) {
        let x = Tensor::rand_uniform(&[rows, cols], -5.0, 5.0, seed);
        let mut tape = Tape::new();
        let a = tape.leaf(x.clone());
        let s1 = tape.softmax(a, 1).unwrap();
        for r in 0..rows {
            let sum: f64 = tape.value(s1).data()[r * cols..][..cols].iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(tape.value(s1).data()[r * cols..][..cols].iter().all(|&v| v > 0.0));
        }
        let b = tape.leaf(x.map(|v| v + shift));
        let s2 = tape.softmax(b, 1).unwrap();
        let diff = tape.value(s1).max_abs_diff(tape.value(s2));
        prop_assert!(diff < 1e-12);
    }

    #[test]
    fn haze_moves_monotonically_toward_ambient(
        beta_lo in 0.05f64..1.0,
        extra in 0.05f64..2.0,
        seed in 0u64..1_000_000,
    ) {
        let clean = Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, seed);
        let depth = synth_depth(8, 8, DepthKind::Radial, seed);
        let mk = |beta: f64| HazeParams {
            ambient: [0.85, 0.8, 0.9],
            beta,
            depth: depth.clone(),
            t_min: 0.0,
        };
        // larger beta means smaller transmission, so the hazy image moves
        // farther from the clean scene at every pixel
        let near = apply_asm(&clean, &mk(beta_lo)).unwrap();
        let far = apply_asm(&clean, &mk(beta_lo + extra)).unwrap();
        for ((n, f), c) in near.data().iter().zip(far.data()).zip(clean.data()) {
            prop_assert!((n - c).abs() <= (f - c).abs() + 1e-12);
        }
    }
}
