mod common;

use common::circular_autocorr;
use hrir_ident::signals::{build_excitation_bank, generate_perfect_sweep};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn autocorrelation_is_a_delta(half in 1usize..300) {
        let sweep = generate_perfect_sweep(2 * half).unwrap();
        let r = circular_autocorr(sweep.samples());
        let peak = r[0];
        prop_assert!((peak - (2 * half) as f64).abs() < 1e-9 * peak);
        for &v in &r[1..] {
            prop_assert!(v.abs() <= 1e-9 * peak);
        }
    }

    #[test]
    fn regressor_matches_the_bank_layout(speakers in 1usize..4, taps in 1usize..6, extra in 0usize..20) {
        prop_assume!((speakers * taps) % 2 == 0);
        let len = speakers * taps + extra + 1;
        let sweep = generate_perfect_sweep(speakers * taps).unwrap();
        let bank = build_excitation_bank(&sweep, speakers, taps, len).unwrap();
        for n in 0..len {
            let x = bank.regressor(n).unwrap().values;
            for s in 0..speakers {
                for j in 0..taps {
                    let expected = if j > n { 0.0 } else { bank.row(s)[n - j] };
                    prop_assert_eq!(x[s * taps + j], expected);
                }
            }
        }
    }

    #[test]
    fn rows_are_shifted_copies(speakers in 1usize..5, taps in 1usize..8) {
        prop_assume!((speakers * taps) % 2 == 0);
        let p = speakers * taps;
        let sweep = generate_perfect_sweep(p).unwrap();
        let bank = build_excitation_bank(&sweep, speakers, taps, 2 * p).unwrap();
        for s in 0..speakers {
            for n in 0..p {
                prop_assert_eq!(bank.row(s)[n], bank.row(0)[(n + s * taps) % p]);
            }
        }
    }
}
