use qmamba::Error;
use qmamba::fixpoint::*;
use proptest::prelude::*;

/// Exhaustive oracle: walk every candidate exponent upward.
fn pot_oracle(peak: f64, width: u8) -> i32 {
    if peak == 0.0 {
        return 0;
    }
    let qmax = ((1i64 << (width - 1)) - 1) as f64;
    (-200..200).find(|&p| peak / 2f64.powi(p) <= qmax).unwrap()
}

#[test]
fn pot_exponent_examples() {
    assert_eq!(choose_pot_exponent(&[3.2, -1.0], 8).unwrap(), -5);
    assert_eq!(pot_oracle(3.2, 8), -5);
    assert_eq!(choose_pot_exponent(&[0.0; 4], 16).unwrap(), 0);
    assert_eq!(choose_pot_exponent(&[127.0], 8).unwrap(), 0);
    assert_eq!(choose_pot_exponent(&[128.0], 8).unwrap(), 1);
    assert!(matches!(choose_pot_exponent(&[f64::NAN], 8), Err(Error::NonFinite)));
    assert!(matches!(choose_pot_exponent(&[1.0, f64::INFINITY], 8), Err(Error::NonFinite)));
    assert!(choose_pot_exponent::<f64>(&[], 8).is_err());
}

#[test]
fn quantize_examples() {
    let f = FixFormat::new(8, 2).unwrap();
    let (t, s) = quantize_pot(&[0.75], &[1], f).unwrap();
    assert_eq!((t.codes()[0], s), (3, 0));
    let (t, _) = quantize_pot(&[0.8], &[1], f).unwrap();
    assert_eq!(t.codes()[0], 3);
    let back: Vec<f64> = dequantize(&t);
    assert!((back[0] - 0.8).abs() <= 0.125);
    let (t, s) = quantize_pot(&[1000.0], &[1], FixFormat::new(8, 0).unwrap()).unwrap();
    assert_eq!((t.codes()[0], s), (127, 1));
    let (t, _) = quantize_pot(&[-1.5, 2.5, -2.5], &[3], FixFormat::new(8, 0).unwrap()).unwrap();
    assert_eq!(t.codes(), &[-2, 2, -2]);
}

#[test]
fn dequantize_examples() {
    let t = FixTensor::new(vec![1], vec![3], FixFormat::new(16, 2).unwrap()).unwrap();
    assert_eq!(dequantize::<f64>(&t), vec![0.75]);
    let t = FixTensor::new(vec![1], vec![-128], FixFormat::new(8, 0).unwrap()).unwrap();
    assert_eq!(dequantize::<f64>(&t), vec![-128.0]);
    let t = FixTensor::new(vec![1], vec![512], FixFormat::new(16, 10).unwrap()).unwrap();
    assert_eq!(dequantize::<f64>(&t), vec![0.5]);
}

#[test]
fn shift_round_is_half_even() {
    assert_eq!(shift_round(3, 1), 2); // 1.5
    assert_eq!(shift_round(5, 1), 2); // 2.5
    assert_eq!(shift_round(-3, 1), -2);
    assert_eq!(shift_round(-5, 1), -2);
    assert_eq!(shift_round(7, 2), 2); // 1.75
    assert_eq!(shift_round(3, -2), 12);
}

proptest! {
    #[test]
    fn pot_exponent_matches_oracle(peak in 1e-6f64..1e6, w in prop::sample::select(vec![8u8, 16])) {
        prop_assert_eq!(choose_pot_exponent(&[peak], w).unwrap(), pot_oracle(peak, w));
    }

    #[test]
    fn representable_values_round_trip(code in -32768i32..=32767, frac in -8i32..20) {
        let f = FixFormat::new(16, frac).unwrap();
        let x = code as f64 * 2f64.powi(-frac);
        let (t, s) = quantize_pot(&[x], &[1], f).unwrap();
        prop_assert_eq!(s, 0);
        prop_assert_eq!(dequantize::<f64>(&t)[0], x);
    }

    #[test]
    fn error_bounded_by_half_ulp(x in -100.0f64..100.0, frac in 0i32..8) {
        let f = FixFormat::new(16, frac).unwrap();
        let (t, s) = quantize_pot(&[x], &[1], f).unwrap();
        prop_assume!(s == 0);
        prop_assert!((dequantize::<f64>(&t)[0] - x).abs() <= f.ulp() / 2.0);
    }
}
