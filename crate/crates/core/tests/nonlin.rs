use qmamba::fixpoint::{FixFormat, FixTensor};
use qmamba::scalar::Real;
use qmamba::Error;
use qmamba::nonlin::*;
use qmamba::fixpoint::{dequantize, quantize_pot};
use qmamba::Exact;

#[test]
fn table_shape() {
    let t = PwlTable::build();
    let last = t.segments()[7];
    assert_eq!(last.v_lo, -0.125);
    assert!((last.slope - 0.66397).abs() < 1e-4);
    assert!((2f64.powf(-0.125) - 0.91700).abs() < 1e-5);
    assert_eq!(t.eval(&0.0), 1.0);
    assert!((t.eval(&-0.999_999f64) - 0.5).abs() < 1e-3);
    assert_eq!(last.intercept_code, 1 << 14);
    for (k, s) in t.segments().iter().enumerate() {
        assert_eq!(s.v_lo, -1.0 + k as f64 / 8.0);
    }
    assert_eq!(t.to_csv().lines().count(), 9);
}

#[test]
fn chord_error_bound() {
    // dense sweep oracle; analytic bound (ln 2)^2 h^2 / 8 = 9.4e-4
    let t = PwlTable::build();
    let worst = (1..=1_000_000)
        .map(|i| -(i as f64) / 1_000_000.0)
        .map(|v| (t.eval(&v) - v.exp2()).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1.1e-3, "{worst}");
    assert!(worst > 8.9e-4);
}

#[test]
fn split_examples() {
    assert_eq!(split_uv(&0.0).unwrap(), (0, 0.0));
    assert_eq!(split_uv(&-1.4375).unwrap(), (-1, -0.4375));
    assert_eq!(split_uv(&-0.99636).unwrap(), (0, -0.99636));
    assert_eq!(split_uv(&-2.0).unwrap(), (-2, 0.0));
    assert!(split_uv(&0.5).is_err());
}

#[test]
fn exp_examples() {
    let t = PwlTable::build();
    assert_eq!(exp_neg_approx(&0.0, &t).unwrap(), 1.0);
    assert!((exp_neg_approx(&-0.6931f64, &t).unwrap() - 0.5013).abs() < 1e-4);
    let e1 = exp_neg_approx(&-1.0f64, &t).unwrap();
    assert!((e1 - 0.369553).abs() < 1e-6, "{e1}");
    // 2^-0.4375 / 2 without the chord error
    assert!((e1 - 0.36926).abs() < 5e-4);
    assert!(matches!(exp_neg_approx(&0.1, &t), Err(Error::PositiveExpInput(_))));
}

#[test]
fn softplus_examples() {
    let t = PwlTable::build();
    assert_eq!(softplus_approx(&0.0, &t), 1.0);
    assert!((softplus_approx(&3.0f64, &t) - 3.0503).abs() < 2e-4);
    let x = Exact::of_f64(1.2345);
    let d = softplus_approx(&x, &t) - softplus_approx(&-x.clone(), &t) - x;
    assert_eq!(d, Exact::of_f64(0.0));
}

#[test]
fn rational_and_float_paths_agree() {
    let t = PwlTable::build();
    for i in 0..200 {
        let x = -(i as f64) * 0.0731;
        let a = exp_neg_approx(&x, &t).unwrap();
        let b = exp_neg_approx(&Exact::of_f64(x), &t).unwrap().as_f64();
        assert!((a - b).abs() <= 1e-15, "{x}: {a} vs {b}");
    }
}

fn lanes(vals: &[f64], frac: i32) -> FixTensor {
    quantize_pot(vals, &[vals.len()], FixFormat::q16(frac)).unwrap().0
}

#[test]
fn unit_examples() {
    let out = nl_unit_eval(NlMode::SoftPlus, &lanes(&[0.0; 24], 12)).unwrap();
    assert!(dequantize::<f64>(&out.tensor).iter().all(|&v| v == 1.0));

    let mut x = vec![0.0; 24];
    x[3] = -1.0;
    let out = nl_unit_eval(NlMode::Exp, &lanes(&x, 12)).unwrap();
    let got = dequantize::<f64>(&out.tensor)[3];
    let real = exp_neg_approx(&-1.0, &PwlTable::build()).unwrap();
    assert!((got - real).abs() <= EXP_OUT.ulp(), "{got} vs {real}");

    let mut x = vec![0.0; 24];
    x[0] = 2.5;
    x[1] = -2.5;
    let out = nl_unit_eval(NlMode::SoftPlus, &lanes(&x, 12)).unwrap();
    let v = dequantize::<f64>(&out.tensor);
    assert!((v[0] - v[1] - 2.5).abs() <= 2.0 * SOFTPLUS_OUT.ulp());

    assert!(nl_unit_eval(NlMode::Exp, &lanes(&[0.0; 8], 12)).is_err());
}

#[test]
fn positive_exp_lanes_clamp() {
    let mut x = vec![-0.5; 24];
    x[5] = 0.25;
    let out = nl_unit_eval(NlMode::Exp, &lanes(&x, 12)).unwrap();
    assert_eq!(out.clamped, 1);
    assert_eq!(out.tensor.codes()[5], 1 << 14);
}

#[test]
fn deep_negative_inputs_underflow_to_zero() {
    let unit = NlUnit::new(2);
    let out = unit.eval(NlMode::Exp, &FixTensor::vector(vec![-32768, -20000], FixFormat::q16(8)).unwrap()).unwrap();
    assert_eq!(out.tensor.codes(), &[0, 0]);
    let big = unit.eval(NlMode::SoftPlus, &FixTensor::vector(vec![32767, 4096], FixFormat::q16(12)).unwrap()).unwrap();
    // 7.9998 + e^-8 overflows frac 12; 1.0 + e^-1 fits
    assert_eq!(big.saturated, 1);
    assert_eq!(big.tensor.codes()[0], 32767);
    assert!((big.tensor.codes()[1] - 5608).abs() <= 2);
}

#[test]
fn fixed_path_tracks_real_path() {
    let table = PwlTable::build();
    let unit = NlUnit::new(1);
    for fi in [10, 12, 13] {
        for code in (-32768..=32767).step_by(7) {
            let t = FixTensor::vector(vec![code], FixFormat::q16(fi)).unwrap();
            let x = code as f64 * 2f64.powi(-fi);
            for mode in [NlMode::Exp, NlMode::SoftPlus] {
                if mode == NlMode::Exp && x > 0.0 {
                    continue;
                }
                let o = unit.eval(mode, &t).unwrap();
                if o.saturated > 0 {
                    continue;
                }
                let fixed = dequantize::<f64>(&o.tensor)[0];
                let real = match mode {
                    NlMode::Exp => exp_neg_approx(&x, &table).unwrap(),
                    NlMode::SoftPlus => softplus_approx(&x, &table),
                };
                let fo = unit.out_format(mode);
                assert!((fixed - real).abs() <= 2.0 * fo.ulp(), "fi {fi} x {x} {mode:?}: {fixed} vs {real}");
            }
        }
    }
}

#[test]
fn lane_order_does_not_matter() {
    let vals: Vec<f64> = (0..24).map(|i| (i as f64 - 12.0) * 0.37).collect();
    let mut rev = vals.clone();
    rev.reverse();
    let a = nl_unit_eval(NlMode::SoftPlus, &lanes(&vals, 12)).unwrap().tensor.into_codes();
    let mut b = nl_unit_eval(NlMode::SoftPlus, &lanes(&rev, 12)).unwrap().tensor.into_codes();
    b.reverse();
    assert_eq!(a, b);
}
