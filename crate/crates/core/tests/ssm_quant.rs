use qmamba::fixpoint::{Counters, FixTensor};
use qmamba::Error;
use qmamba::ssm::*;
use qmamba::ssm::ssm_prefill;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(seed: u64, dims: SsmDims, l: usize) -> (SsmParams<f64>, Vec<StepInputs<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hh = dims.n_heads;
    let a = (0..hh).map(|_| -rng.random_range(0.5..8.0)).collect();
    let d = (0..hh).map(|_| rng.random_range(-1.0..1.0)).collect();
    let bias = (0..hh).map(|_| rng.random_range(-5.0..-2.0)).collect();
    let params = SsmParams::new(a, d, bias).unwrap();
    let mut v = |k: usize, s: f64| (0..k).map(|_| rng.random_range(-s..s)).collect::<Vec<f64>>();
    let seq = (0..l)
        .map(|_| StepInputs {
            x: v(dims.inner(), 2.0),
            b: v(hh * dims.d_state, 1.0),
            c: v(hh * dims.d_state, 1.0),
            dt: v(hh, 1.0),
        })
        .collect();
    (params, seq)
}

#[test]
fn calibration_rules() {
    let dims = SsmDims::new(1, 1, 1).unwrap();
    let params = SsmParams::new(vec![-1.0], vec![0.0], vec![0.0]).unwrap();
    let zero = vec![StepInputs::zeros(&dims)];
    let f = ssm_quant_calibrate(&zero, &params, dims).unwrap();
    assert_eq!((f.x.frac(), f.b.frac(), f.h.frac()), (DEFAULT_FRAC, DEFAULT_FRAC, DEFAULT_FRAC));
    assert!(matches!(ssm_quant_calibrate::<f64>(&[], &params, dims), Err(Error::EmptySample)));

    let inp = StepInputs { x: vec![3.2], b: vec![0.0], c: vec![0.0], dt: vec![0.0] };
    let f = ssm_quant_calibrate(&[inp], &params, dims).unwrap();
    // tightest fit is frac 13, one bit of headroom leaves 12
    assert_eq!(f.x.frac(), 12);
    assert_eq!(act_format(1.9).frac(), 13);
    assert!(15 - act_format(1.9).frac() >= 2);
}

#[test]
fn format_table_round_trip() {
    let (params, seq) = fixture(3, SsmDims::new(2, 4, 8).unwrap(), 8);
    let f = ssm_quant_calibrate(&seq, &params, SsmDims::new(2, 4, 8).unwrap()).unwrap();
    assert_eq!(SsmFormats::from_table(&f.to_table()).unwrap(), f);
    assert!(SsmFormats::from_table(&[16, 0]).is_err());
}

#[test]
fn quantized_tracks_reference() {
    let dims = SsmDims::new(2, 4, 8).unwrap();
    let (params, seq) = fixture(11, dims, 8);
    let f = ssm_quant_calibrate(&seq, &params, dims).unwrap();
    let qs = QuantSsm::new(&params, dims, f).unwrap();
    let (yq, cnt) = qs.prefill_real(&seq).unwrap();
    assert_eq!(cnt, Counters::default());
    let (yr, _) = ssm_prefill(&seq, &params, &dims, Nonlinearity::Pwl).unwrap();
    let (num, den) = yq.iter().flatten().zip(yr.iter().flatten()).fold((0.0, 0.0), |(n, d), (a, b)| {
        (n + (a - b) * (a - b), d + b * b)
    });
    let rel = (num / den).sqrt();
    assert!(rel < 0.01, "{rel}");
}

#[test]
fn quantized_prefill_equals_stepping() {
    let dims = SsmDims::new(3, 2, 4).unwrap();
    let (params, seq) = fixture(5, dims, 12);
    let qs = QuantSsm::new(&params, dims, ssm_quant_calibrate(&seq, &params, dims).unwrap()).unwrap();
    let q: Vec<_> = seq.iter().map(|s| qs.quantize_inputs(s).unwrap().0).collect();
    let (ys, fin, _) = qs.prefill(&q).unwrap();
    let mut st = qs.zero_state();
    for (inp, y) in q.iter().zip(&ys) {
        assert_eq!(&qs.step(&mut st, inp).unwrap().0, y);
    }
    assert_eq!(st, fin);
}

#[test]
fn quantized_zero_input_contracts() {
    let dims = SsmDims::new(2, 3, 4).unwrap();
    let (params, seq) = fixture(8, dims, 6);
    let qs = QuantSsm::new(&params, dims, ssm_quant_calibrate(&seq, &params, dims).unwrap()).unwrap();
    let mut st = qs.zero_state();
    for s in &seq {
        qs.step(&mut st, &qs.quantize_inputs(s).unwrap().0).unwrap();
    }
    let mut z = seq[0].clone();
    z.x.iter_mut().for_each(|v| *v = 0.0);
    let z = qs.quantize_inputs(&z).unwrap().0;
    let mut prev = st.max_abs_code();
    assert!(prev > 0);
    for _ in 0..10 {
        qs.step(&mut st, &z).unwrap();
        assert!(st.max_abs_code() <= prev);
        prev = st.max_abs_code();
    }
}

#[test]
fn rejects_mismatched_inputs() {
    let dims = SsmDims::new(2, 2, 2).unwrap();
    let (params, seq) = fixture(1, dims, 2);
    let qs = QuantSsm::new(&params, dims, SsmFormats::default()).unwrap();
    let mut q = qs.quantize_inputs(&seq[0]).unwrap().0;
    q.x = FixTensor::vector(vec![0; 3], qs.formats().x).unwrap();
    assert!(qs.step(&mut qs.zero_state(), &q).is_err());
}
