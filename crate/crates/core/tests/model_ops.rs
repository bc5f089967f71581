use qmamba::tensor::Matrix;
use qmamba::model::*;

#[test]
fn rms_norm_examples() {
    let y = rms_norm(&[3.0f64, 4.0], &[1.0, 1.0], 0.0).unwrap();
    assert!((y[0] - 0.848528).abs() < 1e-6 && (y[1] - 1.131371).abs() < 1e-6);
    assert_eq!(rms_norm(&[0.0f64; 4], &[1.0; 4], 1e-5).unwrap(), vec![0.0; 4]);
    assert_eq!(rms_norm(&[0.0f64; 4], &[1.0; 4], 0.0).unwrap(), vec![0.0; 4]);
    assert_eq!(rms_norm(&[1.0f64, 2.0], &[0.0, 0.0], 1e-5).unwrap(), vec![0.0, 0.0]);
    assert!(rms_norm(&[1.0f64], &[1.0, 1.0], 0.0).is_err());
}

#[test]
fn silu_examples() {
    assert_eq!(silu(0.0f64), 0.0);
    assert!((silu(10.0f64) - 9.99955).abs() < 1e-5);
    for x in [-3.0f64, -0.5, 0.25, 7.0] {
        assert!((silu(-x) - (silu(x) - x)).abs() < 1e-12);
    }
}

fn conv(x: &[f64], k: &[f64]) -> Vec<f64> {
    let xm = Matrix::from_vec(x.len(), 1, x.to_vec()).unwrap();
    let km = Matrix::from_vec(1, k.len(), k.to_vec()).unwrap();
    let mut w = ConvWindow::zeros(1, k.len());
    causal_conv1d(&xm, &km, &[0.0], &mut w).unwrap().into_vec()
}

#[test]
fn conv_examples() {
    assert_eq!(conv(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0; 4]), vec![1.0, 3.0, 6.0, 10.0, 14.0]);
    assert_eq!(conv(&[1.0, -2.0, 3.5], &[0.0, 0.0, 0.0, 1.0]), vec![1.0, -2.0, 3.5]);

    let km = Matrix::from_vec(1, 4, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
    let mut w = ConvWindow::zeros(1, 4);
    let first = Matrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    causal_conv1d(&first, &km, &[0.1], &mut w).unwrap();
    assert_eq!(w.data(), &[2.0, 3.0, 4.0]);
    let next = causal_conv1d(&Matrix::from_vec(1, 1, vec![5.0]).unwrap(), &km, &[0.1], &mut w).unwrap();
    let mut w2 = ConvWindow::zeros(1, 4);
    let all = Matrix::from_vec(5, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let full = causal_conv1d(&all, &km, &[0.1], &mut w2).unwrap();
    assert_eq!(next.data()[0], full.data()[4]);
}

#[test]
fn conv_is_causal() {
    let k = [0.3, -0.7, 1.1, 0.2];
    let a = conv(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &k);
    let b = conv(&[1.0, 2.0, 3.0, 40.0, -5.0, 0.0], &k);
    assert_eq!(a[..3], b[..3]);
}

#[test]
fn conv_kernel_mismatch() {
    let x = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
    let k = Matrix::from_vec(1, 3, vec![1.0; 3]).unwrap();
    assert!(causal_conv1d(&x, &k, &[0.0], &mut ConvWindow::zeros(1, 4)).is_err());
}
