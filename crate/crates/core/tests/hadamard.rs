use qmamba::tensor::Matrix;
use qmamba::Error;
use qmamba::hadamard::*;
use proptest::prelude::*;

#[test]
fn small_orders() {
    assert_eq!(build_hadamard(1).unwrap().entries(), vec![1]);
    assert_eq!(build_hadamard(2).unwrap().entries(), vec![1, 1, 1, -1]);
    let g = build_hadamard(4).unwrap().gram();
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(g[i * 4 + j], if i == j { 4 } else { 0 });
        }
    }
    assert!(matches!(build_hadamard(6), Err(Error::NotPowerOfTwo(6))));
    assert!(build_hadamard(0).is_err());
}

#[test]
fn transform_examples() {
    let t = |rows: Vec<Vec<f64>>, m| hadamard_transform_groups(&Matrix::from_rows(&rows).unwrap(), m).unwrap();
    assert_eq!(t(vec![vec![1.0, 0.0]], 1).data(), &[1.0, 1.0]);
    assert_eq!(t(vec![vec![1.0, 1.0]], 1).data(), &[2.0, 0.0]);
    let (a, b, c, d) = (3.0, -1.5, 0.25, 8.0);
    assert_eq!(t(vec![vec![a, b, c, d]], 2).data(), &[a + b, a - b, c + d, c - d]);
    let x = Matrix::from_rows(&[vec![1.0; 6]]).unwrap();
    assert!(matches!(hadamard_transform_groups(&x, 2), Err(Error::GroupRule { .. })));
    assert!(hadamard_transform_groups(&x, 4).is_err());
}

#[test]
fn group_rules() {
    assert_eq!(group_width(256, 4).unwrap(), 64);
    assert!(group_width(96, 1).is_err());
    assert_eq!(default_groups(128, 64).unwrap(), 2);
    assert_eq!(default_groups(32, 64).unwrap(), 1);
    assert!(default_groups(96, 64).is_err());
}

proptest! {
    #[test]
    fn fwht_matches_dense_product(k in 0u32..7, seed in prop::collection::vec(-1000i64..1000, 64)) {
        let n = 1usize << k;
        let x: Vec<i64> = seed[..n].to_vec();
        let h = build_hadamard(n).unwrap();
        let dense: Vec<i64> = (0..n).map(|c| (0..n).map(|r| x[r] * h.get(r, c) as i64).sum()).collect();
        let mut fast: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        fwht(&mut fast);
        prop_assert_eq!(fast, dense.iter().map(|&v| v as f64).collect::<Vec<_>>());
    }
}
