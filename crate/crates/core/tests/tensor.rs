use qmamba::tensor::*;

#[test]
fn matmul_t_matches_hand_product() {
    let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 2.0]]).unwrap();
    let y = x.matmul_t(&w).unwrap();
    assert_eq!(y.data(), &[1.0, 3.0, 4.0, 3.0, 7.0, 8.0]);
    assert!(x.matmul_t(&Matrix::<f64>::zeros(1, 3)).is_err());
}

#[test]
fn transpose_and_blocks() {
    let x = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    assert_eq!(x.transpose().data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    assert_eq!(x.column_block(1, 2).data(), &[2.0, 3.0, 5.0, 6.0]);
    assert!(Matrix::<f64>::from_vec(2, 2, vec![1.0]).is_err());
}
