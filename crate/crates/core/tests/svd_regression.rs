//! A hard-clipped 32×32 gradient on which cyclic Jacobi used to stall.

use specclip::io::read_matrix;
use specclip::linalg::{full_svd, msign, MsignMethod};
use std::path::Path;

fn fixture() -> specclip::Matrix {
    read_matrix(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/jacobi_stall_32x32.csv")).unwrap()
}

#[test]
fn jacobi_converges_on_stall_fixture() {
    let a = fixture();
    let svd = full_svd(&a).unwrap();
    let back = svd.reconstruct();
    let err = a.sub(&back).unwrap().as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(err < 1e-12, "reconstruction error {err:e}");
    let q = msign(&a, MsignMethod::ExactSvd).unwrap();
    let qtq = q.transpose().matmul(&q).unwrap();
    for i in 0..32 {
        for j in 0..32 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((qtq[(i, j)] - want).abs() < 1e-12);
        }
    }
}
