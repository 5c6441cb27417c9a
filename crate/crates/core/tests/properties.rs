use nalgebra::DMatrix;
use proptest::prelude::*;
use rangesep::dirac::{apply_laplacian, dense_laplacian};
use rangesep::io::{read_rstf, write_rstf};
use rangesep::tensor::{canonical_to_tucker, tucker_to_canonical, CanonicalTensor};

fn canonical(dims: Vec<usize>, rank: usize) -> impl Strategy<Value = CanonicalTensor> {
    let total: usize = dims.iter().map(|n| n * rank).sum();
    (
        prop::collection::vec(-2.0f64..2.0, rank),
        prop::collection::vec(-1.0f64..1.0, total),
    )
        .prop_map(move |(w, data)| {
            let mut off = 0;
            let factors = dims
                .iter()
                .map(|&n| {
                    let m = DMatrix::from_column_slice(n, rank, &data[off..off + n * rank]);
                    off += n * rank;
                    m
                })
                .collect();
            CanonicalTensor::new(w, factors).unwrap()
        })
}

fn pair() -> impl Strategy<Value = (CanonicalTensor, CanonicalTensor)> {
    (prop::collection::vec(3usize..6, 3), 0usize..4, 0usize..4)
        .prop_flat_map(|(dims, ra, rb)| (canonical(dims.clone(), ra), canonical(dims, rb)))
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-12 * scale.max(1.0)
}

proptest! {
    #[test]
    fn inner_matches_dense((a, b) in pair()) {
        let fa = a.full().unwrap();
        let fb = b.full().unwrap();
        let scale = fa.frobenius() * fb.frobenius();
        prop_assert!(close(a.inner(&b).unwrap(), fa.dot(&fb).unwrap(), scale));
        prop_assert!(a.inner(&a).unwrap() >= -1e-12 * scale);
    }

    #[test]
    fn sum_matches_dense((a, b) in pair()) {
        let s = a.sum(&b).unwrap();
        prop_assert_eq!(s.rank(), a.rank() + b.rank());
        let expect = a.full().unwrap().add(&b.full().unwrap()).unwrap();
        let got = s.full().unwrap();
        for (x, y) in got.as_slice().iter().zip(expect.as_slice()) {
            prop_assert!(close(*x, *y, expect.max_abs()));
        }
    }

    #[test]
    fn laplacian_is_linear_and_matches_dense((a, b) in pair(), c in -3.0f64..3.0) {
        let h = 0.3;
        let lhs = apply_laplacian(&a.sum(&b.scale(c)).unwrap(), h).unwrap().full().unwrap();
        let la = apply_laplacian(&a, h).unwrap();
        prop_assert_eq!(la.rank(), 3 * a.rank());
        let rhs = la.full().unwrap().add(&apply_laplacian(&b, h).unwrap().full().unwrap().scale(c)).unwrap();
        let dense = dense_laplacian(&a.full().unwrap(), h);
        let scale = rhs.max_abs().max(dense.max_abs());
        for (x, y) in lhs.as_slice().iter().zip(rhs.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-10 * scale.max(1.0));
        }
        for (x, y) in la.full().unwrap().as_slice().iter().zip(dense.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-10 * scale.max(1.0));
        }
    }

    #[test]
    fn rstf_round_trip_is_exact((a, _) in pair()) {
        let mut buf = Vec::new();
        write_rstf(&a, &mut buf).unwrap();
        prop_assert_eq!(read_rstf(&buf[..]).unwrap(), a);
    }

    #[test]
    fn tucker_round_trip((a, _) in (prop::collection::vec(3usize..7, 3), 1usize..5)
        .prop_flat_map(|(dims, r)| (canonical(dims.clone(), r), canonical(dims, 0)))) {
        let t = canonical_to_tucker(&a, 1e-12).unwrap();
        prop_assert!(t.orthogonality_defect() < 1e-12);
        let back = tucker_to_canonical(&t, 1e-12).unwrap();
        let fa = a.full().unwrap();
        let err = back.full().unwrap().sub(&fa).unwrap().frobenius();
        prop_assert!(err <= 1e-10 * fa.frobenius().max(1e-300));
    }
}
