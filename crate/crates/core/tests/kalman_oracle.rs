use fairtrack::motion::{KalmanFilter, CHI2_INV_95};
use fairtrack::BBox;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn chi2_table_matches_inverse_cdf() {
    for (i, &v) in CHI2_INV_95.iter().enumerate() {
        let exact = ChiSquared::new((i + 1) as f64).unwrap().inverse_cdf(0.95);
        assert!((v - exact).abs() < 5e-4, "dof {}: {v} vs {exact}", i + 1);
    }
}

#[test]
fn covariance_stays_symmetric_psd() {
    let kf = KalmanFilter::<f64>::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = kf
        .initiate(&BBox::from_tlwh(100.0, 100.0, 40.0, 100.0).unwrap())
        .unwrap();
    for cycle in 0..1000 {
        s = kf.predict(&s);
        if rng.random::<f64>() < 0.8 {
            let b = s.bbox();
            let (cx, cy) = b.center();
            let h = rng.random_range(20.0..200.0);
            let w = h * rng.random_range(0.2..1.0);
            let meas = BBox::from_center(
                cx + rng.random_range(-20.0..20.0),
                cy + rng.random_range(-20.0..20.0),
                w,
                h,
            );
            s = kf.update(&s, &meas).unwrap();
        }
        let p = DMatrix::from_fn(8, 8, |i, j| s.covariance[i][j]);
        for i in 0..8 {
            for j in 0..8 {
                assert!(
                    (p[(i, j)] - p[(j, i)]).abs() <= 1e-9 * (1.0 + p[(i, j)].abs()),
                    "cycle {cycle}"
                );
            }
        }
        let min = SymmetricEigen::new(p).eigenvalues.min();
        assert!(min >= -1e-9, "cycle {cycle}: eigenvalue {min}");
    }
}

#[test]
fn update_matches_dense_oracle() {
    // textbook K = P Hᵀ (H P Hᵀ + R)⁻¹ with explicit inverse
    let kf = KalmanFilter::<f64>::default();
    let s0 = kf
        .initiate(&BBox::from_tlwh(10.0, 20.0, 30.0, 60.0).unwrap())
        .unwrap();
    let s = kf.predict(&kf.predict(&s0));
    let meas = BBox::from_tlwh(14.0, 19.0, 32.0, 62.0).unwrap();
    let got = kf.update(&s, &meas).unwrap();

    let p = DMatrix::from_fn(8, 8, |i, j| s.covariance[i][j]);
    let hm = DMatrix::from_fn(4, 8, |i, j| if i == j { 1.0 } else { 0.0 });
    let h = s.mean[3];
    let std = [h / 20.0, h / 20.0, 1e-1, h / 20.0];
    let r = DMatrix::from_fn(4, 4, |i, j| if i == j { std[i] * std[i] } else { 0.0 });
    let sm = &hm * &p * hm.transpose() + r;
    let k = &p * hm.transpose() * sm.try_inverse().unwrap();
    let (cx, cy) = meas.center();
    let z = nalgebra::DVector::from_vec(vec![cx, cy, meas.width() / meas.height(), meas.height()]);
    let x = nalgebra::DVector::from_fn(8, |i, _| s.mean[i]);
    let mean = &x + &k * (z - &hm * &x);
    let cov = &p - &k * &hm * &p;
    for i in 0..8 {
        assert!((got.mean[i] - mean[i]).abs() < 1e-9, "mean {i}");
        for j in 0..8 {
            assert!(
                (got.covariance[i][j] - cov[(i, j)]).abs() < 1e-8 * (1.0 + cov[(i, j)].abs()),
                "cov {i} {j}"
            );
        }
    }
}

#[test]
fn constant_velocity_one_step_error() {
    let kf = KalmanFilter::<f64>::default();
    let at = |t: f64| BBox::from_center(200.0 + 3.0 * t, 150.0 - 1.5 * t, 40.0, 100.0 + 0.2 * t);
    let mut s = kf.initiate(&at(0.0)).unwrap();
    for t in 1..=10 {
        s = kf.predict(&s);
        s = kf.update(&s, &at(t as f64)).unwrap();
    }
    let pred = kf.predict(&s).bbox();
    let (px, py) = pred.center();
    let (tx, ty) = at(11.0).center();
    assert!(((px - tx).powi(2) + (py - ty).powi(2)).sqrt() < 0.5);
}
