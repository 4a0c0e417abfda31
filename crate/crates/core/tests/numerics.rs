use approx::assert_relative_eq;
use notipkit::randomization::observed_pvalues;
use notipkit::rng::stream_rng;
use notipkit::{randomized_pvalue_matrix, t_to_pvalue, Alternative, DataMatrix, Design};
use rand_distr::{Distribution, StandardNormal};

/// Upper tail of Student t with 10 dof at 1, by Simpson's rule on the
/// density over [0, 1]. Gamma(5.5) = 10! / (4^5 5!) sqrt(pi), Gamma(5) = 24.
fn simpson_tail_t10_at_1() -> f64 {
    let pi = std::f64::consts::PI;
    let gamma_5_5 = 3_628_800.0 / (1024.0 * 120.0) * pi.sqrt();
    let c = gamma_5_5 / ((10.0 * pi).sqrt() * 24.0);
    let f = |t: f64| c * (1.0 + t * t / 10.0).powf(-5.5);
    let n = 2000;
    let h = 1.0 / n as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    0.5 - s * h / 3.0
}

#[test]
fn t_pvalue_matches_quadrature() {
    let oracle = simpson_tail_t10_at_1();
    assert_relative_eq!(oracle, 0.170_446, epsilon = 1e-5);
    assert_relative_eq!(t_to_pvalue(1.0, 10).unwrap(), oracle, epsilon = 1e-10);
}

#[test]
fn t_pvalue_symmetry_and_limits() {
    for &t in &[0.3, 1.7, 4.2] {
        let up = t_to_pvalue(t, 7).unwrap();
        let down = t_to_pvalue(-t, 7).unwrap();
        assert_relative_eq!(up + down, 1.0, epsilon = 1e-12);
    }
    assert_eq!(t_to_pvalue(0.0, 5).unwrap(), 0.5);
    assert_eq!(t_to_pvalue(f64::INFINITY, 5).unwrap(), 0.0);
    assert_eq!(t_to_pvalue(f64::NEG_INFINITY, 5).unwrap(), 1.0);
}

fn ks_uniform(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max)
}

fn gaussian_data(n: usize, m: usize, seed: u64) -> DataMatrix {
    let mut rng = stream_rng(seed, 0);
    let v: Vec<f64> = (0..n * m)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    DataMatrix::new(v, n, m).unwrap()
}

#[test]
fn null_pvalues_are_uniform() {
    let m = 2000;
    let data = gaussian_data(15, m, 11);
    let p = observed_pvalues(&data, &Design::OneSample, Alternative::Greater).unwrap();
    // 1.95 / sqrt(m) is the 0.1% critical value
    assert!(ks_uniform(p) < 1.95 / (m as f64).sqrt());
}

#[test]
fn sign_flipped_rows_are_uniform_on_independent_nulls() {
    let m = 2000;
    let data = gaussian_data(15, m, 12);
    let nulls = randomized_pvalue_matrix(&data, 5, 3, &Design::OneSample, false).unwrap();
    for row in nulls.rows() {
        assert!(ks_uniform(row.to_vec()) < 1.95 / (m as f64).sqrt());
    }
}
