use fastspin_core::ensemble::{mean_and_se, wasserstein1};
use fastspin_core::rotation::apply_rotation;
use fastspin_core::spectral::barotropic_project;
use fastspin_core::{rescale_state, Direction, ExperimentConfig, FeatureMap, Grid, RngStream, SpectralField, State};
use proptest::prelude::*;

const BASE: &str = r#"
experiment = "mixing"
master_seed = 1
output_dir = "out"

[grid]
nx = 8
ny = 8
nz = 4

[physics]
nu_nondim = 0.5
alpha_list_nondim = [10.0]

[time]
T_nondim = 1.0
dt_nondim = 0.01

[ensemble]
members = 4

[initial]
profile = "taylor-green-baroclinic"
"#;

fn grid() -> Grid {
    Grid::new(8, 8, 4).unwrap()
}

fn field(seed: u64) -> SpectralField {
    let mut s = RngStream::new(seed, 0);
    SpectralField::random(grid(), s.rng(), 1.0)
}

fn cloud(seed: u64, n: usize, dim: usize, shift: f64) -> Vec<Vec<f64>> {
    let mut s = RngStream::new(seed, 7);
    (0..n).map(|_| (0..dim).map(|_| shift + 0.5 * s.normal()).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn w1_is_a_bounded_symmetric_metric(s in any::<u64>(), n in 1usize..12, shift in -1.0f64..1.0) {
        let a = cloud(s, n, 3, 0.0);
        let b = cloud(s ^ 1, n, 3, shift);
        let c = cloud(s ^ 2, n, 3, -shift);
        let ab = wasserstein1(&a, &b).unwrap();
        let ba = wasserstein1(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!(wasserstein1(&a, &a).unwrap() <= 1e-15);
        let ac = wasserstein1(&a, &c).unwrap();
        let cb = wasserstein1(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn config_round_trips_through_toml(
        seed in 0u64..=i64::MAX as u64,
        nu in 1e-3f64..10.0,
        alphas in prop::collection::vec(1.0f64..1e5, 1..5),
        members in 1usize..500,
    ) {
        let mut c = ExperimentConfig::parse(BASE).unwrap();
        c.master_seed = seed;
        c.physics.nu_nondim = nu;
        c.physics.alpha_list_nondim = alphas;
        c.ensemble.members = members;
        let back = ExperimentConfig::parse(&c.to_toml()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn feature_map_is_a_contraction(s in any::<u64>(), radius in 1.0f64..6.0) {
        let fm = FeatureMap::new(grid(), radius);
        let a = State::from_velocity(&field(s));
        let b = State::from_velocity(&field(s.wrapping_add(1)));
        let fa = fm.features(&a);
        let fb = fm.features(&b);
        let d: f64 = fa.iter().zip(&fb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        prop_assert!(d <= a.minus(&b).l2() * (1.0 + 1e-12));
    }

    #[test]
    fn rescaling_round_trips(s in any::<u64>(), alpha in 0.0f64..1e4, t in 0.0f64..2.0) {
        let st = State::from_velocity(&field(s));
        let fwd = rescale_state(&st, alpha, t, Direction::Forward);
        let back = rescale_state(&fwd, alpha, t, Direction::Inverse);
        prop_assert!(back.minus(&st).l2() <= 1e-12 * st.l2());
        prop_assert!((fwd.l2() - st.l2()).abs() <= 1e-12 * st.l2());
    }

    #[test]
    fn rotation_commutes_with_barotropic_projection(s in any::<u64>(), theta in -10.0f64..10.0) {
        let f = field(s);
        let a = apply_rotation(&barotropic_project(&f), theta);
        let b = barotropic_project(&apply_rotation(&f, theta));
        prop_assert!(a.minus(&b).norm() <= 1e-12 * f.norm());
    }
}

#[test]
fn standard_error_halves_when_members_quadruple() {
    let mut s = RngStream::new(3, 0);
    let x: Vec<f64> = (0..16_000).map(|_| s.normal()).collect();
    let (_, small) = mean_and_se(&x[..4_000]);
    let (_, large) = mean_and_se(&x);
    let r = large / small;
    assert!((0.45..=0.55).contains(&r), "ratio {r}");
}

#[test]
fn w1_is_stable_under_subsampling() {
    let a = cloud(11, 512, 3, 0.0);
    let b = cloud(12, 512, 3, 0.3);
    let full = wasserstein1(&a, &b).unwrap();
    let half = wasserstein1(&a[..256], &b[..256]).unwrap();
    assert!((full - half).abs() <= 0.1 * full, "{full} vs {half}");
}
