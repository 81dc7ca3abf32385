//! Statistical checks of the path samplers against direct simulation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use qtps::dynamics::{ClassicalState, SimParams};
use qtps::rng::{Purpose, SeedInfo};
use qtps::stats::{chi2_two_histograms, integrated_autocorr_time};
use qtps::system::{ClassicalLangevin, Stepper};
use qtps::tis::{first_seed_path, tis_ensemble_sample, tis_shoot_move, PathBounds, TisConfig};
use qtps::tps::{brute_force_initial_path, harvest_reactive_path, tps_run, EnsembleKind, PathSample, StateRegions, TpsConfig};

fn hot(t_b: f64) -> ClassicalLangevin {
    ClassicalLangevin::new(SimParams::at_barrier_temperature(0.25, t_b, 1e-2)).unwrap()
}

fn chi2_pvalue(a: &[u64], b: &[u64]) -> f64 {
    let (chi2, dof) = chi2_two_histograms(a, b);
    1.0 - ChiSquared::new(dof.max(1) as f64).unwrap().cdf(chi2)
}

/// Midpoint of a path coarse-grained into three states.
fn midpoint_state(order: &[f64]) -> usize {
    let x = order[order.len() / 2];
    if x < -1.0 {
        0
    } else if x <= 1.0 {
        1
    } else {
        2
    }
}

/// Draws `(x, p)` from the Gibbs density by rejection in `x`.
fn gibbs_sample(d: &ClassicalLangevin, rng: &mut impl Rng) -> ClassicalState {
    let kt = d.params.kt();
    let well = d.params.well();
    let v_min = well.value(well.minimum());
    let p = Normal::new(0.0, kt.sqrt()).unwrap().sample(rng);
    loop {
        let x = rng.random_range(-8.0..8.0);
        if rng.random::<f64>() < (-(well.value(x) - v_min) / kt).exp() {
            return ClassicalState::new(x, p);
        }
    }
}

#[test]
fn tps_chain_matches_direct_sampling_of_reactive_paths() {
    let d = hot(1.0);
    let n_steps = 300;
    let regions = StateRegions::default();

    let mut rng = SeedInfo::new(5, Purpose::Test, 0).rng();
    let mut direct = [0u64; 3];
    let mut kept = 0;
    while kept < 3000 {
        let mut s = gibbs_sample(&d, &mut rng);
        let mut order = Vec::with_capacity(n_steps + 1);
        order.push(s.x);
        for _ in 0..n_steps {
            s = d.step(&s, &mut rng).unwrap();
            order.push(s.x);
        }
        if regions.in_a(order[0]) && regions.in_b(order[n_steps]) {
            direct[midpoint_state(&order)] += 1;
            kept += 1;
        }
    }

    let cfg = TpsConfig { n_moves: 10_000, ..TpsConfig::default() };
    let mut rng = SeedInfo::new(6, Purpose::Test, 0).rng();
    let init = brute_force_initial_path(&d, &ClassicalState::new(-4.18, 0.0), n_steps, &cfg, 1_000_000, &mut rng).unwrap();
    let mut states = Vec::new();
    let chain = tps_run(&d, &cfg, init, SeedInfo::new(7, Purpose::Tps, 0), |p| states.push(midpoint_state(&p.order))).unwrap();
    let burn = 500;
    let series = &states[burn..];
    let tau = (0..3)
        .map(|k| integrated_autocorr_time(&series.iter().map(|&s| (s == k) as u8 as f64).collect::<Vec<_>>()))
        .fold(1.0f64, f64::max);
    let mut sampled = [0u64; 3];
    for &s in series {
        sampled[s] += 1;
    }
    let effective: Vec<u64> = sampled.iter().map(|&c| (c as f64 / tau).round() as u64).collect();
    let p = chi2_pvalue(&direct, &effective);
    let acc = chain.acceptance_rate(None);
    assert!(p > 0.01, "direct {direct:?} tps {sampled:?} tau {tau:.1} p {p:.4} acceptance {acc:.3}");
    assert!(acc > 0.05 && acc < 0.8, "acceptance {acc}");
}

#[test]
fn visiting_chain_only_holds_admissible_paths() {
    let d = hot(0.5);
    let regions = StateRegions::default();
    let cfg = TpsConfig { n_moves: 400, ensemble: EnsembleKind::Visiting, ..TpsConfig::default() };
    let mut rng = SeedInfo::new(8, Purpose::Test, 0).rng();
    let init = harvest_reactive_path(&d, &ClassicalState::new(-4.18, 0.0), &regions, 200, 100_000_000, &mut rng).unwrap();
    let mut bad = 0;
    tps_run(&d, &cfg, init, SeedInfo::new(9, Purpose::Tps, 0), |p| {
        let a = regions.in_a(p.order[0]);
        let b = p.order.iter().any(|&q| regions.in_b(q));
        bad += (!(a && b)) as usize;
    })
    .unwrap();
    assert_eq!(bad, 0);
}

fn independent_tis_check(order: &[f64], a_core: f64, b_min: f64, lambda: f64) -> bool {
    let n = order.len();
    let start = order[0] <= a_core;
    let end = order[n - 1] <= a_core || order[n - 1] >= b_min;
    let interior = order[1..n - 1].iter().all(|&q| q > a_core && q < b_min);
    let crossed = order.iter().any(|&q| q >= lambda);
    n >= 3 && start && end && interior && crossed
}

#[test]
fn tis_paths_are_structurally_valid_after_every_move() {
    let d = hot(0.5);
    let regions = StateRegions::default();
    let cfg = TisConfig::default();
    let bounds = PathBounds::new(&regions, cfg.core_offset).unwrap();
    let mut rng = SeedInfo::new(10, Purpose::Test, 0).rng();
    let seed = first_seed_path(&d, &regions, ClassicalState::new(-4.18, 0.0), &cfg, &mut rng).unwrap();
    let mut current = PathSample::new(seed, &d);
    let lambda = regions.a_max;
    let kick = Normal::new(0.0, cfg.dp_width).unwrap();
    let max_steps = (cfg.max_path_time / d.dt()) as usize;
    let mut accepted = 0;
    for _ in 0..600 {
        let (acc, _) = tis_shoot_move(&d, &mut current, &bounds, lambda, kick.sample(&mut rng), max_steps, &mut rng).unwrap();
        accepted += acc as usize;
        assert!(independent_tis_check(&current.order, bounds.a_core, bounds.b_min, lambda));
        let first_out = current.order.iter().position(|&q| q > bounds.a_core).unwrap();
        assert_eq!(first_out, 1);
    }
    assert!(accepted > 30);
}

#[test]
fn crossing_probabilities_nest() {
    let d = hot(0.5);
    let regions = StateRegions::default();
    let cfg = TisConfig::default();
    let (l0, l1, l2) = (regions.a_max, -1.0, 0.5);
    let mut rng = SeedInfo::new(11, Purpose::Test, 0).rng();
    let seed = first_seed_path(&d, &regions, ClassicalState::new(-4.18, 0.0), &cfg, &mut rng).unwrap();
    let n = 3000;
    let (direct, _) = tis_ensemble_sample(&d, &regions, l0, l2, seed.clone(), n, &cfg, SeedInfo::new(12, Purpose::Tps, 0)).unwrap();
    let (first, found) = tis_ensemble_sample(&d, &regions, l0, l1, seed, n, &cfg, SeedInfo::new(12, Purpose::Tps, 1)).unwrap();
    let (second, _) =
        tis_ensemble_sample(&d, &regions, l1, l2, found.unwrap(), n, &cfg, SeedInfo::new(12, Purpose::Tps, 2)).unwrap();
    let product = first.estimate * second.estimate;
    let product_err = product * ((first.stderr / first.estimate).powi(2) + (second.stderr / second.estimate).powi(2)).sqrt();
    let sigma = (direct.stderr.powi(2) + product_err.powi(2)).sqrt();
    assert!(
        (direct.estimate - product).abs() < 3.0 * sigma,
        "direct {:.4} ± {:.4}, product {:.4} ± {:.4}",
        direct.estimate,
        direct.stderr,
        product,
        product_err
    );
}
