use sdwsn_core::covmodel::{
    gaussian_analytic_covariances, hstack, lift_all, reduce, sample_covariances, CovariancePack, Lifting, ReducedForm,
};
use sdwsn_core::linear::linear_fit;
use sdwsn_core::matalg::{self, Mat};
use sdwsn_core::mbi::{
    apply_network, extract_models, initial_iterations, iterate_norm_bound, mbi_fit, stationarity_gap, FitConfig, InitStrategy,
    UpdateRule,
};
use sdwsn_core::sdt::{error_exact, FactorVariant};
use sdwsn_core::sim::{self, SimRng};

fn random_pack(rng: &mut SimRng, s: usize) -> (CovariancePack, Mat, Vec<Mat>) {
    let inst = sim::GaussianInstance::random(rng);
    let (x, ys) = inst.sample(rng, s);
    let pack = sample_covariances(&x, &ys, &inst.ranks, Lifting::Full).unwrap();
    (pack, x, ys)
}

fn example1() -> CovariancePack {
    let exx = Mat::from_row_slice(3, 3, &[1.0, 0.64, 0.08, 0.64, 1.0, 0.08, 0.08, 0.08, 1.0]);
    gaussian_analytic_covariances(&exx, &[0.9, 0.65], &[1, 1], Lifting::Reduced).unwrap()
}

fn converge() -> FitConfig {
    FitConfig {
        epsilon: 1e-9,
        max_iterations: 1_000_000,
        ..FitConfig::default()
    }
}

#[test]
fn random_fits_descend_to_coordinatewise_minima() {
    for seed in 0..20u64 {
        let (pack, _, _) = random_pack(&mut sim::rng(seed), 2000);
        let red = reduce(&pack).unwrap();
        let fit = mbi_fit(&red, &pack, &converge()).unwrap();
        assert!(fit.trace.converged, "seed {seed} did not converge");
        assert!(fit.trace.is_monotone(1e-10), "seed {seed}: rise {}", fit.trace.max_increase());
        let gap = stationarity_gap(&red, &pack, &fit.blocks).unwrap();
        assert!(gap <= 1e-8, "seed {seed}: block re-solve still gains {gap}");
        let exact = error_exact(&fit.composite(), &pack).unwrap();
        assert!((exact - red.error(&fit.composite())).abs() <= 1e-8 * pack.exx.trace());
    }
}

#[test]
fn example1_descends_and_beats_linear() {
    let pack = example1();
    let red = reduce(&pack).unwrap();
    let cfg = FitConfig {
        epsilon: 0.0,
        max_iterations: 50,
        ..FitConfig::default()
    };
    let fit = mbi_fit(&red, &pack, &cfg).unwrap();
    assert!(fit.trace.is_monotone(1e-10));
    let sd = error_exact(&fit.composite(), &pack).unwrap();
    let (lin, _) = linear_fit(&pack, &cfg).unwrap();
    let linear = error_exact(&hstack(3, &lin.blocks), &pack.linear().unwrap()).unwrap();
    assert!(sd <= linear + 1e-10 * pack.exx.trace(), "SD {sd} > linear {linear}");
    // starting point is no better than the fit
    assert!(fit.trace.initial().is_finite() && fit.trace.initial() >= fit.trace.last());
}

#[test]
fn iterates_stay_within_norm_bound() {
    for seed in 0..20u64 {
        let (pack, _, _) = random_pack(&mut sim::rng(seed), 2000);
        let red = reduce(&pack).unwrap();
        for budget in [1, 10, 100] {
            let cfg = FitConfig {
                epsilon: 0.0,
                max_iterations: budget,
                ..FitConfig::default()
            };
            let fit = mbi_fit(&red, &pack, &cfg).unwrap();
            let bound = iterate_norm_bound(&red, fit.trace.initial()).unwrap().unwrap();
            let norm = fit.composite().norm();
            assert!(norm <= bound, "seed {seed} after {budget}: ‖P‖ = {norm} > {bound}");
        }
    }
}

#[test]
fn greedy_step_is_no_worse_than_any_single_block_step() {
    for seed in 0..10u64 {
        let (pack, _, _) = random_pack(&mut sim::rng(seed), 2000);
        let red = reduce(&pack).unwrap();
        for warmup in [0usize, 3, 20] {
            let start = if warmup == 0 {
                initial_iterations(&pack).unwrap().into_iter().map(|b| b.p).collect()
            } else {
                let cfg = FitConfig {
                    max_iterations: warmup,
                    ..FitConfig::default()
                };
                mbi_fit(&red, &pack, &cfg).unwrap().block_matrices()
            };
            let one = FitConfig {
                epsilon: 0.0,
                max_iterations: 1,
                init: InitStrategy::Given(start.clone()),
                ..FitConfig::default()
            };
            let greedy = mbi_fit(&red, &pack, &one).unwrap().trace.last();
            for k in 0..pack.partition.sensors() {
                let single = objective_after_block(&red, &pack, &start, k);
                assert!(greedy <= single + 1e-12 * pack.exx.trace(), "seed {seed}: greedy {greedy} > block {k} {single}");
            }
        }
    }
}

/// `φ` after re-solving only block `k`.
fn objective_after_block(red: &ReducedForm, pack: &CovariancePack, start: &[Mat], k: usize) -> f64 {
    let mut blocks = start.to_vec();
    let mut q = red.h.clone();
    for (i, b) in blocks.iter().enumerate() {
        if i != k {
            q -= b * &red.g[i];
        }
    }
    blocks[k] = matalg::rank_constrained_solve(&q, &red.g[k], pack.partition.rank(k)).unwrap().p;
    red.objective(&hstack(pack.partition.signal_dim(), &blocks))
}

/// Greedy selection is a per-step guarantee, not a dominance rule: at a
/// finite budget round-robin can end lower (seeds 1, 3 and 4 here, by up to
/// 1e-2), and on convergence the two stop near the same minimum.
#[test]
#[ignore = "known false at the default budget; kept to document the counterexamples"]
fn greedy_final_objective_is_no_worse_than_round_robin() {
    for seed in 0..10u64 {
        let (pack, _, _) = random_pack(&mut sim::rng(seed), 2000);
        let red = reduce(&pack).unwrap();
        let greedy = mbi_fit(&red, &pack, &FitConfig::default()).unwrap();
        let cyclic = mbi_fit(
            &red,
            &pack,
            &FitConfig {
                rule: UpdateRule::Cyclic,
                ..FitConfig::default()
            },
        )
        .unwrap();
        assert!(
            greedy.trace.last() <= cyclic.trace.last() + 1e-8,
            "seed {seed}: greedy {} vs cyclic {}",
            greedy.trace.last(),
            cyclic.trace.last()
        );
    }
}

#[test]
fn network_output_equals_composite_product() {
    let mut rng = sim::rng(42);
    for _ in 0..10 {
        let (pack, _, _) = random_pack(&mut rng, 300);
        let red = reduce(&pack).unwrap();
        let fit = mbi_fit(&red, &pack, &FitConfig::default()).unwrap();
        let inst_dims = pack.partition.obs_dims().to_vec();
        let ys: Vec<Mat> = inst_dims.iter().map(|&n| sim::standard_normal(&mut rng, n, 50)).collect();
        for variant in [FactorVariant::Orthonormal, FactorVariant::Weighted] {
            let model = extract_models(&fit.blocks, &pack, variant).unwrap();
            let out = apply_network(&model, &ys).unwrap();
            let direct = fit.composite() * lift_all(&ys, Lifting::Full);
            assert!((&out - &direct).amax() <= 1e-12 * direct.amax().max(1.0));
            assert!((model.composite() - fit.composite()).amax() <= 1e-10 * fit.composite().amax().max(1.0));
            if variant == FactorVariant::Orthonormal {
                for (j, t) in model.fusion.blocks.iter().enumerate() {
                    let k = fit.blocks[j].rank();
                    let tk = t.columns(0, k);
                    assert!((tk.transpose() * tk - Mat::identity(k, k)).amax() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn rank_deficient_moments_give_finite_fits() {
    // y_2 duplicates y_1 and one coordinate is constant: E_zz is singular
    let mut rng = sim::rng(9);
    let x = sim::standard_normal(&mut rng, 3, 200);
    let mut y1 = x.rows(0, 2).into_owned();
    y1.row_mut(1).fill(0.5);
    let ys = vec![y1.clone(), y1];
    let pack = sample_covariances(&x, &ys, &[1, 2], Lifting::Full).unwrap();
    assert!(matalg::svd(&pack.ezz).unwrap().rank(1e-9) < pack.ezz.nrows());
    let red = reduce(&pack).unwrap();
    let fit = mbi_fit(&red, &pack, &FitConfig::default()).unwrap();
    assert!(fit.composite().iter().all(|v| v.is_finite()));
    assert!(fit.trace.objectives.iter().all(|v| v.is_finite()));
    assert!(fit.trace.is_monotone(1e-10));
}
