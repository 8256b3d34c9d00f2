use coopsplit::algorithms::{compute_delta, genie_solve, run_sequential};
use coopsplit::harness::{run_paired, run_trial};
use coopsplit::rate_model::verify_plan;
use coopsplit::scenario::sample_realization;
use coopsplit::{Algorithm, BlockageMode, SystemConfig, TransmitPlan};
use proptest::prelude::*;

fn small(k: usize, t: usize) -> SystemConfig {
    SystemConfig { n_mues: k, n_blocks: t, throughput_mue: 3.0, throughput_due: 1.0, ..SystemConfig::default() }
}

#[test]
fn scenario_file_round_trip() {
    let config = SystemConfig {
        n_mues: 3,
        blockage_mode: BlockageMode::DistanceDependent,
        eco_delta: Some(2.5e5),
        ..SystemConfig::default()
    };
    let text = toml::to_string(&config).unwrap();
    assert_eq!(SystemConfig::from_toml_str(&text).unwrap(), config);
    assert!(SystemConfig::from_toml_str("n_mues = 2\nbogus = 1\n").is_err());
    assert!(SystemConfig::from_toml_str("blockage_p = 1.5\n").is_err());
}

#[test]
fn genie_beats_edt_on_most_shared_seeds() {
    let config = small(2, 6);
    let mut wins = 0;
    for seed in 0..10 {
        let rows = run_paired(&config, &[Algorithm::Genie, Algorithm::Edt], seed, None);
        assert!(rows.iter().all(|r| r.feasible), "{rows:?}");
        if rows[0].energy_j <= rows[1].energy_j {
            wins += 1;
        }
    }
    assert!(wins >= 8, "GENIE ≤ EDT on only {wins}/10 seeds");
}

#[test]
fn saved_plans_reverify_identically() {
    let config = small(2, 3);
    let (_, channels) = sample_realization(&config, 5);
    let out = run_sequential(Algorithm::Crs, &channels, &config, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plan.json");
    out.plan.save(&path).unwrap();
    let back = TransmitPlan::load(&path).unwrap();
    assert_eq!(back, out.plan);
    let a = verify_plan(&out.plan, &channels, &config, 1e-5).unwrap();
    let b = verify_plan(&back, &channels, &config, 1e-5).unwrap();
    assert_eq!(a, b);
    assert!(a.feasible, "{:?}", a.violations);
}

#[test]
fn calibration_is_deterministic_and_matches_genie() {
    let config = small(1, 2);
    let a = compute_delta(&config, 3).unwrap();
    assert_eq!(a, compute_delta(&config, 3).unwrap());
    // Δ is total demand over the mean GENIE energy on the calibration realizations.
    let mean: f64 = (0..3)
        .map(|i| {
            let (_, ch) = sample_realization(&config, coopsplit::algorithms::calibration_seed(config.seed, i));
            genie_solve(&ch, &config).unwrap().0.total_energy(config.block_duration)
        })
        .sum::<f64>()
        / 3.0;
    assert!((a.delta - config.total_demand() / mean).abs() <= 1e-12 * a.delta);
}

#[test]
fn eco_run_reports_its_bound_inputs() {
    let config = SystemConfig { eco_delta: Some(1e6), ..small(2, 3) };
    let r = run_trial(&config, Algorithm::Eco, 2, None);
    assert!(r.feasible, "{:?}", r.reason);
    assert!(r.flush_share >= 0.0 && r.flush_share <= 1.0);
    assert!(r.traces.len() >= 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn realizations_respect_masks(seed in any::<u64>(), k in 1usize..5, t in 1usize..5, p in 0.0f64..1.0, dep in any::<bool>()) {
        let config = SystemConfig {
            n_mues: k,
            n_blocks: t,
            blockage_p: p,
            blockage_mode: if dep { BlockageMode::DistanceDependent } else { BlockageMode::Independent },
            ..SystemConfig::default()
        };
        let (geometry, ch) = sample_realization(&config, seed);
        prop_assert_eq!(sample_realization(&config, seed).1, ch.clone());
        for b in 0..t {
            prop_assert_eq!(ch.k_t[b], ch.ap_mask[b].iter().filter(|&&m| m).count());
            let full = (0..k).filter(|&i| ch.ap_mask[b][i] && ch.due_mask[b][i]).count();
            prop_assert_eq!(ch.k_prime_t[b], full);
            for i in 0..k {
                let norm2: f64 = ch.h[b][i].iter().map(|x| x.norm_sqr()).sum();
                if ch.ap_mask[b][i] {
                    let d = geometry.ap_distance(b, i);
                    let expected = config.n_antennas as f64 * ch.chi0 * d.powf(-config.pathloss_exp);
                    prop_assert!((norm2 - expected).abs() <= 1e-9 * expected);
                } else {
                    prop_assert_eq!(norm2, 0.0);
                }
                if !ch.due_mask[b][i] {
                    prop_assert_eq!(ch.g[b][i].norm_sqr(), 0.0);
                }
            }
        }
        if t > 0 && config.final_block_unblocked {
            prop_assert_eq!(ch.k_t[t - 1], k);
        }
    }
}
