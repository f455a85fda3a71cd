use diamflow::constants::kappa0;
use diamflow::distance::{maximal_m2_series, solve_distance_from_node, DistanceOptions};
use diamflow::flow::FlowTrajectory;
use diamflow::geometry::{scalar_curvature, volume};
use diamflow::heat::{evolve_kernel, mass_bound, HeatOptions, NEGATIVE_FLOOR};
use diamflow::scenario::{parse_scenario, serialize_scenario, InitialProfile, Scenario};
use diamflow::{DumbbellSpec, Profile};
use proptest::prelude::*;

fn dumbbell(neck: f64, width: f64, m: usize) -> Profile {
    Profile::dumbbell(
        3,
        &DumbbellSpec {
            bump_radius: 1.0,
            neck_radius: neck,
            neck_width: width,
        },
        m,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn curvature_and_volume_scale_with_the_metric(
        lambda in 0.3f64..3.0,
        neck in 0.2f64..0.6,
        width in 0.3f64..1.2,
    ) {
        let p = dumbbell(neck, width, 128);
        let q = p.scaled(lambda);
        let r = scalar_curvature(&p).unwrap();
        let rq = scalar_curvature(&q).unwrap();
        for (a, b) in r.iter().zip(&rq) {
            prop_assert!((b * lambda * lambda - a).abs() <= 1e-9 * a.abs().max(1.0));
        }
        prop_assert!((volume(&q) / (volume(&p) * lambda.powi(3)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distance_is_nonnegative_and_zero_only_at_center(center in 0usize..=64) {
        let p = dumbbell(0.4, 0.8, 64);
        let f = solve_distance_from_node(&p, center, &DistanceOptions { alpha_cells: 32, ..Default::default() }).unwrap();
        for i in 0..=64 {
            for j in 0..=32 {
                let d = f.at(i, j);
                prop_assert!(d >= 0.0 && d.is_finite());
                let pole = i == 0 || i == 64;
                if (i, j) != (center, 0) && !(pole && i == center) {
                    prop_assert!(d > 0.0);
                }
            }
        }
    }

    #[test]
    fn distance_is_nearly_symmetric(a in 0usize..=96, b in 0usize..=96) {
        let p = Profile::round(3, 1.3, 96).unwrap();
        let opts = DistanceOptions { alpha_cells: 64, ..Default::default() };
        let fa = solve_distance_from_node(&p, a, &opts).unwrap();
        let fb = solve_distance_from_node(&p, b, &opts).unwrap();
        let (dab, dba) = (fa.at(b, 0), fb.at(a, 0));
        prop_assert!((dab - dba).abs() <= 0.02 * dab.max(p.min_spacing()));
    }

    #[test]
    fn maximal_function_is_nondecreasing(center in 0usize..=64, r0 in 0.1f64..1.0) {
        let p = dumbbell(0.3, 0.6, 64);
        let f = solve_distance_from_node(&p, center, &DistanceOptions { alpha_cells: 48, ..Default::default() }).unwrap();
        let radii: Vec<f64> = (0..5).map(|k| r0 * (1.0 + k as f64)).collect();
        let m2 = maximal_m2_series(&p, &f, &radii, 8).unwrap();
        for w in m2.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
        prop_assert!(m2.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn kappa0_decreases_in_both_constants(a in 1e-3f64..10.0, b in 0.0f64..10.0, da in 0.0f64..1.0, db in 0.0f64..1.0, n in 3usize..7) {
        let k = kappa0(a, b, n).unwrap();
        prop_assert!(kappa0(a + da, b, n).unwrap() <= k);
        prop_assert!(kappa0(a, b + db, n).unwrap() <= k);
        prop_assert!(k > 0.0);
    }

    #[test]
    fn mass_bound_is_monotone(n in 3usize..8, rm in 0.0f64..5.0, t in 0.0f64..3.0, dt in 0.0f64..1.0) {
        let b = mass_bound(n, rm, t);
        prop_assert!(b >= 1.0);
        prop_assert!(mass_bound(n, rm, t + dt) >= b);
        prop_assert!(mass_bound(n, rm + dt, t) >= b);
    }

    #[test]
    fn static_heat_stays_nonnegative_and_conserves_mass(radius in 0.5f64..2.0) {
        let p = Profile::round(3, radius, 64).unwrap();
        let traj = FlowTrajectory::stationary(p).unwrap();
        let states = evolve_kernel(&traj, &HeatOptions { l: 0.0, t_end: 0.1 * radius * radius, outputs: 5 }).unwrap();
        for s in &states {
            prop_assert!(s.u.iter().all(|u| *u >= NEGATIVE_FLOOR));
            prop_assert!((s.mass - 1.0).abs() <= 1e-3);
        }
    }

    #[test]
    fn scenario_round_trips(
        n in 3usize..7,
        m in 64usize..400,
        t_end in 0.01f64..5.0,
        frac in 0.01f64..1.0,
        neck in 0.1f64..0.9,
        pick in 0usize..3,
    ) {
        let initial = match pick {
            0 => InitialProfile::Round { radius: 1.0 + neck },
            1 => InitialProfile::Dumbbell { bump_radius: 1.0, neck_radius: neck, neck_width: 0.5 },
            _ => InitialProfile::Explicit { file: "profiles/custom.csv".into() },
        };
        let sc = Scenario {
            name: format!("case{m}"),
            n,
            initial,
            m,
            t_end,
            cadence: Some(frac * t_end),
            static_metric: pick == 2,
            strategy: diamflow::constants::SobolevStrategy::ProbeFit,
            audit: Default::default(),
            heat: None,
            solver: Default::default(),
            output_dir: Some("runs/x".into()),
        };
        let text = serialize_scenario(&sc).unwrap();
        prop_assert_eq!(parse_scenario(&text).unwrap(), sc);
    }
}
