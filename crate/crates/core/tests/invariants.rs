use elpose_core::dynamics::{lagrangian_terms, simulate, solve_acceleration, verify_el_identity, AnalyticSystem};
use elpose_core::heatmap::{build_pyramid, read_pyramid, skeleton_heatmaps, write_pyramid, HeatmapStack};
use elpose_core::metrics::{mpjpe, mpjve, n_mpjpe};
use elpose_core::physnet::{fuse_poses, reestimate, PhysNetConfig, PhysNetParams};
use elpose_core::projection::{fit_camera, project, CameraParams};
use elpose_core::rng;
use elpose_core::skeleton::{JointLayout, Joints3, PoseSequence3D, JOINT_COUNT};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_seq(seed: u64, t: usize) -> PoseSequence3D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames: Vec<Joints3> = (0..t)
        .map(|_| {
            let mut f = [[0.0; 3]; JOINT_COUNT];
            for p in f.iter_mut() {
                for c in p.iter_mut() {
                    *c = rng.gen_range(-1.0..1.0);
                }
            }
            f
        })
        .collect();
    PoseSequence3D::infer(frames, 30.0).unwrap()
}

fn random_system(rng: &mut ChaCha8Rng, n: usize) -> AnalyticSystem {
    let masses = (0..n).map(|_| rng.gen_range(0.2..2.0)).collect();
    let lengths = (0..n).map(|_| rng.gen_range(0.1..1.5)).collect();
    AnalyticSystem::new(masses, lengths, 9.81).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mass_matrix_is_symmetric_positive_definite(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = random_system(&mut rng, n);
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let m = sys.mass_matrix(&q);
        prop_assert!((&m - m.transpose()).amax() < 1e-12);
        prop_assert!(m.cholesky().is_some());
    }

    #[test]
    fn solved_acceleration_satisfies_el(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = random_system(&mut rng, n);
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let qdot: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let qddot = solve_acceleration(&sys, &q, &qdot);
        let scale = lagrangian_terms(&sys, &q, &qdot).rhs().amax().max(1.0);
        prop_assert!(verify_el_identity(&sys, &q, &qdot, &qddot) / scale < 1e-10);
    }

    #[test]
    fn short_rollout_conserves_energy(seed in any::<u64>(), n in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = random_system(&mut rng, n);
        let q0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let traj = simulate(&sys, &q0, &v0, 1e-3, 500).unwrap();
        let e0 = sys.total_energy(&q0, &v0);
        let scale = sys.kinetic_energy(&q0, &v0) + sys.potential_energy(&q0).abs() + 1.0;
        for (q, v) in traj.q.iter().zip(&traj.qdot) {
            prop_assert!((sys.total_energy(q, v) - e0).abs() / scale < 1e-6);
        }
    }

    #[test]
    fn pose_metrics_are_zero_on_identity_and_symmetric(a in any::<u64>(), b in any::<u64>()) {
        let x = random_seq(a, 5);
        let y = random_seq(b, 5);
        prop_assert_eq!(mpjpe(&x, &x).unwrap(), 0.0);
        prop_assert_eq!(mpjve(&x, &x).unwrap(), 0.0);
        prop_assert!((mpjpe(&x, &y).unwrap() - mpjpe(&y, &x).unwrap()).abs() < 1e-12);
        prop_assert!((mpjve(&x, &y).unwrap() - mpjve(&y, &x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn n_mpjpe_is_scale_invariant(seed in any::<u64>(), s in 0.1f64..10.0) {
        let x = random_seq(seed, 4);
        let y = random_seq(seed ^ 0x5eed, 4);
        let scaled: Vec<Joints3> = x
            .frames()
            .iter()
            .map(|f| f.map(|p| p.map(|c| c * s)))
            .collect();
        let xs = PoseSequence3D::new(scaled, x.fps(), x.frame_of_reference()).unwrap();
        let a = n_mpjpe(&x, &y).unwrap();
        prop_assert!((a - n_mpjpe(&xs, &y).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn camera_fit_recovers_projection(seed in any::<u64>(), s in 0.1f64..5.0, ox in -2.0f64..2.0, oy in -2.0f64..2.0) {
        let seq = random_seq(seed, 3);
        let cam = CameraParams::new(s, [ox, oy]).unwrap();
        let fit = fit_camera(&seq, &project(&seq, &cam)).unwrap();
        prop_assert!((fit.camera.scale() - s).abs() < 1e-9);
        prop_assert!((fit.camera.offset()[0] - ox).abs() < 1e-9);
        prop_assert!((fit.camera.offset()[1] - oy).abs() < 1e-9);
        prop_assert!(fit.residual < 1e-12);
    }

    #[test]
    fn fusion_of_a_sequence_with_itself_is_identity(seed in any::<u64>()) {
        let x = random_seq(seed, 6);
        prop_assert_eq!(fuse_poses(&x, &x).unwrap(), x);
    }

    #[test]
    fn named_streams_are_reproducible_and_separated(seed in any::<u64>()) {
        let a: u64 = rng::stream(seed, "alpha").gen();
        prop_assert_eq!(a, rng::stream(seed, "alpha").gen::<u64>());
        prop_assert_ne!(rng::stream_seed(seed, "alpha"), rng::stream_seed(seed, "beta"));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pyramid_survives_disk_round_trip(seed in any::<u64>(), sigma in 0.5f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pose = [[0.0; 2]; JOINT_COUNT];
        for p in pose.iter_mut() {
            *p = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        }
        let maps: HeatmapStack = skeleton_heatmaps(&pose, JointLayout::h36m().limb_edges(), 16, 16, sigma);
        let pyr = build_pyramid(&maps, &[1, 2, 4]).unwrap();
        let mut bytes = Vec::new();
        write_pyramid(&mut bytes, &pyr).unwrap();
        let back = read_pyramid(bytes.as_slice()).unwrap();
        prop_assert_eq!(back.levels.len(), 3);
        for (a, b) in pyr.levels.iter().zip(&back.levels) {
            prop_assert_eq!(a.factor, b.factor);
            for (x, y) in a.maps.data().iter().zip(b.maps.data()) {
                prop_assert_eq!(*x as f32, *y as f32);
            }
        }
        let mut again = Vec::new();
        write_pyramid(&mut again, &back).unwrap();
        prop_assert_eq!(bytes, again);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn reestimate_is_time_reversal_equivariant(seed in any::<u64>(), t in 7usize..12) {
        let cfg = PhysNetConfig { hidden: 16, decoder_hidden: 16, ..PhysNetConfig::default() };
        let params = PhysNetParams::new(&cfg, seed).unwrap();
        let x = random_seq(seed.rotate_left(7), t);
        let fwd = reestimate(&x, &params, 0).unwrap();
        let rev = reestimate(&x.reversed(), &params, 0).unwrap().reversed();
        prop_assert!(mpjpe(&fwd, &rev).unwrap() < 1e-9);
        prop_assert_eq!(&fwd.frames()[..2], &x.frames()[..2]);
        prop_assert_eq!(&fwd.frames()[t - 2..], &x.frames()[t - 2..]);
    }
}
