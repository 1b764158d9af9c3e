//! Orthographic-plus-affine camera, the 3D→2D projection and the stage
//! losses, each with its gradient with respect to the predicted pose.

use crate::error::{Error, Result};
use crate::skeleton::{Joints2, Joints3, PoseSequence2D, PoseSequence3D, StateVector, JOINT_COUNT, STATE_DIM};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraParams {
    scale: f64,
    offset: [f64; 2],
}

impl CameraParams {
    pub fn new(scale: f64, offset: [f64; 2]) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) || offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::Value(format!(
                "camera needs finite positive scale and finite offset, got {scale}, {offset:?}"
            )));
        }
        Ok(Self { scale, offset })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            offset: [0.0, 0.0],
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn offset(&self) -> [f64; 2] {
        self.offset
    }

    pub fn project_point(&self, p: &[f64; 3]) -> [f64; 2] {
        [self.scale * p[0] + self.offset[0], self.scale * p[1] + self.offset[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraFit {
    pub camera: CameraParams,
    /// Sum of squared 2D residuals at the optimum.
    pub residual: f64,
}

fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("sequences have {a} and {b} frames")));
    }
    Ok(())
}

/// Sum over frames and joints of `‖s·xy + t − uv‖²`.
pub fn camera_residual(seq3d: &PoseSequence3D, seq2d: &PoseSequence2D, cam: &CameraParams) -> Result<f64> {
    check_same_len(seq3d.len(), seq2d.len())?;
    let mut sum = 0.0;
    for (f3, f2) in seq3d.frames().iter().zip(seq2d.frames()) {
        for (p, uv) in f3.iter().zip(f2) {
            let q = cam.project_point(p);
            sum += (q[0] - uv[0]).powi(2) + (q[1] - uv[1]).powi(2);
        }
    }
    Ok(sum)
}

/// Closed-form least-squares scale and offset mapping the 3D xy slice onto
/// the 2D observations.
pub fn fit_camera(seq3d: &PoseSequence3D, seq2d: &PoseSequence2D) -> Result<CameraFit> {
    check_same_len(seq3d.len(), seq2d.len())?;
    let n = (seq3d.len() * JOINT_COUNT) as f64;
    let mut mean_p = [0.0; 2];
    let mut mean_u = [0.0; 2];
    for (f3, f2) in seq3d.frames().iter().zip(seq2d.frames()) {
        for (p, uv) in f3.iter().zip(f2) {
            for c in 0..2 {
                mean_p[c] += p[c];
                mean_u[c] += uv[c];
            }
        }
    }
    for c in 0..2 {
        mean_p[c] /= n;
        mean_u[c] /= n;
    }
    let mut cross = 0.0;
    let mut spread = 0.0;
    for (f3, f2) in seq3d.frames().iter().zip(seq2d.frames()) {
        for (p, uv) in f3.iter().zip(f2) {
            for c in 0..2 {
                let dp = p[c] - mean_p[c];
                cross += dp * (uv[c] - mean_u[c]);
                spread += dp * dp;
            }
        }
    }
    if spread <= 0.0 {
        return Err(Error::Degenerate("all 3D xy points coincide".into()));
    }
    let scale = cross / spread;
    if !(scale > 0.0) {
        return Err(Error::Degenerate(format!(
            "fitted camera scale {scale} is not positive"
        )));
    }
    let camera = CameraParams::new(scale, [mean_u[0] - scale * mean_p[0], mean_u[1] - scale * mean_p[1]])?;
    let residual = camera_residual(seq3d, seq2d, &camera)?;
    Ok(CameraFit { camera, residual })
}

/// Drops z, then applies `s·(x, y) + t` to every joint.
pub fn project(seq3d: &PoseSequence3D, cam: &CameraParams) -> PoseSequence2D {
    let frames: Vec<Joints2> = seq3d
        .frames()
        .iter()
        .map(|f| {
            let mut out = [[0.0; 2]; JOINT_COUNT];
            for (o, p) in out.iter_mut().zip(f) {
                *o = cam.project_point(p);
            }
            out
        })
        .collect();
    PoseSequence2D::new(frames, None, seq3d.fps()).expect("projection of a valid sequence is valid")
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `Σ_t ‖N_t‖_F` where every column of `N_t` equals the frame's noise mean,
/// so each term is `√51 · ‖mean‖₂`.
pub fn loss_noise(noise_means: &[StateVector]) -> f64 {
    let root = (STATE_DIM as f64).sqrt();
    noise_means.iter().map(|m| root * l2(&m.0)).sum()
}

/// Gradient of [`loss_noise`]; zero at a zero mean.
pub fn loss_noise_grad(noise_means: &[StateVector]) -> Vec<StateVector> {
    let root = (STATE_DIM as f64).sqrt();
    noise_means
        .iter()
        .map(|m| {
            let norm = l2(&m.0);
            let mut g = [0.0; STATE_DIM];
            if norm > 0.0 {
                for (gi, mi) in g.iter_mut().zip(&m.0) {
                    *gi = root * mi / norm;
                }
            }
            StateVector(g)
        })
        .collect()
}

/// Squared joint-position error summed over frames and joints, plus the
/// noise penalty.
pub fn loss_3d(pred: &PoseSequence3D, truth: &PoseSequence3D, noise_means: &[StateVector]) -> Result<f64> {
    check_same_len(pred.len(), truth.len())?;
    let mut sum = 0.0;
    for (a, b) in pred.frames().iter().zip(truth.frames()) {
        for (p, q) in a.iter().zip(b) {
            sum += (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>();
        }
    }
    Ok(sum + loss_noise(noise_means))
}

/// `∂ loss_3d / ∂ pred` (the noise term does not depend on `pred`).
pub fn loss_3d_grad(pred: &PoseSequence3D, truth: &PoseSequence3D) -> Result<Vec<Joints3>> {
    check_same_len(pred.len(), truth.len())?;
    Ok(pred
        .frames()
        .iter()
        .zip(truth.frames())
        .map(|(a, b)| {
            let mut g = [[0.0; 3]; JOINT_COUNT];
            for j in 0..JOINT_COUNT {
                for c in 0..3 {
                    g[j][c] = 2.0 * (a[j][c] - b[j][c]);
                }
            }
            g
        })
        .collect())
}

/// Re-projection error of `pred3d` under `cam` against 2D observations,
/// plus the noise penalty.
pub fn loss_2d(
    pred3d: &PoseSequence3D,
    truth2d: &PoseSequence2D,
    cam: &CameraParams,
    noise_means: &[StateVector],
) -> Result<f64> {
    Ok(camera_residual(pred3d, truth2d, cam)? + loss_noise(noise_means))
}

/// `∂ loss_2d / ∂ pred3d` with the camera held fixed.
pub fn loss_2d_grad(pred3d: &PoseSequence3D, truth2d: &PoseSequence2D, cam: &CameraParams) -> Result<Vec<Joints3>> {
    check_same_len(pred3d.len(), truth2d.len())?;
    Ok(pred3d
        .frames()
        .iter()
        .zip(truth2d.frames())
        .map(|(f3, f2)| {
            let mut g = [[0.0; 3]; JOINT_COUNT];
            for j in 0..JOINT_COUNT {
                let q = cam.project_point(&f3[j]);
                for c in 0..2 {
                    g[j][c] = 2.0 * cam.scale * (q[c] - f2[j][c]);
                }
            }
            g
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::{finite_difference_check, Array};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random3(rng: &mut impl Rng, t: usize) -> PoseSequence3D {
        let frames = (0..t)
            .map(|_| {
                let mut f = [[0.0; 3]; JOINT_COUNT];
                for p in f.iter_mut() {
                    *p = [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ];
                }
                f
            })
            .collect();
        PoseSequence3D::infer(frames, 30.0).unwrap()
    }

    fn xy_map(seq: &PoseSequence3D, s: f64, t: [f64; 2]) -> PoseSequence2D {
        project(seq, &CameraParams::new(s, t).unwrap())
    }

    #[test]
    fn exact_xy_fits_identity_camera() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random3(&mut rng, 4);
        let fit = fit_camera(&a, &xy_map(&a, 1.0, [0.0, 0.0])).unwrap();
        assert!((fit.camera.scale() - 1.0).abs() < 1e-12);
        assert!(fit.camera.offset().iter().all(|v| v.abs() < 1e-12));
        assert!(fit.residual < 1e-24);
    }

    #[test]
    fn affine_map_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random3(&mut rng, 5);
        let fit = fit_camera(&a, &xy_map(&a, 2.0, [0.1, 0.2])).unwrap();
        assert!((fit.camera.scale() - 2.0).abs() < 1e-12);
        assert!((fit.camera.offset()[0] - 0.1).abs() < 1e-12);
        assert!((fit.camera.offset()[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn degenerate_xy_is_rejected() {
        let a = PoseSequence3D::infer(vec![[[0.0, 0.0, 1.0]; JOINT_COUNT]; 3], 30.0).unwrap();
        let b = PoseSequence2D::new(vec![[[0.5, 0.5]; JOINT_COUNT]; 3], None, 30.0).unwrap();
        assert!(matches!(fit_camera(&a, &b), Err(Error::Degenerate(_))));
    }

    #[test]
    fn fit_beats_random_candidates_and_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random3(&mut rng, 6);
        let clean = xy_map(&a, 0.7, [0.4, 0.6]);
        let noisy_frames: Vec<Joints2> = clean
            .frames()
            .iter()
            .map(|f| {
                let mut g = *f;
                for p in g.iter_mut() {
                    p[0] += rng.gen_range(-0.05..0.05);
                    p[1] += rng.gen_range(-0.05..0.05);
                }
                g
            })
            .collect();
        let b = PoseSequence2D::new(noisy_frames, None, 30.0).unwrap();
        let fit = fit_camera(&a, &b).unwrap();
        for _ in 0..1000 {
            let cand = CameraParams::new(
                rng.gen_range(0.01..2.0),
                [rng.gen_range(-1.0..2.0), rng.gen_range(-1.0..2.0)],
            )
            .unwrap();
            assert!(fit.residual <= camera_residual(&a, &b, &cand).unwrap());
        }
        // gradient of the quadratic objective at the optimum
        let (s, t) = (fit.camera.scale(), fit.camera.offset());
        let (mut gs, mut gt) = (0.0, [0.0; 2]);
        for (f3, f2) in a.frames().iter().zip(b.frames()) {
            for (p, uv) in f3.iter().zip(f2) {
                for c in 0..2 {
                    let r = s * p[c] + t[c] - uv[c];
                    gs += 2.0 * r * p[c];
                    gt[c] += 2.0 * r;
                }
            }
        }
        assert!(gs.abs() < 1e-10 && gt.iter().all(|g| g.abs() < 1e-10), "{gs} {gt:?}");
        // projecting with the fitted camera reproduces the reported minimum
        let reproj = camera_residual(&a, &b, &fit.camera).unwrap();
        assert!((reproj - fit.residual).abs() < 1e-12);
    }

    #[test]
    fn projection_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random3(&mut rng, 2);
        let p = project(&a, &CameraParams::identity());
        for (f2, f3) in p.frames().iter().zip(a.frames()) {
            for (u, x) in f2.iter().zip(f3) {
                assert_eq!(*u, [x[0], x[1]]);
            }
        }
        let half = project(&a, &CameraParams::new(0.5, [0.0, 0.0]).unwrap());
        for (f2, f3) in half.frames().iter().zip(a.frames()) {
            for (u, x) in f2.iter().zip(f3) {
                assert_eq!(*u, [0.5 * x[0], 0.5 * x[1]]);
            }
        }
    }

    #[test]
    fn noise_loss_cases() {
        assert_eq!(loss_noise(&[StateVector::zeros(); 3]), 0.0);
        let mut e1 = StateVector::zeros();
        e1.0[0] = 1.0;
        assert!((loss_noise(&[e1]) - 51f64.sqrt()).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let means: Vec<StateVector> = (0..4)
            .map(|_| StateVector(std::array::from_fn(|_| rng.gen_range(-1.0..1.0))))
            .collect();
        let naive: f64 = means
            .iter()
            .map(|m| {
                let mut fro = 0.0;
                for _col in 0..STATE_DIM {
                    for row in 0..STATE_DIM {
                        fro += m.0[row] * m.0[row];
                    }
                }
                fro.sqrt()
            })
            .sum();
        assert!((loss_noise(&means) - naive).abs() < 1e-12);
    }

    #[test]
    fn loss_3d_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random3(&mut rng, 3);
        assert_eq!(loss_3d(&a, &a, &[]).unwrap(), 0.0);

        let zero = PoseSequence3D::infer(vec![[[0.0; 3]; JOINT_COUNT]], 30.0).unwrap();
        let mut off = [[0.0; 3]; JOINT_COUNT];
        off[5] = [1.0, 0.0, 0.0];
        let one = PoseSequence3D::infer(vec![off], 30.0).unwrap();
        let mut m = StateVector::zeros();
        m.0[2] = 0.5;
        let l = loss_3d(&one, &zero, &[m]).unwrap();
        assert!((l - (1.0 + loss_noise(&[m]))).abs() < 1e-15);

        let b = random3(&mut rng, 3);
        let mut brute = 0.0;
        for t in 0..3 {
            for j in 0..JOINT_COUNT {
                for c in 0..3 {
                    brute += (a.frames()[t][j][c] - b.frames()[t][j][c]).powi(2);
                }
            }
        }
        assert!((loss_3d(&a, &b, &[]).unwrap() - brute).abs() < 1e-12);
        assert!(loss_3d(&a, &random3(&mut rng, 2), &[]).is_err());
    }

    #[test]
    fn loss_2d_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random3(&mut rng, 3);
        let cam = CameraParams::new(0.8, [0.3, 0.1]).unwrap();
        let obs = project(&a, &cam);
        assert_eq!(loss_2d(&a, &obs, &cam, &[]).unwrap(), 0.0);

        let zero = PoseSequence3D::infer(vec![[[0.0; 3]; JOINT_COUNT]], 30.0).unwrap();
        let mut uv = [[0.0; 2]; JOINT_COUNT];
        uv[3] = [1.0, 0.0];
        let obs1 = PoseSequence2D::new(vec![uv], None, 30.0).unwrap();
        assert!((loss_2d(&zero, &obs1, &CameraParams::identity(), &[]).unwrap() - 1.0).abs() < 1e-15);

        let other = project(&random3(&mut rng, 3), &CameraParams::identity());
        let mut brute = 0.0;
        for t in 0..3 {
            for j in 0..JOINT_COUNT {
                let p = a.frames()[t][j];
                for c in 0..2 {
                    brute += (cam.scale() * p[c] + cam.offset()[c] - other.frames()[t][j][c]).powi(2);
                }
            }
        }
        assert!((loss_2d(&a, &other, &cam, &[]).unwrap() - brute).abs() < 1e-12);
    }

    fn to_array(frames: &[Joints3]) -> Array {
        Array::from_vec(frames.iter().flatten().flatten().copied().collect())
    }

    fn from_array(a: &Array, fps: f64) -> PoseSequence3D {
        let frames = a
            .data()
            .chunks_exact(STATE_DIM)
            .map(|c| StateVector::from_slice(c).unwrap().to_joints())
            .collect();
        PoseSequence3D::infer(frames, fps).unwrap()
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let pred = random3(&mut rng, 3);
            let truth = random3(&mut rng, 3);
            let x = to_array(pred.frames());
            let g3 = to_array(&loss_3d_grad(&pred, &truth).unwrap());
            let err3 = finite_difference_check(|v| loss_3d(&from_array(v, 30.0), &truth, &[]).unwrap(), &g3, &x, 1e-5);
            assert!(err3 < 1e-4, "loss_3d seed {seed}: {err3}");

            let cam = CameraParams::new(rng.gen_range(0.2..2.0), [0.1, -0.3]).unwrap();
            let obs = project(&random3(&mut rng, 3), &CameraParams::identity());
            let g2 = to_array(&loss_2d_grad(&pred, &obs, &cam).unwrap());
            // z does not enter the reprojection; compare only the xy entries
            let xy: Vec<usize> = (0..x.len()).filter(|i| i % 3 != 2).collect();
            let err2 = crate::diffmath::finite_difference_check_at(
                |v| loss_2d(&from_array(v, 30.0), &obs, &cam, &[]).unwrap(),
                &g2,
                &x,
                1e-5,
                &xy,
            );
            assert!(err2 < 1e-4, "loss_2d seed {seed}: {err2}");
            assert!(g2.data().iter().enumerate().all(|(i, v)| i % 3 != 2 || *v == 0.0));

            let means: Vec<StateVector> = (0..3)
                .map(|_| StateVector(std::array::from_fn(|_| rng.gen_range(-1.0..1.0))))
                .collect();
            let gn = Array::from_vec(loss_noise_grad(&means).iter().flat_map(|m| m.0).collect());
            let xn = Array::from_vec(means.iter().flat_map(|m| m.0).collect());
            let errn = finite_difference_check(
                |v| {
                    let ms: Vec<StateVector> = v
                        .data()
                        .chunks_exact(STATE_DIM)
                        .map(|c| StateVector::from_slice(c).unwrap())
                        .collect();
                    loss_noise(&ms)
                },
                &gn,
                &xn,
                1e-5,
            );
            assert!(errn < 1e-4, "loss_noise seed {seed}: {errn}");
        }
    }
}
