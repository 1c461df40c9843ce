use nalgebra::{Isometry3, Rotation3, Unit, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stereosim::metrics::{
    accuracy_auc, add_error, adds_error, confidence_fusion, depth_metrics, gradient_from_depth,
    normals_from_depth, pose_accuracy, resize_nearest, restoration_loss, DeltaConvention,
    LossWeights, Pose, PoseSample,
};
use stereosim::scenegen::{render_gt_depth, CameraView, SceneSpec, Texture, WorldScene};
use stereosim::{DepthMap, StereoRig};

fn grid(w: usize, h: usize, seed: u64, holes: f64) -> Vec<Option<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..w * h)
        .map(|_| {
            let v = rng.random_range(0.3..6.0f32) as f64;
            (rng.random::<f64>() >= holes).then_some(v)
        })
        .collect()
}

fn to_map(w: usize, h: usize, g: &[Option<f64>]) -> DepthMap {
    DepthMap::from_fn(w, h, |x, y| g[y * w + x].map(|v| v as f32))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

fn oracle_metrics(p: &[Option<f64>], g: &[Option<f64>], inclusive: bool) -> [f64; 6] {
    let pairs: Vec<(f64, f64)> = p
        .iter()
        .zip(g)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .collect();
    let n = pairs.len() as f64;
    let rmse = (pairs.iter().map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt();
    let rel = pairs.iter().map(|(a, b)| (a - b).abs() / b).sum::<f64>() / n;
    let mae = pairs.iter().map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let frac = |t: f64| {
        pairs
            .iter()
            .filter(|(a, b)| {
                let r = if a > b { a / b } else { b / a };
                if inclusive {
                    r <= t
                } else {
                    r < t
                }
            })
            .count() as f64
            / n
    };
    [rmse, rel, mae, frac(1.05), frac(1.10), frac(1.25)]
}

#[test]
fn depth_metrics_match_loop_oracle() {
    for seed in 0..30 {
        let (w, h) = (17 + seed as usize % 5, 11);
        let p = grid(w, h, seed, 0.2);
        let g = grid(w, h, seed + 1000, 0.2);
        for inclusive in [false, true] {
            let conv = if inclusive {
                DeltaConvention::Inclusive
            } else {
                DeltaConvention::Strict
            };
            let r = depth_metrics(&to_map(w, h, &p), &to_map(w, h, &g), None, conv).unwrap();
            let o = oracle_metrics(&p, &g, inclusive);
            let got = [r.rmse, r.rel, r.mae, r.delta_105, r.delta_110, r.delta_125];
            for (a, b) in got.iter().zip(&o) {
                assert!(close(*a, *b, 1e-9), "seed {seed}: {got:?} vs {o:?}");
            }
        }
    }
}

#[test]
fn delta_boundary_depends_on_convention() {
    let gt = DepthMap::constant(2, 1, 1.0);
    let pred = DepthMap::constant(2, 1, 1.25);
    let strict = depth_metrics(&pred, &gt, None, DeltaConvention::Strict).unwrap();
    let incl = depth_metrics(&pred, &gt, None, DeltaConvention::Inclusive).unwrap();
    assert_eq!(strict.delta_125, 0.0);
    assert_eq!(incl.delta_125, 1.0);
}

#[test]
fn disjoint_masks_are_an_error() {
    let a = DepthMap::from_fn(2, 1, |x, _| (x == 0).then_some(1.0));
    let b = DepthMap::from_fn(2, 1, |x, _| (x == 1).then_some(1.0));
    assert!(depth_metrics(&a, &b, None, DeltaConvention::Strict).is_err());
}

#[test]
fn resize_matches_integer_oracle() {
    for (sw, sh, w, h) in [(7, 5, 3, 2), (4, 4, 9, 7), (10, 6, 10, 6), (5, 3, 1, 1)] {
        let g = grid(sw, sh, 7, 0.1);
        let src = to_map(sw, sh, &g);
        let out = resize_nearest(&src, w, h);
        for y in 0..h {
            for x in 0..w {
                let sx = ((2 * x + 1) * sw / (2 * w)).min(sw - 1);
                let sy = ((2 * y + 1) * sh / (2 * h)).min(sh - 1);
                assert_eq!(out.get(x, y), src.get(sx, sy));
            }
        }
    }
}

#[test]
fn resized_metrics_equal_metrics_of_resized_maps() {
    let (p, g) = (grid(12, 9, 1, 0.1), grid(12, 9, 2, 0.1));
    let (pm, gm) = (to_map(12, 9, &p), to_map(12, 9, &g));
    let a = depth_metrics(&pm, &gm, Some((5, 7)), DeltaConvention::Strict).unwrap();
    let b = depth_metrics(
        &resize_nearest(&pm, 7, 5),
        &resize_nearest(&gm, 7, 5),
        None,
        DeltaConvention::Strict,
    )
    .unwrap();
    assert_eq!(a, b);
}

fn oracle_gradient(g: &[Option<f64>], w: usize, h: usize, x: usize, y: usize) -> Option<[f64; 2]> {
    if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
        return None;
    }
    let at = |xx: usize, yy: usize| g[yy * w + xx];
    at(x, y)?;
    let (l, r, u, d) = (at(x - 1, y)?, at(x + 1, y)?, at(x, y - 1)?, at(x, y + 1)?);
    Some([(r - l) / 2.0, (d - u) / 2.0])
}

fn oracle_normal(g: &[Option<f64>], rig: &StereoRig, x: usize, y: usize) -> Option<[f64; 3]> {
    let (w, h) = rig.image_size;
    oracle_gradient(g, w, h, x, y)?;
    let at = |xx: usize, yy: usize| g[yy * w + xx].unwrap();
    let (f, (cx, cy)) = (rig.focal_px, rig.principal_point);
    let pt = |u: usize, v: usize| {
        let z = at(u, v) as f32 as f64;
        [(u as f64 - cx) / f * z, (v as f64 - cy) / f * z, z]
    };
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let tx = sub(pt(x + 1, y), pt(x - 1, y));
    let ty = sub(pt(x, y + 1), pt(x, y - 1));
    let n = [
        ty[1] * tx[2] - ty[2] * tx[1],
        ty[2] * tx[0] - ty[0] * tx[2],
        ty[0] * tx[1] - ty[1] * tx[0],
    ];
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    Some([n[0] / len, n[1] / len, n[2] / len])
}

#[test]
fn gradients_and_normals_match_oracle() {
    let rig = StereoRig::centered(0.05, 80.0, 14, 10).unwrap();
    for seed in 0..10 {
        let g: Vec<Option<f64>> = grid(14, 10, seed, 0.15)
            .into_iter()
            .map(|v| v.map(|z| z as f32 as f64))
            .collect();
        let z = to_map(14, 10, &g);
        let grad = gradient_from_depth(&z);
        let normals = normals_from_depth(&z, &rig);
        for y in 0..10 {
            for x in 0..14 {
                match (grad.get(x, y), oracle_gradient(&g, 14, 10, x, y)) {
                    (Some(a), Some(b)) => {
                        assert!(close(a[0], b[0], 1e-12) && close(a[1], b[1], 1e-12))
                    }
                    (a, b) => assert_eq!(a.is_some(), b.is_some()),
                }
                match (normals.get(x, y), oracle_normal(&g, &rig, x, y)) {
                    (Some(a), Some(b)) => {
                        for k in 0..3 {
                            assert!((a[k] - b[k]).abs() < 1e-9, "{a:?} vs {b:?}");
                        }
                    }
                    (a, b) => assert_eq!(a.is_some(), b.is_some()),
                }
            }
        }
    }
}

#[test]
fn tilted_plane_normal() {
    let a = 45f64.to_radians();
    let rig = StereoRig::default();
    let spec = SceneSpec::slanted_plane(1.2, a, Texture::default());
    let z = render_gt_depth(
        &WorldScene::new(&spec),
        &CameraView::left(&rig, &Isometry3::identity()),
    );
    let normals = normals_from_depth(&z, &rig);
    let expected = [a.sin(), 0.0, -a.cos()];
    let mut checked = 0;
    for y in (1..479).step_by(13) {
        for x in (1..639).step_by(11) {
            let n = normals.get(x, y).unwrap();
            for k in 0..3 {
                assert!((n[k] - expected[k]).abs() < 1e-3, "({x},{y}) {n:?}");
            }
            checked += 1;
        }
    }
    assert!(checked > 1000);
}

fn field_l1(a: &[Option<Vec<f64>>], b: &[Option<Vec<f64>>]) -> f64 {
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| {
            Some(
                x.as_ref()?
                    .iter()
                    .zip(y.as_ref()?)
                    .map(|(p, q)| (p - q).abs())
                    .sum(),
            )
        })
        .collect();
    if d.is_empty() {
        0.0
    } else {
        d.iter().sum::<f64>() / d.len() as f64
    }
}

fn oracle_branch(p: &[Option<f64>], g: &[Option<f64>], rig: &StereoRig) -> [f64; 3] {
    let (w, h) = rig.image_size;
    let lz: Vec<f64> = p
        .iter()
        .zip(g)
        .filter_map(|(a, b)| Some(((*a)? - (*b)?).abs()))
        .collect();
    let normals = |m: &[Option<f64>]| -> Vec<Option<Vec<f64>>> {
        (0..w * h)
            .map(|i| oracle_normal(m, rig, i % w, i / w).map(|n| n.to_vec()))
            .collect()
    };
    let grads = |m: &[Option<f64>]| -> Vec<Option<Vec<f64>>> {
        (0..w * h)
            .map(|i| oracle_gradient(m, w, h, i % w, i / w).map(|n| n.to_vec()))
            .collect()
    };
    [
        lz.iter().sum::<f64>() / lz.len() as f64,
        field_l1(&normals(p), &normals(g)),
        field_l1(&grads(p), &grads(g)),
    ]
}

#[test]
fn restoration_loss_matches_oracle() {
    let rig = StereoRig::centered(0.05, 60.0, 12, 9).unwrap();
    let f32ify = |v: Vec<Option<f64>>| -> Vec<Option<f64>> {
        v.into_iter().map(|z| z.map(|z| z as f32 as f64)).collect()
    };
    for seed in 0..8 {
        let gc = f32ify(grid(12, 9, seed, 0.1));
        let gf = f32ify(grid(12, 9, seed + 50, 0.1));
        let gt = f32ify(grid(12, 9, seed + 99, 0.1));
        let weights = LossWeights {
            w_c: 0.5 + seed as f64,
            w_n: 0.3,
            w_g: 2.0,
        };
        let r = restoration_loss(
            &to_map(12, 9, &gc),
            &to_map(12, 9, &gf),
            &to_map(12, 9, &gt),
            &rig,
            &weights,
        )
        .unwrap();
        let c = oracle_branch(&gc, &gt, &rig);
        let f = oracle_branch(&gf, &gt, &rig);
        let got = [
            r.depth_coarse,
            r.normal_coarse,
            r.gradient_coarse,
            r.depth_fine,
            r.normal_fine,
            r.gradient_fine,
        ];
        let want = [c[0], c[1], c[2], f[0], f[1], f[2]];
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-9, "{got:?} vs {want:?}");
        }
        let total = f[0] + 0.3 * f[1] + 2.0 * f[2] + weights.w_c * (c[0] + 0.3 * c[1] + 2.0 * c[2]);
        assert!((r.total - total).abs() < 1e-9);
    }
}

#[test]
fn loss_is_zero_on_ground_truth() {
    let rig = StereoRig::centered(0.05, 60.0, 12, 9).unwrap();
    let gt = to_map(12, 9, &grid(12, 9, 3, 0.0));
    let r = restoration_loss(&gt, &gt, &gt, &rig, &LossWeights::default()).unwrap();
    assert_eq!(r.total, 0.0);
}

proptest! {
    #[test]
    fn fusion_stays_between_inputs(
        vals in proptest::collection::vec((0.1f32..10.0, 0.1f32..10.0, 0.0f32..=1.0), 1..60)
    ) {
        let n = vals.len();
        let a = DepthMap::from_values(n, 1, vals.iter().map(|v| v.0).collect()).unwrap();
        let b = DepthMap::from_values(n, 1, vals.iter().map(|v| v.1).collect()).unwrap();
        let c: Vec<f32> = vals.iter().map(|v| v.2).collect();
        let out = confidence_fusion(&a, &b, &c).unwrap();
        for (i, &(za, zb, ci)) in vals.iter().enumerate() {
            let v = out.get(i, 0).unwrap();
            prop_assert!(v >= za.min(zb) && v <= za.max(zb));
            if ci == 0.0 { prop_assert_eq!(v, za); }
            if ci == 1.0 { prop_assert_eq!(v, zb); }
        }
    }
}

#[test]
fn fusion_extremes_and_bad_confidence() {
    let a = DepthMap::from_fn(3, 1, |x, _| (x != 1).then_some(1.0));
    let b = DepthMap::from_fn(3, 1, |x, _| (x != 2).then_some(2.0));
    assert_eq!(confidence_fusion(&a, &b, &[0.0; 3]).unwrap(), a);
    assert_eq!(confidence_fusion(&a, &b, &[1.0; 3]).unwrap(), b);
    let mixed = confidence_fusion(&a, &b, &[0.5; 3]).unwrap();
    assert_eq!(mixed.get(0, 0), Some(1.5));
    assert_eq!(mixed.valid_count(), 1);
    assert!(confidence_fusion(&a, &b, &[0.5, f32::NAN, 0.5]).is_err());
    assert!(confidence_fusion(&a, &b, &[0.5, 1.5, 0.5]).is_err());
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let axis = Unit::new_normalize(Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ));
    let r = Rotation3::from_axis_angle(&axis, rng.random_range(-3.0..3.0));
    let t = Vector3::new(
        rng.random_range(-0.2..0.2),
        rng.random_range(-0.2..0.2),
        rng.random_range(0.5..1.5),
    );
    Pose::from_parts(r.matrix(), &t)
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            [
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
            ]
        })
        .collect()
}

fn apply(p: &Pose, x: &[f64; 3]) -> [f64; 3] {
    let r = &p.rotation;
    let mut out = p.translation;
    for i in 0..3 {
        for j in 0..3 {
            out[i] += r[i][j] * x[j];
        }
    }
    out
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[test]
fn add_and_adds_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let (gt, est) = (random_pose(&mut rng), random_pose(&mut rng));
        let pts = random_points(&mut rng, 60);
        let add = pts
            .iter()
            .map(|p| dist(apply(&gt, p), apply(&est, p)))
            .sum::<f64>()
            / 60.0;
        let adds = pts
            .iter()
            .map(|p| {
                pts.iter()
                    .map(|q| dist(apply(&gt, p), apply(&est, q)))
                    .fold(f64::MAX, f64::min)
            })
            .sum::<f64>()
            / 60.0;
        assert!((add_error(&gt, &est, &pts) - add).abs() < 1e-12);
        assert!((adds_error(&gt, &est, &pts) - adds).abs() < 1e-12);
        assert!(adds_error(&gt, &est, &pts) <= add_error(&gt, &est, &pts));
    }
}

#[test]
fn add_is_invariant_to_a_shared_rigid_motion() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let (gt, est, m) = (
            random_pose(&mut rng),
            random_pose(&mut rng),
            random_pose(&mut rng),
        );
        let pts = random_points(&mut rng, 50);
        let compose = |p: &Pose| {
            let r = m.rotation_matrix() * p.rotation_matrix();
            let t = m.rotation_matrix() * p.translation_vector() + m.translation_vector();
            Pose::from_parts(&r, &t)
        };
        let before = add_error(&gt, &est, &pts);
        let after = add_error(&compose(&gt), &compose(&est), &pts);
        assert!((before - after).abs() < 1e-9);
    }
}

#[test]
fn adds_forgives_rotations_of_a_sphere() {
    // Fibonacci lattice on a sphere of radius 0.05
    let n = 1000;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let pts: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let th = golden * i as f64;
            [0.05 * r * th.cos(), 0.05 * y, 0.05 * r * th.sin()]
        })
        .collect();
    let gt = Pose::identity();
    let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), 0.7);
    let est = Pose::from_parts(rot.matrix(), &Vector3::zeros());
    let add = add_error(&gt, &est, &pts);
    let adds = adds_error(&gt, &est, &pts);
    // lattice spacing is about sqrt(4π/n)·r ≈ 0.0056
    assert!(adds < 0.004, "{adds}");
    assert!(add > 0.02, "{add}");
    let sample = |symmetric| PoseSample {
        gt,
        estimate: est,
        model_points: pts.clone(),
        diameter: 0.1,
        symmetric,
    };
    let with = pose_accuracy(&[sample(true)], true).unwrap();
    let without = pose_accuracy(&[sample(true)], false).unwrap();
    assert_eq!(with.add_01d, 1.0);
    assert_eq!(without.add_01d, 0.0);
    assert_eq!(with.auc_adds, without.auc_adds);
}

fn oracle_auc(errors: &[f64]) -> f64 {
    let acc = |k: usize| {
        errors
            .iter()
            .filter(|&&e| e * 1000.0 <= k as f64 + 1e-9 * k as f64)
            .count() as f64
    };
    let mut area = 0.0;
    for k in 0..100 {
        area += (acc(k) + acc(k + 1)) / 2.0;
    }
    area / (100.0 * errors.len() as f64)
}

#[test]
fn auc_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        // keep errors off the 1 mm grid so threshold rounding cannot matter
        let errs: Vec<f64> = (0..30)
            .map(|_| (rng.random_range(0..130) as f64 + 0.5) * 1e-3)
            .collect();
        assert!((accuracy_auc(&errs) - oracle_auc(&errs)).abs() < 1e-12);
    }
    assert_eq!(accuracy_auc(&[0.0, 0.0]), 1.0);
    assert_eq!(accuracy_auc(&[0.2]), 0.0);
}
