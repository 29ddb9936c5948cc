use viewgrid_core::camera::{camera_to_world, EulerAngles, Vec3};
use viewgrid_core::synthdata::{
    class_library, generate_dataset, render_view, rotate_about_up, DatasetConfig, MotionParams, Sample, Split, View,
    NUM_CLASSES, NUM_JOINTS,
};

fn small(seed: u64, coord_noise: f64) -> DatasetConfig {
    DatasetConfig {
        train_per_class: 6,
        test_seen_per_class: 4,
        test_unseen_per_class: 4,
        coord_noise,
        seed,
        ..DatasetConfig::default()
    }
}

/// Camera-frame coordinates of every joint, per frame, read back from the raster.
fn joint_coords(view: &View) -> Vec<[Vec3; NUM_JOINTS]> {
    view.frames
        .iter()
        .map(|fm| {
            let mut out = [[f64::NAN; 3]; NUM_JOINTS];
            for i in 0..fm.width() {
                for j in 0..fm.height() {
                    let cell = fm.cell(i, j);
                    if let Some(joint) = cell[..NUM_JOINTS].iter().position(|&x| x != 0.0) {
                        out[joint] = [cell[NUM_JOINTS], cell[NUM_JOINTS + 1], cell[NUM_JOINTS + 2]];
                    }
                }
            }
            out
        })
        .collect()
}

#[test]
fn generation_is_deterministic() {
    let a = generate_dataset(&small(3, 0.02)).unwrap();
    let b = generate_dataset(&small(3, 0.02)).unwrap();
    assert_eq!(a, b);
    let c = generate_dataset(&small(4, 0.02)).unwrap();
    assert_ne!(a.samples, c.samples);
}

#[test]
fn noiseless_coordinates_are_the_camera_transform_of_world() {
    let cfg = DatasetConfig { views_per_sample: 2, ..small(5, 0.0) };
    let ds = generate_dataset(&cfg).unwrap();
    for s in &ds.samples {
        for v in &s.views {
            let e = v.extrinsics();
            for (frame, joints) in joint_coords(v).iter().enumerate() {
                for (j, c) in joints.iter().enumerate() {
                    let want = e.apply(s.world[frame][j]);
                    for axis in 0..3 {
                        assert!((c[axis] - want[axis]).abs() < 1e-12, "frame {frame} joint {j}");
                    }
                }
            }
        }
    }
}

#[test]
fn two_renders_recover_the_same_world_points() {
    let cfg = DatasetConfig { views_per_sample: 2, ..small(9, 0.0) };
    let ds = generate_dataset(&cfg).unwrap();
    for s in &ds.samples {
        let (a, b) = (&s.views[0], &s.views[1]);
        let (ca, cb) = (joint_coords(a), joint_coords(b));
        for (fa, fb) in ca.iter().zip(&cb) {
            for (pa, pb) in fa.iter().zip(fb) {
                let (wa, wb) = (camera_to_world(*pa, &a.extrinsics()), camera_to_world(*pb, &b.extrinsics()));
                for axis in 0..3 {
                    assert!((wa[axis] - wb[axis]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn camera_splits_are_disjoint() {
    let ds = generate_dataset(&small(1, 0.02)).unwrap();
    let cfg = &ds.config;
    for s in &ds.samples {
        let [lo, hi] = cfg.yaw_range(s.split);
        for v in &s.views {
            let yaw = v.angles.yaw.to_degrees();
            assert!(yaw >= lo - 1e-9 && yaw <= hi + 1e-9, "{:?} yaw {yaw}", s.split);
            if s.split == Split::TestUnseen {
                let [slo, shi] = cfg.seen_yaw_deg;
                assert!(yaw < slo || yaw > shi, "unseen yaw {yaw} inside the seen range");
            }
        }
    }
    for split in Split::ALL {
        assert_eq!(ds.split(split).len(), cfg.per_class(split) * cfg.num_classes);
    }
}

#[test]
fn every_joint_is_rendered_once_per_frame() {
    let ds = generate_dataset(&small(2, 0.02)).unwrap();
    for s in &ds.samples {
        for fm in &s.views[0].frames {
            let mut count = [0usize; NUM_JOINTS];
            for i in 0..fm.width() {
                for j in 0..fm.height() {
                    for (k, &x) in fm.cell(i, j)[..NUM_JOINTS].iter().enumerate() {
                        count[k] += usize::from(x != 0.0);
                    }
                }
            }
            assert_eq!(count, [1; NUM_JOINTS]);
        }
    }
}

fn flatten(world: &[[Vec3; NUM_JOINTS]]) -> Vec<f64> {
    world.iter().flat_map(|f| f.iter().flatten().copied()).collect()
}

#[test]
fn nearest_centroid_on_world_geometry_is_perfect() {
    let ds = generate_dataset(&DatasetConfig::default()).unwrap();
    let train = ds.split(Split::TrainSeen);
    let dim = flatten(&train[0].world).len();
    let mut centroids = vec![vec![0.0; dim]; ds.config.num_classes];
    let mut counts = vec![0usize; ds.config.num_classes];
    for s in &train {
        for (c, x) in centroids[s.class].iter_mut().zip(flatten(&s.world)) {
            *c += x;
        }
        counts[s.class] += 1;
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= *n as f64);
    }
    let classify = |s: &Sample| {
        let x = flatten(&s.world);
        let dist = |c: &Vec<f64>| c.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        (0..centroids.len()).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap()
    };
    for split in [Split::TestSeen, Split::TestUnseen] {
        let samples = ds.split(split);
        let correct = samples.iter().filter(|s| classify(s) == s.class).count();
        assert_eq!(correct, samples.len(), "{split:?}");
    }
}

#[test]
fn spin_frames_are_rotations_of_the_first() {
    let spin = class_library()[3];
    assert_eq!(spin.name, "spin");
    let traj = spin.trajectory(8, &MotionParams::canonical());
    let first = &traj[0];
    let (j, _) =
        first.iter().enumerate().map(|(j, p)| (j, p[0].hypot(p[2]))).max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    for frame in &traj[1..] {
        let angle = first[j][2].atan2(first[j][0]) - frame[j][2].atan2(frame[j][0]);
        for (p0, pt) in first.iter().zip(frame) {
            let r = rotate_about_up(*p0, angle);
            for axis in 0..3 {
                assert!((r[axis] - pt[axis]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn class_paths_are_pairwise_distinct() {
    let lib = class_library();
    let trajs: Vec<_> = lib.iter().map(|c| c.trajectory(8, &MotionParams::canonical())).collect();
    for a in 0..NUM_CLASSES {
        for b in a + 1..NUM_CLASSES {
            let linf = (0..NUM_JOINTS)
                .map(|j| {
                    (0..8)
                        .flat_map(|t| (0..3).map(move |k| (t, k)))
                        .map(|(t, k)| (trajs[a][t][j][k] - trajs[b][t][j][k]).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            assert!(linf >= 0.2, "{} vs {}: {linf}", lib[a].name, lib[b].name);
        }
    }
}

#[test]
fn joints_inside_the_frame_render_and_outside_do_not() {
    let world = class_library()[0].trajectory(8, &MotionParams::canonical());
    assert!(render_view(&world, EulerAngles::default(), [0.0; 3], 16, None).is_some());
    assert!(render_view(&world, EulerAngles::default(), [0.9, 0.0, 0.0], 16, None).is_none());
}
