mod common;

use common::{crop, noise_plane, shifted_views};
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use qpd_core::matcher::*;
use qpd_core::{Error, Image, View};

fn gray(p: Array2<f64>) -> Image {
    Image::gray(p).unwrap()
}

fn naive_volume(a: &FeatureMap, b: &FeatureMap, axis: Axis2) -> Array3<f64> {
    let (h, w, c) = (a.height(), a.width(), a.channels());
    let len = if axis == Axis2::Horizontal { w } else { h };
    let mut out = Array3::zeros((h, w, len));
    for y in 0..h {
        for x in 0..w {
            for s in 0..len {
                let (yy, xx) = if axis == Axis2::Horizontal {
                    (y, s)
                } else {
                    (s, x)
                };
                let mut acc = 0.0;
                for k in 0..c {
                    acc += a.data()[[y, x, k]] * b.data()[[yy, xx, k]];
                }
                out[[y, x, s]] = acc;
            }
        }
    }
    out
}

fn argmax(v: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in v.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

#[test]
fn constant_image_has_identical_descriptors() {
    let f = extract_features(&Image::filled(12, 10, 1, 0.3).unwrap(), 1).unwrap();
    let v = build_volume(&f, &f, Axis2::Horizontal).unwrap();
    assert!(v.values.iter().all(|c| (c - 1.0).abs() < 1e-6));
}

#[test]
fn descriptor_is_translation_equivariant() {
    let src = noise_plane(40, 24, 5);
    let a = extract_features(&gray(crop(&src, 3, 0, 30, 24)), 1).unwrap();
    // shifted content: b(x) = a(x - 3)
    let b = extract_features(&gray(crop(&src, 0, 0, 30, 24)), 1).unwrap();
    for y in 4..20 {
        for x in 4..23 {
            let (fa, fb) = (a.descriptor(y, x), b.descriptor(y, x + 3));
            let diff = (&fa - &fb).mapv(f64::abs).fold(0.0f64, |m, v| m.max(*v));
            assert!(diff < 1e-12, "({y}, {x}) differs by {diff}");
        }
    }
}

#[test]
fn small_images_rejected() {
    let err = extract_features(&Image::filled(6, 20, 1, 0.5).unwrap(), 1).unwrap_err();
    assert!(matches!(err, Error::ImageTooSmall { .. }));
    assert!(extract_features(&Image::filled(20, 20, 1, 0.5).unwrap(), 4).is_err());
    assert!(extract_features(&Image::filled(20, 20, 1, 0.5).unwrap(), 3).is_err());
}

#[test]
fn downsampled_features_have_reduced_size() {
    let f = extract_features(&gray(noise_plane(64, 48, 1)), 4).unwrap();
    assert_eq!((f.height(), f.width(), f.downsample_factor()), (12, 16, 4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn descriptors_are_unit_norm(seed in any::<u64>(), factor in prop::sample::select(vec![1usize, 2])) {
        let f = extract_features(&gray(noise_plane(20, 18, seed)), factor).unwrap();
        for y in 0..f.height() {
            for x in 0..f.width() {
                let d = f.descriptor(y, x);
                prop_assert!((d.dot(&d).sqrt() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn volume_matches_brute_force(seed in any::<u64>(), vertical in any::<bool>()) {
        let axis = if vertical { Axis2::Vertical } else { Axis2::Horizontal };
        let a = extract_features(&gray(noise_plane(24, 20, seed)), 1).unwrap();
        let b = extract_features(&gray(noise_plane(24, 20, seed ^ 0xa5a5)), 1).unwrap();
        let v = build_volume(&a, &b, axis).unwrap();
        let oracle = naive_volume(&a, &b, axis);
        prop_assert_eq!(v.values.dim(), oracle.dim());
        for (got, want) in v.values.iter().zip(oracle.iter()) {
            prop_assert!((*got as f64 - want).abs() < 1e-6);
            prop_assert!((-1.0 - 1e-6..=1.0 + 1e-6).contains(&(*got as f64)));
        }
    }
}

#[test]
fn self_volume_peaks_on_the_diagonal() {
    let f = extract_features(&gray(noise_plane(24, 16, 9)), 1).unwrap();
    let v = build_volume(&f, &f, Axis2::Horizontal).unwrap();
    for y in 0..16 {
        for x in 0..24 {
            let lane = v.values.slice(ndarray::s![y, x, ..]);
            assert_eq!(argmax(lane.iter().map(|&c| c as f64)), x);
            assert!((lane[x] - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn translated_volume_peaks_at_the_shift() {
    let src = noise_plane(40, 24, 11);
    let reference = extract_features(&gray(crop(&src, 5, 0, 32, 24)), 1).unwrap();
    let shifted = extract_features(&gray(crop(&src, 2, 0, 32, 24)), 1).unwrap();
    let v = build_volume(&reference, &shifted, Axis2::Horizontal).unwrap();
    let oracle = naive_volume(&reference, &shifted, Axis2::Horizontal);
    for y in 4..20 {
        for x in 4..25 {
            let got = argmax(
                v.values
                    .slice(ndarray::s![y, x, ..])
                    .iter()
                    .map(|&c| c as f64),
            );
            let want = argmax(oracle.slice(ndarray::s![y, x, ..]).iter().copied());
            assert_eq!(got, x + 3);
            assert_eq!(got, want);
        }
    }
}

#[test]
fn volume_dimension_mismatch() {
    let a = extract_features(&gray(noise_plane(16, 16, 1)), 1).unwrap();
    let b = extract_features(&gray(noise_plane(17, 16, 1)), 1).unwrap();
    assert!(matches!(
        build_volume(&a, &b, Axis2::Horizontal),
        Err(Error::DimensionMismatch { .. })
    ));
}

fn volume_from(lane: &[f32], axis: Axis2) -> CorrelationVolume {
    let values = Array3::from_shape_fn((1, 1, lane.len()), |(_, _, s)| lane[s]);
    CorrelationVolume { axis, values }
}

#[test]
fn pyramid_shapes_and_pooling() {
    let p = build_pyramid(volume_from(
        &[0., 1., 0., 1., 0., 1., 0., 1.],
        Axis2::Horizontal,
    ))
    .unwrap();
    let lens: Vec<usize> = p.levels().iter().map(|l| l.shift_len()).collect();
    assert_eq!(lens, vec![8, 4, 2, 1]);
    assert!(p.level(2).values.iter().all(|&v| v == 0.5));

    let p = build_pyramid(volume_from(&[0.7; 11], Axis2::Vertical)).unwrap();
    let lens: Vec<usize> = p.levels().iter().map(|l| l.shift_len()).collect();
    assert_eq!(lens, vec![11, 6, 3, 2]);
    assert!(p
        .levels()
        .iter()
        .all(|l| l.values.iter().all(|&v| (v - 0.7).abs() < 1e-6)));

    assert!(build_pyramid(volume_from(&[0.0; 7], Axis2::Horizontal)).is_err());
}

#[test]
fn pooled_entries_are_parent_means() {
    let a = extract_features(&gray(noise_plane(30, 12, 3)), 1).unwrap();
    let b = extract_features(&gray(noise_plane(30, 12, 4)), 1).unwrap();
    let p = build_pyramid(build_volume(&a, &b, Axis2::Horizontal).unwrap()).unwrap();
    for k in 2..=PYRAMID_LEVELS {
        let (parent, child) = (&p.level(k - 1).values, &p.level(k).values);
        let n = parent.dim().2;
        for ((y, x, j), &v) in child.indexed_iter() {
            let want = if 2 * j + 1 < n {
                0.5 * (parent[[y, x, 2 * j]] as f64 + parent[[y, x, 2 * j + 1]] as f64)
            } else {
                parent[[y, x, 2 * j]] as f64
            };
            assert!((v as f64 - want).abs() < 1e-6);
        }
    }
}

fn pyramids_for(frames: &qpd_core::QpFrameSet, factor: usize) -> DirectionalPyramids {
    let f = |v: View| extract_features(frames.view(v), factor).unwrap();
    build_directional_pyramids(
        &f(View::Center),
        &f(View::Left),
        &f(View::Right),
        &f(View::Top),
        &f(View::Bottom),
    )
    .unwrap()
}

#[test]
fn lookup_layout_and_length() {
    let frames = shifted_views(16, 16, 0, 2);
    let pyr = pyramids_for(&frames, 1);
    let feat = lookup(&pyr, &Array2::zeros((16, 16)), 4).unwrap();
    assert_eq!(feat.channels(), 144);
    assert_eq!(feat.window_len(), 9);
    assert_eq!(feat.channel_index(Direction::Left, 1, -4), 0);
    assert_eq!(feat.channel_index(Direction::Right, 1, -4), 36);
    assert_eq!(feat.channel_index(Direction::Bottom, 4, 4), 143);
    for y in 0..16 {
        for x in 0..16 {
            for dir in Direction::ALL {
                let c = feat.values()[[y, x, feat.channel_index(dir, 1, 0)]];
                assert!((c - 1.0).abs() < 1e-6);
            }
        }
    }
    assert!(lookup(&pyr, &Array2::zeros((16, 16)), 0).is_err());
    assert!(lookup(&pyr, &Array2::zeros((15, 16)), 2).is_err());
}

/// Independent lookup: pools the base lane directly and interpolates.
fn oracle_tap(base_lane: &[f64], scale: usize, pos_in_base: f64) -> f64 {
    let cell = 1usize << (scale - 1);
    let pooled: Vec<f64> = base_lane
        .chunks(cell)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let p = ((pos_in_base + 0.5) / cell as f64 - 0.5).clamp(0.0, (pooled.len() - 1) as f64);
    let i = p.floor() as usize;
    let t = p - i as f64;
    if i + 1 < pooled.len() {
        pooled[i] * (1.0 - t) + pooled[i + 1] * t
    } else {
        pooled[i]
    }
}

#[test]
fn integer_lookup_equals_direct_indexing() {
    let frames = shifted_views(32, 32, 2, 8);
    let pyr = pyramids_for(&frames, 1);
    let r = 4;
    let disp = Array2::from_shape_fn((32, 32), |(y, x)| ((x * 7 + y * 3) % 9) as f64 - 4.0);
    let feat = lookup(&pyr, &disp, r).unwrap();
    for y in 0..32 {
        for x in 0..32 {
            for dir in Direction::ALL {
                let base = pyr.get(dir).level(1);
                let coord = if dir.axis() == Axis2::Horizontal {
                    x
                } else {
                    y
                } as f64;
                let lane: Vec<f64> = (0..base.shift_len())
                    .map(|s| base.values[[y, x, s]] as f64)
                    .collect();
                for o in -(r as isize)..=r as isize {
                    let pos = coord + dir.sign() * (disp[[y, x]] + o as f64);
                    let got = feat.values()[[y, x, feat.channel_index(dir, 1, o)]];
                    let idx = pos.clamp(0.0, (lane.len() - 1) as f64) as usize;
                    assert_eq!(got, lane[idx]);
                    // pooled scales: taps step by one pooled cell
                    for k in 2..=PYRAMID_LEVELS {
                        let cell = (1usize << (k - 1)) as f64;
                        let pk = coord + dir.sign() * (disp[[y, x]] + o as f64 * cell);
                        let got = feat.values()[[y, x, feat.channel_index(dir, k, o)]];
                        assert!((got - oracle_tap(&lane, k, pk)).abs() < 1e-6);
                    }
                }
            }
        }
    }
}

#[test]
fn sign_reversed_windows_peak_at_the_true_shift() {
    for d in 1..=3usize {
        let frames = shifted_views(32, 32, d, 20 + d as u64);
        let pyr = pyramids_for(&frames, 1);
        let feat = lookup(&pyr, &Array2::from_elem((32, 32), d as f64), 4).unwrap();
        let mut center_gap = 0.0f64;
        let (mut mean_l, mut mean_r) = (Array2::<f64>::zeros((1, 9)), Array2::<f64>::zeros((1, 9)));
        for y in 6..26 {
            for x in 6..26 {
                for dir in Direction::ALL {
                    let w = feat.window(y, x, dir, 1);
                    assert_eq!(argmax(w.iter().copied()), 4, "d={d} {dir:?} at ({y}, {x})");
                }
                let (l, r) = (
                    feat.window(y, x, Direction::Left, 1),
                    feat.window(y, x, Direction::Right, 1),
                );
                center_gap = center_gap.max((l[4] - r[4]).abs());
                mean_l.row_mut(0).scaled_add(1.0 / 400.0, &l);
                mean_r.row_mut(0).scaled_add(1.0 / 400.0, &r);
            }
        }
        assert!(center_gap < 1e-6, "center taps differ by {center_gap}");
        let gap = (&mean_l - &mean_r)
            .mapv(f64::abs)
            .fold(0.0f64, |m, v| m.max(*v));
        assert!(gap < 0.05, "mean left/right windows differ by {gap}");
    }
}

#[test]
fn flat_windows_get_uniform_weights() {
    let frames = shifted_views(16, 16, 0, 0);
    let flat: Vec<Image> = View::ALL
        .iter()
        .map(|_| Image::filled(16, 16, 1, 0.4).unwrap())
        .collect();
    let frames = qpd_core::QpFrameSet::new(flat, None, frames.meta.clone()).unwrap();
    let feat = lookup(&pyramids_for(&frames, 1), &Array2::zeros((16, 16)), 4).unwrap();
    let fused = fuse(&feat, DEFAULT_TEMPERATURE);
    assert!(fused.weights.iter().all(|w| (w - 1.0 / 16.0).abs() < 1e-12));
}

fn synthetic_pyramids(h: usize, w: usize, peaked: &[(Direction, isize)]) -> DirectionalPyramids {
    let make = |dir: Direction| {
        let len = if dir.axis() == Axis2::Horizontal {
            w
        } else {
            h
        };
        let shift = peaked.iter().find(|(d, _)| *d == dir).map(|p| p.1);
        let values = Array3::from_shape_fn((h, w, len), |(y, x, s)| {
            let coord = if dir.axis() == Axis2::Horizontal {
                x
            } else {
                y
            } as isize;
            match shift {
                Some(off) if s as isize == coord + off => 1.0,
                _ => 0.0,
            }
        });
        build_pyramid(CorrelationVolume {
            axis: dir.axis(),
            values,
        })
        .unwrap()
    };
    DirectionalPyramids(Direction::ALL.map(make))
}

#[test]
fn single_peaked_direction_dominates() {
    let pyr = synthetic_pyramids(24, 24, &[(Direction::Right, 2)]);
    let feat = lookup(&pyr, &Array2::zeros((24, 24)), 4).unwrap();
    let fused = fuse(&feat, DEFAULT_TEMPERATURE);
    for y in 0..24 {
        for x in 4..18 {
            let s = fused.scores.slice(ndarray::s![y, x, ..]);
            assert_eq!(argmax(s.iter().copied()), 4 + 2);
        }
    }
}

#[test]
fn textured_axis_takes_most_weight() {
    // rows carry no signal, columns a sharp match at zero shift
    let pyr = synthetic_pyramids(24, 24, &[(Direction::Top, 0), (Direction::Bottom, 0)]);
    let feat = lookup(&pyr, &Array2::zeros((24, 24)), 4).unwrap();
    let fused = fuse(&feat, DEFAULT_TEMPERATURE);
    for y in 0..24 {
        for x in 0..24 {
            // oracle: softmax of peak-minus-mean over the sixteen windows
            let mut sharp = Vec::new();
            for dir in Direction::ALL {
                for k in 1..=PYRAMID_LEVELS {
                    let win = feat.window(y, x, dir, k);
                    let max = win.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    sharp.push(max - win.mean().unwrap());
                }
            }
            let top = sharp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = sharp
                .iter()
                .map(|s| ((s - top) / DEFAULT_TEMPERATURE).exp())
                .collect();
            let z: f64 = e.iter().sum();
            for (i, ei) in e.iter().enumerate() {
                assert!((fused.weights[[y, x, i]] - ei / z).abs() < 1e-12);
            }
            let vertical: f64 = fused.weights.slice(ndarray::s![y, x, 8..]).sum();
            assert!(vertical > 0.8, "vertical share {vertical}");
            assert!((fused.weights.slice(ndarray::s![y, x, ..]).sum() - 1.0).abs() < 1e-12);
        }
    }
}
