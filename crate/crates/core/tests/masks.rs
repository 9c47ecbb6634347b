use proptest::prelude::*;
use strata_core::mask::{
    background_region, downsample_mask, exclusive_region, occlusion_ratio, partition,
    rasterize_mask, Mask, RleMask, Shape,
};
use strata_core::Error;

fn stack_strategy() -> impl Strategy<Value = (usize, usize, Vec<Vec<bool>>)> {
    (1usize..10, 1usize..10, 0usize..6).prop_flat_map(|(w, h, n)| {
        (
            Just(w),
            Just(h),
            prop::collection::vec(prop::collection::vec(any::<bool>(), w * h), n),
        )
    })
}

fn build_stack(w: usize, h: usize, objects: Vec<Vec<bool>>) -> Vec<Mask> {
    let mut masks = vec![Mask::full(w, h)];
    masks.extend(objects.into_iter().map(|b| Mask::from_bits(w, h, b).unwrap()));
    masks
}

/// Owner of a cell: the highest layer whose mask covers it.
fn brute_owner(masks: &[Mask], x: usize, y: usize) -> usize {
    (0..masks.len()).rev().find(|&j| masks[j].get(x, y)).unwrap()
}

proptest! {
    #[test]
    fn partition_matches_topmost_owner((w, h, objects) in stack_strategy()) {
        let masks = build_stack(w, h, objects);
        let part = partition(&masks).unwrap();
        part.validate().unwrap();
        let owners = part.owner_map();
        for y in 0..h {
            for x in 0..w {
                let expected = brute_owner(&masks, x, y);
                prop_assert_eq!(owners[y * w + x], Some(expected));
                let hits = part.entries().iter().filter(|e| e.region.get(x, y)).count();
                prop_assert_eq!(hits, 1);
            }
        }
    }

    #[test]
    fn partition_entry_order((w, h, objects) in stack_strategy()) {
        let masks = build_stack(w, h, objects);
        let i = masks.len() - 1;
        let part = partition(&masks).unwrap();
        let owners: Vec<usize> = part.owners().collect();
        let expected: Vec<usize> = if i == 0 {
            vec![0]
        } else {
            std::iter::once(i).chain((1..i).rev()).chain(std::iter::once(0)).collect()
        };
        prop_assert_eq!(owners, expected);
        if i > 0 {
            prop_assert_eq!(part.region_of(i).unwrap(), &masks[i]);
            for j in 1..i {
                prop_assert_eq!(part.region_of(j).unwrap(), &exclusive_region(&masks, j).unwrap());
            }
            prop_assert_eq!(
                part.region_of(0).unwrap(),
                &background_region(&masks[1..], w, h).unwrap()
            );
        }
    }

    #[test]
    fn rle_round_trip((w, h, objects) in stack_strategy()) {
        for m in build_stack(w, h, objects) {
            let rle = m.to_rle();
            prop_assert_eq!(rle.counts.iter().map(|&c| c as usize).sum::<usize>(), w * h);
            let back = Mask::try_from(rle).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(Mask::from_png(&m.to_png().unwrap()).unwrap(), m);
        }
    }
}

#[test]
fn partition_of_a_thousand_stacks_is_fast() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let start = std::time::Instant::now();
    for _ in 0..1000 {
        let n = rng.random_range(1..=5);
        let mut masks = vec![Mask::full(64, 64)];
        for _ in 0..n {
            let x0 = rng.random_range(0..48);
            let y0 = rng.random_range(0..48);
            masks.push(
                rasterize_mask(
                    &Shape::Rect { x0, y0, x1: x0 + 15, y1: y0 + 15 },
                    64,
                    64,
                )
                .unwrap(),
            );
        }
        partition(&masks).unwrap().validate().unwrap();
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn rejects_bad_stacks() {
    assert!(partition(&[]).is_err());
    assert!(partition(&[Mask::empty(4, 4)]).is_err());
    let err = partition(&[Mask::full(4, 4), Mask::full(5, 4)]).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { .. }));
}

fn inside_triangle(p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let cross = |o: (f64, f64), u: (f64, f64), v: (f64, f64)| {
        (u.0 - o.0) * (v.1 - o.1) - (u.1 - o.1) * (v.0 - o.0)
    };
    let d1 = cross(a, b, p);
    let d2 = cross(b, c, p);
    let d3 = cross(c, a, p);
    (d1 > 0.0 && d2 > 0.0 && d3 > 0.0) || (d1 < 0.0 && d2 < 0.0 && d3 < 0.0)
}

#[test]
fn triangle_matches_brute_force() {
    let tris = [
        [(1.2, 0.7), (14.3, 3.1), (5.9, 12.6)],
        [(15.0, 15.0), (0.3, 9.4), (9.7, 0.2)],
        [(-3.0, 2.0), (8.5, -4.0), (20.0, 11.0)],
    ];
    for [a, b, c] in tris {
        let mask = rasterize_mask(&Shape::Polygon { points: vec![a, b, c] }, 16, 16).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let p = (x as f64 + 0.5, y as f64 + 0.5);
                assert_eq!(mask.get(x, y), inside_triangle(p, a, b, c), "cell ({x}, {y})");
            }
        }
    }
}

#[test]
fn ellipse_and_rect_match_brute_force() {
    let (cx, cy, rx, ry) = (7.3, 5.1, 4.6, 3.2);
    let mask = rasterize_mask(&Shape::Ellipse { cx, cy, rx, ry }, 16, 12).unwrap();
    for y in 0..12 {
        for x in 0..16 {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            assert_eq!(mask.get(x, y), dx * dx + dy * dy < 1.0);
        }
    }
    let rect = rasterize_mask(&Shape::Rect { x0: -2, y0: 3, x1: 5, y1: 40 }, 10, 10).unwrap();
    for y in 0..10 {
        for x in 0..10 {
            assert_eq!(rect.get(x, y), x <= 5 && y >= 3);
        }
    }
}

#[test]
fn degenerate_shapes_are_rejected() {
    let outside = Shape::Rect { x0: 20, y0: 20, x1: 30, y1: 30 };
    assert!(rasterize_mask(&outside, 10, 10).is_err());
    let line = Shape::Polygon { points: vec![(0.0, 0.0), (5.0, 5.0), (10.0, 10.0)] };
    assert!(rasterize_mask(&line, 10, 10).is_err());
    let flat = Shape::Ellipse { cx: 5.0, cy: 5.0, rx: 0.0, ry: 3.0 };
    assert!(rasterize_mask(&flat, 10, 10).is_err());
}

proptest! {
    #[test]
    fn downsample_counts_blocks(bits in prop::collection::vec(any::<bool>(), 24 * 16)) {
        let mask = Mask::from_bits(24, 16, bits).unwrap();
        let small = downsample_mask(&mask, 6, 4).unwrap();
        for ty in 0..4 {
            for tx in 0..6 {
                let mut n = 0;
                for dy in 0..4 {
                    for dx in 0..4 {
                        n += mask.get(tx * 4 + dx, ty * 4 + dy) as usize;
                    }
                }
                prop_assert_eq!(small.get(tx, ty), n >= 8);
            }
        }
    }
}

#[test]
fn downsample_rejects_fractional_ratio() {
    let err = downsample_mask(&Mask::full(10, 10), 3, 5).unwrap_err();
    assert!(matches!(err, Error::NonIntegerRatio { .. }));
}

#[test]
fn occlusion_ratio_by_counting() {
    let a = rasterize_mask(&Shape::Rect { x0: 0, y0: 0, x1: 3, y1: 3 }, 8, 8).unwrap();
    let b = rasterize_mask(&Shape::Rect { x0: 2, y0: 2, x1: 5, y1: 5 }, 8, 8).unwrap();
    // 16 + 16 - 4 covered, 4 shared.
    assert!((occlusion_ratio(&[a.clone(), b]).unwrap() - 4.0 / 28.0).abs() < 1e-12);
    assert_eq!(occlusion_ratio(&[a]).unwrap(), 0.0);
    assert!(matches!(occlusion_ratio(&[]), Err(Error::UndefinedRatio)));
    assert!(matches!(
        occlusion_ratio(&[Mask::empty(3, 3)]),
        Err(Error::UndefinedRatio)
    ));
}

#[test]
fn rle_wire_form_starts_unset() {
    let m = Mask::from_fn(4, 1, |x, _| x == 0);
    assert_eq!(m.to_rle().counts, vec![0, 1, 3]);
    let bad = RleMask { width: 2, height: 2, counts: vec![1, 1] };
    assert!(Mask::try_from(bad).is_err());
    let json = serde_json::to_string(&m).unwrap();
    assert_eq!(serde_json::from_str::<Mask>(&json).unwrap(), m);
}
