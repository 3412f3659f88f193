use super::*;
use rand::Rng as _;

fn image_from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Image {
    let mut img = Image::filled(3, h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            img.set_color(y * w + x, &f(y, x));
        }
    }
    img
}

/// Flood fill under 8-connectivity restricted to one label.
fn is_connected(seg: &SegmentMap, id: usize) -> bool {
    let (h, w) = (seg.height(), seg.width());
    let Some(start) = (0..h * w).find(|&p| seg.label(p) == id) else { return false };
    let mut seen = vec![false; h * w];
    let mut stack = vec![start];
    seen[start] = true;
    let mut reached = 0;
    while let Some(p) = stack.pop() {
        reached += 1;
        let (y, x) = ((p / w) as isize, (p % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if !seen[q] && seg.label(q) == id {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
    }
    reached == seg.sizes()[id]
}

fn assert_invariants(seg: &SegmentMap, min_size: usize) {
    let n = seg.height() * seg.width();
    let mut counts = vec![0; seg.num_segments()];
    for p in 0..n {
        counts[seg.label(p)] += 1;
    }
    assert_eq!(counts, seg.sizes());
    assert!(counts.iter().all(|&c| c > 0));
    for id in 0..seg.num_segments() {
        assert!(is_connected(seg, id), "segment {id} not 8-connected");
    }
    if n >= min_size {
        assert!(counts.iter().all(|&c| c >= min_size));
    }
}

#[test]
fn uniform_image_is_one_segment() {
    for k in [1e-6, 0.01, 5.0] {
        let img = Image::filled(3, 9, 7, 0.42);
        let seg = segment(&img, &SegmentParams { k, min_size: 1, sigma: 0.0 }).unwrap();
        assert_eq!(seg.num_segments(), 1);
    }
}

#[test]
fn half_and_half_is_two_segments() {
    let img = image_from_fn(4, 4, |_, x| if x < 2 { [0.0; 3] } else { [1.0; 3] });
    let seg = segment(&img, &SegmentParams { k: 0.01, min_size: 1, sigma: 0.0 }).unwrap();
    assert_eq!(seg.num_segments(), 2);
    assert_eq!(seg.sizes(), &[8, 8]);
    assert_invariants(&seg, 1);
}

#[test]
fn min_size_merges_small_islands() {
    // a single bright pixel in a dark field
    let img = image_from_fn(6, 6, |y, x| if (y, x) == (2, 3) { [1.0; 3] } else { [0.1; 3] });
    let fine = segment(&img, &SegmentParams { k: 1e-3, min_size: 1, sigma: 0.0 }).unwrap();
    assert_eq!(fine.num_segments(), 2);
    let coarse = segment(&img, &SegmentParams { k: 1e-3, min_size: 2, sigma: 0.0 }).unwrap();
    assert_eq!(coarse.num_segments(), 1);
}

#[test]
fn diagonal_neighbors_connect() {
    // checkerboard: same-colored pixels touch only diagonally
    let img = image_from_fn(4, 4, |y, x| if (x + y) % 2 == 0 { [0.0; 3] } else { [1.0; 3] });
    let seg = segment(&img, &SegmentParams { k: 1e-3, min_size: 1, sigma: 0.0 }).unwrap();
    assert_eq!(seg.num_segments(), 2);
    assert_invariants(&seg, 1);
}

#[test]
fn random_images_satisfy_invariants() {
    for seed in 0..20u64 {
        let mut rng = crate::rng::seeded(seed);
        let (h, w) = (rng.gen_range(3..20), rng.gen_range(3..20));
        let data: Vec<f64> = (0..3 * h * w).map(|_| rng.gen()).collect();
        let img = Image::new(3, h, w, data).unwrap();
        let params = SegmentParams {
            k: rng.gen_range(0.05..2.0),
            min_size: rng.gen_range(1..8),
            sigma: if seed % 2 == 0 { 0.0 } else { 0.6 },
        };
        let a = segment(&img, &params).unwrap();
        assert_invariants(&a, params.min_size);
        assert_eq!(a, segment(&img, &params).unwrap());
    }
}

#[test]
fn invalid_params_rejected() {
    let img = Image::filled(3, 2, 2, 0.0);
    assert!(segment(&img, &SegmentParams { k: 0.0, min_size: 1, sigma: 0.0 }).is_err());
    assert!(segment(&img, &SegmentParams { k: 1.0, min_size: 0, sigma: 0.0 }).is_err());
}

#[test]
fn largest_regions_sorted_with_ties_by_id() {
    // sizes 2, 3, 3, 1 in first-appearance order
    let raw = [0, 0, 1, 1, 1, 2, 2, 2, 3];
    let seg = SegmentMap::from_labels(3, 3, &raw).unwrap();
    let masks = largest_regions(&seg, 3).unwrap();
    let counts: Vec<usize> = masks.iter().map(|m| m.count()).collect();
    assert_eq!(counts, vec![3, 3, 2]);
    assert!(masks[0].get(2) && masks[1].get(5) && masks[2].get(0));
}

#[test]
fn largest_regions_examples() {
    let seg = SegmentMap::from_labels(2, 2, &[5, 5, 5, 5]).unwrap();
    let masks = largest_regions(&seg, 10).unwrap();
    assert_eq!(masks.len(), 1);
    assert_eq!(masks[0].count(), 4);

    let mut raw = vec![0; 50];
    raw.extend(vec![1; 30]);
    raw.extend(vec![2; 20]);
    let seg = SegmentMap::from_labels(10, 10, &raw).unwrap();
    let masks = largest_regions(&seg, 2).unwrap();
    assert_eq!(masks.iter().map(|m| m.count()).collect::<Vec<_>>(), vec![50, 30]);
    assert_eq!(masks[0].intersection_count(&masks[1]).unwrap(), 0);
    assert!(largest_regions(&seg, 0).is_err());
}

#[test]
fn segment_map_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let seg = SegmentMap::from_labels(2, 3, &[4, 4, 9, 9, 1, 4]).unwrap();
    seg.save(dir.path(), "seg", Some(SegmentParams::attack())).unwrap();
    assert_eq!(SegmentMap::load(dir.path(), "seg").unwrap(), seg);
}
