//! Assembly checked against a slow per-voxel reimplementation of the sequential blend.

use std::collections::HashMap;

use proptest::prelude::*;
use volmerge::{
    assemble, assemble_with, plan_volume, Axis, BinaryMask, Grid, MergeConfig, TilePlan, TileSpec, VoxelGrid,
    VoxelGrid64,
};

/// Folds the pieces covering coordinate `c` along one axis, in ascending order.
///
/// `value(k)` is `None` when piece `k` is absent (`present[k]` false) or does not
/// hold data at this voxel.
fn fold_axis(
    origins: &[usize],
    len: usize,
    present: &[bool],
    c: usize,
    gamma: f64,
    value: impl Fn(usize) -> Option<f64>,
) -> Option<f64> {
    let mut acc: Option<f64> = None;
    let mut covered_end: Option<usize> = None;
    for (k, &o) in origins.iter().enumerate() {
        if !present[k] {
            continue;
        }
        if o <= c && c < o + len {
            if let Some(v) = value(k) {
                acc = match (acc, covered_end) {
                    (Some(prev), Some(end)) if c < end && o < end => {
                        let n = (end - o) as f64;
                        let w = ((c - o) as f64 / n).powf(gamma);
                        Some((1.0 - w) * prev + w * v)
                    }
                    _ => Some(v),
                };
            }
        }
        covered_end = Some(covered_end.map_or(o + len, |e| e.max(o + len)));
    }
    acc
}

/// Reference assembly in f64, voxel by voxel.
fn oracle(
    plan: &TilePlan,
    order: [Axis; 3],
    gamma: f64,
    fill: f64,
    tile_value: impl Fn(&TileSpec, [usize; 3]) -> f64,
) -> Vec<f64> {
    let [a0, a1, a2] = order.map(Axis::index);
    let counts = plan.lattice_counts();
    let size = plan.tile_size();
    let lattice = |i0: usize, i1: usize, i2: usize| {
        let mut l = [0; 3];
        l[a0] = i0;
        l[a1] = i1;
        l[a2] = i2;
        l
    };
    let row_present = |i1: usize, i2: usize| (0..counts[a0]).any(|i0| plan.is_retained(lattice(i0, i1, i2)));
    let slab_present = |i2: usize| (0..counts[a1]).any(|i1| row_present(i1, i2));
    let [nx, ny, nz] = plan.volume_dims();
    let mut out = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = [x, y, z];
                let row = |i1: usize, i2: usize| {
                    let present: Vec<bool> = (0..counts[a0])
                        .map(|i0| plan.is_retained(lattice(i0, i1, i2)))
                        .collect();
                    fold_axis(plan.origins(a0), size[a0], &present, p[a0], gamma, |i0| {
                        let t = plan.tile(lattice(i0, i1, i2));
                        Some(tile_value(&t, [0, 1, 2].map(|a| p[a] - t.origin[a])))
                    })
                };
                let slab = |i2: usize| {
                    let present: Vec<bool> = (0..counts[a1]).map(|i1| row_present(i1, i2)).collect();
                    fold_axis(plan.origins(a1), size[a1], &present, p[a1], gamma, |i1| row(i1, i2))
                };
                let present: Vec<bool> = (0..counts[a2]).map(slab_present).collect();
                out.push(fold_axis(plan.origins(a2), size[a2], &present, p[a2], gamma, slab).unwrap_or(fill));
            }
        }
    }
    out
}

fn constant_per_tile(t: &TileSpec, _: [usize; 3]) -> f64 {
    let [i, j, k] = t.lattice;
    0.1 + 0.3 * i as f64 + 0.05 * j as f64 + 0.7 * k as f64
}

fn hashed_value(t: &TileSpec, local: [usize; 3]) -> f64 {
    let mut h = (t.index as u64 + 1).wrapping_mul(0x9E3779B97F4A7C15);
    for v in local {
        h = (h ^ v as u64).wrapping_mul(0xBF58476D1CE4E5B9);
        h ^= h >> 31;
    }
    (h % 10_000) as f64 / 10_000.0
}

fn tile_grid<T: volmerge::Real>(t: &TileSpec, f: impl Fn(&TileSpec, [usize; 3]) -> f64) -> Grid<T> {
    Grid::from_fn(t.size, |x, y, z| T::from_f64_lossy(f(t, [x, y, z]))).unwrap()
}

#[test]
fn lattice_2x2x2_constant_tiles() {
    let plan = plan_volume([12, 12, 12], [8, 8, 8], [0.5; 3]).unwrap();
    assert_eq!(plan.lattice_counts(), [2, 2, 2]);
    for gamma in [0.9, 1.0] {
        let config = MergeConfig {
            overlap: [0.5; 3],
            gamma,
            ..MergeConfig::default()
        };
        let expected = oracle(&plan, config.axis_order, gamma, 0.0, constant_per_tile);
        let got: VoxelGrid64 = assemble_with(&plan, &config, |t| Ok(tile_grid(t, constant_per_tile))).unwrap();
        let max = got
            .values()
            .iter()
            .zip(&expected)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max <= 1e-12, "gamma {gamma}: {max}");
        let got32: VoxelGrid = assemble_with(&plan, &config, |t| Ok(tile_grid(t, constant_per_tile))).unwrap();
        let max = got32
            .values()
            .iter()
            .zip(&expected)
            .map(|(a, b)| (*a as f64 - b).abs())
            .fold(0.0, f64::max);
        assert!(max <= 1e-6, "gamma {gamma} f32: {max}");
    }
}

#[test]
fn hashmap_assembly_matches_streaming() {
    let plan = plan_volume([20, 14, 9], [8, 6, 4], [0.4, 0.5, 0.6]).unwrap();
    let config = MergeConfig {
        overlap: [0.4, 0.5, 0.6],
        gamma: 1.3,
        fill: -2.0,
        ..MergeConfig::default()
    };
    let tiles: HashMap<_, Grid<f64>> = plan.tiles().map(|t| (t.lattice, tile_grid(&t, hashed_value))).collect();
    let a = assemble(&plan, &tiles, &config).unwrap();
    let b = assemble_with(&plan, &config, |t| Ok(tile_grid(t, hashed_value))).unwrap();
    assert_eq!(a, b);
}

#[test]
fn determinism_across_thread_counts() {
    let plan = plan_volume([40, 30, 36], [8, 10, 6], [0.6; 3]).unwrap();
    let config = MergeConfig {
        overlap: [0.6; 3],
        gamma: 0.7,
        ..MergeConfig::default()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| assemble_with::<f32, _>(&plan, &config, |t| Ok(tile_grid(t, hashed_value))).unwrap())
    };
    let one = run(1);
    let four = run(4);
    let bits = |g: &VoxelGrid| g.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&one), bits(&four));
}

#[test]
fn tiles_agreeing_on_overlaps_reproduce_the_field() {
    // a field sampled by every tile at global coordinates: all overlaps agree
    let dims = [37, 29, 23];
    let field = |p: [usize; 3]| 0.01 * p[0] as f64 - 0.02 * p[1] as f64 + 0.005 * p[2] as f64 + 0.3;
    for (p, gamma) in [(0.0, 1.0), (0.3, 0.5), (0.5, 0.9), (0.7, 1.5), (0.9, 2.0)] {
        let plan = plan_volume(dims, [10, 8, 12], [p; 3]).unwrap();
        let config = MergeConfig {
            overlap: [p; 3],
            gamma,
            ..MergeConfig::default()
        };
        let out: VoxelGrid = assemble_with(&plan, &config, |t| {
            Ok(tile_grid(t, |t, l| field([0, 1, 2].map(|a| t.origin[a] + l[a]))))
        })
        .unwrap();
        let expected = Grid::<f32>::from_fn(dims, |x, y, z| field([x, y, z]) as f32).unwrap();
        let max = out
            .values()
            .iter()
            .zip(expected.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max <= 1e-5, "p {p} gamma {gamma}: {max}");
    }
}

#[test]
fn blending_commutes_with_affine_intensity_maps() {
    // merging in normalized units then mapping to HU equals merging HU tiles
    let plan = plan_volume([24, 20, 16], [8, 8, 8], [0.5; 3]).unwrap();
    let config = MergeConfig {
        overlap: [0.5; 3],
        gamma: 0.9,
        fill: 0.0,
        ..MergeConfig::default()
    };
    let hu_config = MergeConfig {
        fill: -1000.0,
        ..config.clone()
    };
    let norm: VoxelGrid64 = assemble_with(&plan, &config, |t| Ok(tile_grid(t, hashed_value))).unwrap();
    let hu: VoxelGrid64 = assemble_with(&plan, &hu_config, |t| {
        Ok(tile_grid(t, |t, l| hashed_value(t, l) * 2000.0 - 1000.0))
    })
    .unwrap();
    for (n, h) in norm.values().iter().zip(hu.values()) {
        assert!((n * 2000.0 - 1000.0 - h).abs() < 1e-9);
    }
}

#[test]
fn uncovered_voxels_hold_fill() {
    let dims = [24, 24, 24];
    let plan = plan_volume(dims, [8, 8, 8], [0.5; 3]).unwrap();
    let mask = BinaryMask::from_fn(dims, |x, y, z| x < 3 && y < 3 && z < 3).unwrap();
    let plan = plan.filter_by_mask(&mask).unwrap();
    assert_eq!(plan.retained_count(), 1);
    let config = MergeConfig {
        overlap: [0.5; 3],
        gamma: 1.0,
        fill: -7.0,
        ..MergeConfig::default()
    };
    let out: VoxelGrid64 = assemble_with(&plan, &config, |t| Ok(Grid::filled(t.size, 3.0).unwrap())).unwrap();
    for z in 0..24 {
        for y in 0..24 {
            for x in 0..24 {
                let expect = if x < 8 && y < 8 && z < 8 { 3.0 } else { -7.0 };
                assert_eq!(out.get(x, y, z), expect);
            }
        }
    }
}

#[test]
fn padded_axes_are_cropped() {
    let dims = [5, 20, 7];
    let plan = plan_volume(dims, [8, 8, 8], [0.5; 3]).unwrap();
    assert_eq!(plan.padding(), [3, 0, 1]);
    let config = MergeConfig {
        overlap: [0.5; 3],
        gamma: 0.8,
        ..MergeConfig::default()
    };
    let source = Grid::<f32>::from_fn(dims, |x, y, z| (x + 2 * y + 3 * z) as f32 * 0.01).unwrap();
    let out = assemble_with(&plan, &config, |t| source.extract(t.origin, t.size, 0.0)).unwrap();
    assert_eq!(out.dims(), dims);
    let max = out
        .values()
        .iter()
        .zip(source.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(max <= 1e-6, "{max}");
}

fn axis_order() -> impl Strategy<Value = [Axis; 3]> {
    use Axis::*;
    prop::sample::select(vec![[X, Y, Z], [X, Z, Y], [Y, X, Z], [Y, Z, X], [Z, X, Y], [Z, Y, X]])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matches_oracle_on_random_lattices(
        dims in (4usize..22, 4usize..22, 4usize..22),
        tile in (2usize..9, 2usize..9, 2usize..9),
        p in (0.0f64..0.85, 0.0f64..0.85, 0.0f64..0.85),
        gamma in 0.2f64..3.0,
        order in axis_order(),
        mask_seed in any::<u64>(),
        use_mask in any::<bool>(),
    ) {
        let dims = [dims.0, dims.1, dims.2];
        let overlap = [p.0, p.1, p.2];
        let mut plan = plan_volume(dims, [tile.0, tile.1, tile.2], overlap).unwrap();
        if use_mask {
            let mut s = mask_seed | 1;
            let mask = BinaryMask::from_fn(dims, |_, _, _| {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                s % 97 == 0
            }).unwrap();
            plan = plan.filter_by_mask(&mask).unwrap();
        }
        let config = MergeConfig { overlap, gamma, axis_order: order, fill: -1.5 };
        let expected = oracle(&plan, order, gamma, -1.5, hashed_value);
        let got: VoxelGrid64 = assemble_with(&plan, &config, |t| Ok(tile_grid(t, hashed_value))).unwrap();
        for (i, (a, b)) in got.values().iter().zip(&expected).enumerate() {
            prop_assert!((a - b).abs() <= 1e-9, "voxel {}: {} vs {}", i, a, b);
        }
    }
}
