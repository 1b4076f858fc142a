use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{DomainSpec, GrainField};
use crate::error::{Error, Result};

/// Seed points of a Voronoi tessellation and the orientation class of each.
#[derive(Clone, Debug, PartialEq)]
pub struct VoronoiSeeds {
    /// Seed positions in um.
    pub positions_um: Vec<[f64; 3]>,
    pub classes: Vec<i32>,
}

impl VoronoiSeeds {
    /// Uniformly random seeds inside the voxelized extent of `spec`. Classes
    /// are dealt round-robin and then shuffled.
    pub fn random(spec: &DomainSpec, n_seeds: usize, n_ori: usize, seed: u64) -> Result<Self> {
        if n_seeds == 0 {
            return Err(Error::invalid("n_seeds must be >= 1"));
        }
        if n_ori == 0 {
            return Err(Error::invalid("n_ori must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ext = spec.voxel_extent_mm().map(|e| e * 1000.0);
        let positions_um = (0..n_seeds)
            .map(|_| [0, 1, 2].map(|k| rng.gen::<f64>() * ext[k]))
            .collect();
        let mut classes: Vec<i32> = (0..n_seeds).map(|s| (s % n_ori) as i32).collect();
        classes.shuffle(&mut rng);
        Ok(Self { positions_um, classes })
    }

    /// Index of the nearest seed for every voxel center; equidistant seeds
    /// resolve to the lowest index.
    pub fn nearest_seed_map(&self, spec: &DomainSpec) -> Vec<u32> {
        let grid = SeedGrid::new(spec, &self.positions_um);
        let [nx, ny, _] = spec.dims;
        let h = spec.voxel_um;
        let mut out = vec![0u32; spec.len()];
        out.par_chunks_mut(nx * ny).enumerate().for_each(|(z, slab)| {
            for y in 0..ny {
                for x in 0..nx {
                    let p = [(x as f64 + 0.5) * h, (y as f64 + 0.5) * h, (z as f64 + 0.5) * h];
                    slab[x + nx * y] = grid.nearest(p, &self.positions_um);
                }
            }
        });
        out
    }
}

#[inline]
fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Uniform bucket grid over the seeds for shell-expanding nearest search.
struct SeedGrid {
    cell_um: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    items: Vec<u32>,
}

impl SeedGrid {
    fn new(spec: &DomainSpec, seeds: &[[f64; 3]]) -> Self {
        let ext = spec.voxel_extent_mm().map(|e| e * 1000.0);
        let volume = ext[0] * ext[1] * ext[2];
        // about two seeds per bucket
        let cell_um = (2.0 * volume / seeds.len() as f64).cbrt().max(spec.voxel_um);
        let dims = ext.map(|e| ((e / cell_um).ceil() as usize).max(1));
        let bucket_of = |p: [f64; 3]| {
            let c = [0, 1, 2].map(|k| ((p[k] / cell_um) as usize).min(dims[k] - 1));
            c[0] + dims[0] * (c[1] + dims[1] * c[2])
        };
        let n_buckets = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; n_buckets + 1];
        for &p in seeds {
            counts[bucket_of(p) + 1] += 1;
        }
        for i in 0..n_buckets {
            counts[i + 1] += counts[i];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut items = vec![0u32; seeds.len()];
        // seeds inserted in index order, so each bucket lists ascending ids
        for (i, &p) in seeds.iter().enumerate() {
            let b = bucket_of(p);
            items[fill[b]] = i as u32;
            fill[b] += 1;
        }
        Self { cell_um, dims, starts, items }
    }

    fn nearest(&self, p: [f64; 3], seeds: &[[f64; 3]]) -> u32 {
        let c = [0, 1, 2].map(|k| ((p[k] / self.cell_um) as usize).min(self.dims[k] - 1) as i64);
        let max_r = *self.dims.iter().max().unwrap() as i64;
        let mut best = (f64::INFINITY, u32::MAX);
        for r in 0..=max_r {
            for bz in (c[2] - r)..=(c[2] + r) {
                if bz < 0 || bz >= self.dims[2] as i64 {
                    continue;
                }
                for by in (c[1] - r)..=(c[1] + r) {
                    if by < 0 || by >= self.dims[1] as i64 {
                        continue;
                    }
                    let on_shell_yz = (bz - c[2]).abs() == r || (by - c[1]).abs() == r;
                    let xs: Box<dyn Iterator<Item = i64>> = if on_shell_yz {
                        Box::new((c[0] - r)..=(c[0] + r))
                    } else {
                        Box::new([c[0] - r, c[0] + r].into_iter().take(if r == 0 { 1 } else { 2 }))
                    };
                    for bx in xs {
                        if bx < 0 || bx >= self.dims[0] as i64 {
                            continue;
                        }
                        let b = bx as usize + self.dims[0] * (by as usize + self.dims[1] * bz as usize);
                        for &s in &self.items[self.starts[b]..self.starts[b + 1]] {
                            let d = dist2(p, seeds[s as usize]);
                            if d < best.0 || (d == best.0 && s < best.1) {
                                best = (d, s);
                            }
                        }
                    }
                }
            }
            // anything in shell r + 1 is at least r whole buckets away
            let bound = r as f64 * self.cell_um;
            if best.1 != u32::MAX && best.0 < bound * bound {
                break;
            }
        }
        best.1
    }
}

/// Exhaustive nearest-seed scan; reference implementation for small grids.
pub fn nearest_seed_brute_force(spec: &DomainSpec, seeds: &[[f64; 3]]) -> Vec<u32> {
    let h = spec.voxel_um;
    (0..spec.len())
        .map(|v| {
            let [x, y, z] = spec.coords(v);
            let p = [(x as f64 + 0.5) * h, (y as f64 + 0.5) * h, (z as f64 + 0.5) * h];
            let mut best = (f64::INFINITY, 0u32);
            for (s, &q) in seeds.iter().enumerate() {
                let d = dist2(p, q);
                if d < best.0 {
                    best = (d, s as u32);
                }
            }
            best.1
        })
        .collect()
}

/// Voronoi polycrystal on the voxel lattice: each voxel takes the class of
/// its nearest seed.
pub fn generate_voronoi_microstructure(
    spec: DomainSpec,
    n_seeds: usize,
    n_ori: usize,
    seed: u64,
) -> Result<GrainField> {
    let seeds = VoronoiSeeds::random(&spec, n_seeds, n_ori, seed)?;
    let cells = seeds.nearest_seed_map(&spec);
    let labels = cells.iter().map(|&c| seeds.classes[c as usize]).collect();
    GrainField::from_labels(spec, n_ori, labels)
}
