//! Deterministic map-to-occupancy extrusion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layout::map::point_in_polygon;
use crate::layout::{GridSpec, MapLayout, VoxelGrid};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtrudeOptions {
    /// Probability per candidate cell of adding facade or vegetation voxels.
    pub jitter_rate: f64,
    pub vegetation_max_layers: u32,
}

impl Default for ExtrudeOptions {
    fn default() -> Self {
        Self {
            jitter_rate: 0.01,
            vegetation_max_layers: 3,
        }
    }
}

impl ExtrudeOptions {
    pub fn without_jitter() -> Self {
        Self {
            jitter_rate: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Extrusion {
    pub grid: VoxelGrid,
    /// Buildings that had to be clipped to the extent or the grid height.
    pub clipped: usize,
}

/// Ground layer over the map extent, footprints extruded to `⌈h/voxel⌉`
/// layers, seeded facade and vegetation jitter, then road corridors cleared
/// above the ground layer.
pub fn extrude_layout(map: &MapLayout, spec: GridSpec, seed: u64, opts: &ExtrudeOptions) -> Result<Extrusion> {
    map.validate()?;
    let mut grid = VoxelGrid::new(spec)?;
    let [dx, dy, dz] = spec.dims;
    let v = spec.voxel_size;
    let xy = |x: u32, y: u32| {
        let c = spec.center(x, y, 0);
        [c[0], c[1]]
    };

    let mut in_extent = vec![false; (dx * dy) as usize];
    let mut road = vec![false; (dx * dy) as usize];
    for y in 0..dy {
        for x in 0..dx {
            let p = xy(x, y);
            let i = (y * dx + x) as usize;
            in_extent[i] = map.contains(p);
            road[i] = in_extent[i] && map.on_road(p);
            if in_extent[i] {
                grid.set(x, y, 0, true);
            }
        }
    }

    let mut clipped = 0;
    // Column height in layers above ground, per cell.
    let mut footprint = vec![0u32; (dx * dy) as usize];
    for b in &map.buildings {
        let mut was_clipped = b.polygon.iter().any(|&p| !map.contains(p));
        let layers = (b.height / v - 1e-9).ceil().max(1.0) as u32;
        if layers > dz - 1 {
            was_clipped = true;
        }
        let layers = layers.min(dz - 1);
        for y in 0..dy {
            for x in 0..dx {
                let i = (y * dx + x) as usize;
                if in_extent[i] && point_in_polygon(xy(x, y), &b.polygon) {
                    footprint[i] = footprint[i].max(layers);
                }
            }
        }
        clipped += was_clipped as usize;
    }
    for y in 0..dy {
        for x in 0..dx {
            for z in 1..=footprint[(y * dx + x) as usize] {
                grid.set(x, y, z, true);
            }
        }
    }

    if opts.jitter_rate > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let max_layers = opts.vegetation_max_layers.clamp(1, dz.saturating_sub(1).max(1));
        for y in 0..dy {
            for x in 0..dx {
                let i = (y * dx + x) as usize;
                if !in_extent[i] || road[i] {
                    continue;
                }
                let h = footprint[i];
                if h == 0 {
                    if dz > 1 && rng.random_bool(opts.jitter_rate) {
                        let top = rng.random_range(1..=max_layers).min(dz - 1);
                        for z in 1..=top {
                            grid.set(x, y, z, true);
                        }
                    }
                    continue;
                }
                for (nx, ny) in [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)] {
                    if nx >= dx || ny >= dy {
                        continue;
                    }
                    let j = (ny * dx + nx) as usize;
                    if footprint[j] > 0 || !in_extent[j] || road[j] {
                        continue;
                    }
                    for z in 1..=h {
                        if rng.random_bool(opts.jitter_rate) {
                            grid.set(nx, ny, z, true);
                        }
                    }
                }
            }
        }
    }

    for y in 0..dy {
        for x in 0..dx {
            if road[(y * dx + x) as usize] {
                for z in 1..dz {
                    grid.set(x, y, z, false);
                }
            }
        }
    }
    Ok(Extrusion { grid, clipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{Building, Road};

    fn spec(extent: [f64; 4], height: f64) -> GridSpec {
        GridSpec::covering(extent, 1.0, height).unwrap()
    }

    #[test]
    fn empty_map_is_ground_only() {
        let map = MapLayout::empty([0.0, 0.0, 12.0, 7.0]);
        let e = extrude_layout(&map, spec(map.extent, 5.0), 1, &ExtrudeOptions::default()).unwrap();
        assert_eq!(e.grid.count_occupied(), 12 * 7);
        assert!((0..7).all(|y| (0..12).all(|x| e.grid.get(x, y, 0))));
    }

    #[test]
    fn footprint_becomes_column() {
        let mut map = MapLayout::empty([0.0, 0.0, 20.0, 20.0]);
        map.buildings.push(Building {
            polygon: vec![[5.0, 5.0], [15.0, 5.0], [15.0, 15.0], [5.0, 15.0]],
            height: 8.0,
        });
        let e = extrude_layout(&map, spec(map.extent, 12.0), 0, &ExtrudeOptions::without_jitter()).unwrap();
        let g = &e.grid;
        assert_eq!(g.count_occupied(), 400 + 10 * 10 * 8);
        for z in 1..g.dims[2] {
            for y in 0..20 {
                for x in 0..20 {
                    let inside = (5..15).contains(&x) && (5..15).contains(&y) && z <= 8;
                    assert_eq!(g.get(x, y, z), inside, "({x},{y},{z})");
                }
            }
        }
        assert_eq!(e.clipped, 0);
    }

    #[test]
    fn road_corridor_is_clear() {
        let mut map = MapLayout::empty([0.0, 0.0, 30.0, 30.0]);
        map.buildings.push(Building {
            polygon: vec![[0.0, 10.0], [30.0, 10.0], [30.0, 20.0], [0.0, 20.0]],
            height: 4.0,
        });
        map.roads.push(Road {
            points: vec![[0.0, 15.0], [30.0, 15.0]],
            width: 6.0,
        });
        let opts = ExtrudeOptions {
            jitter_rate: 0.3,
            ..Default::default()
        };
        let e = extrude_layout(&map, spec(map.extent, 6.0), 9, &opts).unwrap();
        for y in 0..30u32 {
            let cy = y as f64 + 0.5;
            for x in 0..30 {
                assert!(e.grid.get(x, y, 0));
                if (cy - 15.0).abs() <= 3.0 {
                    assert!((1..e.grid.dims[2]).all(|z| !e.grid.get(x, y, z)));
                }
            }
        }
    }

    #[test]
    fn clipping_is_reported() {
        let mut map = MapLayout::empty([0.0, 0.0, 10.0, 10.0]);
        map.buildings.push(Building {
            polygon: vec![[8.0, 8.0], [14.0, 8.0], [14.0, 14.0], [8.0, 14.0]],
            height: 3.0,
        });
        let e = extrude_layout(&map, spec(map.extent, 5.0), 0, &ExtrudeOptions::without_jitter()).unwrap();
        assert_eq!(e.clipped, 1);
        assert_eq!(e.grid.count_occupied(), 100 + 2 * 2 * 3);
    }

    #[test]
    fn jitter_is_seeded() {
        let mut map = MapLayout::empty([0.0, 0.0, 16.0, 16.0]);
        map.buildings.push(Building {
            polygon: vec![[4.0, 4.0], [10.0, 4.0], [10.0, 10.0], [4.0, 10.0]],
            height: 5.0,
        });
        let opts = ExtrudeOptions {
            jitter_rate: 0.2,
            ..Default::default()
        };
        let a = extrude_layout(&map, spec(map.extent, 6.0), 4, &opts).unwrap();
        let b = extrude_layout(&map, spec(map.extent, 6.0), 4, &opts).unwrap();
        let c = extrude_layout(&map, spec(map.extent, 6.0), 5, &opts).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.grid, c.grid);
    }
}
