//! Marching-cubes surface extraction from occupancy grids.
//!
//! The case table is derived at startup from per-face contour rules rather
//! than typed in: on every cube face, crossing edges are paired so that each
//! inside corner is cut off on its own, and the directed segments are chained
//! into loops that are fan-triangulated. Neighboring cubes see identical face
//! rules, so the result is watertight.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::layout::VoxelGrid;
use crate::math::Vec3;
use crate::real::Real;
use crate::scene::TriangleMesh;

/// Empty voxels added around the grid so the surface closes.
const PAD: usize = 2;

/// Corner `c` sits at `(c & 1, c >> 1 & 1, c >> 2 & 1)`.
fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, c >> 1 & 1, c >> 2 & 1]
}

/// The twelve cube edges as `(low corner, axis)`.
fn edges() -> [(usize, usize); 12] {
    let mut out = [(0, 0); 12];
    let mut k = 0;
    for axis in 0..3 {
        for c in 0..8 {
            if c >> axis & 1 == 0 {
                out[k] = (c, axis);
                k += 1;
            }
        }
    }
    out
}

fn edge_between(a: usize, b: usize) -> usize {
    let (lo, diff) = (a.min(b), a ^ b);
    let axis = diff.trailing_zeros() as usize;
    edges().iter().position(|&e| e == (lo, axis)).expect("corners share an edge")
}

/// Corners of each face, counter-clockwise seen from outside the cube.
fn faces() -> [[usize; 4]; 6] {
    let mut out = [[0; 4]; 6];
    for axis in 0..3 {
        let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let ccw: [(usize, usize); 4] = if side == 1 {
                [(0, 0), (1, 0), (1, 1), (0, 1)]
            } else {
                [(0, 0), (0, 1), (1, 1), (1, 0)]
            };
            for (k, (u, v)) in ccw.into_iter().enumerate() {
                out[axis * 2 + side][k] = side << axis | u << b | v << c;
            }
        }
    }
    out
}

/// Triangles per inside-corner mask, as triples of edge indices.
fn case_table() -> &'static [Vec<[u8; 3]>] {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(build_case).collect())
}

fn build_case(mask: usize) -> Vec<[u8; 3]> {
    let inside = |c: usize| mask >> c & 1 == 1;
    let mut next = [usize::MAX; 12];
    for face in faces() {
        // Walking the face counter-clockwise, note where we enter and leave
        // the inside region.
        let mut crossings = Vec::with_capacity(4);
        for k in 0..4 {
            let (a, b) = (face[k], face[(k + 1) % 4]);
            if inside(a) != inside(b) {
                crossings.push((edge_between(a, b), inside(b)));
            }
        }
        for (i, &(edge, enters)) in crossings.iter().enumerate() {
            if enters {
                let (exit, _) = crossings[(i + 1) % crossings.len()];
                next[edge] = exit;
            }
        }
    }
    let mut visited = [false; 12];
    let mut tris = Vec::new();
    for start in 0..12 {
        if next[start] == usize::MAX || visited[start] {
            continue;
        }
        let mut ring = Vec::new();
        let mut e = start;
        while !visited[e] {
            visited[e] = true;
            ring.push(e as u8);
            e = next[e];
        }
        for k in 1..ring.len() - 1 {
            tris.push([ring[0], ring[k], ring[k + 1]]);
        }
    }
    tris
}

/// Occupancy box-filtered over 3×3×3 neighborhoods, sampled at voxel
/// centers of the padded lattice.
fn filtered_field(grid: &VoxelGrid) -> (Vec<f32>, [usize; 3]) {
    let d = grid.dims.map(|v| v as usize);
    let p = d.map(|v| v + 2 * PAD);
    let idx = |x: usize, y: usize, z: usize| (z * p[1] + y) * p[0] + x;
    let mut a = vec![0f32; p[0] * p[1] * p[2]];
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                if grid.get(x as u32, y as u32, z as u32) {
                    a[idx(x + PAD, y + PAD, z + PAD)] = 1.0;
                }
            }
        }
    }
    // Separable three-tap sums along each axis.
    let strides = [1, p[0], p[0] * p[1]];
    for axis in 0..3 {
        let s = strides[axis];
        let mut b = vec![0f32; a.len()];
        for z in 0..p[2] {
            for y in 0..p[1] {
                for x in 0..p[0] {
                    let pos = [x, y, z];
                    let i = idx(x, y, z);
                    let mut v = a[i];
                    if pos[axis] > 0 {
                        v += a[i - s];
                    }
                    if pos[axis] + 1 < p[axis] {
                        v += a[i + s];
                    }
                    b[i] = v;
                }
            }
        }
        a = b;
    }
    a.iter_mut().for_each(|v| *v /= 27.0);
    (a, p)
}

/// Contours the box-filtered occupancy at `iso`. Faces point from occupied
/// to empty space; degenerate triangles are dropped.
pub fn extract_surface<T: Real>(grid: &VoxelGrid, iso: f64) -> Result<TriangleMesh<T>> {
    if !(iso > 0.0 && iso < 1.0) {
        return Err(Error::invalid(format!("iso value {iso} outside (0, 1)")));
    }
    if grid.is_empty() || grid.count_occupied() == 0 {
        return Ok(TriangleMesh::default());
    }
    let (field, p) = filtered_field(grid);
    let idx = |x: usize, y: usize, z: usize| (z * p[1] + y) * p[0] + x;
    let table = case_table();
    let cube_edges = edges();
    let iso_f = iso as f32;
    let v = grid.voxel_size;
    let world = |l: [f64; 3]| {
        Vec3::new(
            T::lit(grid.origin[0] + (l[0] - PAD as f64 + 0.5) * v),
            T::lit(grid.origin[1] + (l[1] - PAD as f64 + 0.5) * v),
            T::lit(grid.origin[2] + (l[2] - PAD as f64 + 0.5) * v),
        )
    };

    let mut vertex_of: HashMap<usize, u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for z in 0..p[2] - 1 {
        for y in 0..p[1] - 1 {
            for x in 0..p[0] - 1 {
                let mut mask = 0;
                let mut vals = [0f32; 8];
                for (c, val) in vals.iter_mut().enumerate() {
                    let o = corner_offset(c);
                    *val = field[idx(x + o[0], y + o[1], z + o[2])];
                    if *val > iso_f {
                        mask |= 1 << c;
                    }
                }
                if mask == 0 || mask == 255 {
                    continue;
                }
                let mut vid = |e: u8| -> u32 {
                    let (c0, axis) = cube_edges[e as usize];
                    let o = corner_offset(c0);
                    let l = [x + o[0], y + o[1], z + o[2]];
                    let key = idx(l[0], l[1], l[2]) * 3 + axis;
                    *vertex_of.entry(key).or_insert_with(|| {
                        let (f0, f1) = (vals[c0] as f64, vals[c0 | 1 << axis] as f64);
                        let t = ((iso - f0) / (f1 - f0)).clamp(0.0, 1.0);
                        let mut pos = l.map(|v| v as f64);
                        pos[axis] += t;
                        vertices.push(world(pos));
                        (vertices.len() - 1) as u32
                    })
                };
                for tri in &table[mask] {
                    faces.push([vid(tri[0]), vid(tri[1]), vid(tri[2])]);
                }
            }
        }
    }
    let min_area2 = T::lit(1e-24 * v * v * v * v);
    faces.retain(|f| {
        let (a, b, c) = (vertices[f[0] as usize], vertices[f[1] as usize], vertices[f[2] as usize]);
        (b - a).cross(c - a).norm_sq() > min_area2
    });
    TriangleMesh::new(vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::GridSpec;
    use std::collections::HashMap;

    fn grid(dims: [u32; 3], f: impl Fn(u32, u32, u32) -> bool) -> VoxelGrid {
        let mut g = VoxelGrid::new(GridSpec {
            origin: [0.0; 3],
            voxel_size: 1.0,
            dims,
        })
        .unwrap();
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    g.set(x, y, z, f(x, y, z));
                }
            }
        }
        g
    }

    /// Every undirected edge shared by exactly two faces, used once in each
    /// direction.
    fn assert_closed_oriented(mesh: &TriangleMesh<f64>) {
        let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
        for f in &mesh.faces {
            for k in 0..3 {
                *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
            }
        }
        for (&(a, b), &n) in &directed {
            assert_eq!(n, 1, "directed edge used {n} times");
            assert_eq!(directed.get(&(b, a)), Some(&1), "edge without twin");
        }
    }

    fn euler(mesh: &TriangleMesh<f64>) -> i64 {
        let mut edges = std::collections::HashSet::new();
        for f in &mesh.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        mesh.vertices.len() as i64 - edges.len() as i64 + mesh.faces.len() as i64
    }

    #[test]
    fn table_is_complementary_in_size() {
        let t = case_table();
        assert!(t[0].is_empty() && t[255].is_empty());
        assert_eq!(t[1].len(), 1);
        assert!(t.iter().all(|c| c.len() <= 12));
    }

    #[test]
    fn empty_and_full_give_empty_mesh_for_empty_grid() {
        let g = grid([4, 4, 4], |_, _, _| false);
        assert!(extract_surface::<f64>(&g, 0.5).unwrap().is_empty());
    }

    #[test]
    fn single_voxel_is_a_sphere() {
        let g = grid([3, 3, 3], |x, y, z| (x, y, z) == (1, 1, 1));
        let mesh = extract_surface::<f64>(&g, 0.02).unwrap();
        assert!(!mesh.is_empty());
        assert_closed_oriented(&mesh);
        assert_eq!(euler(&mesh), 2);
        assert!(mesh.signed_volume() > 0.0);
    }

    #[test]
    fn sphere_area_matches() {
        let r = 10.0;
        let g = grid([26, 26, 26], |x, y, z| {
            let d = [x, y, z].map(|v| v as f64 + 0.5 - 13.0);
            d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r * r
        });
        let mesh = extract_surface::<f64>(&g, 0.5).unwrap();
        assert_closed_oriented(&mesh);
        let want = 4.0 * std::f64::consts::PI * r * r;
        let got = mesh.total_area();
        assert!((got - want).abs() / want < 0.15, "area {got} vs {want}");
        assert!(mesh.signed_volume() > 0.0);
    }

    #[test]
    fn checkerboard_stays_manifold() {
        let g = grid([6, 6, 6], |x, y, z| (x + y + z) % 2 == 0);
        let mesh = extract_surface::<f64>(&g, 0.45).unwrap();
        assert_closed_oriented(&mesh);
    }
}
