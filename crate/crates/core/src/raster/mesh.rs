//! Ray-cast rasterization of the proxy mesh into disparity, normal and
//! coverage buffers.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::raster::{Camera, RenderBuffers, TileGrid};
use crate::real::Real;
use crate::scene::TriangleMesh;

struct Tri<T> {
    a: Vec3<T>,
    e1: Vec3<T>,
    e2: Vec3<T>,
    normal: Vec3<T>,
    bbox: Option<[usize; 4]>,
}

/// Nearest ray–triangle hit distance along `d` (Möller–Trumbore, two-sided).
#[inline]
fn hit_distance<T: Real>(tri: &Tri<T>, d: Vec3<T>) -> Option<T> {
    let p = d.cross(tri.e2);
    let det = tri.e1.dot(p);
    if det.abs() < T::lit(1e-14) {
        return None;
    }
    let inv = T::one() / det;
    // Ray origin is the camera center, i.e. the camera-space origin.
    let s = -tri.a;
    let u = s.dot(p) * inv;
    if u < T::zero() || u > T::one() {
        return None;
    }
    let q = s.cross(tri.e1);
    let v = d.dot(q) * inv;
    if v < T::zero() || u + v > T::one() {
        return None;
    }
    Some(tri.e2.dot(q) * inv)
}

fn triangle_bbox<T: Real>(camera: &Camera<T>, focal: T, c: &[Vec3<T>; 3]) -> Option<[usize; 4]> {
    let (w, h) = (camera.width, camera.height);
    if c.iter().all(|p| -p.z <= camera.near) {
        return None;
    }
    if c.iter().any(|p| -p.z <= camera.near) {
        return Some([0, 0, w - 1, h - 1]);
    }
    let mut lo = (T::infinity(), T::infinity());
    let mut hi = (T::neg_infinity(), T::neg_infinity());
    for &p in c {
        let (x, y) = camera.project(p, focal);
        lo = (lo.0.min(x), lo.1.min(y));
        hi = (hi.0.max(x), hi.1.max(y));
    }
    let half = T::lit(0.5);
    let x0 = (lo.0 - half).ceil() - T::one();
    let y0 = (lo.1 - half).ceil() - T::one();
    let x1 = (hi.0 - half).floor() + T::one();
    let y1 = (hi.1 - half).floor() + T::one();
    let (wf, hf) = (T::of_usize(w), T::of_usize(h));
    if !(x1 >= T::zero() && y1 >= T::zero() && x0 < wf && y0 < hf) {
        return None;
    }
    let clamp = |v: T, hi: usize| v.max(T::zero()).min(T::of_usize(hi - 1)).to_usize().unwrap_or(0);
    Some([clamp(x0, w), clamp(y0, h), clamp(x1, w), clamp(y1, h)])
}

/// Renders the nearest mesh surface per pixel. Disparity is the inverse hit
/// depth, the normal is the camera-space face normal turned toward the
/// camera, alpha is the coverage mask and color is left black.
pub fn render_mesh_buffers<T: Real>(
    mesh: &TriangleMesh<T>,
    camera: &Camera<T>,
    tile_size: usize,
) -> Result<RenderBuffers<T>> {
    camera.validate()?;
    mesh.validate()?;
    if tile_size == 0 {
        return Err(Error::invalid("tile size must be positive"));
    }
    let (w, h) = (camera.width, camera.height);
    let focal = camera.focal();
    let tris: Vec<Tri<T>> = (0..mesh.faces.len())
        .map(|f| {
            let c = mesh.corners(f).map(|p| camera.world_to_camera(p));
            let e1 = c[1] - c[0];
            let e2 = c[2] - c[0];
            let normal = e1.cross(e2).try_normalize().unwrap_or(Vec3::zero());
            let bbox = if normal == Vec3::zero() {
                None
            } else {
                triangle_bbox(camera, focal, &c)
            };
            Tri {
                a: c[0],
                e1,
                e2,
                normal,
                bbox,
            }
        })
        .collect();

    let grid = TileGrid::new(w, h, tile_size);
    let mut bins = vec![Vec::new(); grid.count()];
    for (i, t) in tris.iter().enumerate() {
        let Some([x0, y0, x1, y1]) = t.bbox else {
            continue;
        };
        for ty in y0 / grid.size..=y1 / grid.size {
            for tx in x0 / grid.size..=x1 / grid.size {
                bins[ty * grid.tiles_x + tx].push(i);
            }
        }
    }

    let tiles: Vec<Vec<(usize, T, Vec3<T>)>> = (0..grid.count())
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = grid.pixels(tile, w, h);
            let mut out = Vec::new();
            for py in y0..y1 {
                for px in x0..x1 {
                    let d = camera.pixel_ray(px, py, focal);
                    let mut best: Option<(T, usize)> = None;
                    for &i in &bins[tile] {
                        if let Some(l) = hit_distance(&tris[i], d) {
                            if l > camera.near && l < camera.far && best.is_none_or(|(b, _)| l < b) {
                                best = Some((l, i));
                            }
                        }
                    }
                    if let Some((l, i)) = best {
                        let n = tris[i].normal;
                        let n = if n.dot(d) > T::zero() { -n } else { n };
                        out.push((py * w + px, T::one() / l, n));
                    }
                }
            }
            out
        })
        .collect();

    let mut buffers = RenderBuffers::empty(w, h);
    for (i, disp, n) in tiles.into_iter().flatten() {
        buffers.disparity[i] = disp;
        buffers.normal[i] = n;
        buffers.alpha[i] = T::one();
    }
    Ok(buffers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn facing_plane_has_constant_disparity_and_normal() {
        let mesh = TriangleMesh::grid_plane(
            Vec3::new(-5.0, -5.0, 0.0),
            Vec3::new(10.0, 0.0, 0.0),
            Vec3::new(0.0, 10.0, 0.0),
            4,
            4,
        );
        let cam = Camera::look_at_up(
            Vec3::new(0.0, 0.0, 2.0),
            Vec3::zero(),
            Vec3::unit_y(),
            1.0f64,
            16,
            12,
        )
        .unwrap();
        let b = render_mesh_buffers(&mesh, &cam, 8).unwrap();
        let center = 6 * 16 + 8;
        assert_eq!(b.alpha[center], 1.0);
        assert!((b.disparity[center] - 0.5).abs() < 1e-9);
        assert!((b.normal[center] - Vec3::unit_z()).norm() < 1e-12);
    }

    #[test]
    fn empty_view_has_no_coverage() {
        let mesh = TriangleMesh::grid_plane(
            Vec3::new(-1.0, -1.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
            1,
            1,
        );
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, -2.0), Vec3::new(0.0, 5.0, -2.0), 1.0f64, 8, 8).unwrap();
        let b = render_mesh_buffers(&mesh, &cam, 4).unwrap();
        assert!(b.alpha.iter().all(|&a| a == 0.0));
    }
}
