//! Triangle proxy mesh and its conversion to splats.

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::real::Real;
use crate::scene::{sh, Splat};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh<T> {
    pub vertices: Vec<Vec3<T>>,
    pub faces: Vec<[u32; 3]>,
}

impl<T: Real> TriangleMesh<T> {
    pub fn new(vertices: Vec<Vec3<T>>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v as usize >= n) {
                return Err(Error::invalid(format!("face {i} references a vertex out of range")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::invalid(format!("face {i} repeats a vertex")));
            }
        }
        Ok(())
    }

    pub fn corners(&self, face: usize) -> [Vec3<T>; 3] {
        let f = self.faces[face];
        [
            self.vertices[f[0] as usize],
            self.vertices[f[1] as usize],
            self.vertices[f[2] as usize],
        ]
    }

    /// Unnormalized face normal `(b - a) × (c - a)`, twice the area long.
    pub fn face_cross(&self, face: usize) -> Vec3<T> {
        let [a, b, c] = self.corners(face);
        (b - a).cross(c - a)
    }

    pub fn face_area(&self, face: usize) -> T {
        self.face_cross(face).norm() * T::lit(0.5)
    }

    pub fn total_area(&self) -> T {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Signed enclosed volume; positive for closed, outward-wound meshes.
    pub fn signed_volume(&self) -> T {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.corners(f);
                a.dot(b.cross(c))
            })
            .sum::<T>()
            / T::lit(6.0)
    }

    /// Appends another mesh, offsetting its indices.
    pub fn append(&mut self, other: &TriangleMesh<T>) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    }

    /// A regular `nx × ny` grid of quads (two triangles each) spanning the
    /// parallelogram `origin + s·edge_u + t·edge_v`, `s, t ∈ [0, 1]`, wound so
    /// that the normal is `edge_u × edge_v`.
    pub fn grid_plane(origin: Vec3<T>, edge_u: Vec3<T>, edge_v: Vec3<T>, nx: usize, ny: usize) -> Self {
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let s = T::of_usize(i) / T::of_usize(nx);
                let t = T::of_usize(j) / T::of_usize(ny);
                vertices.push(origin + edge_u * s + edge_v * t);
            }
        }
        let idx = |i: usize, j: usize| (j * (nx + 1) + i) as u32;
        let mut faces = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
        Self { vertices, faces }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MeshToSplatsOptions<T> {
    /// `s_u · s_v = face area · scale_factor`.
    pub scale_factor: T,
    pub opacity: T,
    pub sh_degree: usize,
    /// Faces larger than this are split 1→4 at edge midpoints until they fit.
    pub max_face_area: Option<T>,
}

impl<T: Real> Default for MeshToSplatsOptions<T> {
    fn default() -> Self {
        Self {
            scale_factor: T::one(),
            opacity: T::lit(0.7),
            sh_degree: 0,
            max_face_area: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MeshSplats<T> {
    pub splats: Vec<Splat<T>>,
    /// Zero-area faces that produced no splat.
    pub skipped: usize,
}

/// One splat per non-degenerate face: centroid, `t_u` along the longest edge,
/// `t_u × t_v` equal to the face normal, scale product equal to the scaled
/// area with the aspect of the face's extent along the two tangents.
pub fn mesh_to_splats<T: Real>(mesh: &TriangleMesh<T>, opts: &MeshToSplatsOptions<T>) -> Result<MeshSplats<T>> {
    if mesh.is_empty() {
        return Err(Error::invalid("mesh_to_splats needs a nonempty mesh"));
    }
    if !(opts.scale_factor > T::zero()) {
        return Err(Error::invalid("scale factor must be positive"));
    }
    if opts.sh_degree > sh::MAX_SH_DEGREE {
        return Err(Error::invalid(format!("SH degree {} exceeds 3", opts.sh_degree)));
    }
    mesh.validate()?;
    let mut out = MeshSplats {
        splats: Vec::with_capacity(mesh.faces.len()),
        skipped: 0,
    };
    for f in 0..mesh.faces.len() {
        let tri = mesh.corners(f);
        match opts.max_face_area {
            Some(limit) if limit > T::zero() => subdivide(tri, limit, 0, &mut |t| push_face(t, opts, &mut out)),
            _ => push_face(tri, opts, &mut out),
        }
    }
    Ok(out)
}

fn subdivide<T: Real>(tri: [Vec3<T>; 3], limit: T, depth: usize, emit: &mut impl FnMut([Vec3<T>; 3])) {
    let [a, b, c] = tri;
    let area = (b - a).cross(c - a).norm() * T::lit(0.5);
    if area <= limit || depth >= 12 {
        emit(tri);
        return;
    }
    let half = T::lit(0.5);
    let (ab, bc, ca) = ((a + b) * half, (b + c) * half, (c + a) * half);
    subdivide([a, ab, ca], limit, depth + 1, emit);
    subdivide([ab, b, bc], limit, depth + 1, emit);
    subdivide([ca, bc, c], limit, depth + 1, emit);
    subdivide([ab, bc, ca], limit, depth + 1, emit);
}

fn push_face<T: Real>(tri: [Vec3<T>; 3], opts: &MeshToSplatsOptions<T>, out: &mut MeshSplats<T>) {
    match splat_for_face(tri, opts) {
        Some(s) => out.splats.push(s),
        None => out.skipped += 1,
    }
}

fn splat_for_face<T: Real>(tri: [Vec3<T>; 3], opts: &MeshToSplatsOptions<T>) -> Option<Splat<T>> {
    let [a, b, c] = tri;
    let cross = (b - a).cross(c - a);
    let normal = cross.try_normalize()?;
    let area = cross.norm() * T::lit(0.5);

    let edges = [(a, b), (b, c), (c, a)];
    let (p, q) = edges
        .iter()
        .copied()
        .max_by(|x, y| (x.1 - x.0).norm_sq().partial_cmp(&(y.1 - y.0).norm_sq()).unwrap())?;
    let tu = (q - p).try_normalize()?;
    let tv = normal.cross(tu).try_normalize()?;

    let extent = |axis: Vec3<T>| {
        let d = [a.dot(axis), b.dot(axis), c.dot(axis)];
        let hi = d[0].max(d[1]).max(d[2]);
        let lo = d[0].min(d[1]).min(d[2]);
        hi - lo
    };
    let (eu, ev) = (extent(tu), extent(tv));
    if !(eu > T::zero() && ev > T::zero()) {
        return None;
    }
    let product = area * opts.scale_factor;
    let aspect = eu / ev;
    let scale_u = (product * aspect).sqrt();
    let scale_v = (product / aspect).sqrt();

    let mut sh_coeffs = vec![Vec3::zero(); sh::coeff_count(opts.sh_degree)];
    sh_coeffs[0] = Vec3::splat(T::lit(0.5));
    let third = T::one() / T::lit(3.0);
    Some(Splat {
        center: (a + b + c) * third,
        tangent_u: tu,
        tangent_v: tv,
        scale_u,
        scale_v,
        opacity: opts.opacity,
        sh: sh_coeffs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn right_triangle() -> TriangleMesh<f64> {
        TriangleMesh::new(
            vec![Vec3::zero(), Vec3::unit_x(), Vec3::unit_y()],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn right_triangle_splat() {
        let out = mesh_to_splats(&right_triangle(), &MeshToSplatsOptions::default()).unwrap();
        assert_eq!(out.splats.len(), 1);
        let s = &out.splats[0];
        let third = 1.0 / 3.0;
        assert!((s.center - Vec3::new(third, third, 0.0)).max_abs() < 1e-15);
        let n = s.tangent_u.cross(s.tangent_v);
        assert!((n - Vec3::unit_z()).max_abs() < 1e-12);
        assert!((s.scale_u * s.scale_v - 0.5).abs() < 1e-12);
        assert_eq!(s.opacity, 0.7);
        assert_eq!(s.sh, vec![Vec3::splat(0.5)]);
        s.check_invariants().unwrap();
    }

    #[test]
    fn tangent_follows_longest_edge() {
        let out = mesh_to_splats(&right_triangle(), &MeshToSplatsOptions::default()).unwrap();
        let tu = out.splats[0].tangent_u;
        let hyp = Vec3::new(-1.0, 1.0, 0.0).normalize();
        assert!((tu.dot(hyp).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_faces_are_skipped() {
        let mesh = TriangleMesh::new(
            vec![Vec3::zero(), Vec3::unit_x(), Vec3::new(2.0, 0.0, 0.0), Vec3::unit_y()],
            vec![[0, 1, 2], [0, 1, 3]],
        )
        .unwrap();
        let out = mesh_to_splats(&mesh, &MeshToSplatsOptions::default()).unwrap();
        assert_eq!(out.splats.len(), 1);
        assert_eq!(out.skipped, 1);
    }

    #[test]
    fn empty_mesh_is_an_error() {
        let mesh = TriangleMesh::<f64>::default();
        assert!(mesh_to_splats(&mesh, &MeshToSplatsOptions::default()).is_err());
    }

    #[test]
    fn subdivision_preserves_area() {
        let opts = MeshToSplatsOptions {
            max_face_area: Some(0.05),
            ..Default::default()
        };
        let out = mesh_to_splats(&right_triangle(), &opts).unwrap();
        assert_eq!(out.splats.len(), 16);
        let total: f64 = out.splats.iter().map(|s| s.scale_u * s.scale_v).sum();
        assert!((total - 0.5).abs() < 1e-12);
    }

    #[test]
    fn invalid_indices_are_rejected() {
        assert!(TriangleMesh::new(vec![Vec3::<f64>::zero(); 2], vec![[0, 1, 2]]).is_err());
        assert!(TriangleMesh::new(vec![Vec3::<f64>::zero(); 3], vec![[0, 1, 1]]).is_err());
    }
}
