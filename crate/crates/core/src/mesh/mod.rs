//! Oriented triangulated surfaces: area-weighted normals, enclosed volume,
//! orientation checks, synthetic shapes and file I/O.

mod io;
mod shapes;

use std::collections::HashMap;

pub use io::{load_mesh, read_vtk, save_mesh, save_off, save_vtk, MeshFormat};
pub use shapes::{ellipsoid, icosphere};

use crate::{Error, Result, Vec3};

/// Oriented triangulated surface. Faces are 0-based vertex index triples and
/// an interior edge must be traversed in opposite directions by its two faces.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

/// Signed enclosed volume. `closed` is false when some edge has a single
/// adjacent face, in which case the value is not a true volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Volume {
    pub value: f64,
    pub closed: bool,
}

/// Result of the edge-orientation scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Orientation {
    /// First edge found without a twin, if any.
    pub boundary_edge: Option<(usize, usize)>,
}

impl Orientation {
    pub fn is_closed(&self) -> bool {
        self.boundary_edge.is_none()
    }
}

impl TriMesh {
    /// Builds a mesh, checking that every face index is in range and that no
    /// face repeats a vertex.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &index in f {
                if index >= n {
                    return Err(Error::FaceIndexOutOfRange {
                        face: fi,
                        index,
                        n_vertices: n,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::DegenerateFace(fi));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    /// Same connectivity, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::LengthMismatch {
                expected: self.vertices.len(),
                got: vertices.len(),
            });
        }
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
        })
    }

    /// Applies `x -> f(x)` to every vertex.
    pub fn map_vertices(&self, f: impl FnMut(&Vec3) -> Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Reverses every face, negating all normals.
    pub fn flipped(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            faces: self.faces.iter().map(|&[i, j, k]| [i, k, j]).collect(),
        }
    }

    /// Area-weighted normal of one face, `½ (q_j − q_i) × (q_k − q_i)`.
    pub fn face_normal(&self, face_index: usize) -> Result<Vec3> {
        let face = self.faces.get(face_index).ok_or(Error::NoSuchFace {
            index: face_index,
            n_faces: self.faces.len(),
        })?;
        Ok(face_normal_at(&self.vertices, face))
    }

    pub fn face_normals(&self) -> Vec<Vec3> {
        self.faces
            .iter()
            .map(|f| face_normal_at(&self.vertices, f))
            .collect()
    }

    pub fn face_centroids(&self) -> Vec<Vec3> {
        self.faces
            .iter()
            .map(|f| face_centroid_at(&self.vertices, f))
            .collect()
    }

    /// Area-weighted vertex normals: sum of the normals of adjacent faces.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        vertex_normals_at(&self.vertices, &self.faces)
    }

    /// Per-vertex count of adjacent faces.
    pub fn vertex_valence(&self) -> Vec<usize> {
        let mut valence = vec![0; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                valence[i] += 1;
            }
        }
        valence
    }

    pub fn total_area(&self) -> f64 {
        self.face_normals().iter().map(|n| n.norm()).sum()
    }

    pub fn centroid(&self) -> Vec3 {
        let sum: Vec3 = self.vertices.iter().sum();
        sum / self.vertices.len().max(1) as f64
    }

    /// Signed volume via the divergence theorem, `(1/3) Σ_f c_f · N_f`.
    /// Positive for outward orientation.
    pub fn volume(&self) -> Volume {
        let closed = self
            .orientation()
            .map(|o| o.is_closed())
            .unwrap_or(false);
        Volume {
            value: volume_at(&self.vertices, &self.faces),
            closed,
        }
    }

    /// Scans directed edges. Errors when two faces traverse an edge in the
    /// same direction or an edge is shared by more than two faces.
    pub fn orientation(&self) -> Result<Orientation> {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        let mut undirected: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &self.faces {
            for (a, b) in face_edges(f) {
                let count = undirected.entry((a.min(b), a.max(b))).or_insert(0);
                *count += 1;
                if *count > 2 {
                    return Err(Error::NonManifoldEdge(a, b));
                }
                if directed.insert((a, b), 1).is_some() {
                    return Err(Error::InconsistentOrientation(a, b));
                }
            }
        }
        let boundary_edge = self
            .faces
            .iter()
            .flat_map(face_edges)
            .find(|&(a, b)| !directed.contains_key(&(b, a)));
        Ok(Orientation { boundary_edge })
    }

    /// Registration inputs must be closed and consistently oriented.
    pub fn check_registration_input(&self) -> Result<()> {
        if self.vertices.is_empty() || self.faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        match self.orientation()?.boundary_edge {
            Some((a, b)) => Err(Error::OpenSurface(a, b)),
            None => Ok(()),
        }
    }
}

fn face_edges(f: &[usize; 3]) -> [(usize, usize); 3] {
    [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]
}

pub fn face_normal_at(q: &[Vec3], f: &[usize; 3]) -> Vec3 {
    let [i, j, k] = *f;
    0.5 * (q[j] - q[i]).cross(&(q[k] - q[i]))
}

pub fn face_centroid_at(q: &[Vec3], f: &[usize; 3]) -> Vec3 {
    (q[f[0]] + q[f[1]] + q[f[2]]) / 3.0
}

pub fn vertex_normals_at(q: &[Vec3], faces: &[[usize; 3]]) -> Vec<Vec3> {
    let mut normals = vec![Vec3::zeros(); q.len()];
    for f in faces {
        let nf = face_normal_at(q, f);
        for &i in f {
            normals[i] += nf;
        }
    }
    normals
}

pub fn volume_at(q: &[Vec3], faces: &[[usize; 3]]) -> f64 {
    faces
        .iter()
        .map(|f| face_centroid_at(q, f).dot(&face_normal_at(q, f)))
        .sum::<f64>()
        / 3.0
}

/// Adds the pullback of a cotangent on `N(q, f)` to the vertex gradient.
pub fn face_normal_vjp(q: &[Vec3], f: &[usize; 3], cot: &Vec3, grad: &mut [Vec3]) {
    let [i, j, k] = *f;
    let e1 = q[j] - q[i];
    let e2 = q[k] - q[i];
    let gj = 0.5 * e2.cross(cot);
    let gk = 0.5 * cot.cross(&e1);
    grad[j] += gj;
    grad[k] += gk;
    grad[i] -= gj + gk;
}

/// Pullback of cotangents on the vertex normals `N_k(q, F)`.
pub fn vertex_normals_vjp(q: &[Vec3], faces: &[[usize; 3]], cot: &[Vec3], grad: &mut [Vec3]) {
    for f in faces {
        let c = cot[f[0]] + cot[f[1]] + cot[f[2]];
        face_normal_vjp(q, f, &c, grad);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    pub(crate) fn unit_tetrahedron() -> TriMesh {
        TriMesh::new(
            vec![v(0., 0., 0.), v(1., 0., 0.), v(0., 1., 0.), v(0., 0., 1.)],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
        .unwrap()
    }

    pub(crate) fn unit_cube() -> TriMesh {
        let mut verts = Vec::new();
        for i in 0..8 {
            verts.push(v((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64));
        }
        let quads = [
            [0, 2, 3, 1], // z = 0
            [4, 5, 7, 6], // z = 1
            [0, 1, 5, 4], // y = 0
            [2, 6, 7, 3], // y = 1
            [0, 4, 6, 2], // x = 0
            [1, 3, 7, 5], // x = 1
        ];
        let faces = quads
            .iter()
            .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
            .collect();
        TriMesh::new(verts, faces).unwrap()
    }

    #[test]
    fn face_normal_examples() {
        let m = TriMesh::new(vec![v(0., 0., 0.), v(1., 0., 0.), v(0., 1., 0.)], vec![[0, 1, 2]]).unwrap();
        assert_eq!(m.face_normal(0).unwrap(), v(0., 0., 0.5));

        let collinear =
            TriMesh::new(vec![v(0., 0., 0.), v(1., 0., 0.), v(2., 0., 0.)], vec![[0, 1, 2]]).unwrap();
        assert_eq!(collinear.face_normal(0).unwrap(), Vec3::zeros());

        let swapped = TriMesh::new(m.vertices().to_vec(), vec![[0, 2, 1]]).unwrap();
        assert_eq!(swapped.face_normal(0).unwrap(), -m.face_normal(0).unwrap());

        assert!(matches!(m.face_normal(1), Err(Error::NoSuchFace { .. })));
    }

    #[test]
    fn face_normal_circular_permutation() {
        let q = vec![v(0.3, -1.2, 0.5), v(1.1, 0.4, -0.2), v(-0.7, 0.9, 1.3)];
        let a = face_normal_at(&q, &[0, 1, 2]);
        let b = face_normal_at(&q, &[1, 2, 0]);
        let c = face_normal_at(&q, &[2, 0, 1]);
        assert_relative_eq!(a, b, epsilon = 1e-15);
        assert_relative_eq!(a, c, epsilon = 1e-15);
    }

    #[test]
    fn new_rejects_bad_faces() {
        let q = vec![v(0., 0., 0.), v(1., 0., 0.), v(0., 1., 0.)];
        assert!(matches!(
            TriMesh::new(q.clone(), vec![[0, 1, 3]]),
            Err(Error::FaceIndexOutOfRange { index: 3, .. })
        ));
        assert!(matches!(TriMesh::new(q, vec![[0, 1, 1]]), Err(Error::DegenerateFace(0))));
    }

    #[test]
    fn single_triangle_vertex_normals_equal_face_normal() {
        let m = TriMesh::new(vec![v(0., 0., 0.), v(2., 0., 0.), v(0., 1., 1.)], vec![[0, 1, 2]]).unwrap();
        let nf = m.face_normal(0).unwrap();
        for n in m.vertex_normals() {
            assert_eq!(n, nf);
        }
    }

    #[test]
    fn isolated_vertex_gets_zero_normal() {
        let m = TriMesh::new(
            vec![v(0., 0., 0.), v(1., 0., 0.), v(0., 1., 0.), v(5., 5., 5.)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(m.vertex_normals()[3], Vec3::zeros());
        assert_eq!(m.vertex_valence()[3], 0);
    }

    #[test]
    fn regular_tetrahedron_vertex_normals_point_outward() {
        let s = 1.0 / 3f64.sqrt();
        let verts = vec![v(s, s, s), v(s, -s, -s), v(-s, s, -s), v(-s, -s, s)];
        // outward orientation: each face ordered so its normal points away from the
        // opposite vertex
        let mut faces = vec![];
        for opp in 0..4 {
            let mut f: Vec<usize> = (0..4).filter(|&i| i != opp).collect();
            let n = face_normal_at(&verts, &[f[0], f[1], f[2]]);
            if n.dot(&(verts[f[0]] - verts[opp])) < 0.0 {
                f.swap(1, 2);
            }
            faces.push([f[0], f[1], f[2]]);
        }
        let m = TriMesh::new(verts.clone(), faces.clone()).unwrap();
        let normals = m.vertex_normals();
        let centroid = m.centroid();
        for (k, n) in normals.iter().enumerate() {
            // brute-force sum over the three adjacent faces
            let brute: Vec3 = faces
                .iter()
                .filter(|f| f.contains(&k))
                .map(|f| face_normal_at(&verts, f))
                .sum();
            assert_relative_eq!(*n, brute, epsilon = 1e-15);
            let radial = (verts[k] - centroid).normalize();
            assert_relative_eq!(n.normalize(), radial, epsilon = 1e-12);
        }
    }

    #[test]
    fn closed_meshes_have_zero_total_face_normal() {
        for m in [unit_tetrahedron(), unit_cube(), icosphere(2)] {
            let sum: Vec3 = m.face_normals().iter().sum();
            assert!(sum.norm() < 1e-10 * m.total_area());
            let vsum: Vec3 = m.vertex_normals().iter().sum();
            assert_relative_eq!(vsum, 3.0 * sum, epsilon = 1e-12);
        }
    }

    #[test]
    fn volume_fixtures() {
        let tet = unit_tetrahedron();
        let vol = tet.volume();
        assert!(vol.closed);
        assert_relative_eq!(vol.value, 1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(tet.flipped().volume().value, -1.0 / 6.0, epsilon = 1e-15);
        assert!((unit_cube().volume().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn open_mesh_volume_is_flagged() {
        let m = TriMesh::new(vec![v(0., 0., 0.), v(1., 0., 0.), v(0., 1., 0.)], vec![[0, 1, 2]]).unwrap();
        assert!(!m.volume().closed);
        assert!(matches!(m.check_registration_input(), Err(Error::OpenSurface(..))));
    }

    #[test]
    fn orientation_reports_offending_edge() {
        let mut faces = unit_tetrahedron().faces().to_vec();
        faces[3] = [1, 3, 2];
        let m = TriMesh::new(unit_tetrahedron().vertices().to_vec(), faces).unwrap();
        match m.orientation() {
            Err(Error::InconsistentOrientation(a, b)) => {
                assert!([(1, 3), (3, 2), (2, 1)].contains(&(a, b)));
            }
            other => panic!("expected orientation error, got {other:?}"),
        }
        assert!(unit_cube().orientation().unwrap().is_closed());
    }

    #[test]
    fn linear_map_transports_face_normals() {
        use crate::Mat3;
        let m = icosphere(1);
        let a = Mat3::new(1.3, 0.2, -0.4, 0.1, 0.8, 0.3, -0.5, 0.6, 1.1);
        let det = a.determinant();
        let cof = a.try_inverse().unwrap().transpose() * det;
        let mapped = m.map_vertices(|x| a * x);
        for f in 0..m.n_faces() {
            let expected = cof * m.face_normal(f).unwrap();
            let got = mapped.face_normal(f).unwrap();
            assert!((got - expected).norm() <= 1e-12 * expected.norm());
        }
    }

    #[test]
    fn face_normal_vjp_matches_finite_differences() {
        let q = vec![v(0.3, -1.2, 0.5), v(1.1, 0.4, -0.2), v(-0.7, 0.9, 1.3)];
        let f = [0, 1, 2];
        let cot = v(0.7, -0.1, 0.4);
        let mut grad = vec![Vec3::zeros(); 3];
        face_normal_vjp(&q, &f, &cot, &mut grad);
        let h = 1e-6;
        for i in 0..3 {
            for c in 0..3 {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[i][c] += h;
                qm[i][c] -= h;
                let fd = (cot.dot(&face_normal_at(&qp, &f)) - cot.dot(&face_normal_at(&qm, &f))) / (2.0 * h);
                assert!((fd - grad[i][c]).abs() < 1e-9);
            }
        }
    }
}
