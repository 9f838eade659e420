//! Structured meshes of the unit interval and the unit square.
//!
//! Vertices are stored with two coordinates even in 1D (the second is zero),
//! cells as flat vertex-index tuples with stride `dimension + 1`. A refined
//! mesh keeps a handle on its parent together with the parent cell of every
//! child cell, which is what nested transfer between levels walks.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone)]
pub struct Mesh {
    dimension: usize,
    vertices: Vec<[f64; 2]>,
    cells: Vec<usize>,
    h: f64,
    parent: Option<Arc<Mesh>>,
    parent_cell: Vec<usize>,
}

impl Mesh {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn vertices_per_cell(&self) -> usize {
        self.dimension + 1
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len() / self.vertices_per_cell()
    }

    pub fn vertex(&self, i: usize) -> [f64; 2] {
        self.vertices[i]
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        let k = self.vertices_per_cell();
        &self.cells[c * k..(c + 1) * k]
    }

    /// Maximum cell diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn parent(&self) -> Option<&Arc<Mesh>> {
        self.parent.as_ref()
    }

    /// Parent cell index of child cell `c`; `None` for a root mesh.
    pub fn parent_cell(&self, c: usize) -> Option<usize> {
        self.parent.as_ref().map(|_| self.parent_cell[c])
    }

    /// Length (1D) or area (2D) of cell `c`.
    pub fn cell_measure(&self, c: usize) -> f64 {
        let v = self.cell(c);
        match self.dimension {
            1 => (self.vertices[v[1]][0] - self.vertices[v[0]][0]).abs(),
            _ => {
                let [a, b, p] = [self.vertices[v[0]], self.vertices[v[1]], self.vertices[v[2]]];
                0.5 * ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])).abs()
            }
        }
    }

    pub fn cell_diameter(&self, c: usize) -> f64 {
        let v = self.cell(c);
        let mut d: f64 = 0.0;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                let (a, b) = (self.vertices[v[i]], self.vertices[v[j]]);
                d = d.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        d
    }

    pub fn total_measure(&self) -> f64 {
        (0..self.n_cells()).map(|c| self.cell_measure(c)).sum()
    }

    /// Affine map of cell `c`: `x = origin + jacobian * xi`, with the
    /// jacobian stored column-major (`[col0, col1]`).
    pub fn cell_map(&self, c: usize) -> ([f64; 2], [[f64; 2]; 2]) {
        let v = self.cell(c);
        let a = self.vertices[v[0]];
        let b = self.vertices[v[1]];
        match self.dimension {
            1 => (a, [[b[0] - a[0], 0.0], [0.0, 1.0]]),
            _ => {
                let p = self.vertices[v[2]];
                (a, [[b[0] - a[0], b[1] - a[1]], [p[0] - a[0], p[1] - a[1]]])
            }
        }
    }

    fn same_geometry(&self, other: &Mesh) -> bool {
        self.dimension == other.dimension && self.cells == other.cells && self.vertices == other.vertices
    }

    /// For each cell of `self`, the index of the cell of `ancestor` that
    /// contains it, if `ancestor` is `self` or one of its refinement parents.
    pub fn ancestor_cell_map(&self, ancestor: &Mesh) -> Option<Vec<usize>> {
        let mut map: Vec<usize> = (0..self.n_cells()).collect();
        let mut current = self;
        loop {
            if std::ptr::eq(current, ancestor) || current.same_geometry(ancestor) {
                return Some(map);
            }
            let parent = current.parent.as_deref()?;
            for m in map.iter_mut() {
                *m = current.parent_cell[*m];
            }
            current = parent;
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MeshDump::from(self)).expect("mesh dump serializes")
    }

    /// Parse a mesh dump and check that it is a valid cover of the unit
    /// interval or square.
    pub fn from_json(text: &str) -> Result<Mesh> {
        let dump: MeshDump = serde_json::from_str(text)?;
        dump.into_mesh()
    }

    /// Checks the structural invariants: cells cover the unit domain with
    /// positive measure and the diameter ratio stays bounded.
    pub fn check(&self) -> Result<()> {
        if self.dimension != 1 && self.dimension != 2 {
            return Err(invalid(format!("dimension {} not supported", self.dimension)));
        }
        if self.n_cells() == 0 {
            return Err(invalid("mesh has no cells"));
        }
        for (i, v) in self.vertices.iter().enumerate() {
            let inside = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
            if !inside(v[0]) || (self.dimension == 2 && !inside(v[1])) || (self.dimension == 1 && v[1] != 0.0) {
                return Err(invalid(format!("vertex {i} lies outside the unit domain")));
            }
        }
        let (mut dmin, mut dmax) = (f64::INFINITY, 0.0f64);
        for c in 0..self.n_cells() {
            let cell = self.cell(c);
            if cell.iter().any(|&v| v >= self.n_vertices()) {
                return Err(invalid(format!("cell {c} references a missing vertex")));
            }
            if self.cell_measure(c) <= 0.0 {
                return Err(invalid(format!("cell {c} is degenerate")));
            }
            let d = self.cell_diameter(c);
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
        if (self.total_measure() - 1.0).abs() > 1e-12 {
            return Err(invalid("cells do not cover the unit domain"));
        }
        if dmax / dmin > 2.0 {
            return Err(invalid("mesh is not quasi-uniform"));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct MeshDump {
    dimension: usize,
    vertices: Vec<Vec<f64>>,
    cells: Vec<Vec<usize>>,
}

impl From<&Mesh> for MeshDump {
    fn from(m: &Mesh) -> Self {
        MeshDump {
            dimension: m.dimension,
            vertices: m.vertices.iter().map(|v| v[..m.dimension].to_vec()).collect(),
            cells: (0..m.n_cells()).map(|c| m.cell(c).to_vec()).collect(),
        }
    }
}

impl MeshDump {
    fn into_mesh(self) -> Result<Mesh> {
        let d = self.dimension;
        if d != 1 && d != 2 {
            return Err(invalid(format!("dimension {d} not supported")));
        }
        let mut vertices = Vec::with_capacity(self.vertices.len());
        for v in &self.vertices {
            if v.len() != d {
                return Err(invalid("vertex coordinate count does not match dimension"));
            }
            vertices.push([v[0], if d == 2 { v[1] } else { 0.0 }]);
        }
        let mut cells = Vec::with_capacity(self.cells.len() * (d + 1));
        for c in &self.cells {
            if c.len() != d + 1 {
                return Err(invalid("cell vertex count does not match dimension"));
            }
            cells.extend_from_slice(c);
        }
        let mut mesh = Mesh { dimension: d, vertices, cells, h: 0.0, parent: None, parent_cell: Vec::new() };
        mesh.check()?;
        mesh.h = (0..mesh.n_cells()).map(|c| mesh.cell_diameter(c)).fold(0.0, f64::max);
        Ok(mesh)
    }
}

/// Uniform partition of (0,1) into `n_cells` cells.
pub fn build_interval_mesh(n_cells: usize) -> Result<Mesh> {
    if n_cells == 0 {
        return Err(invalid("n_cells must be at least 1"));
    }
    let n = n_cells as f64;
    let vertices = (0..=n_cells).map(|i| [i as f64 / n, 0.0]).collect();
    let cells = (0..n_cells).flat_map(|i| [i, i + 1]).collect();
    Ok(Mesh { dimension: 1, vertices, cells, h: 1.0 / n, parent: None, parent_cell: Vec::new() })
}

/// Unit square split into `n_per_side`² squares, each cut along the
/// (1,0)-(0,1) diagonal into two counter-clockwise triangles.
pub fn build_unit_square_tri_mesh(n_per_side: usize) -> Result<Mesh> {
    if n_per_side == 0 {
        return Err(invalid("n_per_side must be at least 1"));
    }
    let n = n_per_side;
    let nf = n as f64;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 / nf, j as f64 / nf]);
        }
    }
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut cells = Vec::with_capacity(6 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            cells.extend_from_slice(&[v00, v10, v01]);
            cells.extend_from_slice(&[v11, v01, v10]);
        }
    }
    Ok(Mesh { dimension: 2, vertices, cells, h: std::f64::consts::SQRT_2 / nf, parent: None, parent_cell: Vec::new() })
}

/// `count` nested meshes of the unit interval or square, the first with
/// `cells_per_side` cells per side and each next one a uniform refinement.
pub fn uniform_hierarchy(dimension: usize, cells_per_side: usize, count: usize) -> Result<Vec<Arc<Mesh>>> {
    let coarsest = match dimension {
        1 => build_interval_mesh(cells_per_side)?,
        2 => build_unit_square_tri_mesh(cells_per_side)?,
        d => return Err(invalid(format!("dimension {d} not supported (use 1 or 2)"))),
    };
    let mut out = vec![Arc::new(coarsest)];
    while out.len() < count {
        let next = refine_uniform(out.last().unwrap());
        out.push(Arc::new(next));
    }
    Ok(out)
}

/// Bisect every interval, or split every triangle into four congruent
/// children through its edge midpoints. Parent vertices keep their exact
/// coordinates; the child records `mesh` as its parent.
pub fn refine_uniform(mesh: &Arc<Mesh>) -> Mesh {
    match mesh.dimension {
        1 => refine_interval(mesh),
        _ => refine_triangles(mesh),
    }
}

fn refine_interval(mesh: &Arc<Mesh>) -> Mesh {
    // Vertices stay sorted along the line so the stiffness stays banded.
    let nc = mesh.n_cells();
    let mut vertices = Vec::with_capacity(2 * nc + 1);
    let mut cells = Vec::with_capacity(4 * nc);
    let mut parent_cell = Vec::with_capacity(2 * nc);
    let mut order: Vec<usize> = (0..nc).collect();
    order.sort_by(|&a, &b| {
        let xa = mesh.vertices[mesh.cell(a)[0]][0].min(mesh.vertices[mesh.cell(a)[1]][0]);
        let xb = mesh.vertices[mesh.cell(b)[0]][0].min(mesh.vertices[mesh.cell(b)[1]][0]);
        xa.total_cmp(&xb)
    });
    for (k, &c) in order.iter().enumerate() {
        let v = mesh.cell(c);
        let (l, r) = if mesh.vertices[v[0]][0] <= mesh.vertices[v[1]][0] { (v[0], v[1]) } else { (v[1], v[0]) };
        let (xl, xr) = (mesh.vertices[l][0], mesh.vertices[r][0]);
        if k == 0 {
            vertices.push([xl, 0.0]);
        }
        let left = vertices.len() - 1;
        vertices.push([0.5 * (xl + xr), 0.0]);
        vertices.push([xr, 0.0]);
        cells.extend_from_slice(&[left, left + 1, left + 1, left + 2]);
        parent_cell.extend_from_slice(&[c, c]);
    }
    Mesh { dimension: 1, vertices, cells, h: mesh.h / 2.0, parent: Some(Arc::clone(mesh)), parent_cell }
}

fn refine_triangles(mesh: &Arc<Mesh>) -> Mesh {
    let mut vertices = mesh.vertices.clone();
    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
    let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<[f64; 2]>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoints.entry(key).or_insert_with(|| {
            let (p, q) = (vertices[a], vertices[b]);
            vertices.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
            vertices.len() - 1
        })
    };
    let nc = mesh.n_cells();
    let mut cells = Vec::with_capacity(12 * nc);
    let mut parent_cell = Vec::with_capacity(4 * nc);
    for c in 0..nc {
        let v = mesh.cell(c);
        let (a, b, p) = (v[0], v[1], v[2]);
        let mab = midpoint(a, b, &mut vertices);
        let mbp = midpoint(b, p, &mut vertices);
        let mpa = midpoint(p, a, &mut vertices);
        cells.extend_from_slice(&[a, mab, mpa, mab, b, mbp, mpa, mbp, p, mbp, mpa, mab]);
        parent_cell.extend_from_slice(&[c; 4]);
    }
    Mesh { dimension: 2, vertices, cells, h: mesh.h / 2.0, parent: Some(Arc::clone(mesh)), parent_cell }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_vertices_and_h() {
        let m = build_interval_mesh(4).unwrap();
        let xs: Vec<f64> = m.vertices().iter().map(|v| v[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(m.h(), 0.25);
        let one = build_interval_mesh(1).unwrap();
        assert_eq!(one.n_cells(), 1);
        assert_eq!(one.h(), 1.0);
        let fine = build_interval_mesh(64).unwrap();
        assert_eq!(fine.n_vertices(), 65);
        assert_eq!(fine.h(), 1.0 / 64.0);
        fine.check().unwrap();
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(build_interval_mesh(0).is_err());
        assert!(build_unit_square_tri_mesh(0).is_err());
    }

    #[test]
    fn square_counts_and_area() {
        let m1 = build_unit_square_tri_mesh(1).unwrap();
        assert_eq!((m1.n_cells(), m1.n_vertices()), (2, 4));
        let m2 = build_unit_square_tri_mesh(2).unwrap();
        assert_eq!((m2.n_cells(), m2.n_vertices()), (8, 9));
        assert!((m2.total_measure() - 1.0).abs() < 1e-12);
        assert_eq!(build_unit_square_tri_mesh(16).unwrap().n_cells(), 512);
        m2.check().unwrap();
        assert!((m2.h() - m2.cell_diameter(0)).abs() < 1e-15);
    }

    #[test]
    fn interval_refinement_is_nested() {
        let coarse = Arc::new(build_interval_mesh(4).unwrap());
        let fine = refine_uniform(&coarse);
        assert_eq!(fine.n_cells(), 8);
        assert_eq!(fine.h(), 1.0 / 8.0);
        for v in coarse.vertices() {
            assert!(fine.vertices().iter().any(|w| w[0].to_bits() == v[0].to_bits()));
        }
        assert!(fine.vertices().windows(2).all(|w| w[0][0] < w[1][0]));
        fine.check().unwrap();
        assert_eq!(fine.ancestor_cell_map(&coarse).unwrap(), vec![0, 0, 1, 1, 2, 2, 3, 3]);
    }

    #[test]
    fn triangle_refinement_quadruples_cells() {
        let coarse = Arc::new(build_unit_square_tri_mesh(2).unwrap());
        let fine = refine_uniform(&coarse);
        assert_eq!(fine.n_cells(), 32);
        assert_eq!(fine.h(), coarse.h() / 2.0);
        assert!((fine.total_measure() - 1.0).abs() < 1e-12);
        assert_eq!(&fine.vertices()[..coarse.n_vertices()], coarse.vertices());
        fine.check().unwrap();
        for c in 0..fine.n_cells() {
            assert!((fine.cell_measure(c) - coarse.cell_measure(0) / 4.0).abs() < 1e-15);
            assert!((fine.cell_diameter(c) - fine.h()).abs() < 1e-15);
        }
    }

    #[test]
    fn ancestor_map_spans_levels_and_rejects_strangers() {
        let l0 = Arc::new(build_unit_square_tri_mesh(1).unwrap());
        let l1 = Arc::new(refine_uniform(&l0));
        let l2 = refine_uniform(&l1);
        let map = l2.ancestor_cell_map(&l0).unwrap();
        assert_eq!(map.len(), 32);
        assert!(map[..16].iter().all(|&c| c == 0));
        let other = build_unit_square_tri_mesh(3).unwrap();
        assert!(l2.ancestor_cell_map(&other).is_none());
        // An independently built copy of the root is recognised structurally.
        let copy = build_unit_square_tri_mesh(1).unwrap();
        assert_eq!(l2.ancestor_cell_map(&copy).unwrap(), map);
    }

    #[test]
    fn json_dump_round_trips() {
        let m = build_unit_square_tri_mesh(2).unwrap();
        let back = Mesh::from_json(&m.to_json()).unwrap();
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.n_cells(), m.n_cells());
        assert!(Mesh::from_json(r#"{"dimension":1,"vertices":[[0.0],[0.5]],"cells":[[0,1]]}"#).is_err());
        assert!(Mesh::from_json(r#"{"dimension":3,"vertices":[],"cells":[]}"#).is_err());
    }
}
