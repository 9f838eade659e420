//! Continuous P1/P2 Lagrange spaces on structured meshes.

mod assembly;
pub mod quadrature;
pub mod sparse;
mod transfer;

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

pub use assembly::{
    assemble_mass, assemble_pointwise_load, assemble_stiffness, discrete_laplacian, h1_seminorm_distance, l2_distance,
    l2_project, load_of_field, norm_l2, norm_lp, seminorm_h1,
};
pub use quadrature::QuadratureRule;
pub use sparse::{CholeskyFactor, SolverKind, SparsityPattern, SymSparseMatrix};
pub use transfer::{transfer_to_fine, Prolongation};

use crate::error::{invalid, Error, Result};
use crate::mesh::Mesh;

/// Real function of a point in the unit domain.
pub type Field = dyn Fn(&[f64; 2]) -> f64 + Send + Sync;

/// Tolerance used for iterative SPD solves.
pub const LINEAR_TOL: f64 = 1e-12;

#[derive(Debug)]
pub struct FeSpace {
    mesh: Arc<Mesh>,
    degree: usize,
    n_dofs: usize,
    dofs_per_cell: usize,
    cell_dofs: Vec<usize>,
    dof_coords: Vec<[f64; 2]>,
    quad: QuadratureRule,
    // Basis tables at quadrature points, indexed [q * dofs_per_cell + a].
    phi: Vec<f64>,
    grad_ref: Vec<[f64; 2]>,
    // Per cell: |det J| and J^{-T} (row-major).
    det: Vec<f64>,
    inv_t: Vec<[[f64; 2]; 2]>,
    qp_coords: Vec<[f64; 2]>,
    pattern: Arc<SparsityPattern>,
    // Per cell: value-array positions of the local element matrix.
    cell_entries: Vec<usize>,
    solver: SolverKind,
    mass: OnceLock<SymSparseMatrix>,
    stiffness: OnceLock<SymSparseMatrix>,
    mass_factor: OnceLock<Option<CholeskyFactor>>,
}

impl FeSpace {
    /// Degree-`degree` space with a quadrature exact for products of two
    /// basis functions.
    pub fn new(mesh: Arc<Mesh>, degree: usize) -> Result<Arc<Self>> {
        Self::with_quadrature_degree(mesh, degree, 2 * degree)
    }

    /// Quadrature sized for a polynomial drift of degree `q`: integrands up
    /// to degree `max(2r, r(q+1))` are integrated exactly.
    pub fn for_drift_degree(mesh: Arc<Mesh>, degree: usize, q: usize) -> Result<Arc<Self>> {
        Self::with_quadrature_degree(mesh, degree, (2 * degree).max(degree * (q + 1)))
    }

    pub fn with_quadrature_degree(mesh: Arc<Mesh>, degree: usize, quad_degree: usize) -> Result<Arc<Self>> {
        if !(1..=2).contains(&degree) {
            return Err(invalid(format!("polynomial degree {degree} not supported (use 1 or 2)")));
        }
        let dim = mesh.dimension();
        let quad = QuadratureRule::for_degree(dim, quad_degree.max(2 * degree));
        let (cell_dofs, dof_coords, dofs_per_cell) = number_dofs(&mesh, degree);
        let n_dofs = dof_coords.len();

        let nq = quad.len();
        let mut phi = vec![0.0; nq * dofs_per_cell];
        let mut grad_ref = vec![[0.0; 2]; nq * dofs_per_cell];
        for (q, p) in quad.points.iter().enumerate() {
            let r = q * dofs_per_cell..(q + 1) * dofs_per_cell;
            shape(dim, degree, *p, &mut phi[r.clone()], &mut grad_ref[r]);
        }

        let nc = mesh.n_cells();
        let mut det = Vec::with_capacity(nc);
        let mut inv_t = Vec::with_capacity(nc);
        let mut qp_coords = Vec::with_capacity(nc * nq);
        for c in 0..nc {
            let (x0, j) = mesh.cell_map(c);
            let d = j[0][0] * j[1][1] - j[1][0] * j[0][1];
            det.push(d.abs());
            // J = [[j00, j10], [j01, j11]] with columns j[0], j[1].
            inv_t.push([[j[1][1] / d, -j[0][1] / d], [-j[1][0] / d, j[0][0] / d]]);
            for p in &quad.points {
                qp_coords.push(map_point(x0, &j, *p, dim));
            }
        }

        let pattern = Arc::new(SparsityPattern::from_cells(n_dofs, &cell_dofs, dofs_per_cell));
        let mut cell_entries = Vec::with_capacity(nc * dofs_per_cell * dofs_per_cell);
        for cell in cell_dofs.chunks_exact(dofs_per_cell) {
            for &i in cell {
                for &j in cell {
                    cell_entries.push(pattern.find(i, j).expect("pattern covers cell couplings"));
                }
            }
        }

        Ok(Arc::new(FeSpace {
            solver: if dim == 1 { SolverKind::Cholesky } else { SolverKind::Pcg },
            mesh,
            degree,
            n_dofs,
            dofs_per_cell,
            cell_dofs,
            dof_coords,
            quad,
            phi,
            grad_ref,
            det,
            inv_t,
            qp_coords,
            pattern,
            cell_entries,
            mass: OnceLock::new(),
            stiffness: OnceLock::new(),
            mass_factor: OnceLock::new(),
        }))
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn dimension(&self) -> usize {
        self.mesh.dimension()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn dofs_per_cell(&self) -> usize {
        self.dofs_per_cell
    }

    pub fn cell_dofs(&self, c: usize) -> &[usize] {
        &self.cell_dofs[c * self.dofs_per_cell..(c + 1) * self.dofs_per_cell]
    }

    pub fn dof_coords(&self) -> &[[f64; 2]] {
        &self.dof_coords
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quad
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn solver_kind(&self) -> SolverKind {
        self.solver
    }

    /// Physical coordinates of all quadrature points, cell-major.
    pub fn quadrature_points(&self) -> &[[f64; 2]] {
        &self.qp_coords
    }

    /// Cached mass matrix.
    pub fn mass(&self) -> &SymSparseMatrix {
        self.mass.get_or_init(|| assembly::assemble_mass_uncached(self))
    }

    /// Cached stiffness matrix.
    pub fn stiffness(&self) -> &SymSparseMatrix {
        self.stiffness.get_or_init(|| assembly::assemble_stiffness_uncached(self))
    }

    /// Solve `M x = b` with the space's solver.
    pub fn solve_mass(&self, b: &[f64]) -> Result<Vec<f64>> {
        let factor = self.mass_factor.get_or_init(|| match self.solver {
            SolverKind::Cholesky => CholeskyFactor::new(self.mass()).ok(),
            SolverKind::Pcg => None,
        });
        match (self.solver, factor) {
            (SolverKind::Cholesky, Some(f)) => Ok(f.solve(b)),
            (SolverKind::Cholesky, None) => Err(Error::LinearSolveFailed("mass matrix factorization failed".into())),
            (SolverKind::Pcg, _) => sparse::solve_spd(self.mass(), b, SolverKind::Pcg, LINEAR_TOL),
        }
    }

    pub(crate) fn n_quad(&self) -> usize {
        self.quad.len()
    }

    pub(crate) fn jxw(&self, c: usize, q: usize) -> f64 {
        self.det[c] * self.quad.weights[q]
    }

    pub(crate) fn phi(&self, q: usize) -> &[f64] {
        &self.phi[q * self.dofs_per_cell..(q + 1) * self.dofs_per_cell]
    }

    pub(crate) fn grad(&self, c: usize, q: usize, a: usize) -> [f64; 2] {
        let g = self.grad_ref[q * self.dofs_per_cell + a];
        let m = &self.inv_t[c];
        [m[0][0] * g[0] + m[0][1] * g[1], m[1][0] * g[0] + m[1][1] * g[1]]
    }

    pub(crate) fn cell_entries(&self, c: usize) -> &[usize] {
        let k = self.dofs_per_cell * self.dofs_per_cell;
        &self.cell_entries[c * k..(c + 1) * k]
    }

    /// Values of the function with coefficients `coeffs` at every
    /// quadrature point, cell-major.
    pub fn values_at_quadrature(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.mesh.n_cells() * self.n_quad());
        self.values_at_quadrature_into(coeffs, &mut out);
        out
    }

    pub fn values_at_quadrature_into(&self, coeffs: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for c in 0..self.mesh.n_cells() {
            let dofs = self.cell_dofs(c);
            for q in 0..self.n_quad() {
                out.push(self.phi(q).iter().zip(dofs).map(|(p, &d)| p * coeffs[d]).sum());
            }
        }
    }

    /// Load vector `b_i = ∫ w φ_i` from integrand values `w` at the
    /// quadrature points.
    pub fn load_from_quadrature_values(&self, values: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.n_dofs];
        self.load_from_quadrature_values_into(values, &mut b);
        b
    }

    pub fn load_from_quadrature_values_into(&self, values: &[f64], b: &mut [f64]) {
        b.iter_mut().for_each(|x| *x = 0.0);
        let nq = self.n_quad();
        for c in 0..self.mesh.n_cells() {
            let dofs = self.cell_dofs(c);
            for q in 0..nq {
                let w = self.jxw(c, q) * values[c * nq + q];
                for (p, &d) in self.phi(q).iter().zip(dofs) {
                    b[d] += w * p;
                }
            }
        }
    }

    /// `∫ w` from values at the quadrature points.
    pub fn integrate_quadrature_values(&self, values: &[f64]) -> f64 {
        let nq = self.n_quad();
        let mut total = 0.0;
        for c in 0..self.mesh.n_cells() {
            let mut s = 0.0;
            for q in 0..nq {
                s += self.jxw(c, q) * values[c * nq + q];
            }
            total += s;
        }
        total
    }

    /// Matrix `A_ij = ∫ w φ_i φ_j` for weight values at quadrature points.
    pub fn weighted_mass(&self, weights: &[f64]) -> SymSparseMatrix {
        let mut m = SymSparseMatrix::zeros(Arc::clone(&self.pattern));
        self.weighted_mass_into(weights, &mut m);
        m
    }

    pub fn weighted_mass_into(&self, weights: &[f64], m: &mut SymSparseMatrix) {
        let nq = self.n_quad();
        let k = self.dofs_per_cell;
        let mut local = vec![0.0; k * k];
        m.values_mut().iter_mut().for_each(|x| *x = 0.0);
        for c in 0..self.mesh.n_cells() {
            local.iter_mut().for_each(|x| *x = 0.0);
            for q in 0..nq {
                let w = self.jxw(c, q) * weights[c * nq + q];
                let phi = self.phi(q);
                for a in 0..k {
                    let wa = w * phi[a];
                    for b in a..k {
                        local[a * k + b] += wa * phi[b];
                    }
                }
            }
            scatter_symmetric(&mut local, k, self.cell_entries(c), m.values_mut());
        }
    }
}

/// Add the upper triangle of `local` (mirrored) into the global values.
pub(crate) fn scatter_symmetric(local: &mut [f64], k: usize, entries: &[usize], values: &mut [f64]) {
    for a in 0..k {
        for b in 0..a {
            local[a * k + b] = local[b * k + a];
        }
    }
    for (pos, v) in entries.iter().zip(local.iter()) {
        values[*pos] += v;
    }
}

pub(crate) fn map_point(x0: [f64; 2], j: &[[f64; 2]; 2], xi: [f64; 2], dim: usize) -> [f64; 2] {
    if dim == 1 {
        [x0[0] + j[0][0] * xi[0], 0.0]
    } else {
        [x0[0] + j[0][0] * xi[0] + j[1][0] * xi[1], x0[1] + j[0][1] * xi[0] + j[1][1] * xi[1]]
    }
}

/// Reference-cell coordinates of `x` in cell `c` of `mesh`.
pub(crate) fn reference_coords(mesh: &Mesh, c: usize, x: [f64; 2]) -> [f64; 2] {
    let (x0, j) = mesh.cell_map(c);
    let dx = [x[0] - x0[0], x[1] - x0[1]];
    if mesh.dimension() == 1 {
        [dx[0] / j[0][0], 0.0]
    } else {
        let d = j[0][0] * j[1][1] - j[1][0] * j[0][1];
        [(j[1][1] * dx[0] - j[1][0] * dx[1]) / d, (-j[0][1] * dx[0] + j[0][0] * dx[1]) / d]
    }
}

/// Local edges of a triangle, in local dof order after the vertices.
const TRI_EDGES: [(usize, usize); 3] = [(0, 1), (1, 2), (2, 0)];

fn number_dofs(mesh: &Mesh, degree: usize) -> (Vec<usize>, Vec<[f64; 2]>, usize) {
    let dim = mesh.dimension();
    let nv = mesh.n_vertices();
    let nc = mesh.n_cells();
    if degree == 1 {
        let cells = (0..nc).flat_map(|c| mesh.cell(c).to_vec()).collect();
        return (cells, mesh.vertices().to_vec(), dim + 1);
    }
    let mut coords: Vec<[f64; 2]> = mesh.vertices().to_vec();
    let mut cells = Vec::new();
    if dim == 1 {
        for c in 0..nc {
            let v = mesh.cell(c);
            let (a, b) = (mesh.vertex(v[0]), mesh.vertex(v[1]));
            coords.push([0.5 * (a[0] + b[0]), 0.0]);
            cells.extend_from_slice(&[v[0], v[1], nv + c]);
        }
        // Number along the line so the matrices stay banded.
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by(|&a, &b| coords[a][0].total_cmp(&coords[b][0]));
        let mut new_index = vec![0; coords.len()];
        for (k, &old) in order.iter().enumerate() {
            new_index[old] = k;
        }
        let sorted = order.iter().map(|&i| coords[i]).collect();
        let cells = cells.into_iter().map(|d| new_index[d]).collect();
        return (cells, sorted, 3);
    }
    let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
    for c in 0..nc {
        let v = mesh.cell(c);
        let mut local = [v[0], v[1], v[2], 0, 0, 0];
        for (e, &(i, j)) in TRI_EDGES.iter().enumerate() {
            let key = (v[i].min(v[j]), v[i].max(v[j]));
            local[3 + e] = *edges.entry(key).or_insert_with(|| {
                let (p, q) = (mesh.vertex(v[i]), mesh.vertex(v[j]));
                coords.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                coords.len() - 1
            });
        }
        cells.extend_from_slice(&local);
    }
    (cells, coords, 6)
}

/// Lagrange basis values and reference gradients at `xi`. Local order:
/// vertices, then edge (2D) or interval (1D) midpoints.
pub(crate) fn shape(dim: usize, degree: usize, xi: [f64; 2], val: &mut [f64], grad: &mut [[f64; 2]]) {
    let (lam, dlam): (Vec<f64>, Vec<[f64; 2]>) = if dim == 1 {
        (vec![1.0 - xi[0], xi[0]], vec![[-1.0, 0.0], [1.0, 0.0]])
    } else {
        (vec![1.0 - xi[0] - xi[1], xi[0], xi[1]], vec![[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    };
    let nv = dim + 1;
    if degree == 1 {
        val[..nv].copy_from_slice(&lam);
        grad[..nv].copy_from_slice(&dlam);
        return;
    }
    for i in 0..nv {
        val[i] = lam[i] * (2.0 * lam[i] - 1.0);
        let s = 4.0 * lam[i] - 1.0;
        grad[i] = [s * dlam[i][0], s * dlam[i][1]];
    }
    let edges: &[(usize, usize)] = if dim == 1 { &[(0, 1)] } else { &TRI_EDGES };
    for (e, &(i, j)) in edges.iter().enumerate() {
        val[nv + e] = 4.0 * lam[i] * lam[j];
        grad[nv + e] = [4.0 * (lam[j] * dlam[i][0] + lam[i] * dlam[j][0]), 4.0 * (lam[j] * dlam[i][1] + lam[i] * dlam[j][1])];
    }
}

/// A coefficient vector in a finite element space.
#[derive(Debug, Clone)]
pub struct FeFunction {
    space: Arc<FeSpace>,
    coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn zeros(space: &Arc<FeSpace>) -> Self {
        FeFunction { space: Arc::clone(space), coeffs: vec![0.0; space.n_dofs()] }
    }

    pub fn from_coeffs(space: &Arc<FeSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.n_dofs() {
            return Err(invalid(format!("{} coefficients for a space with {} dofs", coeffs.len(), space.n_dofs())));
        }
        Ok(FeFunction { space: Arc::clone(space), coeffs })
    }

    /// Nodal interpolant of `field`.
    pub fn interpolate(space: &Arc<FeSpace>, field: &Field) -> Self {
        let coeffs = space.dof_coords().iter().map(|x| field(x)).collect();
        FeFunction { space: Arc::clone(space), coeffs }
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Point evaluation inside cell `c`.
    pub fn eval_in_cell(&self, c: usize, x: [f64; 2]) -> f64 {
        let sp = &self.space;
        let xi = reference_coords(sp.mesh(), c, x);
        let k = sp.dofs_per_cell();
        let mut val = [0.0; 6];
        let mut grad = [[0.0; 2]; 6];
        shape(sp.dimension(), sp.degree(), xi, &mut val[..k], &mut grad[..k]);
        sp.cell_dofs(c).iter().zip(&val[..k]).map(|(&d, v)| v * self.coeffs[d]).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_interval_mesh, build_unit_square_tri_mesh};

    #[test]
    fn partition_of_unity_at_quadrature_points() {
        for (mesh, r) in [
            (build_interval_mesh(3).unwrap(), 1),
            (build_interval_mesh(3).unwrap(), 2),
            (build_unit_square_tri_mesh(2).unwrap(), 1),
            (build_unit_square_tri_mesh(2).unwrap(), 2),
        ] {
            let sp = FeSpace::new(Arc::new(mesh), r).unwrap();
            for q in 0..sp.n_quad() {
                assert!((sp.phi(q).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for c in 0..sp.mesh().n_cells() {
                    let g = (0..sp.dofs_per_cell()).fold([0.0, 0.0], |s, a| {
                        let ga = sp.grad(c, q, a);
                        [s[0] + ga[0], s[1] + ga[1]]
                    });
                    assert!(g[0].abs() < 1e-10 && g[1].abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn dof_counts() {
        let m1 = Arc::new(build_interval_mesh(4).unwrap());
        assert_eq!(FeSpace::new(Arc::clone(&m1), 1).unwrap().n_dofs(), 5);
        let p2 = FeSpace::new(m1, 2).unwrap();
        assert_eq!(p2.n_dofs(), 9);
        assert!(p2.dof_coords().windows(2).all(|w| w[0][0] < w[1][0]));
        let m2 = Arc::new(build_unit_square_tri_mesh(2).unwrap());
        assert_eq!(FeSpace::new(Arc::clone(&m2), 1).unwrap().n_dofs(), 9);
        assert_eq!(FeSpace::new(m2, 2).unwrap().n_dofs(), 25);
    }

    #[test]
    fn lagrange_property_at_nodes() {
        for dim in 1..=2 {
            for r in 1..=2 {
                let nodes: Vec<[f64; 2]> = match (dim, r) {
                    (1, 1) => vec![[0.0, 0.0], [1.0, 0.0]],
                    (1, _) => vec![[0.0, 0.0], [1.0, 0.0], [0.5, 0.0]],
                    (_, 1) => vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
                    _ => vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]],
                };
                let k = nodes.len();
                let mut val = vec![0.0; k];
                let mut grad = vec![[0.0; 2]; k];
                for (i, p) in nodes.iter().enumerate() {
                    shape(dim, r, *p, &mut val, &mut grad);
                    for (j, v) in val.iter().enumerate() {
                        assert_eq!(*v, if i == j { 1.0 } else { 0.0 }, "dim {dim} r {r} node {i} basis {j}");
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_unsupported_degree_and_bad_lengths() {
        let m = Arc::new(build_interval_mesh(2).unwrap());
        assert!(FeSpace::new(Arc::clone(&m), 3).is_err());
        let sp = FeSpace::new(m, 1).unwrap();
        assert!(FeFunction::from_coeffs(&sp, vec![0.0; 2]).is_err());
    }
}
