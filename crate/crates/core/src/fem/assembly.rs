use std::sync::Arc;

use super::{map_point, scatter_symmetric, shape, FeFunction, FeSpace, Field, QuadratureRule, SymSparseMatrix};
use crate::error::{invalid, Result};

/// `M_ij = ∫ φ_i φ_j`.
pub fn assemble_mass(space: &FeSpace) -> SymSparseMatrix {
    space.mass().clone()
}

/// `K_ij = ∫ ∇φ_i · ∇φ_j`.
pub fn assemble_stiffness(space: &FeSpace) -> SymSparseMatrix {
    space.stiffness().clone()
}

pub(super) fn assemble_mass_uncached(space: &FeSpace) -> SymSparseMatrix {
    let ones = vec![1.0; space.mesh().n_cells() * space.n_quad()];
    space.weighted_mass(&ones)
}

pub(super) fn assemble_stiffness_uncached(space: &FeSpace) -> SymSparseMatrix {
    let k = space.dofs_per_cell();
    let mut m = SymSparseMatrix::zeros(Arc::clone(space.pattern()));
    let mut local = vec![0.0; k * k];
    let mut grads = vec![[0.0; 2]; k];
    for c in 0..space.mesh().n_cells() {
        local.iter_mut().for_each(|x| *x = 0.0);
        for q in 0..space.n_quad() {
            let w = space.jxw(c, q);
            for (a, g) in grads.iter_mut().enumerate() {
                *g = space.grad(c, q, a);
            }
            for a in 0..k {
                for b in a..k {
                    local[a * k + b] += w * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
                }
            }
        }
        scatter_symmetric(&mut local, k, space.cell_entries(c), m.values_mut());
    }
    m
}

/// `b_i = ∫ φ(u_1(x), …, u_m(x)) φ_i(x) dx` for a pointwise map `φ` of the
/// state values.
pub fn assemble_pointwise_load(space: &FeSpace, map: impl Fn(&[f64]) -> f64, states: &[&FeFunction]) -> Result<Vec<f64>> {
    for s in states {
        if s.coeffs().len() != space.n_dofs() {
            return Err(invalid("state does not belong to the space"));
        }
    }
    let at_qp: Vec<Vec<f64>> = states.iter().map(|s| space.values_at_quadrature(s.coeffs())).collect();
    let n = space.mesh().n_cells() * space.n_quad();
    let mut args = vec![0.0; states.len()];
    let values: Vec<f64> = (0..n)
        .map(|k| {
            for (a, v) in args.iter_mut().zip(&at_qp) {
                *a = v[k];
            }
            map(&args)
        })
        .collect();
    Ok(space.load_from_quadrature_values(&values))
}

/// L² projection: solve `M c = (field, φ_i)`.
pub fn l2_project(space: &Arc<FeSpace>, field: &Field) -> Result<FeFunction> {
    let b = load_of_field(space, field);
    let c = space.solve_mass(&b)?;
    FeFunction::from_coeffs(space, c)
}

/// `(field, φ_i)` with a rule six degrees above the space's own, so smooth
/// data is integrated well beyond the discretization error.
pub fn load_of_field(space: &FeSpace, field: &Field) -> Vec<f64> {
    let mesh = space.mesh();
    let dim = mesh.dimension();
    let rule = QuadratureRule::for_degree(dim, space.quadrature().degree + 6);
    let k = space.dofs_per_cell();
    let (mut val, mut grad) = (vec![0.0; k], vec![[0.0; 2]; k]);
    let ref_measure = if dim == 1 { 1.0 } else { 0.5 };
    let mut b = vec![0.0; space.n_dofs()];
    for c in 0..mesh.n_cells() {
        let (x0, j) = mesh.cell_map(c);
        let scale = mesh.cell_measure(c) / ref_measure;
        let dofs = space.cell_dofs(c);
        for (xi, w) in rule.points.iter().zip(&rule.weights) {
            shape(dim, space.degree(), *xi, &mut val, &mut grad);
            let fx = field(&map_point(x0, &j, *xi, dim)) * w * scale;
            for (d, v) in dofs.iter().zip(&val) {
                b[*d] += fx * v;
            }
        }
    }
    b
}

/// `Δ_h z`, defined by `(Δ_h z, w) = −(∇z, ∇w)` for all `w` in the space.
pub fn discrete_laplacian(space: &Arc<FeSpace>, z: &FeFunction) -> Result<FeFunction> {
    let mut rhs = space.stiffness().mul_vec(z.coeffs());
    rhs.iter_mut().for_each(|x| *x = -*x);
    FeFunction::from_coeffs(space, space.solve_mass(&rhs)?)
}

pub fn norm_l2(space: &FeSpace, u: &FeFunction) -> f64 {
    norm_lp(space, u, 2.0)
}

pub fn norm_lp(space: &FeSpace, u: &FeFunction, p: f64) -> f64 {
    assert!(p >= 1.0, "p must be at least 1");
    let vals = space.values_at_quadrature(u.coeffs());
    let pw: Vec<f64> = vals.iter().map(|v| v.abs().powf(p)).collect();
    space.integrate_quadrature_values(&pw).powf(1.0 / p)
}

/// `‖∇u‖_{L²}`.
pub fn seminorm_h1(space: &FeSpace, u: &FeFunction) -> f64 {
    let mut total = 0.0;
    for c in 0..space.mesh().n_cells() {
        let dofs = space.cell_dofs(c);
        for q in 0..space.n_quad() {
            let mut g = [0.0; 2];
            for (a, &d) in dofs.iter().enumerate() {
                let ga = space.grad(c, q, a);
                g[0] += ga[0] * u.coeffs()[d];
                g[1] += ga[1] * u.coeffs()[d];
            }
            total += space.jxw(c, q) * (g[0] * g[0] + g[1] * g[1]);
        }
    }
    total.sqrt()
}

/// Visit the points of a rule six degrees above the space's own, with
/// physical point, weight, shape values and physical shape gradients.
fn for_each_fine_point(space: &FeSpace, mut visit: impl FnMut(usize, [f64; 2], f64, &[f64], &[[f64; 2]])) {
    let mesh = space.mesh();
    let dim = mesh.dimension();
    let rule = QuadratureRule::for_degree(dim, space.quadrature().degree + 6);
    let k = space.dofs_per_cell();
    let (mut val, mut grad_ref, mut grad) = (vec![0.0; k], vec![[0.0; 2]; k], vec![[0.0; 2]; k]);
    let ref_measure = if dim == 1 { 1.0 } else { 0.5 };
    for c in 0..mesh.n_cells() {
        let (x0, j) = mesh.cell_map(c);
        let scale = mesh.cell_measure(c) / ref_measure;
        // J = [j[0] j[1]] as columns; J^{-T} maps reference to physical gradients.
        let det = j[0][0] * j[1][1] - j[1][0] * j[0][1];
        for (xi, w) in rule.points.iter().zip(&rule.weights) {
            shape(dim, space.degree(), *xi, &mut val, &mut grad_ref);
            for (g, r) in grad.iter_mut().zip(&grad_ref) {
                *g = if dim == 1 {
                    [r[0] / j[0][0], 0.0]
                } else {
                    [(j[1][1] * r[0] - j[0][1] * r[1]) / det, (-j[1][0] * r[0] + j[0][0] * r[1]) / det]
                };
            }
            visit(c, map_point(x0, &j, *xi, dim), w * scale, &val, &grad);
        }
    }
}

/// `‖u − field‖_{L²}`, integrated six degrees above the space's rule.
pub fn l2_distance(space: &FeSpace, u: &FeFunction, field: &Field) -> f64 {
    let mut total = 0.0;
    for_each_fine_point(space, |c, x, w, val, _| {
        let uh: f64 = space.cell_dofs(c).iter().zip(val).map(|(&d, v)| v * u.coeffs()[d]).sum();
        total += w * (uh - field(&x)).powi(2);
    });
    total.sqrt()
}

/// `‖∇u − grad‖_{L²}`, integrated six degrees above the space's rule.
pub fn h1_seminorm_distance(space: &FeSpace, u: &FeFunction, grad: &(dyn Fn(&[f64; 2]) -> [f64; 2] + Sync)) -> f64 {
    let mut total = 0.0;
    for_each_fine_point(space, |c, x, w, _, grads| {
        let mut g = [0.0; 2];
        for (&d, ga) in space.cell_dofs(c).iter().zip(grads) {
            g[0] += ga[0] * u.coeffs()[d];
            g[1] += ga[1] * u.coeffs()[d];
        }
        let e = grad(&x);
        total += w * ((g[0] - e[0]).powi(2) + (g[1] - e[1]).powi(2));
    });
    total.sqrt()
}
