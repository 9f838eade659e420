use std::sync::Arc;

use super::{reference_coords, shape, FeFunction, FeSpace};
use crate::error::{invalid, Result};

/// Exact injection of a coarse space into a nested fine space of the same
/// degree, stored row-wise as (coarse dof, weight) lists.
#[derive(Debug, Clone)]
pub struct Prolongation {
    coarse_dofs: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl Prolongation {
    pub fn new(coarse: &FeSpace, fine: &FeSpace) -> Result<Self> {
        if coarse.degree() != fine.degree() {
            return Err(invalid("transfer requires equal polynomial degrees"));
        }
        let map = fine
            .mesh()
            .ancestor_cell_map(coarse.mesh())
            .ok_or_else(|| invalid("fine mesh does not descend from the coarse mesh"))?;
        let k = coarse.dofs_per_cell();
        let mut rows: Vec<Option<Vec<(usize, f64)>>> = vec![None; fine.n_dofs()];
        let mut val = [0.0; 6];
        let mut grad = [[0.0; 2]; 6];
        for (c, &pc) in map.iter().enumerate() {
            for &d in fine.cell_dofs(c) {
                if rows[d].is_some() {
                    continue;
                }
                let xi = reference_coords(coarse.mesh(), pc, fine.dof_coords()[d]);
                shape(coarse.dimension(), coarse.degree(), xi, &mut val[..k], &mut grad[..k]);
                let row = coarse.cell_dofs(pc).iter().zip(&val[..k]).filter(|(_, w)| **w != 0.0).map(|(&j, &w)| (j, w)).collect();
                rows[d] = Some(row);
            }
        }
        Ok(Prolongation {
            coarse_dofs: coarse.n_dofs(),
            rows: rows.into_iter().map(|r| r.expect("every fine dof lies in a cell")).collect(),
        })
    }

    pub fn apply(&self, coarse: &[f64]) -> Vec<f64> {
        assert_eq!(coarse.len(), self.coarse_dofs);
        self.rows.iter().map(|row| row.iter().map(|&(j, w)| w * coarse[j]).sum()).collect()
    }
}

/// Represent `u` exactly on the nested space `fine`.
pub fn transfer_to_fine(u: &FeFunction, fine: &Arc<FeSpace>) -> Result<FeFunction> {
    let p = Prolongation::new(u.space(), fine)?;
    FeFunction::from_coeffs(fine, p.apply(u.coeffs()))
}
