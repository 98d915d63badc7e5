//! Exact conditional expectations on finite product spaces.

use crate::error::{LabError, Result};
use crate::functionals::TestFunction;
use crate::measures::{ProductMeasure, PRODUCT_ATOM_LIMIT};

use super::candidate::PhiCandidate;

/// Largest factor count accepted by the alternating-sum enumeration.
pub const CN_MAX_FACTORS: usize = 12;

/// Atom grid of a discrete product; the last coordinate varies fastest.
#[derive(Debug, Clone)]
pub struct ProductGrid {
    sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    points: Vec<Vec<f64>>,
    len: usize,
}

impl ProductGrid {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(LabError::domain("product grid needs matching nonempty factor lists"));
        }
        let sizes: Vec<usize> = weights.iter().map(Vec::len).collect();
        if sizes.contains(&0) || points.iter().zip(&sizes).any(|(p, &s)| p.len() != s) {
            return Err(LabError::domain("product grid factor lists are inconsistent"));
        }
        let len = sizes
            .iter()
            .try_fold(1usize, |acc, &s| acc.checked_mul(s))
            .unwrap_or(usize::MAX);
        if len > PRODUCT_ATOM_LIMIT {
            return Err(LabError::Size {
                what: "discrete product grid",
                requested: len,
                limit: PRODUCT_ATOM_LIMIT,
            });
        }
        Ok(ProductGrid {
            sizes,
            weights,
            points,
            len,
        })
    }

    pub fn from_product(pm: &ProductMeasure) -> Result<Self> {
        let factors = pm.discrete_factors()?;
        Self::new(
            factors.iter().map(|d| d.points().iter().map(|p| p[0]).collect()).collect(),
            factors.iter().map(|d| d.weights().to_vec()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn factors(&self) -> usize {
        self.sizes.len()
    }

    fn decode(&self, mut flat: usize, idx: &mut [usize]) {
        for k in (0..self.sizes.len()).rev() {
            idx[k] = flat % self.sizes[k];
            flat /= self.sizes[k];
        }
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut idx = vec![0; self.factors()];
        self.decode(flat, &mut idx);
        idx.iter().enumerate().map(|(k, &i)| self.points[k][i]).collect()
    }

    /// Evaluates `f` on every atom.
    pub fn tabulate(&self, f: &TestFunction) -> Vec<f64> {
        (0..self.len).map(|i| f.eval(&self.point(i))).collect()
    }

    /// Integrates the coordinates in `mask` out of `values` (stride `dim`).
    /// Returns the reduced values, indexed by the remaining coordinates, and
    /// the probability of each remaining cell.
    pub fn condition(&self, values: &[f64], dim: usize, mask: u32) -> (Vec<f64>, Vec<f64>) {
        let n = self.factors();
        let mut stride = vec![0usize; n];
        let mut cells = 1usize;
        for k in (0..n).rev() {
            if mask & (1 << k) == 0 {
                stride[k] = cells;
                cells *= self.sizes[k];
            }
        }
        let mut acc = vec![0.0; cells * dim];
        let mut cell_w = vec![0.0; cells];
        let mut idx = vec![0usize; n];
        for flat in 0..self.len {
            self.decode(flat, &mut idx);
            let mut wk = 1.0;
            let mut wc = 1.0;
            let mut r = 0;
            for k in 0..n {
                let w = self.weights[k][idx[k]];
                if mask & (1 << k) != 0 {
                    wk *= w;
                } else {
                    wc *= w;
                    r += idx[k] * stride[k];
                }
            }
            for j in 0..dim {
                acc[r * dim + j] += wk * values[flat * dim + j];
            }
            cell_w[r] = wc;
        }
        (acc, cell_w)
    }

    /// `Ψ_φ(Z)` and `Σ_k E[E_k φ(Z) − φ(E_k Z)]`, with a rounding scale.
    pub(crate) fn subadditivity(&self, phi: &PhiCandidate, z: &[f64]) -> (f64, f64, f64) {
        let all = (1u32 << self.factors()) - 1;
        let phi_z: Vec<f64> = z.iter().map(|&v| phi.eval(v)).collect();
        let (e_phi, _) = self.condition(&phi_z, 1, all);
        let (e_z, _) = self.condition(z, 1, all);
        let lhs = e_phi[0] - phi.eval(e_z[0]);
        let mut scale = e_phi[0].abs() + phi.eval(e_z[0]).abs();
        let mut rhs = 0.0;
        for k in 0..self.factors() {
            let (cp, w) = self.condition(&phi_z, 1, 1 << k);
            let (cz, _) = self.condition(z, 1, 1 << k);
            for r in 0..w.len() {
                let fz = phi.eval(cz[r]);
                rhs += w[r] * (cp[r] - fz);
                scale += w[r] * (cp[r].abs() + fz.abs());
            }
        }
        (lhs, rhs, scale)
    }

    /// `Σ_K (−1)^{|K|} E_{K^c} f(E_K Z)` with the sum of term magnitudes.
    pub(crate) fn alternating_sum<F>(&self, f: F, z: &[f64], dim: usize) -> Result<(f64, f64)>
    where
        F: Fn(&[f64]) -> f64,
    {
        let n = self.factors();
        if n > CN_MAX_FACTORS {
            return Err(LabError::Size {
                what: "alternating subset sum factors",
                requested: n,
                limit: CN_MAX_FACTORS,
            });
        }
        let mut total = 0.0;
        let mut scale = 0.0;
        for mask in 0..(1u32 << n) {
            let (cz, w) = self.condition(z, dim, mask);
            let mut term = 0.0;
            for r in 0..w.len() {
                term += w[r] * f(&cz[r * dim..(r + 1) * dim]);
            }
            let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            total += sign * term;
            scale += term.abs();
        }
        Ok((total, scale))
    }
}

/// Both sides of `E φ(Z) − φ(E Z) ≤ Σ_k E[E_k φ(Z) − φ(E_k Z)]`.
pub fn subadditivity_margin(pm: &ProductMeasure, z: &TestFunction, c: &PhiCandidate) -> Result<(f64, f64)> {
    let grid = ProductGrid::from_product(pm)?;
    let values = grid.tabulate(z);
    if values.iter().any(|v| *v < 0.0) {
        return Err(LabError::domain("Z must be nonnegative on the product grid"));
    }
    let (lhs, rhs, _) = grid.subadditivity(c, &values);
    Ok((lhs, rhs))
}

/// Both sides of `Var_p(f) ≤ Σ_k E Var_p^{(k)}(f)`.
pub fn var_p_subadditivity(pm: &ProductMeasure, f: &TestFunction, p: f64) -> Result<(f64, f64)> {
    if !(1.0..=2.0).contains(&p) {
        return Err(LabError::domain(format!("p = {p} outside [1, 2]")));
    }
    let grid = ProductGrid::from_product(pm)?;
    let values = grid.tabulate(f);
    if values.iter().any(|v| *v < 0.0) {
        return Err(LabError::domain("f must be nonnegative on the product grid"));
    }
    let z: Vec<f64> = values.iter().map(|v| v.powf(p)).collect();
    let (lhs, rhs, _) = grid.subadditivity(&PhiCandidate::power(2.0 / p), &z);
    Ok((lhs, rhs))
}

/// `Σ_{K ⊆ {1..n}} (−1)^{|K|} E_{K^c} f(E_K Z)` for `Z` with values in `R^dim`.
pub fn cn_alternating_sum<F, Z>(f: F, pm: &ProductMeasure, dim: usize, z: Z) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
    Z: Fn(&[f64]) -> Vec<f64>,
{
    if pm.dim() > CN_MAX_FACTORS {
        return Err(LabError::Size {
            what: "alternating subset sum factors",
            requested: pm.dim(),
            limit: CN_MAX_FACTORS,
        });
    }
    let grid = ProductGrid::from_product(pm)?;
    let mut values = Vec::with_capacity(grid.len() * dim);
    for i in 0..grid.len() {
        let v = z(&grid.point(i));
        if v.len() != dim {
            return Err(LabError::domain(format!("Z returned {} components, expected {dim}", v.len())));
        }
        values.extend(v);
    }
    Ok(grid.alternating_sum(f, &values, dim)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{product, DiscreteMeasure, Measure};

    fn tp_product(n: usize) -> ProductMeasure {
        let tp: Measure = DiscreteMeasure::two_point(0.3).unwrap().into();
        product(vec![tp; n]).unwrap()
    }

    #[test]
    fn single_factor_is_equality() {
        let pm = tp_product(1);
        let z = TestFunction::without_gradient("z", 1, |x| 2.0 + x[0]);
        let (l, r) = subadditivity_margin(&pm, &z, &PhiCandidate::power(1.5)).unwrap();
        assert_eq!(l, r);
    }

    #[test]
    fn affine_phi_gives_zero() {
        let pm = tp_product(2);
        let z = TestFunction::without_gradient("z", 2, |x| 2.0 + x[0] * x[1]);
        let (l, r) = subadditivity_margin(&pm, &z, &PhiCandidate::affine(2.0, 1.0)).unwrap();
        assert!(l.abs() < 1e-15 && r.abs() < 1e-15);
    }

    #[test]
    fn var_p_one_coordinate() {
        let pm = tp_product(3);
        let f = TestFunction::without_gradient("f", 3, |x| 2.0 + x[1]);
        let (l, r) = var_p_subadditivity(&pm, &f, 1.7).unwrap();
        assert!((l - r).abs() < 1e-14, "{l} {r}");
        let c = TestFunction::constant(1.5, 3);
        let (l, r) = var_p_subadditivity(&pm, &c, 1.7).unwrap();
        assert!(l.abs() < 1e-15 && r.abs() < 1e-15);
    }

    #[test]
    fn conditioning_removes_mass_correctly() {
        let pm = tp_product(2);
        let grid = ProductGrid::from_product(&pm).unwrap();
        let vals = grid.tabulate(&TestFunction::without_gradient("x1+x2", 2, |x| x[0] + x[1]));
        // integrate out the first coordinate: E x1 = 0.3 - 0.7 = -0.4
        let (c, w) = grid.condition(&vals, 1, 0b01);
        assert_eq!(w.len(), 2);
        assert!((c[0] - (-0.4 - 1.0)).abs() < 1e-15 && (c[1] - (-0.4 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn n_one_convex_is_jensen_gap() {
        let pm = tp_product(1);
        let s = cn_alternating_sum(|v| v[0] * v[0], &pm, 1, |x| vec![x[0] + 3.0]).unwrap();
        // Var of x under the two-point law: 1 - 0.16
        assert!((s - 0.84).abs() < 1e-14, "{s}");
    }

    #[test]
    fn too_many_factors() {
        let pm = tp_product(13);
        let err = cn_alternating_sum(|v| v[0], &pm, 1, |x| vec![x[0]]).unwrap_err();
        assert!(matches!(err, LabError::Size { .. }));
    }
}
