//! Tensor-product discretization of the fixed reference domain
//! Omega = (0, L) x S: trigonometric interpolation on n1 periodic planes in
//! x1, P1 finite elements on the cross-section. The thickness h never enters
//! the grid itself, only the operators evaluated on it.

use crate::error::{Error, Result};
use crate::fem2d::{self, Csr};
use crate::geometry::CrossSectionMesh;
use nalgebra::{DMatrix, Matrix3, Vector3};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub const TAU: f64 = 2.0 * std::f64::consts::PI;

/// Displacement-type field on the rod grid: 3 components per (plane, node).
#[derive(Debug, Clone, PartialEq)]
pub struct RodField {
    pub n1: usize,
    pub n_nodes: usize,
    pub data: Vec<f64>,
}

impl RodField {
    pub fn zeros(n1: usize, n_nodes: usize) -> Self {
        RodField {
            n1,
            n_nodes,
            data: vec![0.0; n1 * n_nodes * 3],
        }
    }

    #[inline]
    pub fn idx(&self, plane: usize, node: usize, comp: usize) -> usize {
        (plane * self.n_nodes + node) * 3 + comp
    }

    #[inline]
    pub fn get(&self, plane: usize, node: usize, comp: usize) -> f64 {
        self.data[(plane * self.n_nodes + node) * 3 + comp]
    }

    #[inline]
    pub fn set(&mut self, plane: usize, node: usize, comp: usize, v: f64) {
        self.data[(plane * self.n_nodes + node) * 3 + comp] = v;
    }

    pub fn axpy(&mut self, alpha: f64, other: &RodField) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scaled(&self, alpha: f64) -> RodField {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v *= alpha;
        }
        out
    }

    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Matrix-valued data at the quadrature points of the grid
/// (plane x triangle x quadrature node).
#[derive(Debug, Clone)]
pub struct QuadMatrixField {
    pub n1: usize,
    pub n_tris: usize,
    pub nq: usize,
    pub data: Vec<Matrix3<f64>>,
}

impl QuadMatrixField {
    pub fn zeros(n1: usize, n_tris: usize, nq: usize) -> Self {
        QuadMatrixField {
            n1,
            n_tris,
            nq,
            data: vec![Matrix3::zeros(); n1 * n_tris * nq],
        }
    }

    #[inline]
    pub fn idx(&self, plane: usize, tri: usize, q: usize) -> usize {
        (plane * self.n_tris + tri) * self.nq + q
    }

    #[inline]
    pub fn get(&self, plane: usize, tri: usize, q: usize) -> &Matrix3<f64> {
        &self.data[(plane * self.n_tris + tri) * self.nq + q]
    }
}

/// Grid over the reference rod domain with the assembled section operators.
pub struct RodGrid {
    pub n1: usize,
    pub l: f64,
    pub section: CrossSectionMesh,
    pub section_mass: Csr,
    /// Nodal weights of the section mean functional.
    pub section_mean: Vec<f64>,
    /// Nodal weights of the section moment functionals (phi_i, x2), (phi_i, x3).
    pub weight_x2: Vec<f64>,
    pub weight_x3: Vec<f64>,
    /// P1 mass matrix of the section boundary (edge integrals).
    pub boundary_mass: Csr,
    mass_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    interior: Vec<usize>,
    interior_mass_chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for RodGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RodGrid")
            .field("n1", &self.n1)
            .field("l", &self.l)
            .field("n_nodes", &self.section.n_nodes())
            .finish()
    }
}

/// Build the grid operators. n1 must be even and at least 4 (real FFT
/// symmetry of the periodic direction).
pub fn assemble_grid(section: CrossSectionMesh, l: f64, n1: usize) -> Result<RodGrid> {
    if n1 < 4 || n1 % 2 != 0 {
        return Err(Error::invalid(format!(
            "n1 = {n1} rejected: need an even plane count >= 4"
        )));
    }
    if l <= 0.0 {
        return Err(Error::invalid("rod length must be positive"));
    }
    let section_mass = fem2d::mass_matrix(&section);
    let section_mean = fem2d::mean_weights(&section);
    let weight_x2 = fem2d::load_vector(&section, |x| x[0]);
    let weight_x3 = fem2d::load_vector(&section, |x| x[1]);
    let boundary_mass = {
        let n = section.n_nodes();
        let mut trip = Vec::new();
        for e in &section.boundary_edges {
            let len = e.length;
            // exact P1 edge mass: len/3 diagonal, len/6 off-diagonal
            trip.push((e.nodes[0], e.nodes[0], len / 3.0));
            trip.push((e.nodes[1], e.nodes[1], len / 3.0));
            trip.push((e.nodes[0], e.nodes[1], len / 6.0));
            trip.push((e.nodes[1], e.nodes[0], len / 6.0));
        }
        Csr::from_triplets(n, n, &mut trip)
    };
    let n = section.n_nodes();
    let mut dense = DMatrix::<f64>::zeros(n, n);
    for r in 0..n {
        for k in section_mass.row_ptr[r]..section_mass.row_ptr[r + 1] {
            dense[(r, section_mass.col_idx[k])] += section_mass.values[k];
        }
    }
    let interior = section.interior_nodes();
    let mut int_dense = DMatrix::<f64>::zeros(interior.len(), interior.len());
    for (ri, &i) in interior.iter().enumerate() {
        for (rj, &j) in interior.iter().enumerate() {
            int_dense[(ri, rj)] = dense[(i, j)];
        }
    }
    let mass_chol = nalgebra::Cholesky::new(dense)
        .ok_or_else(|| Error::invalid("section mass matrix not positive definite"))?;
    let interior_mass_chol = nalgebra::Cholesky::new(int_dense);
    let mut planner = FftPlanner::new();
    let fft_fwd = planner.plan_fft_forward(n1);
    let fft_inv = planner.plan_fft_inverse(n1);
    Ok(RodGrid {
        n1,
        l,
        section,
        section_mass,
        section_mean,
        weight_x2,
        weight_x3,
        boundary_mass,
        mass_chol,
        interior,
        interior_mass_chol,
        fft_fwd,
        fft_inv,
    })
}

impl RodGrid {
    pub fn n_nodes(&self) -> usize {
        self.section.n_nodes()
    }

    pub fn n_dofs(&self) -> usize {
        self.n1 * self.n_nodes() * 3
    }

    pub fn plane_x1(&self, p: usize) -> f64 {
        self.l * p as f64 / self.n1 as f64
    }

    /// Signed wavenumber multiplier 2 pi k / L of FFT bin k.
    pub fn wavenumber(&self, bin: usize) -> f64 {
        let k = if bin <= self.n1 / 2 {
            bin as isize
        } else {
            bin as isize - self.n1 as isize
        };
        TAU * k as f64 / self.l
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    /// Forward DFT over planes with 1/n1 normalization, per (node, comp):
    /// coefficients of e^{i 2 pi k p / n1}.
    pub fn to_modes(&self, u: &RodField) -> Vec<Complex64> {
        let n = self.n_nodes();
        let n1 = self.n1;
        let mut out = vec![Complex64::ZERO; n1 * n * 3];
        let mut buf = vec![Complex64::ZERO; n1];
        for i in 0..n {
            for c in 0..3 {
                for p in 0..n1 {
                    buf[p] = Complex64::new(u.get(p, i, c), 0.0);
                }
                self.fft_fwd.process(&mut buf);
                for k in 0..n1 {
                    // rustfft forward computes sum_p f_p e^{-i 2 pi k p / n1}
                    out[(k * n + i) * 3 + c] = buf[k] / n1 as f64;
                }
            }
        }
        out
    }

    pub fn from_modes(&self, modes: &[Complex64]) -> RodField {
        let n = self.n_nodes();
        let n1 = self.n1;
        let mut out = RodField::zeros(n1, n);
        let mut buf = vec![Complex64::ZERO; n1];
        for i in 0..n {
            for c in 0..3 {
                for k in 0..n1 {
                    buf[k] = modes[(k * n + i) * 3 + c];
                }
                self.fft_inv.process(&mut buf);
                for p in 0..n1 {
                    out.set(p, i, c, buf[p].re);
                }
            }
        }
        out
    }

    /// Spectral x1-derivative of the given order; the Nyquist bin is zeroed
    /// for odd orders.
    pub fn x1_derivative(&self, u: &RodField, order: usize) -> RodField {
        if order == 0 {
            return u.clone();
        }
        let n = self.n_nodes();
        let n1 = self.n1;
        let mut modes = self.to_modes(u);
        for k in 0..n1 {
            let kk = self.wavenumber(k);
            let mut factor = Complex64::new(0.0, kk).powu(order as u32);
            if k == n1 / 2 && order % 2 == 1 {
                factor = Complex64::ZERO;
            }
            for i in 0..n {
                for c in 0..3 {
                    modes[(k * n + i) * 3 + c] *= factor;
                }
            }
        }
        self.from_modes(&modes)
    }

    /// Apply the 3D mass operator (L/n1) blockdiag(M_S).
    pub fn mass_apply(&self, u: &RodField) -> RodField {
        let n = self.n_nodes();
        let mut out = RodField::zeros(self.n1, n);
        let scale = self.l / self.n1 as f64;
        let mut slice = vec![0.0; n];
        let mut res = vec![0.0; n];
        for p in 0..self.n1 {
            for c in 0..3 {
                for i in 0..n {
                    slice[i] = u.get(p, i, c);
                }
                self.section_mass.matvec(&slice, &mut res);
                for i in 0..n {
                    out.set(p, i, c, scale * res[i]);
                }
            }
        }
        out
    }

    /// Solve the 3D mass operator (dense section Cholesky per plane/component).
    pub fn mass_solve(&self, b: &RodField) -> RodField {
        let n = self.n_nodes();
        let mut out = RodField::zeros(self.n1, n);
        let scale = self.n1 as f64 / self.l;
        for p in 0..self.n1 {
            for c in 0..3 {
                let mut rhs = nalgebra::DVector::<f64>::zeros(n);
                for i in 0..n {
                    rhs[i] = b.get(p, i, c) * scale;
                }
                let sol = self.mass_chol.solve(&rhs);
                for i in 0..n {
                    out.set(p, i, c, sol[i]);
                }
            }
        }
        out
    }

    /// L2(Omega) inner product of P1-in-x' nodal fields (exact).
    pub fn l2_inner(&self, u: &RodField, v: &RodField) -> f64 {
        let mu = self.mass_apply(u);
        mu.data.iter().zip(&v.data).map(|(a, b)| a * b).sum()
    }

    pub fn l2_norm(&self, u: &RodField) -> f64 {
        self.l2_inner(u, u).max(0.0).sqrt()
    }

    /// Mean of the field over Omega, per component.
    pub fn mean(&self, u: &RodField) -> [f64; 3] {
        let n = self.n_nodes();
        let scale = self.l / self.n1 as f64;
        let mut out = [0.0; 3];
        for p in 0..self.n1 {
            for i in 0..n {
                for c in 0..3 {
                    out[c] += scale * self.section_mean[i] * u.get(p, i, c);
                }
            }
        }
        out
    }

    /// Unscaled rotational moment int_Omega u . xperp dx with
    /// xperp = (0, -x3, x2); exact for P1 fields.
    pub fn rotational_moment_raw(&self, u: &RodField) -> f64 {
        let n = self.n_nodes();
        let scale = self.l / self.n1 as f64;
        let mut acc = 0.0;
        for p in 0..self.n1 {
            for i in 0..n {
                acc += scale
                    * (-self.weight_x3[i] * u.get(p, i, 1) + self.weight_x2[i] * u.get(p, i, 2));
            }
        }
        acc
    }

    /// Nodal interpolant of x -> xperp.
    pub fn xperp_field(&self) -> RodField {
        let n = self.n_nodes();
        let mut out = RodField::zeros(self.n1, n);
        for p in 0..self.n1 {
            for i in 0..n {
                let x = self.section.nodes[i];
                out.set(p, i, 1, -x[1]);
                out.set(p, i, 2, x[0]);
            }
        }
        out
    }

    /// Scaled gradient of a nodal field, evaluated at all quadrature points.
    /// Row c of each matrix is (d1 u_c, d2 u_c / h, d3 u_c / h).
    pub fn scaled_gradient(&self, u: &RodField, h: f64) -> QuadMatrixField {
        let du1 = self.x1_derivative(u, 1);
        let n_tris = self.section.triangles.len();
        let nq = crate::geometry::TRI_QUAD_POINTS.len();
        let mut out = QuadMatrixField::zeros(self.n1, n_tris, nq);
        for p in 0..self.n1 {
            for (ti, t) in self.section.triangles.iter().enumerate() {
                let g = &self.section.tri_geom[ti];
                // per-component x' gradients are constant on the triangle
                let mut gx = [[0.0; 2]; 3];
                for c in 0..3 {
                    for ln in 0..3 {
                        gx[c][0] += u.get(p, t[ln], c) * g.grad[ln][0];
                        gx[c][1] += u.get(p, t[ln], c) * g.grad[ln][1];
                    }
                }
                for (q, &(lam, _)) in crate::geometry::TRI_QUAD_POINTS.iter().enumerate() {
                    let mut m = Matrix3::zeros();
                    for c in 0..3 {
                        let d1 = lam[0] * du1.get(p, t[0], c)
                            + lam[1] * du1.get(p, t[1], c)
                            + lam[2] * du1.get(p, t[2], c);
                        m[(c, 0)] = d1;
                        m[(c, 1)] = gx[c][0] / h;
                        m[(c, 2)] = gx[c][1] / h;
                    }
                    let idx = out.idx(p, ti, q);
                    out.data[idx] = m;
                }
            }
        }
        out
    }

    /// Values of a nodal field at all quadrature points.
    pub fn values_at_qpoints(&self, u: &RodField) -> Vec<Vector3<f64>> {
        let n_tris = self.section.triangles.len();
        let nq = crate::geometry::TRI_QUAD_POINTS.len();
        let mut out = vec![Vector3::zeros(); self.n1 * n_tris * nq];
        for p in 0..self.n1 {
            for (ti, t) in self.section.triangles.iter().enumerate() {
                for (q, &(lam, _)) in crate::geometry::TRI_QUAD_POINTS.iter().enumerate() {
                    let mut v = Vector3::zeros();
                    for c in 0..3 {
                        v[c] = lam[0] * u.get(p, t[0], c)
                            + lam[1] * u.get(p, t[1], c)
                            + lam[2] * u.get(p, t[2], c);
                    }
                    out[(p * n_tris + ti) * nq + q] = v;
                }
            }
        }
        out
    }

    /// Quadrature weight of point (plane, tri, q), including the x1 factor.
    pub fn quad_weight(&self, ti: usize, q: usize) -> f64 {
        let (_, w) = crate::geometry::TRI_QUAD_POINTS[q];
        self.l / self.n1 as f64 * w * self.section.tri_geom[ti].area
    }

    /// L2(Omega) integral of a per-quadrature-point scalar.
    pub fn quad_integral(&self, f: impl Fn(usize, usize, usize) -> f64) -> f64 {
        let mut acc = 0.0;
        for p in 0..self.n1 {
            for ti in 0..self.section.triangles.len() {
                for q in 0..crate::geometry::TRI_QUAD_POINTS.len() {
                    acc += self.quad_weight(ti, q) * f(p, ti, q);
                }
            }
        }
        acc
    }

    /// Assemble the load functional chi -> (F, grad_h chi)_{L2(Omega)} into a
    /// real-space vector over (plane, node, comp). F is given at quadrature
    /// points.
    pub fn matrix_load(&self, f_mat: &QuadMatrixField, h: f64) -> RodField {
        let n = self.n_nodes();
        let n1 = self.n1;
        let n_tris = self.section.triangles.len();
        let nq = crate::geometry::TRI_QUAD_POINTS.len();
        let x1_scale = self.l / n1 as f64;
        // beta0: x'-gradient pairing, local per plane
        let mut beta0 = RodField::zeros(n1, n);
        // beta1: moments F_{c,0} phi_i, to be paired with d1 of the test
        let mut beta1 = RodField::zeros(n1, n);
        for p in 0..n1 {
            for (ti, t) in self.section.triangles.iter().enumerate() {
                let g = &self.section.tri_geom[ti];
                for q in 0..nq {
                    let (lam, wq) = crate::geometry::TRI_QUAD_POINTS[q];
                    let w = wq * g.area;
                    let m = f_mat.get(p, ti, q);
                    for ln in 0..3 {
                        for c in 0..3 {
                            let v0 = w * (m[(c, 1)] * g.grad[ln][0] + m[(c, 2)] * g.grad[ln][1]) / h;
                            let i0 = beta0.idx(p, t[ln], c);
                            beta0.data[i0] += v0;
                            let i1 = beta1.idx(p, t[ln], c);
                            beta1.data[i1] += w * m[(c, 0)] * lam[ln];
                        }
                    }
                }
            }
        }
        // pairing with d1(test) = -d1 applied to the moment sequence
        let dbeta1 = self.x1_derivative(&beta1, 1);
        let mut out = RodField::zeros(n1, n);
        for i in 0..out.data.len() {
            out.data[i] = x1_scale * (beta0.data[i] - dbeta1.data[i]);
        }
        out
    }

    /// Assemble the load functional chi -> (f, chi)_{L2} for a nodal field f
    /// (P1 interpolant pairing, exact).
    pub fn vector_load(&self, f: &RodField) -> RodField {
        self.mass_apply(f)
    }

    /// Riesz representative norm of a functional restricted to test functions
    /// vanishing on the lateral boundary: sup over the interior-supported
    /// discrete space of b[chi]/||chi||_{L2}.
    pub fn interior_dual_norm(&self, b: &RodField) -> Result<f64> {
        let chol = self
            .interior_mass_chol
            .as_ref()
            .ok_or_else(|| Error::invalid("no interior nodes on this section mesh"))?;
        let ni = self.interior.len();
        let scale = self.n1 as f64 / self.l;
        let mut acc = 0.0;
        for p in 0..self.n1 {
            for c in 0..3 {
                let mut rhs = nalgebra::DVector::<f64>::zeros(ni);
                for (ri, &i) in self.interior.iter().enumerate() {
                    rhs[ri] = b.get(p, i, c);
                }
                let sol = chol.solve(&rhs);
                acc += scale * rhs.dot(&sol);
            }
        }
        Ok(acc.max(0.0).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{normalized_cross_section, ShapeSpec};
    use approx::assert_relative_eq;

    fn small_grid() -> RodGrid {
        let mesh = normalized_cross_section(&ShapeSpec::Square { side: 1.0 }, 0.3).unwrap();
        assemble_grid(mesh, 1.0, 8).unwrap()
    }

    #[test]
    fn odd_plane_count_rejected() {
        let mesh = normalized_cross_section(&ShapeSpec::Square { side: 1.0 }, 0.4).unwrap();
        assert!(assemble_grid(mesh.clone(), 1.0, 7).is_err());
        assert!(assemble_grid(mesh, 1.0, 2).is_err());
    }

    #[test]
    fn mass_total_is_volume() {
        let g = small_grid();
        let mut ones = RodField::zeros(g.n1, g.n_nodes());
        ones.data.iter_mut().for_each(|v| *v = 1.0);
        let m = g.mass_apply(&ones);
        let total: f64 = m.data.iter().sum();
        // |Omega| = L * |S| = 1, times 3 components
        assert_relative_eq!(total, 3.0, epsilon = 1e-10);
    }

    #[test]
    fn constant_field_has_zero_x1_derivative() {
        let g = small_grid();
        let mut u = RodField::zeros(g.n1, g.n_nodes());
        u.data.iter_mut().for_each(|v| *v = 2.5);
        let du = g.x1_derivative(&u, 1);
        assert!(du.norm_inf() < 1e-12);
    }

    #[test]
    fn spectral_derivative_exact_for_band_limited() {
        let g = small_grid();
        let mut u = RodField::zeros(g.n1, g.n_nodes());
        for p in 0..g.n1 {
            let x1 = g.plane_x1(p);
            for i in 0..g.n_nodes() {
                u.set(p, i, 0, (TAU * x1 / g.l).sin());
            }
        }
        let du = g.x1_derivative(&u, 1);
        for p in 0..g.n1 {
            let x1 = g.plane_x1(p);
            for i in 0..g.n_nodes() {
                let exact = TAU / g.l * (TAU * x1 / g.l).cos();
                assert!((du.get(p, i, 0) - exact).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mass_solve_inverts_mass_apply() {
        let g = small_grid();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut u = RodField::zeros(g.n1, g.n_nodes());
        u.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let b = g.mass_apply(&u);
        let u2 = g.mass_solve(&b);
        let err = u
            .data
            .iter()
            .zip(&u2.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn scaled_gradient_of_rigid_rotation() {
        let g = small_grid();
        let h = 0.25;
        let u = g.xperp_field();
        let grad = g.scaled_gradient(&u, h);
        for m in &grad.data {
            // eps_h = 0, entries (1,2)/(2,1) are -/+ 1/h (0-indexed rows 1,2)
            let s = (m + m.transpose()) * 0.5;
            assert!(s.norm() < 1e-12);
            assert_relative_eq!(m[(1, 2)], -1.0 / h, epsilon = 1e-12);
            assert_relative_eq!(m[(2, 1)], 1.0 / h, epsilon = 1e-12);
        }
    }

    #[test]
    fn rotational_moment_of_xperp() {
        // int |x'|^2 over the unit square is I2 + I3 = 1/6, times L
        let g = small_grid();
        let u = g.xperp_field();
        assert_relative_eq!(g.rotational_moment_raw(&u), 1.0 / 6.0, epsilon = 1e-12);
        // constant fields are moment-free on the centered section
        let mut c = RodField::zeros(g.n1, g.n_nodes());
        c.data.iter_mut().for_each(|v| *v = 0.7);
        assert!(g.rotational_moment_raw(&c).abs() < 1e-12);
    }

    #[test]
    fn matrix_load_is_adjoint_of_scaled_gradient() {
        // (F, grad_h u) computed by quadrature must equal the assembled
        // functional applied to the nodal vector of u, for band-limited u
        let g = small_grid();
        let h = 0.5;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        // random band-limited u: modes up to n1/2 - 1
        let mut u = RodField::zeros(g.n1, g.n_nodes());
        for i in 0..g.n_nodes() {
            for c in 0..3 {
                let a0: f64 = rng.gen_range(-1.0..1.0);
                let (a1, b1): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                for p in 0..g.n1 {
                    let x = TAU * p as f64 / g.n1 as f64;
                    u.set(p, i, c, a0 + a1 * x.cos() + b1 * (3.0 * x).sin());
                }
            }
        }
        // random F at quadrature points
        let n_tris = g.section.triangles.len();
        let nq = crate::geometry::TRI_QUAD_POINTS.len();
        let mut f = QuadMatrixField::zeros(g.n1, n_tris, nq);
        for p in 0..g.n1 {
            let x = TAU * p as f64 / g.n1 as f64;
            for t in 0..n_tris {
                for q in 0..nq {
                    let idx = f.idx(p, t, q);
                    let base = Matrix3::from_fn(|r, c| 0.3 + 0.1 * (r as f64) - 0.2 * (c as f64));
                    f.data[idx] = base * (1.0 + 0.5 * x.cos() + 0.25 * (2.0 * x).sin());
                }
            }
        }
        let grad = g.scaled_gradient(&u, h);
        let direct = g.quad_integral(|p, t, q| f.get(p, t, q).dot(grad.get(p, t, q)));
        let load = g.matrix_load(&f, h);
        let paired: f64 = load.data.iter().zip(&u.data).map(|(a, b)| a * b).sum();
        assert_relative_eq!(direct, paired, epsilon = 1e-10, max_relative = 1e-10);
    }

    #[test]
    fn mode_roundtrip() {
        let g = small_grid();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut u = RodField::zeros(g.n1, g.n_nodes());
        u.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let modes = g.to_modes(&u);
        let back = g.from_modes(&modes);
        let err = u
            .data
            .iter()
            .zip(&back.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-12);
    }
}
