//! P1 finite element assembly on a cross-section mesh, with a conjugate
//! gradient solver for the symmetric positive definite systems that the
//! corrector module produces.

use crate::error::{Error, Result};
use crate::geometry::CrossSectionMesh;

/// Compressed sparse row matrix, assembled from triplets.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &mut Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx: Vec<usize> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in triplets.iter() {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_ptr[r + 1] += 1;
                col_idx.push(c);
                values.push(v);
                last = Some((r, c));
            }
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Csr {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for r in 0..self.n_rows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    pub fn matvec_alloc(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_rows];
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[k] == r {
                    d[r] += self.values[k];
                }
            }
        }
        d
    }

    /// Zero the rows and columns of the given dofs and put 1 on the diagonal.
    /// Keeps the matrix symmetric; used for homogeneous Dirichlet conditions.
    pub fn constrain_dofs(&mut self, dofs: &[bool]) {
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                if dofs[r] || dofs[c] {
                    self.values[k] = if r == c { 1.0 } else { 0.0 };
                }
            }
        }
    }
}

/// Jacobi-preconditioned conjugate gradients. `tol` is relative to the
/// initial residual (with an absolute floor). Returns the iteration count.
pub fn conjugate_gradient(
    a: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = b.len();
    let mut r = vec![0.0; n];
    a(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let inv_d: Vec<f64> = diag
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_d).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let norm_b = (b.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let target = (tol * norm_b).max(1e-16 * norm_b);
    let mut ap = vec![0.0; n];
    if norm_b == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    for it in 0..max_iter {
        let rr: f64 = r.iter().map(|v| v * v).sum();
        if rr.sqrt() <= target {
            return Ok(it);
        }
        a(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::Convergence(format!(
                "CG: non-positive curvature {pap:e} at iteration {it}"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_d[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr.sqrt() <= target * 10.0 {
        return Ok(max_iter);
    }
    Err(Error::Convergence(format!(
        "CG: residual {:e} above target {:e} after {} iterations",
        rr.sqrt(),
        target,
        max_iter
    )))
}

/// P1 mass matrix.
pub fn mass_matrix(mesh: &CrossSectionMesh) -> Csr {
    let n = mesh.n_nodes();
    let mut trip = Vec::with_capacity(9 * mesh.triangles.len());
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let a = mesh.tri_geom[ti].area;
        for i in 0..3 {
            for j in 0..3 {
                let v = if i == j { a / 6.0 } else { a / 12.0 };
                trip.push((t[i], t[j], v));
            }
        }
    }
    Csr::from_triplets(n, n, &mut trip)
}

/// P1 stiffness matrix of the scalar Laplacian.
pub fn laplace_stiffness(mesh: &CrossSectionMesh) -> Csr {
    let n = mesh.n_nodes();
    let mut trip = Vec::with_capacity(9 * mesh.triangles.len());
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let g = &mesh.tri_geom[ti];
        for i in 0..3 {
            for j in 0..3 {
                let v = g.area * (g.grad[i][0] * g.grad[j][0] + g.grad[i][1] * g.grad[j][1]);
                trip.push((t[i], t[j], v));
            }
        }
    }
    Csr::from_triplets(n, n, &mut trip)
}

/// Load vector (f, phi_i) for a pointwise right-hand side, by the mesh
/// quadrature rule.
pub fn load_vector(mesh: &CrossSectionMesh, mut f: impl FnMut([f64; 2]) -> f64) -> Vec<f64> {
    let mut b = vec![0.0; mesh.n_nodes()];
    for (ti, t) in mesh.triangles.iter().enumerate() {
        for (x, w, lam) in mesh.quad_points(ti) {
            let fv = f(x);
            for i in 0..3 {
                b[t[i]] += w * fv * lam[i];
            }
        }
    }
    b
}

/// Nodal mean-value weights m_i = (phi_i, 1); sum equals the area.
pub fn mean_weights(mesh: &CrossSectionMesh) -> Vec<f64> {
    load_vector(mesh, |_| 1.0)
}

/// Evaluate a P1 nodal field at a point given by triangle + barycentric.
pub fn eval_p1(field: &[f64], tri: [usize; 3], lam: [f64; 3]) -> f64 {
    field[tri[0]] * lam[0] + field[tri[1]] * lam[1] + field[tri[2]] * lam[2]
}

/// Constant gradient of a P1 field on one triangle.
pub fn p1_gradient(mesh: &CrossSectionMesh, field: &[f64], ti: usize) -> [f64; 2] {
    let t = mesh.triangles[ti];
    let g = &mesh.tri_geom[ti];
    let mut out = [0.0, 0.0];
    for i in 0..3 {
        out[0] += field[t[i]] * g.grad[i][0];
        out[1] += field[t[i]] * g.grad[i][1];
    }
    out
}

/// Area-weighted recovery of an element-piecewise-constant quantity to nodes
/// (the constant term of a local least-squares patch fit).
pub fn recover_to_nodes(mesh: &CrossSectionMesh, per_tri: &[f64]) -> Vec<f64> {
    let n = mesh.n_nodes();
    let mut acc = vec![0.0; n];
    let mut wsum = vec![0.0; n];
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let a = mesh.tri_geom[ti].area;
        for &node in t {
            acc[node] += a * per_tri[ti];
            wsum[node] += a;
        }
    }
    for i in 0..n {
        acc[i] /= wsum[i];
    }
    acc
}

/// L2 inner product of nodal fields through the mass matrix.
pub fn l2_inner(mass: &Csr, u: &[f64], v: &[f64]) -> f64 {
    let mu = mass.matvec_alloc(u);
    mu.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// L2 norm of the P1 interpolant of a nodal field.
pub fn l2_norm(mass: &Csr, u: &[f64]) -> f64 {
    l2_inner(mass, u, u).max(0.0).sqrt()
}

/// Solve the Neumann problem (grad u, grad phi) = b with zero-mean constraint
/// imposed through a rank-one penalty on the mean functional; exact for
/// compatible data (sum of b over the constant mode is zero).
pub fn solve_neumann_zero_mean(
    mesh: &CrossSectionMesh,
    stiffness: &Csr,
    b: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    let m = mean_weights(mesh);
    let sum_b: f64 = b.iter().sum();
    let norm_b = (b.iter().map(|v| v * v).sum::<f64>()).sqrt();
    if sum_b.abs() > 1e-8 * norm_b.max(1e-30) {
        return Err(Error::Compatibility(format!(
            "Neumann data not mean-free: sum = {sum_b:e}"
        )));
    }
    let sigma = {
        let d = stiffness.diagonal();
        let davg: f64 = d.iter().sum::<f64>() / d.len() as f64;
        let mm: f64 = m.iter().map(|v| v * v).sum();
        davg / mm
    };
    let mut diag = stiffness.diagonal();
    for i in 0..diag.len() {
        diag[i] += sigma * m[i] * m[i];
    }
    let mut x = vec![0.0; b.len()];
    let apply = |v: &[f64], out: &mut [f64]| {
        stiffness.matvec(v, out);
        let mv: f64 = m.iter().zip(v).map(|(a, b)| a * b).sum();
        for i in 0..out.len() {
            out[i] += sigma * mv * m[i];
        }
    };
    conjugate_gradient(apply, &diag, b, &mut x, tol, 20 * b.len().max(200))?;
    // exact mean removal guards against the tiny CG residual leaking into the
    // constraint
    let area: f64 = m.iter().sum();
    let mean: f64 = m.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / area;
    for v in x.iter_mut() {
        *v -= mean;
    }
    Ok(x)
}

/// Solve a symmetric positive definite system with homogeneous Dirichlet
/// conditions already imposed on the matrix.
pub fn solve_dirichlet(
    stiffness: &Csr,
    b: &[f64],
    constrained: &[bool],
    tol: f64,
) -> Result<Vec<f64>> {
    let mut rhs = b.to_vec();
    for (i, &c) in constrained.iter().enumerate() {
        if c {
            rhs[i] = 0.0;
        }
    }
    let diag = stiffness.diagonal();
    let mut x = vec![0.0; b.len()];
    conjugate_gradient(
        |v, out| stiffness.matvec(v, out),
        &diag,
        &rhs,
        &mut x,
        tol,
        20 * b.len().max(200),
    )?;
    Ok(x)
}
