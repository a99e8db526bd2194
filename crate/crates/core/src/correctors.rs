//! Cross-sectional corrector fields.
//!
//! The axial profile a = (a2, a3) solves a Neumann Laplace problem with
//! zero mean; the in-plane profiles (b2, c2) and (c3, b3) solve two decoupled
//! 2x2 elliptic systems in divergence form with homogeneous Dirichlet data.
//! The divergence-form coefficients satisfy a Legendre condition with
//! constant 1/4.

use crate::error::{Error, Result};
use crate::fem2d::{
    self, laplace_stiffness, load_vector, mass_matrix, mean_weights, p1_gradient, Csr,
};
use crate::geometry::{section_moments, CrossSectionMesh, SectionMoments};

/// Coefficients p^{alpha beta}_{ij} of the divergence-form b/c systems,
/// indexed by alpha, beta in {2,3} (mapped to 0,1) and i, j in {1,2}
/// (mapped to 0,1).
#[derive(Debug, Clone)]
pub struct CoefficientTensor {
    entries: [[[[f64; 2]; 2]; 2]; 2],
}

impl CoefficientTensor {
    /// The fixed coefficient table of the in-plane systems.
    pub fn standard() -> Self {
        let mut e = [[[[0.0; 2]; 2]; 2]; 2];
        // e[alpha][beta][i][j], alpha/beta: 0 <-> x2, 1 <-> x3
        e[0][0][0][0] = 1.0; // p^{22}_{11}
        e[1][1][0][0] = 0.5; // p^{33}_{11}
        e[1][0][0][1] = 0.25; // p^{32}_{12}
        e[0][1][0][1] = 0.25; // p^{23}_{12}
        e[0][0][1][1] = 0.5; // p^{22}_{22}
        e[1][1][1][1] = 1.0; // p^{33}_{22}
        e[0][1][1][0] = 0.25; // p^{23}_{21}
        e[1][0][1][0] = 0.25; // p^{32}_{21}
        CoefficientTensor { entries: e }
    }

    pub fn get(&self, alpha: usize, beta: usize, i: usize, j: usize) -> f64 {
        self.entries[alpha][beta][i][j]
    }

    /// Quadratic form sum p^{ab}_{ij} xi_{i a} xi_{j b} on 2x2 matrices
    /// xi with rows indexed by i and columns by alpha.
    pub fn quadratic_form(&self, xi: &[[f64; 2]; 2]) -> f64 {
        let mut acc = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        acc += self.get(a, b, i, j) * xi[i][a] * xi[j][b];
                    }
                }
            }
        }
        acc
    }
}

/// Exact minimum of the Legendre quotient xi -> p[xi,xi]/|xi|^2, as the
/// smallest eigenvalue of the symmetrized 4x4 form.
pub fn legendre_constant(tensor: &CoefficientTensor) -> f64 {
    // basis order: xi_{12}, xi_{13}, xi_{22}, xi_{23} (i, alpha)
    let idx = [(0usize, 0usize), (0, 1), (1, 0), (1, 1)];
    let mut q = nalgebra::Matrix4::<f64>::zeros();
    for (r, &(i, a)) in idx.iter().enumerate() {
        for (c, &(j, b)) in idx.iter().enumerate() {
            // symmetrized coefficient of xi_r xi_c
            q[(r, c)] = 0.5 * (tensor.get(a, b, i, j) + tensor.get(b, a, j, i));
        }
    }
    let eig = nalgebra::SymmetricEigen::new(q);
    eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min)
}

/// Which right-hand side to use for the in-plane systems. `Derived` is the
/// variant obtained by expanding the scaled divergence of the ansatz strain;
/// `PaperVerbatim` keeps the displayed strong-form right-hand sides. The
/// measured interior residual order is the arbiter between them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BcRhsVariant {
    Derived,
    PaperVerbatim,
}

impl Default for BcRhsVariant {
    fn default() -> Self {
        BcRhsVariant::Derived
    }
}

/// Solved corrector fields with their residual norms.
#[derive(Debug, Clone)]
pub struct CorrectorSet {
    pub a2: Vec<f64>,
    pub a3: Vec<f64>,
    pub b2: Vec<f64>,
    pub c2: Vec<f64>,
    pub b3: Vec<f64>,
    pub c3: Vec<f64>,
    pub variant: BcRhsVariant,
    /// Relative weak residuals of the five solves (a2, a3, bc2, bc3).
    pub weak_residuals: [f64; 4],
}

/// Solve -Lap a_k = -2 x_k with natural boundary data and zero mean for
/// k = 2, 3. Requires a normalized mesh: the compatibility of the Neumann
/// problem is exactly the vanishing first moment.
pub fn solve_corrector_a(mesh: &CrossSectionMesh) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = section_moments(mesh);
    if m.first[0].abs() > 1e-8 || m.first[1].abs() > 1e-8 {
        return Err(Error::Compatibility(format!(
            "section not normalized: first moments ({:.2e}, {:.2e})",
            m.first[0], m.first[1]
        )));
    }
    let k = laplace_stiffness(mesh);
    let b2 = load_vector(mesh, |x| -2.0 * x[0]);
    let b3 = load_vector(mesh, |x| -2.0 * x[1]);
    let a2 = fem2d::solve_neumann_zero_mean(mesh, &k, &b2, 1e-12)?;
    let a3 = fem2d::solve_neumann_zero_mean(mesh, &k, &b3, 1e-12)?;
    Ok((a2, a3))
}

/// Stiffness matrix of the divergence-form system driven by the coefficient
/// tensor, on the 2-component space [w1; w2] (block layout: dof = 2*node+i).
pub fn bc_stiffness(mesh: &CrossSectionMesh, tensor: &CoefficientTensor) -> Csr {
    let n = mesh.n_nodes();
    let mut trip = Vec::with_capacity(36 * mesh.triangles.len());
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let g = &mesh.tri_geom[ti];
        for i in 0..2 {
            for j in 0..2 {
                for ni in 0..3 {
                    for nj in 0..3 {
                        let mut v = 0.0;
                        for a in 0..2 {
                            for b in 0..2 {
                                v += tensor.get(a, b, i, j) * g.grad[nj][a] * g.grad[ni][b];
                            }
                        }
                        trip.push((2 * t[ni] + i, 2 * t[nj] + j, g.area * v));
                    }
                }
            }
        }
    }
    Csr::from_triplets(2 * n, 2 * n, &mut trip)
}

/// Right-hand sides of the two in-plane systems, as load vectors over the
/// 2-component space. `first` selects the (b2, c2) system, otherwise
/// (c3, b3). The gradient of the axial corrector enters as an
/// element-piecewise-constant field.
fn bc_load(
    mesh: &CrossSectionMesh,
    a: &[f64],
    moment: f64,
    variant: BcRhsVariant,
    first: bool,
) -> Vec<f64> {
    let n = mesh.n_nodes();
    let mut rhs = vec![0.0; 2 * n];
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let ga = p1_gradient(mesh, a, ti);
        // f = (f1, f2) tested against the two components
        let (f1, f2) = match (variant, first) {
            // divergence form: -d_beta(p d_alpha w) = f
            (BcRhsVariant::Derived, true) => (moment + 0.5 * ga[0], 0.5 * ga[1]),
            (BcRhsVariant::Derived, false) => (0.5 * ga[0], moment + 0.5 * ga[1]),
            // strong systems kept verbatim: f = -(strong-form right-hand side)
            (BcRhsVariant::PaperVerbatim, true) => (-moment + ga[0], ga[1]),
            (BcRhsVariant::PaperVerbatim, false) => (ga[0], -moment + ga[1]),
        };
        for (_, w, lam) in mesh.quad_points(ti) {
            for ni in 0..3 {
                rhs[2 * t[ni]] += w * lam[ni] * f1;
                rhs[2 * t[ni] + 1] += w * lam[ni] * f2;
            }
        }
    }
    rhs
}

/// Solve both in-plane systems with homogeneous Dirichlet data. Returns
/// (b2, c2, b3, c3).
pub fn solve_corrector_bc(
    mesh: &CrossSectionMesh,
    a: (&[f64], &[f64]),
    moments: &SectionMoments,
    variant: BcRhsVariant,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let tensor = CoefficientTensor::standard();
    let mut k = bc_stiffness(mesh, &tensor);
    let n = mesh.n_nodes();
    let mut constrained = vec![false; 2 * n];
    for i in 0..n {
        if mesh.is_boundary_node[i] {
            constrained[2 * i] = true;
            constrained[2 * i + 1] = true;
        }
    }
    k.constrain_dofs(&constrained);

    let rhs2 = bc_load(mesh, a.0, moments.i2, variant, true);
    let rhs3 = bc_load(mesh, a.1, moments.i3, variant, false);
    let w2 = fem2d::solve_dirichlet(&k, &rhs2, &constrained, 1e-12)?;
    let w3 = fem2d::solve_dirichlet(&k, &rhs3, &constrained, 1e-12)?;

    let unpack = |w: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut u = vec![0.0; n];
        let mut v = vec![0.0; n];
        for i in 0..n {
            u[i] = w[2 * i];
            v[i] = w[2 * i + 1];
        }
        (u, v)
    };
    let (b2, c2) = unpack(&w2);
    let (c3, b3) = unpack(&w3);
    Ok((b2, c2, b3, c3))
}

/// Solve the full corrector set on a normalized mesh.
pub fn solve_correctors(mesh: &CrossSectionMesh, variant: BcRhsVariant) -> Result<CorrectorSet> {
    let moments = section_moments(mesh);
    let (a2, a3) = solve_corrector_a(mesh)?;
    let (b2, c2, b3, c3) = solve_corrector_bc(mesh, (&a2, &a3), &moments, variant)?;
    let mut set = CorrectorSet {
        a2,
        a3,
        b2,
        c2,
        b3,
        c3,
        variant,
        weak_residuals: [0.0; 4],
    };
    set.weak_residuals = corrector_residual(mesh, &set)?.weak_residuals;
    Ok(set)
}

/// Weak residual and boundary-condition violation report.
#[derive(Debug, Clone)]
pub struct CorrectorResidualReport {
    /// Relative weak residuals (a2, a3, system(b2,c2), system(c3,b3)).
    pub weak_residuals: [f64; 4],
    /// Zero-mean violation of a2, a3.
    pub mean_violation: [f64; 2],
    /// Max boundary nodal value of (b2, c2, b3, c3); exactly zero by the
    /// constrained rows.
    pub dirichlet_violation: [f64; 4],
}

/// Re-evaluate the weak forms of the solved systems. Residuals are measured
/// in the discrete dual norm (mass-inverse energy of the defect functional)
/// relative to the load.
pub fn corrector_residual(
    mesh: &CrossSectionMesh,
    set: &CorrectorSet,
) -> Result<CorrectorResidualReport> {
    let mass = mass_matrix(mesh);
    let k = laplace_stiffness(mesh);
    let moments = section_moments(mesh);
    let m = mean_weights(mesh);
    let area: f64 = m.iter().sum();

    let dual_norm_scalar = |defect: &[f64]| -> Result<f64> {
        // Riesz representative through the mass matrix
        let diag = mass.diagonal();
        let mut r = vec![0.0; defect.len()];
        fem2d::conjugate_gradient(
            |v, out| mass.matvec(v, out),
            &diag,
            defect,
            &mut r,
            1e-13,
            4000,
        )?;
        Ok(r.iter().zip(defect).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt())
    };

    let mut weak = [0.0; 4];
    for (slot, (field, xk)) in [(&set.a2, 0usize), (&set.a3, 1usize)].into_iter().enumerate() {
        let load = load_vector(mesh, |x| -2.0 * x[xk]);
        let ka = k.matvec_alloc(field);
        let mut defect: Vec<f64> = ka.iter().zip(&load).map(|(a, b)| a - b).collect();
        // remove the constant-mode component: the zero-mean solve determines
        // the solution only in the complement
        let dmean: f64 = defect.iter().sum::<f64>() / area;
        for (d, mi) in defect.iter_mut().zip(&m) {
            *d -= dmean * mi;
        }
        let scale = dual_norm_scalar(&load)?.max(1e-300);
        weak[slot] = dual_norm_scalar(&defect)? / scale;
    }

    let tensor = CoefficientTensor::standard();
    let kbc = bc_stiffness(mesh, &tensor);
    let n = mesh.n_nodes();
    let pack = |u: &[f64], v: &[f64]| -> Vec<f64> {
        let mut w = vec![0.0; 2 * n];
        for i in 0..n {
            w[2 * i] = u[i];
            w[2 * i + 1] = v[i];
        }
        w
    };
    let dual_norm_pair = |defect: &[f64]| -> Result<f64> {
        // block-diagonal mass as the Riesz metric
        let diag: Vec<f64> = {
            let d = mass.diagonal();
            let mut out = vec![0.0; 2 * n];
            for i in 0..n {
                out[2 * i] = d[i];
                out[2 * i + 1] = d[i];
            }
            out
        };
        let apply = |v: &[f64], out: &mut [f64]| {
            let mut u1 = vec![0.0; n];
            let mut u2 = vec![0.0; n];
            for i in 0..n {
                u1[i] = v[2 * i];
                u2[i] = v[2 * i + 1];
            }
            let m1 = mass.matvec_alloc(&u1);
            let m2 = mass.matvec_alloc(&u2);
            for i in 0..n {
                out[2 * i] = m1[i];
                out[2 * i + 1] = m2[i];
            }
        };
        let mut r = vec![0.0; defect.len()];
        fem2d::conjugate_gradient(apply, &diag, defect, &mut r, 1e-13, 4000)?;
        Ok(r.iter().zip(defect).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt())
    };

    for (slot, (w, a, moment, first)) in [
        (pack(&set.b2, &set.c2), &set.a2, moments.i2, true),
        (pack(&set.c3, &set.b3), &set.a3, moments.i3, false),
    ]
    .into_iter()
    .enumerate()
    {
        let load = bc_load(mesh, a, moment, set.variant, first);
        let kw = kbc.matvec_alloc(&w);
        // residual functional only acts on the homogeneous-Dirichlet space
        let mut defect: Vec<f64> = kw.iter().zip(&load).map(|(a, b)| a - b).collect();
        for i in 0..n {
            if mesh.is_boundary_node[i] {
                defect[2 * i] = 0.0;
                defect[2 * i + 1] = 0.0;
            }
        }
        let scale = dual_norm_pair(&load)?.max(1e-300);
        weak[2 + slot] = dual_norm_pair(&defect)? / scale;
    }

    let mean_violation = [
        m.iter().zip(&set.a2).map(|(a, b)| a * b).sum::<f64>().abs(),
        m.iter().zip(&set.a3).map(|(a, b)| a * b).sum::<f64>().abs(),
    ];
    let bmax = |f: &[f64]| {
        (0..n)
            .filter(|&i| mesh.is_boundary_node[i])
            .map(|i| f[i].abs())
            .fold(0.0f64, f64::max)
    };
    Ok(CorrectorResidualReport {
        weak_residuals: weak,
        mean_violation,
        dirichlet_violation: [bmax(&set.b2), bmax(&set.c2), bmax(&set.b3), bmax(&set.c3)],
    })
}

/// Closed form of a2 on the centered disk of radius r (unit area when
/// r = 1/sqrt(pi)): a2 = x2 |x'|^2 / 4 - (3 r^2 / 4) x2. Zero mean by oddness
/// and natural boundary data by construction.
pub fn disk_a2_closed_form(r: f64, x: [f64; 2]) -> f64 {
    let rho2 = x[0] * x[0] + x[1] * x[1];
    0.25 * x[0] * rho2 - 0.75 * r * r * x[0]
}

/// L2 error of the solved a2 against the disk closed form.
pub fn disk_a2_l2_error(mesh: &CrossSectionMesh, a2: &[f64], r: f64) -> f64 {
    let mut acc = 0.0;
    for (ti, t) in mesh.triangles.iter().enumerate() {
        for (x, w, lam) in mesh.quad_points(ti) {
            let num = fem2d::eval_p1(a2, *t, lam);
            let diff = num - disk_a2_closed_form(r, x);
            acc += w * diff * diff;
        }
    }
    acc.sqrt()
}

/// Plain-text nodal table export (node index, value) per field.
pub fn export_corrector_table(field: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in field.iter().enumerate() {
        s.push_str(&format!("{} {:.17e}\n", i, v));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{normalized_cross_section, ShapeSpec};
    use approx::assert_relative_eq;

    fn disk_mesh(res: f64) -> CrossSectionMesh {
        normalized_cross_section(
            &ShapeSpec::Disk {
                radius: 1.0 / std::f64::consts::PI.sqrt(),
            },
            res,
        )
        .unwrap()
    }

    #[test]
    fn legendre_constant_is_one_quarter() {
        let t = CoefficientTensor::standard();
        let lam = legendre_constant(&t);
        assert_relative_eq!(lam, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn quadratic_form_spot_values() {
        let t = CoefficientTensor::standard();
        // only xi_{12} = 1: value 3/4 + 1/4 = 1
        let xi = [[1.0, 0.0], [0.0, 0.0]];
        assert_relative_eq!(t.quadratic_form(&xi), 1.0, epsilon = 1e-14);
        // xi_{13} = 1, xi_{22} = -1: value 1/2, ratio 1/4 attains the minimum
        let xi = [[0.0, 1.0], [-1.0, 0.0]];
        assert_relative_eq!(t.quadratic_form(&xi), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn legendre_bound_holds_on_random_matrices() {
        use rand::{Rng, SeedableRng};
        let t = CoefficientTensor::standard();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let xi = [
                [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            ];
            let n2: f64 = xi.iter().flatten().map(|v| v * v).sum();
            assert!(t.quadratic_form(&xi) >= 0.25 * n2 - 1e-12);
        }
    }

    #[test]
    fn corrector_a_disk_matches_closed_form() {
        let r = 1.0 / std::f64::consts::PI.sqrt();
        let mut errs = Vec::new();
        for res in [0.12, 0.06, 0.03] {
            let mesh = disk_mesh(res);
            let (a2, _) = solve_corrector_a(&mesh).unwrap();
            errs.push(disk_a2_l2_error(&mesh, &a2, r));
        }
        // order >= 2 under refinement
        assert!(errs[1] < errs[0] / 3.0, "{errs:?}");
        assert!(errs[2] < errs[1] / 3.0, "{errs:?}");
    }

    #[test]
    fn corrector_a_mean_is_zero() {
        let mesh = disk_mesh(0.1);
        let (a2, a3) = solve_corrector_a(&mesh).unwrap();
        let m = mean_weights(&mesh);
        let mean2: f64 = m.iter().zip(&a2).map(|(a, b)| a * b).sum();
        let mean3: f64 = m.iter().zip(&a3).map(|(a, b)| a * b).sum();
        assert!(mean2.abs() < 1e-10);
        assert!(mean3.abs() < 1e-10);
    }

    #[test]
    fn corrector_a_square_symmetries() {
        let mesh = normalized_cross_section(&ShapeSpec::Square { side: 1.0 }, 0.08).unwrap();
        let (a2, _) = solve_corrector_a(&mesh).unwrap();
        // a2 odd in x2, even in x3: compare nodes against their mirrors
        let find = |x: [f64; 2]| -> Option<usize> {
            mesh.nodes
                .iter()
                .position(|n| (n[0] - x[0]).abs() < 1e-9 && (n[1] - x[1]).abs() < 1e-9)
        };
        let mut checked = 0;
        for (i, n) in mesh.nodes.iter().enumerate() {
            if let Some(j) = find([-n[0], n[1]]) {
                assert!((a2[i] + a2[j]).abs() < 1e-9, "odd in x2 violated");
                checked += 1;
            }
            if let Some(j) = find([n[0], -n[1]]) {
                assert!((a2[i] - a2[j]).abs() < 1e-9, "even in x3 violated");
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn unnormalized_mesh_rejected() {
        let raw = crate::geometry::build_rectangle(1.0, 1.0, 0.2, [0.4, 0.0]).unwrap();
        assert!(solve_corrector_a(&raw).is_err());
    }

    #[test]
    fn bc_zero_rhs_gives_zero() {
        let mesh = disk_mesh(0.15);
        let zero_a = vec![0.0; mesh.n_nodes()];
        let mut m = section_moments(&mesh);
        m.i2 = 0.0;
        m.i3 = 0.0;
        let (b2, c2, b3, c3) =
            solve_corrector_bc(&mesh, (&zero_a, &zero_a), &m, BcRhsVariant::Derived).unwrap();
        for f in [b2, c2, b3, c3] {
            assert!(f.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn bc_disk_quarter_turn_symmetry() {
        // on the disk the two systems exchange under the x2 <-> x3 swap, so
        // b3(x2,x3) = b2(x3,x2) and c3(x2,x3) = c2(x3,x2)
        let mesh = disk_mesh(0.1);
        let set = solve_correctors(&mesh, BcRhsVariant::Derived).unwrap();
        let find = |x: [f64; 2]| -> Option<usize> {
            mesh.nodes
                .iter()
                .position(|n| (n[0] - x[0]).abs() < 1e-9 && (n[1] - x[1]).abs() < 1e-9)
        };
        let mut checked = 0;
        for (i, n) in mesh.nodes.iter().enumerate() {
            if let Some(j) = find([n[1], n[0]]) {
                assert!(
                    (set.b3[i] - set.b2[j]).abs() < 1e-8,
                    "b swap violated: {} vs {}",
                    set.b3[i],
                    set.b2[j]
                );
                assert!((set.c3[i] - set.c2[j]).abs() < 1e-8);
                checked += 1;
            }
        }
        assert!(checked > 20, "mirror nodes not found");
    }

    #[test]
    fn residual_report_converged_and_perturbed() {
        let mesh = disk_mesh(0.12);
        let mut set = solve_correctors(&mesh, BcRhsVariant::Derived).unwrap();
        let rep = corrector_residual(&mesh, &set).unwrap();
        for r in rep.weak_residuals {
            assert!(r < 1e-10, "weak residual {r:e}");
        }
        for v in rep.dirichlet_violation {
            assert_eq!(v, 0.0);
        }
        for v in rep.mean_violation {
            assert!(v < 1e-10);
        }
        // perturb one interior value of b2 by 1e-3: residual must jump
        let interior = mesh.interior_nodes();
        set.b2[interior[interior.len() / 2]] += 1e-3;
        let rep2 = corrector_residual(&mesh, &set).unwrap();
        assert!(rep2.weak_residuals[2] > 1e-5, "{:?}", rep2.weak_residuals);
    }

    #[test]
    fn discrete_legendre_coercivity() {
        // smallest eigenvalue of the interior bc-stiffness/mass pencil is at
        // least 1/4 of the vector Dirichlet Laplacian pencil value
        let mesh = normalized_cross_section(&ShapeSpec::Square { side: 1.0 }, 0.16).unwrap();
        let n = mesh.n_nodes();
        let tensor = CoefficientTensor::standard();
        let kbc = bc_stiffness(&mesh, &tensor);
        let klap = laplace_stiffness(&mesh);
        let mass = mass_matrix(&mesh);
        let interior: Vec<usize> = mesh.interior_nodes();
        let ni = interior.len();
        // dense reduced matrices on interior dofs (2 comps)
        let mut kb = nalgebra::DMatrix::<f64>::zeros(2 * ni, 2 * ni);
        let mut kl = nalgebra::DMatrix::<f64>::zeros(2 * ni, 2 * ni);
        let mut mm = nalgebra::DMatrix::<f64>::zeros(2 * ni, 2 * ni);
        let dense = |csr: &Csr| {
            let mut d = nalgebra::DMatrix::<f64>::zeros(csr.n_rows, csr.n_cols);
            for r in 0..csr.n_rows {
                for k in csr.row_ptr[r]..csr.row_ptr[r + 1] {
                    d[(r, csr.col_idx[k])] += csr.values[k];
                }
            }
            d
        };
        let kbc_d = dense(&kbc);
        let klap_d = dense(&klap);
        let mass_d = dense(&mass);
        for (ri, &i) in interior.iter().enumerate() {
            for (rj, &j) in interior.iter().enumerate() {
                for c in 0..2 {
                    for d in 0..2 {
                        kb[(2 * ri + c, 2 * rj + d)] = kbc_d[(2 * i + c, 2 * j + d)];
                    }
                    kl[(2 * ri + c, 2 * rj + c)] = klap_d[(i, j)];
                    mm[(2 * ri + c, 2 * rj + c)] = mass_d[(i, j)];
                }
            }
        }
        let chol = nalgebra::Cholesky::new(mm.clone()).unwrap();
        let linv = chol.l().try_inverse().unwrap();
        let gb = &linv * kb * linv.transpose();
        let gl = &linv * kl * linv.transpose();
        let eb = nalgebra::SymmetricEigen::new(gb)
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::MAX, f64::min);
        let el = nalgebra::SymmetricEigen::new(gl)
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::MAX, f64::min);
        assert!(
            eb >= 0.25 * el * (1.0 - 1e-8),
            "eb = {eb}, 0.25 el = {}",
            0.25 * el
        );
    }

    #[test]
    fn a_solve_self_adjointness() {
        // (grad a2, grad phi) = (-2 x2, phi) for zero-mean discrete phi
        let mesh = disk_mesh(0.15);
        let (a2, _) = solve_corrector_a(&mesh).unwrap();
        let k = laplace_stiffness(&mesh);
        let load = load_vector(&mesh, |x| -2.0 * x[0]);
        let m = mean_weights(&mesh);
        let area: f64 = m.iter().sum();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let ka = k.matvec_alloc(&a2);
        for _ in 0..10 {
            let mut phi: Vec<f64> = (0..mesh.n_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mean: f64 = m.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>() / area;
            for p in phi.iter_mut() {
                *p -= mean;
            }
            let lhs: f64 = ka.iter().zip(&phi).map(|(a, b)| a * b).sum();
            let rhs: f64 = load.iter().zip(&phi).map(|(a, b)| a * b).sum();
            let scale = lhs.abs().max(rhs.abs()).max(1e-300);
            assert!(
                (lhs - rhs).abs() / scale < 1e-9,
                "self-adjointness defect {:e}",
                (lhs - rhs).abs() / scale
            );
        }
    }
}
