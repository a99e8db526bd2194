//! Elastic energy density built on the distance to SO(3).
//!
//! W(F) = 1/2 dist(F, SO(3))^2 and W~(F) = W(Id + F). The squared distance is
//! the only reading under which the identity is a C^2 minimum with
//! D^2 W~(0) = sym, so that is what everything here implements.
//!
//! Derivatives up to third order come from the closed-form derivative of the
//! polar rotation factor; the fourth derivative is only ever sampled and is
//! provided by finite differences of the third.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector3};

/// Configuration for the smooth neighborhood of the identity.
#[derive(Debug, Clone, Copy)]
pub struct EnergyModel {
    /// Radius of the neighborhood of 0 in which W~ is treated as smooth.
    pub delta: f64,
    /// Validity radius for the D^3 decomposition check.
    pub epsilon: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel {
            delta: 0.1,
            epsilon: 0.1,
        }
    }
}

fn axial(k: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(k[(2, 1)], k[(0, 2)], k[(1, 0)])
}

fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0)
}

fn sym(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

fn skew(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m - m.transpose()) * 0.5
}

/// Polar rotation factor of an invertible matrix with positive determinant,
/// by the Newton iteration R <- (R + R^-T)/2, followed by the singular value
/// route if the iteration cannot be used.
pub fn polar_rotation(a: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let det = a.determinant();
    if det > 1e-12 {
        let mut r = *a;
        for _ in 0..60 {
            let inv_t = r
                .try_inverse()
                .ok_or_else(|| Error::domain("polar iteration hit a singular iterate"))?
                .transpose();
            let next = (r + inv_t) * 0.5;
            let delta = (next - r).norm();
            r = next;
            if delta < 1e-15 {
                break;
            }
        }
        // one polishing step against orthogonality drift
        let correction = (Matrix3::identity() * 3.0 - r.transpose() * r) * 0.5;
        return Ok(r * correction);
    }
    // singular-value construction for indefinite input
    let svd = a.svd(true, true);
    let p = svd.u.ok_or_else(|| Error::domain("svd failed"))?;
    let q_t = svd.v_t.ok_or_else(|| Error::domain("svd failed"))?;
    let d = (p * q_t).determinant();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
    Ok(p * fix * q_t)
}

/// Frobenius distance to the rotation group and the nearest rotation.
pub fn distance_to_so3(f: &Matrix3<f64>) -> Result<(f64, Matrix3<f64>)> {
    if f.determinant() > 1e-12 {
        let r = polar_rotation(f)?;
        Ok(((f - r).norm(), r))
    } else {
        let svd = f.svd(true, true);
        let p = svd.u.ok_or_else(|| Error::domain("svd failed"))?;
        let q_t = svd.v_t.ok_or_else(|| Error::domain("svd failed"))?;
        let sign = (p * q_t).determinant().signum();
        let s = svd.singular_values;
        let d2 = (s[0] - 1.0).powi(2) + (s[1] - 1.0).powi(2) + (s[2] - sign).powi(2);
        let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign));
        Ok((d2.max(0.0).sqrt(), p * fix * q_t))
    }
}

/// Cached polar data of one deformation gradient, for repeated derivative
/// evaluations at the same point.
///
/// The rotation factor is carried as its deviation D = R - Id, computed by a
/// product-form Newton iteration that never subtracts O(1) matrices, so the
/// nonlinear remainder G(F) = DW~(F) - sym F stays accurate down to |F| near
/// machine precision (it is quadratic in F and would otherwise drown in the
/// cancellation noise of A - R).
#[derive(Debug, Clone)]
pub struct EnergyPoint {
    /// A = Id + F
    pub a: Matrix3<f64>,
    pub r: Matrix3<f64>,
    pub u: Matrix3<f64>,
    b_inv: Matrix3<f64>,
    /// F itself.
    f_mat: Matrix3<f64>,
    /// D = R - Id.
    d: Matrix3<f64>,
    /// E = D - skew F, quadratic in F; G(F) = -E.
    e: Matrix3<f64>,
    /// C = (B~/2)(I + B~/2)^{-1} with B = 2 Id + B~, so B^{-1} = (Id - C)/2.
    c_mat: Matrix3<f64>,
}

impl EnergyPoint {
    pub fn new(f: &Matrix3<f64>, model: &EnergyModel) -> Result<Self> {
        if f.norm() >= model.delta {
            return Err(Error::domain(format!(
                "|F| = {:.3e} outside the smooth neighborhood (delta = {:.3e})",
                f.norm(),
                model.delta
            )));
        }
        let a = Matrix3::identity() + f;
        if a.determinant() <= 0.0 {
            return Err(Error::domain(
                "det(Id + F) <= 0 inside the derivative evaluation radius",
            ));
        }
        let w = skew(f);
        // E-iteration: D_{k+1} = (D_k - D_k^T (I + D_k^T)^{-1})/2 written in
        // E = D - skew F, with products of small factors only
        let mut e = sym(f);
        for _ in 0..60 {
            let d = w + e;
            let idt = (Matrix3::identity() + d.transpose())
                .try_inverse()
                .ok_or_else(|| Error::domain("polar iteration hit a singular iterate"))?;
            let e_next = (e - e.transpose() * idt - w * (d.transpose() * idt)) * 0.5;
            let delta = (e_next - e).norm();
            e = e_next;
            if delta <= 1e-16 * (1.0 + e.norm()) {
                break;
            }
        }
        let d = w + e;
        let r = Matrix3::identity() + d;
        let u = sym(&(r.transpose() * a));
        let b = Matrix3::identity() * u.trace() - u;
        let b_inv = b
            .try_inverse()
            .ok_or_else(|| Error::domain("tr(U) I - U singular"))?;
        // B~ = B - 2 Id, small near the identity
        let v = sym(&(f + d.transpose() + d.transpose() * f));
        let b_tilde = Matrix3::identity() * v.trace() - v;
        let c_mat = (b_tilde * 0.5)
            * (Matrix3::identity() + b_tilde * 0.5)
                .try_inverse()
                .ok_or_else(|| Error::domain("tr(U) I - U singular"))?;
        Ok(EnergyPoint {
            a,
            r,
            u,
            b_inv,
            f_mat: *f,
            d,
            e,
            c_mat,
        })
    }

    pub fn value(&self) -> f64 {
        (self.f_mat - self.d).norm_squared() * 0.5
    }

    /// DW~(F) = (Id + F) - R = F - D.
    pub fn first(&self) -> Matrix3<f64> {
        self.f_mat - self.d
    }

    /// G(F) = DW~(F) - sym F = -(D - skew F); quadratic in F and evaluated
    /// without cancellation.
    pub fn g_remainder(&self) -> Matrix3<f64> {
        -self.e
    }

    /// DG(F)[H] = D^2 W~(F)[H] - sym H, evaluated without cancellation:
    /// DG = -D skew H - (Id + D) hat(omega~) where omega(H) = axial(skew H)
    /// + omega~ collects the F-dependent part of the rotation derivative.
    pub fn dg_apply(&self, h: &Matrix3<f64>) -> Matrix3<f64> {
        let sk = skew(h);
        let a_vec = axial(&sk);
        let k_tilde = axial(&(self.d.transpose() * h - h.transpose() * self.d));
        let omega_tilde =
            k_tilde * 0.5 - self.c_mat * a_vec - self.c_mat * (k_tilde * 0.5);
        -self.d * sk - (Matrix3::identity() + self.d) * hat(&omega_tilde)
    }

    fn omega(&self, g: &Matrix3<f64>) -> Vector3<f64> {
        let k = self.r.transpose() * g - g.transpose() * self.r;
        self.b_inv * axial(&k)
    }

    /// Derivative of the rotation factor in direction G.
    pub fn rotation_derivative(&self, g: &Matrix3<f64>) -> Matrix3<f64> {
        self.r * hat(&self.omega(g))
    }

    /// D^2 W~(F)[G] = G - DR(Id+F)[G] = sym G + DG(F)[G].
    pub fn second(&self, g: &Matrix3<f64>) -> Matrix3<f64> {
        sym(g) + self.dg_apply(g)
    }

    /// D^3 W~(F)[G, H] = -DR[H] hat(omega(G)) - R hat(Domega(G)[H]).
    pub fn third(&self, g: &Matrix3<f64>, h: &Matrix3<f64>) -> Matrix3<f64> {
        let om_g = self.omega(g);
        let om_h = self.omega(h);
        let dr_h = self.r * hat(&om_h);
        // dU(H) = sym(R^T H) - (Omega_H U - U Omega_H)/2
        let oh = hat(&om_h);
        let du = sym(&(self.r.transpose() * h)) - (oh * self.u - self.u * oh) * 0.5;
        let db = Matrix3::identity() * du.trace() - du;
        // d k(G; H) = dR^T G - G^T dR with dR = R Omega_H
        let dk = dr_h.transpose() * g - g.transpose() * dr_h;
        let dom = self.b_inv * (axial(&dk) - db * om_g);
        -dr_h * hat(&om_g) - self.r * hat(&dom)
    }
}

pub fn w_tilde(f: &Matrix3<f64>, model: &EnergyModel) -> Result<f64> {
    Ok(EnergyPoint::new(f, model)?.value())
}

pub fn dw_tilde(f: &Matrix3<f64>, model: &EnergyModel) -> Result<Matrix3<f64>> {
    Ok(EnergyPoint::new(f, model)?.first())
}

pub fn d2w_tilde(f: &Matrix3<f64>, g: &Matrix3<f64>, model: &EnergyModel) -> Result<Matrix3<f64>> {
    Ok(EnergyPoint::new(f, model)?.second(g))
}

pub fn d3w_tilde(
    f: &Matrix3<f64>,
    g: &Matrix3<f64>,
    h: &Matrix3<f64>,
    model: &EnergyModel,
) -> Result<Matrix3<f64>> {
    Ok(EnergyPoint::new(f, model)?.third(g, h))
}

/// D^2 W~(0)[G] = sym G, exactly.
pub fn d2w_at_zero(g: &Matrix3<f64>) -> Matrix3<f64> {
    sym(g)
}

/// D^3 W~(0)[A, B] contracted against a skew matrix P reduces to
/// 1/2 ((A^T - A)^T sym B + (B^T - B)^T sym A) : P = (skew(A) sym(B) + skew(B) sym(A)) : P.
///
/// The value vanishes whenever both A and B are symmetric. The prefactor is
/// fixed by the D^2 W~(0) = sym normalization of the density; the cubic term
/// of the Taylor expansion is -1/2 tr(sym F (skew F)^2).
pub fn d3w_zero_skew_identity(a: &Matrix3<f64>, b: &Matrix3<f64>, p: &Matrix3<f64>) -> f64 {
    let term = (a.transpose() - a).transpose() * sym(b) + (b.transpose() - b).transpose() * sym(a);
    0.5 * term.dot(p)
}

/// D^4 W~(F)[G, H, K] by central differences of the third derivative in F.
pub fn d4w_tilde_fd(
    f: &Matrix3<f64>,
    g: &Matrix3<f64>,
    h: &Matrix3<f64>,
    k: &Matrix3<f64>,
    model: &EnergyModel,
) -> Result<Matrix3<f64>> {
    let step = 1e-5;
    let plus = EnergyPoint::new(&(f + k * step), model)?.third(g, h);
    let minus = EnergyPoint::new(&(f - k * step), model)?.third(g, h);
    Ok((plus - minus) / (2.0 * step))
}

/// G(F) = DW~(F) - D^2 W~(0)[F] = DW~(F) - sym F, the nonlinear remainder of
/// the first derivative.
pub fn g_remainder(point: &EnergyPoint) -> Matrix3<f64> {
    point.g_remainder()
}

/// DG(F)[H] = D^2 W~(F)[H] - sym H.
pub fn dg_remainder(point: &EnergyPoint, h: &Matrix3<f64>) -> Matrix3<f64> {
    point.dg_apply(h)
}

/// Scaled pointwise matrix norm |A|_h^2 = |sym A|^2 / h^2 + |skew A|^2.
pub fn matrix_norm_h(a: &Matrix3<f64>, h: f64) -> f64 {
    let s = sym(a);
    let w = skew(a);
    (s.norm_squared() / (h * h) + w.norm_squared()).sqrt()
}

/// Report of the decomposition D^3 W~(G) = D^3 W~(0) + A(G).
#[derive(Debug, Clone, Copy)]
pub struct D3DecompositionReport {
    pub h: f64,
    pub g_norm: f64,
    /// Measured |D^3 W~(0)|_h (sup over sampled unit-|.|_h triples).
    pub d3_zero_h_norm: f64,
    /// Measured unscaled operator norm of A(G) = D^3 W~(G) - D^3 W~(0).
    pub a_g_norm: f64,
    /// d3_zero_h_norm / h, the constant of the |D^3 W~(0)|_h <= C h bound.
    pub c_measured: f64,
}

/// Operator-norm measurement by alternating maximization over the three
/// arguments; each inner step is exact (the form is linear per slot).
fn trilinear_sup_norm_h(
    apply: impl Fn(&Matrix3<f64>, &Matrix3<f64>, &Matrix3<f64>) -> f64,
    h: f64,
    seeds: &[[Matrix3<f64>; 3]],
) -> f64 {
    // Riesz representative w.r.t. the |.|_h inner product: maximize T(., B, C)
    // over |A|_h = 1 by scaling sym/skew parts with the inverse weights.
    let riesz = |grad: &Matrix3<f64>| -> Matrix3<f64> {
        let s = sym(grad);
        let w = skew(grad);
        let m = s * (h * h) + w;
        let n = matrix_norm_h(&m, h);
        if n == 0.0 {
            Matrix3::zeros()
        } else {
            m / n
        }
    };
    let gradient = |slot: usize, args: &[Matrix3<f64>; 3]| -> Matrix3<f64> {
        let mut g = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let mut e = Matrix3::zeros();
                e[(i, j)] = 1.0;
                let mut a = *args;
                a[slot] = e;
                g[(i, j)] = apply(&a[0], &a[1], &a[2]);
            }
        }
        g
    };
    let mut best: f64 = 0.0;
    for seed in seeds {
        let mut args = *seed;
        for a in args.iter_mut() {
            let n = matrix_norm_h(a, h);
            if n > 0.0 {
                *a /= n;
            }
        }
        let mut val = 0.0;
        for _ in 0..30 {
            for slot in 0..3 {
                let g = gradient(slot, &args);
                args[slot] = riesz(&g);
            }
            let new_val = apply(&args[0], &args[1], &args[2]).abs();
            if (new_val - val).abs() <= 1e-12 * new_val.max(1.0) {
                val = new_val;
                break;
            }
            val = new_val;
        }
        best = best.max(val);
    }
    best
}

fn seed_triples(n: usize, seed: u64) -> Vec<[Matrix3<f64>; 3]> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut mk = || Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            [mk(), mk(), mk()]
        })
        .collect()
}

/// Measure the two bounds of the D^3 decomposition at G with thickness h.
pub fn d3_decomposition_check(
    g: &Matrix3<f64>,
    h: f64,
    model: &EnergyModel,
) -> Result<D3DecompositionReport> {
    if g.norm() > model.epsilon {
        return Err(Error::domain(format!(
            "|G| = {:.3e} above the decomposition radius {:.3e}",
            g.norm(),
            model.epsilon
        )));
    }
    let zero = Matrix3::zeros();
    let p0 = EnergyPoint::new(&zero, model)?;
    let pg = EnergyPoint::new(g, model)?;
    let seeds = seed_triples(40, 0x7a11);
    let d3_zero = trilinear_sup_norm_h(
        |a, b, c| p0.third(a, b).dot(c),
        h,
        &seeds,
    );
    let a_g = trilinear_sup_norm_h(
        |a, b, c| (pg.third(a, b) - p0.third(a, b)).dot(c),
        1.0,
        &seeds,
    );
    Ok(D3DecompositionReport {
        h,
        g_norm: g.norm(),
        d3_zero_h_norm: d3_zero,
        a_g_norm: a_g,
        c_measured: d3_zero / h,
    })
}
