//! Spectral solver for the periodic fourth-order beam system
//! d_t^2 v + diag(I2, I3) d_x1^4 v = g with v L-periodic in x1.
//!
//! Every Fourier mode evolves as a forced harmonic oscillator with
//! omega_k = sqrt(I_j) (2 pi k / L)^2. One time step integrates the
//! oscillator exactly for forcing that is linear in t on the step, which
//! makes free oscillations exact up to roundoff and gives O(dt^2) global
//! accuracy for smooth forcing.

use crate::error::{Error, Result};
use crate::geometry::SectionMoments;
use num_complex::Complex64;

const TAU: f64 = 2.0 * std::f64::consts::PI;

/// Half-spectrum coefficients of a real L-periodic R^2-valued field:
/// coefficient k (0 <= k <= kmax) multiplies e^{i 2 pi k x1 / L}, negative
/// modes are the conjugates. Mode 0 must be real for a real field.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeVector {
    pub kmax: usize,
    /// [component (2 or 3 mapped to 0/1)][mode index]
    pub coeffs: [Vec<Complex64>; 2],
}

impl ModeVector {
    pub fn zeros(kmax: usize) -> Self {
        ModeVector {
            kmax,
            coeffs: [vec![Complex64::ZERO; kmax + 1], vec![Complex64::ZERO; kmax + 1]],
        }
    }

    /// Single-mode helper: amplitude c on mode k of one component, meaning
    /// the real field Re(2 c e^{i k 2 pi x / L}) for k > 0 and Re(c) for k = 0.
    pub fn single(kmax: usize, comp: usize, k: usize, c: Complex64) -> Self {
        let mut v = Self::zeros(kmax);
        v.coeffs[comp][k] = c;
        v
    }

    pub fn highest_active_mode(&self) -> usize {
        let mut hi = 0;
        for c in &self.coeffs {
            for (k, v) in c.iter().enumerate() {
                if v.norm() > 0.0 {
                    hi = hi.max(k);
                }
            }
        }
        hi
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        for c in out.coeffs.iter_mut() {
            for v in c.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    /// Spectral x1-derivative of the given order.
    pub fn x1_derivative(&self, l: f64, order: usize) -> Self {
        let mut out = self.clone();
        for c in out.coeffs.iter_mut() {
            for (k, v) in c.iter_mut().enumerate() {
                let ik = Complex64::new(0.0, TAU * k as f64 / l);
                *v *= ik.powu(order as u32);
            }
        }
        out
    }

    /// Synthesize the real field on an n-point uniform grid over [0, L).
    pub fn synthesize(&self, n: usize) -> [Vec<f64>; 2] {
        let mut out = [vec![0.0; n], vec![0.0; n]];
        for comp in 0..2 {
            for p in 0..n {
                let x = p as f64 / n as f64; // x1 / L
                let mut acc = self.coeffs[comp][0].re;
                for k in 1..=self.kmax {
                    let ph = Complex64::from_polar(1.0, TAU * k as f64 * x);
                    acc += 2.0 * (self.coeffs[comp][k] * ph).re;
                }
                out[comp][p] = acc;
            }
        }
        out
    }

    pub fn linear_combination(a: &Self, ca: f64, b: &Self, cb: f64) -> Self {
        assert_eq!(a.kmax, b.kmax);
        let mut out = Self::zeros(a.kmax);
        for comp in 0..2 {
            for k in 0..=a.kmax {
                out.coeffs[comp][k] = a.coeffs[comp][k] * ca + b.coeffs[comp][k] * cb;
            }
        }
        out
    }
}

/// Closed-form forcing registry. All entries provide analytic time
/// derivatives, so the initial-data construction can ask for d_t g and
/// d_t^2 g at t = 0.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForcingSpec {
    None,
    /// g(x1, t) = Re(2 (re + i im) e^{i k 2 pi x1 / L}) cos(omega t) e_comp
    SingleMode {
        k: usize,
        comp: usize,
        re: f64,
        im: f64,
        omega: f64,
    },
}

impl ForcingSpec {
    /// Half-spectrum of d_t^q g at time t.
    pub fn modes(&self, kmax: usize, t: f64, time_deriv: usize) -> Result<ModeVector> {
        match self {
            ForcingSpec::None => Ok(ModeVector::zeros(kmax)),
            ForcingSpec::SingleMode {
                k,
                comp,
                re,
                im,
                omega,
            } => {
                if *k == 0 {
                    return Err(Error::invalid(
                        "mode-0 forcing violates the zero-mean constraint on g",
                    ));
                }
                if *k > kmax {
                    return Err(Error::Capability(format!(
                        "forcing mode {} above the spectral band {}",
                        k, kmax
                    )));
                }
                if *comp > 1 {
                    return Err(Error::invalid("forcing component must be 0 (x2) or 1 (x3)"));
                }
                // d_t^q cos(omega t)
                let env = match time_deriv % 4 {
                    0 => (omega * t).cos(),
                    1 => -(omega * t).sin(),
                    2 => -(omega * t).cos(),
                    _ => (omega * t).sin(),
                } * omega.powi(time_deriv as i32);
                Ok(ModeVector::single(
                    kmax,
                    *comp,
                    *k,
                    Complex64::new(*re, *im) * env,
                ))
            }
        }
    }

    pub fn time_derivatives_available(&self) -> usize {
        usize::MAX
    }
}

/// Solution of the beam system on a uniform time grid, stored per mode, plus
/// the time derivatives v^0..v^4 at t = 0 used by the initial-data
/// construction.
#[derive(Debug, Clone)]
pub struct BeamTrajectory {
    pub l: f64,
    pub i2: f64,
    pub i3: f64,
    pub kmax: usize,
    pub dt: f64,
    pub times: Vec<f64>,
    /// Displacement coefficients per stored time.
    pub values: Vec<ModeVector>,
    /// Velocity coefficients per stored time.
    pub velocities: Vec<ModeVector>,
    pub forcing: ForcingSpec,
}

fn omega_k(i_comp: f64, k: usize, l: f64) -> f64 {
    i_comp.sqrt() * (TAU * k as f64 / l).powi(2)
}

/// One exact step of y'' + om^2 y = (linear interpolation of g0 -> g1).
fn oscillator_step(
    om: f64,
    dt: f64,
    y: Complex64,
    v: Complex64,
    g0: Complex64,
    g1: Complex64,
) -> (Complex64, Complex64) {
    if om == 0.0 {
        // y'' = g linear in t: exact double integration
        let y1 = y + v * dt + g0 * (dt * dt / 2.0) + (g1 - g0) * (dt * dt / 6.0);
        let v1 = v + (g0 + g1) * (dt / 2.0);
        return (y1, v1);
    }
    let (s, c) = (om * dt).sin_cos();
    let om2 = om * om;
    // particular solution for g(s) = g0 + (g1-g0) s/dt: y_p = g(s)/om^2
    let slope = (g1 - g0) / dt;
    let yp0 = g0 / om2;
    let vp0 = slope / om2;
    let yh = y - yp0;
    let vh = v - vp0;
    let yh1 = yh * c + vh * (s / om);
    let vh1 = -yh * (om * s) + vh * c;
    let yp1 = g1 / om2;
    (yh1 + yp1, vh1 + vp0)
}

/// Integrate the beam system from (v0, v1) over [0, T]. `n_modes` is the
/// spectral band limit kmax; initial data above the band are rejected.
pub fn solve_beam(
    g: &ForcingSpec,
    v0: &ModeVector,
    v1: &ModeVector,
    moments: &SectionMoments,
    l: f64,
    t_end: f64,
    n_modes: usize,
    dt: f64,
) -> Result<BeamTrajectory> {
    if dt <= 0.0 || t_end < 0.0 {
        return Err(Error::invalid("need dt > 0 and T >= 0"));
    }
    if moments.i2 <= 0.0 || moments.i3 <= 0.0 {
        return Err(Error::invalid("bending weights must be positive"));
    }
    if v0.highest_active_mode() > n_modes || v1.highest_active_mode() > n_modes {
        return Err(Error::Capability(format!(
            "initial data contain modes above the band limit {n_modes} (aliasing guard)"
        )));
    }
    let kmax = n_modes;
    let expand = |v: &ModeVector| -> ModeVector {
        let mut out = ModeVector::zeros(kmax);
        for comp in 0..2 {
            for k in 0..=v.kmax.min(kmax) {
                out.coeffs[comp][k] = v.coeffs[comp][k];
            }
        }
        out
    };
    let n_steps = (t_end / dt).round() as usize;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut values = Vec::with_capacity(n_steps + 1);
    let mut velocities = Vec::with_capacity(n_steps + 1);
    let mut y = expand(v0);
    let mut v = expand(v1);
    times.push(0.0);
    values.push(y.clone());
    velocities.push(v.clone());
    for step in 0..n_steps {
        let t0 = step as f64 * dt;
        let t1 = t0 + dt;
        let g0 = g.modes(kmax, t0, 0)?;
        let g1 = g.modes(kmax, t1, 0)?;
        let mut y_new = ModeVector::zeros(kmax);
        let mut v_new = ModeVector::zeros(kmax);
        for comp in 0..2 {
            let i_comp = if comp == 0 { moments.i2 } else { moments.i3 };
            for k in 0..=kmax {
                let om = omega_k(i_comp, k, l);
                let (yk, vk) = oscillator_step(
                    om,
                    dt,
                    y.coeffs[comp][k],
                    v.coeffs[comp][k],
                    g0.coeffs[comp][k],
                    g1.coeffs[comp][k],
                );
                y_new.coeffs[comp][k] = yk;
                v_new.coeffs[comp][k] = vk;
            }
        }
        y = y_new;
        v = v_new;
        times.push(t1);
        values.push(y.clone());
        velocities.push(v.clone());
    }
    Ok(BeamTrajectory {
        l,
        i2: moments.i2,
        i3: moments.i3,
        kmax,
        dt,
        times,
        values,
        velocities,
        forcing: g.clone(),
    })
}

impl BeamTrajectory {
    pub fn n_samples(&self) -> usize {
        self.times.len()
    }

    /// Index of the stored sample at time t; t must lie on the grid.
    pub fn sample_index(&self, t: f64) -> Result<usize> {
        let idx = (t / self.dt).round() as isize;
        if idx < 0 || idx as usize >= self.times.len() {
            return Err(Error::Range(format!(
                "t = {t} outside the stored horizon [0, {}]",
                self.times.last().unwrap()
            )));
        }
        if (self.times[idx as usize] - t).abs() > 1e-9 * self.dt.max(1.0) {
            return Err(Error::Range(format!("t = {t} is not a stored sample")));
        }
        Ok(idx as usize)
    }

    /// Mode coefficients of d_t^q v at a stored sample; q <= 2. The second
    /// time derivative comes algebraically from the beam equation.
    pub fn time_derivative_modes(&self, sample: usize, q: usize) -> Result<ModeVector> {
        match q {
            0 => Ok(self.values[sample].clone()),
            1 => Ok(self.velocities[sample].clone()),
            2 => {
                let g = self.forcing.modes(self.kmax, self.times[sample], 0)?;
                let mut out = ModeVector::zeros(self.kmax);
                for comp in 0..2 {
                    let i_comp = if comp == 0 { self.i2 } else { self.i3 };
                    for k in 0..=self.kmax {
                        let om = omega_k(i_comp, k, self.l);
                        out.coeffs[comp][k] =
                            g.coeffs[comp][k] - self.values[sample].coeffs[comp][k] * (om * om);
                    }
                }
                Ok(out)
            }
            _ => Err(Error::Capability(format!(
                "time derivative order {q} not stored"
            ))),
        }
    }

    /// Per-mode energy |v'|^2 + I_j (2 pi k / L)^4 |v|^2 at a stored sample.
    pub fn mode_energy(&self, sample: usize, comp: usize, k: usize) -> f64 {
        let i_comp = if comp == 0 { self.i2 } else { self.i3 };
        let om = omega_k(i_comp, k, self.l);
        self.velocities[sample].coeffs[comp][k].norm_sqr()
            + om * om * self.values[sample].coeffs[comp][k].norm_sqr()
    }

    /// CSV export (t, k, Re v2, Im v2, Re v3, Im v3).
    pub fn export_csv(&self) -> String {
        let mut s = String::from("t,k,re_v2,im_v2,re_v3,im_v3\n");
        for (ti, t) in self.times.iter().enumerate() {
            for k in 0..=self.kmax {
                let c2 = self.values[ti].coeffs[0][k];
                let c3 = self.values[ti].coeffs[1][k];
                s.push_str(&format!(
                    "{:.12e},{},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                    t, k, c2.re, c2.im, c3.re, c3.im
                ));
            }
        }
        s
    }
}

/// Evaluate x1-derivatives of d_t^q v on an n-point uniform grid at a stored
/// time; spectral differentiation is exact for the band-limited solution.
pub fn evaluate_beam(
    traj: &BeamTrajectory,
    t: f64,
    time_deriv: usize,
    x1_orders: &[usize],
    n_grid: usize,
) -> Result<Vec<(usize, [Vec<f64>; 2])>> {
    for &q in x1_orders {
        if q > 5 {
            return Err(Error::Capability(format!("x1 order {q} above 5")));
        }
    }
    let sample = traj.sample_index(t)?;
    let base = traj.time_derivative_modes(sample, time_deriv)?;
    let mut out = Vec::with_capacity(x1_orders.len());
    for &q in x1_orders {
        let modes = base.x1_derivative(traj.l, q);
        out.push((q, modes.synthesize(n_grid)));
    }
    Ok(out)
}

/// Initial time derivatives v^0..v^4 from the beam equation:
/// v^{2+j} = d_t^j g|_0 - diag(I) d_x1^4 v^j.
pub fn beam_time_derivatives(
    v0: &ModeVector,
    v1: &ModeVector,
    g: &ForcingSpec,
    moments: &SectionMoments,
    l: f64,
) -> Result<[ModeVector; 5]> {
    if g.time_derivatives_available() < 2 {
        return Err(Error::Capability(
            "forcing does not provide two time derivatives at t = 0".into(),
        ));
    }
    let kmax = v0.kmax.max(v1.kmax);
    let expand = |v: &ModeVector| -> ModeVector {
        let mut out = ModeVector::zeros(kmax);
        for comp in 0..2 {
            for k in 0..=v.kmax {
                out.coeffs[comp][k] = v.coeffs[comp][k];
            }
        }
        out
    };
    let v0 = expand(v0);
    let v1 = expand(v1);
    let apply_beam_op = |v: &ModeVector, gq: &ModeVector| -> ModeVector {
        let mut out = ModeVector::zeros(kmax);
        for comp in 0..2 {
            let i_comp = if comp == 0 { moments.i2 } else { moments.i3 };
            for k in 0..=kmax {
                let om = omega_k(i_comp, k, l);
                out.coeffs[comp][k] = gq.coeffs[comp][k] - v.coeffs[comp][k] * (om * om);
            }
        }
        out
    };
    let g0 = g.modes(kmax, 0.0, 0)?;
    let g1 = g.modes(kmax, 0.0, 1)?;
    let g2 = g.modes(kmax, 0.0, 2)?;
    let v2 = apply_beam_op(&v0, &g0);
    let v3 = apply_beam_op(&v1, &g1);
    let v4 = apply_beam_op(&v2, &g2);
    Ok([v0, v1, v2, v3, v4])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn disk_moments() -> SectionMoments {
        let i = 1.0 / (4.0 * std::f64::consts::PI);
        SectionMoments {
            area: 1.0,
            first: [0.0, 0.0],
            i2: i,
            i3: i,
            mixed: 0.0,
        }
    }

    #[test]
    fn free_single_mode_matches_closed_form() {
        let m = disk_moments();
        let l = 1.0;
        let amp = 0.7;
        let k = 1;
        let v0 = ModeVector::single(4, 0, k, Complex64::new(amp / 2.0, 0.0));
        let v1 = ModeVector::zeros(4);
        let om = omega_k(m.i2, k, l);
        let period = TAU / om;
        let dt = period / 1000.0;
        let traj = solve_beam(&ForcingSpec::None, &v0, &v1, &m, l, period, 4, dt).unwrap();
        // v2(x1, t) = amp cos(om t) cos(2 pi k x1 / L)
        let n = 16;
        for &s in &[250usize, 500, 999] {
            let t = traj.times[s];
            let vals = evaluate_beam(&traj, t, 0, &[0], n).unwrap();
            for p in 0..n {
                let x = p as f64 / n as f64;
                let exact = amp * (om * t).cos() * (TAU * k as f64 * x).cos();
                assert!(
                    (vals[0].1[0][p] - exact).abs() < 1e-8,
                    "mismatch at t={t} p={p}: {} vs {exact}",
                    vals[0].1[0][p]
                );
            }
        }
    }

    #[test]
    fn zero_data_zero_solution() {
        let m = disk_moments();
        let traj = solve_beam(
            &ForcingSpec::None,
            &ModeVector::zeros(4),
            &ModeVector::zeros(4),
            &m,
            1.0,
            0.3,
            4,
            1e-3,
        )
        .unwrap();
        for v in &traj.values {
            for c in &v.coeffs {
                assert!(c.iter().all(|z| z.norm() == 0.0));
            }
        }
    }

    #[test]
    fn energy_conserved_per_mode() {
        let m = disk_moments();
        let v0 = ModeVector::single(6, 1, 3, Complex64::new(0.4, 0.2));
        let v1 = ModeVector::single(6, 1, 3, Complex64::new(-0.1, 0.05));
        let traj = solve_beam(&ForcingSpec::None, &v0, &v1, &m, 2.0, 1.0, 6, 1e-3).unwrap();
        let e0 = traj.mode_energy(0, 1, 3);
        for s in 0..traj.n_samples() {
            let e = traj.mode_energy(s, 1, 3);
            assert!(
                (e - e0).abs() <= 1e-10 * e0,
                "energy drift {:e}",
                (e - e0).abs() / e0
            );
        }
    }

    #[test]
    fn mode_zero_mean_is_affine_in_time() {
        // d_t^2 of the x1-mean of v vanishes when g has no mode 0
        let m = disk_moments();
        let mut v0 = ModeVector::zeros(4);
        v0.coeffs[0][0] = Complex64::new(0.3, 0.0);
        let mut v1 = ModeVector::zeros(4);
        v1.coeffs[0][0] = Complex64::new(0.1, 0.0);
        let traj = solve_beam(&ForcingSpec::None, &v0, &v1, &m, 1.0, 0.5, 4, 1e-3).unwrap();
        for (s, t) in traj.times.iter().enumerate() {
            let mean = traj.values[s].coeffs[0][0].re;
            assert_relative_eq!(mean, 0.3 + 0.1 * t, epsilon = 1e-12);
            let acc = traj.time_derivative_modes(s, 2).unwrap();
            assert!(acc.coeffs[0][0].norm() < 1e-15);
        }
    }

    #[test]
    fn aliasing_guard_rejects_high_modes() {
        let m = disk_moments();
        let v0 = ModeVector::single(8, 0, 7, Complex64::new(1.0, 0.0));
        let err = solve_beam(
            &ForcingSpec::None,
            &v0,
            &ModeVector::zeros(8),
            &m,
            1.0,
            0.1,
            4,
            1e-3,
        );
        assert!(err.is_err());
    }

    #[test]
    fn mode_zero_forcing_rejected() {
        let g = ForcingSpec::SingleMode {
            k: 0,
            comp: 0,
            re: 1.0,
            im: 0.0,
            omega: 1.0,
        };
        assert!(g.modes(4, 0.0, 0).is_err());
    }

    #[test]
    fn derivatives_of_single_mode() {
        let m = disk_moments();
        let l = 1.0;
        let k = 2;
        let v0 = ModeVector::single(4, 0, k, Complex64::new(0.5, 0.0));
        let v1 = ModeVector::zeros(4);
        let d = beam_time_derivatives(&v0, &v1, &ForcingSpec::None, &m, l).unwrap();
        let kk = (TAU * k as f64 / l).powi(4);
        // v2 = -I2 k^4 v0, v4 = +I2^2 k^8 v0
        for kk_idx in 0..=4 {
            let got2 = d[2].coeffs[0][kk_idx];
            let got4 = d[4].coeffs[0][kk_idx];
            let want2 = v0.coeffs[0][kk_idx] * (-m.i2 * kk);
            let want4 = v0.coeffs[0][kk_idx] * (m.i2 * m.i2 * kk * kk);
            assert!((got2 - want2).norm() <= 1e-12 * want2.norm().max(1.0));
            assert!((got4 - want4).norm() <= 1e-12 * want4.norm().max(1.0));
        }
        // with zero initial data, v2 = g|_0 exactly
        let g = ForcingSpec::SingleMode {
            k: 1,
            comp: 1,
            re: 0.3,
            im: -0.2,
            omega: 2.0,
        };
        let d = beam_time_derivatives(
            &ModeVector::zeros(4),
            &ModeVector::zeros(4),
            &g,
            &m,
            l,
        )
        .unwrap();
        let g0 = g.modes(4, 0.0, 0).unwrap();
        for comp in 0..2 {
            for k in 0..=4 {
                assert!((d[2].coeffs[comp][k] - g0.coeffs[comp][k]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn acceleration_consistent_with_finite_differences() {
        let m = disk_moments();
        let l = 1.5;
        let g = ForcingSpec::SingleMode {
            k: 1,
            comp: 0,
            re: 0.2,
            im: 0.0,
            omega: 3.0,
        };
        let v0 = ModeVector::single(4, 0, 1, Complex64::new(0.3, 0.1));
        let v1 = ModeVector::single(4, 1, 2, Complex64::new(0.05, 0.0));
        let d = beam_time_derivatives(&v0, &v1, &g, &m, l).unwrap();
        // one-sided second-order stencil at t = 0 converges at O(dt^2) to v^2
        let fd_err = |dt: f64| -> f64 {
            let traj = solve_beam(&g, &v0, &v1, &m, l, 10.0 * dt, 4, dt).unwrap();
            let mut err: f64 = 0.0;
            let mut scale: f64 = 1.0;
            for comp in 0..2 {
                for k in 0..=4 {
                    let f = |s: usize| traj.values[s].coeffs[comp][k];
                    let fd =
                        (f(0) * 2.0 - f(1) * 5.0 + f(2) * 4.0 - f(3)) / Complex64::from(dt * dt);
                    err = err.max((fd - d[2].coeffs[comp][k]).norm());
                    scale = scale.max(d[2].coeffs[comp][k].norm());
                }
            }
            err / scale
        };
        let e1 = fd_err(1e-3);
        let e2 = fd_err(5e-4);
        assert!(e2 < e1 / 3.0, "no O(dt^2) decay: {e1:e} -> {e2:e}");
        assert!(e2 < 1e-4, "fd error too large: {e2:e}");
    }

    #[test]
    fn spectral_derivative_is_exact() {
        let m = disk_moments();
        let l = 2.0;
        let k = 3;
        let v0 = ModeVector::single(6, 0, k, Complex64::new(0.25, 0.0));
        let traj = solve_beam(
            &ForcingSpec::None,
            &v0,
            &ModeVector::zeros(6),
            &m,
            l,
            0.0,
            6,
            1e-3,
        )
        .unwrap();
        let n = 32;
        let vals = evaluate_beam(&traj, 0.0, 0, &[0, 4], n).unwrap();
        let scale = (TAU * k as f64 / l).powi(4);
        for p in 0..n {
            assert_relative_eq!(vals[1].1[0][p], scale * vals[0].1[0][p], epsilon = 1e-9);
        }
        // round trip: order 0 at t = 0 reproduces v0 on the grid
        for p in 0..n {
            let x = p as f64 / n as f64;
            let exact = 2.0 * 0.25 * (TAU * k as f64 * x).cos();
            assert!((vals[0].1[0][p] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn linearity_of_solve() {
        let m = disk_moments();
        let l = 1.0;
        let g = ForcingSpec::SingleMode {
            k: 2,
            comp: 0,
            re: 0.1,
            im: 0.05,
            omega: 1.5,
        };
        let g_scaled = ForcingSpec::SingleMode {
            k: 2,
            comp: 0,
            re: 0.3,
            im: 0.15,
            omega: 1.5,
        };
        let v0 = ModeVector::single(4, 0, 1, Complex64::new(0.2, 0.0));
        let v1 = ModeVector::single(4, 1, 1, Complex64::new(0.0, 0.1));
        let t1 = solve_beam(&g, &v0, &v1, &m, l, 0.2, 4, 1e-3).unwrap();
        let t3 = solve_beam(&g_scaled, &v0.scale(3.0), &v1.scale(3.0), &m, l, 0.2, 4, 1e-3).unwrap();
        let last = t1.n_samples() - 1;
        for comp in 0..2 {
            for k in 0..=4 {
                let a = t1.values[last].coeffs[comp][k] * 3.0;
                let b = t3.values[last].coeffs[comp][k];
                assert!((a - b).norm() <= 1e-12 * b.norm().max(1.0));
            }
        }
    }

    #[test]
    fn dt_refinement_second_order_for_forced_runs() {
        let m = disk_moments();
        let l = 1.0;
        let g = ForcingSpec::SingleMode {
            k: 1,
            comp: 0,
            re: 0.5,
            im: 0.0,
            omega: 2.0,
        };
        let v0 = ModeVector::zeros(4);
        let v1 = ModeVector::zeros(4);
        let t_end = 0.4;
        let reference = solve_beam(&g, &v0, &v1, &m, l, t_end, 4, t_end / 8192.0).unwrap();
        let err_at = |dt: f64| -> f64 {
            let tr = solve_beam(&g, &v0, &v1, &m, l, t_end, 4, dt).unwrap();
            let a = tr.values.last().unwrap().coeffs[0][1];
            let b = reference.values.last().unwrap().coeffs[0][1];
            (a - b).norm()
        };
        let e1 = err_at(t_end / 512.0);
        let e2 = err_at(t_end / 1024.0);
        assert!(e2 < e1 / 3.2, "e1={e1:e} e2={e2:e}");
        assert!(e2 < 1e-8, "e2={e2:e}");
    }
}
