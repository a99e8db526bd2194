//! Assembly of the four-block approximate displacement from a beam snapshot
//! and the cross-section correctors:
//!
//! h^2 (0, v) + h^3 (-x2 d1 v2 - x3 d1 v3) e1
//!   + h^5 (a2 d1^3 v2 + a3 d1^3 v3) e1
//!   + h^6 (0, b2 d1^4 v2 + c3 d1^4 v3, b3 d1^4 v3 + c2 d1^4 v2).

use crate::beam1d::{BeamTrajectory, ModeVector};
use crate::correctors::CorrectorSet;
use crate::error::{Error, Result};
use crate::grid::{RodField, RodGrid};

#[derive(Debug, Clone)]
pub struct AnsatzField {
    pub h: f64,
    pub block_h2: RodField,
    pub block_h3: RodField,
    pub block_h5: RodField,
    pub block_h6: RodField,
    pub total: RodField,
}

/// Assemble from mode coefficients of one beam snapshot (the field itself or
/// a time derivative).
pub fn assemble_from_modes(
    grid: &RodGrid,
    correctors: &CorrectorSet,
    modes: &ModeVector,
    l: f64,
    h: f64,
) -> Result<AnsatzField> {
    if correctors.a2.len() != grid.n_nodes() {
        return Err(Error::invalid(
            "corrector fields live on a different section mesh",
        ));
    }
    let n = grid.n_nodes();
    let v = modes.synthesize(grid.n1);
    let dv = modes.x1_derivative(l, 1).synthesize(grid.n1);
    let d3v = modes.x1_derivative(l, 3).synthesize(grid.n1);
    let d4v = modes.x1_derivative(l, 4).synthesize(grid.n1);
    let mut b2f = RodField::zeros(grid.n1, n);
    let mut b3f = RodField::zeros(grid.n1, n);
    let mut b5f = RodField::zeros(grid.n1, n);
    let mut b6f = RodField::zeros(grid.n1, n);
    let h2 = h * h;
    let h3 = h2 * h;
    let h5 = h3 * h2;
    let h6 = h5 * h;
    for p in 0..grid.n1 {
        for i in 0..n {
            let x = grid.section.nodes[i];
            b2f.set(p, i, 1, h2 * v[0][p]);
            b2f.set(p, i, 2, h2 * v[1][p]);
            b3f.set(p, i, 0, -h3 * (x[0] * dv[0][p] + x[1] * dv[1][p]));
            b5f.set(
                p,
                i,
                0,
                h5 * (correctors.a2[i] * d3v[0][p] + correctors.a3[i] * d3v[1][p]),
            );
            b6f.set(
                p,
                i,
                1,
                h6 * (correctors.b2[i] * d4v[0][p] + correctors.c3[i] * d4v[1][p]),
            );
            b6f.set(
                p,
                i,
                2,
                h6 * (correctors.b3[i] * d4v[1][p] + correctors.c2[i] * d4v[0][p]),
            );
        }
    }
    let mut total = b2f.clone();
    total.axpy(1.0, &b3f);
    total.axpy(1.0, &b5f);
    total.axpy(1.0, &b6f);
    Ok(AnsatzField {
        h,
        block_h2: b2f,
        block_h3: b3f,
        block_h5: b5f,
        block_h6: b6f,
        total,
    })
}

/// Ansatz at a stored trajectory time; `time_deriv` in 0..=2 selects the
/// field, its velocity or its acceleration.
pub fn assemble_ansatz(
    traj: &BeamTrajectory,
    correctors: &CorrectorSet,
    grid: &RodGrid,
    h: f64,
    t: f64,
    time_deriv: usize,
) -> Result<AnsatzField> {
    let sample = traj.sample_index(t)?;
    let modes = traj.time_derivative_modes(sample, time_deriv)?;
    assemble_from_modes(grid, correctors, &modes, traj.l, h)
}

/// The three initial-data ansatz fields built on v^0, v^1, v^2.
pub fn ansatz_initial(
    derivs: &[ModeVector; 5],
    correctors: &CorrectorSet,
    grid: &RodGrid,
    l: f64,
    h: f64,
) -> Result<[AnsatzField; 3]> {
    Ok([
        assemble_from_modes(grid, correctors, &derivs[0], l, h)?,
        assemble_from_modes(grid, correctors, &derivs[1], l, h)?,
        assemble_from_modes(grid, correctors, &derivs[2], l, h)?,
    ])
}
