//! Least-squares slope fits of log(value) against log(h).

use crate::error::{Error, Result};

/// One (h, value) table with a fitted convergence rate.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RateFit {
    pub slope: f64,
    /// Root-mean-square residual of the fit in log space.
    pub residual: f64,
    /// Rows excluded for nonpositive values.
    pub excluded: usize,
}

pub fn fit_rate(rows: &[(f64, f64)]) -> Result<RateFit> {
    let mut pts = Vec::new();
    let mut excluded = 0usize;
    for &(h, v) in rows {
        if v > 0.0 && h > 0.0 {
            pts.push((h.ln(), v.ln()));
        } else {
            excluded += 1;
        }
    }
    if pts.len() < 3 {
        return Err(Error::invalid(format!(
            "rate fit needs at least 3 positive rows, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(Error::invalid("degenerate abscissae in rate fit"));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let residual = (pts
        .iter()
        .map(|p| (p.1 - slope * p.0 - intercept).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(RateFit {
        slope,
        residual,
        excluded,
    })
}

pub fn fit_rate_slice(hs: &[f64], values: &[f64]) -> Result<(f64, f64)> {
    let rows: Vec<(f64, f64)> = hs.iter().cloned().zip(values.iter().cloned()).collect();
    let fit = fit_rate(&rows)?;
    Ok((fit.slope, fit.residual))
}
