//! CSV / JSON / gnuplot emission of sweep results under
//! results/<digest>/.

use crate::error::Result;
use crate::harness::sweep::{KornSweepRow, SweepOutput};
use std::path::{Path, PathBuf};

/// Rows (h, norm_name, value) of one level in the fixed column format.
pub fn table_csv(out: &SweepOutput, level: usize) -> String {
    let mut s = String::from("h,norm_name,value\n");
    let lvl = &out.levels[level];
    for case in &lvl.cases {
        for (name, v) in &case.norms {
            s.push_str(&format!("{:.12e},{},{:.17e}\n", case.h, name, v));
        }
        s.push_str(&format!(
            "{:.12e},contraction_factor,{:.17e}\n",
            case.h, case.contraction_factor
        ));
    }
    for (h, int, bnd) in &lvl.residual_rows {
        s.push_str(&format!("{:.12e},residual_interior,{:.17e}\n", h, int));
        s.push_str(&format!("{:.12e},residual_boundary,{:.17e}\n", h, bnd));
    }
    s
}

/// gnuplot-ready two-column file per norm.
pub fn dat_files(out: &SweepOutput, level: usize) -> Vec<(String, String)> {
    let lvl = &out.levels[level];
    let mut files = Vec::new();
    if let Some(first) = lvl.cases.iter().find(|c| c.failure.is_none()) {
        for (name, _) in &first.norms {
            let mut body = String::from("# h value\n");
            for case in &lvl.cases {
                if let Some((_, v)) = case.norms.iter().find(|(n, _)| n == name) {
                    body.push_str(&format!("{:.12e} {:.17e}\n", case.h, v));
                }
            }
            files.push((format!("{name}.dat"), body));
        }
    }
    files
}

pub fn korn_csv(rows: &[KornSweepRow]) -> String {
    let mut s = String::from("h,norm_name,value\n");
    for r in rows {
        s.push_str(&format!(
            "{:.12e},korn_pointwise_max,{:.17e}\n",
            r.h, r.pointwise_max_ratio
        ));
        s.push_str(&format!(
            "{:.12e},korn_integral_max,{:.17e}\n",
            r.h, r.integral_max_constant
        ));
        s.push_str(&format!("{:.12e},korn_rigid_defect,{:.17e}\n", r.h, r.rigid_defect));
    }
    s
}

/// Write table.csv (finest level), per-level tables, report.json and the
/// .dat files under root/<digest>/ and return the directory.
pub fn write_sweep_outputs(root: &Path, out: &SweepOutput) -> Result<PathBuf> {
    let dir = root.join(&out.digest);
    std::fs::create_dir_all(&dir)?;
    let finest = out.levels.len() - 1;
    std::fs::write(dir.join("table.csv"), table_csv(out, finest))?;
    for lvl in 0..out.levels.len() {
        std::fs::write(
            dir.join(format!("table_level{lvl}.csv")),
            table_csv(out, lvl),
        )?;
        for (name, body) in dat_files(out, lvl) {
            std::fs::write(dir.join(format!("level{lvl}_{name}")), body)?;
        }
    }
    let report = serde_json::to_string_pretty(out)
        .map_err(|e| crate::error::Error::Config(format!("report serialization: {e}")))?;
    std::fs::write(dir.join("report.json"), report)?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::rate::RateFit;
    use crate::harness::sweep::{CaseResult, LevelResult};

    fn fake_output() -> SweepOutput {
        SweepOutput {
            digest: "cafe".into(),
            levels: vec![LevelResult {
                resolution: 0.2,
                n1: 4,
                cases: vec![CaseResult {
                    h: 0.1,
                    norms: vec![("err_u_linf_l2".into(), 1e-5)],
                    contraction_factor: 0.01,
                    newton_max_iter: 3,
                    failure: None,
                }],
                slopes: vec![(
                    "err_u_linf_l2".into(),
                    RateFit {
                        slope: 3.0,
                        residual: 0.0,
                        excluded: 0,
                    },
                )],
                residual_rows: vec![(0.1, 1e-4, 1e-6)],
                interior_slope: None,
                boundary_slope: None,
            }],
            slope_drift: vec![],
        }
    }

    #[test]
    fn csv_round_layout() {
        let out = fake_output();
        let csv = table_csv(&out, 0);
        assert!(csv.starts_with("h,norm_name,value\n"));
        assert!(csv.contains("err_u_linf_l2"));
        assert!(csv.contains("residual_interior"));
    }

    #[test]
    fn outputs_written_to_digest_directory() {
        let out = fake_output();
        let root = std::env::temp_dir().join("thinrod_report_test");
        let dir = write_sweep_outputs(&root, &out).unwrap();
        assert!(dir.ends_with("cafe"));
        assert!(dir.join("table.csv").exists());
        assert!(dir.join("report.json").exists());
        std::fs::remove_dir_all(&root).ok();
    }
}
