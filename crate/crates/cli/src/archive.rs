//! Run archive layout:
//!
//! ```text
//! <out>/config.snapshot.json   resolved config, hashed into report.json
//! <out>/report.json
//! <out>/*.csv                  ladder, fit, upper_fit, coeffs, hs_sweep
//! <out>/eigenvalues/p_<p>.csv  window eigenvalues per rung
//! <out>/plotdata/*.tsv (*.svg)
//! <out>/dense/p_<p>.bin        optional operator export
//! <out>/logs/run.log
//! ```

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use semitrace::coeffs::{coefficient_field, write_coefficient_csv};
use semitrace::config::RunConfig;
use semitrace::discretize::build_operator;
use semitrace::verify::checks::hs_sweep;
use semitrace::verify::ladder::{plan_rung, problem_scale};
use semitrace::verify::Report;
use semitrace::{Error, Result};

use crate::svg;

pub struct Archive {
    pub dir: PathBuf,
    pub snapshot_sha256: String,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// `p` as a file-name fragment: `12`, `12_5`.
fn p_tag(p: f64) -> String {
    format!("{p}").replace('.', "_")
}

impl Archive {
    pub fn create(dir: &Path, snapshot: &str) -> Result<Self> {
        mkdir(&dir.join("logs"))?;
        write(&dir.join("config.snapshot.json"), snapshot)?;
        let digest = Sha256::digest(snapshot.as_bytes());
        let snapshot_sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
        Ok(Archive { dir: dir.to_path_buf(), snapshot_sha256 })
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join("logs").join("run.log")
    }

    pub fn write_report(&self, mut report: Report, cfg: &RunConfig, render_svg: bool) -> Result<Report> {
        report.snapshot_sha256 = Some(self.snapshot_sha256.clone());
        if let Some(ladder) = &report.ladder {
            ladder.write_csv(&self.dir.join("ladder.csv"))?;
            let eig_dir = self.dir.join("eigenvalues");
            mkdir(&eig_dir)?;
            for e in &ladder.entries {
                e.window(&cfg.problem.phi).write_csv(&eig_dir.join(format!("p_{}.csv", p_tag(e.p))))?;
            }
        }
        if let Some(fit) = &report.fit {
            fit.write_csv(&self.dir.join("fit.csv"))?;
        }
        if let Some(fit) = &report.upper_fit {
            fit.write_csv(&self.dir.join("upper_fit.csv"))?;
        }
        let plot_dir = self.dir.join("plotdata");
        let tables = report.write_plotdata(&plot_dir)?;
        if render_svg {
            for table in &tables {
                svg::render_table(table, &table.with_extension("svg"))?;
            }
        }
        write(&self.dir.join("report.json"), &report.to_json())?;
        log::info!("wrote {}", self.dir.join("report.json").display());
        Ok(report)
    }

    /// `coeffs.csv` on the coefficient grid and `coeffs.json` with the integrals.
    pub fn write_coefficients(&self, cfg: &RunConfig) -> Result<()> {
        let problem = cfg.problem.resolve()?;
        let dom = problem.domain.with_grid(cfg.checks.coeff_grid_n)?;
        let field = |r| coefficient_field(r, &problem.field, &problem.scalar, &problem.phi, &dom);
        let fields = [field(0)?, field(1)?, field(2)?];
        write_coefficient_csv(&fields, &self.dir.join("coeffs.csv"))?;
        let json = serde_json::json!({
            "snapshot_sha256": self.snapshot_sha256,
            "grid_n": dom.grid_n,
            "f0": fields[0].integral(),
            "f1": fields[1].integral(),
            "f2": fields[2].integral(),
        });
        write(&self.dir.join("coeffs.json"), &serde_json::to_string_pretty(&json)?)?;
        println!("f0 = {:.12e}, f1 = {:.1e}, f2 = {:.12e}", fields[0].integral(), fields[1].integral(), fields[2].integral());
        Ok(())
    }

    pub fn write_hs_sweep(&self, cfg: &RunConfig) -> Result<()> {
        let rows = hs_sweep(cfg.checks.hs_matrix_n, cfg.seed)?;
        let mut text = String::from("varied,order,delta,quad_n,apply_error\n");
        for r in rows {
            text += &format!("{},{},{},{},{:.6e}\n", r.varied, r.order, r.delta, r.quad_n, r.apply_error);
        }
        write(&self.dir.join("hs_sweep.csv"), &text)
    }

    /// Dense `H_p` on the grid the ladder would use at `p`.
    pub fn write_dense(&self, cfg: &RunConfig, p: f64) -> Result<()> {
        let problem = cfg.problem.resolve()?;
        let scale = problem_scale(&problem, cfg.checks.coeff_grid_n)?;
        let plan = plan_rung(&problem, &scale, p, &cfg.ladder, cfg.eig.dense_cap);
        let dom = problem.domain.with_grid(plan.grid_n)?;
        let op = build_operator(&dom, &problem.potential, &problem.scalar, p)?;
        let dir = self.dir.join("dense");
        mkdir(&dir)?;
        let path = dir.join(format!("p_{}.bin", p_tag(p)));
        op.assemble_dense(cfg.eig.dense_cap)?.write_binary(&path)?;
        log::info!("wrote {} ({}-dim)", path.display(), op.dim());
        Ok(())
    }
}
