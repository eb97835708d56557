//! Command implementations behind the `isac` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::checks::run_suite;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::filters::Modality;
use crate::fusion::{fuse_maps, FusionParams};
use crate::report::{fmt_sig, write_all};
use crate::sim::{run_experiment, RunReport};
use crate::snapshot::Snapshot;

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub no_fusion: bool,
}

impl RunOverrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.experiment.seed = s;
        }
        if let Some(r) = self.runs {
            cfg.experiment.runs = r;
        }
        if let Some(d) = &self.output_dir {
            cfg.experiment.output_dir = d.clone();
        }
        if self.no_fusion {
            cfg.fusion.enabled = false;
        }
    }
}

/// Exit status for a failed command: 2 when an input file cannot be read,
/// 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 2,
        Error::Context { source, .. } => exit_code(source),
        _ => 1,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Runs the experiment and writes `gospa.csv`, `ue.csv`, `summary.csv`,
/// `plot.py` and `config.resolved` into the output directory.
pub fn cmd_run(config_path: &Path, overrides: &RunOverrides) -> Result<(PathBuf, RunReport)> {
    let mut cfg = RunConfig::load(config_path)?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    let report = run_experiment(&cfg)?;
    let dir = cfg.experiment.output_dir.clone();
    write_all(&report, &dir)?;
    let resolved = dir.join("config.resolved");
    std::fs::write(&resolved, cfg.to_toml_string()?).map_err(io_err(&resolved))?;
    Ok((dir, report))
}

/// Human-readable RMSE table.
pub fn summary_table(report: &RunReport) -> String {
    let mut out = String::from("modality    fused  pos [m]      heading [deg]  bias [m]\n");
    for r in &report.summary {
        out += &format!(
            "{:<11} {:<6} {:<12} {:<14} {}\n",
            r.modality.as_str(),
            if r.fused { "yes" } else { "no" },
            fmt_sig(r.position_m),
            r.heading_deg.map(fmt_sig).unwrap_or_else(|| "-".into()),
            r.bias_m.map(fmt_sig).unwrap_or_else(|| "-".into()),
        );
    }
    out
}

/// Fuses the bistatic state of `b_path` with the monostatic state of
/// `m_path` and writes both fused states to `out_path`.
pub fn cmd_fuse(b_path: &Path, m_path: &Path, out_path: &Path, params: &FusionParams) -> Result<()> {
    params.validate()?;
    let sb = Snapshot::load(b_path)?;
    let sm = Snapshot::load(m_path)?;
    if sb.bs != sm.bs {
        return Err(Error::Config(format!(
            "{} and {} disagree on the BS position",
            b_path.display(),
            m_path.display()
        )));
    }
    let fb = sb.state(Modality::Bistatic).map_err(|e| e.context(b_path.display().to_string()))?;
    let fm = sm.state(Modality::Monostatic).map_err(|e| e.context(m_path.display().to_string()))?;
    let bs = sb.bs();
    let (ob, om) = fuse_maps(&fb, &fm, &bs, params)?;
    Snapshot::new(&bs, &[&ob, &om]).save(out_path)
}

/// Prints one line per check; returns whether every check passed.
pub fn cmd_oracle<W: Write>(suite: &str, out: &mut W) -> Result<bool> {
    let checks = run_suite(suite)?;
    let mut ok = true;
    for c in &checks {
        writeln!(out, "[{suite}] {c}").map_err(|e| Error::contract(e.to_string()))?;
        ok &= c.passed;
    }
    Ok(ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_file_maps_to_exit_two() {
        let e = RunConfig::load(Path::new("/nonexistent/cfg.toml")).unwrap_err();
        assert_eq!(exit_code(&e), 2);
        assert!(e.to_string().contains("/nonexistent/cfg.toml"));
        assert_eq!(exit_code(&Error::Infeasible), 1);
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = RunConfig::default();
        RunOverrides {
            seed: Some(9),
            runs: Some(3),
            output_dir: Some(PathBuf::from("x")),
            no_fusion: true,
        }
        .apply(&mut cfg);
        assert_eq!(cfg.experiment.seed, 9);
        assert_eq!(cfg.experiment.runs, 3);
        assert_eq!(cfg.experiment.output_dir, PathBuf::from("x"));
        assert!(!cfg.fusion.enabled);
    }
}
