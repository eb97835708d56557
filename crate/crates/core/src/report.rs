//! CSV emission for experiment results. Column order is fixed and floats
//! carry 9 significant digits.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sim::RunReport;

pub const GOSPA_HEADER: [&str; 9] = [
    "run",
    "step",
    "modality",
    "target_class",
    "fused",
    "gospa",
    "loc",
    "missed",
    "false",
];
pub const UE_HEADER: [&str; 7] = [
    "run",
    "step",
    "modality",
    "fused",
    "err_pos_m",
    "err_heading_deg",
    "err_bias_m",
];
pub const SUMMARY_HEADER: [&str; 6] = [
    "modality",
    "fused",
    "rmse_pos_m",
    "rmse_heading_deg",
    "rmse_bias_m",
    "samples",
];

/// Formats `x` with 9 significant digits, fixed-point for moderate
/// magnitudes and exponent notation otherwise.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_owned();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_owned()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_owned()
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_default()
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::contract(format!("csv: {e}"))
}

pub fn write_gospa<W: Write>(report: &RunReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(GOSPA_HEADER).map_err(csv_err)?;
    for r in &report.gospa {
        w.write_record([
            r.run.to_string(),
            r.step.to_string(),
            r.modality.as_str().to_owned(),
            r.class.as_str().to_owned(),
            flag(r.fused).to_owned(),
            fmt_sig(r.result.total),
            fmt_sig(r.result.localization),
            r.result.missed.to_string(),
            r.result.false_targets.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e.into()))
}

pub fn write_ue<W: Write>(report: &RunReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(UE_HEADER).map_err(csv_err)?;
    for r in &report.ue {
        w.write_record([
            r.run.to_string(),
            r.step.to_string(),
            r.modality.as_str().to_owned(),
            flag(r.fused).to_owned(),
            fmt_sig(r.position_m),
            opt(r.heading_deg),
            opt(r.bias_m),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e.into()))
}

pub fn write_summary<W: Write>(report: &RunReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER).map_err(csv_err)?;
    for r in &report.summary {
        w.write_record([
            r.modality.as_str().to_owned(),
            flag(r.fused).to_owned(),
            fmt_sig(r.position_m),
            opt(r.heading_deg),
            opt(r.bias_m),
            r.samples.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e.into()))
}

/// Matplotlib script that redraws the GOSPA and RMSE figures from the CSVs
/// in its own directory.
pub const PLOT_SCRIPT: &str = r#"# Plots the CSVs in this directory: python3 plot.py
import csv, os
from collections import defaultdict
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))

def rows(name):
    with open(os.path.join(here, name)) as f:
        return list(csv.DictReader(f))

series = defaultdict(lambda: defaultdict(list))
for r in rows("gospa.csv"):
    key = (r["modality"], r["target_class"], r["fused"])
    series[key][int(r["step"])].append(float(r["gospa"]))

panels = sorted({(m, c) for m, c, _ in series})
fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 3.5), squeeze=False)
for ax, (m, c) in zip(axes[0], panels):
    for fused, style in (("0", "--"), ("1", "-")):
        s = series.get((m, c, fused))
        if not s:
            continue
        steps = sorted(s)
        ax.plot(steps, [sum(s[k]) / len(s[k]) for k in steps], style,
                label="fused" if fused == "1" else "not fused")
    ax.set_title(f"{m} {c}")
    ax.set_xlabel("time step")
    ax.set_ylabel("mean GOSPA")
    ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(here, "gospa.png"), dpi=150)

summary = rows("summary.csv")
labels = [f'{r["modality"]}{" fused" if r["fused"] == "1" else ""}' for r in summary]
fig, ax = plt.subplots(figsize=(6, 3.5))
for i, col in enumerate(("rmse_pos_m", "rmse_heading_deg", "rmse_bias_m")):
    vals = [float(r[col]) if r[col] else 0.0 for r in summary]
    ax.bar([k + 0.25 * i for k in range(len(summary))], vals, width=0.25, label=col)
ax.set_xticks([k + 0.25 for k in range(len(summary))])
ax.set_xticklabels(labels)
ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(here, "rmse.png"), dpi=150)
"#;

/// Writes `gospa.csv`, `ue.csv`, `summary.csv` and `plot.py` into `dir`.
pub fn write_all(report: &RunReport, dir: &Path) -> Result<()> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| Error::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let open = |name: &str| {
        let p = dir.join(name);
        std::fs::File::create(&p).map(std::io::BufWriter::new).map_err(io(&p))
    };
    write_gospa(report, open("gospa.csv")?)?;
    write_ue(report, open("ue.csv")?)?;
    write_summary(report, open("summary.csv")?)?;
    let p = dir.join("plot.py");
    std::fs::write(&p, PLOT_SCRIPT).map_err(io(&p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::Modality;
    use crate::metrics::GospaResult;
    use crate::sim::{GospaRecord, SummaryRow, TargetClass, UeRecord};

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig(28.2842712474619), "28.2842712");
        assert_eq!(fmt_sig(40.0), "40");
        assert_eq!(fmt_sig(0.1375), "0.1375");
        assert_eq!(fmt_sig(-1.0 / 3.0), "-0.333333333");
        assert_eq!(fmt_sig(1.23456789012e-7), "1.23456789e-7");
        assert_eq!(fmt_sig(6.02214076e23), "6.02214076e23");
        assert_eq!(fmt_sig(123456789.4), "123456789");
        assert_eq!(fmt_sig(0.0), "0");
    }

    #[test]
    fn fixed_columns() {
        let report = RunReport {
            gospa: vec![GospaRecord {
                run: 0,
                step: 1,
                modality: Modality::Bistatic,
                class: TargetClass::Va,
                fused: true,
                result: GospaResult {
                    total: 28.2842712474619,
                    localization: 0.0,
                    missed: 4,
                    false_targets: 0,
                },
            }],
            ue: vec![UeRecord {
                run: 0,
                step: 1,
                modality: Modality::Monostatic,
                fused: false,
                position_m: 0.5,
                heading_deg: None,
                bias_m: None,
            }],
            summary: vec![SummaryRow {
                modality: Modality::Bistatic,
                fused: false,
                position_m: 0.1776,
                heading_deg: Some(0.1204),
                bias_m: Some(0.1168),
                samples: 40,
            }],
        };
        let mut g = Vec::new();
        write_gospa(&report, &mut g).unwrap();
        assert_eq!(
            String::from_utf8(g).unwrap(),
            "run,step,modality,target_class,fused,gospa,loc,missed,false\n0,1,bistatic,VA,1,28.2842712,0,4,0\n"
        );
        let mut u = Vec::new();
        write_ue(&report, &mut u).unwrap();
        assert_eq!(
            String::from_utf8(u).unwrap(),
            "run,step,modality,fused,err_pos_m,err_heading_deg,err_bias_m\n0,1,monostatic,0,0.5,,\n"
        );
        let mut s = Vec::new();
        write_summary(&report, &mut s).unwrap();
        assert_eq!(
            String::from_utf8(s).unwrap(),
            "modality,fused,rmse_pos_m,rmse_heading_deg,rmse_bias_m,samples\nbistatic,0,0.1776,0.1204,0.1168,40\n"
        );
    }
}
