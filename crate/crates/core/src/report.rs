//! Experiment outputs: JSON report, CSV tables and plot scripts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Revision of the source tree the binary was built from.
pub const GIT_REV: &str = env!("FASTSPIN_GIT_REV");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    /// Member stream indices used, as half-open ranges.
    pub member_ranges: Vec<[u64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seeds: Seeds,
    pub git_rev: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub config_hash: String,
    pub metrics: Map<String, Value>,
    pub provenance: Provenance,
}

impl Report {
    pub fn new(experiment: &str, config_hash: &str, master: u64) -> Self {
        Report {
            experiment: experiment.to_string(),
            config_hash: config_hash.to_string(),
            metrics: Map::new(),
            provenance: Provenance {
                seeds: Seeds {
                    master,
                    member_ranges: Vec::new(),
                },
                git_rev: GIT_REV.to_string(),
            },
        }
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("metric serializes");
        self.metrics.insert(key.to_string(), v);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("report: {e}")))
    }
}

/// A numeric table written as CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|x| format!("{x:.9e}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn from_csv(name: &str, text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Format(format!("{name}: empty table")))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for (i, l) in lines.enumerate() {
            let row: std::result::Result<Vec<f64>, _> = l.split(',').map(|c| c.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| Error::Format(format!("{name} line {}: {e}", i + 2)))?;
            if row.len() != header.len() {
                return Err(Error::Format(format!("{name} line {}: wrong column count", i + 2)));
            }
            rows.push(row);
        }
        Ok(Table {
            name: name.to_string(),
            header,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Everything an experiment produces.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub report: Report,
    pub tables: Vec<Table>,
}

/// Writes `config.toml`, `report.json` and one CSV per table into `dir`.
pub fn write_artifacts(dir: &Path, config_toml: &str, a: &Artifacts) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: &str| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("config.toml", config_toml)?;
    put("report.json", &a.report.to_json())?;
    for t in &a.tables {
        put(&format!("{}.csv", t.name), &t.to_csv())?;
    }
    Ok(written)
}

fn read_table(dir: &Path, name: &str) -> Result<Table> {
    let p = dir.join(format!("{name}.csv"));
    let text = std::fs::read_to_string(&p)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?;
    Table::from_csv(name, &text)
}

fn gnuplot(title: &str, data: &str, xlabel: &str, ylabel: &str, logx: bool, logy: bool, plots: &[String]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key autotitle columnhead");
    let _ = writeln!(s, "set terminal pngcairo size 900,600");
    let _ = writeln!(s, "set output '{}.png'", data.trim_end_matches(".csv"));
    let _ = writeln!(s, "set title '{title}'");
    let _ = writeln!(s, "set xlabel '{xlabel}'");
    let _ = writeln!(s, "set ylabel '{ylabel}'");
    if logx {
        let _ = writeln!(s, "set logscale x");
    }
    if logy {
        let _ = writeln!(s, "set logscale y");
    }
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s
}

/// Writes plot-ready CSV and a gnuplot script for the report in `dir`.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let rp = dir.join("report.json");
    let text = std::fs::read_to_string(&rp)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", rp.display()))))?;
    let report = Report::from_json(&text)?;
    let mut out = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        out.push(p);
        Ok(())
    };
    match report.experiment.as_str() {
        "equivalence" => {
            let t = read_table(dir, "equivalence")?;
            put("plot_equivalence.csv", t.to_csv())?;
            put(
                "plot_equivalence.gp",
                gnuplot(
                    "native discrepancy vs dt",
                    "plot_equivalence.csv",
                    "dt",
                    "sup H1 discrepancy",
                    true,
                    true,
                    &["'plot_equivalence.csv' using 2:3 with linespoints".into()],
                ),
            )?;
        }
        "averaging" => {
            let t = read_table(dir, "averaging")?;
            put("plot_averaging.csv", t.to_csv())?;
            put(
                "plot_averaging.gp",
                gnuplot(
                    "distance to the auxiliary system vs alpha",
                    "plot_averaging.csv",
                    "alpha",
                    "E sup |v - V|_1",
                    true,
                    true,
                    &["'plot_averaging.csv' using 1:2:3 with yerrorlines".into()],
                ),
            )?;
        }
        "covariance" => {
            let t = read_table(dir, "covariance")?;
            let mut bars = Table::new("plot_covariance", &["bar", "alpha", "pair", "estimate", "se", "exact", "limit"]);
            for (i, r) in t.rows.iter().enumerate() {
                let mut row = vec![i as f64];
                row.extend_from_slice(r);
                bars.push(row);
            }
            put("plot_covariance.csv", bars.to_csv())?;
            put(
                "plot_covariance.gp",
                gnuplot(
                    "empirical vs closed-form covariance",
                    "plot_covariance.csv",
                    "alpha / test pair",
                    "covariance",
                    false,
                    false,
                    &[
                        "'plot_covariance.csv' using ($1-0.2):4:5 with yerrorbars title 'estimate'".into(),
                        "'' using 1:6 with points pt 7 title 'exact'".into(),
                        "'' using ($1+0.2):7 with points pt 5 title 'limit'".into(),
                    ],
                ),
            )?;
        }
        "mixing" | "coupling" => {
            let curve = if report.experiment == "mixing" { "mixing" } else { "coupling" };
            let t = read_table(dir, curve)?;
            let mut plot = t.clone();
            plot.name = format!("plot_{curve}");
            let fit = report.metrics.get("fit").and_then(|f| {
                Some((f.get("rate")?.as_f64()?, f.get("prefactor")?.as_f64()?))
            });
            let mut series = vec![format!("'plot_{curve}.csv' using 1:2 with linespoints")];
            if let Some((c, pref)) = fit {
                plot.header.push("fit".into());
                for r in &mut plot.rows {
                    r.push(pref * (-c * r[0]).exp());
                }
                let col = plot.header.len();
                series.push(format!("'' using 1:{col} with lines"));
            }
            put(&format!("plot_{curve}.csv"), plot.to_csv())?;
            put(
                &format!("plot_{curve}.gp"),
                gnuplot(
                    if curve == "mixing" { "W1 between ensembles" } else { "nudged coupling distance" },
                    &format!("plot_{curve}.csv"),
                    "t",
                    if curve == "mixing" { "rho" } else { "median q" },
                    false,
                    true,
                    &series,
                ),
            )?;
            if curve == "mixing" {
                if let Ok(q) = read_table(dir, "coupling") {
                    put("plot_coupling.csv", q.to_csv())?;
                }
            }
        }
        "main-limit" => {
            let t = read_table(dir, "main_limit")?;
            let mut alphas: Vec<f64> = t.column("alpha").unwrap_or_default();
            alphas.dedup();
            let mut times: Vec<f64> = t.column("t").unwrap_or_default();
            times.sort_by(f64::total_cmp);
            times.dedup();
            let mut header = vec!["t".to_string()];
            header.extend(alphas.iter().map(|a| format!("alpha={a}")));
            let mut grid = Table {
                name: "plot_main_limit".into(),
                header,
                rows: Vec::new(),
            };
            for &tt in &times {
                let mut row = vec![tt];
                for &a in &alphas {
                    let v = t
                        .rows
                        .iter()
                        .find(|r| r[0] == a && r[1] == tt)
                        .map_or(f64::NAN, |r| r[2]);
                    row.push(v);
                }
                grid.push(row);
            }
            put("plot_main_limit.csv", grid.to_csv())?;
            let series: Vec<String> = (0..alphas.len())
                .map(|i| format!("'plot_main_limit.csv' using 1:{} with linespoints", i + 2))
                .collect();
            put(
                "plot_main_limit.gp",
                gnuplot(
                    "W1 to the limit ensemble",
                    "plot_main_limit.csv",
                    "t",
                    "rho",
                    false,
                    true,
                    &series,
                ),
            )?;
        }
        other => return Err(Error::Format(format!("unknown experiment `{other}` in report"))),
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trip() {
        let mut t = Table::new("x", &["t", "rho", "se"]);
        t.push(vec![0.5, 0.25, 1e-3]);
        t.push(vec![1.0, 0.125, 2e-3]);
        let back = Table::from_csv("x", &t.to_csv()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn empty_dir_is_an_error() {
        let d = tempfile::tempdir().unwrap();
        assert!(matches!(emit_plots(d.path()), Err(Error::Io(_))));
    }

    #[test]
    fn mixing_plot_contains_fit_column() {
        let d = tempfile::tempdir().unwrap();
        let mut r = Report::new("mixing", "abc", 1);
        r.metric("fit", serde_json::json!({"rate": 1.0, "prefactor": 0.5}));
        let mut t = Table::new("mixing", &["t", "rho", "se"]);
        t.push(vec![1.0, 0.2, 0.01]);
        write_artifacts(
            d.path(),
            "",
            &Artifacts {
                report: r,
                tables: vec![t],
            },
        )
        .unwrap();
        emit_plots(d.path()).unwrap();
        let p = Table::from_csv("p", &std::fs::read_to_string(d.path().join("plot_mixing.csv")).unwrap()).unwrap();
        assert_eq!(p.header.last().unwrap(), "fit");
        assert!((p.rows[0][3] - 0.5 * (-1.0f64).exp()).abs() < 1e-9);
        assert!(d.path().join("plot_mixing.gp").exists());
    }
}
