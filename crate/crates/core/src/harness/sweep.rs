//! One-dimensional hyperparameter sweeps rendered as small tables.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use super::config::RunConfig;
use super::train::{train_run, TrainReport};
use crate::error::{Error, Result};
use crate::flows::FlowKind;
use crate::latentnmt::LatentMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepDim {
    Dropout,
    LatentDim,
    FlowCount,
    OrthoColumns,
}

impl fmt::Display for SweepDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepDim::Dropout => "dropout",
            SweepDim::LatentDim => "latent_dim",
            SweepDim::FlowCount => "flow_count",
            SweepDim::OrthoColumns => "ortho_columns",
        })
    }
}

impl FromStr for SweepDim {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dropout" => Ok(SweepDim::Dropout),
            "latent_dim" => Ok(SweepDim::LatentDim),
            "flow_count" => Ok(SweepDim::FlowCount),
            "ortho_columns" => Ok(SweepDim::OrthoColumns),
            other => Err(Error::Config(format!("unknown sweep dimension {other:?}"))),
        }
    }
}

/// Flow families, in table column order, with their column titles.
pub const FLOW_COLUMNS: [(FlowKind, &str); 3] = [
    (FlowKind::Planar, "PF"),
    (FlowKind::Sylvester, "SF (M=8)"),
    (FlowKind::Coupling, "CL"),
];
const FLOW_COUNT_COLUMNS: usize = 8;

impl SweepDim {
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepDim::Dropout => vec![0.0, 0.1, 0.2, 0.3],
            SweepDim::LatentDim => vec![8.0, 16.0, 32.0, 64.0, 128.0, 256.0],
            SweepDim::FlowCount => (0..=6).map(f64::from).collect(),
            SweepDim::OrthoColumns => vec![2.0, 4.0, 8.0, 16.0, 24.0, 32.0],
        }
    }

    fn title(self) -> &'static str {
        match self {
            SweepDim::Dropout => "Dropout rate",
            SweepDim::LatentDim => "D",
            SweepDim::FlowCount => "Num Flows",
            SweepDim::OrthoColumns => "M",
        }
    }

    fn label(self, v: f64) -> String {
        match self {
            SweepDim::Dropout => format!("{v:.1}"),
            _ => format!("{}", v as usize),
        }
    }
}

/// Headline numbers of one run, taken at its best dev evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSummary {
    pub overlap: f64,
    pub exact_match: f64,
    pub elbo_per_token: f64,
    pub kl_median: f64,
}

impl RunSummary {
    pub fn from_report(report: &TrainReport) -> Option<Self> {
        let r = report.best().or(report.last())?;
        Some(Self {
            overlap: r.dev_overlap,
            exact_match: r.dev_exact_match,
            elbo_per_token: r.dev_elbo_per_token,
            kl_median: r.dev_kl_median,
        })
    }

    /// Overlap score when the model decodes, held-out ELBO otherwise.
    pub fn headline(&self) -> f64 {
        if self.overlap.is_finite() {
            self.overlap
        } else {
            self.elbo_per_token
        }
    }
}

/// `columns` head the table after its title cell; each row holds one cell
/// per column, `None` where the run failed. A row with a single cell spans
/// all columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub dim: SweepDim,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<RunSummary>>)>,
}

impl SweepTable {
    /// Pipe-separated table of headline numbers.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| {} | {} |", self.dim.title(), self.columns.join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(self.columns.len() + 1));
        for (label, cells) in &self.rows {
            let shown: Vec<String> = cells
                .iter()
                .map(|c| c.map_or("failed".to_string(), |s| format!("{:.2}", s.headline())))
                .collect();
            let _ = writeln!(out, "| {label} | {} |", shown.join(" | "));
        }
        out
    }

    /// Every number of every run, one line per cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,column,overlap,exact_match,elbo_per_token,kl_median\n");
        for (label, cells) in &self.rows {
            for (i, cell) in cells.iter().enumerate() {
                let column = if cells.len() == 1 { "all" } else { self.columns[i].as_str() };
                match cell {
                    Some(s) => {
                        let _ = writeln!(
                            out,
                            "{label},{column},{},{},{},{}",
                            s.overlap, s.exact_match, s.elbo_per_token, s.kl_median
                        );
                    }
                    None => {
                        let _ = writeln!(out, "{label},{column},failed,failed,failed,failed");
                    }
                }
            }
        }
        out
    }
}

fn with_sub_dir(base: &RunConfig, name: &str) -> RunConfig {
    let mut cfg = base.clone();
    cfg.out_dir = base.out_dir.as_ref().map(|d| d.join(name));
    cfg
}

/// Run `runner` on every grid point of `dim` around `base`. Failed runs are
/// logged and marked; the sweep goes on.
pub fn sweep_with<F>(dim: SweepDim, grid: &[f64], base: &RunConfig, mut runner: F) -> Result<SweepTable>
where
    F: FnMut(&RunConfig) -> Result<RunSummary>,
{
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if dim != SweepDim::Dropout && grid.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
        return Err(Error::Config(format!("{dim} grid needs non-negative integers")));
    }
    let mut run = |cfg: RunConfig| match runner(&cfg) {
        Ok(s) => Some(s),
        Err(e) => {
            log::warn!("sweep run {:?} failed: {e}", cfg.out_dir);
            None
        }
    };
    let labels: Vec<String> = grid.iter().map(|&v| dim.label(v)).collect();
    let table = match dim {
        SweepDim::FlowCount => {
            let mut rows = Vec::new();
            for (&v, label) in grid.iter().zip(&labels) {
                let k = v as usize;
                let mut cfg = with_sub_dir(base, &format!("flows{k}"));
                cfg.model.latent = LatentMode::Variational;
                cfg.model.n_flows = k;
                if k == 0 {
                    rows.push((label.clone(), vec![run(cfg)]));
                    continue;
                }
                let mut cells = Vec::new();
                for (kind, _) in FLOW_COLUMNS {
                    let mut c = with_sub_dir(base, &format!("flows{k}_{kind}"));
                    c.model.latent = LatentMode::Variational;
                    c.model.n_flows = k;
                    c.model.flow_kind = kind;
                    if kind == FlowKind::Sylvester {
                        c.model.ortho_columns = FLOW_COUNT_COLUMNS;
                        c.model.latent_dim = c.model.latent_dim.max(FLOW_COUNT_COLUMNS);
                    }
                    cells.push(run(c));
                }
                rows.push((label.clone(), cells));
            }
            SweepTable {
                dim,
                columns: FLOW_COLUMNS.iter().map(|(_, t)| t.to_string()).collect(),
                rows,
            }
        }
        _ => {
            let mut cells = Vec::new();
            for (&v, label) in grid.iter().zip(&labels) {
                let mut cfg = with_sub_dir(base, &format!("{dim}{label}"));
                match dim {
                    SweepDim::Dropout => cfg.schedule.word_dropout = v,
                    SweepDim::LatentDim => cfg.model.latent_dim = v as usize,
                    SweepDim::OrthoColumns => {
                        let m = v as usize;
                        cfg.model.latent = LatentMode::Variational;
                        cfg.model.flow_kind = FlowKind::Sylvester;
                        cfg.model.ortho_columns = m;
                        cfg.model.n_flows = cfg.model.n_flows.max(1);
                        let widest = grid.iter().fold(0.0f64, |a, &b| a.max(b)) as usize;
                        cfg.model.latent_dim = cfg.model.latent_dim.max(widest);
                    }
                    SweepDim::FlowCount => unreachable!(),
                }
                cells.push(run(cfg));
            }
            let row = match dim {
                SweepDim::Dropout => base.task.task.to_string(),
                _ => "score".to_string(),
            };
            SweepTable {
                dim,
                columns: labels,
                rows: vec![(row, cells)],
            }
        }
    };
    Ok(table)
}

/// Sweep with real training runs.
pub fn sweep(dim: SweepDim, grid: &[f64], base: &RunConfig) -> Result<SweepTable> {
    sweep_with(dim, grid, base, |cfg| {
        let (_, report) = train_run(cfg.clone())?;
        RunSummary::from_report(&report).ok_or_else(|| Error::Eval("run produced no evaluation".into()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake(cfg: &RunConfig) -> Result<RunSummary> {
        cfg.validate()?;
        Ok(RunSummary {
            overlap: cfg.model.n_flows as f64,
            exact_match: 0.0,
            elbo_per_token: -1.0,
            kl_median: 0.1,
        })
    }

    #[test]
    fn flow_count_table_shape() {
        let dim = SweepDim::FlowCount;
        let t = sweep_with(dim, &dim.default_grid(), &RunConfig::default(), fake).unwrap();
        assert_eq!(t.columns, vec!["PF", "SF (M=8)", "CL"]);
        assert_eq!(t.rows.len(), 7);
        assert_eq!(t.rows[0].1.len(), 1);
        assert!(t.rows[1..].iter().all(|(_, c)| c.len() == 3 && c.iter().all(Option::is_some)));
        let text = t.render();
        assert!(text.starts_with("| Num Flows | PF | SF (M=8) | CL |"));
        assert!(text.contains("| 4 | 4.00 | 4.00 | 4.00 |"));
    }

    #[test]
    fn single_point_grid_gives_one_column() {
        let t = sweep_with(SweepDim::Dropout, &[0.2], &RunConfig::default(), fake).unwrap();
        assert_eq!(t.columns, vec!["0.2"]);
        assert_eq!(t.rows.len(), 1);
        assert!(sweep_with(SweepDim::Dropout, &[], &RunConfig::default(), fake).is_err());
    }

    #[test]
    fn failures_are_marked_not_fatal() {
        let mut base = RunConfig::default();
        base.model.latent_dim = 16;
        let t = sweep_with(SweepDim::OrthoColumns, &[2.0, 4.0], &base, |cfg| {
            if cfg.model.ortho_columns == 4 {
                Err(Error::Eval("boom".into()))
            } else {
                fake(cfg)
            }
        })
        .unwrap();
        assert!(t.rows[0].1[0].is_some() && t.rows[0].1[1].is_none());
        assert!(t.render().contains("failed"));
        assert!(t.to_csv().contains("score,4,failed"));
    }

    #[test]
    fn ortho_sweep_widens_the_latent() {
        let mut widest = 0;
        sweep_with(SweepDim::OrthoColumns, &SweepDim::OrthoColumns.default_grid(), &RunConfig::default(), |c| {
            widest = widest.max(c.model.latent_dim);
            fake(c)
        })
        .unwrap();
        assert_eq!(widest, 32);
    }
}
