//! Long-format, plot-ready tables derived from stage artifacts.
//!
//! | file | content |
//! |------|---------|
//! | `fig1_ground_truth.csv` | `c,eta,D,label` per grid cell |
//! | `fig2_surface.csv` | forest decision surface |
//! | `fig2_paths.csv` | one row per condition of every decision path |
//! | `fig3_table.csv`, `fig3_heatmap.csv` | agreement table (descending) and heatmap |
//! | `fig4_policy.csv`, `fig4_rollout.csv` | stay values, arrows and greedy paths per agent |
//! | `fig5_importance.csv` | one row per feature |
//! | `fig6_dynamics.csv` | `t,variable,value` |
//! | `fig7_sensitivity.csv` | retained-threshold counts |

use std::path::Path;

use super::stages::Run;
use crate::dataset::FEATURE_NAMES;
use crate::error::{Error, Result};
use crate::forest::{export_decision_path, load_forest, Comparison};

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.iter().map(str::to_string).collect();
        let rows = reader
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Table { headers, rows })
    }

    fn column(&self, name: &str, path: &Path) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            what: path.display().to_string(),
            reason: format!("missing column `{name}`"),
        })
    }
}

fn copy(run: &mut Run, from: &str, to: &str) -> Result<()> {
    let path = run.artifact(from)?;
    let table = Table::read(&path)?;
    let header: Vec<&str> = table.headers.iter().map(String::as_str).collect();
    run.emit_plot_file(to, &header, table.rows)
}

fn arrow(action: &str) -> (i8, i8) {
    match action {
        "c+" => (1, 0),
        "c-" => (-1, 0),
        "eta+" => (0, 1),
        "eta-" => (0, -1),
        _ => (0, 0),
    }
}

/// Agents found in the output directory: a top-level `policy.csv` and any
/// per-discount subdirectories written by `all`.
fn agent_dirs(out: &Path) -> Result<Vec<String>> {
    let mut dirs = Vec::new();
    if out.join("policy.csv").exists() {
        dirs.push(".".to_string());
    }
    let mut subdirs: Vec<String> = std::fs::read_dir(out)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("policy.csv").exists())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    subdirs.sort();
    dirs.extend(subdirs);
    if dirs.is_empty() {
        return Err(Error::MissingArtifact(out.join("policy.csv")));
    }
    Ok(dirs)
}

pub(super) fn emit(run: &mut Run) -> Result<()> {
    copy(run, "ground_truth.csv", "fig1_ground_truth.csv")?;
    copy(run, "surface.csv", "fig2_surface.csv")?;

    let forest = load_forest(&run.artifact("forest.txt")?)?;
    let mut rows = Vec::new();
    for (t, tree) in forest.trees.iter().enumerate() {
        for (r, rule) in export_decision_path(tree).iter().enumerate() {
            for (k, cond) in rule.conditions.iter().enumerate() {
                let op = match cond.comparison {
                    Comparison::LessEqual => "<=",
                    Comparison::Greater => ">",
                };
                rows.push([
                    t.to_string(),
                    r.to_string(),
                    k.to_string(),
                    FEATURE_NAMES[cond.feature].to_string(),
                    op.to_string(),
                    cond.threshold.to_string(),
                    rule.label.name().to_string(),
                ]);
            }
        }
    }
    run.emit_plot_file(
        "fig2_paths.csv",
        &[
            "tree",
            "rule",
            "position",
            "feature",
            "comparison",
            "threshold",
            "label",
        ],
        rows,
    )?;

    copy(run, "agreement_table.csv", "fig3_table.csv")?;
    copy(run, "agreement_heatmap.csv", "fig3_heatmap.csv")?;

    let out = run.out_dir().to_path_buf();
    let mut policy_rows = Vec::new();
    let mut rollout_rows = Vec::new();
    for agent in agent_dirs(&out)? {
        let path = out.join(&agent).join("policy.csv");
        let table = Table::read(&path)?;
        let cols = ["cell_c", "cell_eta", "q_stay", "best_action", "visits"]
            .map(|c| table.column(c, &path))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        for row in &table.rows {
            let (dc, deta) = arrow(&row[cols[3]]);
            policy_rows.push([
                agent.clone(),
                row[cols[0]].clone(),
                row[cols[1]].clone(),
                row[cols[2]].clone(),
                row[cols[3]].clone(),
                dc.to_string(),
                deta.to_string(),
                row[cols[4]].clone(),
            ]);
        }
        let path = out.join(&agent).join("rollout.csv");
        let table = Table::read(&path)?;
        let cols = ["step", "cell_c", "cell_eta", "barrier"]
            .map(|c| table.column(c, &path))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        for row in &table.rows {
            let mut out_row = vec![agent.clone()];
            out_row.extend(cols.iter().map(|&c| row[c].clone()));
            rollout_rows.push(out_row);
        }
    }
    run.emit_plot_file(
        "fig4_policy.csv",
        &[
            "agent",
            "cell_c",
            "cell_eta",
            "q_stay",
            "best_action",
            "dc",
            "deta",
            "visits",
        ],
        policy_rows,
    )?;
    run.emit_plot_file(
        "fig4_rollout.csv",
        &["agent", "step", "cell_c", "cell_eta", "barrier"],
        rollout_rows,
    )?;

    copy(run, "importance.csv", "fig5_importance.csv")?;

    let path = run.artifact("trajectory.csv")?;
    let table = Table::read(&path)?;
    let cols = ["t", "x_env", "x_soc"]
        .map(|c| table.column(c, &path))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(table.rows.len() * 2);
    for variable in [1, 2] {
        for row in &table.rows {
            rows.push([
                row[cols[0]].clone(),
                table.headers[cols[variable]].clone(),
                row[cols[variable]].clone(),
            ]);
        }
    }
    run.emit_plot_file("fig6_dynamics.csv", &["t", "variable", "value"], rows)?;

    copy(run, "sensitivity.csv", "fig7_sensitivity.csv")
}
