//! The attack/policy outcome matrix: one scenario run per policy, one cell
//! per (attack kind, policy), plus the data-plane health witness.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::attacks::AttackKind;
use crate::policy::Policy;
use crate::scenario::config::Scenario;
use crate::scenario::runner::{run_scenario_with_policy, RunError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellOutcome {
    Succeeded,
    BlockedAtLoad(String),
    Degraded,
    NotRun,
}

impl CellOutcome {
    pub fn label(&self) -> String {
        match self {
            CellOutcome::Succeeded => "Succeeded".to_string(),
            CellOutcome::BlockedAtLoad(reason) => format!("BlockedAtLoad({reason})"),
            CellOutcome::Degraded => "Degraded".to_string(),
            CellOutcome::NotRun => "NotRun".to_string(),
        }
    }

    pub fn is_blocked(&self) -> bool {
        matches!(self, CellOutcome::BlockedAtLoad(_))
    }

    pub fn is_succeeded(&self) -> bool {
        matches!(self, CellOutcome::Succeeded)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MatrixRecord {
    pub attack: String,
    pub policy: String,
    pub outcome: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct MatrixUpfRecord {
    pub policy: String,
    pub upf_ok: bool,
}

#[derive(Debug, Clone)]
pub struct OutcomeMatrix {
    /// Column order = evaluation order.
    pub policies: Vec<String>,
    /// Row order: attack kinds present in the scenario, canonical order.
    pub kinds: Vec<AttackKind>,
    pub cells: BTreeMap<(AttackKind, String), CellOutcome>,
    pub upf_ok: BTreeMap<String, bool>,
}

impl OutcomeMatrix {
    pub fn cell(&self, kind: AttackKind, policy: &str) -> &CellOutcome {
        self.cells
            .get(&(kind, policy.to_string()))
            .unwrap_or(&CellOutcome::NotRun)
    }

    /// Human-readable table.
    pub fn render_table(&self) -> String {
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["attack".to_string()];
        header.extend(self.policies.iter().cloned());
        rows.push(header);
        for kind in &self.kinds {
            let mut row = vec![kind.name().to_string()];
            for policy in &self.policies {
                row.push(self.cell(*kind, policy).label());
            }
            rows.push(row);
        }
        let mut upf_row = vec!["upf_ok".to_string()];
        for policy in &self.policies {
            upf_row.push(
                self.upf_ok
                    .get(policy)
                    .map(|b| b.to_string())
                    .unwrap_or_else(|| "-".to_string()),
            );
        }
        rows.push(upf_row);

        let cols = rows[0].len();
        let mut widths = vec![0usize; cols];
        for row in &rows {
            for (i, cell) in row.iter().enumerate() {
                widths[i] = widths[i].max(cell.len());
            }
        }
        let mut out = String::new();
        for (r, row) in rows.iter().enumerate() {
            for (i, cell) in row.iter().enumerate() {
                out.push_str(&format!("{:<width$}", cell, width = widths[i]));
                if i + 1 < cols {
                    out.push_str("  ");
                }
            }
            out.push('\n');
            if r == 0 {
                for (i, w) in widths.iter().enumerate() {
                    out.push_str(&"-".repeat(*w));
                    if i + 1 < cols {
                        out.push_str("  ");
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    /// Machine-readable record list.
    pub fn to_records(&self) -> (Vec<MatrixRecord>, Vec<MatrixUpfRecord>) {
        let mut cells = Vec::new();
        for kind in &self.kinds {
            for policy in &self.policies {
                cells.push(MatrixRecord {
                    attack: kind.name().to_string(),
                    policy: policy.clone(),
                    outcome: self.cell(*kind, policy).label(),
                });
            }
        }
        let upf = self
            .policies
            .iter()
            .map(|p| MatrixUpfRecord {
                policy: p.clone(),
                upf_ok: *self.upf_ok.get(p).unwrap_or(&false),
            })
            .collect();
        (cells, upf)
    }

    pub fn to_json(&self) -> String {
        let (cells, upf) = self.to_records();
        let doc = serde_json::json!({
            "cells": cells,
            "upf_ok": upf,
        });
        let mut s = serde_json::to_string_pretty(&doc).expect("matrix serializes");
        s.push('\n');
        s
    }
}

/// Run the scenario once per policy and fold per-instance outcomes into one
/// cell per attack kind: unanimous outcomes keep their value, anything mixed
/// degrades, absent kinds stay NotRun.
pub fn evaluate_matrix(scenario: &Scenario, policies: &[Policy]) -> Result<OutcomeMatrix, RunError> {
    let kinds: Vec<AttackKind> = AttackKind::all()
        .into_iter()
        .filter(|k| scenario.attacks.iter().any(|a| a.kind == *k))
        .collect();
    let mut cells = BTreeMap::new();
    let mut upf_ok = BTreeMap::new();
    for policy in policies {
        let output = run_scenario_with_policy(scenario, policy, None)?;
        upf_ok.insert(policy.name.clone(), output.report.upf_ok);
        for kind in &kinds {
            let outcomes: Vec<&CellOutcome> = output
                .attack_outcomes
                .iter()
                .filter(|(_, k, _)| k == kind)
                .map(|(_, _, o)| o)
                .collect();
            let folded = fold_outcomes(&outcomes);
            cells.insert((*kind, policy.name.clone()), folded);
        }
    }
    Ok(OutcomeMatrix {
        policies: policies.iter().map(|p| p.name.clone()).collect(),
        kinds,
        cells,
        upf_ok,
    })
}

fn fold_outcomes(outcomes: &[&CellOutcome]) -> CellOutcome {
    match outcomes {
        [] => CellOutcome::NotRun,
        [first, rest @ ..] => {
            let uniform = rest
                .iter()
                .all(|o| std::mem::discriminant(*o) == std::mem::discriminant(*first));
            if uniform {
                (*first).clone()
            } else {
                CellOutcome::Degraded
            }
        }
    }
}
