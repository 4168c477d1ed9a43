//! Run reports: a pure function of (scenario, seed, tool version).

use std::collections::BTreeMap;

use serde::Serialize;

use crate::upf::pipeline::VerdictCounters;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct ContainerReport {
    pub id: String,
    pub managed: bool,
    /// Orchestrator status for managed containers, "-" otherwise.
    pub status: String,
    pub restart_count: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct UpfReport {
    pub id: String,
    pub attached: bool,
    pub counters: VerdictCounters,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackReport {
    pub id: String,
    pub kind: String,
    pub outcome: String,
    /// Total records on the attack's output channel.
    pub records: usize,
    /// Records per kind tag.
    pub record_kinds: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub scenario: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub policy: String,
    pub ticks_executed: u64,
    pub quiescent: bool,
    pub upf_ok: bool,
    pub containers: Vec<ContainerReport>,
    pub upfs: Vec<UpfReport>,
    pub attacks: Vec<AttackReport>,
    pub log_path: String,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Short human summary for CLI output.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "scenario {} seed {} policy {} ({} ticks{})\n",
            self.scenario,
            self.seed,
            self.policy,
            self.ticks_executed,
            if self.quiescent { ", quiescent" } else { "" }
        ));
        for upf in &self.upfs {
            out.push_str(&format!(
                "  upf {}: attached={} pass={} drop={} redirect={}\n",
                upf.id, upf.attached, upf.counters.pass, upf.counters.drop, upf.counters.redirect
            ));
        }
        out.push_str(&format!("  upf_ok={}\n", self.upf_ok));
        for a in &self.attacks {
            out.push_str(&format!(
                "  attack {} [{}]: {} ({} records)\n",
                a.id, a.kind, a.outcome, a.records
            ));
        }
        for c in self.containers.iter().filter(|c| c.managed) {
            out.push_str(&format!(
                "  container {}: {} restarts={}\n",
                c.id, c.status, c.restart_count
            ));
        }
        out
    }
}
