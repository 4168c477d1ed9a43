//! Scenario execution: build a host from a parsed scenario, run it, derive
//! attack outcomes, and write the output tree.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::config::{builtin_policies, PolicyRef, Scenario};
use super::report::{AttackReport, ContainerReport, RunReport, UpfReport, REPORT_SCHEMA_VERSION};
use crate::attacks::AttackKind;
use crate::ebpf::program::RecordKind;
use crate::ebpf::runtime::{ExfilRecord, ProgId};
use crate::ebpf::verifier::LoadError;
use crate::kernel::host::{Host, HostError};
use crate::log::{detail_field, EventKind, LOG_SCHEMA_VERSION};
use crate::policy::matrix::CellOutcome;
use crate::policy::Policy;
use crate::upf::topology::{build_topology, TopologyInfo};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("unknown policy {0}")]
    UnknownPolicy(String),
    #[error("scenario build failed: {0}")]
    Build(#[from] HostError),
}

#[derive(Debug)]
pub struct AttackRun {
    pub id: String,
    pub kind: AttackKind,
    pub owner: crate::kernel::container::ContainerId,
    pub target_comm: Option<String>,
    pub payload: Option<Vec<u8>>,
    pub prog_ids: Vec<ProgId>,
    pub denial: Option<String>,
}

pub struct RunOutput {
    pub host: Host,
    pub topology: Option<TopologyInfo>,
    pub report: RunReport,
    /// (attack id, kind, outcome) in scenario order.
    pub attack_outcomes: Vec<(String, AttackKind, CellOutcome)>,
    /// Merged output channel per attack id.
    pub attack_channels: BTreeMap<String, Vec<ExfilRecord>>,
}

pub fn resolve_policy(name: &str, policies: &[Policy]) -> Result<Policy, RunError> {
    policies
        .iter()
        .find(|p| p.name == name)
        .cloned()
        .or_else(|| builtin_policies().into_iter().find(|p| p.name == name))
        .ok_or_else(|| RunError::UnknownPolicy(name.to_string()))
}

pub fn run_scenario(
    scenario: &Scenario,
    policies: &[Policy],
    seed_override: Option<u64>,
) -> Result<RunOutput, RunError> {
    let policy = match &scenario.policy {
        PolicyRef::Named(name) => resolve_policy(name, policies)?,
        PolicyRef::Inline(p) => p.clone(),
    };
    run_scenario_with_policy(scenario, &policy, seed_override)
}

pub fn run_scenario_with_policy(
    scenario: &Scenario,
    policy: &Policy,
    seed_override: Option<u64>,
) -> Result<RunOutput, RunError> {
    let seed = seed_override.unwrap_or(scenario.seed);
    let mut host = Host::new(policy.clone(), scenario.orchestrator, scenario.tick_limit);
    host.log_mut().emit(
        0,
        EventKind::Meta,
        0,
        "",
        format!(
            "schema={LOG_SCHEMA_VERSION} scenario={} scenario_hash={:016x} seed={seed} policy={}",
            scenario.name, scenario.hash, policy.name
        ),
    );

    let topology = match &scenario.topology {
        Some(cfg) => Some(build_topology(&mut host, cfg, seed)?),
        None => None,
    };
    for spec in &scenario.containers {
        host.create_container(spec)?;
    }
    for f in &scenario.files {
        host.add_file(f.container.as_ref(), &f.path, f.contents.clone(), f.sensitive)?;
    }
    for w in &scenario.workloads {
        host.register_workload(w.clone());
    }

    // Per-container allow-list meta, consumed by the replay verifier.
    let metas: Vec<(String, String, String)> = host
        .containers()
        .map(|c| {
            (
                c.id().to_string(),
                policy.hooks_meta(c.id()),
                policy.helpers_meta(c.id()),
            )
        })
        .collect();
    for (id, hooks, helpers) in metas {
        host.log_mut().emit(
            0,
            EventKind::MetaPolicy,
            0,
            &id,
            format!("hooks={hooks} helpers={helpers}"),
        );
    }

    for prog in &scenario.programs {
        let hook = prog.hook.clone();
        if let Ok(id) = host.load_program(prog.clone()) {
            let _ = host.attach_program(id, &hook);
        }
    }

    // Attacks load as atomic objects: if any sibling program is rejected,
    // none of the group attaches.
    let mut attack_runs = Vec::new();
    for spec in &scenario.attacks {
        let mut prog_ids = Vec::new();
        let mut denial = None;
        for prog in spec.build() {
            match host.load_program(prog) {
                Ok(id) => prog_ids.push(id),
                Err(LoadError::Denied(reason)) => {
                    denial.get_or_insert_with(|| reason.to_string());
                }
                Err(LoadError::Malformed(reason)) => {
                    denial.get_or_insert_with(|| format!("Malformed:{reason}"));
                }
            }
        }
        if denial.is_none() {
            for &id in &prog_ids {
                let hook = host.ebpf.get(id).expect("loaded").prog.hook.clone();
                let _ = host.attach_program(id, &hook);
            }
        }
        attack_runs.push(AttackRun {
            id: spec.id.clone(),
            kind: spec.kind,
            owner: spec.owner.clone(),
            target_comm: spec.target_comm.clone(),
            payload: spec.payload.clone(),
            prog_ids,
            denial,
        });
    }

    for (cid, pspec) in &scenario.processes {
        host.add_process(cid, pspec.clone())?;
    }

    let ticks = host.run();

    let mut attack_channels = BTreeMap::new();
    let mut attack_outcomes = Vec::new();
    for run in &attack_runs {
        let channel = merge_channels(&host, &run.prog_ids);
        let outcome = derive_outcome(&host, run, &channel);
        attack_outcomes.push((run.id.clone(), run.kind, outcome));
        attack_channels.insert(run.id.clone(), channel);
    }

    let report = build_report(
        scenario,
        seed,
        policy,
        &host,
        ticks,
        &attack_runs,
        &attack_outcomes,
        &attack_channels,
    );

    Ok(RunOutput {
        host,
        topology,
        report,
        attack_outcomes,
        attack_channels,
    })
}

/// Merge the sibling programs' channels into one stream ordered by tick,
/// stable across programs in load order.
fn merge_channels(host: &Host, prog_ids: &[ProgId]) -> Vec<ExfilRecord> {
    let mut merged: Vec<ExfilRecord> = Vec::new();
    for &id in prog_ids {
        merged.extend(host.ebpf.channel(id).iter().cloned());
    }
    merged.sort_by_key(|r| r.tick);
    merged
}

fn derive_outcome(host: &Host, run: &AttackRun, channel: &[ExfilRecord]) -> CellOutcome {
    if let Some(reason) = &run.denial {
        return CellOutcome::BlockedAtLoad(reason.clone());
    }
    let succeeded = match run.kind {
        AttackKind::Tracing => channel.iter().any(|r| {
            r.kind == RecordKind::ProcessInfo && {
                let data = String::from_utf8_lossy(&r.data).into_owned();
                detail_field(&data, "pid")
                    .and_then(|p| p.parse::<u32>().ok())
                    .and_then(|pid| host.processes.get(crate::kernel::process::Pid(pid)))
                    .map(|p| p.container != run.owner)
                    .unwrap_or(false)
            }
        }),
        AttackKind::Dos => {
            let victim_container = run.target_comm.as_deref().and_then(|target| {
                host.processes
                    .iter()
                    .find(|p| p.comm.equals(target))
                    .map(|p| p.container.clone())
            });
            victim_container
                .and_then(|c| host.orchestrator.status(&c))
                .map(|s| s == crate::kernel::orchestrator::ContainerStatus::CrashLoopBackOff)
                .unwrap_or(false)
        }
        AttackKind::InfoTheft => channel
            .iter()
            .any(|r| r.kind == RecordKind::FileContent && !r.data.is_empty()),
        AttackKind::BashInjection => {
            let injected = channel.iter().any(|r| r.kind == RecordKind::InjectionReport);
            let payload = run.payload.as_deref().unwrap_or(&[]);
            let payload_str = String::from_utf8_lossy(payload).into_owned();
            let executed = host.log().iter_kind(EventKind::ExecCmd).any(|rec| {
                rec.detail
                    .strip_prefix("cmd=")
                    .map(|cmd| cmd == payload_str)
                    .unwrap_or(false)
            });
            injected && executed
        }
    };
    if succeeded {
        CellOutcome::Succeeded
    } else {
        CellOutcome::Degraded
    }
}

#[allow(clippy::too_many_arguments)]
fn build_report(
    scenario: &Scenario,
    seed: u64,
    policy: &Policy,
    host: &Host,
    ticks: u64,
    attack_runs: &[AttackRun],
    outcomes: &[(String, AttackKind, CellOutcome)],
    channels: &BTreeMap<String, Vec<ExfilRecord>>,
) -> RunReport {
    let containers = host
        .containers()
        .map(|c| {
            let status = host
                .orchestrator
                .status(c.id())
                .map(|s| s.name().to_string())
                .unwrap_or_else(|| "-".to_string());
            ContainerReport {
                id: c.id().to_string(),
                managed: c.managed(),
                status,
                restart_count: host.orchestrator.restart_count(c.id()),
            }
        })
        .collect();

    let upfs: Vec<UpfReport> = host
        .upfs()
        .map(|(id, node)| UpfReport {
            id: id.to_string(),
            attached: node.pipeline.is_some(),
            counters: host.verdict_counters(id),
        })
        .collect();

    let traffic_scheduled = scenario
        .topology
        .map(|t| t.traffic.total_packets > 0)
        .unwrap_or(false);
    let redirects: u64 = upfs.iter().map(|u| u.counters.redirect).sum();
    let upf_ok = !upfs.is_empty()
        && upfs.iter().all(|u| u.attached)
        && (!traffic_scheduled || redirects > 0);

    let attacks = attack_runs
        .iter()
        .zip(outcomes)
        .map(|(run, (_, _, outcome))| {
            let channel = channels.get(&run.id).map(Vec::as_slice).unwrap_or(&[]);
            let mut record_kinds = BTreeMap::new();
            for rec in channel {
                *record_kinds.entry(rec.kind.name().to_string()).or_insert(0) += 1;
            }
            AttackReport {
                id: run.id.clone(),
                kind: run.kind.name().to_string(),
                outcome: outcome.label(),
                records: channel.len(),
                record_kinds,
            }
        })
        .collect();

    RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario: scenario.name.clone(),
        scenario_hash: format!("{:016x}", scenario.hash),
        seed,
        policy: policy.name.clone(),
        ticks_executed: ticks,
        quiescent: host.pending_events() == 0,
        upf_ok,
        containers,
        upfs,
        attacks,
        log_path: "events.log".to_string(),
    }
}

/// Write `events.log`, `report.json`, and per-attack exfil dumps under
/// `<out_root>/<scenario>/<seed>/`.
pub fn write_outputs(output: &RunOutput, out_root: &Path) -> io::Result<PathBuf> {
    let dir = out_root
        .join(&output.report.scenario)
        .join(output.report.seed.to_string());
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("events.log"), output.host.log().to_ndjson())?;
    fs::write(dir.join("report.json"), output.report.to_json())?;
    let exfil_dir = dir.join("exfil");
    fs::create_dir_all(&exfil_dir)?;
    for (attack, records) in &output.attack_channels {
        let mut text = String::new();
        for r in records {
            let line = serde_json::json!({
                "tick": r.tick,
                "kind": r.kind.name(),
                "data": String::from_utf8_lossy(&r.data),
            });
            text.push_str(&line.to_string());
            text.push('\n');
        }
        fs::write(exfil_dir.join(format!("{attack}.log")), text)?;
    }
    Ok(dir)
}
