//! Restart orchestrator for managed containers: bounded restarts with
//! doubling backoff, then CrashLoopBackOff.

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;

use super::container::ContainerId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrchestratorConfig {
    /// Restarts allowed inside the window before the container is parked.
    pub restart_threshold: u32,
    /// Sliding window, in ticks, over which restarts are counted.
    pub window: u64,
    /// First backoff delay; doubles per restart.
    pub backoff_start: u64,
    /// Backoff ceiling.
    pub backoff_cap: u64,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig {
            restart_threshold: 5,
            window: 100,
            backoff_start: 1,
            backoff_cap: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ContainerStatus {
    Healthy,
    Restarting,
    CrashLoopBackOff,
}

impl ContainerStatus {
    pub fn name(self) -> &'static str {
        match self {
            ContainerStatus::Healthy => "healthy",
            ContainerStatus::Restarting => "restarting",
            ContainerStatus::CrashLoopBackOff => "crash_loop_back_off",
        }
    }
}

#[derive(Debug, Clone)]
struct ManagedState {
    status: ContainerStatus,
    restart_count: u32,
    next_backoff: u64,
    restart_ticks: VecDeque<u64>,
}

/// Decision for a managed container whose processes are all dead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Respawn { at: u64 },
    CrashLoop,
}

#[derive(Debug)]
pub struct Orchestrator {
    config: OrchestratorConfig,
    managed: BTreeMap<ContainerId, ManagedState>,
}

impl Orchestrator {
    pub fn new(config: OrchestratorConfig) -> Self {
        Orchestrator {
            config,
            managed: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, container: ContainerId) {
        self.managed.entry(container).or_insert(ManagedState {
            status: ContainerStatus::Healthy,
            restart_count: 0,
            next_backoff: self.config.backoff_start,
            restart_ticks: VecDeque::new(),
        });
    }

    pub fn is_managed(&self, container: &ContainerId) -> bool {
        self.managed.contains_key(container)
    }

    pub fn status(&self, container: &ContainerId) -> Option<ContainerStatus> {
        self.managed.get(container).map(|s| s.status)
    }

    pub fn restart_count(&self, container: &ContainerId) -> u32 {
        self.managed.get(container).map(|s| s.restart_count).unwrap_or(0)
    }

    pub fn statuses(&self) -> impl Iterator<Item = (&ContainerId, ContainerStatus, u32)> {
        self.managed.iter().map(|(id, s)| (id, s.status, s.restart_count))
    }

    /// Should the orchestrator act on this container right now? Only when it
    /// believes the container healthy; while Restarting a respawn is already
    /// queued, and CrashLoopBackOff is terminal.
    pub fn wants_decision(&self, container: &ContainerId) -> bool {
        self.managed
            .get(container)
            .map(|s| s.status == ContainerStatus::Healthy)
            .unwrap_or(false)
    }

    /// Decide what happens to a dead managed container at tick `now`:
    /// respawn after backoff while the windowed restart count is below the
    /// threshold, CrashLoopBackOff once it would exceed it.
    pub fn on_container_dead(&mut self, container: &ContainerId, now: u64) -> Decision {
        let cfg = self.config;
        let state = self.managed.get_mut(container).expect("managed container");
        while let Some(&t) = state.restart_ticks.front() {
            if now.saturating_sub(t) > cfg.window {
                state.restart_ticks.pop_front();
            } else {
                break;
            }
        }
        if state.restart_ticks.len() as u32 >= cfg.restart_threshold {
            state.status = ContainerStatus::CrashLoopBackOff;
            return Decision::CrashLoop;
        }
        let at = now + state.next_backoff;
        state.status = ContainerStatus::Restarting;
        state.restart_count += 1;
        state.restart_ticks.push_back(now);
        state.next_backoff = (state.next_backoff * 2).min(cfg.backoff_cap);
        Decision::Respawn { at }
    }

    /// The queued respawn fired and the container's processes are back.
    pub fn on_respawned(&mut self, container: &ContainerId) {
        if let Some(state) = self.managed.get_mut(container) {
            state.status = ContainerStatus::Healthy;
        }
    }

    pub fn config(&self) -> OrchestratorConfig {
        self.config
    }
}
