//! Scripted process workloads. Every step occupies at least one tick.

use serde::{Deserialize, Serialize};

use crate::upf::session::SessionAction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Step {
    /// openat(path) in the caller's namespace; the fd becomes current.
    Openat { path: String },
    /// read(current fd) into a fresh buffer of the given capacity.
    Read { cap: usize },
    /// write(current fd, data) appending to the file.
    Write { data: String },
    /// execve(path).
    Execve { path: String },
    /// Interpret the last read buffer as newline-separated commands and log
    /// each as executed. This is the shell side of the script workload; no
    /// command has any real effect.
    RunBuffer,
    /// Idle for the given number of ticks.
    Sleep { ticks: u64 },
    /// SMF-side N4 action: install a forwarding rule on a UPF.
    InstallSession {
        upf: String,
        seid: u64,
        teid: u32,
        #[serde(flatten)]
        action: SessionAction,
    },
    /// Finish early regardless of remaining steps.
    Exit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Repeat {
    #[default]
    Once,
    Forever,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub name: String,
    #[serde(default)]
    pub repeat: Repeat,
    pub steps: Vec<Step>,
}

impl Workload {
    pub fn once(name: &str, steps: Vec<Step>) -> Self {
        Workload {
            name: name.to_string(),
            repeat: Repeat::Once,
            steps,
        }
    }

    pub fn forever(name: &str, steps: Vec<Step>) -> Self {
        Workload {
            name: name.to_string(),
            repeat: Repeat::Forever,
            steps,
        }
    }
}
