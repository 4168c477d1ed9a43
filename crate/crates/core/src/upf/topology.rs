//! Dual-slice 5G reference topology: control-plane NFs, two eUPFs with XDP
//! pipelines, SMF-driven session installs, and a seeded traffic schedule.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::gtp::{self, Direction, GtpPacket, NodeId, SliceId};
use super::session::SessionAction;
use crate::ebpf::hook::HookPoint;
use crate::ebpf::map::{KeyType, MapDef, ValueType};
use crate::ebpf::program::{EbpfProgram, ProgramBody};
use crate::kernel::container::{Capability, ContainerId, ContainerSpec};
use crate::kernel::host::{Host, HostError, ProcessSpec, SESSION_MAP_ID};
use crate::kernel::workload::{Repeat, Step, Workload};
use crate::rng::DetRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficConfig {
    pub total_packets: u64,
    pub packets_per_tick: u64,
    /// 0 = start right after the SMF finished installing sessions.
    pub start_tick: u64,
    pub malformed_ratio: f64,
    pub miss_ratio: f64,
    pub non_gtp_ratio: f64,
    pub cross_slice_ratio: f64,
    pub downlink_ratio: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            total_packets: 200,
            packets_per_tick: 4,
            start_tick: 0,
            malformed_ratio: 0.05,
            miss_ratio: 0.05,
            non_gtp_ratio: 0.05,
            cross_slice_ratio: 0.05,
            downlink_ratio: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyConfig {
    pub sessions_per_slice: u32,
    pub session_map_capacity: usize,
    /// Fraction of sessions installed with a Drop action.
    pub drop_action_ratio: f64,
    pub traffic: TrafficConfig,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            sessions_per_slice: 8,
            session_map_capacity: 1 << 14,
            drop_action_ratio: 0.1,
            traffic: TrafficConfig::default(),
        }
    }
}

/// Ground truth the topology hands back for verification.
#[derive(Debug, Clone)]
pub struct TopologyInfo {
    pub upf_a: ContainerId,
    pub upf_b: ContainerId,
    /// Installed TEIDs per slice, in install order.
    pub teids: BTreeMap<u8, Vec<u32>>,
    /// TEIDs installed with a Drop action.
    pub drop_teids: BTreeSet<u32>,
    pub udm_key: String,
    pub udm_opc: String,
    pub udm_config_path: String,
}

pub const UDM_CONFIG_PATH: &str = "/etc/udm/subscribers.conf";

/// The eUPF's legitimate data-path program. It loads and attaches through
/// the same gate as any other program.
pub fn build_xdp_forwarder(owner: &ContainerId, capacity: usize) -> EbpfProgram {
    EbpfProgram {
        id: format!("xdp-{owner}"),
        owner: owner.clone(),
        hook: HookPoint::Xdp,
        body: ProgramBody::XdpForwarder {
            session_map: SESSION_MAP_ID.to_string(),
        },
        declared_helpers: Default::default(),
        maps: vec![MapDef {
            id: SESSION_MAP_ID.to_string(),
            key: KeyType::U32,
            value: ValueType::Bytes,
            capacity,
        }],
    }
}

fn heartbeat_workload(name: &str, path: &str, period: u64) -> Workload {
    Workload {
        name: name.to_string(),
        repeat: Repeat::Forever,
        steps: vec![
            Step::Openat { path: path.to_string() },
            Step::Read { cap: 256 },
            Step::Sleep { ticks: period },
        ],
    }
}

/// Build the dual-UPF reference topology on the host. UPF pipelines go through
/// the load/attach gate under the host's active policy, so a restrictive
/// policy can legitimately leave them unattached.
pub fn build_topology(host: &mut Host, cfg: &TopologyConfig, seed: u64) -> Result<TopologyInfo, HostError> {
    let mut topo_rng = DetRng::labeled(seed, "topology");

    let upf_a: ContainerId = "eupf1".into();
    let upf_b: ContainerId = "eupf2".into();

    for nf in ["amf", "smf", "nrf", "udm"] {
        host.create_container(&ContainerSpec::new(nf))?;
    }
    for upf in [&upf_a, &upf_b] {
        host.create_container(
            &ContainerSpec::new(upf.as_str())
                .with_caps(&[Capability::NetAdmin, Capability::SysAdmin])
                .bpffs(true),
        )?;
    }

    // Namespace-local files the NF heartbeats poll.
    for nf in ["amf", "nrf"] {
        host.add_file(
            Some(&nf.into()),
            &format!("/var/log/{nf}.log"),
            b"healthy\n".to_vec(),
            false,
        )?;
    }
    host.add_file(Some(&"smf".into()), "/etc/smf/smf.yaml", b"n4: enabled\n".to_vec(), false)?;

    // Subscriber credentials the UDM re-reads periodically.
    let udm_key = topo_rng.hex_string(32);
    let udm_opc = topo_rng.hex_string(32);
    let udm_conf = format!("supi: imsi-001010000000001\nK: {udm_key}\nOPc: {udm_opc}\n");
    host.add_file(Some(&"udm".into()), UDM_CONFIG_PATH, udm_conf.into_bytes(), true)?;

    host.add_upf(&upf_a, SliceId(1), NodeId::from("gnb"))?;
    host.add_upf(&upf_b, SliceId(2), NodeId::from("gnb"))?;

    // Data-path pipelines. A denial here is a policy outcome, not an error.
    for upf in [&upf_a, &upf_b] {
        let prog = build_xdp_forwarder(upf, cfg.session_map_capacity);
        if let Ok(id) = host.load_program(prog) {
            let _ = host.attach_program(id, &HookPoint::Xdp);
        }
    }

    // Session plan: disjoint TEID ranges per slice, a fraction installed
    // with Drop actions.
    let mut teids: BTreeMap<u8, Vec<u32>> = [(1, Vec::new()), (2, Vec::new())].into();
    let mut drop_teids = BTreeSet::new();
    let mut smf_steps = vec![
        Step::Openat { path: "/etc/smf/smf.yaml".to_string() },
        Step::Read { cap: 128 },
    ];
    for (slice, upf, base) in [(1u8, &upf_a, 0x1000u32), (2u8, &upf_b, 0x2000u32)] {
        let dn = format!("dn{slice}");
        for i in 0..cfg.sessions_per_slice {
            let teid = base + i;
            let drop = topo_rng.chance(cfg.drop_action_ratio);
            if drop {
                drop_teids.insert(teid);
            }
            teids.get_mut(&slice).expect("slice seeded").push(teid);
            smf_steps.push(Step::InstallSession {
                upf: upf.to_string(),
                seid: ((slice as u64) << 32) | i as u64,
                teid,
                action: if drop {
                    SessionAction::Drop
                } else {
                    SessionAction::Forward { peer: dn.clone() }
                },
            });
        }
    }
    smf_steps.push(Step::Openat { path: "/etc/smf/smf.yaml".to_string() });
    smf_steps.push(Step::Read { cap: 128 });
    host.register_workload(Workload::once("smf-n4-install", smf_steps));

    host.register_workload(heartbeat_workload("hb-amf", "/var/log/amf.log", 3));
    host.register_workload(heartbeat_workload("hb-nrf", "/var/log/nrf.log", 5));
    host.register_workload(heartbeat_workload("hb-udm", UDM_CONFIG_PATH, 4));

    host.add_process(
        &"amf".into(),
        ProcessSpec {
            comm: "open5gs-amfd".into(),
            uid: 0,
            gid: 0,
            workload: "hb-amf".into(),
            start_tick: 2,
        },
    )?;
    host.add_process(
        &"nrf".into(),
        ProcessSpec {
            comm: "open5gs-nrfd".into(),
            uid: 0,
            gid: 0,
            workload: "hb-nrf".into(),
            start_tick: 3,
        },
    )?;
    host.add_process(
        &"udm".into(),
        ProcessSpec {
            comm: "open5gs-udmd".into(),
            uid: 0,
            gid: 0,
            workload: "hb-udm".into(),
            start_tick: 4,
        },
    )?;
    host.add_process(
        &"smf".into(),
        ProcessSpec {
            comm: "open5gs-smfd".into(),
            uid: 0,
            gid: 0,
            workload: "smf-n4-install".into(),
            start_tick: 1,
        },
    )?;

    let info = TopologyInfo {
        upf_a,
        upf_b,
        teids,
        drop_teids,
        udm_key,
        udm_opc,
        udm_config_path: UDM_CONFIG_PATH.to_string(),
    };
    schedule_traffic(host, cfg, seed, &info);
    Ok(info)
}

/// Queue the seeded packet schedule. The stream is derived from its own RNG
/// label so nothing else in the scenario can shift it.
fn schedule_traffic(host: &mut Host, cfg: &TopologyConfig, seed: u64, info: &TopologyInfo) {
    let mut rng = DetRng::labeled(seed, "traffic");
    let installs = (cfg.sessions_per_slice as u64) * 2;
    let start = if cfg.traffic.start_tick > 0 {
        cfg.traffic.start_tick
    } else {
        // SMF installs one session per tick starting at tick 1, plus its
        // bookkeeping syscall steps.
        installs + 8
    };
    let per_tick = cfg.traffic.packets_per_tick.max(1);

    let uplink = |teid: u32, dst: &ContainerId, slice: u8, payload: Vec<u8>| GtpPacket {
        outer_src: NodeId::from("gnb"),
        outer_dst: NodeId(dst.to_string()),
        teid,
        inner_payload: payload,
        direction: Direction::Uplink,
        slice: SliceId(slice),
    };

    for i in 0..cfg.traffic.total_packets {
        let tick = start + i / per_tick;
        let slice = if rng.chance(0.5) { 1u8 } else { 2u8 };
        let (own_upf, other_upf) = if slice == 1 {
            (info.upf_a.clone(), info.upf_b.clone())
        } else {
            (info.upf_b.clone(), info.upf_a.clone())
        };
        let slice_teids = &info.teids[&slice];
        let payload = format!("ue-{}", rng.hex_string(10)).into_bytes();

        // With no installed sessions everything becomes miss traffic.
        if slice_teids.is_empty() {
            let teid = 0x9000_0000 + rng.next_u32() % 0x1000;
            let pkt = uplink(teid, &own_upf, slice, payload);
            host.schedule_uplink(tick, &own_upf, pkt.encode(), Some(pkt.slice));
            continue;
        }

        let roll = rng.next_f64();
        let t = &cfg.traffic;
        if roll < t.non_gtp_ratio {
            let frame = gtp::encode_non_gtp_frame(8805, &payload);
            host.schedule_uplink(tick, &own_upf, frame, None);
        } else if roll < t.non_gtp_ratio + t.malformed_ratio {
            let pkt = uplink(*rng.pick(slice_teids), &own_upf, slice, payload);
            let frame = corrupt_frame(&mut rng, pkt.encode());
            host.schedule_uplink(tick, &own_upf, frame, Some(pkt.slice));
        } else if roll < t.non_gtp_ratio + t.malformed_ratio + t.miss_ratio {
            let teid = 0x9000_0000 + rng.next_u32() % 0x1000;
            let pkt = uplink(teid, &own_upf, slice, payload);
            host.schedule_uplink(tick, &own_upf, pkt.encode(), Some(pkt.slice));
        } else if roll < t.non_gtp_ratio + t.malformed_ratio + t.miss_ratio + t.cross_slice_ratio {
            // Misdelivered to the other slice's UPF; the disjoint session
            // tables must drop it.
            let pkt = uplink(*rng.pick(slice_teids), &other_upf, slice, payload);
            host.schedule_uplink(tick, &other_upf, pkt.encode(), Some(pkt.slice));
        } else if roll
            < t.non_gtp_ratio + t.malformed_ratio + t.miss_ratio + t.cross_slice_ratio + t.downlink_ratio
        {
            let teid = *rng.pick(slice_teids);
            host.schedule_downlink(tick, &own_upf, teid, payload, Some(SliceId(slice)));
        } else {
            let pkt = uplink(*rng.pick(slice_teids), &own_upf, slice, payload);
            host.schedule_uplink(tick, &own_upf, pkt.encode(), Some(pkt.slice));
        }
    }
}

/// Damage a valid frame so that GTP parsing must fail. Every mode keeps the
/// GTP port classification intact.
pub fn corrupt_frame(rng: &mut DetRng, mut frame: Vec<u8>) -> Vec<u8> {
    match rng.below(5) {
        0 => {
            // Truncate inside the mandatory header.
            let cut = 2 + rng.below(8) as usize;
            frame.truncate(cut);
        }
        1 => frame[2] = 0x20,        // bad version/flags
        2 => frame[3] = 0x01,        // not a G-PDU
        3 => frame[5] = frame[5].wrapping_add(7), // break the length field
        _ => {
            // Zero TEID.
            frame[6] = 0;
            frame[7] = 0;
            frame[8] = 0;
            frame[9] = 0;
        }
    }
    frame
}
