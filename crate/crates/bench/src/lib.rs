//! Workload generators shared by the benchmarks.

use bpfhost::ebpf::map::{BpfMap, KeyType, MapDef, ValueType};
use bpfhost::kernel::host::SESSION_MAP_ID;
use bpfhost::rng::DetRng;
use bpfhost::upf::gtp::encode_gtp_frame;
use bpfhost::upf::session::{install_into_map, PfcpSession};
use bpfhost::upf::SessionAction;

/// Session map with `n` sequential TEIDs, 10% drop rules.
pub fn session_map(n: u32, seed: u64) -> BpfMap {
    let mut rng = DetRng::new(seed);
    let mut map = BpfMap::new(MapDef {
        id: SESSION_MAP_ID.into(),
        key: KeyType::U32,
        value: ValueType::Bytes,
        capacity: 1 << 15,
    });
    for i in 0..n {
        let action = if rng.chance(0.1) {
            SessionAction::Drop
        } else {
            SessionAction::Forward { peer: format!("dn{}", rng.below(4)) }
        };
        install_into_map(
            &mut map,
            &PfcpSession { seid: i as u64, teid: i + 1, action },
        )
        .unwrap();
    }
    map
}

/// Mixed frame stream: mostly hits, some misses, some malformed.
pub fn frames(n_sessions: u32, count: usize, seed: u64) -> Vec<Vec<u8>> {
    let mut rng = DetRng::new(seed);
    (0..count)
        .map(|_| {
            let payload = format!("p{}", rng.hex_string(12)).into_bytes();
            let roll = rng.next_f64();
            if roll < 0.05 {
                let mut frame = encode_gtp_frame(1 + rng.next_u32() % n_sessions, &payload);
                frame.truncate(2 + rng.below(8) as usize);
                frame
            } else if roll < 0.15 {
                encode_gtp_frame(n_sessions + 1000 + rng.next_u32() % 100, &payload)
            } else {
                encode_gtp_frame(1 + rng.next_u32() % n_sessions, &payload)
            }
        })
        .collect()
}
