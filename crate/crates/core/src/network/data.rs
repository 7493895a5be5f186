use super::{BranchRecord, BusRecord, NetworkData, NetworkFile};

const FEEDER_33: &str = include_str!("../../data/feeder33.json");
const FEEDER_129: &str = include_str!("../../data/feeder129.json");

/// Baran–Wu 33-bus feeder with seven PV inverters.
pub fn feeder_33() -> NetworkData {
    NetworkData::from_json_str(FEEDER_33).expect("bundled 33-bus feeder is valid")
}

/// Synthetic 129-bus feeder with 28 PV inverters (see `data/README.md`).
pub fn feeder_129() -> NetworkData {
    NetworkData::from_json_str(FEEDER_129).expect("bundled 129-bus feeder is valid")
}

/// Single-branch feeder: substation at 1.0, one PV bus with load
/// (0.1, 0.05), availability 0.1, inverter rating 0.12, limits 0.9–1.1 pu.
pub fn two_bus(r: f64, x: f64) -> NetworkData {
    NetworkData::from_file(&NetworkFile {
        base_mva: 1.0,
        v0_sq: 1.0,
        v_min_sq: 0.81,
        v_max_sq: 1.21,
        buses: vec![
            BusRecord {
                id: 0,
                p_load: 0.0,
                q_load: 0.0,
                pv_avail: 0.0,
                inv_cap: 0.0,
            },
            BusRecord {
                id: 1,
                p_load: 0.1,
                q_load: 0.05,
                pv_avail: 0.1,
                inv_cap: 0.12,
            },
        ],
        branches: vec![BranchRecord {
            from: 0,
            to: 1,
            r,
            x,
            l_max_sq: 0.5,
        }],
    })
    .expect("two-bus feeder is valid")
}
