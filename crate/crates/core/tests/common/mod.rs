#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slicesim_core::model::{LinkState, SliceId};
use slicesim_core::phy::transmit;
use slicesim_core::scheduler::{
    elastic_scale, schedule_interval, DemandEstimate, IntervalLimits, LaneInfo, PassMode, StaticLanes,
};

#[derive(Clone, Debug)]
pub struct Instance {
    pub lanes: Vec<LaneInfo>,
    pub packets: Vec<Vec<(f64, u32)>>,
    pub budget: u32,
    pub device_cap: Option<u32>,
    pub quotas: Vec<u64>,
    pub n_slices: usize,
    pub n_devices: usize,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n_slices = rng.random_range(1..=3);
    let n_devices = rng.random_range(1..=3);
    let n_lanes = rng.random_range(1..=4);
    let lanes: Vec<LaneInfo> = (0..n_lanes)
        .map(|_| {
            let slice = rng.random_range(0..n_slices);
            LaneInfo {
                slice,
                device: rng.random_range(0..n_devices),
                priority: slice > 0,
            }
        })
        .collect();
    let mut packets = vec![Vec::new(); n_lanes];
    let n_packets = rng.random_range(0..=5);
    for _ in 0..n_packets {
        let lane = rng.random_range(0..n_lanes);
        // Few distinct metric values so ties are common.
        let metric = rng.random_range(0..4) as f64 * 0.5;
        packets[lane].push((metric, rng.random_range(1..=4)));
    }
    Instance {
        lanes,
        packets,
        budget: rng.random_range(0..=6),
        device_cap: if rng.random_bool(0.5) {
            Some(rng.random_range(1..=4))
        } else {
            None
        },
        quotas: (0..n_slices).map(|_| rng.random_range(0..=6)).collect(),
        n_slices,
        n_devices,
    }
}

/// Order in which a merge of the lanes by head metric visits packets,
/// starting from `start[lane]`; ties go to the lower lane index.
fn merge_order(inst: &Instance, start: &[usize], include: &dyn Fn(&LaneInfo) -> bool) -> Vec<(usize, usize)> {
    let mut pos = start.to_vec();
    let mut order = Vec::new();
    loop {
        let mut best: Option<(usize, f64)> = None;
        for (l, info) in inst.lanes.iter().enumerate() {
            if !include(info) {
                continue;
            }
            if let Some(&(m, _)) = inst.packets[l].get(pos[l]) {
                if best.is_none_or(|(_, bm)| m > bm) {
                    best = Some((l, m));
                }
            }
        }
        let Some((l, _)) = best else { break };
        order.push((l, pos[l]));
        pos[l] += 1;
    }
    order
}

struct PassState {
    got: HashMap<(usize, usize), u32>,
    budget: u32,
    device_left: Vec<u32>,
    quota_left: Vec<u64>,
}

impl PassState {
    fn need_left(&self, inst: &Instance, l: usize, k: usize) -> u32 {
        inst.packets[l][k].1 - self.got.get(&(l, k)).copied().unwrap_or(0)
    }

    fn head(&self, inst: &Instance, l: usize) -> usize {
        (0..inst.packets[l].len())
            .find(|&k| self.need_left(inst, l, k) > 0)
            .unwrap_or(inst.packets[l].len())
    }
}

/// Exhaustively enumerates every allocation of one pass over `order` and
/// returns the lexicographically largest feasible one.
fn brute_force_pass(inst: &Instance, st: &PassState, order: &[(usize, usize)], capped: bool) -> Vec<u32> {
    let needs: Vec<u32> = order.iter().map(|&(l, k)| st.need_left(inst, l, k)).collect();
    let mut best: Option<Vec<u32>> = None;
    let mut x = vec![0u32; order.len()];
    loop {
        if feasible(inst, st, order, &x, capped) && best.as_ref().is_none_or(|b| x > *b) {
            best = Some(x.clone());
        }
        // Odometer increment over 0..=need for each position.
        let mut i = 0;
        while i < x.len() {
            if x[i] < needs[i] {
                x[i] += 1;
                break;
            }
            x[i] = 0;
            i += 1;
        }
        if i == x.len() {
            break;
        }
    }
    best.unwrap_or_default()
}

fn feasible(inst: &Instance, st: &PassState, order: &[(usize, usize)], x: &[u32], capped: bool) -> bool {
    let total: u32 = x.iter().sum();
    if total > st.budget {
        return false;
    }
    let mut dev = vec![0u32; inst.n_devices];
    let mut slice = vec![0u64; inst.n_slices];
    let mut after: HashMap<(usize, usize), u32> = st.got.clone();
    for (&(l, k), &u) in order.iter().zip(x) {
        dev[inst.lanes[l].device] += u;
        slice[inst.lanes[l].slice] += u as u64;
        *after.entry((l, k)).or_default() += u;
    }
    if dev.iter().zip(&st.device_left).any(|(u, left)| u > left) {
        return false;
    }
    if capped && slice.iter().zip(&st.quota_left).any(|(u, left)| u > left) {
        return false;
    }
    // A packet only receives units once every earlier packet of its lane is complete.
    for (&(l, k), &u) in order.iter().zip(x) {
        if u > 0 && (0..k).any(|j| after.get(&(l, j)).copied().unwrap_or(0) < inst.packets[l][j].1) {
            return false;
        }
    }
    true
}

struct OracleResult {
    units: HashMap<(usize, usize), u32>,
    within: Vec<u64>,
    reassigned: Vec<u64>,
}

fn oracle(inst: &Instance, elastic: bool) -> OracleResult {
    let mut st = PassState {
        got: HashMap::new(),
        budget: inst.budget,
        device_left: vec![inst.device_cap.unwrap_or(u32::MAX); inst.n_devices],
        quota_left: if elastic {
            inst.quotas.clone()
        } else {
            vec![u64::MAX; inst.n_slices]
        },
    };
    let mut within = vec![0u64; inst.n_slices];
    let mut reassigned = vec![0u64; inst.n_slices];
    let passes: Vec<(Option<bool>, bool)> = if elastic {
        vec![
            (Some(true), true),
            (Some(false), true),
            (Some(true), false),
            (Some(false), false),
        ]
    } else {
        vec![(None, false)]
    };
    for (class, capped) in passes {
        let start: Vec<usize> = (0..inst.lanes.len()).map(|l| st.head(inst, l)).collect();
        let order = merge_order(inst, &start, &|info: &LaneInfo| {
            class.is_none_or(|c| c == info.priority)
        });
        let x = brute_force_pass(inst, &st, &order, capped);
        for (&(l, k), &u) in order.iter().zip(&x) {
            let info = inst.lanes[l];
            *st.got.entry((l, k)).or_default() += u;
            st.budget -= u;
            st.device_left[info.device] -= u;
            if capped {
                st.quota_left[info.slice] -= u as u64;
            }
            if capped || !elastic {
                within[info.slice] += u as u64;
            } else {
                reassigned[info.slice] += u as u64;
            }
        }
    }
    st.got.retain(|_, u| *u > 0);
    OracleResult {
        units: st.got,
        within,
        reassigned,
    }
}

pub fn check(inst: &Instance, elastic: bool) {
    let mut heads = StaticLanes {
        packets: inst.packets.clone(),
    };
    let limits = IntervalLimits {
        budget: inst.budget,
        quotas: Some(&inst.quotas),
        device_cap: inst.device_cap,
        n_slices: inst.n_slices,
        n_devices: inst.n_devices,
    };
    let mode = if elastic { PassMode::Elastic } else { PassMode::Single };
    let got = schedule_interval(&inst.lanes, &mut heads, mode, &limits);
    let want = oracle(inst, elastic);
    let units: HashMap<(usize, usize), u32> = got.grants.iter().map(|g| ((g.lane, g.index), g.units)).collect();
    assert_eq!(units, want.units, "{mode:?} allocation differs on {inst:?}");
    assert_eq!(got.within_quota, want.within, "{mode:?} quota use differs on {inst:?}");
    assert_eq!(got.reassigned, want.reassigned, "{mode:?} surplus differs on {inst:?}");
    assert_eq!(
        got.used_units as u64,
        want.units.values().map(|&u| u as u64).sum::<u64>()
    );
    assert!(got.used_units <= inst.budget);
}

/// Floor plus largest-remainder rule, computed with exact integer fractions.
pub fn hand_rule(demands: &[u64], healthcare: &[bool], available: u64) -> Vec<u64> {
    let total: u64 = demands.iter().sum();
    if total <= available {
        return demands.to_vec();
    }
    let mut q: Vec<u64> = demands.iter().map(|d| d * available / total).collect();
    let mut left = available - q.iter().sum::<u64>();
    let mut idx: Vec<usize> = (0..demands.len()).collect();
    // Larger remainder first, then healthcare, then lower id.
    idx.sort_by_key(|&i| (std::cmp::Reverse(demands[i] * available % total), !healthcare[i], i));
    for i in idx {
        if left == 0 {
            break;
        }
        q[i] += 1;
        left -= 1;
    }
    q
}

pub fn failure_rate(bler: f64, seed: u64, n: usize) -> f64 {
    let link = LinkState::new(1_000.0, bler);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let failed = (0..n).filter(|_| !transmit(5_000, 10, &link, &mut rng).success).count();
    failed as f64 / n as f64
}

/// Runs the brute-force comparison on `n` random instances in both modes.
pub fn check_random_instances(seed: u64, n: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let inst = random_instance(&mut rng);
        check(&inst, false);
        check(&inst, true);
    }
}

/// Compares `elastic_scale` with [`hand_rule`] on every demand triple with
/// entries up to 10 and every budget up to 15; returns the case count.
pub fn check_elastic_scale_exhaustive() -> usize {
    let healthcare = [false, true, true];
    let mut cases = 0;
    for a in 0..=10u64 {
        for b in 0..=10u64 {
            for c in 0..=10u64 {
                let d = [a, b, c];
                let demands: Vec<DemandEstimate> = (0..3)
                    .map(|i| DemandEstimate {
                        slice: SliceId(i as u32),
                        healthcare: healthcare[i],
                        requested_units: d[i],
                    })
                    .collect();
                for available in 0..=15u64 {
                    let got = elastic_scale(&demands, available);
                    assert_eq!(
                        got,
                        hand_rule(&d, &healthcare, available),
                        "demands {d:?}, available {available}"
                    );
                    assert_eq!(got.iter().sum::<u64>(), available.min(a + b + c));
                    assert!(got.iter().zip(&d).all(|(q, r)| q <= r));
                    cases += 1;
                }
            }
        }
    }
    cases
}
