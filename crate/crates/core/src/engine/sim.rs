//! Cycle-driven multi-SM simulation over private L1s, a shared L2 and
//! zone-local memory with per-link queuing for remote requests.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet, VecDeque};

use crate::cache::{AccessOutcome, Cache, CacheError, InsertionClass, PrefetchIssue};
use crate::descriptor::LocalityDescriptor;
use crate::engine::config::SystemConfig;
use crate::engine::metrics::{ratio, SimMetrics};
use crate::engine::policy::{owner_of, PolicySet, PrefetchPolicy};
use crate::engine::trace::AccessEvent;
use crate::engine::workload::{CtaStreams, Workload};
use crate::engine::EngineError;
use crate::grid::dtile_of_cta;
use crate::numa::{zone_of_address, FirstTouchPlacement, ZoneMapping};
use crate::prefetch::{on_miss, retire_stream, StreamState};
use crate::sched::Schedule;

/// How addresses are homed in NUMA zones.
#[derive(Debug, Clone, PartialEq)]
pub enum PlacementKind {
    /// XOR hash over the whole address space.
    Xor,
    /// Per-structure bit-range mappings; addresses outside every named
    /// structure fall back to the XOR hash.
    Mapped(BTreeMap<String, ZoneMapping>),
    /// 64 KiB pages homed at the zone that first requests them.
    FirstTouch,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    pub record_trace: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub metrics: SimMetrics,
    /// Demand accesses in issue order, when requested.
    pub trace: Option<Vec<AccessEvent>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    L1Fill { sm: u32, addr: u64 },
    L2Fill { addr: u64 },
}

struct Warp {
    pos: usize,
    ready_at: u64,
}

struct ResidentCta {
    cta: u64,
    warps: Vec<Warp>,
}

struct Sm {
    zone: u32,
    l1: Cache,
    queue: VecDeque<u64>,
    resident: Vec<ResidentCta>,
    rr: usize,
    /// Fill cycle of every outstanding L1 line.
    pending: HashMap<u64, u64>,
    streams: Vec<Option<StreamState>>,
    /// Per descriptor: D-tile -> CTAs on this SM that still have to finish it.
    dtile_users: Vec<HashMap<u64, u32>>,
    lines: HashSet<u64>,
}

struct Memory<'a> {
    cfg: &'a SystemConfig,
    descs: &'a [LocalityDescriptor],
    placement: &'a PlacementKind,
    mapped: Vec<Option<ZoneMapping>>,
    first_touch: FirstTouchPlacement,
    l2: Cache,
    l2_pending: HashMap<u64, u64>,
    /// Next free time of each directed link, `[src * zones + dst]`.
    link_free: Vec<f64>,
    zone_requests: Vec<u64>,
    local: u64,
    remote: u64,
    events: BinaryHeap<Reverse<(u64, u64, Event)>>,
    seq: u64,
}

impl Memory<'_> {
    fn push(&mut self, at: u64, ev: Event) {
        self.seq += 1;
        self.events.push(Reverse((at, self.seq, ev)));
    }

    fn home_zone(&mut self, addr: u64, requester_zone: u32) -> u32 {
        let zc = self.cfg.zone_count;
        let xor = ZoneMapping::xor_hash(zc);
        match self.placement {
            PlacementKind::Xor => zone_of_address(addr, &xor, zc, None).expect("xor is total"),
            PlacementKind::Mapped(_) => {
                let m = owner_of(self.descs, addr)
                    .and_then(|i| self.mapped[i])
                    .unwrap_or(xor);
                zone_of_address(addr, &m, zc, None).unwrap_or(0)
            }
            PlacementKind::FirstTouch => self.first_touch.touch(addr, requester_zone),
        }
    }

    /// Sends a line request from an SM in `zone` at `now`; returns its
    /// completion cycle.
    fn request(&mut self, addr: u64, zone: u32, now: u64) -> u64 {
        let lat = self.cfg.latencies;
        let home = self.home_zone(addr, zone);
        self.zone_requests[home as usize] += 1;
        let local = home == zone;
        let mut start = now;
        if local {
            self.local += 1;
        } else {
            self.remote += 1;
            let link = (zone * self.cfg.zone_count + home) as usize;
            let s = self.link_free[link].max(now as f64);
            self.link_free[link] = s + 1.0 / self.cfg.remote_link_capacity;
            start = s.ceil() as u64;
        }
        let remote_extra = if local { 0 } else { lat.remote_mem - lat.local_mem.min(lat.remote_mem) };
        let mem = if local { lat.local_mem } else { lat.remote_mem };
        let line = self.l2.line_of(addr);
        match self.l2.access(addr, InsertionClass::Normal, start) {
            Ok(AccessOutcome::Hit) => start + lat.l2_hit + remote_extra,
            Ok(AccessOutcome::InflightHit) => self
                .l2_pending
                .get(&line)
                .copied()
                .unwrap_or(start + lat.l2_hit)
                .max(start + lat.l2_hit),
            Ok(AccessOutcome::Miss) => {
                let t = start + mem;
                self.l2_pending.insert(line, t);
                self.push(t, Event::L2Fill { addr });
                t
            }
            Err(_) => start + mem,
        }
    }
}

/// Simulates `workload` with generated access streams.
pub fn simulate(
    workload: &Workload,
    config: &SystemConfig,
    schedule: &Schedule,
    placement: &PlacementKind,
    policies: &PolicySet,
) -> Result<SimMetrics, EngineError> {
    let streams = workload.streams();
    simulate_streams(workload, &streams, config, schedule, placement, policies, SimOptions::default())
        .map(|o| o.metrics)
}

/// Simulates explicit per-warp streams (generated or replayed from a trace).
pub fn simulate_streams(
    workload: &Workload,
    streams: &CtaStreams,
    config: &SystemConfig,
    schedule: &Schedule,
    placement: &PlacementKind,
    policies: &PolicySet,
    opts: SimOptions,
) -> Result<SimOutput, EngineError> {
    config.validate()?;
    let grid = &workload.grid;
    let descs = &workload.descriptors;
    let ctas = grid.cta_count() as usize;
    if schedule.assignment.len() != ctas {
        return Err(EngineError::ConfigMismatch(format!(
            "schedule covers {} CTAs but the grid has {ctas}",
            schedule.assignment.len()
        )));
    }
    if schedule.sm_count != config.sm_count {
        return Err(EngineError::ConfigMismatch(format!(
            "schedule targets {} SMs but the system has {}",
            schedule.sm_count, config.sm_count
        )));
    }
    if schedule.assignment.iter().any(|&s| s >= config.sm_count) {
        return Err(EngineError::ConfigMismatch("schedule names an SM outside the system".into()));
    }
    if streams.streams.len() != ctas
        || streams.streams.iter().any(|w| w.len() != grid.warps_per_cta as usize)
    {
        return Err(EngineError::ConfigMismatch("access streams do not match the grid".into()));
    }
    if policies.per_descriptor.len() != descs.len() {
        return Err(EngineError::ConfigMismatch("one policy per descriptor is required".into()));
    }
    if workload.line_size != config.l1.line_size {
        return Err(EngineError::ConfigMismatch("workload and L1 line sizes differ".into()));
    }

    let zc = config.zone_count;
    let mapped = match placement {
        PlacementKind::Mapped(m) => descs.iter().map(|d| m.get(&d.data.name).copied()).collect(),
        _ => vec![None; descs.len()],
    };
    let mut mem = Memory {
        cfg: config,
        descs,
        placement,
        mapped,
        first_touch: FirstTouchPlacement::default(),
        l2: Cache::new(config.l2)?,
        l2_pending: HashMap::new(),
        link_free: vec![0.0; (zc * zc) as usize],
        zone_requests: vec![0; zc as usize],
        local: 0,
        remote: 0,
        events: BinaryHeap::new(),
        seq: 0,
    };

    let per_sm = schedule.ctas_per_sm();
    let mut sms = Vec::with_capacity(config.sm_count as usize);
    for (sm_id, hosted) in per_sm.iter().enumerate() {
        let mut dtile_users = vec![HashMap::new(); descs.len()];
        let mut streams_state = vec![None; descs.len()];
        for (i, d) in descs.iter().enumerate() {
            if policies.per_descriptor[i].prefetch == PrefetchPolicy::None {
                continue;
            }
            streams_state[i] = Some(StreamState::new(d));
            for &cta in hosted {
                let t = dtile_of_cta(grid.cta_coords(cta), d, grid).expect("validated").flat;
                *dtile_users[i].entry(t).or_insert(0) += 1;
            }
        }
        sms.push(Sm {
            zone: config.zone_of_sm(sm_id as u32),
            l1: Cache::new(config.l1)?,
            queue: hosted.iter().copied().collect(),
            resident: Vec::new(),
            rr: 0,
            pending: HashMap::new(),
            streams: streams_state,
            dtile_users,
            lines: HashSet::new(),
        });
    }

    let lat = config.latencies;
    let line_size = config.l1.line_size;
    let mut trace = opts.record_trace.then(Vec::new);
    let mut now: u64 = 0;
    let mut last_completion: u64 = 0;

    loop {
        while let Some(Reverse((t, _, ev))) = mem.events.peek().copied() {
            if t > now {
                break;
            }
            mem.events.pop();
            match ev {
                Event::L1Fill { sm, addr } => {
                    let s = &mut sms[sm as usize];
                    s.l1.fill(addr, t);
                    let line = s.l1.line_of(addr);
                    if s.pending.get(&line) == Some(&t) {
                        s.pending.remove(&line);
                    }
                }
                Event::L2Fill { addr } => {
                    mem.l2.fill(addr, t);
                    let line = mem.l2.line_of(addr);
                    if mem.l2_pending.get(&line) == Some(&t) {
                        mem.l2_pending.remove(&line);
                    }
                }
            }
        }
        mem.l2.tick(now);

        let mut busy = false;
        let mut all_done = true;
        for (sm_id, sm) in sms.iter_mut().enumerate() {
            sm.l1.tick(now);

            // retire finished CTAs
            let mut k = 0;
            while k < sm.resident.len() {
                let c = &sm.resident[k];
                let done = c.warps.iter().enumerate().all(|(w, ws)| {
                    ws.pos >= streams.streams[c.cta as usize][w].len() && ws.ready_at <= now
                });
                if done {
                    let cta = sm.resident.remove(k).cta;
                    for (i, d) in descs.iter().enumerate() {
                        let Some(state) = sm.streams[i].as_mut() else { continue };
                        let t = dtile_of_cta(grid.cta_coords(cta), d, grid).expect("validated").flat;
                        let users = sm.dtile_users[i].get_mut(&t).expect("counted at start");
                        *users -= 1;
                        if *users == 0 {
                            // the stream may never have missed
                            let _ = retire_stream(t, state);
                        }
                    }
                } else {
                    k += 1;
                }
            }
            while sm.resident.len() < config.max_resident_ctas_per_sm as usize {
                let Some(cta) = sm.queue.pop_front() else { break };
                sm.resident.push(ResidentCta {
                    cta,
                    warps: (0..grid.warps_per_cta)
                        .map(|_| Warp { pos: 0, ready_at: now })
                        .collect(),
                });
            }
            if sm.resident.is_empty() {
                continue;
            }
            all_done = false;

            // one access per cycle, round-robin over ready warps
            let slots: Vec<(usize, usize)> = sm
                .resident
                .iter()
                .enumerate()
                .flat_map(|(c, r)| (0..r.warps.len()).map(move |w| (c, w)))
                .collect();
            let n = slots.len();
            let pick = (0..n).map(|o| (sm.rr + o) % n).find(|&i| {
                let (c, w) = slots[i];
                let r = &sm.resident[c];
                r.warps[w].ready_at <= now && r.warps[w].pos < streams.streams[r.cta as usize][w].len()
            });
            let Some(slot) = pick else { continue };
            let (c, w) = slots[slot];
            let cta = sm.resident[c].cta;
            let addr = streams.streams[cta as usize][w][sm.resident[c].warps[w].pos];
            let owner = owner_of(descs, addr);
            let policy = owner.map(|i| policies.per_descriptor[i]);
            let class = policy.map_or(InsertionClass::Normal, |p| p.insertion);
            let line = sm.l1.line_of(addr);

            let ready = match sm.l1.access(addr, class, now) {
                Err(CacheError::MshrFull) => {
                    busy = true;
                    continue;
                }
                Err(e) => return Err(e.into()),
                Ok(AccessOutcome::Hit) => now + lat.l1_hit,
                Ok(AccessOutcome::InflightHit) => sm
                    .pending
                    .get(&line)
                    .copied()
                    .unwrap_or(now + lat.l1_hit)
                    .max(now + lat.l1_hit),
                Ok(AccessOutcome::Miss) => {
                    let t = mem.request(addr, sm.zone, now);
                    sm.pending.insert(line, t);
                    mem.push(t, Event::L1Fill { sm: sm_id as u32, addr });
                    if let (Some(i), Some(p)) = (owner, policy) {
                        if let Some(state) = sm.streams[i].as_mut() {
                            let pclass = p.insertion.max(InsertionClass::Normal);
                            for r in on_miss(addr, &descs[i], config.l1.capacity, line_size, state) {
                                if sm.l1.prefetch(r.addr, pclass) == PrefetchIssue::Issued {
                                    let tp = mem.request(r.addr, sm.zone, now);
                                    sm.pending.insert(sm.l1.line_of(r.addr), tp);
                                    mem.push(tp, Event::L1Fill { sm: sm_id as u32, addr: r.addr });
                                }
                            }
                        }
                    }
                    t
                }
            };
            busy = true;
            sm.rr = (slot + 1) % n;
            let ws = &mut sm.resident[c].warps[w];
            ws.pos += 1;
            ws.ready_at = ready;
            last_completion = last_completion.max(ready);
            sm.lines.insert(line);
            if let Some(t) = trace.as_mut() {
                t.push(AccessEvent {
                    sm: sm_id as u32,
                    cta,
                    warp: w as u32,
                    addr,
                    cycle: now,
                });
            }
        }

        if all_done {
            break;
        }
        let next = if busy {
            now + 1
        } else {
            let warp_next = sms
                .iter()
                .flat_map(|s| s.resident.iter().flat_map(|r| r.warps.iter().map(|w| w.ready_at)))
                .filter(|&t| t > now)
                .min();
            let ev_next = mem.events.peek().map(|Reverse((t, _, _))| *t);
            [warp_next, ev_next]
                .into_iter()
                .flatten()
                .min()
                .unwrap_or(now + 1)
                .max(now + 1)
        };
        now = next;
    }

    let mut stats = crate::cache::CacheStats::default();
    for s in &sms {
        let st = s.l1.stats();
        stats.hits += st.hits;
        stats.inflight_hits += st.inflight_hits;
        stats.misses += st.misses;
        stats.prefetch_issued += st.prefetch_issued;
        stats.prefetch_useful += st.prefetch_useful;
    }
    let demand = stats.demand_accesses();
    let working_set: Vec<u64> = sms.iter().map(|s| s.lines.len() as u64).collect();
    let requests = mem.local + mem.remote;
    let zone_access_distribution = if requests == 0 {
        vec![1.0 / zc as f64; zc as usize]
    } else {
        mem.zone_requests.iter().map(|&r| ratio(r, requests)).collect()
    };
    let l2 = mem.l2.stats();
    let metrics = SimMetrics {
        demand_accesses: demand,
        l1_hits: stats.hits,
        l1_inflight_hits: stats.inflight_hits,
        l1_misses: stats.misses,
        l1_hit_rate: ratio(stats.hits, demand),
        inflight_hit_rate: ratio(stats.inflight_hits, demand),
        avg_working_set: working_set.iter().sum::<u64>() as f64 / working_set.len() as f64,
        working_set,
        memory_requests: requests,
        access_efficiency: if requests == 0 { 1.0 } else { ratio(mem.local, requests) },
        zone_access_distribution,
        remote_traffic: mem.remote,
        l2_hit_rate: ratio(l2.hits, l2.demand_accesses()),
        prefetch_issued: stats.prefetch_issued,
        prefetch_useful: stats.prefetch_useful,
        prefetch_accuracy: ratio(stats.prefetch_useful, stats.prefetch_issued),
        total_cycles: last_completion,
    };
    Ok(SimOutput { metrics, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::tests::simple_desc;
    use crate::engine::policy::{select_policies, Features};
    use crate::grid::{CtaGrid, Dim3};
    use crate::sched::{baseline_round_robin, Schedule};

    fn one_sm() -> SystemConfig {
        SystemConfig {
            sm_count: 1,
            ..SystemConfig::desk()
        }
    }

    #[test]
    fn hits_dominate_with_heavy_reuse() {
        // 16 CTAs all reading the same 4 KiB tile on one SM
        let d = simple_desc(Dim3::new(1024, 1, 1), Dim3::new(1024, 1, 1), Dim3::new(16, 1, 1));
        let grid = CtaGrid::new(Dim3::new(16, 1, 1), 2);
        let w = Workload::new(&[d], grid.clone(), 1, 128).unwrap();
        let p = select_policies(&w.descriptors).restricted(Features::NONE);
        let m = simulate(&w, &one_sm(), &baseline_round_robin(&grid, 1), &PlacementKind::Xor, &p).unwrap();
        assert_eq!(m.demand_accesses, 16 * 32);
        assert_eq!(m.l1_hits + m.l1_inflight_hits + m.l1_misses, m.demand_accesses);
        assert_eq!(m.l1_misses, 32);
        assert!(m.l1_hit_rate + m.inflight_hit_rate > 0.9);
        assert_eq!(m.working_set, vec![32]);

        // more reuse after warmup pushes the hit rate toward 1
        let d = simple_desc(Dim3::new(1024, 1, 1), Dim3::new(1024, 1, 1), Dim3::new(128, 1, 1));
        let grid = CtaGrid::new(Dim3::new(128, 1, 1), 2);
        let w = Workload::new(&[d], grid.clone(), 1, 128).unwrap();
        let m2 = simulate(&w, &one_sm(), &baseline_round_robin(&grid, 1), &PlacementKind::Xor, &p).unwrap();
        assert!(m2.l1_hit_rate > m.l1_hit_rate);
        assert!(m2.l1_hit_rate > 0.9, "{}", m2.l1_hit_rate);
    }

    #[test]
    fn mismatched_schedule_rejected() {
        let d = simple_desc(Dim3::new(1024, 1, 1), Dim3::new(1024, 1, 1), Dim3::new(4, 1, 1));
        let grid = CtaGrid::new(Dim3::new(4, 1, 1), 2);
        let w = Workload::new(&[d], grid, 1, 128).unwrap();
        let p = select_policies(&w.descriptors);
        let bad = Schedule {
            assignment: vec![0; 3],
            sm_count: 1,
        };
        assert!(matches!(
            simulate(&w, &one_sm(), &bad, &PlacementKind::Xor, &p),
            Err(EngineError::ConfigMismatch(_))
        ));
    }

    #[test]
    fn trace_records_every_demand_access() {
        let d = simple_desc(Dim3::new(2048, 1, 1), Dim3::new(1024, 1, 1), Dim3::new(2, 1, 1));
        let grid = CtaGrid::new(Dim3::new(4, 1, 1), 2);
        let w = Workload::new(&[d], grid.clone(), 1, 128).unwrap();
        let p = select_policies(&w.descriptors);
        let cfg = SystemConfig { sm_count: 2, ..SystemConfig::desk() };
        let out = simulate_streams(
            &w,
            &w.streams(),
            &cfg,
            &baseline_round_robin(&grid, 2),
            &PlacementKind::Xor,
            &p,
            SimOptions { record_trace: true },
        )
        .unwrap();
        assert_eq!(out.trace.unwrap().len() as u64, out.metrics.demand_accesses);
        assert!(out.metrics.prefetch_issued > 0);
        assert!((0.0..=1.0).contains(&out.metrics.prefetch_accuracy));
    }
}
