use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp};

use super::batching::BatchPolicy;
use super::report::{percentiles, CoreBusy, LinkStats, OpEvent, SimReport};
use super::timeline::{earliest_common, Timeline};
use super::transfer::{edge_bytes, Batching, EdgeBytes, Route, TransferPlan};
use super::{LookupModel, Request, Result, SimConfig, SimError, Traffic};
use crate::graph::OpKind;
use crate::hardware::{
    compute_precision, link_bw, op_latency_terms, transfer_latency, HardwareConfig, Link, Placement, ResidencyPlan,
};
use crate::partition::{Device, ExecutionPlan};

/// Sink partition index for tensors delivered back to the host as outputs.
const SINK: usize = usize::MAX;

/// An SLS op whose index count varies per request.
struct Site {
    op: usize,
    /// Pooled rows per compiled batch.
    rows: usize,
    max_lookups: u64,
    avg: Option<f64>,
}

struct PartOp {
    op: usize,
    core: usize,
    /// Roofline latency per candidate card (one entry on the host).
    base: Vec<f64>,
    site: Option<usize>,
}

/// Direction of one link; each direction is its own timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Lane {
    Up(Link),
    Down(Link),
}

impl Lane {
    fn link(self) -> Link {
        match self {
            Lane::Up(l) | Lane::Down(l) => l,
        }
    }
}

struct State<'a> {
    plan: &'a ExecutionPlan,
    hw: &'a HardwareConfig,
    cfg: &'a SimConfig,
    cores: BTreeMap<(usize, usize), Timeline>,
    host: BTreeMap<usize, Timeline>,
    lanes: BTreeMap<Lane, Timeline>,
    nic: Timeline,
    links: BTreeMap<String, LinkStats>,
    kind_time: BTreeMap<String, f64>,
    traversals: u64,
    index: (u64, f64, f64),
    trace: Vec<OpEvent>,
}

fn key(x: f64) -> u64 {
    // arrival and completion times are non-negative, so the bit pattern
    // orders like the value
    x.max(0.0).to_bits()
}

impl<'a> State<'a> {
    /// Books one transaction over `lanes` no earlier than `t`; returns its end.
    fn transact(&mut self, lanes: &[Lane], bytes: f64, t: f64) -> Result<f64> {
        let mut d = 0.0f64;
        for lane in lanes {
            d = d.max(transfer_latency(bytes, lane.link(), 1, self.hw)?);
        }
        let s = {
            let lines: Vec<&Timeline> = lanes.iter().map(|l| self.lanes.get(l).expect("lane exists")).collect();
            earliest_common(&lines, t, d)
        };
        for lane in lanes {
            self.lanes.get_mut(lane).expect("lane exists").reserve(s, d);
            let st = self.links.entry(lane.link().name()).or_default();
            st.bytes += bytes;
            st.transactions += 1;
            st.busy_s += d;
        }
        Ok(s + d)
    }

    /// Moves one window of transfers from `src` to `dst` starting at `t`.
    /// Returns the arrival time of each transfer.
    fn window(&mut self, src: Device, dst: Device, route: Route, batching: Batching, sizes: &[f64], t: f64) -> Result<Vec<f64>> {
        if src == dst || route == Route::Local {
            return Ok(vec![t; sizes.len()]);
        }
        let groups: Vec<Vec<usize>> = match batching {
            Batching::CommandBatched => vec![(0..sizes.len()).collect()],
            Batching::PerEdge => (0..sizes.len()).map(|i| vec![i]).collect(),
        };
        let mut arrivals = vec![t; sizes.len()];
        for group in groups {
            let bytes: f64 = group.iter().map(|&i| sizes[i]).sum();
            let end = match (src, dst) {
                (Device::Host, Device::Card(c)) => self.transact(&[Lane::Down(Link::HostUplink), Lane::Down(Link::Card(c))], bytes, t)?,
                (Device::Card(c), Device::Host) => self.transact(&[Lane::Up(Link::Card(c)), Lane::Up(Link::HostUplink)], bytes, t)?,
                (Device::Card(a), Device::Card(b)) => match route {
                    Route::P2p => self.transact(&[Lane::Up(Link::Card(a)), Lane::Down(Link::Card(b))], bytes, t)?,
                    _ => {
                        let mid = self.transact(&[Lane::Up(Link::Card(a)), Lane::Up(Link::HostUplink)], bytes, t)?;
                        self.transact(&[Lane::Down(Link::HostUplink), Lane::Down(Link::Card(b))], bytes, mid)?
                    }
                },
                (Device::Host, Device::Host) => t,
            };
            for i in group {
                arrivals[i] = end;
            }
        }
        Ok(arrivals)
    }
}

/// Topological order of partitions along plan edges.
fn partition_order(plan: &ExecutionPlan) -> Result<Vec<usize>> {
    let n = plan.partitions.len();
    let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    let mut indeg = vec![0usize; n];
    for e in plan.edges() {
        if let (Some(s), Some(d)) = (e.src, e.dst) {
            if succ[s].insert(d) {
                indeg[d] += 1;
            }
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&p| indeg[p] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(p) = ready.pop_first() {
        order.push(p);
        for &d in &succ[p] {
            indeg[d] -= 1;
            if indeg[d] == 0 {
                ready.insert(d);
            }
        }
    }
    if order.len() != n {
        return Err(SimError::Unschedulable("partitions form a cycle".into()));
    }
    Ok(order)
}

fn candidate_devices(plan: &ExecutionPlan, p: usize) -> Vec<Device> {
    let part = &plan.partitions[p];
    if part.on_host() {
        vec![Device::Host]
    } else {
        part.cards().map(Device::Card).collect()
    }
}

/// Runs the plan under `cfg` and reports steady-state behavior.
pub fn simulate(plan: &ExecutionPlan, transfers: &TransferPlan, hw: &HardwareConfig, cfg: &SimConfig) -> Result<SimReport> {
    hw.validate()?;
    cfg.validate()?;
    plan.validate(hw)?;
    for e in &transfers.edges {
        if e.route == Route::P2p && !hw.p2p_enabled {
            return Err(SimError::Invalid(format!("p2p route for {} but p2p is disabled", e.edge.tensor)));
        }
    }
    let g = &plan.graph;
    let order = partition_order(plan)?;

    // SLS sites and static per-op latencies
    let mut sites: Vec<Site> = Vec::new();
    let mut site_of: HashMap<usize, usize> = HashMap::new();
    for (i, op) in g.ops.iter().enumerate().filter(|(_, o)| o.kind == OpKind::SLS) {
        site_of.insert(i, sites.len());
        sites.push(Site {
            op: i,
            rows: g.tensors.get(&op.outputs[0]).and_then(|t| t.shape.first().copied()).unwrap_or(1),
            max_lookups: op.attrs.max_lookups.unwrap_or(1).max(1) as u64,
            avg: op.attrs.avg_lookups,
        });
    }
    let op_index = g.op_index();
    let empty = ResidencyPlan::default();
    let mut parts: Vec<Vec<PartOp>> = Vec::with_capacity(plan.partitions.len());
    for (p, part) in plan.partitions.iter().enumerate() {
        let devices = candidate_devices(plan, p);
        let mut ops = Vec::with_capacity(part.ops.len());
        for id in &part.ops {
            let i = op_index[id.as_str()];
            let op = &g.ops[i];
            let pl = plan.placement[id];
            let mut base = Vec::with_capacity(devices.len());
            for d in &devices {
                let (place, res) = match *d {
                    Device::Host => (Placement::Host, &empty),
                    Device::Card(c) => (Placement::Card { card: c, cores: 1 }, plan.residency.get(&c).unwrap_or(&empty)),
                };
                base.push(op_latency_terms(g, op, compute_precision(g, op), place, res, hw, None)?.total());
            }
            ops.push((pl.start, pl.core, pl.seq, PartOp { op: i, core: pl.core, base, site: site_of.get(&i).copied() }));
        }
        ops.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        parts.push(ops.into_iter().map(|(_, _, _, o)| o).collect());
    }

    // outbound edges per source (None = batch inputs from the host)
    let mut outbound: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, e) in transfers.edges.iter().enumerate() {
        outbound.entry(e.edge.src).or_default().push(i);
    }
    let graph_inputs: BTreeSet<&str> = g.inputs.iter().map(String::as_str).collect();

    // NIC payload per graph input
    let nic_bw = link_bw(Link::Nic, hw)?;
    let mut payload: Vec<(EdgeBytes, u64)> = Vec::new();
    for t in &g.inputs {
        payload.push(edge_bytes(g, t, true)?);
    }

    let mut st = State {
        plan,
        hw,
        cfg,
        cores: BTreeMap::new(),
        host: BTreeMap::new(),
        lanes: BTreeMap::new(),
        nic: Timeline::default(),
        links: BTreeMap::new(),
        kind_time: BTreeMap::new(),
        traversals: 0,
        index: (0, 0.0, 0.0),
        trace: Vec::new(),
    };
    for (c, card) in hw.cards.iter().enumerate() {
        for k in 0..card.cores {
            st.cores.insert((c, k), Timeline::default());
        }
        st.lanes.insert(Lane::Up(Link::Card(c)), Timeline::default());
        st.lanes.insert(Lane::Down(Link::Card(c)), Timeline::default());
    }
    st.lanes.insert(Lane::Up(Link::HostUplink), Timeline::default());
    st.lanes.insert(Lane::Down(Link::HostUplink), Timeline::default());

    // request generation
    let n_per_batch = cfg.batch.max_requests();
    let items = (cfg.compiled_batch / n_per_batch).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let constraint = cfg.latency_constraint_ms * 1e-3;
    let mut requests: Vec<Request> = Vec::new();
    let mut nic_done: Vec<f64> = Vec::new();
    let mut nic_bytes = 0.0;
    let mut make = |arrival: f64, requests: &mut Vec<Request>, nic_done: &mut Vec<f64>, nic: &mut Timeline| -> Result<()> {
        let mut lookups = Vec::with_capacity(sites.len());
        for s in &sites {
            let rows = (s.rows as f64 * items as f64 / cfg.compiled_batch as f64).round() as u64;
            let capacity = rows * s.max_lookups;
            let n = match cfg.lookups {
                LookupModel::Occupancy { fraction } => (fraction * capacity as f64).round() as u64,
                LookupModel::Annotated => match s.avg {
                    Some(avg) => {
                        let p = (avg / s.max_lookups as f64).clamp(0.0, 1.0);
                        Binomial::new(capacity, p)
                            .map_err(|e| SimError::Invalid(format!("lookup distribution: {e}")))?
                            .sample(&mut rng)
                    }
                    None => capacity,
                },
            };
            lookups.push(n);
        }
        let tokens = cfg.lengths.map(|l| rng.gen_range(l.min..=l.max));
        let id = requests.len();
        let mut bytes = 0.0;
        for (eb, full) in &payload {
            bytes += match eb {
                EdgeBytes::PerIndex { site, bytes_per_index } => {
                    let s = sites.iter().position(|x| g.ops[x.op].id == *site).expect("site exists");
                    (lookups[s] * bytes_per_index) as f64
                }
                _ => *full as f64 * items as f64 / cfg.compiled_batch as f64,
            };
        }
        nic_bytes += bytes;
        let d = bytes / nic_bw;
        let s = nic.book(arrival, d);
        nic_done.push(s + d);
        requests.push(Request {
            id,
            arrival,
            items,
            lookups,
            tokens,
            deadline: arrival + constraint,
        });
        Ok(())
    };

    let mut pending: BTreeSet<(u64, usize)> = BTreeSet::new();
    let (mut remaining, closed) = match cfg.traffic {
        Traffic::ClosedLoop { concurrency, count } => {
            for _ in 0..concurrency.min(count) {
                make(0.0, &mut requests, &mut nic_done, &mut st.nic)?;
                pending.insert((key(0.0), requests.len() - 1));
            }
            (count - concurrency.min(count), true)
        }
        Traffic::OpenLoop { rate, duration_s, seed } => {
            if rate > 0.0 {
                let mut arr = ChaCha8Rng::seed_from_u64(seed);
                let exp = Exp::new(rate).map_err(|e| SimError::Invalid(format!("arrival rate: {e}")))?;
                let mut t = exp.sample(&mut arr);
                while t < duration_s {
                    make(t, &mut requests, &mut nic_done, &mut st.nic)?;
                    pending.insert((key(t), requests.len() - 1));
                    t += exp.sample(&mut arr);
                }
            }
            (0, false)
        }
    };

    let compiled_len = cfg.compiled_len.or(match &cfg.batch {
        BatchPolicy::LengthBucketed { boundaries, .. } => boundaries.iter().copied().max(),
        BatchPolicy::FixedSize { .. } => None,
    });

    let mut completion: Vec<Option<f64>> = Vec::new();
    let mut inflight: BinaryHeap<Reverse<u64>> = BinaryHeap::new();
    let mut t_prev = 0.0f64;
    let mut batch_idx = 0usize;
    let mut wasted = 0.0;
    while let Some(&(first, _)) = pending.first() {
        let mut t = t_prev.max(f64::from_bits(first));
        while inflight.len() >= cfg.max_inflight {
            let Reverse(c) = inflight.pop().expect("non-empty");
            t = t.max(f64::from_bits(c));
        }
        while inflight.peek().is_some_and(|Reverse(c)| f64::from_bits(*c) <= t) {
            inflight.pop();
        }
        // the batch: oldest pending request plus FIFO companions sharing its padding
        let eligible: Vec<usize> = pending.iter().take_while(|(a, _)| f64::from_bits(*a) <= t).map(|(_, id)| *id).collect();
        let pad = |r: &Request| cfg.batch.padded_len(r.tokens.unwrap_or(0));
        let lead_pad = pad(&requests[eligible[0]])?;
        let mut members = Vec::new();
        let mut padded_total = 0usize;
        let mut actual_total = 0usize;
        for id in eligible {
            if members.len() == n_per_batch {
                break;
            }
            if pad(&requests[id])? == lead_pad {
                members.push(id);
                if let Some(p) = lead_pad {
                    padded_total += p;
                    actual_total += requests[id].tokens.unwrap_or(0);
                }
            }
        }
        for &id in &members {
            pending.remove(&(key(requests[id].arrival), id));
        }
        if padded_total > 0 {
            wasted += (padded_total - actual_total) as f64 / padded_total as f64;
        }
        let scale = match (lead_pad, compiled_len) {
            (Some(p), Some(c)) if c > 0 => p as f64 / c as f64,
            _ => 1.0,
        };

        let done = run_batch(&mut st, &parts, &order, &outbound, transfers, &graph_inputs, &sites, &requests, &nic_done, &members, batch_idx, t, scale)?;
        if completion.len() < requests.len() {
            completion.resize(requests.len(), None);
        }
        for &id in &members {
            completion[id] = Some(done);
        }
        inflight.push(Reverse(key(done)));
        if closed {
            for _ in &members {
                if remaining == 0 {
                    break;
                }
                remaining -= 1;
                make(done, &mut requests, &mut nic_done, &mut st.nic)?;
                pending.insert((key(done), requests.len() - 1));
            }
        }
        t_prev = t;
        batch_idx += 1;
    }
    completion.resize(requests.len(), None);

    // report
    let mut done: Vec<(f64, usize)> = completion.iter().enumerate().filter_map(|(i, c)| c.map(|c| (c, i))).collect();
    done.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = done.len();
    let warm = n / 10;
    let steady = &done[warm..];
    let latencies_s: Vec<f64> = steady.iter().map(|&(c, i)| c - requests[i].arrival).collect();
    let deadline_misses = done.iter().filter(|&&(c, i)| c > requests[i].deadline).count();
    let span_s = done.last().map_or(0.0, |d| d.0);
    let window_start = if warm > 0 {
        done[warm - 1].0
    } else {
        requests.iter().map(|r| r.arrival).fold(f64::INFINITY, f64::min)
    };
    let throughput_rps = match steady.last() {
        Some(&(end, _)) if end > window_start => steady.len() as f64 / (end - window_start),
        _ => 0.0,
    };
    let core_busy = if n == 0 {
        Vec::new()
    } else {
        st.cores
            .iter()
            .map(|(&(card, core), tl)| CoreBusy {
                card,
                core,
                busy_s: tl.busy_time(),
                fraction: if span_s > 0.0 { (tl.busy_time() / span_s).min(1.0) } else { 0.0 },
            })
            .collect()
    };
    let total_kind: f64 = st.kind_time.values().sum();
    let op_share = if total_kind > 0.0 {
        st.kind_time.iter().map(|(k, v)| (k.clone(), v / total_kind)).collect()
    } else {
        BTreeMap::new()
    };
    Ok(SimReport {
        requests: requests.len(),
        completed: n,
        in_flight: requests.len() - n,
        batches: batch_idx,
        percentiles: percentiles(&latencies_s),
        latencies_s,
        throughput_rps,
        span_s,
        core_busy,
        op_share,
        links: st.links,
        nic_bytes,
        sparse_dense_traversals: st.traversals,
        index_count: st.index.0,
        index_bytes: st.index.1,
        index_static_bytes: st.index.2,
        deadline_misses,
        mean_wasted_fraction: if batch_idx > 0 { wasted / batch_idx as f64 } else { 0.0 },
        trace: st.trace,
    })
}

/// Executes one batch dispatched at `t`; returns its completion time.
#[allow(clippy::too_many_arguments)]
fn run_batch(
    st: &mut State<'_>,
    parts: &[Vec<PartOp>],
    order: &[usize],
    outbound: &BTreeMap<Option<usize>, Vec<usize>>,
    transfers: &TransferPlan,
    graph_inputs: &BTreeSet<&str>,
    sites: &[Site],
    requests: &[Request],
    nic_done: &[f64],
    members: &[usize],
    b: usize,
    t: f64,
    scale: f64,
) -> Result<f64> {
    let plan = st.plan;
    let g = &plan.graph;
    let cfg = st.cfg;
    let ready = members.iter().map(|&id| nic_done[id]).fold(t, f64::max);
    let items: usize = members.iter().map(|&id| requests[id].items).sum();
    let fill = (items as f64 / cfg.compiled_batch as f64).min(1.0);
    let lookups: Vec<u64> = (0..sites.len()).map(|s| members.iter().map(|&id| requests[id].lookups[s]).sum()).collect();
    let site_pos: HashMap<&str, usize> = sites.iter().enumerate().map(|(i, s)| (g.ops[s.op].id.as_str(), i)).collect();
    let idx_site: HashMap<&str, usize> = sites
        .iter()
        .enumerate()
        .filter_map(|(i, s)| g.ops[s.op].inputs.get(1).map(|t| (t.as_str(), i)))
        .collect();

    // device of each partition for this batch: multi-card partitions rotate
    let device: Vec<Device> = (0..plan.partitions.len())
        .map(|p| {
            let c = candidate_devices(plan, p);
            c[b % c.len()]
        })
        .collect();
    let slot: Vec<usize> = (0..plan.partitions.len())
        .map(|p| b % candidate_devices(plan, p).len())
        .collect();

    let mut avail: HashMap<(String, usize), f64> = HashMap::new();
    let mut finish = vec![ready; plan.partitions.len()];

    let send = |st: &mut State<'_>, src: Option<usize>, at: f64, avail: &mut HashMap<(String, usize), f64>| -> Result<()> {
        let Some(list) = outbound.get(&src) else { return Ok(()) };
        let from = src.map_or(Device::Host, |p| device[p]);
        // group by destination device, route and batching mode
        let mut groups: BTreeMap<(u8, usize, u8, u8), Vec<usize>> = BTreeMap::new();
        for &i in list {
            let e = &transfers.edges[i];
            let to = e.edge.dst.map_or(Device::Host, |p| device[p]);
            let dk = match to {
                Device::Host => (0u8, 0usize),
                Device::Card(c) => (1, c),
            };
            groups.entry((dk.0, dk.1, e.route as u8, e.batching as u8)).or_default().push(i);
        }
        for list in groups.values() {
            let e0 = &transfers.edges[list[0]];
            let to = e0.edge.dst.map_or(Device::Host, |p| device[p]);
            let sizes: Vec<f64> = list
                .iter()
                .map(|&i| match &transfers.edges[i].bytes {
                    EdgeBytes::Static { bytes } => *bytes as f64,
                    EdgeBytes::PerIndex { site, bytes_per_index } => {
                        site_pos.get(site.as_str()).map_or(0.0, |&s| (lookups[s] * bytes_per_index) as f64)
                    }
                    EdgeBytes::ItemScaled { bytes } => *bytes as f64 * fill,
                })
                .collect();
            let arrivals = st.window(from, to, e0.route, e0.batching, &sizes, at)?;
            let crosses = from != to && e0.route != Route::Local;
            for (k, &i) in list.iter().enumerate() {
                let e = &transfers.edges[i];
                if e.sparse_to_dense && crosses {
                    st.traversals += if e0.route == Route::P2p { 1 } else { 2 };
                }
                if crosses {
                    if let Some(&s) = idx_site.get(e.edge.tensor.as_str()) {
                        st.index.0 += lookups[s];
                        st.index.1 += sizes[k];
                        st.index.2 += e.static_bytes as f64;
                    }
                }
                avail.insert((e.edge.tensor.clone(), e.edge.dst.unwrap_or(SINK)), arrivals[k]);
            }
        }
        Ok(())
    };

    send(st, None, ready, &mut avail)?;
    for &p in order {
        let part = &plan.partitions[p];
        let mut core_last: HashMap<usize, f64> = HashMap::new();
        let mut end = ready;
        for po in &parts[p] {
            let op = &g.ops[po.op];
            let mut start = core_last.get(&po.core).copied().unwrap_or(ready);
            let mut inputs_ready = Vec::new();
            for tname in op.inputs.iter().filter(|x| !g.is_weight(x)) {
                let at = match avail.get(&(tname.clone(), p)) {
                    Some(&a) => a,
                    None if graph_inputs.contains(tname.as_str()) => ready,
                    None => {
                        return Err(SimError::Unschedulable(format!(
                            "tensor {tname} needed by {} never reaches partition {}",
                            op.id, part.id
                        )))
                    }
                };
                start = start.max(at);
                if cfg.trace {
                    inputs_ready.push((tname.clone(), at));
                }
            }
            let mut d = match (po.site, device[p]) {
                (Some(s), dev) => {
                    let per_row = lookups[s] as f64 / sites[s].rows.max(1) as f64;
                    let (place, res) = match dev {
                        Device::Host => (Placement::Host, None),
                        Device::Card(c) => (Placement::Card { card: c, cores: 1 }, plan.residency.get(&c)),
                    };
                    let empty = ResidencyPlan::default();
                    op_latency_terms(g, op, compute_precision(g, op), place, res.unwrap_or(&empty), st.hw, Some(per_row))?
                        .total()
                }
                (None, _) => po.base[slot[p]],
            };
            let s = match device[p] {
                Device::Host => st.host.entry(p).or_default().book(start, d),
                Device::Card(c) => {
                    if scale != 1.0 {
                        d *= scale;
                    }
                    let s = st
                        .cores
                        .get_mut(&(c, po.core))
                        .ok_or_else(|| SimError::Unschedulable(format!("core {} of card {c} does not exist", po.core)))?
                        .book(start, d);
                    *st.kind_time.entry(op.kind.name().to_string()).or_default() += d;
                    s
                }
            };
            let f = s + d;
            core_last.insert(po.core, f);
            end = end.max(f);
            for o in &op.outputs {
                avail.insert((o.clone(), p), f);
            }
            if cfg.trace {
                st.trace.push(OpEvent {
                    batch: b,
                    op: op.id.clone(),
                    start: s,
                    finish: f,
                    inputs_ready,
                });
            }
        }
        finish[p] = end;
        send(st, Some(p), end, &mut avail)?;
    }

    // complete once every output reached the host and every partition finished
    let producer = g.producers();
    let owner = plan.partition_of();
    let mut done = finish.iter().copied().fold(ready, f64::max);
    for o in &g.outputs {
        let at = match producer.get(o.as_str()) {
            Some(&i) => {
                let p = owner[g.ops[i].id.as_str()];
                if plan.partitions[p].on_host() {
                    avail.get(&(o.clone(), p)).copied()
                } else {
                    avail.get(&(o.clone(), SINK)).copied()
                }
            }
            None => Some(ready),
        };
        done = done.max(at.unwrap_or(ready));
    }
    Ok(done)
}
