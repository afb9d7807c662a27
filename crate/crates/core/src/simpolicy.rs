//! Discrete-event simulation of the online greedy policy.
//!
//! Each day, blocks start released electives in tentative order while the
//! expected load stays within regular time plus a threshold, migrate their
//! last elective to a later day otherwise, and fill idle gaps with
//! emergencies whose scaled expected duration fits.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::model::{
    std_normal, BlockId, BlockRef, Case, CostBreakdown, EmergencyCase, Instance, Operation, PatientId, Plan,
    Scenario, SimulationOutcome,
};
use crate::{Error, Result};

/// Spacing in minutes of the load estimates recorded in a trace.
pub const SNAPSHOT_STEP: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyParams {
    /// Tolerated expected overtime in minutes before an elective is migrated.
    pub delta: f64,
    /// An emergency fills a gap if `alpha` times its expected duration fits.
    pub alpha: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams { delta: 120.0, alpha: 0.7 }
    }
}

impl PolicyParams {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.delta > 0.0) {
            out.push("delta: must be positive".to_string());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            out.push("alpha: must be positive".to_string());
        }
        out
    }
}

/// `E[P - a | P > a]` for a lognormal `P`.
pub fn truncated_lognormal_mean(mu: f64, sigma: f64, a: f64) -> f64 {
    let mean = (mu + 0.5 * sigma * sigma).exp();
    if a <= 0.0 {
        return mean;
    }
    if sigma == 0.0 {
        return (mu.exp() - a).max(0.0);
    }
    let la = a.ln();
    let n = std_normal();
    let den = n.cdf((mu - la) / sigma);
    if !(den > 0.0) {
        return 0.0;
    }
    let num = n.cdf((mu + sigma * sigma - la) / sigma);
    (mean * num / den - a).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Release,
    Start,
    End,
    Reschedule,
    Cancel,
    Idle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub day: u32,
    pub time: f64,
    pub block: BlockId,
    pub kind: TraceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case: Option<Case>,
    /// New block and tentative time of a rescheduled patient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<(BlockId, f64)>,
}

/// Expected completion of every block of a day as seen at `time`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadSnapshot {
    pub day: u32,
    pub time: f64,
    pub estimates: BTreeMap<BlockId, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    pub snapshots: Vec<LoadSnapshot>,
}

#[derive(Clone, Debug)]
struct Pending {
    patient: PatientId,
    tentative: f64,
    seq: u64,
    released: bool,
}

#[derive(Clone, Debug)]
struct Running {
    mu: f64,
    sigma: f64,
    start: f64,
    end: f64,
}

#[derive(Clone, Debug, Default)]
struct BlockState {
    /// Sorted by tentative time, then plan position.
    pending: Vec<Pending>,
    running: Option<Running>,
    idle: bool,
    busy: f64,
    load: f64,
}

impl BlockState {
    fn insert(&mut self, p: Pending) {
        let at = self
            .pending
            .partition_point(|q| q.tentative.total_cmp(&p.tentative).then(q.seq.cmp(&p.seq)) == Ordering::Less);
        self.pending.insert(at, p);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum EventKind {
    Tentative(PatientId),
    Available,
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    block: BlockId,
    seq: u64,
    kind: EventKind,
}

impl Event {
    fn key(&self) -> (u8, BlockId, u64) {
        let rank = match self.kind {
            EventKind::Tentative(_) => 0,
            EventKind::Available => 1,
        };
        (rank, self.block, self.seq)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    /// Reversed so the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.key().cmp(&self.key()))
    }
}

struct Sim<'a> {
    instance: &'a Instance,
    scenario: &'a Scenario,
    params: PolicyParams,
    blocks: Vec<BlockState>,
    current: BTreeMap<PatientId, BlockRef>,
    tentative: BTreeMap<PatientId, f64>,
    start: BTreeMap<PatientId, f64>,
    migrations: BTreeMap<PatientId, u32>,
    operations: Vec<Operation>,
    waiting: f64,
    heap: BinaryHeap<Event>,
    seq: u64,
    day_index: usize,
    /// Unstarted emergencies of the current day by arrival index.
    emergencies: Vec<(u32, EmergencyCase)>,
    trace: Option<Trace>,
}

/// Runs the policy on one scenario.
pub fn simulate(instance: &Instance, plan: &Plan, scenario: &Scenario, params: &PolicyParams) -> Result<SimulationOutcome> {
    run(instance, plan, scenario, params, false).map(|(o, _)| o)
}

/// Runs the policy and records every decision plus load estimates on a
/// five-minute grid.
pub fn simulate_traced(
    instance: &Instance,
    plan: &Plan,
    scenario: &Scenario,
    params: &PolicyParams,
) -> Result<(SimulationOutcome, Trace)> {
    run(instance, plan, scenario, params, true).map(|(o, t)| (o, t.unwrap_or_default()))
}

fn run(
    instance: &Instance,
    plan: &Plan,
    scenario: &Scenario,
    params: &PolicyParams,
    traced: bool,
) -> Result<(SimulationOutcome, Option<Trace>)> {
    let problems = params.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    plan.validate(instance)?;
    scenario.check(instance)?;
    let mut sim = Sim {
        instance,
        scenario,
        params: *params,
        blocks: vec![BlockState::default(); instance.blocks.len()],
        current: plan.assignment.clone(),
        tentative: plan.tentative.clone(),
        start: BTreeMap::new(),
        migrations: BTreeMap::new(),
        operations: Vec::new(),
        waiting: 0.0,
        heap: BinaryHeap::new(),
        seq: 0,
        day_index: 0,
        emergencies: Vec::new(),
        trace: traced.then(Trace::default),
    };
    for b in &instance.blocks {
        for p in plan.sequence(instance, b.id) {
            let seq = sim.next_seq();
            sim.blocks[b.id as usize].insert(Pending { patient: p, tentative: plan.tentative[&p], seq, released: false });
        }
    }
    let events: usize = instance.patients.len() + instance.blocks.len();
    let arrivals: usize = scenario.emergency_arrivals.iter().map(Vec::len).sum();
    let budget = 64 * (events + arrivals + 16) * (instance.horizon.len() + 1);
    let mut processed = 0usize;
    for d in 0..instance.horizon.len() {
        processed += sim.run_day(d, budget.saturating_sub(processed))?;
    }
    let outcome = sim.finish();
    Ok((outcome, sim.trace))
}

impl Sim<'_> {
    fn next_seq(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    fn day(&self) -> u32 {
        self.instance.horizon[self.day_index]
    }

    fn push(&mut self, time: f64, block: BlockId, kind: EventKind) {
        let seq = self.next_seq();
        self.heap.push(Event { time, block, seq, kind });
    }

    fn log(&mut self, time: f64, block: BlockId, kind: TraceKind, case: Option<Case>, target: Option<(BlockId, f64)>) {
        let day = self.day();
        if let Some(t) = self.trace.as_mut() {
            t.events.push(TraceEvent { day, time, block, kind, case, target });
        }
    }

    fn run_day(&mut self, d: usize, budget: usize) -> Result<usize> {
        self.day_index = d;
        let day = self.day();
        let today = self.instance.blocks_on(day);
        self.emergencies = self.scenario.emergency_arrivals[d].iter().cloned().enumerate().map(|(k, e)| (k as u32, e)).collect();
        if today.is_empty() && !self.emergencies.is_empty() {
            return Err(Error::Mismatch(format!("emergencies arrive on day {day} without blocks")));
        }
        for b in &today {
            let pend: Vec<(PatientId, f64)> =
                self.blocks[*b as usize].pending.iter().map(|p| (p.patient, p.tentative)).collect();
            for (p, t) in pend {
                self.push(t, *b, EventKind::Tentative(p));
            }
            self.push(0.0, *b, EventKind::Available);
        }
        let mut grid = 0.0;
        let mut processed = 0;
        while let Some(ev) = self.heap.pop() {
            processed += 1;
            if processed > budget {
                return Err(Error::Domain(format!("simulation of day {day} does not terminate")));
            }
            if self.trace.is_some() {
                while grid <= ev.time {
                    let estimates = self.estimate(grid);
                    if let Some(t) = self.trace.as_mut() {
                        t.snapshots.push(LoadSnapshot { day, time: grid, estimates });
                    }
                    grid += SNAPSHOT_STEP;
                }
            }
            match ev.kind {
                EventKind::Tentative(p) => self.on_tentative(ev.time, ev.block, p),
                EventKind::Available => self.on_available(ev.time, ev.block),
            }
        }
        if self.trace.is_some() {
            let estimates = self.estimate(grid);
            if let Some(t) = self.trace.as_mut() {
                t.snapshots.push(LoadSnapshot { day, time: grid, estimates });
            }
        }
        let stuck = today.iter().any(|b| !self.blocks[*b as usize].pending.is_empty());
        if stuck || !self.emergencies.is_empty() {
            return Err(Error::Domain(format!("day {day} ended with unoperated cases")));
        }
        Ok(processed)
    }

    fn on_tentative(&mut self, time: f64, block: BlockId, patient: PatientId) {
        let state = &mut self.blocks[block as usize];
        let Some(p) = state.pending.iter_mut().find(|p| p.patient == patient) else {
            return;
        };
        p.released = true;
        let wake = state.idle;
        state.idle = false;
        self.log(time, block, TraceKind::Release, Some(Case::Elective { patient }), None);
        if wake {
            self.push(time, block, EventKind::Available);
        }
    }

    fn on_available(&mut self, time: f64, block: BlockId) {
        let b = block as usize;
        if let Some(r) = &self.blocks[b].running {
            if r.end > time {
                return;
            }
            self.blocks[b].running = None;
        }
        let released = self.blocks[b].pending.iter().position(|p| p.released);
        if let Some(first) = released {
            let estimate = self.estimate(time)[&block];
            let limit = self.instance.block(block).regular_time + self.params.delta;
            if estimate <= limit {
                let p = self.blocks[b].pending.remove(first);
                self.start_elective(time, block, p);
            } else {
                let last = self.blocks[b].pending.pop().expect("nonempty when released");
                self.migrate(time, block, last.patient);
                self.push(time, block, EventKind::Available);
            }
            return;
        }
        let gap = self.blocks[b].pending.first().map_or(f64::INFINITY, |p| p.tentative - time);
        let alpha = self.params.alpha;
        let pick = self
            .emergencies
            .iter()
            .enumerate()
            .filter(|(_, (_, e))| alpha * e.expected_duration() <= gap)
            .max_by(|(_, (ia, a)), (_, (ib, b))| {
                a.expected_duration().total_cmp(&b.expected_duration()).then(ib.cmp(ia))
            })
            .map(|(k, _)| k);
        match pick {
            Some(k) => {
                let (index, e) = self.emergencies.remove(k);
                let day = self.day();
                self.begin(time, block, Case::Emergency { day, index }, e.mu, e.sigma, e.duration);
            }
            None => {
                self.blocks[b].idle = true;
                if !self.blocks[b].pending.is_empty() {
                    self.log(time, block, TraceKind::Idle, None, None);
                }
            }
        }
    }

    fn start_elective(&mut self, time: f64, block: BlockId, p: Pending) {
        let patient = self.instance.patient(p.patient);
        self.waiting += time - p.tentative;
        self.start.insert(p.patient, time);
        let duration = self.scenario.elective_durations[&p.patient];
        self.begin(time, block, Case::Elective { patient: p.patient }, patient.mu, patient.sigma, duration);
    }

    fn begin(&mut self, time: f64, block: BlockId, case: Case, mu: f64, sigma: f64, duration: f64) {
        let state = &mut self.blocks[block as usize];
        let end = time + duration;
        state.running = Some(Running { mu, sigma, start: time, end });
        state.idle = false;
        state.busy += duration;
        state.load = end;
        self.operations.push(Operation { block, case, start: time, duration });
        self.log(time, block, TraceKind::Start, Some(case), None);
        self.push(end, block, EventKind::Available);
        if self.trace.is_some() {
            self.log(end, block, TraceKind::End, Some(case), None);
        }
    }

    fn migrate(&mut self, time: f64, block: BlockId, patient: PatientId) {
        *self.migrations.entry(patient).or_insert(0) += 1;
        match self.reassign(patient) {
            Some((target, t)) => {
                let seq = self.next_seq();
                self.blocks[target as usize].insert(Pending { patient, tentative: t, seq, released: false });
                self.current.insert(patient, BlockRef::Block(target));
                self.tentative.insert(patient, t);
                self.log(time, block, TraceKind::Reschedule, Some(Case::Elective { patient }), Some((target, t)));
            }
            None => {
                self.current.insert(patient, BlockRef::Dummy);
                self.tentative.remove(&patient);
                self.log(time, block, TraceKind::Cancel, Some(Case::Elective { patient }), None);
            }
        }
    }

    /// First block of the patient's specialty on a later day, by day then id,
    /// where the patient fits after the expected schedule within regular time.
    fn reassign(&self, patient: PatientId) -> Option<(BlockId, f64)> {
        let p = self.instance.patient(patient);
        let e = p.expected_duration();
        for day in &self.instance.horizon[self.day_index + 1..] {
            for b in self.instance.blocks_on(*day) {
                let blk = self.instance.block(b);
                if blk.specialty != p.specialty {
                    continue;
                }
                let end = self.expected_completion(b);
                if end + e <= blk.regular_time {
                    return Some((b, end));
                }
            }
        }
        None
    }

    /// Completion of a future block's pending electives at expected durations.
    fn expected_completion(&self, block: BlockId) -> f64 {
        let mut end = 0.0f64;
        for q in &self.blocks[block as usize].pending {
            end = end.max(q.tentative) + self.instance.patient(q.patient).expected_duration();
        }
        end
    }

    /// Expected completion of every block of the current day at `clock`.
    fn estimate(&self, clock: f64) -> BTreeMap<BlockId, f64> {
        let mut running = BTreeMap::new();
        let mut pending = BTreeMap::new();
        for b in self.instance.blocks_on(self.day()) {
            let state = &self.blocks[b as usize];
            if let Some(r) = state.running.as_ref().filter(|r| r.end > clock) {
                running.insert(b, (r.mu, r.sigma, r.start));
            }
            let queue = state
                .pending
                .iter()
                .map(|q| (q.tentative, self.instance.patient(q.patient).expected_duration()))
                .collect();
            pending.insert(b, queue);
        }
        let emergencies: Vec<f64> = self.emergencies.iter().map(|(_, e)| e.expected_duration()).collect();
        estimate_expected_load(clock, &running, &pending, &emergencies)
    }

    fn finish(&mut self) -> SimulationOutcome {
        if let Some(t) = self.trace.as_mut() {
            t.events.sort_by(|a, b| a.day.cmp(&b.day).then(a.time.total_cmp(&b.time)));
        }
        let c = &self.instance.costs;
        let mut scheduling = 0.0;
        for (p, b) in &self.current {
            scheduling += c.assign_cost(*p, *b).unwrap_or(0.0);
        }
        let mut idle = 0.0;
        let mut overtime = 0.0;
        let mut load = BTreeMap::new();
        for b in &self.instance.blocks {
            let s = &self.blocks[b.id as usize];
            idle += s.load - s.busy;
            overtime += (s.load - b.regular_time).max(0.0);
            load.insert(b.id, s.load);
        }
        let moves: u32 = self.migrations.values().sum();
        let mut cost = CostBreakdown {
            scheduling,
            waiting: c.waiting * self.waiting,
            idle: c.idle * idle,
            overtime: c.overtime * overtime,
            migration: c.migration * f64::from(moves),
            total: 0.0,
        };
        cost.total = cost.scheduling + cost.waiting + cost.idle + cost.overtime + cost.migration;
        SimulationOutcome {
            final_block: self.current.clone(),
            final_tentative: self.tentative.clone(),
            start: self.start.clone(),
            migrations: self.migrations.clone(),
            load,
            operations: self.operations.clone(),
            cost_breakdown: cost,
        }
    }
}

/// Expected completion of every block of `day` for a hand-built state:
/// `running[b] = (mu, sigma, start)` of an ongoing surgery, `pending[b]` the
/// (tentative, expected duration) pairs in order, and the day's unstarted
/// emergency expectations.
pub fn estimate_expected_load(
    clock: f64,
    running: &BTreeMap<BlockId, (f64, f64, f64)>,
    pending: &BTreeMap<BlockId, Vec<(f64, f64)>>,
    emergencies: &[f64],
) -> BTreeMap<BlockId, f64> {
    let mut blocks: Vec<BlockId> = running.keys().chain(pending.keys()).copied().collect();
    blocks.sort_unstable();
    blocks.dedup();
    let mut free: Vec<(BlockId, f64)> = blocks
        .iter()
        .map(|b| {
            let mut f = running.get(b).map_or(clock, |(mu, sigma, s)| clock + truncated_lognormal_mean(*mu, *sigma, clock - s));
            for (t, e) in pending.get(b).map(Vec::as_slice).unwrap_or_default() {
                f = f.max(*t) + e;
            }
            (*b, f)
        })
        .collect();
    let mut queue = emergencies.to_vec();
    queue.sort_by(|a, b| b.total_cmp(a));
    for e in queue {
        if let Some(slot) = free.iter_mut().min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))) {
            slot.1 += e;
        }
    }
    free.into_iter().collect()
}
