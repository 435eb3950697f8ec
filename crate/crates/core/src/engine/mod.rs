//! Exact event-driven simulation of the N-agent jump process.
//!
//! Events are proposed by a homogeneous Poisson clock of rate
//! `R = N·γ̄ + N·λ̄ + Σ_c N·c̄` and thinned:
//!
//! * type change: agent `i` uniform, accepted with probability `γ(η_i,ν)/γ̄`,
//!   new type drawn from `a(η_i, ν)`;
//! * pair interaction: ordered `(i, j)` uniform on `I_N × I_N`, accepted with
//!   probability `λ(η_i,η_j,ν)/λ̄`, new types drawn from `b(η_i, η_j, ν)`;
//! * aggregate channel `c`: accepted with probability `intensity(ν)/c̄`, one
//!   agent of each participant label drawn uniformly.
//!
//! Diagonal proposals `i = j` keep their share of the clock but are always
//! rejected, since a single agent cannot take two new types at once.

mod initial;
mod oracle;
mod trajectory;

use rand::Rng;
use serde::Serialize;
use smallvec::SmallVec;

pub use initial::{deterministic_initial, sample_product_initial, InitialDistribution, InitialSpec};
pub use oracle::oracle_discrete_time;
pub use trajectory::Trajectory;

use crate::error::{Error, Result};
use crate::measure::{AgentConfiguration, EmpiricalMeasure, TypeValue};
use crate::model::Model;
use crate::rng::{stream, Purpose, SimRng};

const BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    TypeChange { agent: usize },
    PairInteraction { first: usize, second: usize },
    Channel { channel: usize, first: usize, second: usize },
}

impl EventKind {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::TypeChange { .. } => "type_change",
            EventKind::PairInteraction { .. } => "pair_interaction",
            EventKind::Channel { .. } => "channel",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Move {
    pub agent: usize,
    pub before: TypeValue,
    pub after: TypeValue,
}

/// An accepted event. At most two agents move.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub moves: SmallVec<[Move; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Rejected,
    Accepted(Event),
    /// The next proposal would fall after the horizon; time is now the horizon.
    Horizon,
}

/// Agents grouped by label, so a uniformly random agent of a given label can
/// be drawn in O(1). Only maintained for models with aggregate channels.
#[derive(Debug, Clone)]
struct LabelIndex {
    members: Vec<Vec<usize>>,
    slot: Vec<usize>,
}

impl LabelIndex {
    fn new(k: usize, types: &[TypeValue]) -> Self {
        let mut members = vec![Vec::new(); k];
        let mut slot = vec![0; types.len()];
        for (a, w) in types.iter().enumerate() {
            let l = w.label().expect("label index on a finite space");
            slot[a] = members[l].len();
            members[l].push(a);
        }
        LabelIndex { members, slot }
    }

    fn relabel(&mut self, agent: usize, from: usize, to: usize) {
        if from == to {
            return;
        }
        let s = self.slot[agent];
        let list = &mut self.members[from];
        let last = *list.last().unwrap();
        list.swap_remove(s);
        if last != agent {
            self.slot[last] = s;
        }
        self.slot[agent] = self.members[to].len();
        self.members[to].push(agent);
    }
}

/// Current state of one replica.
#[derive(Debug, Clone)]
pub struct EngineState {
    time: f64,
    types: Vec<TypeValue>,
    measure: EmpiricalMeasure,
    rng: SimRng,
    event_count: u64,
    candidate_count: u64,
    total_rate: f64,
    index: Option<LabelIndex>,
}

/// Total proposal rate `N·γ̄ + N·λ̄ + Σ N·c̄`.
pub fn proposal_rate(model: &dyn Model, n: usize) -> f64 {
    let n = n as f64;
    let channels: f64 = model.channels().iter().map(|c| c.intensity_bound()).sum();
    n * (model.gamma_bar() + model.lambda_bar() + channels)
}

impl EngineState {
    pub fn new(model: &dyn Model, init: &AgentConfiguration, rng: SimRng) -> Result<Self> {
        let space = model.space();
        let types = init.types().to_vec();
        if let Some(bad) = types.iter().find(|w| !space.contains(w)) {
            return Err(Error::NotInSpace { value: bad.to_string() });
        }
        let total_rate = proposal_rate(model, types.len());
        if !(total_rate > 0.0) {
            return Err(Error::ZeroRate);
        }
        if !total_rate.is_finite() {
            return Err(Error::config("model", "rate bounds must be finite"));
        }
        let index = match (model.channels().is_empty(), space.size()) {
            (false, Some(k)) => Some(LabelIndex::new(k, &types)),
            (false, None) => return Err(Error::Unsupported("aggregate channels")),
            _ => None,
        };
        Ok(EngineState {
            time: 0.0,
            measure: EmpiricalMeasure::from_types(space, &types),
            types,
            rng,
            event_count: 0,
            candidate_count: 0,
            total_rate,
            index,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn types(&self) -> &[TypeValue] {
        &self.types
    }

    pub fn measure(&self) -> &EmpiricalMeasure {
        &self.measure
    }

    pub fn n(&self) -> usize {
        self.types.len()
    }

    /// Accepted events so far.
    pub fn event_count(&self) -> u64 {
        self.event_count
    }

    /// Proposals so far, accepted or not.
    pub fn candidate_count(&self) -> u64 {
        self.candidate_count
    }

    fn apply(&mut self, agent: usize, to: TypeValue) -> Move {
        let before = std::mem::replace(&mut self.types[agent], to.clone());
        self.measure.move_agent(&before, &to);
        if let Some(ix) = &mut self.index {
            ix.relabel(agent, before.label().unwrap(), to.label().unwrap());
        }
        Move {
            agent,
            before,
            after: to,
        }
    }
}

fn check_bound(rate: &'static str, value: f64, bound: f64) -> Result<()> {
    if value.is_nan() || value < 0.0 || value > bound * (1.0 + BOUND_SLACK) + f64::MIN_POSITIVE {
        return Err(Error::BoundViolation { rate, value, bound });
    }
    Ok(())
}

/// Advances the state by one proposal of the thinned Poisson clock.
pub fn step_exact(state: &mut EngineState, model: &dyn Model, horizon: f64) -> Result<Step> {
    let r = state.total_rate;
    let u: f64 = state.rng.random();
    let dt = -(1.0 - u).ln() / r;
    if state.time + dt > horizon {
        state.time = horizon;
        return Ok(Step::Horizon);
    }
    state.time += dt;
    state.candidate_count += 1;

    let n = state.types.len();
    let nf = n as f64;
    let pick: f64 = state.rng.random::<f64>() * r;
    let type_share = nf * model.gamma_bar();
    let pair_share = nf * model.lambda_bar();

    let event = if pick < type_share {
        let i = state.rng.random_range(0..n);
        let w = &state.types[i];
        let g = model.gamma(w, &state.measure);
        check_bound("gamma", g, model.gamma_bar())?;
        if state.rng.random::<f64>() * model.gamma_bar() >= g {
            return Ok(Step::Rejected);
        }
        let kernel = model.jump_kernel(w, &state.measure);
        let u: f64 = state.rng.random();
        let to = kernel.sample(u).cloned().ok_or(Error::BoundViolation {
            rate: "jump kernel mass",
            value: 0.0,
            bound: 1.0,
        })?;
        let mv = state.apply(i, to);
        Event {
            time: state.time,
            kind: EventKind::TypeChange { agent: i },
            moves: SmallVec::from_iter([mv]),
        }
    } else if pick < type_share + pair_share {
        let i = state.rng.random_range(0..n);
        let j = state.rng.random_range(0..n);
        // consume the acceptance uniform even on the diagonal so the stream
        // layout does not depend on the outcome
        let theta: f64 = state.rng.random();
        if i == j {
            return Ok(Step::Rejected);
        }
        let (w1, w2) = (&state.types[i], &state.types[j]);
        let l = model.lambda(w1, w2, &state.measure);
        check_bound("lambda", l, model.lambda_bar())?;
        if theta * model.lambda_bar() >= l {
            return Ok(Step::Rejected);
        }
        let kernel = model.pair_kernel(w1, w2, &state.measure);
        let u: f64 = state.rng.random();
        let (t1, t2) = kernel.sample(u).cloned().ok_or(Error::BoundViolation {
            rate: "pair kernel mass",
            value: 0.0,
            bound: 1.0,
        })?;
        let m1 = state.apply(i, t1);
        let m2 = state.apply(j, t2);
        Event {
            time: state.time,
            kind: EventKind::PairInteraction { first: i, second: j },
            moves: SmallVec::from_iter([m1, m2]),
        }
    } else {
        let mut rest = pick - type_share - pair_share;
        let channels = model.channels();
        let mut c = channels.len() - 1;
        for (ci, ch) in channels.iter().enumerate() {
            let share = nf * ch.intensity_bound();
            if rest < share {
                c = ci;
                break;
            }
            rest -= share;
        }
        let ch = &channels[c];
        let intensity = ch.intensity(&state.measure);
        check_bound("channel intensity", intensity, ch.intensity_bound())?;
        if state.rng.random::<f64>() * ch.intensity_bound() >= intensity {
            return Ok(Step::Rejected);
        }
        let (la, lb) = ch.participants();
        let index = state.index.as_ref().expect("label index for channels");
        let (na, nb) = (index.members[la].len(), index.members[lb].len());
        if na == 0 || nb == 0 {
            return Err(Error::BoundViolation {
                rate: "channel intensity with an empty participant class",
                value: intensity,
                bound: 0.0,
            });
        }
        let i = index.members[la][state.rng.random_range(0..na)];
        let j = index.members[lb][state.rng.random_range(0..nb)];
        if i == j {
            return Ok(Step::Rejected);
        }
        let kernel = ch.outcome(&state.measure);
        let u: f64 = state.rng.random();
        let (t1, t2) = kernel.sample(u).cloned().ok_or(Error::BoundViolation {
            rate: "channel kernel mass",
            value: 0.0,
            bound: 1.0,
        })?;
        let m1 = state.apply(i, t1);
        let m2 = state.apply(j, t2);
        Event {
            time: state.time,
            kind: EventKind::Channel {
                channel: c,
                first: i,
                second: j,
            },
            moves: SmallVec::from_iter([m1, m2]),
        }
    };
    state.event_count += 1;
    Ok(Step::Accepted(event))
}

/// Runs proposals until the clock passes `t`, handing every accepted event
/// to `on_event`. On return the state time equals `t`.
pub fn advance_to(
    state: &mut EngineState,
    model: &dyn Model,
    t: f64,
    mut on_event: impl FnMut(&Event),
) -> Result<()> {
    loop {
        match step_exact(state, model, t)? {
            Step::Horizon => return Ok(()),
            Step::Accepted(ev) => on_event(&ev),
            Step::Rejected => {}
        }
    }
}

/// Simulates `[0, t_end]` from `init`, recording every accepted event.
pub fn run_trajectory_with(model: &dyn Model, init: &AgentConfiguration, t_end: f64, rng: SimRng) -> Result<Trajectory> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::config("t_end", format!("must be finite and >= 0, got {t_end}")));
    }
    let mut traj = Trajectory::new(model.space().clone(), init.types().to_vec(), t_end);
    if proposal_rate(model, init.len()) == 0.0 {
        return Ok(traj);
    }
    let mut state = EngineState::new(model, init, rng)?;
    let mut events = Vec::new();
    advance_to(&mut state, model, t_end, |ev| events.push(ev.clone()))?;
    traj.set_events(events, state.candidate_count());
    Ok(traj)
}

/// [`run_trajectory_with`] on the dynamics stream of replica 0 of `seed`.
pub fn run_trajectory(model: &dyn Model, init: &AgentConfiguration, t_end: f64, seed: u64) -> Result<Trajectory> {
    run_trajectory_with(model, init, t_end, stream(seed, 0, Purpose::Dynamics))
}

/// Final measure at `t_end` without storing events. Zero-rate models return
/// the initial measure.
pub fn simulate_final(model: &dyn Model, init: &AgentConfiguration, t_end: f64, rng: SimRng) -> Result<EmpiricalMeasure> {
    if proposal_rate(model, init.len()) == 0.0 {
        return Ok(EmpiricalMeasure::from_config(model.space(), init));
    }
    let mut state = EngineState::new(model, init, rng)?;
    advance_to(&mut state, model, t_end, |_| {})?;
    Ok(state.measure)
}

/// Measures at each of the increasing `times`, without storing events.
pub fn simulate_sampled(
    model: &dyn Model,
    init: &AgentConfiguration,
    times: &[f64],
    rng: SimRng,
    mut observe: impl FnMut(usize, f64, &EmpiricalMeasure),
) -> Result<()> {
    if proposal_rate(model, init.len()) == 0.0 {
        let m = EmpiricalMeasure::from_config(model.space(), init);
        for (k, &t) in times.iter().enumerate() {
            observe(k, t, &m);
        }
        return Ok(());
    }
    let mut state = EngineState::new(model, init, rng)?;
    for (k, &t) in times.iter().enumerate() {
        advance_to(&mut state, model, t, |_| {})?;
        observe(k, t, &state.measure);
    }
    Ok(())
}
