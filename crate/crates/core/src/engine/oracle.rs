//! Discrete-time Euler scheme on the generator, used only as a cross-check.
//!
//! Time is cut into slots of length `dt`. In a slot, candidate transition `k`
//! (a type-level move with total rate `r_k`) fires with probability `r_k·dt`
//! and at most one fires; one uniform decides, walking the transitions in a
//! fixed enumeration order. The table of `r_k` only depends on the measure,
//! so it is rebuilt after events rather than every slot.

use rand::Rng;
use smallvec::SmallVec;

use super::{check_bound, Event, EventKind, Move, Trajectory};
use crate::error::{Error, Result};
use crate::measure::{AgentConfiguration, EmpiricalMeasure, TypeValue};
use crate::model::Model;
use crate::rng::SimRng;

/// Largest allowed total one-slot jump probability.
pub const MAX_SLOT_PROBABILITY: f64 = 0.1;

#[derive(Debug, Clone)]
enum Candidate {
    Single { from: TypeValue, to: TypeValue },
    Pair { from: (TypeValue, TypeValue), to: (TypeValue, TypeValue) },
    Channel { channel: usize, from: (TypeValue, TypeValue), to: (TypeValue, TypeValue) },
}

/// Cumulative probability table over the candidate transitions.
fn transition_table(model: &dyn Model, nu: &EmpiricalMeasure, dt: f64, out: &mut Vec<(Candidate, f64)>) -> Result<f64> {
    out.clear();
    let nf = nu.n() as f64;
    let atoms = nu.atoms();
    let mut acc = 0.0;
    let mut push = |c: Candidate, rate: f64, out: &mut Vec<(Candidate, f64)>| {
        if rate > 0.0 {
            acc += rate * dt;
            out.push((c, acc));
        }
    };
    for (w, c) in &atoms {
        let g = model.gamma(w, nu);
        check_bound("gamma", g, model.gamma_bar())?;
        if g == 0.0 {
            continue;
        }
        for (to, p) in model.jump_kernel(w, nu).normalized().atoms() {
            push(Candidate::Single { from: w.clone(), to: to.clone() }, *c as f64 * g * p, out);
        }
    }
    if model.lambda_bar() > 0.0 {
        for (w1, c1) in &atoms {
            for (w2, c2) in &atoms {
                let pairs = *c1 as f64 * (*c2 - u64::from(w1 == w2)) as f64;
                if pairs == 0.0 {
                    continue;
                }
                let l = model.lambda(w1, w2, nu);
                check_bound("lambda", l, model.lambda_bar())?;
                if l == 0.0 {
                    continue;
                }
                for (to, p) in model.pair_kernel(w1, w2, nu).normalized().atoms() {
                    let c = Candidate::Pair {
                        from: (w1.clone(), w2.clone()),
                        to: to.clone(),
                    };
                    push(c, pairs * l / nf * p, out);
                }
            }
        }
    }
    for (ci, ch) in model.channels().iter().enumerate() {
        let intensity = ch.intensity(nu);
        check_bound("channel intensity", intensity, ch.intensity_bound())?;
        if intensity == 0.0 {
            continue;
        }
        let (la, lb) = ch.participants();
        let mut rate = nf * intensity;
        if la == lb {
            // the engine rejects drawing the same agent twice
            let c = nu.label_count(la) as f64;
            rate *= (c - 1.0).max(0.0) / c;
        }
        for (to, p) in ch.outcome(nu).normalized().atoms() {
            let c = Candidate::Channel {
                channel: ci,
                from: (TypeValue::Label(la), TypeValue::Label(lb)),
                to: to.clone(),
            };
            push(c, rate * p, out);
        }
    }
    if acc > MAX_SLOT_PROBABILITY {
        return Err(Error::StepSize(format!(
            "one-slot jump probability {acc:.4} exceeds {MAX_SLOT_PROBABILITY}; reduce dt"
        )));
    }
    Ok(acc)
}

/// Uniformly chosen agent of type `w`, skipping `exclude`.
fn pick_agent(types: &[TypeValue], w: &TypeValue, count: u64, exclude: Option<usize>, rng: &mut SimRng) -> usize {
    let mut r = rng.random_range(0..count);
    for (a, t) in types.iter().enumerate() {
        if t == w && Some(a) != exclude {
            if r == 0 {
                return a;
            }
            r -= 1;
        }
    }
    unreachable!("measure and configuration disagree")
}

/// Runs the slot scheme over `[0, t_end]`; `t_end` must be a whole number of slots.
pub fn oracle_discrete_time(
    model: &dyn Model,
    init: &AgentConfiguration,
    t_end: f64,
    dt: f64,
    rng: &mut SimRng,
) -> Result<Trajectory> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config("dt", format!("must be > 0, got {dt}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::config("t_end", format!("must be finite and >= 0, got {t_end}")));
    }
    let slots = (t_end / dt).round();
    if (slots * dt - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(Error::config("dt", format!("{t_end} is not a whole number of slots of {dt}")));
    }
    let slots = slots as u64;
    let space = model.space();
    let mut traj = Trajectory::new(space.clone(), init.types().to_vec(), t_end);
    let mut types = init.types().to_vec();
    let mut nu = EmpiricalMeasure::from_types(space, &types);
    let mut table = Vec::new();
    let mut total = transition_table(model, &nu, dt, &mut table)?;
    let mut events = Vec::new();

    for s in 0..slots {
        let u: f64 = rng.random();
        if u >= total {
            continue;
        }
        let k = table.partition_point(|(_, acc)| *acc <= u);
        let time = (s + 1) as f64 * dt;
        let (kind, moves): (EventKind, SmallVec<[Move; 2]>) = match &table[k].0 {
            Candidate::Single { from, to } => {
                let i = pick_agent(&types, from, nu.count(from), None, rng);
                let mv = apply(&mut types, &mut nu, i, to.clone());
                (EventKind::TypeChange { agent: i }, SmallVec::from_iter([mv]))
            }
            Candidate::Pair { from, to } | Candidate::Channel { from, to, .. } => {
                let i = pick_agent(&types, &from.0, nu.count(&from.0), None, rng);
                let c2 = nu.count(&from.1) - u64::from(from.0 == from.1);
                let j = pick_agent(&types, &from.1, c2, Some(i), rng);
                let kind = match &table[k].0 {
                    Candidate::Channel { channel, .. } => EventKind::Channel {
                        channel: *channel,
                        first: i,
                        second: j,
                    },
                    _ => EventKind::PairInteraction { first: i, second: j },
                };
                let m1 = apply(&mut types, &mut nu, i, to.0.clone());
                let m2 = apply(&mut types, &mut nu, j, to.1.clone());
                (kind, SmallVec::from_iter([m1, m2]))
            }
        };
        events.push(Event { time, kind, moves });
        total = transition_table(model, &nu, dt, &mut table)?;
    }
    traj.set_events(events, slots);
    Ok(traj)
}

fn apply(types: &mut [TypeValue], nu: &mut EmpiricalMeasure, agent: usize, to: TypeValue) -> Move {
    let before = std::mem::replace(&mut types[agent], to.clone());
    nu.move_agent(&before, &to);
    Move {
        agent,
        before,
        after: to,
    }
}
