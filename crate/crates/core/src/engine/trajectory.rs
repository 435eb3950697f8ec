use serde::Serialize;

use super::Event;
use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, TypeSpace, TypeValue};

/// Piecewise-constant path: the initial configuration plus every accepted
/// event. Measures at intermediate times are rebuilt by replay.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    space: TypeSpace,
    initial: Vec<TypeValue>,
    events: Vec<Event>,
    t_end: f64,
    candidates: u64,
}

/// One exported event row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRow {
    pub event_index: usize,
    pub time: f64,
    pub event_kind: &'static str,
    pub moved_agent_ids: String,
    pub type_before: String,
    pub type_after: String,
}

impl Trajectory {
    pub(crate) fn new(space: TypeSpace, initial: Vec<TypeValue>, t_end: f64) -> Self {
        Trajectory {
            space,
            initial,
            events: Vec::new(),
            t_end,
            candidates: 0,
        }
    }

    pub(crate) fn set_events(&mut self, events: Vec<Event>, candidates: u64) {
        self.events = events;
        self.candidates = candidates;
    }

    pub fn space(&self) -> &TypeSpace {
        &self.space
    }

    pub fn n(&self) -> usize {
        self.initial.len()
    }

    pub fn initial_types(&self) -> &[TypeValue] {
        &self.initial
    }

    pub fn initial_measure(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::from_types(&self.space, &self.initial)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Number of proposals drawn, including rejected ones.
    pub fn candidate_count(&self) -> u64 {
        self.candidates
    }

    /// Calls `f(time, measure, event)` for the initial state (with no event)
    /// and after every event.
    pub fn for_each_state(&self, mut f: impl FnMut(f64, &EmpiricalMeasure, Option<&Event>)) {
        let mut m = self.initial_measure();
        f(0.0, &m, None);
        for ev in &self.events {
            for mv in &ev.moves {
                m.move_agent(&mv.before, &mv.after);
            }
            f(ev.time, &m, Some(ev));
        }
    }

    /// Measures at the increasing `times`, right-continuous at events.
    pub fn measures_at(&self, times: &[f64]) -> Result<Vec<EmpiricalMeasure>> {
        let mut out = Vec::with_capacity(times.len());
        let mut m = self.initial_measure();
        let mut next = 0;
        let mut prev = f64::NEG_INFINITY;
        for &t in times {
            if !(0.0..=self.t_end).contains(&t) {
                return Err(Error::TimeOutOfRange { t, t_end: self.t_end });
            }
            if t < prev {
                return Err(Error::config("times", "sample times must be nondecreasing"));
            }
            prev = t;
            while next < self.events.len() && self.events[next].time <= t {
                for mv in &self.events[next].moves {
                    m.move_agent(&mv.before, &mv.after);
                }
                next += 1;
            }
            out.push(m.clone());
        }
        Ok(out)
    }

    pub fn measure_at(&self, t: f64) -> Result<EmpiricalMeasure> {
        Ok(self.measures_at(&[t])?.remove(0))
    }

    pub fn final_measure(&self) -> EmpiricalMeasure {
        let mut m = self.initial_measure();
        for ev in &self.events {
            for mv in &ev.moves {
                m.move_agent(&mv.before, &mv.after);
            }
        }
        m
    }

    /// Export rows; multi-agent fields are joined with `;`.
    pub fn event_rows(&self) -> Vec<EventRow> {
        let join = |f: &dyn Fn(&super::Move) -> String, ev: &Event| {
            ev.moves.iter().map(f).collect::<Vec<_>>().join(";")
        };
        self.events
            .iter()
            .enumerate()
            .map(|(k, ev)| EventRow {
                event_index: k,
                time: ev.time,
                event_kind: ev.kind.label(),
                moved_agent_ids: join(&|m| m.agent.to_string(), ev),
                type_before: join(&|m| self.space.display(&m.before), ev),
                type_after: join(&|m| self.space.display(&m.after), ev),
            })
            .collect()
    }
}
