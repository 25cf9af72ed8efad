//! Discrete-event driver for agents that share the hierarchy with the spy.
//!
//! The spy owns the clock: its accesses advance it. Other agents (victims,
//! the GPU renderer, masking loops) are activities that fire whenever the
//! clock passes their next scheduled time. They touch the caches without
//! advancing the clock, since they run on other cores.

use crate::hierarchy::Hierarchy;

pub trait Activity {
    /// Time of the next event, or `None` when finished.
    fn next_at(&self) -> Option<u64>;
    /// Perform the pending event and schedule the following one.
    fn fire(&mut self, h: &mut Hierarchy);
}

#[derive(Default)]
pub struct Schedule {
    acts: Vec<Box<dyn Activity>>,
    next_due: Option<u64>,
}

impl Schedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(acts: Vec<Box<dyn Activity>>) -> Self {
        let mut s = Schedule { acts, next_due: None };
        s.refresh();
        s
    }

    pub fn push(&mut self, a: Box<dyn Activity>) {
        self.acts.push(a);
        self.refresh();
    }

    pub fn is_empty(&self) -> bool {
        self.acts.is_empty()
    }

    fn refresh(&mut self) {
        self.next_due = self.acts.iter().filter_map(|a| a.next_at()).min();
    }

    /// Fire every event due at or before `h.now()`. Cheap when nothing is due.
    #[inline]
    pub fn run_due(&mut self, h: &mut Hierarchy) {
        if let Some(t) = self.next_due {
            if t <= h.now() {
                self.run_until(h, h.now());
            }
        }
    }

    /// Fire events with time ≤ `t` in time order; ties go to the earlier
    /// registered activity.
    pub fn run_until(&mut self, h: &mut Hierarchy, t: u64) {
        loop {
            let mut best: Option<(u64, usize)> = None;
            for (i, a) in self.acts.iter().enumerate() {
                if let Some(at) = a.next_at() {
                    if at <= t && best.is_none_or(|(bt, _)| at < bt) {
                        best = Some((at, i));
                    }
                }
            }
            match best {
                Some((_, i)) => self.acts[i].fire(h),
                None => break,
            }
        }
        self.refresh();
    }

    /// Idle until `t`, firing everything scheduled in between.
    pub fn advance_to(&mut self, h: &mut Hierarchy, t: u64) {
        self.run_until(h, t);
        h.advance_to(t);
    }
}
