//! Second-by-second navigation over recorded transitions.

use std::collections::{BTreeMap, HashMap};
use std::thread;
use std::time::{Duration, Instant};

use crate::store::{state_at, TransitionRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    /// Walks recorded history at any pace and direction.
    Replay,
    /// Follows the wall clock; history cannot be navigated.
    Realtime,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CalendarError {
    #[error("navigation is unavailable in realtime mode")]
    NavigationUnavailable,
    #[error("second {0} lies outside the replay window")]
    OutOfWindow(i64),
    #[error("replay finished")]
    Finished,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Notification {
    /// The clock now reads this second.
    Time(i64),
    /// Records stamped with the current second.
    Transitions(i64, Vec<TransitionRecord>),
}

type Observer = Box<dyn FnMut(&Notification) + Send>;

pub struct SensorCalendar {
    mode: ClockMode,
    now: i64,
    from: i64,
    to: i64,
    by_second: BTreeMap<i64, Vec<TransitionRecord>>,
    observers: Vec<Observer>,
}

impl SensorCalendar {
    /// Replay over `[from, to]`, starting at `from` (its records count as
    /// already seen; see [`SensorCalendar::state`]).
    pub fn replay(records: Vec<TransitionRecord>, from: i64, to: i64) -> Self {
        let mut by_second: BTreeMap<i64, Vec<TransitionRecord>> = BTreeMap::new();
        for r in records {
            by_second.entry(r.t).or_default().push(r);
        }
        for v in by_second.values_mut() {
            v.sort();
        }
        SensorCalendar {
            mode: ClockMode::Replay,
            now: from,
            from,
            to,
            by_second,
            observers: Vec::new(),
        }
    }

    pub fn realtime(now: i64) -> Self {
        SensorCalendar {
            mode: ClockMode::Realtime,
            now,
            from: now,
            to: i64::MAX,
            by_second: BTreeMap::new(),
            observers: Vec::new(),
        }
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn now(&self) -> i64 {
        self.now
    }

    pub fn subscribe(&mut self, f: impl FnMut(&Notification) + Send + 'static) {
        self.observers.push(Box::new(f));
    }

    /// Adds a live record (realtime mode feeds these as they arrive).
    pub fn push(&mut self, r: TransitionRecord) {
        self.by_second.entry(r.t).or_default().push(r);
    }

    fn announce(&mut self) -> Vec<Notification> {
        let mut out = vec![Notification::Time(self.now)];
        if let Some(recs) = self.by_second.get(&self.now) {
            out.push(Notification::Transitions(self.now, recs.clone()));
        }
        for n in &out {
            for o in &mut self.observers {
                o(n);
            }
        }
        out
    }

    /// Moves one second forward and announces the new second.
    pub fn step(&mut self) -> Result<Vec<Notification>, CalendarError> {
        if self.mode == ClockMode::Realtime {
            return Err(CalendarError::NavigationUnavailable);
        }
        if self.now >= self.to {
            return Err(CalendarError::Finished);
        }
        self.now += 1;
        Ok(self.announce())
    }

    /// Realtime: catches up to wall-clock second `t`, announcing each
    /// second passed.
    pub fn advance_to(&mut self, t: i64) -> Vec<Notification> {
        let mut out = Vec::new();
        while self.now < t {
            self.now += 1;
            out.extend(self.announce());
        }
        out
    }

    /// Moves one back and announces that second.
    pub fn step_back(&mut self) -> Result<Vec<Notification>, CalendarError> {
        if self.mode == ClockMode::Realtime {
            return Err(CalendarError::NavigationUnavailable);
        }
        if self.now <= self.from {
            return Err(CalendarError::OutOfWindow(self.now - 1));
        }
        self.now -= 1;
        Ok(self.announce())
    }

    pub fn seek(&mut self, t: i64) -> Result<(), CalendarError> {
        if self.mode == ClockMode::Realtime {
            return Err(CalendarError::NavigationUnavailable);
        }
        if t < self.from || t > self.to {
            return Err(CalendarError::OutOfWindow(t));
        }
        self.now = t;
        Ok(())
    }

    pub fn records_at(&self, t: i64) -> &[TransitionRecord] {
        self.by_second.get(&t).map_or(&[], Vec::as_slice)
    }

    /// Every sensor's state as of the current second.
    pub fn state(&self) -> HashMap<String, bool> {
        let recs: Vec<TransitionRecord> = self
            .by_second
            .range(..=self.now)
            .flat_map(|(_, v)| v.iter().cloned())
            .collect();
        state_at(&recs, self.now)
    }

    /// Steps to the end of the window, one second of history per
    /// `1/speed` wall seconds. Returns the number of steps.
    pub fn play(&mut self, speed: f64) -> Result<usize, CalendarError> {
        if self.mode == ClockMode::Realtime {
            return Err(CalendarError::NavigationUnavailable);
        }
        let tick = Duration::from_secs_f64(1.0 / speed.max(1e-3));
        let start = Instant::now();
        let mut steps = 0u32;
        while self.now < self.to {
            let due = start + tick * (steps + 1);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
            self.step()?;
            steps += 1;
        }
        Ok(steps as usize)
    }
}
