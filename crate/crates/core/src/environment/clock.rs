//! Discrete simulation clock.

use chrono::{Datelike, Duration, Months, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

/// Length of one tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TickLength {
    Minutes(u32),
    /// One calendar month per tick; daily hooks are disabled.
    Month,
}

/// What changed when the clock advanced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TickEvents {
    pub tick: u64,
    /// A new calendar day began with this tick.
    pub day_boundary: bool,
    pub month_boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimClock {
    start: NaiveDateTime,
    tick_length: TickLength,
    tick: u64,
}

impl SimClock {
    pub fn new(start: NaiveDateTime, tick_length: TickLength) -> Self {
        if let TickLength::Minutes(m) = tick_length {
            assert!(m > 0, "tick length must be positive");
        }
        Self { start, tick_length, tick: 0 }
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn tick_length(&self) -> TickLength {
        self.tick_length
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Sim-time of tick `tick`.
    pub fn time_at(&self, tick: u64) -> NaiveDateTime {
        match self.tick_length {
            TickLength::Minutes(m) => self.start + Duration::minutes(m as i64 * tick as i64),
            TickLength::Month => self.start + Months::new(tick as u32),
        }
    }

    pub fn now(&self) -> NaiveDateTime {
        self.time_at(self.tick)
    }

    /// 1-based day of the run; the start date is day 1.
    pub fn sim_day(&self) -> u32 {
        self.day_of(self.now())
    }

    pub fn day_of(&self, t: NaiveDateTime) -> u32 {
        (t.date() - self.start.date()).num_days() as u32 + 1
    }

    /// 1-based month of the run.
    pub fn sim_month(&self) -> u32 {
        let now = self.now();
        let months = (now.year() - self.start.year()) * 12 + now.month() as i32 - self.start.month() as i32;
        months as u32 + 1
    }

    pub fn date(&self) -> NaiveDate {
        self.now().date()
    }

    /// Minutes of sim-time covered by one tick (30 days for monthly ticks).
    pub fn tick_minutes(&self) -> u32 {
        match self.tick_length {
            TickLength::Minutes(m) => m,
            TickLength::Month => 30 * 24 * 60,
        }
    }

    /// Number of ticks in `days` simulated days.
    pub fn ticks_for_days(&self, days: u32) -> u64 {
        match self.tick_length {
            TickLength::Minutes(m) => (days as u64 * 24 * 60).div_ceil(m as u64),
            TickLength::Month => days.div_ceil(30) as u64,
        }
    }

    pub fn advance(&mut self) -> TickEvents {
        let before = self.now();
        self.tick += 1;
        let after = self.now();
        let monthly = self.tick_length == TickLength::Month;
        TickEvents {
            tick: self.tick,
            day_boundary: !monthly && after.date() != before.date(),
            month_boundary: (after.year(), after.month()) != (before.year(), before.month()),
        }
    }

    /// Whether `tick` is the first tick of its calendar day.
    pub fn is_first_tick_of_day(&self, tick: u64) -> bool {
        tick == 0 || self.time_at(tick).date() != self.time_at(tick - 1).date()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn midnight() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2019, 8, 28).unwrap().and_hms_opt(0, 0, 0).unwrap()
    }

    #[test]
    fn forty_eight_half_hours_make_one_day() {
        let mut c = SimClock::new(midnight(), TickLength::Minutes(30));
        let days = (0..48).filter(|_| c.advance().day_boundary).count();
        assert_eq!(days, 1);
        assert_eq!(c.sim_day(), 2);
        assert_eq!(c.ticks_for_days(9), 432);
    }

    #[test]
    fn sim_time_is_start_plus_ticks() {
        let mut c = SimClock::new(midnight(), TickLength::Minutes(30));
        for _ in 0..7 {
            c.advance();
        }
        assert_eq!(c.now(), midnight() + Duration::minutes(210));
        assert_eq!(c.tick(), 7);
    }

    #[test]
    fn monthly_ticks_fire_month_hooks_only() {
        let mut c = SimClock::new(midnight(), TickLength::Month);
        let mut months = 0;
        for _ in 0..120 {
            let e = c.advance();
            assert!(!e.day_boundary);
            months += e.month_boundary as u32;
        }
        assert_eq!(months, 120);
        assert_eq!(c.sim_month(), 121);
        assert_eq!(c.now().year(), 2029);
    }

    #[test]
    fn first_tick_of_day() {
        let c = SimClock::new(midnight(), TickLength::Minutes(30));
        assert!(c.is_first_tick_of_day(0));
        assert!(!c.is_first_tick_of_day(1));
        assert!(c.is_first_tick_of_day(48));
        assert!(c.is_first_tick_of_day(144));
        assert_eq!(c.day_of(c.time_at(144)), 4);
    }
}
