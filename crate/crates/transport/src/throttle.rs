//! Downstream bandwidth emulation for weight frames.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

/// Time source in seconds since an arbitrary origin.
pub trait Clock: Send + Sync {
    fn now(&self) -> f64;
}

/// Wall-clock time.
#[derive(Debug, Clone)]
pub struct RealClock {
    origin: Instant,
}

impl Default for RealClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for RealClock {
    fn now(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }
}

/// Time advanced explicitly in whole control periods. Clones share the
/// same counter.
#[derive(Debug, Clone)]
pub struct SimClock {
    ticks: Arc<AtomicU64>,
    period: f64,
}

impl SimClock {
    pub fn new(period: f64) -> Self {
        Self {
            ticks: Arc::new(AtomicU64::new(0)),
            period,
        }
    }

    pub fn advance(&self, ticks: u64) {
        self.ticks.fetch_add(ticks, Ordering::SeqCst);
    }

    pub fn ticks(&self) -> u64 {
        self.ticks.load(Ordering::SeqCst)
    }

    pub fn period(&self) -> f64 {
        self.period
    }
}

impl Clock for SimClock {
    fn now(&self) -> f64 {
        self.ticks() as f64 * self.period
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ThrottleConfig {
    /// Downstream limit in Mbit/s (10^6 bits); `None` is unlimited.
    pub bandwidth_mbit: Option<f64>,
    /// When set, transfer times are truncated to whole multiples of this
    /// period (at least one), so simulated deliveries land on tick
    /// boundaries.
    pub quantum: Option<f64>,
}

impl ThrottleConfig {
    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn mbit(bandwidth: f64) -> Self {
        Self {
            bandwidth_mbit: Some(bandwidth),
            quantum: None,
        }
    }

    pub fn quantised(self, period: f64) -> Self {
        Self {
            quantum: Some(period),
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        if let Some(b) = self.bandwidth_mbit {
            if !(b > 0.0 && b.is_finite()) {
                return Err("bandwidth must be positive");
            }
        }
        if let Some(q) = self.quantum {
            if !(q > 0.0) {
                return Err("quantum must be positive");
            }
        }
        Ok(())
    }

    /// Seconds needed to push `bytes` through the link.
    pub fn transfer_seconds(&self, bytes: usize) -> f64 {
        let raw = match self.bandwidth_mbit {
            None => 0.0,
            Some(b) => bytes as f64 * 8.0 / (b * 1e6),
        };
        match self.quantum {
            Some(q) => interval_ticks(raw, q) as f64 * q,
            None => raw,
        }
    }
}

/// Control periods between successive updates when each transfer takes
/// `transfer_seconds`: whole periods elapsed, and never less than one.
pub fn interval_ticks(transfer_seconds: f64, period: f64) -> u64 {
    ((transfer_seconds / period) + 1e-9).floor().max(1.0) as u64
}

/// Absolute-time slack when comparing completion against the clock.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug)]
struct InFlight<T> {
    item: T,
    done_at: f64,
}

/// A single link that carries one item at a time. An item submitted while
/// the link is busy waits; a newer submission replaces a waiting one.
#[derive(Debug)]
pub struct Throttle<T> {
    cfg: ThrottleConfig,
    in_flight: Option<InFlight<T>>,
    waiting: Option<(T, usize)>,
    ready: VecDeque<T>,
    superseded: u64,
}

impl<T> Throttle<T> {
    pub fn new(cfg: ThrottleConfig) -> Self {
        Self {
            cfg,
            in_flight: None,
            waiting: None,
            ready: VecDeque::new(),
            superseded: 0,
        }
    }

    pub fn config(&self) -> ThrottleConfig {
        self.cfg
    }

    /// Submits `item` of `bytes` on the wire at time `now`.
    pub fn send(&mut self, item: T, bytes: usize, now: f64) {
        self.advance(now);
        if self.in_flight.is_none() {
            self.in_flight = Some(InFlight {
                item,
                done_at: now + self.cfg.transfer_seconds(bytes),
            });
        } else if self.waiting.replace((item, bytes)).is_some() {
            self.superseded += 1;
        }
    }

    fn advance(&mut self, now: f64) {
        while let Some(f) = &self.in_flight {
            if f.done_at > now + TIME_EPS {
                break;
            }
            let done = self.in_flight.take().unwrap();
            self.ready.push_back(done.item);
            if let Some((item, bytes)) = self.waiting.take() {
                self.in_flight = Some(InFlight {
                    item,
                    done_at: done.done_at + self.cfg.transfer_seconds(bytes),
                });
            }
        }
    }

    /// Items whose transfer has completed by `now`, in send order.
    pub fn poll(&mut self, now: f64) -> Vec<T> {
        self.advance(now);
        self.ready.drain(..).collect()
    }

    /// Completion time of the item on the wire, if any.
    pub fn next_completion(&self) -> Option<f64> {
        self.in_flight.as_ref().map(|f| f.done_at)
    }

    pub fn is_idle(&self) -> bool {
        self.in_flight.is_none() && self.waiting.is_none() && self.ready.is_empty()
    }

    /// Waiting items replaced by newer ones.
    pub fn superseded(&self) -> u64 {
        self.superseded
    }

    pub fn clear(&mut self) {
        self.in_flight = None;
        self.waiting = None;
        self.ready.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PERIOD: f64 = 1.0 / 30.0;

    #[test]
    fn transfer_time_arithmetic() {
        let c = ThrottleConfig::mbit(0.5);
        assert!((c.transfer_seconds(176_148) - 2.818368).abs() < 1e-9);
        assert_eq!(ThrottleConfig::unlimited().transfer_seconds(1 << 20), 0.0);
        assert_eq!(interval_ticks(0.0, PERIOD), 1);
        assert_eq!(interval_ticks(2.0 * PERIOD, PERIOD), 2);
        assert_eq!(interval_ticks(2.99 * PERIOD, PERIOD), 2);
    }

    #[test]
    fn unlimited_delivers_immediately() {
        let mut t = Throttle::new(ThrottleConfig::unlimited());
        t.send(1, 1000, 5.0);
        assert_eq!(t.poll(5.0), vec![1]);
    }

    #[test]
    fn busy_link_delays_and_supersedes() {
        let mut t = Throttle::new(ThrottleConfig::mbit(1.0));
        // 125,000 bytes = 1 s at 1 Mbit/s.
        t.send("a", 125_000, 0.0);
        t.send("b", 125_000, 0.1);
        t.send("c", 125_000, 0.2);
        assert_eq!(t.superseded(), 1);
        assert!(t.poll(0.99).is_empty());
        assert_eq!(t.poll(1.0), vec!["a"]);
        assert!(t.poll(1.5).is_empty());
        assert_eq!(t.poll(2.0), vec!["c"]);
        assert!(t.is_idle());
    }

    #[test]
    fn quantised_delivery_lands_on_ticks() {
        let cfg = ThrottleConfig::mbit(0.5).quantised(PERIOD);
        let clock = SimClock::new(PERIOD);
        let mut t = Throttle::new(cfg);
        clock.advance(7);
        t.send((), 176_148, clock.now());
        let mut waited = 0;
        loop {
            clock.advance(1);
            waited += 1;
            if !t.poll(clock.now()).is_empty() {
                break;
            }
        }
        assert_eq!(waited, 84);
    }

    #[test]
    fn sim_clock_clones_share_time() {
        let a = SimClock::new(0.5);
        let b = a.clone();
        a.advance(3);
        assert_eq!(b.now(), 1.5);
        assert_eq!(b.ticks(), 3);
    }
}
