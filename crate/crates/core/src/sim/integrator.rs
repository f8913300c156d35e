use super::SimError;
use crate::trace::NetworkTrace;

/// Piecewise-constant uplink rate replayed from a 1 Hz trace.
///
/// Stream time 0 maps to trace sample `offset`; beyond the end of the trace
/// the final sample's rate continues indefinitely.
#[derive(Debug, Clone)]
pub struct ThroughputIntegrator {
    /// Bits per second for each stream second.
    rates: Vec<f64>,
    stall_cap: f64,
    cursor: f64,
}

impl ThroughputIntegrator {
    pub fn new(trace: &NetworkTrace, offset: usize, stall_cap: f64) -> Self {
        let rates = trace.samples[offset.min(trace.len().saturating_sub(1))..]
            .iter()
            .map(|s| s.throughput * 1e6)
            .collect();
        Self::from_rates_bps(rates, stall_cap)
    }

    /// Rates in Mbps, one per second from stream time 0.
    pub fn from_mbps(rates: &[f64], stall_cap: f64) -> Self {
        Self::from_rates_bps(rates.iter().map(|r| r * 1e6).collect(), stall_cap)
    }

    fn from_rates_bps(mut rates: Vec<f64>, stall_cap: f64) -> Self {
        if rates.is_empty() {
            rates.push(0.0);
        }
        Self {
            rates,
            stall_cap,
            cursor: 0.0,
        }
    }

    /// Rate in bits/s during the second containing `t`, and the end of that
    /// constant segment.
    fn segment(&self, t: f64) -> (f64, f64) {
        let idx = t.max(0.0).floor() as usize;
        if idx + 1 >= self.rates.len() {
            (*self.rates.last().expect("non-empty"), f64::INFINITY)
        } else {
            (self.rates[idx], (idx + 1) as f64)
        }
    }

    pub fn rate_mbps(&self, t: f64) -> f64 {
        self.segment(t).0 / 1e6
    }

    pub fn cursor(&self) -> f64 {
        self.cursor
    }

    /// Time at which `bits` sent from `start` finish, solving
    /// `∫_start^finish b(t) dt = bits` exactly. Moves the cursor to the
    /// finish time; transmissions must not start before the cursor.
    pub fn transmit(&mut self, start: f64, bits: f64) -> Result<f64, SimError> {
        if start < self.cursor - 1e-9 {
            return Err(SimError::Causality(format!(
                "transmission at {start:.6} s starts before the link is free at {:.6} s",
                self.cursor
            )));
        }
        let finish = self.finish_time(start, bits)?;
        self.cursor = finish;
        Ok(finish)
    }

    /// Like [`transmit`](Self::transmit) but without touching the cursor.
    pub fn finish_time(&self, start: f64, bits: f64) -> Result<f64, SimError> {
        let mut t = start;
        let mut remaining = bits.max(0.0);
        if remaining == 0.0 {
            return Ok(start);
        }
        loop {
            let (rate, seg_end) = self.segment(t);
            if rate > 0.0 {
                let capacity = rate * (seg_end - t);
                if capacity >= remaining {
                    let finish = t + remaining / rate;
                    if finish - start > self.stall_cap {
                        break;
                    }
                    return Ok(finish);
                }
                remaining -= capacity;
            }
            t = seg_end;
            if !t.is_finite() || t - start > self.stall_cap {
                break;
            }
        }
        Err(SimError::Stall {
            at: start,
            cap: self.stall_cap,
        })
    }

    /// `∫_t0^t1 b(t) dt` in bits.
    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        let mut t = t0;
        let mut total = 0.0;
        while t < t1 {
            let (rate, seg_end) = self.segment(t);
            let end = seg_end.min(t1);
            total += rate * (end - t);
            t = end;
        }
        total
    }

    /// Mean rate over `[t0, t1]` in Mbps; the instantaneous rate for an
    /// empty interval.
    pub fn average_mbps(&self, t0: f64, t1: f64) -> f64 {
        if t1 <= t0 {
            return self.rate_mbps(t0);
        }
        self.integral(t0, t1) / (t1 - t0) / 1e6
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_transmit() {
        let mut i = ThroughputIntegrator::from_mbps(&[2.0, 4.0], 120.0);
        assert_eq!(i.transmit(0.0, 4e6).unwrap(), 1.5);
        let i = ThroughputIntegrator::from_mbps(&[4.0], 120.0);
        assert_eq!(i.finish_time(0.0, 2e6).unwrap(), 0.5);
        assert_eq!(i.finish_time(3.25, 0.0).unwrap(), 3.25);
    }

    #[test]
    fn last_rate_extends() {
        let i = ThroughputIntegrator::from_mbps(&[1.0, 1.0, 3.0], 120.0);
        assert!((i.finish_time(10.0, 6e6).unwrap() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn stall_after_cap() {
        let i = ThroughputIntegrator::from_mbps(&[1.0, 0.0], 120.0);
        assert!(matches!(i.finish_time(0.5, 1e6), Err(SimError::Stall { .. })));
        let i = ThroughputIntegrator::from_mbps(&[0.0; 200], 10.0);
        assert!(matches!(i.finish_time(0.0, 1.0), Err(SimError::Stall { .. })));
    }

    #[test]
    fn cursor_enforces_order() {
        let mut i = ThroughputIntegrator::from_mbps(&[4.0], 120.0);
        i.transmit(0.0, 4e6).unwrap();
        assert!(matches!(i.transmit(0.5, 1.0), Err(SimError::Causality(_))));
    }

    #[test]
    fn integral_matches_transmit() {
        let i = ThroughputIntegrator::from_mbps(&[2.0, 0.5, 7.0, 3.0], 120.0);
        let finish = i.finish_time(0.3, 5e6).unwrap();
        assert!((i.integral(0.3, finish) - 5e6).abs() < 1e-3);
        assert!((i.average_mbps(0.0, 2.0) - 1.25).abs() < 1e-12);
    }
}
