use serde::{Deserialize, Serialize};

pub const GAMMA_MIN: f64 = 1.0 / 3.0;
pub const GAMMA_MAX: f64 = 3.0;
/// Floor applied to the profiled uncertainty before dividing.
pub const PROFILED_UNCERTAINTY_FLOOR: f64 = 0.01;

/// Relative content analysis difficulty and its refresh schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaState {
    pub gamma: f64,
    /// Stream time (s) of the last refresh; `None` before the first one.
    pub last_update: Option<f64>,
    pub update_period: f64,
    pub probe_length: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for GammaState {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            last_update: None,
            update_period: 30.0,
            probe_length: 5.0,
            min: GAMMA_MIN,
            max: GAMMA_MAX,
        }
    }
}

impl GammaState {
    /// Whether a refresh is due at stream time `now`. The first refresh
    /// happens once a full period of content has been captured.
    pub fn is_due(&self, now: f64) -> bool {
        let since = self.last_update.unwrap_or(0.0);
        now - since >= self.update_period
    }
}

/// Sets `gamma = clamp(u_n / max(u_p, 0.01), min, max)` and returns it.
pub fn update_gamma(state: &mut GammaState, new_uncertainty: f64, profiled_uncertainty: f64) -> f64 {
    let ratio = new_uncertainty / profiled_uncertainty.max(PROFILED_UNCERTAINTY_FLOOR);
    state.gamma = ratio.clamp(state.min, state.max);
    state.gamma
}

/// Content-adjusted accuracy, capped at 1 for reporting.
pub fn estimate_accuracy(gamma: f64, reference_accuracy: f64) -> f64 {
    scaled_accuracy(gamma, reference_accuracy).min(1.0)
}

/// Uncapped `gamma * A(c)`, used inside the objective so that scaling
/// never reorders configurations.
pub fn scaled_accuracy(gamma: f64, reference_accuracy: f64) -> f64 {
    gamma * reference_accuracy
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn update_examples() {
        let mut s = GammaState::default();
        assert!((update_gamma(&mut s, 0.2, 0.1) - 2.0).abs() < 1e-12);
        assert_eq!(update_gamma(&mut s, 0.15, 0.15), 1.0);
        assert_eq!(update_gamma(&mut s, 0.2, 0.0), 3.0);
        assert_eq!(update_gamma(&mut s, 0.0, 0.3), GAMMA_MIN);
    }

    #[test]
    fn estimate_examples() {
        assert!((estimate_accuracy(0.5, 0.6) - 0.3).abs() < 1e-12);
        assert_eq!(estimate_accuracy(2.0, 0.6), 1.0);
        assert_eq!(estimate_accuracy(1.0, 0.73), 0.73);
    }

    #[test]
    fn refresh_schedule() {
        let mut s = GammaState::default();
        assert!(!s.is_due(29.9));
        assert!(s.is_due(30.0));
        s.last_update = Some(30.0);
        assert!(!s.is_due(59.0));
        assert!(s.is_due(60.5));
    }

    proptest! {
        #[test]
        fn scaling_preserves_order_and_scales_gaps(
            gamma in 0.01..10.0f64, a in 0.0..1.0f64, b in 0.0..1.0f64,
        ) {
            let (sa, sb) = (scaled_accuracy(gamma, a), scaled_accuracy(gamma, b));
            prop_assert_eq!((sa - sb).partial_cmp(&0.0), (a - b).partial_cmp(&0.0).map(|o| if a == b { std::cmp::Ordering::Equal } else { o }));
            prop_assert!(((sa - sb) - gamma * (a - b)).abs() < 1e-12);
        }

        #[test]
        fn gamma_always_within_bounds(un in 0.0..=1.0f64, up in 0.0..=1.0f64) {
            let mut s = GammaState::default();
            let g = update_gamma(&mut s, un, up);
            prop_assert!((GAMMA_MIN..=GAMMA_MAX).contains(&g));
        }
    }
}
