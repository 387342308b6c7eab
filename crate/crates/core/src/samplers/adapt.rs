use super::AdaptPolicy;

pub const BETA_MIN: f64 = 1e-6;
pub const BETA_MAX: f64 = 1.0;

/// One multiplicative adaptation step of `β` from a window acceptance rate.
pub fn adapt_beta(beta: f64, rate: f64, policy: &AdaptPolicy) -> f64 {
    if rate > policy.target_high {
        (beta * policy.factor).min(BETA_MAX)
    } else if rate < policy.target_low {
        (beta / policy.factor).max(BETA_MIN)
    } else {
        beta
    }
}

/// Windowed `β` controller for one particle.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaController {
    beta: f64,
    policy: AdaptPolicy,
    window_accepted: usize,
    window_seen: usize,
    frozen: bool,
}

impl BetaController {
    pub fn new(beta0: f64, policy: AdaptPolicy) -> Self {
        Self {
            beta: beta0.clamp(BETA_MIN, BETA_MAX),
            policy,
            window_accepted: 0,
            window_seen: 0,
            frozen: false,
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Stops adaptation if the policy asks for it.
    pub fn end_burn_in(&mut self) {
        if self.policy.freeze_after_burn_in {
            self.frozen = true;
        }
    }

    /// Records one proposal; adapts when a window completes.
    pub fn record(&mut self, accepted: bool) {
        if self.frozen {
            return;
        }
        self.window_seen += 1;
        if accepted {
            self.window_accepted += 1;
        }
        if self.window_seen == self.policy.window {
            let rate = self.window_accepted as f64 / self.window_seen as f64;
            self.beta = adapt_beta(self.beta, rate, &self.policy);
            self.window_seen = 0;
            self.window_accepted = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_in_band_keeps_beta() {
        assert_eq!(adapt_beta(0.37, 0.2, &AdaptPolicy::default()), 0.37);
    }

    #[test]
    fn high_rate_grows_beta() {
        assert_eq!(adapt_beta(0.5, 0.5, &AdaptPolicy::default()), 0.75);
        assert_eq!(adapt_beta(0.9, 0.5, &AdaptPolicy::default()), 1.0);
    }

    #[test]
    fn low_rate_shrinks_to_clamp() {
        let p = AdaptPolicy::default();
        let mut b = 0.5;
        for _ in 0..100 {
            let next = adapt_beta(b, 0.01, &p);
            assert!(next <= b);
            b = next;
        }
        assert_eq!(b, BETA_MIN);
    }

    #[test]
    fn controller_adapts_per_window_and_freezes() {
        let policy = AdaptPolicy {
            window: 4,
            ..AdaptPolicy::default()
        };
        let mut c = BetaController::new(0.5, policy);
        for _ in 0..3 {
            c.record(true);
        }
        assert_eq!(c.beta(), 0.5);
        c.record(true);
        assert_eq!(c.beta(), 0.75);
        c.end_burn_in();
        for _ in 0..8 {
            c.record(false);
        }
        assert_eq!(c.beta(), 0.75);
    }
}
