use rand::Rng;

/// What a quiet expiry did to the timer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expiry {
    /// Interval doubled (capped at the maximum); re-arm with this value.
    Doubled(u64),
    /// The interval had already reached the maximum: the watched value is stable.
    AtMax,
}

/// Stabilization timer: starts in `(I/2, I]`, doubles on every quiet expiry
/// up to `sp * I`, and restarts from the random window on any change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrickleTimer {
    base: u64,
    max: u64,
    current: u64,
    stable: bool,
}

impl TrickleTimer {
    pub fn new(base_ms: u64, sp: u32) -> Self {
        let base = base_ms.max(1);
        TrickleTimer { base, max: base * sp.max(1) as u64, current: base, stable: false }
    }

    /// Draws a fresh interval from `(I/2, I]` and returns it.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> u64 {
        let lo = self.base / 2 + 1;
        self.current = if lo >= self.base { self.base } else { rng.random_range(lo..=self.base) };
        self.stable = false;
        self.current
    }

    /// Called when the timer fired and nothing changed since the last firing.
    pub fn expire(&mut self) -> Expiry {
        if self.current < self.max {
            self.current = (self.current * 2).min(self.max);
            Expiry::Doubled(self.current)
        } else {
            self.stable = true;
            Expiry::AtMax
        }
    }

    pub fn current(&self) -> u64 {
        self.current
    }

    pub fn max(&self) -> u64 {
        self.max
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn is_stable(&self) -> bool {
        self.stable
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn initial_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = TrickleTimer::new(64, 2);
        for _ in 0..1000 {
            let d = t.reset(&mut rng);
            assert!(d > 32 && d <= 64, "{d}");
        }
    }

    #[test]
    fn doubling_is_capped() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut t = TrickleTimer::new(64, 2);
        t.reset(&mut rng);
        t.current = 64;
        assert_eq!(t.expire(), Expiry::Doubled(128));
        assert_eq!(t.expire(), Expiry::AtMax);
        assert!(t.is_stable());
        t.current = 40;
        t.stable = false;
        assert_eq!(t.expire(), Expiry::Doubled(80));
        assert_eq!(t.expire(), Expiry::Doubled(128));
        assert_eq!(t.expire(), Expiry::AtMax);
    }

    #[test]
    fn quiet_intervals_follow_the_doubling_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for sp in [1u32, 2, 4, 8, 16] {
            for _ in 0..200 {
                let mut t = TrickleTimer::new(64, sp);
                let initial = t.reset(&mut rng);
                let mut intervals = alloc::vec![initial];
                while let Expiry::Doubled(d) = t.expire() {
                    intervals.push(d);
                }
                for (k, d) in intervals.iter().enumerate() {
                    assert_eq!(*d, (initial << k).min(64 * sp as u64));
                }
                // The firing that ends the last interval declares stability.
                let firings_before_stable = intervals.len() - 1;
                let bound = sp.next_power_of_two().trailing_zeros() as usize + 1;
                assert!(firings_before_stable <= bound, "sp={sp} initial={initial}: {intervals:?}");
            }
        }
    }
}
