//! Linear four-class energy model.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Activity {
    Hover,
    Cruise,
    Compute,
    Radio,
}

impl Activity {
    pub const ALL: [Activity; 4] = [Activity::Hover, Activity::Cruise, Activity::Compute, Activity::Radio];

    pub fn name(&self) -> &'static str {
        match self {
            Activity::Hover => "hover",
            Activity::Cruise => "cruise",
            Activity::Compute => "compute",
            Activity::Radio => "radio",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    /// Time-based classes scale with elapsed seconds; the others are per unit.
    pub fn is_time_based(&self) -> bool {
        matches!(self, Activity::Hover | Activity::Cruise)
    }
}

/// Coefficients: hover in W, cruise in W per m/s, compute in J per work
/// unit, radio in J per byte.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyModel {
    pub p_hover: f64,
    pub p_cruise: f64,
    pub e_compute: f64,
    pub e_radio: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self { p_hover: 100.0, p_cruise: 20.0, e_compute: 0.01, e_radio: 1e-5 }
    }
}

impl EnergyModel {
    pub fn coefficient(&self, a: Activity) -> f64 {
        match a {
            Activity::Hover => self.p_hover,
            Activity::Cruise => self.p_cruise,
            Activity::Compute => self.e_compute,
            Activity::Radio => self.e_radio,
        }
    }

    /// Energy for `amount` of activity `a` over `seconds` (ignored for
    /// per-unit classes).
    pub fn cost(&self, a: Activity, amount: f64, seconds: f64) -> f64 {
        if a.is_time_based() {
            self.coefficient(a) * amount * seconds
        } else {
            self.coefficient(a) * amount
        }
    }

    /// Power drawn while flying at `speed` m/s.
    pub fn flight_power(&self, speed: f64) -> f64 {
        self.p_hover + self.p_cruise * speed
    }

    pub fn is_valid(&self) -> bool {
        [self.p_hover, self.p_cruise, self.e_compute, self.e_radio].iter().all(|c| c.is_finite() && *c >= 0.0)
    }
}

/// Battery bookkeeping. `remaining` is debited independently of the ledger
/// so the conservation check `capacity = remaining + Σ ledger` is a real
/// audit, not an identity.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyState {
    capacity: f64,
    remaining: f64,
    ledger: [f64; 4],
    pub reserve: f64,
}

impl EnergyState {
    pub fn new(capacity: f64, reserve: f64) -> Self {
        assert!(capacity >= 0.0 && reserve >= 0.0);
        Self { capacity, remaining: capacity, ledger: [0.0; 4], reserve }
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn remaining(&self) -> f64 {
        self.remaining
    }

    pub fn ratio(&self) -> f64 {
        if self.capacity == 0.0 {
            0.0
        } else {
            self.remaining / self.capacity
        }
    }

    pub fn consumed(&self, a: Activity) -> f64 {
        self.ledger[a.index()]
    }

    pub fn total_consumed(&self) -> f64 {
        self.ledger.iter().sum()
    }

    /// Energy above the critical reserve.
    pub fn usable(&self) -> f64 {
        (self.remaining - self.reserve).max(0.0)
    }

    /// `|capacity − remaining − Σ ledger| / capacity`.
    pub fn conservation_error(&self) -> f64 {
        let err = (self.capacity - self.remaining - self.total_consumed()).abs();
        if self.capacity == 0.0 {
            err
        } else {
            err / self.capacity
        }
    }

    /// Debit `joules` to class `a`. On shortfall the battery is drained to
    /// zero, the drained amount booked, and `Err(shortfall)` returned.
    pub fn debit(&mut self, a: Activity, joules: f64) -> Result<f64, f64> {
        debug_assert!(joules >= 0.0);
        if joules <= self.remaining {
            self.remaining -= joules;
            self.ledger[a.index()] += joules;
            Ok(joules)
        } else {
            let drained = self.remaining;
            self.ledger[a.index()] += drained;
            self.remaining = 0.0;
            Err(joules - drained)
        }
    }
}
