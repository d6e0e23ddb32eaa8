use serde::{Deserialize, Serialize};

use super::SimError;

/// Stray-loss fractions; lost particles end up in the drain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrayLosses {
    /// Spilled while pouring the suspension over the stack.
    pub decant: f64,
    /// Left behind when the #500 contents are rinsed into the container.
    pub collect: f64,
}

impl Default for StrayLosses {
    fn default() -> Self {
        StrayLosses {
            decant: 0.02,
            collect: 0.03,
        }
    }
}

/// Free parameters of the particle transport model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessParams {
    /// Probability a cyst, egg or similarly sized particle is in suspension
    /// after mixing and settling a fresh sample.
    pub f_suspend: f64,
    /// How strongly suspension improves as the bucket's soil is depleted:
    /// the effective probability is `f + (1 - f) * boost * (1 - soil_fraction)`.
    pub suspension_boost: f64,
    /// Per 10 s of washing, probability a sub-pore particle drops one sieve.
    pub w_transfer: f64,
    /// Per grind cycle, probability an intact cyst on the mesh ruptures.
    pub r_rupture: f64,
    /// Fraction of a ruptured cyst's eggs that dislodge.
    pub e_release: f64,
    /// Probability the debris mat on the top sieve holds back a cyst-sized
    /// particle during decanting.
    pub hold_up: f64,
    pub large_debris_suspend: f64,
    pub fines_suspend: f64,
    pub losses: StrayLosses,
}

impl Default for ProcessParams {
    fn default() -> Self {
        ProcessParams {
            f_suspend: 0.7,
            suspension_boost: 1.0,
            w_transfer: 0.7846,
            r_rupture: 0.6316,
            e_release: 0.9,
            hold_up: 0.3,
            large_debris_suspend: 0.1,
            fines_suspend: 0.95,
            losses: StrayLosses::default(),
        }
    }
}

impl ProcessParams {
    /// Every efficiency at 1 and every loss at 0.
    pub fn lossless() -> Self {
        ProcessParams {
            f_suspend: 1.0,
            suspension_boost: 1.0,
            w_transfer: 1.0,
            r_rupture: 1.0,
            e_release: 1.0,
            hold_up: 0.0,
            large_debris_suspend: 0.1,
            fines_suspend: 0.95,
            losses: StrayLosses {
                decant: 0.0,
                collect: 0.0,
            },
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fields = [
            ("f_suspend", self.f_suspend),
            ("suspension_boost", self.suspension_boost),
            ("w_transfer", self.w_transfer),
            ("r_rupture", self.r_rupture),
            ("e_release", self.e_release),
            ("hold_up", self.hold_up),
            ("large_debris_suspend", self.large_debris_suspend),
            ("fines_suspend", self.fines_suspend),
            ("losses.decant", self.losses.decant),
            ("losses.collect", self.losses.collect),
        ];
        for (name, v) in fields {
            if !(0.0..=1.0).contains(&v) {
                return Err(SimError::Params(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, SimError> {
        let p: ProcessParams =
            serde_json::from_str(s).map_err(|e| SimError::Params(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    /// Suspension probability for target-sized particles given how much of
    /// the original soil has left the bucket.
    pub fn effective_suspend(&self, depletion: f64) -> f64 {
        let d = depletion.clamp(0.0, 1.0);
        (self.f_suspend + (1.0 - self.f_suspend) * self.suspension_boost * d).clamp(0.0, 1.0)
    }

    /// Probability a sub-pore particle drops one level during a wash.
    pub fn wash_transfer_prob(&self, duration_s: f64) -> f64 {
        if duration_s <= 0.0 {
            return 0.0;
        }
        1.0 - (1.0 - self.w_transfer).powf(duration_s / 10.0)
    }
}
