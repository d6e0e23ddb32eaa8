//! Sample profiles: the JSON description from which soil samples are drawn.
//!
//! ```json
//! {
//!   "label": "Muscatine",
//!   "volume_cc": 100,
//!   "classes": {
//!     "cyst":  { "count": { "kind": "poisson", "mean": 60 },
//!                "egg_content": { "kind": "negative_binomial", "mean": 200,
//!                                 "dispersion": 10, "max": 400 } },
//!     "fines": { "count": { "kind": "constant", "value": 20000 }, "size_um": [1, 24] }
//!   }
//! }
//! ```
//!
//! `size_um` defaults to the class range and must lie inside it.
//! `egg_content` is only meaningful for cysts and defaults to
//! [`CountDist::default_egg_content`].

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use super::{binomial, ModelError, ParticleBatch, ParticleClass, ParticleKey, SoilSample};
use crate::rng::{stream, StreamKey, SYNTH_STEP};

/// Integer-valued distribution used for counts and egg contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CountDist {
    Constant {
        value: u64,
    },
    Poisson {
        mean: f64,
    },
    Uniform {
        min: u64,
        max: u64,
    },
    /// Gamma-Poisson mixture, redrawn until it falls in `[min, max]`.
    NegativeBinomial {
        mean: f64,
        dispersion: f64,
        #[serde(default)]
        min: u64,
        max: u64,
    },
}

const MAX_REDRAWS: usize = 10_000;

impl CountDist {
    /// Cyst egg content: mean 200, truncated to 0..=400.
    pub fn default_egg_content() -> Self {
        CountDist::NegativeBinomial {
            mean: 200.0,
            dispersion: 10.0,
            min: 0,
            max: 400,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            CountDist::Constant { .. } => Ok(()),
            CountDist::Poisson { mean } if !(mean >= 0.0 && mean.is_finite()) => Err(
                ModelError::Profile(format!("poisson mean must be >= 0, got {mean}")),
            ),
            CountDist::Poisson { .. } => Ok(()),
            CountDist::Uniform { min, max } if min > max => Err(ModelError::Profile(format!(
                "empty uniform range {min}..={max}"
            ))),
            CountDist::Uniform { .. } => Ok(()),
            CountDist::NegativeBinomial {
                mean,
                dispersion,
                min,
                max,
            } => {
                if !(mean >= 0.0 && mean.is_finite()) {
                    return Err(ModelError::Profile(format!(
                        "negative binomial mean must be >= 0, got {mean}"
                    )));
                }
                if !(dispersion > 0.0 && dispersion.is_finite()) {
                    return Err(ModelError::Profile(format!(
                        "dispersion must be > 0, got {dispersion}"
                    )));
                }
                if min > max {
                    return Err(ModelError::Profile(format!(
                        "empty truncation range {min}..={max}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match *self {
            CountDist::Constant { value } => value,
            CountDist::Poisson { mean } => poisson(rng, mean),
            CountDist::Uniform { min, max } => rng.random_range(min..=max),
            CountDist::NegativeBinomial {
                mean,
                dispersion,
                min,
                max,
            } => {
                if mean == 0.0 {
                    return min;
                }
                let gamma = Gamma::new(dispersion, mean / dispersion).expect("validated");
                let mut last = 0;
                for _ in 0..MAX_REDRAWS {
                    let lambda: f64 = gamma.sample(rng);
                    last = poisson(rng, lambda);
                    if (min..=max).contains(&last) {
                        return last;
                    }
                }
                last.clamp(min, max)
            }
        }
    }
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("mean checked positive");
    let x: f64 = d.sample(rng);
    x as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub count: CountDist,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_um: Option<(u32, u32)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub egg_content: Option<CountDist>,
}

impl ClassProfile {
    pub fn new(count: CountDist) -> Self {
        ClassProfile {
            count,
            size_um: None,
            egg_content: None,
        }
    }
}

fn default_volume() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleProfile {
    pub label: String,
    #[serde(default = "default_volume")]
    pub volume_cc: f64,
    pub classes: BTreeMap<ParticleClass, ClassProfile>,
}

impl SampleProfile {
    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let p: SampleProfile =
            serde_json::from_str(s).map_err(|e| ModelError::Profile(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn muscatine() -> Self {
        Self::from_json(include_str!("../../data/profiles/muscatine.json"))
            .expect("shipped profile")
    }

    pub fn nevada() -> Self {
        Self::from_json(include_str!("../../data/profiles/nevada.json")).expect("shipped profile")
    }

    /// Looks up a shipped profile by (case-insensitive) name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "muscatine" => Some(Self::muscatine()),
            "nevada" => Some(Self::nevada()),
            _ => None,
        }
    }

    pub fn size_range(&self, class: ParticleClass) -> (u32, u32) {
        self.classes
            .get(&class)
            .and_then(|c| c.size_um)
            .unwrap_or_else(|| class.size_range_um())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.volume_cc > 0.0 && self.volume_cc.is_finite()) {
            return Err(ModelError::Profile(format!(
                "volume_cc must be > 0, got {}",
                self.volume_cc
            )));
        }
        for (&class, cp) in &self.classes {
            cp.count.validate()?;
            let (lo, hi) = self.size_range(class);
            let (class_lo, class_hi) = class.size_range_um();
            if lo > hi {
                return Err(ModelError::Profile(format!(
                    "{class}: empty size range {lo}..={hi}"
                )));
            }
            if lo < class_lo || hi > class_hi {
                return Err(ModelError::Profile(format!(
                    "{class}: size range {lo}..={hi} outside class range {class_lo}..={class_hi}"
                )));
            }
            if let Some(eggs) = &cp.egg_content {
                if class != ParticleClass::Cyst {
                    return Err(ModelError::Profile(format!(
                        "{class}: only cysts carry eggs"
                    )));
                }
                eggs.validate()?;
                if let CountDist::NegativeBinomial { max, .. } | CountDist::Uniform { max, .. } =
                    eggs
                {
                    if *max > u64::from(u32::MAX) {
                        return Err(ModelError::Profile("egg content too large".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Draws a sample from a profile. The result depends only on `(profile, seed)`.
pub fn synthesize_sample(profile: &SampleProfile, seed: u64) -> Result<SoilSample, ModelError> {
    synthesize_with_key(profile, seed, StreamKey::default())
}

/// As [`synthesize_sample`], drawing from the synthesis stream of `key`.
pub fn synthesize_with_key(
    profile: &SampleProfile,
    seed: u64,
    key: StreamKey,
) -> Result<SoilSample, ModelError> {
    profile.validate()?;
    let mut rng = stream(seed, key.at(0, SYNTH_STEP));
    let mut batch = ParticleBatch::new();
    for (&class, cp) in &profile.classes {
        let n = cp.count.sample(&mut rng);
        let (lo, hi) = profile.size_range(class);
        if class == ParticleClass::Cyst {
            let eggs = cp
                .egg_content
                .clone()
                .unwrap_or_else(CountDist::default_egg_content);
            for _ in 0..n {
                let d = rng.random_range(lo..=hi);
                let e = eggs.sample(&mut rng) as u32;
                batch.add(ParticleKey::cyst(d, e), 1);
            }
        } else {
            scatter_uniform(&mut batch, &mut rng, class, n, (lo, hi));
        }
    }
    Ok(SoilSample {
        volume_cc: profile.volume_cc,
        batch,
        origin_label: profile.label.clone(),
    })
}

/// Spreads `n` particles uniformly over the 1 µm bins of `range` with a
/// multinomial draw built from sequential binomials.
pub fn scatter_uniform<R: Rng + ?Sized>(
    batch: &mut ParticleBatch,
    rng: &mut R,
    class: ParticleClass,
    n: u64,
    (lo, hi): (u32, u32),
) {
    let mut left = n;
    let bins = u64::from(hi - lo) + 1;
    for (i, d) in (lo..=hi).enumerate() {
        if left == 0 {
            break;
        }
        let remaining_bins = bins - i as u64;
        let k = if remaining_bins == 1 {
            left
        } else {
            binomial(rng, left, 1.0 / remaining_bins as f64)
        };
        batch.add(ParticleKey::new(class, d), k);
        left -= k;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cysts_only(count: CountDist, eggs: CountDist) -> SampleProfile {
        let mut classes = BTreeMap::new();
        classes.insert(
            ParticleClass::Cyst,
            ClassProfile {
                count,
                size_um: None,
                egg_content: Some(eggs),
            },
        );
        SampleProfile {
            label: "test".into(),
            volume_cc: 100.0,
            classes,
        }
    }

    #[test]
    fn zero_cysts_means_zero_eggs() {
        let p = cysts_only(
            CountDist::Constant { value: 0 },
            CountDist::default_egg_content(),
        );
        let s = synthesize_sample(&p, 1).unwrap();
        assert_eq!(s.batch.count_class(ParticleClass::Cyst), 0);
        assert_eq!(s.batch.egg_total(), 0);
    }

    #[test]
    fn constant_content_gives_exact_inventory() {
        let p = cysts_only(
            CountDist::Constant { value: 100 },
            CountDist::Constant { value: 200 },
        );
        let s = synthesize_sample(&p, 9).unwrap();
        assert_eq!(s.batch.count_class(ParticleClass::Cyst), 100);
        assert_eq!(s.batch.egg_total(), 20_000);
    }

    #[test]
    fn same_seed_same_sample() {
        let p = SampleProfile::muscatine();
        let a = synthesize_sample(&p, 42).unwrap();
        let b = synthesize_sample(&p, 42).unwrap();
        let c = synthesize_sample(&p, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn diameters_stay_in_class_ranges() {
        for p in [SampleProfile::muscatine(), SampleProfile::nevada()] {
            let s = synthesize_sample(&p, 3).unwrap();
            for (k, _) in s.batch.iter() {
                let (lo, hi) = k.class.size_range_um();
                assert!((lo..=hi).contains(&k.diameter_um), "{k:?}");
            }
        }
    }

    #[test]
    fn invalid_profiles_are_rejected() {
        let p = cysts_only(
            CountDist::Poisson { mean: -1.0 },
            CountDist::default_egg_content(),
        );
        assert!(matches!(
            synthesize_sample(&p, 1),
            Err(ModelError::Profile(_))
        ));
        let p = cysts_only(
            CountDist::Uniform { min: 5, max: 2 },
            CountDist::default_egg_content(),
        );
        assert!(p.validate().is_err());
        let mut p = cysts_only(
            CountDist::Constant { value: 1 },
            CountDist::default_egg_content(),
        );
        p.classes.get_mut(&ParticleClass::Cyst).unwrap().size_um = Some((100, 300));
        assert!(p.validate().is_err());
        p.classes.get_mut(&ParticleClass::Cyst).unwrap().size_um = Some((400, 300));
        assert!(p.validate().is_err());
    }

    #[test]
    fn egg_content_default_mean_is_near_200() {
        let d = CountDist::default_egg_content();
        let mut rng = stream(1, StreamKey::default());
        let n = 20_000;
        let draws: Vec<u64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        assert!(draws.iter().all(|&x| x <= 400));
        let mean = draws.iter().sum::<u64>() as f64 / n as f64;
        assert!((mean - 200.0).abs() < 3.0, "mean {mean}");
    }

    #[test]
    fn scatter_conserves_count() {
        let mut rng = stream(5, StreamKey::default());
        let mut b = ParticleBatch::new();
        scatter_uniform(&mut b, &mut rng, ParticleClass::Fines, 12_345, (1, 24));
        assert_eq!(b.total_count(), 12_345);
        assert!(b.bin_count() <= 24);
    }
}
