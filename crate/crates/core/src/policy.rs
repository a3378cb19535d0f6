//! Policy sets: airspace, security and local rules as keyed constraints.
//!
//! Interval constraints bound a named numeric attribute (`altitude` bounds the
//! z coordinate, `speed` bounds leg speed). Region constraints hold two
//! polygon lists: a point must lie in *every* allowed polygon and in *no*
//! forbidden polygon. That representation makes merging exact without
//! polygon clipping: allowed lists concatenate (intersection) and forbidden
//! lists concatenate (union).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{Polygon, Vec3};

pub const ALTITUDE: &str = "altitude";
pub const SPEED: &str = "speed";
pub const GEOFENCE: &str = "geofence";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Constraint {
    Interval([f64; 2]),
    Region(Region),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub allowed: Vec<Polygon>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub forbidden: Vec<Polygon>,
}

impl Region {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.allowed.iter().all(|poly| poly.contains(p)) && !self.forbidden.iter().any(|poly| poly.contains(p))
    }

    pub fn contains_segment(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        self.allowed.iter().all(|poly| poly.contains_segment(a, b))
            && !self.forbidden.iter().any(|poly| poly.intersects_segment(a, b))
    }

    fn canonicalize(&mut self) {
        for list in [&mut self.allowed, &mut self.forbidden] {
            list.sort_by(|a, b| a.canonical_cmp(b));
            list.dedup_by(|a, b| a.canonical_cmp(b).is_eq());
        }
    }
}

impl Constraint {
    pub fn interval(min: f64, max: f64) -> Self {
        Constraint::Interval([min, max])
    }

    pub fn is_valid(&self) -> bool {
        match self {
            Constraint::Interval([lo, hi]) => lo.is_finite() && hi.is_finite() && lo <= hi,
            Constraint::Region(r) => r.allowed.iter().chain(&r.forbidden).all(Polygon::is_valid),
        }
    }
}

/// Keyed rule set. Keys are unique by construction.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolicySet {
    rules: BTreeMap<String, Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Harmonised {
    Compatible(PolicySet),
    Incompatible(Vec<String>),
}

impl Harmonised {
    pub fn is_compatible(&self) -> bool {
        matches!(self, Harmonised::Compatible(_))
    }
}

impl PolicySet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, c: Constraint) -> Self {
        self.insert(key, c);
        self
    }

    pub fn with_interval(self, key: &str, min: f64, max: f64) -> Self {
        self.with(key, Constraint::interval(min, max))
    }

    pub fn with_region(self, key: &str, allowed: Vec<Polygon>, forbidden: Vec<Polygon>) -> Self {
        self.with(key, Constraint::Region(Region { allowed, forbidden }))
    }

    /// Insert or replace a rule (used by airspace injunctions).
    pub fn insert(&mut self, key: &str, mut c: Constraint) {
        if let Constraint::Region(r) = &mut c {
            r.canonicalize();
        }
        self.rules.insert(key.to_string(), c);
    }

    pub fn get(&self, key: &str) -> Option<&Constraint> {
        self.rules.get(key)
    }

    pub fn rules(&self) -> impl Iterator<Item = (&str, &Constraint)> {
        self.rules.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_valid(&self) -> bool {
        self.rules.values().all(Constraint::is_valid)
    }

    /// Region constraints are kept sorted so equal sets compare equal.
    pub fn canonical(mut self) -> Self {
        for c in self.rules.values_mut() {
            if let Constraint::Region(r) = c {
                r.canonicalize();
            }
        }
        self
    }

    /// Rule keys violated by a waypoint. `altitude` is checked against z and
    /// every region rule against the horizontal position.
    pub fn point_violations(&self, p: &Vec3) -> Vec<String> {
        let mut out = Vec::new();
        for (k, c) in &self.rules {
            let bad = match c {
                Constraint::Interval([lo, hi]) if k == ALTITUDE => p.z < *lo || p.z > *hi,
                Constraint::Interval(_) => false,
                Constraint::Region(r) => !r.contains([p.x, p.y]),
            };
            if bad {
                out.push(k.clone());
            }
        }
        out
    }

    /// Rule keys violated by a straight leg flown at `speed`.
    pub fn leg_violations(&self, a: &Vec3, b: &Vec3, speed: f64) -> Vec<String> {
        let mut out = Vec::new();
        for (k, c) in &self.rules {
            let bad = match c {
                // altitude is linear along the leg, so endpoints decide it
                Constraint::Interval([lo, hi]) if k == ALTITUDE => a.z.min(b.z) < *lo || a.z.max(b.z) > *hi,
                Constraint::Interval([lo, hi]) if k == SPEED => speed < *lo || speed > *hi,
                Constraint::Interval(_) => false,
                Constraint::Region(r) => !r.contains_segment([a.x, a.y], [b.x, b.y]),
            };
            if bad {
                out.push(k.clone());
            }
        }
        out
    }

    /// Check named numeric attributes and an optional horizontal position.
    /// Interval rules whose key is not among the attributes do not apply.
    pub fn attribute_violations(&self, attrs: &BTreeMap<String, f64>, position: Option<[f64; 2]>) -> Vec<String> {
        let mut out = Vec::new();
        for (k, c) in &self.rules {
            let bad = match c {
                Constraint::Interval([lo, hi]) => attrs.get(k).is_some_and(|v| v < lo || v > hi),
                Constraint::Region(r) => position.is_some_and(|p| !r.contains(p)),
            };
            if bad {
                out.push(k.clone());
            }
        }
        out
    }
}

/// Merge a candidate policy into a baseline. Shared interval keys intersect
/// (an empty intersection is a conflict); shared region keys intersect their
/// allowed areas and union their forbidden areas; keys present on one side
/// carry over unchanged. The result is at least as restrictive as either
/// input.
pub fn harmonise_policy(candidate: &PolicySet, baseline: &PolicySet) -> Harmonised {
    let mut merged = BTreeMap::new();
    let mut conflicts = Vec::new();
    let keys: std::collections::BTreeSet<&String> = candidate.rules.keys().chain(baseline.rules.keys()).collect();
    for key in keys {
        let c = match (candidate.rules.get(key), baseline.rules.get(key)) {
            (Some(x), None) | (None, Some(x)) => x.clone(),
            (Some(Constraint::Interval([a0, a1])), Some(Constraint::Interval([b0, b1]))) => {
                let lo = a0.max(*b0);
                let hi = a1.min(*b1);
                if lo > hi {
                    conflicts.push(key.clone());
                    continue;
                }
                Constraint::Interval([lo, hi])
            }
            (Some(Constraint::Region(x)), Some(Constraint::Region(y))) => {
                let mut r = Region {
                    allowed: x.allowed.iter().chain(&y.allowed).cloned().collect(),
                    forbidden: x.forbidden.iter().chain(&y.forbidden).cloned().collect(),
                };
                r.canonicalize();
                Constraint::Region(r)
            }
            _ => {
                conflicts.push(key.clone());
                continue;
            }
        };
        merged.insert(key.clone(), c);
    }
    if conflicts.is_empty() {
        Harmonised::Compatible(PolicySet { rules: merged }.canonical())
    } else {
        Harmonised::Incompatible(conflicts)
    }
}
