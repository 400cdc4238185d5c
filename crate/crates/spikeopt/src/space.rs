//! Mixed continuous / discrete / categorical search spaces.
//!
//! Every parameter owns a warp from the unit interval to its native range.
//! The optimizer works exclusively in the unit hypercube; trials are handed
//! to the simulator as native-valued [`Configuration`]s. Warps are monotone,
//! so box-shaped trust regions in unit space map to contiguous native ranges.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameter group label, used for reporting only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    G1,
    G2,
    G3,
    G4,
    G5,
}

/// Prior shape used for sampling and for the unit-interval warp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    /// Affine map onto `[lower, upper]`.
    Uniform,
    /// Exponential map; mass spread evenly across orders of magnitude.
    LogUniform,
    /// Point reflection of `LogUniform` about the range midpoint, so mass
    /// concentrates near the *upper* bound instead of the lower one.
    RLogUniform,
    /// Index selection over categorical choices.
    RandomChoice,
}

/// Value domain of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    Continuous,
    Discrete,
    Categorical,
}

/// A single named hyperparameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    /// Inclusive lower bound; unused for categorical parameters.
    #[serde(default)]
    pub lower: f64,
    /// Inclusive upper bound; unused for categorical parameters.
    #[serde(default)]
    pub upper: f64,
    /// Choice labels; empty unless categorical.
    #[serde(default)]
    pub choices: Vec<String>,
    pub sampler: Sampler,
    pub group: Group,
}

impl ParamSpec {
    pub fn continuous(
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        sampler: Sampler,
        group: Group,
    ) -> Self {
        ParamSpec { name: name.into(), kind: ParamKind::Continuous, lower, upper, choices: Vec::new(), sampler, group }
    }

    pub fn discrete(
        name: impl Into<String>,
        lower: i64,
        upper: i64,
        sampler: Sampler,
        group: Group,
    ) -> Self {
        ParamSpec {
            name: name.into(),
            kind: ParamKind::Discrete,
            lower: lower as f64,
            upper: upper as f64,
            choices: Vec::new(),
            sampler,
            group,
        }
    }

    pub fn categorical(name: impl Into<String>, choices: Vec<String>, group: Group) -> Self {
        ParamSpec {
            name: name.into(),
            kind: ParamKind::Categorical,
            lower: 0.0,
            upper: 0.0,
            choices,
            sampler: Sampler::RandomChoice,
            group,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Space(format!("parameter `{}`: {msg}", self.name)));
        if self.name.is_empty() {
            return Err(Error::Space("parameter with empty name".into()));
        }
        match self.kind {
            ParamKind::Categorical => {
                if self.sampler != Sampler::RandomChoice {
                    return fail("categorical parameters use the random-choice sampler".into());
                }
                if self.choices.is_empty() {
                    return fail("categorical parameter needs at least one choice".into());
                }
                let mut seen = self.choices.clone();
                seen.sort();
                seen.dedup();
                if seen.len() != self.choices.len() {
                    return fail("duplicate choice labels".into());
                }
            }
            ParamKind::Continuous | ParamKind::Discrete => {
                if self.sampler == Sampler::RandomChoice {
                    return fail("random-choice sampler is only valid for categorical parameters".into());
                }
                if !self.lower.is_finite() || !self.upper.is_finite() {
                    return fail("bounds must be finite".into());
                }
                if self.lower >= self.upper {
                    return fail(format!("lower bound {} must be below upper bound {}", self.lower, self.upper));
                }
                if matches!(self.sampler, Sampler::LogUniform | Sampler::RLogUniform) && self.lower <= 0.0 {
                    return fail("log-scaled parameters need a positive lower bound".into());
                }
                if self.kind == ParamKind::Discrete
                    && (self.lower.fract() != 0.0 || self.upper.fract() != 0.0)
                {
                    return fail("discrete bounds must be integers".into());
                }
            }
        }
        Ok(())
    }

    /// Maps `u` in `[0, 1]` to the parameter's native value.
    pub fn warp(&self, u: f64) -> ParamValue {
        debug_assert!((0.0..=1.0).contains(&u), "unit coordinate out of range: {u}");
        let u = u.clamp(0.0, 1.0);
        match self.kind {
            ParamKind::Categorical => {
                let k = self.choices.len();
                let idx = ((u * k as f64) as usize).min(k - 1);
                ParamValue::Choice(self.choices[idx].clone())
            }
            ParamKind::Continuous => ParamValue::Real(self.warp_continuous(u)),
            // Half-up rounding keeps boundary buckets half-width but never
            // leaves the declared range.
            ParamKind::Discrete => ParamValue::Int((self.warp_continuous(u) + 0.5).floor() as i64),
        }
    }

    fn warp_continuous(&self, u: f64) -> f64 {
        let v = match self.sampler {
            Sampler::Uniform => self.lower + u * (self.upper - self.lower),
            Sampler::LogUniform => {
                (self.lower.ln() + u * (self.upper.ln() - self.lower.ln())).exp()
            }
            Sampler::RLogUniform => {
                // Point reflection of the log warp: dense near the upper bound.
                let mirrored = (self.lower.ln() + (1.0 - u) * (self.upper.ln() - self.lower.ln())).exp();
                self.lower + self.upper - mirrored
            }
            Sampler::RandomChoice => unreachable!("categorical handled above"),
        };
        // exp/ln round-off can overshoot a bound by an ulp; never leave the
        // declared range.
        v.clamp(self.lower, self.upper)
    }

    /// Inverse of [`warp`]: recovers a unit coordinate whose warp reproduces
    /// `v`. Discrete and categorical values map to their bucket's canonical
    /// point, so `warp(unwarp(v)) == v`.
    pub fn unwarp(&self, v: &ParamValue) -> Result<f64> {
        let err = |msg: String| Err(Error::Value { param: self.name.clone(), msg });
        match (self.kind, v) {
            (ParamKind::Categorical, ParamValue::Choice(c)) => {
                match self.choices.iter().position(|x| x == c) {
                    // Bucket midpoint, so round-tripping is exact.
                    Some(i) => Ok((i as f64 + 0.5) / self.choices.len() as f64),
                    None => err(format!("`{c}` is not one of the declared choices")),
                }
            }
            (ParamKind::Continuous, ParamValue::Real(x)) => {
                if !(self.lower..=self.upper).contains(x) {
                    return err(format!("{x} outside [{}, {}]", self.lower, self.upper));
                }
                Ok(self.unwarp_continuous(*x).clamp(0.0, 1.0))
            }
            (ParamKind::Discrete, ParamValue::Int(n)) => {
                let x = *n as f64;
                if !(self.lower..=self.upper).contains(&x) {
                    return err(format!("{n} outside [{}, {}]", self.lower, self.upper));
                }
                Ok(self.unwarp_continuous(x).clamp(0.0, 1.0))
            }
            _ => err("value kind does not match parameter kind".into()),
        }
    }

    fn unwarp_continuous(&self, v: f64) -> f64 {
        match self.sampler {
            Sampler::Uniform => (v - self.lower) / (self.upper - self.lower),
            Sampler::LogUniform => {
                (v.ln() - self.lower.ln()) / (self.upper.ln() - self.lower.ln())
            }
            Sampler::RLogUniform => {
                let mirrored = self.lower + self.upper - v;
                1.0 - (mirrored.ln() - self.lower.ln()) / (self.upper.ln() - self.lower.ln())
            }
            Sampler::RandomChoice => unreachable!("categorical handled above"),
        }
    }
}

/// Native value of a single parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Choice(String),
}

impl ParamValue {
    /// Numeric view; categorical values have none.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(n) => Some(*n as f64),
            ParamValue::Real(x) => Some(*x),
            ParamValue::Choice(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ParamValue::Int(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Choice(c) => Some(c),
            _ => None,
        }
    }
}

/// A full assignment of native values, keyed by parameter name. Ordered map
/// so serialized forms are stable.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(pub BTreeMap<String, ParamValue>);

impl Configuration {
    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.0.get(name)
    }

    /// Numeric value of a parameter, erroring with the parameter name.
    pub fn require_f64(&self, name: &str) -> Result<f64> {
        self.get(name)
            .and_then(ParamValue::as_f64)
            .ok_or_else(|| Error::Value { param: name.into(), msg: "missing or non-numeric".into() })
    }

    pub fn require_i64(&self, name: &str) -> Result<i64> {
        self.get(name)
            .and_then(ParamValue::as_i64)
            .ok_or_else(|| Error::Value { param: name.into(), msg: "missing or non-integer".into() })
    }

    pub fn require_str(&self, name: &str) -> Result<&str> {
        self.get(name)
            .and_then(ParamValue::as_str)
            .ok_or_else(|| Error::Value { param: name.into(), msg: "missing or non-categorical".into() })
    }
}

/// Point in the unit hypercube, one coordinate per parameter in space order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnitPoint(pub Vec<f64>);

impl UnitPoint {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

/// An ordered collection of parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSpace {
    params: Vec<ParamSpec>,
}

impl SearchSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Space("search space needs at least one parameter".into()));
        }
        for p in &params {
            p.validate()?;
        }
        let mut names: Vec<&str> = params.iter().map(|p| p.name.as_str()).collect();
        names.sort();
        names.dedup();
        if names.len() != params.len() {
            return Err(Error::Space("duplicate parameter names".into()));
        }
        Ok(SearchSpace { params })
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Warps a unit point into a full native configuration.
    pub fn to_configuration(&self, point: &UnitPoint) -> Result<Configuration> {
        if point.dim() != self.dim() {
            return Err(Error::Space(format!(
                "unit point has {} coordinates, space has {}",
                point.dim(),
                self.dim()
            )));
        }
        let mut values = BTreeMap::new();
        for (p, &u) in self.params.iter().zip(point.coords()) {
            values.insert(p.name.clone(), p.warp(u));
        }
        Ok(Configuration(values))
    }

    /// Recovers the unit point of a configuration. Every declared parameter
    /// must be present and in bounds.
    pub fn to_unit(&self, config: &Configuration) -> Result<UnitPoint> {
        let mut coords = Vec::with_capacity(self.dim());
        for p in &self.params {
            let v = config.get(&p.name).ok_or_else(|| Error::Value {
                param: p.name.clone(),
                msg: "missing from configuration".into(),
            })?;
            coords.push(p.unwarp(v)?);
        }
        for name in config.0.keys() {
            if self.param(name).is_none() {
                return Err(Error::Value { param: name.clone(), msg: "not declared in the search space".into() });
            }
        }
        Ok(UnitPoint(coords))
    }

    /// Checks membership without producing the unit point.
    pub fn validate_configuration(&self, config: &Configuration) -> Result<()> {
        self.to_unit(config).map(|_| ())
    }

    /// Draws `n` configurations from the prior (each parameter's sampler).
    pub fn sample_prior(&self, n: usize, rng: &mut impl Rng) -> Vec<Configuration> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    fn sample_one(&self, rng: &mut impl Rng) -> Configuration {
        let coords: Vec<f64> = (0..self.dim()).map(|_| rng.gen::<f64>()).collect();
        self.to_configuration(&UnitPoint(coords))
            .expect("freshly drawn unit point is always valid")
    }
}
