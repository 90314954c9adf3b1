//! Compositional attractant/repellent landscapes.
//!
//! A landscape is a product of experts: every component contributes an
//! unnormalized log-density `ℓ_i(z)` scaled by its polarity sign and by the
//! salience weight of its channel,
//!
//! ```text
//! log γ(z; β) = Σ_i s_i · β_channel(i) · ℓ_i(z),     E(z; β) = -log γ(z; β)
//! ```
//!
//! so the log-density is linear in β and `β = 0` yields a flat landscape.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Bounds, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    /// `ℓ(z) = -‖z - c‖² / (2 s²)`
    Gaussian,
    /// `ℓ(z) = -‖z - c‖ / s`
    Cone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Attractant,
    Repellent,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Attractant => 1.0,
            Polarity::Repellent => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityComponent {
    pub kind: ShapeKind,
    pub center: Vec2,
    pub scale: f64,
    pub channel: String,
    pub polarity: Polarity,
}

impl DensityComponent {
    pub fn gaussian(center: Vec2, scale: f64, channel: &str, polarity: Polarity) -> Self {
        DensityComponent {
            kind: ShapeKind::Gaussian,
            center,
            scale,
            channel: channel.to_string(),
            polarity,
        }
    }

    pub fn cone(center: Vec2, scale: f64, channel: &str, polarity: Polarity) -> Self {
        DensityComponent {
            kind: ShapeKind::Cone,
            center,
            scale,
            channel: channel.to_string(),
            polarity,
        }
    }

    /// Unsigned, unweighted log-density. Bounded above by 0, attained at the center.
    pub fn log_density(&self, z: Vec2) -> f64 {
        let d = z - self.center;
        match self.kind {
            ShapeKind::Gaussian => -d.norm_sq() / (2.0 * self.scale * self.scale),
            ShapeKind::Cone => -d.norm() / self.scale,
        }
    }

    /// Gradient of [`Self::log_density`]. At a cone apex the zero subgradient is used.
    pub fn gradient(&self, z: Vec2) -> Vec2 {
        let d = z - self.center;
        match self.kind {
            ShapeKind::Gaussian => d * (-1.0 / (self.scale * self.scale)),
            ShapeKind::Cone => {
                let r = d.norm();
                if r == 0.0 {
                    Vec2::ZERO
                } else {
                    d * (-1.0 / (r * self.scale))
                }
            }
        }
    }
}

/// Per-channel salience weights β_c ≥ 0. Channels not present weigh 0.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SalienceVector {
    weights: BTreeMap<String, f64>,
}

impl SalienceVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Self> {
        let mut beta = SalienceVector::new();
        for (c, w) in pairs {
            beta.set(c, w)?;
        }
        Ok(beta)
    }

    /// Same weight on every listed channel.
    pub fn uniform<'a>(channels: impl IntoIterator<Item = &'a String>, w: f64) -> Result<Self> {
        let mut beta = SalienceVector::new();
        for c in channels {
            beta.set(c, w)?;
        }
        Ok(beta)
    }

    pub fn set(&mut self, channel: &str, w: f64) -> Result<()> {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::domain(format!(
                "salience weight for {channel:?} must be finite and nonnegative, got {w}"
            )));
        }
        self.weights.insert(channel.to_string(), w);
        Ok(())
    }

    pub fn get(&self, channel: &str) -> f64 {
        self.weights.get(channel).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.weights.iter().map(|(c, w)| (c.as_str(), *w))
    }

    /// `a·self + b·other` for nonnegative `a`, `b`.
    pub fn combine(&self, a: f64, other: &SalienceVector, b: f64) -> Result<SalienceVector> {
        let mut out = SalienceVector::new();
        for c in self.weights.keys().chain(other.weights.keys()) {
            out.set(c, a * self.get(c) + b * other.get(c))?;
        }
        Ok(out)
    }

    /// Channel with the largest weight among `channels`; ties go to the first.
    pub fn argmax<'a>(&self, channels: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
        let mut best: Option<(&str, f64)> = None;
        for c in channels {
            let w = self.get(c);
            if best.is_none_or(|(_, bw)| w > bw) {
                best = Some((c, w));
            }
        }
        best.map(|(c, _)| c)
    }
}

/// An immutable compositional density over a bounded arena.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LandscapeSpec", into = "LandscapeSpec")]
pub struct Landscape {
    components: Vec<DensityComponent>,
    bounds: Bounds,
    channels: Vec<String>,
}

/// Serialized form of a [`Landscape`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeSpec {
    pub bounds: Bounds,
    pub components: Vec<DensityComponent>,
}

impl TryFrom<LandscapeSpec> for Landscape {
    type Error = Error;
    fn try_from(spec: LandscapeSpec) -> Result<Self> {
        Landscape::new(spec.components, spec.bounds)
    }
}

impl From<Landscape> for LandscapeSpec {
    fn from(l: Landscape) -> Self {
        LandscapeSpec {
            bounds: l.bounds,
            components: l.components,
        }
    }
}

impl Landscape {
    pub fn new(components: Vec<DensityComponent>, bounds: Bounds) -> Result<Self> {
        bounds.validate()?;
        if components.is_empty() {
            return Err(Error::domain("landscape needs at least one component"));
        }
        let mut channels: Vec<String> = Vec::new();
        let mut polarity: BTreeMap<&str, Polarity> = BTreeMap::new();
        for (i, c) in components.iter().enumerate() {
            if !(c.scale.is_finite() && c.scale > 0.0) {
                return Err(Error::domain(format!(
                    "component {i}: scale must be finite and > 0, got {}",
                    c.scale
                )));
            }
            if !c.center.is_finite() || !bounds.contains(c.center) {
                return Err(Error::domain(format!(
                    "component {i}: center ({}, {}) lies outside bounds",
                    c.center.x, c.center.y
                )));
            }
            if c.channel.is_empty() {
                return Err(Error::domain(format!("component {i}: empty channel name")));
            }
            match polarity.get(c.channel.as_str()) {
                Some(p) if *p != c.polarity => {
                    return Err(Error::domain(format!(
                        "component {i}: channel {:?} mixes attractant and repellent components",
                        c.channel
                    )));
                }
                Some(_) => {}
                None => {
                    polarity.insert(&c.channel, c.polarity);
                    channels.push(c.channel.clone());
                }
            }
        }
        Ok(Landscape {
            components,
            bounds,
            channels,
        })
    }

    pub fn components(&self) -> &[DensityComponent] {
        &self.components
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    /// Channel names in order of first appearance.
    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn channel_polarity(&self, channel: &str) -> Option<Polarity> {
        self.components
            .iter()
            .find(|c| c.channel == channel)
            .map(|c| c.polarity)
    }

    pub fn log_density(&self, z: Vec2, beta: &SalienceVector) -> Result<f64> {
        check_point(z)?;
        Ok(self
            .components
            .iter()
            .map(|c| c.polarity.sign() * beta.get(&c.channel) * c.log_density(z))
            .sum())
    }

    /// `E(z; β) = -log γ(z; β)`.
    pub fn energy(&self, z: Vec2, beta: &SalienceVector) -> Result<f64> {
        Ok(-self.log_density(z, beta)?)
    }

    pub fn gradient(&self, z: Vec2, beta: &SalienceVector) -> Result<Vec2> {
        check_point(z)?;
        let mut g = Vec2::ZERO;
        for c in &self.components {
            let w = c.polarity.sign() * beta.get(&c.channel);
            if w != 0.0 {
                g += c.gradient(z) * w;
            }
        }
        Ok(g)
    }

    /// `∇ log γ(z; β) · u`. `u` is a velocity, not necessarily unit length.
    pub fn directional_derivative(&self, z: Vec2, u: Vec2, beta: &SalienceVector) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::domain("direction must be finite"));
        }
        Ok(self.gradient(z, beta)?.dot(u))
    }

    /// Gradient restricted to one channel, weighted by that channel's β alone.
    pub fn channel_gradient(&self, channel: &str, z: Vec2, beta: &SalienceVector) -> Result<Vec2> {
        check_point(z)?;
        let w = beta.get(channel);
        let mut g = Vec2::ZERO;
        for c in self.components.iter().filter(|c| c.channel == channel) {
            g += c.gradient(z) * (c.polarity.sign() * w);
        }
        Ok(g)
    }

    /// Raw channel density `ρ_c(z) = exp(Σ_{i ∈ c} ℓ_i(z))` at unit salience,
    /// without polarity sign. Zero for channels with no components.
    pub fn channel_density(&self, channel: &str, z: Vec2) -> f64 {
        let mut any = false;
        let mut l = 0.0;
        for c in self.components.iter().filter(|c| c.channel == channel) {
            any = true;
            l += c.log_density(z);
        }
        if any {
            l.exp()
        } else {
            0.0
        }
    }

    /// Total attractant density `Σ_c ρ_c(z)` over attractant channels.
    pub fn attractant_density(&self, z: Vec2) -> f64 {
        self.channels
            .iter()
            .filter(|c| self.channel_polarity(c) == Some(Polarity::Attractant))
            .map(|c| self.channel_density(c, z))
            .sum()
    }

    /// Distance from `z` to the nearest attractant center, if any.
    pub fn nearest_attractant_distance(&self, z: Vec2) -> Option<f64> {
        self.components
            .iter()
            .filter(|c| c.polarity == Polarity::Attractant)
            .map(|c| (z - c.center).norm())
            .min_by(f64::total_cmp)
    }
}

fn check_point(z: Vec2) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("non-finite position ({}, {})", z.x, z.y)))
    }
}
