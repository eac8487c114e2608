//! Named, transform-aware flat parameter layout.
//!
//! Samplers work on unconstrained coordinates. Each entry of a
//! [`ParameterSpace`] says how its block maps back to the constrained
//! scale the model is written in.

use std::collections::HashSet;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformKind {
    Identity,
    /// `(0, inf) <-> R` through `ln` / `exp`.
    LogPositive,
    /// `(0, 1) <-> R` through `logit` / `sigmoid`.
    LogitUnit,
}

impl TransformKind {
    pub fn to_constrained(self, u: f64) -> f64 {
        match self {
            TransformKind::Identity => u,
            TransformKind::LogPositive => u.exp(),
            // kept strictly inside (0, 1) even where sigmoid rounds to a bound
            TransformKind::LogitUnit => u
                .sigmoid()
                .clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0),
        }
    }

    /// Inverse of [`to_constrained`](Self::to_constrained). Boundary values
    /// are pulled inside the open support so the result stays finite.
    pub fn to_unconstrained(self, x: f64) -> f64 {
        match self {
            TransformKind::Identity => x,
            TransformKind::LogPositive => x.max(f64::MIN_POSITIVE).ln(),
            TransformKind::LogitUnit => {
                let x = x.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
                x.ln() - (-x).ln_1p()
            }
        }
    }

    /// `ln |d to_constrained / du|`.
    pub fn log_jacobian<R: Real>(self, u: R) -> R {
        match self {
            TransformKind::Identity => R::from_f64(0.0),
            TransformKind::LogPositive => u,
            TransformKind::LogitUnit => u.log_sigmoid() + (-u).log_sigmoid(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub shape: usize,
    pub transform: TransformKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSpace {
    entries: Vec<Entry>,
    total_dim: usize,
}

impl ParameterSpace {
    pub fn new<S: Into<String>>(entries: Vec<(S, usize, TransformKind)>) -> Result<Self> {
        let entries: Vec<Entry> = entries
            .into_iter()
            .map(|(name, shape, transform)| Entry {
                name: name.into(),
                shape,
                transform,
            })
            .collect();
        Self::from_entries(entries)
    }

    fn from_entries(entries: Vec<Entry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Space("no entries".into()));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if e.shape == 0 {
                return Err(Error::Space(format!("entry `{}` has shape 0", e.name)));
            }
            if !seen.insert(e.name.as_str()) {
                return Err(Error::Space(format!("duplicate name `{}`", e.name)));
            }
        }
        let total_dim = entries.iter().map(|e| e.shape).sum();
        Ok(ParameterSpace { entries, total_dim })
    }

    pub fn dim(&self) -> usize {
        self.total_dim
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// One name per coordinate: `name` for scalars, `name[i]` otherwise.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.total_dim);
        for e in &self.entries {
            if e.shape == 1 {
                out.push(e.name.clone());
            } else {
                out.extend((0..e.shape).map(|i| format!("{}[{}]", e.name, i)));
            }
        }
        out
    }

    /// Transform of every coordinate, in layout order.
    pub fn transforms(&self) -> Vec<TransformKind> {
        self.entries
            .iter()
            .flat_map(|e| std::iter::repeat_n(e.transform, e.shape))
            .collect()
    }

    /// Start offset of the entry called `name`.
    pub fn offset_of(&self, name: &str) -> Option<usize> {
        let mut off = 0;
        for e in &self.entries {
            if e.name == name {
                return Some(off);
            }
            off += e.shape;
        }
        None
    }

    /// Concatenation of two spaces; `other`'s names get `prefix` prepended.
    pub fn concat(&self, other: &ParameterSpace, prefix: &str) -> Result<Self> {
        let mut entries = self.entries.clone();
        entries.extend(other.entries.iter().map(|e| Entry {
            name: format!("{prefix}{}", e.name),
            ..e.clone()
        }));
        Self::from_entries(entries)
    }

    pub fn prefixed(&self, prefix: &str) -> Self {
        ParameterSpace {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: format!("{prefix}{}", e.name),
                    ..e.clone()
                })
                .collect(),
            total_dim: self.total_dim,
        }
    }

    /// Same layout with every entry renamed by `f`.
    pub fn map_names(&self, f: impl Fn(&str) -> String) -> Result<Self> {
        Self::from_entries(
            self.entries
                .iter()
                .map(|e| Entry {
                    name: f(&e.name),
                    ..e.clone()
                })
                .collect(),
        )
    }

    /// Concatenation of several spaces in order.
    pub fn join<'a>(parts: impl IntoIterator<Item = &'a ParameterSpace>) -> Result<Self> {
        Self::from_entries(
            parts
                .into_iter()
                .flat_map(|p| p.entries.iter().cloned())
                .collect(),
        )
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.total_dim {
            return Err(Error::Dimension {
                expected: self.total_dim,
                got: len,
            });
        }
        Ok(())
    }

    pub fn to_constrained(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v.len())?;
        Ok(self
            .transforms()
            .iter()
            .zip(v)
            .map(|(t, &u)| t.to_constrained(u))
            .collect())
    }

    pub fn to_unconstrained(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        Ok(self
            .transforms()
            .iter()
            .zip(x)
            .map(|(t, &c)| t.to_unconstrained(c))
            .collect())
    }

    pub fn log_jacobian(&self, v: &[f64]) -> Result<f64> {
        self.check_len(v.len())?;
        Ok(self.log_jacobian_real(v))
    }

    /// Generic form used inside log densities. `v` must have length `dim()`.
    pub fn log_jacobian_real<R: Real>(&self, v: &[R]) -> R {
        debug_assert_eq!(v.len(), self.total_dim);
        let mut acc = R::from_f64(0.0);
        let mut off = 0;
        for e in &self.entries {
            if e.transform != TransformKind::Identity {
                for &u in &v[off..off + e.shape] {
                    acc += e.transform.log_jacobian(u);
                }
            }
            off += e.shape;
        }
        acc
    }
}

/// Point in unconstrained coordinates; every entry is finite.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "parameter vector entry {i} is not finite"
            )));
        }
        Ok(ParameterVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        ParameterVector(vec![0.0; dim])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParameterVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}
