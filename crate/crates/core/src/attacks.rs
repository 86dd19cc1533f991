//! Model-poisoning attacks applied to the malicious cohort after local training.
//!
//! All three attacks start from the coordinate-wise mean `mu` of the updates the
//! adversary can see and submit one shared vector from every malicious client:
//!
//! - LIE: `mu + z * std`, with the coordinate-wise sample standard deviation.
//! - Min-Max: `mu + gamma * p`, the largest `gamma` keeping the maximum distance
//!   to any visible update within the largest pairwise distance among them.
//! - Min-Sum: `mu + gamma * p`, the largest `gamma` keeping the sum of squared
//!   distances to the visible updates within the largest such sum of any one of them.
//!
//! `p` is `-mu / |mu|` (or `-1 / sqrt(d)` when `mu` is zero). Label shuffling
//! is a data-level attack and leaves submitted updates alone here.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::ClientId;

const MAX_DOUBLINGS: usize = 64;
const MAX_BISECTIONS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    LabelShuffle,
    Lie,
    MinMax,
    MinSum,
}

impl AttackKind {
    pub fn is_model_poisoning(self) -> bool {
        matches!(
            self,
            AttackKind::Lie | AttackKind::MinMax | AttackKind::MinSum
        )
    }

    /// Short name used on the command line and in file names.
    pub fn short_name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::LabelShuffle => "ls",
            AttackKind::Lie => "lie",
            AttackKind::MinMax => "mm",
            AttackKind::MinSum => "ms",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttackKind::None),
            "ls" | "label_shuffle" => Ok(AttackKind::LabelShuffle),
            "lie" => Ok(AttackKind::Lie),
            "mm" | "min_max" => Ok(AttackKind::MinMax),
            "ms" | "min_sum" => Ok(AttackKind::MinSum),
            other => Err(Error::Config(format!(
                "unknown attack {other:?} (expected none, ls, lie, mm or ms)"
            ))),
        }
    }
}

/// What the adversary observes when crafting its update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knowledge {
    /// The honest clients' updates.
    Full,
    /// Only the malicious cohort's own benign updates.
    Partial,
}

impl std::str::FromStr for Knowledge {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Knowledge::Full),
            "partial" => Ok(Knowledge::Partial),
            other => Err(Error::Config(format!("unknown knowledge mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub knowledge: Knowledge,
    /// LIE coefficient.
    pub z: f64,
    /// Stopping width of the Min-Max / Min-Sum bisection.
    pub gamma_tol: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::None,
            knowledge: Knowledge::Full,
            z: 1.5,
            gamma_tol: 1e-5,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.z.is_finite() {
            return Err(Error::Config(format!(
                "LIE coefficient must be finite, got {}",
                self.z
            )));
        }
        if !(self.gamma_tol.is_finite() && self.gamma_tol > 0.0) {
            return Err(Error::Config(format!(
                "gamma tolerance must be positive, got {}",
                self.gamma_tol
            )));
        }
        Ok(())
    }
}

/// Updates the adversary can see, plus the cohort it controls.
#[derive(Debug, Clone)]
pub struct AttackContext {
    pub visible: Vec<ParamVector>,
    pub malicious_ids: BTreeSet<ClientId>,
}

impl AttackContext {
    fn check(&self) -> Result<usize> {
        let first = self
            .visible
            .first()
            .ok_or_else(|| Error::Validation("the adversary sees no updates".into()))?;
        let dim = first.len();
        if self.visible.iter().any(|u| u.len() != dim) {
            return Err(Error::Shape("visible updates differ in length".into()));
        }
        Ok(dim)
    }
}

/// Coordinate-wise mean.
pub fn coordinate_mean(updates: &[ParamVector]) -> Vec<f64> {
    let dim = updates.first().map_or(0, |u| u.len());
    let k = updates.len() as f64;
    let mut mu = vec![0.0; dim];
    for u in updates {
        for (m, &v) in mu.iter_mut().zip(u.iter()) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= k);
    mu
}

/// Coordinate-wise sample standard deviation; zero for fewer than two updates.
pub fn coordinate_std(updates: &[ParamVector], mu: &[f64]) -> Vec<f64> {
    let mut var = vec![0.0; mu.len()];
    if updates.len() < 2 {
        return var;
    }
    for u in updates {
        for ((s, &v), &m) in var.iter_mut().zip(u.iter()).zip(mu) {
            *s += (v - m) * (v - m);
        }
    }
    let denom = (updates.len() - 1) as f64;
    var.iter_mut().for_each(|s| *s = (*s / denom).sqrt());
    var
}

pub fn lie_attack(ctx: &AttackContext, cfg: &AttackConfig) -> Result<ParamVector> {
    ctx.check()?;
    let mu = coordinate_mean(&ctx.visible);
    let std = coordinate_std(&ctx.visible, &mu);
    Ok(ParamVector::new(
        mu.iter().zip(&std).map(|(&m, &s)| m + cfg.z * s).collect(),
    ))
}

/// `-mu / |mu|`, or `-1 / sqrt(d)` when `mu` vanishes.
pub fn perturbation_direction(mu: &[f64]) -> Vec<f64> {
    let norm = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        mu.iter().map(|v| -v / norm).collect()
    } else {
        vec![-1.0 / (mu.len() as f64).sqrt(); mu.len()]
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Largest pairwise Euclidean distance among `updates`.
pub fn max_pairwise_distance(updates: &[ParamVector]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, a) in updates.iter().enumerate() {
        for b in &updates[i + 1..] {
            best = best.max(squared_distance(a, b));
        }
    }
    best.sqrt()
}

/// `max_i sum_j |u_i - u_j|^2`.
pub fn max_sum_squared_distance(updates: &[ParamVector]) -> f64 {
    let n = updates.len();
    let mut sums = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = squared_distance(&updates[i], &updates[j]);
            sums[i] += d;
            sums[j] += d;
        }
    }
    sums.into_iter().fold(0.0, f64::max)
}

/// Largest `gamma >= 0` with `feasible(gamma)`, for a feasible set `[0, gamma*]`.
///
/// Doubles an upper bracket from 1 until it turns infeasible, then bisects
/// until the bracket is narrower than `tol` (at most 60 halvings).
pub fn search_gamma(feasible: impl Fn(f64) -> bool, tol: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut doublings = 0;
    while feasible(hi) {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings >= MAX_DOUBLINGS {
            return lo;
        }
    }
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Per-update terms of `|mu + gamma p - u_i|^2 = a_i + 2 gamma b_i + gamma^2 c`.
struct RayGeometry {
    a: Vec<f64>,
    b: Vec<f64>,
    c: f64,
}

impl RayGeometry {
    fn new(mu: &[f64], p: &[f64], updates: &[ParamVector]) -> Self {
        let mut a = Vec::with_capacity(updates.len());
        let mut b = Vec::with_capacity(updates.len());
        for u in updates {
            let (mut aa, mut bb) = (0.0, 0.0);
            for ((&m, &pp), &v) in mu.iter().zip(p).zip(u.iter()) {
                let diff = m - v;
                aa += diff * diff;
                bb += pp * diff;
            }
            a.push(aa);
            b.push(bb);
        }
        let c = p.iter().map(|v| v * v).sum();
        Self { a, b, c }
    }

    fn squared_distances(&self, gamma: f64) -> impl Iterator<Item = f64> + '_ {
        self.a
            .iter()
            .zip(&self.b)
            .map(move |(&a, &b)| (a + 2.0 * gamma * b + gamma * gamma * self.c).max(0.0))
    }
}

/// Min-Max scale along `p`: largest `gamma` with
/// `max_i |mu + gamma p - u_i| <= max_{i,j} |u_i - u_j|`.
pub fn min_max_gamma(updates: &[ParamVector], mu: &[f64], p: &[f64], tol: f64) -> f64 {
    let bound = max_pairwise_distance(updates);
    let bound_sq = bound * bound;
    let geom = RayGeometry::new(mu, p, updates);
    search_gamma(
        |g| geom.squared_distances(g).fold(0.0, f64::max) <= bound_sq,
        tol,
    )
}

/// Min-Sum scale along `p`: largest `gamma` with
/// `sum_i |mu + gamma p - u_i|^2 <= max_i sum_j |u_i - u_j|^2`.
pub fn min_sum_gamma(updates: &[ParamVector], mu: &[f64], p: &[f64], tol: f64) -> f64 {
    let bound = max_sum_squared_distance(updates);
    let geom = RayGeometry::new(mu, p, updates);
    search_gamma(|g| geom.squared_distances(g).sum::<f64>() <= bound, tol)
}

fn along(mu: &[f64], p: &[f64], gamma: f64) -> ParamVector {
    ParamVector::new(mu.iter().zip(p).map(|(&m, &d)| m + gamma * d).collect())
}

pub fn min_max_attack(ctx: &AttackContext, cfg: &AttackConfig) -> Result<ParamVector> {
    ctx.check()?;
    let mu = coordinate_mean(&ctx.visible);
    let p = perturbation_direction(&mu);
    let gamma = min_max_gamma(&ctx.visible, &mu, &p, cfg.gamma_tol);
    Ok(along(&mu, &p, gamma))
}

pub fn min_sum_attack(ctx: &AttackContext, cfg: &AttackConfig) -> Result<ParamVector> {
    ctx.check()?;
    let mu = coordinate_mean(&ctx.visible);
    let p = perturbation_direction(&mu);
    let gamma = min_sum_gamma(&ctx.visible, &mu, &p, cfg.gamma_tol);
    Ok(along(&mu, &p, gamma))
}

/// Replaces every malicious update with the configured attack vector.
///
/// Under full knowledge the adversary sees the honest updates, under partial
/// knowledge only the benign updates its own clients trained. Honest entries
/// are returned untouched; with nothing visible the round passes unmodified.
pub fn apply_attack(
    round_updates: &BTreeMap<ClientId, ParamVector>,
    truth: &BTreeSet<ClientId>,
    cfg: &AttackConfig,
) -> Result<BTreeMap<ClientId, ParamVector>> {
    if let Some(stray) = truth.iter().find(|id| !round_updates.contains_key(id)) {
        return Err(Error::Validation(format!(
            "malicious client {stray} submitted no update"
        )));
    }
    if !cfg.kind.is_model_poisoning() || truth.is_empty() {
        return Ok(round_updates.clone());
    }
    let visible: Vec<ParamVector> = round_updates
        .iter()
        .filter(|(id, _)| match cfg.knowledge {
            Knowledge::Full => !truth.contains(id),
            Knowledge::Partial => truth.contains(id),
        })
        .map(|(_, u)| u.clone())
        .collect();
    if visible.is_empty() {
        return Ok(round_updates.clone());
    }
    let ctx = AttackContext {
        visible,
        malicious_ids: truth.clone(),
    };
    let poisoned = match cfg.kind {
        AttackKind::Lie => lie_attack(&ctx, cfg)?,
        AttackKind::MinMax => min_max_attack(&ctx, cfg)?,
        AttackKind::MinSum => min_sum_attack(&ctx, cfg)?,
        AttackKind::None | AttackKind::LabelShuffle => unreachable!("filtered above"),
    };
    Ok(round_updates
        .iter()
        .map(|(&id, u)| {
            let submitted = if truth.contains(&id) {
                poisoned.clone()
            } else {
                u.clone()
            };
            (id, submitted)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec())
    }

    fn ctx(visible: Vec<ParamVector>) -> AttackContext {
        AttackContext {
            visible,
            malicious_ids: BTreeSet::new(),
        }
    }

    #[test]
    fn lie_substitution() {
        let cfg = AttackConfig {
            kind: AttackKind::Lie,
            z: 1.5,
            ..AttackConfig::default()
        };
        // Two points at mu +- std / sqrt(2): mean [1, 0], sample std [0.2, 0.4].
        let s = 1.0 / 2f64.sqrt();
        let visible = vec![
            pv(&[1.0 - 0.2 * s, -0.4 * s]),
            pv(&[1.0 + 0.2 * s, 0.4 * s]),
        ];
        let out = lie_attack(&ctx(visible.clone()), &cfg).unwrap();
        assert!(
            (out[0] - 1.3).abs() < 1e-12 && (out[1] - 0.6).abs() < 1e-12,
            "{out:?}"
        );

        let zero = AttackConfig {
            z: 0.0,
            ..cfg.clone()
        };
        let out = lie_attack(&ctx(visible.clone()), &zero).unwrap();
        assert_eq!(out.as_slice(), coordinate_mean(&visible).as_slice());

        let single = lie_attack(&ctx(vec![pv(&[3.0, -2.0])]), &cfg).unwrap();
        assert_eq!(single.as_slice(), &[3.0, -2.0]);
    }

    #[test]
    fn identical_updates_give_the_mean() {
        let cfg = AttackConfig::default();
        let same = vec![pv(&[0.5, 1.0]); 3];
        assert_eq!(
            min_max_attack(&ctx(same.clone()), &cfg).unwrap().as_slice(),
            &[0.5, 1.0]
        );
        assert_eq!(
            min_sum_attack(&ctx(same), &cfg).unwrap().as_slice(),
            &[0.5, 1.0]
        );
    }

    #[test]
    fn zero_mean_direction() {
        let p = perturbation_direction(&[0.0; 4]);
        assert_eq!(p, vec![-0.5; 4]);
    }

    #[test]
    fn empty_context_is_rejected() {
        assert!(lie_attack(&ctx(vec![]), &AttackConfig::default()).is_err());
    }

    #[test]
    fn benign_kinds_are_identity() {
        let updates = BTreeMap::from([(0, pv(&[1.0])), (1, pv(&[2.0]))]);
        let truth = BTreeSet::from([1]);
        for kind in [AttackKind::None, AttackKind::LabelShuffle] {
            let cfg = AttackConfig {
                kind,
                ..AttackConfig::default()
            };
            assert_eq!(apply_attack(&updates, &truth, &cfg).unwrap(), updates);
        }
    }

    #[test]
    fn partial_knowledge_without_attackers_is_identity() {
        let updates = BTreeMap::from([(0, pv(&[1.0])), (1, pv(&[2.0]))]);
        let cfg = AttackConfig {
            kind: AttackKind::MinMax,
            knowledge: Knowledge::Partial,
            ..AttackConfig::default()
        };
        assert_eq!(
            apply_attack(&updates, &BTreeSet::new(), &cfg).unwrap(),
            updates
        );
    }

    #[test]
    fn config_validation() {
        let bad = AttackConfig {
            gamma_tol: 0.0,
            ..AttackConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AttackConfig {
            z: f64::NAN,
            ..AttackConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
