//! Type spaces, agent configurations, empirical measures and test functions.
//!
//! Empirical masses are kept as integer counts over `N`; they only become
//! floating point when paired with a test function or exported. That makes
//! "total mass is exactly one" a structural fact instead of a tolerance.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The set `W` of possible agent types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TypeSpace {
    FiniteLabels { labels: Vec<String> },
    IntegerLattice { dim: usize },
    /// `bound` is used for binning and diagnostics only; agents are never
    /// truncated.
    RealLine { bound: f64 },
}

impl TypeSpace {
    pub fn finite<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::InvalidSpace("no labels".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::InvalidSpace(format!("duplicate label `{l}`")));
            }
        }
        Ok(TypeSpace::FiniteLabels { labels })
    }

    pub fn lattice(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidSpace("lattice dimension must be >= 1".into()));
        }
        Ok(TypeSpace::IntegerLattice { dim })
    }

    pub fn real_line(bound: f64) -> Result<Self> {
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::InvalidSpace(format!("truncation bound {bound} must be positive")));
        }
        Ok(TypeSpace::RealLine { bound })
    }

    /// Number of points for finite spaces.
    pub fn size(&self) -> Option<usize> {
        match self {
            TypeSpace::FiniteLabels { labels } => Some(labels.len()),
            _ => None,
        }
    }

    pub fn labels(&self) -> Option<&[String]> {
        match self {
            TypeSpace::FiniteLabels { labels } => Some(labels),
            _ => None,
        }
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.labels()?.iter().position(|l| l == name)
    }

    pub fn contains(&self, w: &TypeValue) -> bool {
        match (self, w) {
            (TypeSpace::FiniteLabels { labels }, TypeValue::Label(i)) => *i < labels.len(),
            (TypeSpace::IntegerLattice { dim }, TypeValue::Lattice(v)) => v.len() == *dim,
            (TypeSpace::RealLine { .. }, TypeValue::Real(x)) => x.is_finite(),
            _ => false,
        }
    }

    /// Human-readable rendering of a value of this space.
    pub fn display(&self, w: &TypeValue) -> String {
        match (self, w) {
            (TypeSpace::FiniteLabels { labels }, TypeValue::Label(i)) => {
                labels.get(*i).cloned().unwrap_or_else(|| format!("#{i}"))
            }
            _ => w.to_string(),
        }
    }
}

/// A single agent type.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TypeValue {
    Label(usize),
    Lattice(Box<[i64]>),
    Real(f64),
}

impl TypeValue {
    /// Real type value; rejects non-finite numbers and folds `-0.0` into `0.0`.
    pub fn real(x: f64) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::NotInSpace { value: x.to_string() });
        }
        Ok(TypeValue::Real(if x == 0.0 { 0.0 } else { x }))
    }

    pub fn label(&self) -> Option<usize> {
        match self {
            TypeValue::Label(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            TypeValue::Real(x) => Some(*x),
            _ => None,
        }
    }

    /// Scalar coordinate used by monomial, smooth and interval test functions.
    /// Labels map to their index, lattice points to coordinate `axis`.
    pub fn coordinate(&self, axis: usize) -> f64 {
        match self {
            TypeValue::Label(i) => *i as f64,
            TypeValue::Lattice(v) => v.get(axis).copied().unwrap_or(0) as f64,
            TypeValue::Real(x) => *x,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            TypeValue::Label(_) => 0,
            TypeValue::Lattice(_) => 1,
            TypeValue::Real(_) => 2,
        }
    }
}

impl fmt::Display for TypeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeValue::Label(i) => write!(f, "#{i}"),
            TypeValue::Lattice(v) => {
                let parts: Vec<String> = v.iter().map(i64::to_string).collect();
                write!(f, "({})", parts.join(","))
            }
            TypeValue::Real(x) => write!(f, "{x}"),
        }
    }
}

impl Ord for TypeValue {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (TypeValue::Label(a), TypeValue::Label(b)) => a.cmp(b),
            (TypeValue::Lattice(a), TypeValue::Lattice(b)) => a.cmp(b),
            (TypeValue::Real(a), TypeValue::Real(b)) => a.total_cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for TypeValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for TypeValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for TypeValue {}

impl Hash for TypeValue {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            TypeValue::Label(i) => i.hash(state),
            TypeValue::Lattice(v) => v.hash(state),
            TypeValue::Real(x) => x.to_bits().hash(state),
        }
    }
}

/// Types of all `N` agents, indexed by agent id.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfiguration {
    types: Vec<TypeValue>,
}

impl AgentConfiguration {
    pub fn new(space: &TypeSpace, types: Vec<TypeValue>) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::config("config", "at least one agent is required"));
        }
        if let Some(bad) = types.iter().find(|w| !space.contains(w)) {
            return Err(Error::NotInSpace { value: bad.to_string() });
        }
        Ok(AgentConfiguration { types })
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn types(&self) -> &[TypeValue] {
        &self.types
    }

    pub fn into_types(self) -> Vec<TypeValue> {
        self.types
    }
}

/// Read access to the masses of a probability measure on `W`.
///
/// Rate functions receive the current distribution through this trait, so
/// the same model code runs on the particle system (exact counts) and on the
/// deterministic limit (a probability vector).
pub trait MeasureView {
    fn mass(&self, w: &TypeValue) -> f64;

    fn label_mass(&self, i: usize) -> f64 {
        self.mass(&TypeValue::Label(i))
    }
}

/// A dense probability vector over a finite label space.
#[derive(Debug, Clone, Copy)]
pub struct ProbVector<'a>(pub &'a [f64]);

impl MeasureView for ProbVector<'_> {
    fn mass(&self, w: &TypeValue) -> f64 {
        match w {
            TypeValue::Label(i) => self.0.get(*i).copied().unwrap_or(0.0),
            _ => 0.0,
        }
    }

    fn label_mass(&self, i: usize) -> f64 {
        self.0.get(i).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Counts {
    Dense(Vec<u64>),
    Sparse(BTreeMap<TypeValue, u64>),
}

/// `ν^N = (1/N) Σ δ_{η(i)}`, stored as exact agent counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    n: u64,
    counts: Counts,
}

impl EmpiricalMeasure {
    pub fn from_config(space: &TypeSpace, config: &AgentConfiguration) -> Self {
        Self::from_types(space, config.types())
    }

    /// Caller guarantees every type belongs to `space`.
    pub fn from_types(space: &TypeSpace, types: &[TypeValue]) -> Self {
        let counts = match space.size() {
            Some(k) => {
                let mut c = vec![0u64; k];
                for w in types {
                    if let TypeValue::Label(i) = w {
                        c[*i] += 1;
                    }
                }
                Counts::Dense(c)
            }
            None => {
                let mut m = BTreeMap::new();
                for w in types {
                    *m.entry(w.clone()).or_insert(0) += 1;
                }
                Counts::Sparse(m)
            }
        };
        EmpiricalMeasure { n: types.len() as u64, counts }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn count(&self, w: &TypeValue) -> u64 {
        match (&self.counts, w) {
            (Counts::Dense(c), TypeValue::Label(i)) => c.get(*i).copied().unwrap_or(0),
            (Counts::Dense(_), _) => 0,
            (Counts::Sparse(m), w) => m.get(w).copied().unwrap_or(0),
        }
    }

    pub fn label_count(&self, i: usize) -> u64 {
        match &self.counts {
            Counts::Dense(c) => c.get(i).copied().unwrap_or(0),
            Counts::Sparse(m) => m.get(&TypeValue::Label(i)).copied().unwrap_or(0),
        }
    }

    /// Sum of all counts; equals `n()` by construction.
    pub fn total_count(&self) -> u64 {
        match &self.counts {
            Counts::Dense(c) => c.iter().sum(),
            Counts::Sparse(m) => m.values().sum(),
        }
    }

    /// Dense counts for finite spaces.
    pub fn dense_counts(&self) -> Option<&[u64]> {
        match &self.counts {
            Counts::Dense(c) => Some(c),
            Counts::Sparse(_) => None,
        }
    }

    /// Dense masses `count/N` for finite spaces.
    pub fn masses(&self) -> Option<Vec<f64>> {
        let n = self.n as f64;
        self.dense_counts().map(|c| c.iter().map(|&k| k as f64 / n).collect())
    }

    /// Atoms with nonzero count, in type order.
    pub fn atoms(&self) -> Vec<(TypeValue, u64)> {
        let mut out = Vec::new();
        self.for_each_atom(|w, k| out.push((w.clone(), k)));
        out
    }

    pub fn for_each_atom(&self, mut f: impl FnMut(&TypeValue, u64)) {
        match &self.counts {
            Counts::Dense(c) => {
                for (i, &k) in c.iter().enumerate() {
                    if k > 0 {
                        f(&TypeValue::Label(i), k);
                    }
                }
            }
            Counts::Sparse(m) => {
                for (w, &k) in m {
                    f(w, k);
                }
            }
        }
    }

    pub fn support_len(&self) -> usize {
        match &self.counts {
            Counts::Dense(c) => c.iter().filter(|&&k| k > 0).count(),
            Counts::Sparse(m) => m.len(),
        }
    }

    /// Moves one agent from `from` to `to`. Panics if no agent has type
    /// `from`, which would mean the caller's configuration and measure have
    /// diverged.
    pub fn move_agent(&mut self, from: &TypeValue, to: &TypeValue) {
        if from == to {
            return;
        }
        match &mut self.counts {
            Counts::Dense(c) => {
                let (TypeValue::Label(a), TypeValue::Label(b)) = (from, to) else {
                    panic!("non-label value on a finite space");
                };
                assert!(c[*a] > 0, "no agent of type {from} to move");
                c[*a] -= 1;
                c[*b] += 1;
            }
            Counts::Sparse(m) => {
                let k = m.get_mut(from).expect("no agent of the moved type");
                *k -= 1;
                if *k == 0 {
                    m.remove(from);
                }
                *m.entry(to.clone()).or_insert(0) += 1;
            }
        }
    }

    /// Sorted list of real-valued agent types with multiplicity.
    pub fn real_samples(&self) -> Option<Vec<f64>> {
        let Counts::Sparse(m) = &self.counts else {
            return None;
        };
        let mut out = Vec::with_capacity(self.n as usize);
        for (w, &k) in m {
            let x = w.as_real()?;
            out.extend(std::iter::repeat_n(x, k as usize));
        }
        Some(out)
    }
}

impl MeasureView for EmpiricalMeasure {
    fn mass(&self, w: &TypeValue) -> f64 {
        self.count(w) as f64 / self.n as f64
    }

    fn label_mass(&self, i: usize) -> f64 {
        self.label_count(i) as f64 / self.n as f64
    }
}

/// A finite signed combination of atoms.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SignedMeasure {
    pub atoms: Vec<(TypeValue, f64)>,
}

impl SignedMeasure {
    pub fn from_empirical(m: &EmpiricalMeasure) -> Self {
        let n = m.n() as f64;
        SignedMeasure {
            atoms: m.atoms().into_iter().map(|(w, k)| (w, k as f64 / n)).collect(),
        }
    }

    pub fn from_dense(masses: &[f64]) -> Self {
        SignedMeasure {
            atoms: masses
                .iter()
                .enumerate()
                .map(|(i, &p)| (TypeValue::Label(i), p))
                .collect(),
        }
    }

    /// `self + c·other`
    pub fn add_scaled(mut self, c: f64, other: &SignedMeasure) -> Self {
        self.atoms
            .extend(other.atoms.iter().map(|(w, p)| (w.clone(), c * p)));
        self
    }

    pub fn total(&self) -> f64 {
        self.atoms.iter().map(|(_, p)| p).sum()
    }
}

/// Anything that can integrate a function of the type.
pub trait Integrable {
    fn integrate(&self, f: &dyn Fn(&TypeValue) -> f64) -> f64;

    /// True when the measure is known to have total mass exactly one.
    fn is_probability(&self) -> bool {
        false
    }
}

impl Integrable for EmpiricalMeasure {
    fn integrate(&self, f: &dyn Fn(&TypeValue) -> f64) -> f64 {
        let mut acc = 0.0;
        self.for_each_atom(|w, k| acc += k as f64 * f(w));
        acc / self.n as f64
    }

    fn is_probability(&self) -> bool {
        true
    }
}

impl Integrable for SignedMeasure {
    fn integrate(&self, f: &dyn Fn(&TypeValue) -> f64) -> f64 {
        self.atoms.iter().map(|(w, p)| p * f(w)).sum()
    }
}

impl Integrable for ProbVector<'_> {
    fn integrate(&self, f: &dyn Fn(&TypeValue) -> f64) -> f64 {
        self.0
            .iter()
            .enumerate()
            .map(|(i, p)| p * f(&TypeValue::Label(i)))
            .sum()
    }

    fn is_probability(&self) -> bool {
        true
    }
}

/// Set used by indicator test functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "set", rename_all = "snake_case")]
pub enum IndicatorSet {
    Labels { labels: Vec<usize> },
    Point { value: TypeValue },
    /// Half-open interval `[lo, hi)` on the scalar coordinate.
    Interval { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothFamily {
    Cos,
    Tanh,
}

/// Declarative test function `φ` on `W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Indicator(IndicatorSet),
    Monomial {
        power: u32,
        #[serde(default)]
        center: f64,
        #[serde(default)]
        axis: usize,
    },
    BoundedSmooth {
        family: SmoothFamily,
        a: f64,
        b: f64,
    },
    Constant {
        c: f64,
    },
}

impl TestFunction {
    pub fn indicator_label(i: usize) -> Self {
        TestFunction::Indicator(IndicatorSet::Labels { labels: vec![i] })
    }

    pub fn constant(c: f64) -> Self {
        TestFunction::Constant { c }
    }

    pub fn eval(&self, w: &TypeValue) -> f64 {
        match self {
            TestFunction::Indicator(set) => {
                let hit = match set {
                    IndicatorSet::Labels { labels } => {
                        w.label().is_some_and(|i| labels.contains(&i))
                    }
                    IndicatorSet::Point { value } => value == w,
                    IndicatorSet::Interval { lo, hi } => {
                        let x = w.coordinate(0);
                        *lo <= x && x < *hi
                    }
                };
                if hit {
                    1.0
                } else {
                    0.0
                }
            }
            TestFunction::Monomial {
                power,
                center,
                axis,
            } => (w.coordinate(*axis) - center).powi(*power as i32),
            TestFunction::BoundedSmooth { family, a, b } => {
                let x = a * w.coordinate(0) + b;
                match family {
                    SmoothFamily::Cos => x.cos(),
                    SmoothFamily::Tanh => x.tanh(),
                }
            }
            TestFunction::Constant { c } => *c,
        }
    }

    pub fn is_constant(&self) -> Option<f64> {
        match self {
            TestFunction::Constant { c } => Some(*c),
            _ => None,
        }
    }
}

/// `⟨m, φ⟩ = ∫ φ dm`.
///
/// Constants are integrated against probability measures without summing,
/// so `⟨ν, c⟩ = c` holds exactly.
pub fn pair<M: Integrable + ?Sized>(m: &M, phi: &TestFunction) -> f64 {
    if let (Some(c), true) = (phi.is_constant(), m.is_probability()) {
        return c;
    }
    m.integrate(&|w| phi.eval(w))
}

/// Total variation distance `½ Σ |p − q|` between two probability vectors.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SpaceMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Total variation distance between an empirical measure on a finite space
/// and a dense probability vector.
pub fn tv_distance_empirical(m: &EmpiricalMeasure, q: &[f64]) -> Result<f64> {
    let counts = m.dense_counts().ok_or(Error::Unsupported("tv distance"))?;
    if counts.len() != q.len() {
        return Err(Error::SpaceMismatch {
            left: counts.len(),
            right: q.len(),
        });
    }
    let n = m.n() as f64;
    Ok(0.5
        * counts
            .iter()
            .zip(q)
            .map(|(&k, b)| (k as f64 / n - b).abs())
            .sum::<f64>())
}

/// Kolmogorov–Smirnov distance between a sample and a density tabulated on a
/// uniform grid `lo + k·dx`. The reference CDF is the cumulative trapezoid
/// integral, normalized by its total. Samples outside the grid still count
/// in the empirical CDF, so mass beyond either end shows up as a tail gap.
pub fn ks_distance(samples: &[f64], lo: f64, dx: f64, density: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    if density.len() < 2 || !(dx > 0.0) {
        return Err(Error::Insufficient("reference grid needs >= 2 points".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;

    let mut cdf = Vec::with_capacity(density.len());
    let mut acc = 0.0;
    cdf.push(0.0);
    for w in density.windows(2) {
        acc += 0.5 * (w[0] + w[1]) * dx;
        cdf.push(acc);
    }
    let total = acc;
    if !(total > 0.0) {
        return Err(Error::Insufficient("reference density has no mass".into()));
    }

    let mut idx = 0usize;
    let mut sup: f64 = 0.0;
    for (k, c) in cdf.iter().enumerate() {
        let x = lo + k as f64 * dx;
        while idx < sorted.len() && sorted[idx] <= x {
            idx += 1;
        }
        let emp = idx as f64 / n;
        sup = sup.max((emp - c / total).abs());
    }
    Ok(sup.min(1.0))
}
