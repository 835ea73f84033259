//! Missingness patterns as a subset lattice.
//!
//! A [`PatternMask`] records which modalities a row observes. The
//! [`PatternTable`] aggregates the observed patterns `Q`, their sample
//! proportions `π_r`, and the superset sums `λ_s = Σ_{r∈Q, r⊇s} π_r` for every
//! nonempty `s`. The weighting random variables attached to the augmentation
//! terms (pattern stratification, the RAY variable, and the adaptive class)
//! are all evaluated here, together with their exact moments under the
//! empirical pattern distribution.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const MAX_MODALITIES: usize = 16;

/// Set of observed modalities over a fixed universe of `width` modalities.
///
/// Modality `i` (0-based) lives at bit `width - 1 - i`, so the numeric value
/// of the mask equals its 0/1 string read as a binary number and canonical
/// ordering is plain ascending mask value.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatternMask {
    bits: u16,
    width: u8,
}

impl PatternMask {
    pub fn new(bits: u16, width: usize) -> Result<Self> {
        check_width(width)?;
        if bits == 0 {
            return Err(Error::EmptyMask);
        }
        if width < 16 && bits >> width != 0 {
            return Err(Error::InvalidMask(format!("{bits:#b} exceeds {width} modalities")));
        }
        Ok(Self { bits, width: width as u8 })
    }

    pub fn full(width: usize) -> Result<Self> {
        check_width(width)?;
        Ok(Self { bits: full_bits(width), width: width as u8 })
    }

    /// Mask observing exactly the listed modality indices.
    pub fn from_modalities(width: usize, modalities: &[usize]) -> Result<Self> {
        check_width(width)?;
        let mut bits = 0u16;
        for &m in modalities {
            if m >= width {
                return Err(Error::InvalidMask(format!("modality {m} out of range for width {width}")));
            }
            bits |= 1 << (width - 1 - m);
        }
        Self::new(bits, width)
    }

    pub fn bits(self) -> u16 {
        self.bits
    }

    pub fn width(self) -> usize {
        self.width as usize
    }

    pub fn count(self) -> u32 {
        self.bits.count_ones()
    }

    pub fn is_full(self) -> bool {
        self.bits == full_bits(self.width())
    }

    pub fn observes(self, modality: usize) -> bool {
        modality < self.width() && self.bits & (1 << (self.width() - 1 - modality)) != 0
    }

    pub fn modalities(self) -> impl Iterator<Item = usize> {
        (0..self.width()).filter(move |&m| self.observes(m))
    }

    pub fn is_subset_of(self, other: PatternMask) -> bool {
        self.bits & other.bits == self.bits
    }

    pub fn is_superset_of(self, other: PatternMask) -> bool {
        other.is_subset_of(self)
    }

    /// Union is always nonempty, so it is infallible.
    pub fn union(self, other: PatternMask) -> PatternMask {
        debug_assert_eq!(self.width, other.width);
        PatternMask { bits: self.bits | other.bits, width: self.width }
    }

    /// `None` when the intersection is empty.
    pub fn intersection(self, other: PatternMask) -> Option<PatternMask> {
        debug_assert_eq!(self.width, other.width);
        let bits = self.bits & other.bits;
        (bits != 0).then_some(PatternMask { bits, width: self.width })
    }

    /// All `s` with `self ⊆ s ⊆ [M]`, in ascending order.
    pub fn supersets(self) -> impl Iterator<Item = PatternMask> {
        let free = full_bits(self.width()) & !self.bits;
        let (base, width) = (self.bits, self.width);
        submasks_ascending(free).map(move |t| PatternMask { bits: base | t, width })
    }
}

impl fmt::Display for PatternMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in 0..self.width() {
            f.write_str(if self.observes(m) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for PatternMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PatternMask({self})")
    }
}

impl FromStr for PatternMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let width = s.len();
        if width == 0 || !s.bytes().all(|b| b == b'0' || b == b'1') {
            return Err(Error::InvalidMask(s.to_string()));
        }
        check_width(width)?;
        let bits = u16::from_str_radix(s, 2).map_err(|_| Error::InvalidMask(s.to_string()))?;
        Self::new(bits, width)
    }
}

impl Serialize for PatternMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PatternMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn check_width(width: usize) -> Result<()> {
    if width == 0 {
        return Err(Error::EmptyMask);
    }
    if width > MAX_MODALITIES {
        return Err(Error::TooManyModalities { max: MAX_MODALITIES, found: width });
    }
    Ok(())
}

fn full_bits(width: usize) -> u16 {
    if width >= 16 {
        u16::MAX
    } else {
        (1u16 << width) - 1
    }
}

/// Submasks of `set` (including 0 and `set`) in ascending numeric order.
fn submasks_ascending(set: u16) -> impl Iterator<Item = u16> {
    // t ↦ ((t | !set) + 1) & set steps through submasks in increasing order.
    let mut next = Some(0u16);
    std::iter::from_fn(move || {
        let t = next?;
        next = if t == set { None } else { Some(((t | !set).wrapping_add(1)) & set) };
        Some(t)
    })
}

fn sign(parity: u32) -> f64 {
    if parity % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Observed patterns with their proportions and the `λ` cache.
///
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct PatternTable {
    width: usize,
    patterns: Vec<PatternMask>,
    counts: Vec<u64>,
    pi: Vec<f64>,
    /// Indexed by mask bits; entry 0 is unused.
    lambda: Vec<f64>,
    /// Position in `patterns` by mask bits, `usize::MAX` when absent.
    index: Vec<usize>,
}

impl PatternTable {
    /// Aggregates per-row masks into counts and sample proportions.
    pub fn from_rows(rows: &[PatternMask]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyInput)?;
        let width = first.width();
        let mut counts: BTreeMap<PatternMask, u64> = BTreeMap::new();
        for &r in rows {
            if r.width() != width {
                return Err(Error::MaskWidth { expected: width, found: r.width() });
            }
            if r.bits == 0 {
                return Err(Error::EmptyMask);
            }
            *counts.entry(r).or_default() += 1;
        }
        Self::from_counts(width, counts.into_iter().collect())
    }

    pub fn from_counts(width: usize, counts: Vec<(PatternMask, u64)>) -> Result<Self> {
        let total: u64 = counts.iter().map(|(_, n)| n).sum();
        if total == 0 {
            return Err(Error::EmptyInput);
        }
        let weights = counts.iter().map(|&(r, n)| (r, n as f64 / total as f64)).collect();
        let mut table = Self::from_proportions(width, weights)?;
        table.counts = table
            .patterns
            .iter()
            .map(|r| counts.iter().filter(|(m, _)| m == r).map(|(_, n)| *n).sum())
            .collect();
        Ok(table)
    }

    /// Population table from pattern probabilities (normalized to sum to 1).
    pub fn from_proportions(width: usize, weights: Vec<(PatternMask, f64)>) -> Result<Self> {
        check_width(width)?;
        if weights.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut agg: BTreeMap<PatternMask, f64> = BTreeMap::new();
        for (r, w) in weights {
            if r.width() != width {
                return Err(Error::MaskWidth { expected: width, found: r.width() });
            }
            if r.bits == 0 {
                return Err(Error::EmptyMask);
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidConfig(format!("pattern weight {w} for {r}")));
            }
            *agg.entry(r).or_default() += w;
        }
        agg.retain(|_, w| *w > 0.0);
        let full = PatternMask::full(width)?;
        if !agg.contains_key(&full) {
            return Err(Error::MissingFullPattern);
        }
        let total: f64 = agg.values().sum();
        let patterns: Vec<PatternMask> = agg.keys().copied().collect();
        let pi: Vec<f64> = agg.values().map(|w| w / total).collect();

        let size = 1usize << width;
        let mut index = vec![usize::MAX; size];
        let mut lambda = vec![0.0; size];
        for (i, (r, p)) in patterns.iter().zip(&pi).enumerate() {
            index[r.bits as usize] = i;
            lambda[r.bits as usize] = *p;
        }
        // Superset-sum transform: λ[s] = Σ_{t ⊇ s} π[t].
        for bit in 0..width {
            let b = 1usize << bit;
            for s in 0..size {
                if s & b == 0 {
                    lambda[s] += lambda[s | b];
                }
            }
        }
        Ok(Self { width, patterns, counts: Vec::new(), pi, lambda, index })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn full(&self) -> PatternMask {
        PatternMask { bits: full_bits(self.width), width: self.width as u8 }
    }

    /// Observed patterns `Q` in canonical (ascending) order.
    pub fn patterns(&self) -> &[PatternMask] {
        &self.patterns
    }

    /// `Q \ {[M]}` in canonical order: the index set of the augmentation terms.
    pub fn augmented(&self) -> Vec<PatternMask> {
        self.patterns.iter().copied().filter(|r| !r.is_full()).collect()
    }

    pub fn proportions(&self) -> &[f64] {
        &self.pi
    }

    /// Sample counts, when the table was built from data.
    pub fn counts(&self) -> Option<&[u64]> {
        (!self.counts.is_empty()).then_some(self.counts.as_slice())
    }

    pub fn total(&self) -> Option<u64> {
        self.counts().map(|c| c.iter().sum())
    }

    pub fn index_of(&self, r: PatternMask) -> Option<usize> {
        if r.width() != self.width {
            return None;
        }
        self.index.get(r.bits as usize).copied().filter(|&i| i != usize::MAX)
    }

    pub fn contains(&self, r: PatternMask) -> bool {
        self.index_of(r).is_some()
    }

    pub fn pi(&self, r: PatternMask) -> Option<f64> {
        self.index_of(r).map(|i| self.pi[i])
    }

    pub fn pi_full(&self) -> f64 {
        self.pi[self.patterns.len() - 1]
    }

    /// `λ_s`: total proportion of patterns containing `s`.
    pub fn lambda(&self, s: PatternMask) -> f64 {
        self.lambda[s.bits as usize]
    }

    /// Patterns with fewer than `min_count` rows (only for data-backed tables).
    pub fn sparse_patterns(&self, min_count: u64) -> Vec<(PatternMask, u64)> {
        self.patterns
            .iter()
            .zip(&self.counts)
            .filter(|(_, &n)| n < min_count)
            .map(|(&r, &n)| (r, n))
            .collect()
    }

    fn check_augmented(&self, r: PatternMask) -> Result<()> {
        if r.width() != self.width {
            return Err(Error::MaskWidth { expected: self.width, found: r.width() });
        }
        if r.is_full() {
            return Err(Error::FullPatternArgument);
        }
        if !self.contains(r) {
            return Err(Error::UnknownPattern(r.to_string()));
        }
        Ok(())
    }
}

/// Weighting scheme attached to the augmentation terms.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightScheme {
    /// `ω_r = 1{R=r}/π_r − 1{R=[M]}/π_[M]`.
    Ps,
    /// The RAY variable `ω_r = Σ_{s⊇r} (−1)^{|s|−|r|} 1{R⊇s}/λ_s`.
    Ray,
    /// `ω_r = Σ_{s⊇r, s∈Q} 1{R=s} α_{r,s}/π_s` with per-`r` zero-sum constraint.
    Adaptive(AdaptiveAlpha),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Ps,
    Ray,
    Adaptive,
}

impl WeightScheme {
    pub fn kind(&self) -> SchemeKind {
        match self {
            WeightScheme::Ps => SchemeKind::Ps,
            WeightScheme::Ray => SchemeKind::Ray,
            WeightScheme::Adaptive(_) => SchemeKind::Adaptive,
        }
    }
}

/// Value of the weighting variable for augmentation pattern `r` on a row
/// observing `observed`.
pub fn omega(
    scheme: &WeightScheme,
    observed: PatternMask,
    r: PatternMask,
    table: &PatternTable,
) -> Result<f64> {
    table.check_augmented(r)?;
    if observed.width() != table.width {
        return Err(Error::MaskWidth { expected: table.width, found: observed.width() });
    }
    if observed.bits == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(match scheme {
        WeightScheme::Ps => {
            let mut w = 0.0;
            if observed == r {
                w += 1.0 / table.pi(r).expect("checked");
            }
            if observed.is_full() {
                w -= 1.0 / table.pi_full();
            }
            w
        }
        WeightScheme::Ray => {
            if !observed.is_superset_of(r) {
                return Ok(0.0);
            }
            // Only s with r ⊆ s ⊆ observed have 1{observed ⊇ s} = 1.
            let free = observed.bits & !r.bits;
            submasks_ascending(free)
                .map(|t| {
                    let s = PatternMask { bits: r.bits | t, width: r.width };
                    sign(t.count_ones()) / table.lambda(s)
                })
                .sum()
        }
        WeightScheme::Adaptive(alpha) => match table.pi(observed) {
            Some(p) if observed.is_superset_of(r) => alpha.get(r, observed) / p,
            _ => 0.0,
        },
    })
}

/// `Σ_{s⊇r, s⊆[M]} (−1)^{|s|−|r|}`: 1 for the full mask, 0 otherwise.
pub fn signed_superset_sum(r: PatternMask, width: usize) -> Result<i64> {
    if r.bits == 0 {
        return Err(Error::EmptyMask);
    }
    if r.width() != width {
        return Err(Error::MaskWidth { expected: width, found: r.width() });
    }
    Ok(r.supersets().map(|s| if (s.count() - r.count()) % 2 == 0 { 1 } else { -1 }).sum())
}

/// Weight values `ω(p, r_k)` for every observed pattern `p` (rows, in
/// canonical order) and augmentation pattern `r_k` (columns).
#[derive(Debug, Clone)]
pub struct OmegaTable {
    pub augmented: Vec<PatternMask>,
    pub values: DMatrix<f64>,
}

impl OmegaTable {
    pub fn new(scheme: &WeightScheme, table: &PatternTable) -> Result<Self> {
        let augmented = table.augmented();
        let mut values = DMatrix::zeros(table.patterns().len(), augmented.len());
        for (i, &p) in table.patterns().iter().enumerate() {
            for (k, &r) in augmented.iter().enumerate() {
                values[(i, k)] = omega(scheme, p, r, table)?;
            }
        }
        Ok(Self { augmented, values })
    }

    /// Multiplies column `k` by `scale[k]` (tuned `α_r` for PS/RAY).
    pub fn scaled(&self, scale: &[f64]) -> Self {
        let mut values = self.values.clone();
        for (k, s) in scale.iter().enumerate() {
            values.column_mut(k).scale_mut(*s);
        }
        Self { augmented: self.augmented.clone(), values }
    }

    /// Exact `γ_k = E[w_k 1{R=[M]}/π_[M]]` and `η_{kl} = E[w_k w_l]` under the
    /// table's pattern distribution.
    pub fn moments(&self, table: &PatternTable) -> (Vec<f64>, DMatrix<f64>) {
        let k = self.augmented.len();
        let mut gamma = vec![0.0; k];
        let mut eta = DMatrix::zeros(k, k);
        let pi_full = table.pi_full();
        for (i, (&p, &pi)) in table.patterns().iter().zip(table.proportions()).enumerate() {
            let row = self.values.row(i);
            if p.is_full() {
                for a in 0..k {
                    gamma[a] += pi * row[a] / pi_full;
                }
            }
            for a in 0..k {
                for b in 0..k {
                    eta[(a, b)] += pi * row[a] * row[b];
                }
            }
        }
        (gamma, eta)
    }
}

/// `γ` and `η` for a scheme, indexed by `Q \ {[M]}` in canonical order.
pub fn gamma_eta(scheme: &WeightScheme, table: &PatternTable) -> Result<(Vec<f64>, DMatrix<f64>)> {
    Ok(OmegaTable::new(scheme, table)?.moments(table))
}

/// Tuning parameters `α_{r,s}` of the adaptive class, for `r ∈ Q \ {[M]}`
/// and `s ∈ Q` with `s ⊇ r`. Absent pairs are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveAlpha {
    entries: BTreeMap<(PatternMask, PatternMask), f64>,
}

impl AdaptiveAlpha {
    /// The canonical variable set `{(r, s)}` ordered by `r` then `s`.
    pub fn variables(table: &PatternTable) -> Vec<(PatternMask, PatternMask)> {
        let mut vars = Vec::new();
        for r in table.augmented() {
            for &s in table.patterns() {
                if s.is_superset_of(r) {
                    vars.push((r, s));
                }
            }
        }
        vars
    }

    pub fn new(
        table: &PatternTable,
        entries: impl IntoIterator<Item = ((PatternMask, PatternMask), f64)>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for ((r, s), v) in entries {
            table.check_augmented(r)?;
            if !table.contains(s) {
                return Err(Error::UnknownPattern(s.to_string()));
            }
            if !s.is_superset_of(r) {
                return Err(Error::InvalidAlpha(format!("{s} is not a superset of {r}")));
            }
            if !v.is_finite() {
                return Err(Error::InvalidAlpha(format!("non-finite value for {r}→{s}")));
            }
            map.insert((r, s), v);
        }
        Ok(Self { entries: map })
    }

    /// Builds from a vector aligned with [`AdaptiveAlpha::variables`].
    pub fn from_vector(table: &PatternTable, values: &[f64]) -> Result<Self> {
        let vars = Self::variables(table);
        if vars.len() != values.len() {
            return Err(Error::InvalidAlpha(format!(
                "expected {} values, got {}",
                vars.len(),
                values.len()
            )));
        }
        Self::new(table, vars.into_iter().zip(values.iter().copied()))
    }

    pub fn to_vector(&self, table: &PatternTable) -> Vec<f64> {
        Self::variables(table).into_iter().map(|(r, s)| self.get(r, s)).collect()
    }

    pub fn get(&self, r: PatternMask, s: PatternMask) -> f64 {
        self.entries.get(&(r, s)).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (PatternMask, PatternMask, f64)> + '_ {
        self.entries.iter().map(|(&(r, s), &v)| (r, s, v))
    }

    /// `Σ_{s⊇r} α_{r,s}` for each `r ∈ Q \ {[M]}`; all zero when feasible.
    pub fn constraint_residuals(&self, table: &PatternTable) -> Vec<f64> {
        table
            .augmented()
            .into_iter()
            .map(|r| self.entries.range((r, r)..).take_while(|((a, _), _)| *a == r).map(|(_, v)| v).sum())
            .collect()
    }

    /// Multiplies every `α_{r,·}` by `scale[k]` for the `k`-th augmented `r`.
    pub fn scaled_rows(&self, table: &PatternTable, scale: &[f64]) -> Self {
        let aug = table.augmented();
        let entries = self
            .entries
            .iter()
            .map(|(&(r, s), &v)| {
                let k = aug.iter().position(|&a| a == r).expect("validated");
                ((r, s), v * scale[k])
            })
            .collect();
        Self { entries }
    }
}

/// Expresses the PS or RAY weighting as a point of the adaptive class.
///
/// PS maps to `α_{r,r} = 1, α_{r,[M]} = −1`. RAY maps to
/// `α_{r,s} = π_s Σ_{t: r⊆t⊆s} (−1)^{|t|−|r|}/λ_t`.
pub fn alpha_characterization(kind: SchemeKind, table: &PatternTable) -> Result<AdaptiveAlpha> {
    let full = table.full();
    let mut entries = Vec::new();
    for (r, s) in AdaptiveAlpha::variables(table) {
        let value = match kind {
            SchemeKind::Ps => {
                if s == r {
                    1.0
                } else if s == full {
                    -1.0
                } else {
                    0.0
                }
            }
            SchemeKind::Ray => {
                let mut acc = 0.0;
                for bits in 1..=full_bits(table.width) {
                    let t = PatternMask { bits, width: r.width };
                    if t.is_superset_of(r) && t.is_subset_of(s) {
                        acc += sign(t.count() - r.count()) / table.lambda(t);
                    }
                }
                table.pi(s).expect("s ∈ Q") * acc
            }
            SchemeKind::Adaptive => {
                return Err(Error::InvalidConfig("adaptive has no fixed characterization".into()))
            }
        };
        entries.push(((r, s), value));
    }
    AdaptiveAlpha::new(table, entries)
}

/// Per-pattern efficiency gains in the uncorrelated-predictor case, where
/// `G` is diagonal and the gain is `Σ_r γ_r² ℓ_r / η_rr`.
#[derive(Debug, Clone, Serialize)]
pub struct DiagonalGain {
    pub pattern: PatternMask,
    /// RAY gain with `η_rr` computed exactly from the definition.
    pub ray_exact: f64,
    /// RAY gain from the double-sum display using `λ_{t₁∪t₂}`.
    pub ray_union: f64,
    /// RAY gain from the double-sum display using `λ_{t₁∩t₂}`.
    pub ray_intersection: f64,
    /// PS gain, `π_r/(π_[M]² + π_[M]π_r)`.
    pub ps: f64,
}

/// Diagonal-case comparison of RAY and PS efficiency gains for fixed
/// per-pattern constants `ell[k] = ℓ²(Cov(F_r, ψ))/ℓ(V(F_r))`.
pub fn diagonal_gain_comparison(table: &PatternTable, ell: &[f64]) -> Result<Vec<DiagonalGain>> {
    let aug = table.augmented();
    if ell.len() != aug.len() {
        return Err(Error::InvalidConfig(format!(
            "expected {} pattern constants, got {}",
            aug.len(),
            ell.len()
        )));
    }
    let (gamma, eta) = gamma_eta(&WeightScheme::Ray, table)?;
    let pm = table.pi_full();
    let mut out = Vec::with_capacity(aug.len());
    for (k, &r) in aug.iter().enumerate() {
        let sups: Vec<PatternMask> = r.supersets().collect();
        let (mut num, mut den_union, mut den_inter) = (0.0, 0.0, 0.0);
        for &t1 in &sups {
            for &t2 in &sups {
                let sgn = sign(t1.count() + t2.count() - 2 * r.count());
                let base = sgn / (table.lambda(t1) * table.lambda(t2));
                num += base;
                den_union += base * table.lambda(t1.union(t2));
                den_inter += base * table.lambda(t1.intersection(t2).expect("both contain r"));
            }
        }
        let pr = table.pi(r).expect("r ∈ Q");
        out.push(DiagonalGain {
            pattern: r,
            ray_exact: gamma[k] * gamma[k] / eta[(k, k)] * ell[k],
            ray_union: num / den_union * ell[k],
            ray_intersection: num / den_inter * ell[k],
            ps: pr / (pm * pm + pm * pr) * ell[k],
        });
    }
    Ok(out)
}
