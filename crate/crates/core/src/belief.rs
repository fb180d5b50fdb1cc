//! Mass functions over a finite frame of discernment.
//!
//! [`SimpleMass`] holds mass on the singletons and on the whole frame only.
//! That family is closed under Dempster's rule, so combination stays O(M).
//! [`PowerSetMass`] is the general form over all subsets and is used to
//! check the compact algebra.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Field;

/// Allowed drift of the total mass before it is renormalized.
pub const NORMALIZATION_TOL: f64 = 1e-9;
/// Total-mass drift beyond which an input is rejected.
pub const REJECT_TOL: f64 = 1e-6;
/// Combination fails when `1 - kappa` is at or below this value.
pub const CONFLICT_TOL: f64 = 1e-12;
/// Negative entries above this are treated as rounding noise and zeroed.
const NEGATIVE_NOISE: f64 = 1e-12;

/// The set of class labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Frame {
    labels: Vec<String>,
}

impl Frame {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::InvalidFrame(format!(
                "need at least 2 classes, got {}",
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::InvalidFrame(format!("duplicate label {label:?}")));
            }
        }
        Ok(Frame { labels })
    }

    /// Frame with generated labels `class0`, `class1`, ...
    pub fn with_classes(m: usize) -> Result<Self> {
        Frame::new((0..m).map(|c| format!("class{c}")).collect())
    }

    /// The two-class frame `{negative, positive}`.
    pub fn binary() -> Self {
        Frame {
            labels: vec!["negative".into(), "positive".into()],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

impl TryFrom<Vec<String>> for Frame {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        Frame::new(labels)
    }
}

impl From<Frame> for Vec<String> {
    fn from(frame: Frame) -> Self {
        frame.labels
    }
}

/// Mass on each singleton `{w_c}` plus the ignorance mass on the whole frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "RawSimpleMass<T>",
    bound(
        serialize = "T: Serialize",
        deserialize = "T: Field + Deserialize<'de>"
    )
)]
pub struct SimpleMass<T> {
    singletons: Vec<T>,
    ignorance: T,
}

#[derive(Deserialize)]
struct RawSimpleMass<T> {
    singletons: Vec<T>,
    ignorance: T,
}

impl<T: Field> TryFrom<RawSimpleMass<T>> for SimpleMass<T> {
    type Error = Error;

    fn try_from(raw: RawSimpleMass<T>) -> Result<Self> {
        SimpleMass::new(raw.singletons, raw.ignorance)
    }
}

impl<T: Field> SimpleMass<T> {
    /// Validates and, when the total drifted by less than [`REJECT_TOL`],
    /// renormalizes.
    pub fn new(singletons: Vec<T>, ignorance: T) -> Result<Self> {
        if singletons.len() < 2 {
            return Err(Error::InvalidMass(format!(
                "frame needs at least 2 classes, got {}",
                singletons.len()
            )));
        }
        let mut values = singletons;
        values.push(ignorance);
        let mut total = T::zero();
        for v in values.iter_mut() {
            let x = v.approx();
            if !x.is_finite() {
                return Err(Error::InvalidMass(format!("non-finite entry {v:?}")));
            }
            if *v < T::zero() {
                if x < -NEGATIVE_NOISE {
                    return Err(Error::InvalidMass(format!("negative entry {v:?}")));
                }
                *v = T::zero();
            }
            total = total + v.clone();
        }
        let drift = (total.approx() - 1.0).abs();
        if drift > REJECT_TOL {
            return Err(Error::InvalidMass(format!(
                "masses sum to {:?}, expected 1",
                total
            )));
        }
        if drift > NORMALIZATION_TOL {
            for v in values.iter_mut() {
                *v = v.clone() / total.clone();
            }
        }
        Ok(Self::from_parts_unchecked(values))
    }

    /// Builds from the `M + 1` vector layout: singletons first, ignorance last.
    pub fn from_vec(values: Vec<T>) -> Result<Self> {
        let mut values = values;
        let ignorance = values
            .pop()
            .ok_or_else(|| Error::InvalidMass("empty mass vector".into()))?;
        SimpleMass::new(values, ignorance)
    }

    pub(crate) fn from_parts_unchecked(mut values: Vec<T>) -> Self {
        let ignorance = values.pop().expect("mass vector has an ignorance entry");
        SimpleMass {
            singletons: values,
            ignorance,
        }
    }

    /// Total ignorance: all mass on the frame.
    pub fn vacuous(m: usize) -> Self {
        SimpleMass {
            singletons: vec![T::zero(); m],
            ignorance: T::one(),
        }
    }

    /// All mass on one class.
    pub fn certain(m: usize, class: usize) -> Self {
        let mut singletons = vec![T::zero(); m];
        singletons[class] = T::one();
        SimpleMass {
            singletons,
            ignorance: T::zero(),
        }
    }

    pub fn classes(&self) -> usize {
        self.singletons.len()
    }

    pub fn singletons(&self) -> &[T] {
        &self.singletons
    }

    pub fn ignorance(&self) -> &T {
        &self.ignorance
    }

    /// The `M + 1` vector layout.
    pub fn to_vec(&self) -> Vec<T> {
        let mut v = self.singletons.clone();
        v.push(self.ignorance.clone());
        v
    }

    pub fn total(&self) -> T {
        self.singletons
            .iter()
            .fold(self.ignorance.clone(), |acc, v| acc + v.clone())
    }

    pub fn map<U: Field>(&self, f: impl Fn(&T) -> U) -> SimpleMass<U> {
        SimpleMass {
            singletons: self.singletons.iter().map(&f).collect(),
            ignorance: f(&self.ignorance),
        }
    }
}

/// Unnormalized Dempster combination on the `M + 1` layout.
///
/// Returns the conjunctive products and the conflict `kappa`. Both slices must
/// have the same length.
pub(crate) fn combine_unnormalized<T: Field>(a: &[T], b: &[T]) -> (Vec<T>, T) {
    debug_assert_eq!(a.len(), b.len());
    let m = a.len() - 1;
    let (a_ign, b_ign) = (&a[m], &b[m]);
    let mut out = Vec::with_capacity(m + 1);
    let mut sum_a = T::zero();
    let mut sum_b = T::zero();
    let mut agree = T::zero();
    for c in 0..m {
        let (ac, bc) = (&a[c], &b[c]);
        let same = ac.clone() * bc.clone();
        out.push(same.clone() + ac.clone() * b_ign.clone() + a_ign.clone() * bc.clone());
        sum_a = sum_a + ac.clone();
        sum_b = sum_b + bc.clone();
        agree = agree + same;
    }
    out.push(a_ign.clone() * b_ign.clone());
    let kappa = sum_a * sum_b - agree;
    (out, kappa)
}

/// Normalized Dempster combination on the `M + 1` layout.
pub(crate) fn combine_slices<T: Field>(a: &[T], b: &[T]) -> Result<(Vec<T>, T)> {
    let (mut out, kappa) = combine_unnormalized(a, b);
    let norm = T::one() - kappa.clone();
    let remaining = norm.approx();
    if !(remaining > CONFLICT_TOL) {
        return Err(Error::TotalConflict { remaining });
    }
    for v in out.iter_mut() {
        *v = v.clone() / norm.clone();
    }
    Ok((out, kappa))
}

fn same_frame<T>(a: &SimpleMass<T>, b: &SimpleMass<T>) -> Result<()> {
    if a.singletons.len() != b.singletons.len() {
        return Err(Error::FrameMismatch {
            expected: a.singletons.len(),
            found: b.singletons.len(),
        });
    }
    Ok(())
}

/// Dempster's rule in closed form for singleton-plus-ignorance masses.
pub fn combine_simple<T: Field>(a: &SimpleMass<T>, b: &SimpleMass<T>) -> Result<SimpleMass<T>> {
    same_frame(a, b)?;
    let (out, _) = combine_slices(&a.to_vec(), &b.to_vec())?;
    Ok(SimpleMass::from_parts_unchecked(out))
}

/// Left fold of [`combine_simple`].
pub fn combine_many<T: Field>(masses: &[SimpleMass<T>]) -> Result<SimpleMass<T>> {
    let (first, rest) = masses
        .split_first()
        .ok_or_else(|| Error::InvalidInput("cannot combine an empty list of masses".into()))?;
    rest.iter()
        .try_fold(first.clone(), |acc, m| combine_simple(&acc, m))
}

/// Mass that would fall on the empty set when combining `a` and `b`.
pub fn degree_of_conflict<T: Field>(a: &SimpleMass<T>, b: &SimpleMass<T>) -> Result<T> {
    same_frame(a, b)?;
    let (_, kappa) = combine_unnormalized(&a.to_vec(), &b.to_vec());
    Ok(kappa)
}

/// Pignistic probabilities: singleton mass plus an equal share of the ignorance.
pub fn pignistic<T: Field>(m: &SimpleMass<T>) -> Vec<T> {
    let share = m.ignorance.clone() / T::from_usize(m.classes()).expect("class count fits");
    m.singletons
        .iter()
        .map(|s| s.clone() + share.clone())
        .collect()
}

/// A mass function over arbitrary nonempty subsets, keyed by class bitmask.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSetMass<T> {
    frame: Frame,
    masses: BTreeMap<u32, T>,
}

/// Largest frame the power-set form accepts.
pub const MAX_POWERSET_CLASSES: usize = 16;

impl<T: Field> PowerSetMass<T> {
    pub fn new(frame: Frame, masses: BTreeMap<u32, T>) -> Result<Self> {
        let m = frame.len();
        if m > MAX_POWERSET_CLASSES {
            return Err(Error::InvalidFrame(format!(
                "power-set masses support at most {MAX_POWERSET_CLASSES} classes, got {m}"
            )));
        }
        let full = full_set(m);
        let mut total = T::zero();
        for (&set, v) in &masses {
            if set == 0 {
                return Err(Error::InvalidMass("mass assigned to the empty set".into()));
            }
            if set & !full != 0 {
                return Err(Error::InvalidMass(format!(
                    "subset {set:#b} outside a frame of {m} classes"
                )));
            }
            if *v < T::zero() || !v.approx().is_finite() {
                return Err(Error::InvalidMass(format!("invalid entry {v:?}")));
            }
            total = total + v.clone();
        }
        if (total.approx() - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidMass(format!(
                "masses sum to {total:?}, expected 1"
            )));
        }
        Ok(PowerSetMass { frame, masses })
    }

    /// Mass concentrated on a single focal set.
    pub fn logical(frame: Frame, set: u32) -> Result<Self> {
        PowerSetMass::new(frame, BTreeMap::from([(set, T::one())]))
    }

    /// Embeds a compact mass into the power set.
    pub fn from_simple(frame: Frame, m: &SimpleMass<T>) -> Result<Self> {
        if frame.len() != m.classes() {
            return Err(Error::FrameMismatch {
                expected: frame.len(),
                found: m.classes(),
            });
        }
        let mut masses = BTreeMap::new();
        for (c, v) in m.singletons().iter().enumerate() {
            if *v != T::zero() {
                masses.insert(1u32 << c, v.clone());
            }
        }
        if *m.ignorance() != T::zero() {
            masses.insert(full_set(frame.len()), m.ignorance().clone());
        }
        PowerSetMass::new(frame, masses)
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn focal_sets(&self) -> &BTreeMap<u32, T> {
        &self.masses
    }

    pub fn mass_of(&self, set: u32) -> T {
        self.masses.get(&set).cloned().unwrap_or_else(T::zero)
    }

    /// Mass on subsets that are neither singletons nor the whole frame.
    pub fn compound_mass(&self) -> T {
        let full = full_set(self.frame.len());
        self.masses
            .iter()
            .filter(|(&set, _)| set != full && set.count_ones() > 1)
            .fold(T::zero(), |acc, (_, v)| acc + v.clone())
    }

    /// Projects back to the compact form, failing if a compound subset other
    /// than the frame carries mass.
    pub fn to_simple(&self) -> Result<SimpleMass<T>> {
        if self.compound_mass().approx() > NORMALIZATION_TOL {
            return Err(Error::InvalidMass(
                "mass on compound subsets cannot be represented compactly".into(),
            ));
        }
        let m = self.frame.len();
        let singletons = (0..m).map(|c| self.mass_of(1 << c)).collect();
        SimpleMass::new(singletons, self.mass_of(full_set(m)))
    }
}

fn full_set(m: usize) -> u32 {
    if m >= 32 {
        u32::MAX
    } else {
        (1u32 << m) - 1
    }
}

/// Dempster's rule over all pairs of focal sets.
pub fn combine_powerset<T: Field>(
    a: &PowerSetMass<T>,
    b: &PowerSetMass<T>,
) -> Result<PowerSetMass<T>> {
    if a.frame != b.frame {
        return Err(Error::FrameMismatch {
            expected: a.frame.len(),
            found: b.frame.len(),
        });
    }
    let mut joint: BTreeMap<u32, T> = BTreeMap::new();
    let mut kappa = T::zero();
    for (&sa, va) in &a.masses {
        for (&sb, vb) in &b.masses {
            let product = va.clone() * vb.clone();
            let meet = sa & sb;
            if meet == 0 {
                kappa = kappa + product;
            } else {
                let slot = joint.entry(meet).or_insert_with(T::zero);
                *slot = slot.clone() + product;
            }
        }
    }
    let norm = T::one() - kappa;
    let remaining = norm.approx();
    if !(remaining > CONFLICT_TOL) {
        return Err(Error::TotalConflict { remaining });
    }
    let masses = joint
        .into_iter()
        .filter(|(_, v)| *v != T::zero())
        .map(|(set, v)| (set, v / norm.clone()))
        .collect();
    PowerSetMass::new(a.frame.clone(), masses)
}
