//! Prototype-based evidential layer.
//!
//! Each prototype `p_h` contributes a simple mass function discounted by the
//! distance between the input and `p_h`:
//!
//! ```text
//! s_h        = beta_h * exp(-gamma_h * |x - p_h|^2)
//! m_h({w_c}) = u_h[c] * s_h
//! m_h(Omega) = 1 - s_h
//! ```
//!
//! and the layer output is the Dempster combination of all `m_h`.
//! Constraints are kept by parametrization: `beta = logistic(support_raw)`,
//! `gamma = scale_raw^2` and `u_h = softmax(membership_raw[h])`.

use serde::{Deserialize, Serialize};

use crate::belief::{combine_many, SimpleMass};
use crate::error::{Error, Result};
use crate::kmeans::kmeans;
use crate::params::{ParamVector, Slot};
use crate::scalar::Real;
use crate::seed::SeedRng;
use crate::tape::{softmax, sq_dist, support_of, Tape, Var};

/// Prototype count used when none is configured.
pub const DEFAULT_PROTOTYPES: usize = 20;
/// Lloyd iterations used to place the initial prototypes.
pub const INIT_KMEANS_ITERATIONS: usize = 25;
/// Initial reliability `beta` shared by all `h` prototypes: `1 - 2^(-1/h)`,
/// so the initial layer output keeps at least half of its mass on the frame.
pub fn init_support(prototypes: usize) -> f64 {
    1.0 - 0.5f64.powf(1.0 / prototypes as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnnParams<T> {
    pub prototypes: usize,
    pub dim: usize,
    pub classes: usize,
    /// `prototypes x dim`, row-major.
    pub centers: Vec<T>,
    pub scale_raw: Vec<T>,
    pub support_raw: Vec<T>,
    /// `prototypes x classes`, row-major.
    pub membership_raw: Vec<T>,
}

impl<T: Real> EnnParams<T> {
    pub fn validate(&self) -> Result<()> {
        let (h, d, m) = (self.prototypes, self.dim, self.classes);
        if h == 0 || d == 0 || m < 2 {
            return Err(Error::InvalidInput(format!(
                "evidential layer needs H >= 1, D >= 1, M >= 2 (got {h}, {d}, {m})"
            )));
        }
        let checks = [
            ("prototypes", self.centers.len(), h * d),
            ("scale", self.scale_raw.len(), h),
            ("support", self.support_raw.len(), h),
            ("membership", self.membership_raw.len(), h * m),
        ];
        for (name, found, expected) in checks {
            if found != expected {
                return Err(Error::dims(name, expected, found));
            }
        }
        Ok(())
    }

    pub fn center(&self, h: usize) -> &[T] {
        &self.centers[h * self.dim..(h + 1) * self.dim]
    }

    pub fn gamma(&self, h: usize) -> T {
        self.scale_raw[h] * self.scale_raw[h]
    }

    pub fn beta(&self, h: usize) -> T {
        support_of(self.support_raw[h])
    }

    /// Class membership degrees of prototype `h` (sums to one).
    pub fn membership(&self, h: usize) -> Vec<T> {
        softmax(&self.membership_raw[h * self.classes..(h + 1) * self.classes])
    }
}

fn check_input<T: Real>(x: &[T], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::dims("evidential layer input", dim, x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("evidential layer input".into()));
    }
    Ok(())
}

/// Activation `s_h` of every prototype for input `x`.
pub fn prototype_activations<T: Real>(x: &[T], params: &EnnParams<T>) -> Result<Vec<T>> {
    params.validate()?;
    check_input(x, params.dim)?;
    Ok((0..params.prototypes)
        .map(|h| params.beta(h) * (-params.gamma(h) * sq_dist(x, params.center(h))).exp())
        .collect())
}

/// Mass function induced by one prototype with activation `s` and
/// memberships `u`.
pub fn prototype_mass<T: Real>(s: T, u: &[T]) -> Result<SimpleMass<T>> {
    if !(s >= T::zero() && s <= T::one()) {
        return Err(Error::InvalidInput(format!("activation {s} outside [0, 1]")));
    }
    SimpleMass::new(u.iter().map(|&uc| uc * s).collect(), T::one() - s)
}

/// Output mass of the layer: the combination of all prototype masses.
pub fn enn_forward<T: Real>(x: &[T], params: &EnnParams<T>) -> Result<SimpleMass<T>> {
    let s = prototype_activations(x, params)?;
    let masses = s
        .iter()
        .enumerate()
        .map(|(h, &sh)| prototype_mass(sh, &params.membership(h)))
        .collect::<Result<Vec<_>>>()?;
    combine_many(&masses)
}

/// Places prototypes with seeded k-means on `features` and derives the
/// remaining parameters from the clusters:
///
/// - `gamma_h = 1 / (2 * mean squared distance to the overall mean)` for
///   every prototype (per-cluster widths are narrow enough for the encoder
///   to outgrow them within a few epochs),
/// - `beta_h = init_support(prototypes)`,
/// - `membership_raw[h][c] = ln((n_hc + 1) / (n_c + 1))` where `n_hc` counts
///   class `c` in cluster `h` and `n_c` counts it overall, so memberships
///   are not biased towards the majority class.
pub fn init_enn<T: Real>(
    features: &[Vec<T>],
    labels: &[usize],
    classes: usize,
    prototypes: usize,
    rng: &mut SeedRng,
) -> Result<EnnParams<T>> {
    if features.len() != labels.len() {
        return Err(Error::dims("prototype init labels", features.len(), labels.len()));
    }
    if prototypes > features.len() {
        return Err(Error::InvalidInput(format!(
            "{prototypes} prototypes need at least as many samples, got {}",
            features.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidInput(format!("label {bad} outside {classes} classes")));
    }
    let clustering = kmeans(features, prototypes, INIT_KMEANS_ITERATIONS, rng)?;
    let dim = features[0].len();

    let n = T::from_usize(features.len()).expect("count fits");
    let centroid: Vec<T> = (0..dim).map(|j| features.iter().map(|x| x[j]).sum::<T>() / n).collect();
    let variance = features.iter().map(|x| sq_dist(x, &centroid)).sum::<T>() / n;
    let variance = if variance > T::zero() { variance } else { T::lit(0.5) };
    let scale_raw = vec![(T::one() / (variance + variance)).sqrt(); prototypes];

    let mut counts = vec![0usize; prototypes * classes];
    for (&y, &k) in labels.iter().zip(&clustering.assignments) {
        counts[k * classes + y] += 1;
    }
    let logit = T::lit((init_support(prototypes) / (1.0 - init_support(prototypes))).ln());
    let mut class_totals = vec![0usize; classes];
    for &y in labels {
        class_totals[y] += 1;
    }
    let membership_raw = counts
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let share = (n + 1) as f64 / (class_totals[i % classes] + 1) as f64;
            T::lit(share.ln())
        })
        .collect();
    let params = EnnParams {
        prototypes,
        dim,
        classes,
        centers: clustering.centroids.into_iter().flatten().collect(),
        scale_raw,
        support_raw: vec![logit; prototypes],
        membership_raw,
    };
    params.validate()?;
    Ok(params)
}

/// Where one evidential layer lives inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnnLayout {
    pub prototypes: usize,
    pub dim: usize,
    pub classes: usize,
    centers: Slot,
    scale: Slot,
    support: Slot,
    membership: Slot,
}

impl EnnLayout {
    /// Reserves zero-filled storage; call [`EnnLayout::write`] to initialize.
    pub fn alloc<T: Real>(
        params: &mut ParamVector<T>,
        prefix: &str,
        prototypes: usize,
        dim: usize,
        classes: usize,
    ) -> Self {
        let zero = || T::zero();
        EnnLayout {
            prototypes,
            dim,
            classes,
            centers: params.alloc(format!("{prefix}.prototypes"), &[prototypes, dim], zero),
            scale: params.alloc(format!("{prefix}.scale"), &[prototypes], zero),
            support: params.alloc(format!("{prefix}.support"), &[prototypes], zero),
            membership: params.alloc(format!("{prefix}.membership"), &[prototypes, classes], zero),
        }
    }

    pub fn read<T: Real>(&self, params: &ParamVector<T>) -> EnnParams<T> {
        EnnParams {
            prototypes: self.prototypes,
            dim: self.dim,
            classes: self.classes,
            centers: params.slice(self.centers).to_vec(),
            scale_raw: params.slice(self.scale).to_vec(),
            support_raw: params.slice(self.support).to_vec(),
            membership_raw: params.slice(self.membership).to_vec(),
        }
    }

    pub fn write<T: Real>(&self, params: &mut ParamVector<T>, enn: &EnnParams<T>) -> Result<()> {
        enn.validate()?;
        if (enn.prototypes, enn.dim, enn.classes) != (self.prototypes, self.dim, self.classes) {
            return Err(Error::InvalidInput(format!(
                "layer shape ({}, {}, {}) does not match slot ({}, {}, {})",
                enn.prototypes, enn.dim, enn.classes, self.prototypes, self.dim, self.classes
            )));
        }
        params.slice_mut(self.centers).copy_from_slice(&enn.centers);
        params.slice_mut(self.scale).copy_from_slice(&enn.scale_raw);
        params.slice_mut(self.support).copy_from_slice(&enn.support_raw);
        params.slice_mut(self.membership).copy_from_slice(&enn.membership_raw);
        Ok(())
    }

    pub fn support_slot(&self) -> Slot {
        self.support
    }

    /// Records the layer on `tape`; the result is a mass in `M + 1` layout.
    pub fn record<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let (h, d, m) = (self.prototypes, self.dim, self.classes);
        let centers = tape.param(self.centers);
        let scale = tape.param(self.scale);
        let support = tape.param(self.support);
        let membership = tape.param(self.membership);
        let s = tape.prototype_activation(x, centers, scale, support, h, d);
        let u = tape.row_softmax(membership, h, m);
        let mut acc = tape.prototype_mass(s, u, 0, m);
        for k in 1..h {
            let mk = tape.prototype_mass(s, u, k, m);
            acc = tape.combine(acc, mk)?;
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::combine_simple;
    use crate::seed::substream;

    fn params_1d(centers: Vec<f64>, scale: Vec<f64>, support: Vec<f64>, mem: Vec<f64>) -> EnnParams<f64> {
        EnnParams {
            prototypes: scale.len(),
            dim: centers.len() / scale.len(),
            classes: mem.len() / scale.len(),
            centers,
            scale_raw: scale,
            support_raw: support,
            membership_raw: mem,
        }
    }

    #[test]
    fn activation_at_prototype_equals_beta() {
        // beta = 1 is approached with a huge raw support
        let p = params_1d(vec![0.3, -0.7], vec![5.0], vec![50.0], vec![0.0, 0.0]);
        let s = prototype_activations(&[0.3, -0.7], &p).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn activation_vanishes_far_away() {
        let p = params_1d(vec![0.0], vec![1.0], vec![0.0], vec![0.0, 0.0]);
        // gamma * d^2 = 20
        let s = prototype_activations(&[20f64.sqrt()], &p).unwrap();
        assert!(s[0] < 1e-6);
    }

    #[test]
    fn activation_hand_value() {
        // beta = 0.5, gamma = 1, d^2 = ln 2
        let p = params_1d(vec![0.0], vec![1.0], vec![0.0], vec![0.0, 0.0]);
        let s = prototype_activations(&[2f64.ln().sqrt()], &p).unwrap();
        assert!((s[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn activation_rejects_bad_input() {
        let p = params_1d(vec![0.0, 0.0], vec![1.0], vec![0.0], vec![0.0, 0.0]);
        assert!(matches!(
            prototype_activations(&[1.0], &p),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(prototype_activations(&[1.0, f64::NAN], &p).is_err());
    }

    #[test]
    fn prototype_mass_examples() {
        assert_eq!(prototype_mass(0.0, &[0.7, 0.3]).unwrap(), SimpleMass::vacuous(2));
        assert_eq!(prototype_mass(1.0, &[1.0, 0.0]).unwrap(), SimpleMass::certain(2, 0));
        let m = prototype_mass(0.5, &[0.7, 0.3]).unwrap();
        let expected = [0.35f64, 0.15, 0.5];
        for (a, b) in m.to_vec().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(prototype_mass(1.5, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn single_prototype_forward_equals_its_mass() {
        let p = params_1d(vec![0.1, 0.2], vec![0.8], vec![1.0], vec![0.3, -0.2]);
        let x = [0.5, -0.4];
        let s = prototype_activations(&x, &p).unwrap();
        let direct = prototype_mass(s[0], &p.membership(0)).unwrap();
        assert_eq!(enn_forward(&x, &p).unwrap(), direct);
    }

    #[test]
    fn silent_prototypes_give_vacuous_output() {
        let p = params_1d(vec![0.0, 1.0, 2.0], vec![1.0; 3], vec![-1e4; 3], vec![1.0, 0.0, 0.0, 1.0, 2.0, -1.0]);
        assert_eq!(enn_forward(&[0.5], &p).unwrap(), SimpleMass::vacuous(2));
    }

    #[test]
    fn two_prototypes_reproduce_hand_combination() {
        // prototype masses ({1}:0.6, Omega:0.4) and ({2}:0.5, Omega:0.5) at x = center
        let l = |p: f64| (p / (1.0 - p)).ln();
        let p = params_1d(
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![l(0.6), l(0.5)],
            vec![40.0, -40.0, -40.0, 40.0],
        );
        let out = enn_forward(&[0.0], &p).unwrap();
        let a = SimpleMass::new(vec![0.6, 0.0], 0.4).unwrap();
        let b = SimpleMass::new(vec![0.0, 0.5], 0.5).unwrap();
        let expected = combine_simple(&a, &b).unwrap();
        for (x, y) in out.to_vec().iter().zip(expected.to_vec()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((out.singletons()[0] - 3.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn tape_route_matches_direct_route() {
        let mut rng = substream(11, "enn");
        let features: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos(), i as f64 / 40.0])
            .collect();
        let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let enn = init_enn(&features, &labels, 3, 6, &mut rng).unwrap();
        let mut params = ParamVector::new();
        let layout = EnnLayout::alloc(&mut params, "enn", 6, 3, 3);
        layout.write(&mut params, &enn).unwrap();
        assert_eq!(layout.read(&params), enn);
        for x in &features[..5] {
            let mut tape = Tape::new(params.values());
            let xv = tape.constant(x.clone());
            let out = layout.record(&mut tape, xv).unwrap();
            let direct = enn_forward(x, &enn).unwrap().to_vec();
            for (a, b) in tape.value(out).iter().zip(direct) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn init_is_deterministic() {
        let features: Vec<Vec<f64>> = (0..30).map(|i| vec![(i * 7 % 11) as f64, (i % 5) as f64]).collect();
        let labels: Vec<usize> = (0..30).map(|i| i % 2).collect();
        let a = init_enn(&features, &labels, 2, 5, &mut substream(4, "init")).unwrap();
        let b = init_enn(&features, &labels, 2, 5, &mut substream(4, "init")).unwrap();
        assert_eq!(a, b);
        assert!((a.beta(0) - init_support(5)).abs() < 1e-12);
        assert!((init_support(20) - 0.034_064).abs() < 1e-6);
    }

    #[test]
    fn init_memberships_follow_cluster_labels() {
        // two tight clusters, one per class
        let features: Vec<Vec<f64>> = (0..40).map(|i| vec![(i / 20) as f64 * 10.0 + i as f64 * 1e-3]).collect();
        let labels: Vec<usize> = (0..40).map(|i| 1 - i / 20).collect();
        let p = init_enn(&features, &labels, 2, 2, &mut substream(2, "init")).unwrap();
        for h in 0..2 {
            let u = p.membership(h);
            let class = if p.center(h)[0] < 5.0 { 1 } else { 0 };
            assert!((u[class] - 21.0 / 22.0).abs() < 1e-12, "{u:?}");
        }
    }

    #[test]
    fn init_memberships_ignore_class_imbalance() {
        // a single cluster holding the overall class mix gets uniform membership
        let features: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 * 1e-3]).collect();
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i % 8 == 0)).collect();
        let p = init_enn(&features, &labels, 2, 1, &mut substream(2, "init")).unwrap();
        let u = p.membership(0);
        assert!((u[0] - 0.5).abs() < 1e-12, "{u:?}");
    }

    #[test]
    fn init_with_h_equal_n_uses_the_inputs() {
        let features: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, -(i as f64) * 0.5]).collect();
        let labels: Vec<usize> = (0..8).map(|i| i % 2).collect();
        let p = init_enn(&features, &labels, 2, 8, &mut substream(9, "init")).unwrap();
        let mut centers: Vec<Vec<f64>> = (0..8).map(|h| p.center(h).to_vec()).collect();
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(centers, features);
        assert!(init_enn(&features, &labels, 2, 9, &mut substream(9, "init")).is_err());
    }

    #[test]
    fn init_width_follows_total_variance() {
        // points (0,0), (2,0), (0,4), (2,4): per-axis variances 1 and 4
        let features: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 4.0], vec![2.0, 4.0]];
        let p = init_enn(&features, &[0, 1, 0, 1], 2, 2, &mut substream(1, "init")).unwrap();
        for h in 0..2 {
            assert!((p.gamma(h) - 0.1).abs() < 1e-12);
        }
        let flat: Vec<Vec<f64>> = vec![vec![1.0, 1.0]; 3];
        let q = init_enn(&flat, &[0, 1, 0], 2, 1, &mut substream(1, "init")).unwrap();
        assert!((q.gamma(0) - 1.0).abs() < 1e-12);
    }
}
