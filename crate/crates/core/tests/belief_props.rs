use evifusion::belief::{PowerSetMass, SimpleMass};
use evifusion::{combine_many, combine_powerset, combine_simple, degree_of_conflict, pignistic, Frame};
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;

fn close(a: &SimpleMass<f64>, b: &SimpleMass<f64>, tol: f64) -> bool {
    a.to_vec().iter().zip(b.to_vec()).all(|(x, y)| (x - y).abs() <= tol)
}

fn from_weights(w: &[f64]) -> SimpleMass<f64> {
    let total: f64 = w.iter().sum();
    let v: Vec<f64> = w.iter().map(|x| x / total).collect();
    SimpleMass::from_vec(v).unwrap()
}

/// Masses with strictly positive ignorance, so no pair is totally conflicting.
fn mass(m: usize) -> impl Strategy<Value = SimpleMass<f64>> {
    (prop::collection::vec(0.0..1.0f64, m), 0.05..1.0f64).prop_map(|(mut w, omega)| {
        w.push(omega);
        from_weights(&w)
    })
}

fn masses(m: usize, count: usize) -> impl Strategy<Value = Vec<SimpleMass<f64>>> {
    prop::collection::vec(mass(m), count)
}

fn pair() -> impl Strategy<Value = Vec<SimpleMass<f64>>> {
    prop_oneof![masses(2, 2), masses(3, 2), masses(4, 2), masses(8, 2)]
}

fn small_pair() -> impl Strategy<Value = Vec<SimpleMass<f64>>> {
    prop_oneof![masses(2, 2), masses(3, 2), masses(4, 2)]
}

fn triple() -> impl Strategy<Value = Vec<SimpleMass<f64>>> {
    prop_oneof![masses(2, 3), masses(3, 3), masses(4, 3)]
}

fn omega_set(m: usize) -> u32 {
    (1u32 << m) - 1
}

fn embed(m: &SimpleMass<f64>) -> PowerSetMass<f64> {
    PowerSetMass::from_simple(Frame::with_classes(m.classes()).unwrap(), m).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn combination_is_commutative(p in pair()) {
        let ab = combine_simple(&p[0], &p[1]).unwrap();
        let ba = combine_simple(&p[1], &p[0]).unwrap();
        prop_assert!(close(&ab, &ba, 1e-12));
        prop_assert!((ab.total() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn combination_is_associative(t in triple()) {
        let left = combine_simple(&combine_simple(&t[0], &t[1]).unwrap(), &t[2]).unwrap();
        let right = combine_simple(&t[0], &combine_simple(&t[1], &t[2]).unwrap()).unwrap();
        prop_assert!(close(&left, &right, 1e-10));
    }

    #[test]
    fn vacuous_mass_is_the_identity(p in pair()) {
        let m = &p[0];
        let v = SimpleMass::vacuous(m.classes());
        prop_assert!(close(&combine_simple(m, &v).unwrap(), m, 1e-15));
        prop_assert!(close(&combine_simple(&v, m).unwrap(), m, 1e-15));
        prop_assert_eq!(degree_of_conflict(m, &v).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_matches_powerset_oracle(p in small_pair()) {
        let m = p[0].classes();
        let fast = combine_simple(&p[0], &p[1]).unwrap();
        let slow = combine_powerset(&embed(&p[0]), &embed(&p[1])).unwrap();
        for (set, value) in slow.focal_sets() {
            let singleton = set.count_ones() == 1;
            if !singleton && *set != omega_set(m) {
                prop_assert!(value.abs() <= 1e-15, "compound set {set:b} got {value}");
            }
        }
        prop_assert!(close(&fast, &slow.to_simple().unwrap(), 1e-12));
    }

    #[test]
    fn pignistic_lies_on_the_simplex(w in prop::collection::vec(0.0..1.0f64, 3..10)) {
        let m = from_weights(&w);
        let p = pignistic(&m);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn agreeing_sources_reinforce(m in 2usize..6, a in prop::collection::vec(0.0..1.0f64, 6), b in prop::collection::vec(0.0..1.0f64, 6), oa in 0.01..1.0f64, ob in 0.01..1.0f64) {
        // Both singleton vectors sorted descending: identical ordering.
        let shape = |w: &[f64], omega: f64| {
            let mut s = w[..m].to_vec();
            s.sort_by(|x, y| y.partial_cmp(x).unwrap());
            s.push(omega);
            from_weights(&s)
        };
        let (ma, mb) = (shape(&a, oa), shape(&b, ob));
        let fused = combine_simple(&ma, &mb).unwrap();
        prop_assert!(*fused.ignorance() <= ma.ignorance().min(*mb.ignorance()) + 1e-15);
    }

    #[test]
    fn list_order_does_not_matter(list in prop_oneof![masses(2, 5), masses(3, 5)]) {
        let forward = combine_many(&list).unwrap();
        let reversed: Vec<_> = list.iter().rev().cloned().collect();
        prop_assert!(close(&forward, &combine_many(&reversed).unwrap(), 1e-10));
    }
}

fn rational(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn exact_mass(weights: &[i64]) -> SimpleMass<BigRational> {
    let total: i64 = weights.iter().sum();
    SimpleMass::from_vec(weights.iter().map(|&w| rational(w, total)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Exact arithmetic: closed form and power set agree with no rounding at
    /// all, and the f64 route stays within rounding of the exact value.
    #[test]
    fn exact_rational_oracle(m in 2usize..5, a in prop::collection::vec(0i64..50, 5), b in prop::collection::vec(0i64..50, 5), oa in 1i64..50, ob in 1i64..50) {
        let mut wa = a[..m].to_vec();
        wa.push(oa);
        let mut wb = b[..m].to_vec();
        wb.push(ob);
        let (ea, eb) = (exact_mass(&wa), exact_mass(&wb));
        let frame = Frame::with_classes(m).unwrap();
        let exact = combine_simple(&ea, &eb).unwrap();
        let oracle = combine_powerset(
            &PowerSetMass::from_simple(frame.clone(), &ea).unwrap(),
            &PowerSetMass::from_simple(frame, &eb).unwrap(),
        ).unwrap();
        prop_assert_eq!(&exact, &oracle.to_simple().unwrap());

        let to_f64 = |w: &[i64]| from_weights(&w.iter().map(|&x| x as f64).collect::<Vec<_>>());
        let approx = combine_simple(&to_f64(&wa), &to_f64(&wb)).unwrap();
        for (x, e) in approx.to_vec().iter().zip(exact.to_vec()) {
            let e: f64 = num_traits::ToPrimitive::to_f64(&e).unwrap();
            prop_assert!((x - e).abs() <= 1e-12);
        }
    }
}

#[test]
fn hand_example_in_exact_arithmetic() {
    let a = SimpleMass::new(vec![rational(3, 5), rational(0, 1)], rational(2, 5)).unwrap();
    let b = SimpleMass::new(vec![rational(0, 1), rational(1, 2)], rational(1, 2)).unwrap();
    let fused = combine_simple(&a, &b).unwrap();
    assert_eq!(fused.singletons(), &[rational(3, 7), rational(2, 7)]);
    assert_eq!(fused.ignorance(), &rational(2, 7));
    assert_eq!(degree_of_conflict(&a, &b).unwrap(), rational(3, 10));
}

#[test]
fn single_precision_agrees_with_double() {
    let a = SimpleMass::<f32>::new(vec![0.6, 0.0], 0.4).unwrap();
    let b = SimpleMass::<f32>::new(vec![0.0, 0.5], 0.5).unwrap();
    let fused = combine_simple(&a, &b).unwrap();
    for (x, e) in fused.to_vec().iter().zip([3.0 / 7.0, 2.0 / 7.0, 2.0 / 7.0]) {
        assert!((*x as f64 - e).abs() < 1e-6);
    }
}
