use equilab_core::coxeter::{reflect, ReflectionGroup, Root};
use proptest::prelude::*;

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 1e-3).then(|| v.iter().map(|x| x / n).collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn cube_placements_give_listed_orbit_sizes() {
    let g = ReflectionGroup::builtin("B3-cube").unwrap();
    assert_eq!(g.order(), 48);
    let cases: [([f64; 3], usize); 6] = [
        ([0.0, 0.0, 1.0], 6),
        ([1.0, 1.0, 1.0], 8),
        ([0.0, 1.0, 1.0], 12),
        ([0.0, 1.0, 2.0], 24),
        ([1.0, 2.0, 3.0], 48),
        ([0.0, 0.0, 0.0], 1),
    ];
    for (a1, n) in cases {
        let orbit = g.orbit_and_stabilizer(&a1).unwrap();
        assert_eq!(orbit.n_minima, n, "{a1:?}");
        assert_eq!(orbit.orbit.len(), n);
        assert_eq!(orbit.n_minima * orbit.stabilizer_order, 48);
    }
}

#[test]
fn dihedral_three_has_six_elements() {
    assert_eq!(ReflectionGroup::builtin("dihedral-3").unwrap().order(), 6);
}

#[test]
fn root_system_is_closed_under_its_reflections() {
    for key in ["dihedral-3", "dihedral-5", "A3-tetrahedral", "B3-cube"] {
        let g = ReflectionGroup::builtin(key).unwrap();
        for r in g.roots() {
            for s in g.roots() {
                let image = reflect(r, s.as_slice());
                let hit = g.roots().iter().any(|t| {
                    t.as_slice()
                        .iter()
                        .zip(&image)
                        .all(|(a, b)| (a - b).abs() < 1e-10)
                });
                assert!(hit, "{key}: image of a root is not a root");
            }
        }
    }
}

proptest! {
    #[test]
    fn reflection_is_an_isometric_involution(
        r in prop::collection::vec(-1.0f64..1.0, 3),
        u in prop::collection::vec(-10.0f64..10.0, 3),
    ) {
        let Some(r) = unit(&r) else { return Ok(()) };
        let root = Root::new(r.clone()).unwrap();
        let once = reflect(&root, &u);
        let twice = reflect(&root, &once);
        for (a, b) in u.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-13 * (1.0 + a.abs()));
        }
        prop_assert!((norm(&once) - norm(&u)).abs() <= 1e-12 * (1.0 + norm(&u)));
        // Independent formula u − 2⟨u,r⟩r.
        let d: f64 = u.iter().zip(&r).map(|(a, b)| a * b).sum();
        for k in 0..3 {
            prop_assert!((once[k] - (u[k] - 2.0 * d * r[k])).abs() <= 1e-12 * (1.0 + u[k].abs()));
        }
    }

    #[test]
    fn dihedral_orders_and_isometries(k in 2usize..13, x in -5.0f64..5.0, y in -5.0f64..5.0) {
        let g = ReflectionGroup::builtin(&format!("dihedral-{k}")).unwrap();
        prop_assert_eq!(g.order(), 2 * k);
        for e in g.elements() {
            prop_assert!(e.orthogonality_defect() <= 1e-12);
            let v = e.apply(&[x, y]);
            prop_assert!((norm(&v) - norm(&[x, y])).abs() <= 1e-12 * (1.0 + norm(&[x, y])));
        }
    }

    #[test]
    fn orbit_stabilizer_identity(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
        // Sorted nonnegative coordinates lie in the closed fundamental region.
        let mut v = [a, b, c];
        v.sort_by(f64::total_cmp);
        let g = ReflectionGroup::builtin("B3-cube").unwrap();
        let orbit = g.orbit_and_stabilizer(&v).unwrap();
        prop_assert_eq!(orbit.n_minima * orbit.stabilizer_order, 48);
        prop_assert_eq!(orbit.orbit.len(), orbit.n_minima);
        for (i, p) in orbit.orbit.iter().enumerate() {
            for q in &orbit.orbit[..i] {
                let d: f64 = p.iter().zip(q).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                prop_assert!(d > 1e-10);
            }
        }
    }

    #[test]
    fn chamber_lookup_folds_points_into_f(
        x in prop::collection::vec(-4.0f64..4.0, 3),
    ) {
        for key in ["A3-tetrahedral", "B3-cube"] {
            let g = ReflectionGroup::builtin(key).unwrap();
            let f = g.fundamental_region();
            let k = g.chamber_of(&x);
            let y = g.elements()[k].apply_transpose(&x);
            prop_assert!(f.contains_with(&y, 1e-10));
        }
    }

    #[test]
    fn equivariant_extension_is_positive(
        u in prop::collection::vec(0.0f64..2.0, 2),
        xs in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..40),
    ) {
        // x ↦ g·u0 on gF̄ for u0 ∈ F̄ passes the root criterion.
        let g = ReflectionGroup::builtin("dihedral-3").unwrap();
        let f = g.fundamental_region();
        let k = g.chamber_of(&u);
        let u0 = g.elements()[k].apply_transpose(&u);
        prop_assume!(f.contains(&u0));
        let values: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| g.elements()[g.chamber_of(x)].apply(&u0))
            .collect();
        let report = equilab_core::coxeter::positivity_by_roots(
            xs.iter().map(Vec::as_slice).zip(values.iter().map(Vec::as_slice)),
            g.roots(),
            1e-10,
        );
        prop_assert!(report.pass);
    }
}
