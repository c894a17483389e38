use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::ToPrimitive;
use proptest::prelude::*;
use smallball::discrepancy::{discrepancy_eval, sup_discrepancy, PointSet};
use smallball::extremal::{l2_norm_sq_grid, sup_norm_branch_bound, sup_norm_exhaustive, value_histogram};
use smallball::prob::{orlicz_norm, paley_zygmund_bound, FiniteDistribution};
use smallball::rng::{random_u128, stream};
use smallball::witness2d::greedy_witness_2d;
use smallball::witness3d::BlockDecomposition;
use smallball::{
    hyperbolic_shapes, rfunction_eval, Constraint, ExplicitSigns, GridPoint, HaarField, ShapeVector, SignOracle,
};

fn oracle(kind: u8, seed: u64) -> SignOracle {
    match kind % 3 {
        0 => SignOracle::AllPlus,
        1 => SignOracle::Seeded(seed),
        _ => SignOracle::Seeded(seed ^ 0xA5A5),
    }
}

fn all_cells(m: u32, d: usize) -> impl Iterator<Item = GridPoint> {
    (0..1u128 << (m * d as u32)).map(move |rank| {
        let coords: Vec<u128> = (0..d).map(|j| (rank >> (m * (d - 1 - j) as u32)) & ((1 << m) - 1)).collect();
        GridPoint::from_u128(m, &coords).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rfunctions_are_signs(scales in prop::collection::vec(0u32..20, 1..5), seed in any::<u64>(), extra in 1u32..30, salt in any::<u64>()) {
        let shape = ShapeVector::new(scales.clone()).unwrap();
        let m = shape.max_scale() + extra;
        let mut rng = stream(salt, 0);
        let coords: Vec<u128> = scales.iter().map(|_| random_u128(&mut rng, m)).collect();
        let x = GridPoint::from_u128(m, &coords).unwrap();
        for signs in [SignOracle::AllPlus, SignOracle::Seeded(seed)] {
            let v = rfunction_eval(&shape, &signs, &x).unwrap();
            prop_assert!(v == 1 || v == -1);
            prop_assert_eq!(v, rfunction_eval(&shape, &signs, &x).unwrap());
        }
    }

    #[test]
    fn distinct_shapes_are_orthogonal(n in 0u32..4, d in 1usize..4, seed in any::<u64>()) {
        let family = hyperbolic_shapes(n, d, Constraint::none()).unwrap();
        let signs = SignOracle::Seeded(seed);
        let m = n + 1;
        let cells: Vec<GridPoint> = all_cells(m, d).collect();
        let values: Vec<Vec<i64>> = family
            .members()
            .iter()
            .map(|r| cells.iter().map(|x| rfunction_eval(r, &signs, x).unwrap() as i64).collect())
            .collect();
        for a in 0..values.len() {
            for b in 0..values.len() {
                let dot: i64 = values[a].iter().zip(&values[b]).map(|(u, v)| u * v).sum();
                prop_assert_eq!(dot, if a == b { cells.len() as i64 } else { 0 });
            }
        }
        let field = HaarField::new(family.clone(), signs).unwrap();
        prop_assert_eq!(l2_norm_sq_grid(&field, 24).unwrap(), BigRational::from_integer((family.len() as i64).into()));
    }

    #[test]
    fn kernel_histogram_matches_general_evaluation(n in 0u32..4, d in 1usize..4, kind in any::<u8>(), seed in any::<u64>()) {
        let field = HaarField::hyperbolic(n, d, oracle(kind, seed)).unwrap();
        let mut general: BTreeMap<i64, u128> = BTreeMap::new();
        for x in all_cells(n + 1, d) {
            *general.entry(field.eval(&x).unwrap()).or_default() += 1;
        }
        prop_assert_eq!(value_histogram(&field, 24).unwrap(), general);
    }

    #[test]
    fn explicit_tables_agree_with_their_source(n in 0u32..5, d in 1usize..4, seed in any::<u64>(), salt in any::<u64>()) {
        let family = hyperbolic_shapes(n, d, Constraint::none()).unwrap();
        let seeded = HaarField::new(family.clone(), SignOracle::Seeded(seed)).unwrap();
        let table = ExplicitSigns::materialize(&family, &SignOracle::Seeded(seed)).unwrap();
        let explicit = HaarField::new(family, SignOracle::Explicit(table)).unwrap();
        let mut rng = stream(salt, 0);
        for _ in 0..32 {
            let coords: Vec<u128> = (0..d).map(|_| random_u128(&mut rng, n + 1)).collect();
            let x = GridPoint::from_u128(n + 1, &coords).unwrap();
            prop_assert_eq!(seeded.eval(&x).unwrap(), explicit.eval(&x).unwrap());
        }
        prop_assert_eq!(
            sup_norm_exhaustive(&seeded, 24).unwrap().value,
            sup_norm_exhaustive(&explicit, 24).unwrap().value
        );
    }

    #[test]
    fn sup_norm_facts(n in 0u32..6, d in 1usize..4, kind in any::<u8>(), seed in any::<u64>()) {
        prop_assume!((n + 1) * d as u32 <= 18);
        let field = HaarField::hyperbolic(n, d, oracle(kind, seed)).unwrap();
        let ex = sup_norm_exhaustive(&field, 24).unwrap();
        let bb = sup_norm_branch_bound(&field).unwrap();
        prop_assert_eq!(ex.value, bb.value);
        prop_assert_eq!(field.eval(&ex.argmax_point()).unwrap().unsigned_abs(), ex.value);
        prop_assert_eq!(field.eval(&bb.argmax_point()).unwrap().unsigned_abs(), bb.value);
        // sup >= L2 norm, squared on both sides, exact
        prop_assert!(ex.value * ex.value >= field.len() as u64);
        prop_assert_eq!(ex.value % 2, field.len() as u64 % 2);
        if d == 2 {
            prop_assert_eq!(ex.value, n as u64 + 1);
        }
    }

    #[test]
    fn greedy_trace_is_reproducible(n in 0u32..40, seed in any::<u64>()) {
        let signs = SignOracle::Seeded(seed);
        let a = greedy_witness_2d(n, &signs, None).unwrap();
        let b = greedy_witness_2d(n, &signs, None).unwrap();
        prop_assert_eq!(&a.bit_trace, &b.bit_trace);
        prop_assert_eq!(a.point, b.point);
        prop_assert!(a.verified);
    }

    #[test]
    fn block_identity_at_random_cells(pick in 0usize..4, seed in any::<u64>(), salt in any::<u64>()) {
        let (n, q) = [(4, 2), (6, 2), (8, 4), (12, 6)][pick];
        let dec = BlockDecomposition::new(n, 3, q, SignOracle::Seeded(seed)).unwrap();
        let mut rng = stream(salt, 0);
        for _ in 0..8 {
            let coords: Vec<u128> = (0..3).map(|_| random_u128(&mut rng, n + 1)).collect();
            let x = GridPoint::from_u128(n + 1, &coords).unwrap();
            for block in dec.blocks() {
                let t = block.t;
                let s2 = dec.square_function_eval(t, &x).unwrap();
                let sq = dec.sqcap_eval(t, &x).unwrap();
                prop_assert_eq!(s2 - sq, block.sigma_sq as i64);
                prop_assert_eq!(sq, dec.sqcap_by_lines(t, &x).unwrap());
            }
        }
    }

    #[test]
    fn paley_zygmund_on_random_laws(atoms in prop::collection::vec((0i64..50, 1i64..10), 1..8)) {
        prop_assume!(atoms.iter().any(|a| a.0 > 0));
        let total: i64 = atoms.iter().map(|a| a.1).sum();
        let dist = FiniteDistribution::new(atoms.iter().map(|&(v, w)| {
            (BigRational::from_integer(v.into()), BigRational::new(w.into(), total.into()))
        })).unwrap();
        prop_assert!(paley_zygmund_bound(&dist).unwrap().holds);
    }

    #[test]
    fn orlicz_constraint_is_tight(xs in prop::collection::vec(-50.0f64..50.0, 1..60), alpha in 0.4f64..2.5) {
        prop_assume!(xs.iter().any(|x| *x != 0.0));
        let k = orlicz_norm(&xs, alpha).unwrap().k;
        let phi = |k: f64| xs.iter().map(|x| (x.abs() / k).powf(alpha).exp()).sum::<f64>() / xs.len() as f64;
        prop_assert!(phi(k) <= 2.0 + 1e-12);
        prop_assert!(phi(k * (1.0 - 2e-6)) > 2.0);
    }

    #[test]
    fn discrepancy_is_bounded(n in 1usize..40, d in 1usize..4, seed in any::<u64>(), salt in any::<u64>()) {
        let p = PointSet::random(d, n, 10, seed).unwrap();
        let sup = sup_discrepancy(&p).unwrap().value;
        prop_assert!(sup <= n as f64);
        let mut rng = stream(salt, 0);
        for _ in 0..200 {
            let x: Vec<f64> = (0..d).map(|_| random_u128(&mut rng, 20) as f64 / (1u64 << 20) as f64).collect();
            let v = discrepancy_eval(&p, &x).unwrap();
            prop_assert!(v.abs() <= sup + 1e-9);
        }
    }
}

#[test]
fn shape_counts_match_binomials() {
    for d in 1..=5usize {
        for n in 0..=20u32 {
            let count = hyperbolic_shapes(n, d, Constraint::none()).unwrap().len() as u128;
            let mut binom: u128 = 1;
            for i in 1..d as u128 {
                binom = binom * (n as u128 + i) / i;
            }
            assert_eq!(count, binom, "n = {n}, d = {d}");
        }
    }
}

#[test]
fn witness_measure_values_are_exact() {
    use smallball::witness2d::witness_measure;
    for n in 0..=6u32 {
        for signs in [SignOracle::AllPlus, SignOracle::Seeded(1), SignOracle::Seeded(2)] {
            let mu = witness_measure(n, &signs).unwrap();
            assert_eq!(mu.to_f64().unwrap(), (-(n as f64 + 1.0)).exp2());
        }
    }
}
