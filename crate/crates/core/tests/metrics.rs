use dpf_core::metrics::{chamfer, coverage, mmd_chamfer, PointSet};
use proptest::prelude::*;

type Pts = Vec<[f64; 3]>;

// Exhaustive reference: full distance matrices, row and column minima.
fn oracle_chamfer(a: &Pts, b: &Pts) -> f64 {
    let d: Vec<Vec<f64>> = a
        .iter()
        .map(|p| {
            b.iter()
                .map(|q| (0..3).map(|k| (p[k] - q[k]) * (p[k] - q[k])).sum())
                .collect()
        })
        .collect();
    let rows: f64 = d.iter().map(|r| r.iter().cloned().fold(f64::MAX, f64::min)).sum();
    let cols: f64 = (0..b.len())
        .map(|j| d.iter().map(|r| r[j]).fold(f64::MAX, f64::min))
        .sum();
    rows / a.len() as f64 + cols / b.len() as f64
}

fn oracle_coverage(gen: &[Pts], reference: &[Pts]) -> f64 {
    let mut matched = std::collections::BTreeSet::new();
    for g in gen {
        let ds: Vec<f64> = reference.iter().map(|r| oracle_chamfer(g, r)).collect();
        let min = ds.iter().cloned().fold(f64::MAX, f64::min);
        matched.insert(ds.iter().position(|&d| d == min).unwrap());
    }
    matched.len() as f64 / reference.len() as f64
}

fn oracle_mmd(gen: &[Pts], reference: &[Pts]) -> f64 {
    let mut total = 0.0;
    for r in reference {
        total += gen.iter().map(|g| oracle_chamfer(g, r)).fold(f64::MAX, f64::min);
    }
    total / reference.len() as f64
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    // a coarse lattice makes exact ties between sets reasonably common
    prop::array::uniform3((-4i32..=4).prop_map(|v| v as f64 * 0.5))
}

fn set() -> impl Strategy<Value = Pts> {
    prop::collection::vec(point(), 1..=5)
}

fn sets() -> impl Strategy<Value = Vec<Pts>> {
    prop::collection::vec(set(), 1..=3)
}

fn to_ps(v: &[Pts]) -> Vec<PointSet> {
    v.iter().map(|p| PointSet::new(p.clone()).unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn chamfer_matches_exhaustive_oracle(a in set(), b in set()) {
        let (pa, pb) = (PointSet::new(a.clone()).unwrap(), PointSet::new(b.clone()).unwrap());
        prop_assert_eq!(chamfer(&pa, &pb), oracle_chamfer(&a, &b));
        prop_assert_eq!(chamfer(&pa, &pb), chamfer(&pb, &pa));
        prop_assert_eq!(chamfer(&pa, &pa), 0.0);
    }

    #[test]
    fn list_metrics_match_exhaustive_oracle(g in sets(), r in sets()) {
        let (pg, pr) = (to_ps(&g), to_ps(&r));
        let cov = coverage(&pg, &pr).unwrap();
        let mmd = mmd_chamfer(&pg, &pr).unwrap();
        prop_assert_eq!(cov, oracle_coverage(&g, &r));
        prop_assert_eq!(mmd, oracle_mmd(&g, &r));
        prop_assert!((0.0..=1.0).contains(&cov));
        prop_assert!(mmd >= 0.0);
    }

    #[test]
    fn coverage_ignores_generated_order(g in sets(), r in sets()) {
        let mut rev = g.clone();
        rev.reverse();
        prop_assert_eq!(coverage(&to_ps(&g), &to_ps(&r)).unwrap(), coverage(&to_ps(&rev), &to_ps(&r)).unwrap());
    }
}
