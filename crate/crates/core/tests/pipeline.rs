use proptest::prelude::*;
use rokhlin_core::dynamics::{circle_grid, MinimalMap, TorusPoint};
use rokhlin_core::matalg::{intertwining_defect, MatrixFunction, TrigPoly};
use rokhlin_core::matching::{bottleneck_of, min_bottleneck, Permutation};
use rokhlin_core::measure::{check_measure_comparison, epsilon_dense_sample, grid_arcs};
use rokhlin_core::tower::{build_tower, verify_tower};

fn z() -> MatrixFunction {
    MatrixFunction::scalar(TrigPoly::coordinate(1, 0, 1).unwrap())
}

#[test]
fn golden_grid_defect_has_chord_closed_form() {
    let map = MinimalMap::golden_rotation();
    for n in [89usize, 144, 233, 377] {
        let pts = circle_grid(n);
        let m = min_bottleneck(&pts, &map).unwrap();
        let d = intertwining_defect(&z(), &pts, &map, &m.permutation).unwrap();
        let chord = 2.0 * (std::f64::consts::PI * m.epsilon).sin();
        assert!((d - chord).abs() < 1e-12, "n={n}: {d} vs {chord}");
        assert!(m.epsilon < 1.0 / n as f64);
    }
}

#[test]
fn dense_sample_feeds_a_small_matching() {
    let map = MinimalMap::golden_rotation();
    let mu = epsilon_dense_sample(&map, 0.1, &[89]).unwrap();
    let report = check_measure_comparison(&mu, &map, 0.1, &grid_arcs(50)).unwrap();
    assert!(report.all_pass);
    let m = min_bottleneck(mu.support(), &map).unwrap();
    assert!(m.epsilon < 0.1);
}

fn points(coords: Vec<f64>) -> Vec<TorusPoint> {
    coords.into_iter().map(TorusPoint::circle).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn optimum_is_a_lower_bound(theta in 0.01..0.99f64, coords in prop::collection::vec(0.0..1.0f64, 1..24), seed in any::<u64>()) {
        let map = MinimalMap::rotation(theta);
        let pts = points(coords);
        let n = pts.len();
        let best = min_bottleneck(&pts, &map).unwrap();
        prop_assert_eq!(bottleneck_of(&pts, &map, &best.permutation).unwrap(), best.epsilon);
        let shifted = Permutation::new((0..n).map(|j| (j + (seed as usize % n)) % n).collect()).unwrap();
        prop_assert!(bottleneck_of(&pts, &map, &shifted).unwrap() >= best.epsilon);
    }

    #[test]
    fn towers_are_verified(theta in 0.05..0.45f64, height in 2usize..6) {
        let map = MinimalMap::rotation(theta + 1e-3 * std::f64::consts::SQRT_2);
        if let Ok(tower) = build_tower(&map, height, 0.2, 0.05) {
            let check = verify_tower(&tower, 400).unwrap();
            prop_assert!(check.levels_disjoint && check.bases_disjoint);
            prop_assert!(check.grid_max_multiplicity <= 1);
        }
    }
}
