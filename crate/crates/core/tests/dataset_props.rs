use std::f64::consts::TAU;

use proptest::prelude::*;
use scenclust_core::dataset::*;

fn arb_scenario_row() -> impl Strategy<Value = [f64; 10]> {
    (
        prop::array::uniform4(0.0..60.0f64),
        any::<bool>(),
        any::<bool>(),
        0.0..=180.0f64,
        prop_oneof![1.0..7000.0f64, Just(STRAIGHT_ROAD_RADIUS)],
        1.0..40.0f64,
        1u32..6,
    )
        .prop_map(|(v, be, bt, delta, r, lim, lanes)| {
            [
                v[0],
                v[1],
                f64::from(u8::from(be)),
                v[2],
                v[3],
                f64::from(u8::from(bt)),
                delta,
                r,
                lim,
                f64::from(lanes),
            ]
        })
}

fn arb_matrix() -> impl Strategy<Value = FeatureMatrix> {
    (
        prop::collection::vec((arb_scenario_row(), 0usize..3), 2..40),
        any::<bool>(),
    )
        .prop_map(|(rows, with_labels)| {
            let values = rows.iter().flat_map(|(r, _)| *r).collect();
            let labels = with_labels.then(|| rows.iter().map(|&(_, l)| Scenery::ALL[l]).collect());
            FeatureMatrix::from_parts(
                FeatureSchema::scenario(),
                values,
                (0..rows.len() as u64).collect(),
                labels,
            )
            .unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn csv_round_trip_is_lossless(m in arb_matrix()) {
        let mut buf = Vec::new();
        write_csv(&m, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &FeatureSchema::scenario()).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(back.content_hash(), m.content_hash());

        let mut again = Vec::new();
        write_csv(&back, &mut again).unwrap();
        prop_assert_eq!(again, buf);
    }

    #[test]
    fn heading_fold_is_bounded_and_symmetric(a in -10.0..10.0f64, b in -10.0..10.0f64, k in -3i32..3) {
        let d = fold_heading_difference(a, b);
        prop_assert!((0.0..=180.0).contains(&d));
        prop_assert!((d - fold_heading_difference(b, a)).abs() < 1e-8);
        prop_assert!((d - fold_heading_difference(a + f64::from(k) * TAU, b)).abs() < 1e-6);
    }

    #[test]
    fn row_selection_preserves_ids(m in arb_matrix(), picks in prop::collection::vec(any::<prop::sample::Index>(), 1..10)) {
        let positions: Vec<usize> = picks.iter().map(|p| p.index(m.n_rows())).collect();
        let sub = m.select_rows(&positions).unwrap();
        for (k, &p) in positions.iter().enumerate() {
            prop_assert_eq!(sub.row(k), m.row(p));
            prop_assert_eq!(sub.row_ids()[k], m.row_ids()[p]);
        }
    }
}

#[test]
fn synthetic_rows_satisfy_schema_invariants() {
    let m = generate_synthetic(&Scenery::ALL.map(SceneryTemplate::for_kind), 50, 11).unwrap();
    assert_eq!(m.n_rows(), 150);
    let labels = m.labels().unwrap();
    for (row, label) in m.rows().zip(labels) {
        let r = row[7];
        assert!(r <= RADIUS_CAP || r == STRAIGHT_ROAD_RADIUS);
        assert!((0.0..=180.0).contains(&row[6]));
        assert_eq!(row[2], f64::from(u8::from(row[1] < row[0])));
        assert_eq!(row[5], f64::from(u8::from(row[4] < row[3])));
        if *label == Scenery::Roundabout {
            assert!(r < RADIUS_CAP);
        }
    }
}
