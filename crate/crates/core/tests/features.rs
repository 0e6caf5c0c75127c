use ngrc::embed::{embed, DelayConfig, Normalizer};
use ngrc::project::ProjectionPlan;
use ngrc::trajectory::Trajectory;
use proptest::prelude::*;

const EPS: f64 = 0.01;

fn series(max_channels: usize, max_rows: usize) -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1..=max_channels, 2..=max_rows)
        .prop_flat_map(|(w, rows)| (Just(w), prop::collection::vec(-50.0f64..50.0, w * rows)))
}

fn unit_inputs(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(EPS..=1.0 - EPS, 2..=max_len)
}

proptest! {
    #[test]
    fn normalized_values_stay_in_margins((w, values) in series(3, 30), probe in -1e3f64..1e3) {
        let names = (0..w).map(|c| format!("c{c}")).collect();
        let traj = Trajectory::new(0.1, 0.0, names, values.clone()).unwrap();
        let Ok(norm) = Normalizer::fit(&traj, EPS) else { return Ok(()) };
        for row in traj.rows() {
            for (c, &v) in row.iter().enumerate() {
                let y = norm.normalize_value(c, v);
                prop_assert!(y > EPS - 1e-15 && y < 1.0 - EPS + 1e-15, "{y}");
            }
        }
        for c in 0..w {
            let y = norm.normalize_value(c, probe);
            prop_assert!((EPS..=1.0 - EPS).contains(&y), "{y}");
        }
    }

    #[test]
    fn embedding_reindexes((w, values) in series(3, 12), delay in 0usize..6, pick in any::<prop::sample::Index>()) {
        let rows = values.len() / w;
        prop_assume!(delay < rows);
        let n = delay + pick.index(rows - delay);
        let cfg = DelayConfig::new(delay, w);
        let out = embed(&values, &cfg, n).unwrap();
        prop_assert_eq!(out.len(), w * (delay + 1));
        let mut expected: Vec<f64> =
            (n - delay..=n).flat_map(|r| values[r * w..(r + 1) * w].iter().copied()).collect();
        let mut got = out.clone();
        expected.sort_by(f64::total_cmp);
        got.sort_by(f64::total_cmp);
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn features_stay_in_open_unit_interval(input in unit_inputs(40), m in 1usize..400, seed in any::<u64>()) {
        let plan = ProjectionPlan::build(input.len(), m, seed).unwrap();
        for f in plan.apply(&input).unwrap() {
            prop_assert!(f > 0.0 && f < 1.0, "{f}");
        }
    }

    #[test]
    fn plans_and_features_are_deterministic(input in unit_inputs(20), m in 1usize..100, seed in any::<u64>()) {
        let a = ProjectionPlan::build(input.len(), m, seed).unwrap();
        let b = ProjectionPlan::build(input.len(), m, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let fa: Vec<u64> = a.apply(&input).unwrap().iter().map(|v| v.to_bits()).collect();
        let fb: Vec<u64> = b.apply(&input).unwrap().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(fa, fb);
    }

    #[test]
    fn feature_only_reads_earlier_pool(input in unit_inputs(10), m in 2usize..60, seed in any::<u64>(), k in any::<prop::sample::Index>()) {
        let plan = ProjectionPlan::build(input.len(), m, seed).unwrap();
        let l = plan.input_len();
        let k = k.index(m);
        let mut pool = vec![0.0; plan.pool_len()];
        plan.apply_into(&input, &mut pool).unwrap();
        let before = pool.clone();
        // overwrite feature k and recompute only the later features
        pool[l + k] = 1.0 - pool[l + k];
        for (idx, &(i, j)) in plan.pairs().iter().enumerate().skip(k + 1) {
            pool[l + idx] = (1.0 - pool[i as usize]).powf(pool[j as usize]);
        }
        prop_assert_eq!(&pool[..l + k], &before[..l + k]);
        for (idx, &(i, j)) in plan.pairs().iter().enumerate() {
            prop_assert!((i as usize) < l + idx && (j as usize) < l + idx);
        }
    }

    #[test]
    fn combination_decreases_in_first_argument(a in 0.001f64..0.999, b in 0.001f64..0.999, q in 0.001f64..0.999) {
        prop_assume!((a - b).abs() > 1e-6);
        let plan = ProjectionPlan::from_pairs(2, 0, vec![(0, 1)]).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let f_lo = plan.apply(&[lo, q]).unwrap()[0];
        let f_hi = plan.apply(&[hi, q]).unwrap()[0];
        prop_assert!(f_hi < f_lo, "{f_hi} !< {f_lo}");
    }
}

#[test]
fn normalizer_inverse_within_range() {
    let norm = Normalizer::new(vec![-3.0], vec![7.0], EPS).unwrap();
    for i in 0..=100 {
        let x = -3.0 + 0.1 * i as f64;
        assert!((norm.denormalize_value(0, norm.normalize_value(0, x)) - x).abs() < 1e-12);
    }
}
