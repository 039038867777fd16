use dropgraph::regularizers::{
    eq6_adjacency, sample_positions, schedule_rho, similarity, top_positions, Progress, SchedulerKind,
};
use dropgraph::{RngStream, Tape, Tensor};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Tensor::new(&[rows, cols], d).unwrap())
}

fn kinds() -> impl Strategy<Value = SchedulerKind> {
    prop::sample::select(vec![
        SchedulerKind::F1,
        SchedulerKind::F2,
        SchedulerKind::F3,
        SchedulerKind::F4,
        SchedulerKind::F5,
    ])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjacency_rows_are_stochastic(n in 2usize..12, c in 1usize..6, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed).rng();
        use rand::Rng;
        let v = Tensor::from_fn(&[n, c], |_| rng.random_range(-4.0..4.0));
        let tape = Tape::new();
        let a = eq6_adjacency(&similarity(&tape.constant(v), false).unwrap()).unwrap().value();
        for row in a.data().chunks_exact(n) {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12, "row sum {s}");
            prop_assert!(row.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn matmul_is_linear(a in matrix(3, 4), b in matrix(4, 2), c in matrix(4, 2), k in -2.0f64..2.0) {
        let lhs = a.matmul(&Tensor::from_fn(&[4, 2], |i| b.data()[i] + k * c.data()[i])).unwrap();
        let (ab, ac) = (a.matmul(&b).unwrap(), a.matmul(&c).unwrap());
        let rhs = Tensor::from_fn(&[3, 2], |i| ab.data()[i] + k * ac.data()[i]);
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn softmax_ignores_row_shift(z in matrix(3, 5), shift in -50.0f64..50.0) {
        let tape = Tape::new();
        let p = tape.constant(z.clone()).softmax_rows().unwrap().value();
        let q = tape.constant(z.map(|v| v + shift)).softmax_rows().unwrap().value();
        prop_assert!(p.max_abs_diff(&q) < 1e-12);
    }

    #[test]
    fn sampled_positions_are_sorted_unique_and_nonempty(n in 1usize..200, alpha in 0.001f64..1.0, seed in any::<u64>()) {
        let pos = sample_positions(n, alpha, &RngStream::new(seed)).unwrap();
        prop_assert!(!pos.is_empty());
        prop_assert!(pos.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(pos.iter().all(|&p| p < n));
    }

    #[test]
    fn top_positions_take_the_ceiling(scores in prop::collection::vec(-1.0f64..1.0, 1..60), alpha in 0.01f64..1.0) {
        let pos = top_positions(&scores, alpha).unwrap();
        let k = (alpha * scores.len() as f64).ceil() as usize;
        prop_assert_eq!(pos.len(), k.clamp(1, scores.len()));
        let floor = pos.iter().map(|&p| scores[p]).fold(f64::INFINITY, f64::min);
        let rest = (0..scores.len()).filter(|p| !pos.contains(p)).map(|p| scores[p]);
        prop_assert!(rest.into_iter().all(|s| s <= floor));
    }

    #[test]
    fn schedules_stay_between_zero_and_target(kind in kinds(), rho in 0.0f64..0.9, total in 1usize..500, step in 0usize..600) {
        let p = Progress { step: step.min(total), total_steps: total };
        let r = schedule_rho(&p.scheduler(kind, rho)).unwrap();
        prop_assert!((0.0..=rho + 1e-15).contains(&r));
        let next = Progress { step: (step + 1).min(total), total_steps: total };
        prop_assert!(schedule_rho(&next.scheduler(kind, rho)).unwrap() >= r);
    }
}
