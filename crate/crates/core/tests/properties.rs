use approx::assert_relative_eq;
use dagvi::eval::{auroc, hellinger, GraphDistribution};
use dagvi::family::{FactorizedModel, GraphDensity, Model};
use dagvi::graph::{dag_penalty, is_acyclic, markov_equivalent, num_positions, shd, topological_order, AdjacencyMatrix, GraphIndex};
use dagvi::prior::{temperature_schedule, PriorConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn graph(max_d: usize) -> impl Strategy<Value = AdjacencyMatrix> {
    (2..=max_d).prop_flat_map(|d| {
        prop::collection::vec(any::<bool>(), num_positions(d)).prop_map(move |bits| AdjacencyMatrix::delinearize(d, &bits).unwrap())
    })
}

fn graph_pair_triple(d: usize) -> impl Strategy<Value = (AdjacencyMatrix, AdjacencyMatrix, AdjacencyMatrix)> {
    let g = move || prop::collection::vec(any::<bool>(), num_positions(d)).prop_map(move |b| AdjacencyMatrix::delinearize(d, &b).unwrap());
    (g(), g(), g())
}

fn table(d: usize) -> impl Strategy<Value = GraphDistribution> {
    prop::collection::vec(0.0f64..1.0, 1 << (d * (d - 1))).prop_filter_map("all zero", move |w| {
        let total: f64 = w.iter().sum();
        (total > 0.0).then(|| GraphDistribution::new(d, w.iter().map(|x| x / total).collect()).unwrap())
    })
}

proptest! {
    #[test]
    fn linearization_round_trips(a in graph(5)) {
        let d = a.num_nodes();
        prop_assert_eq!(&AdjacencyMatrix::delinearize(d, &a.linearize()).unwrap(), &a);
        prop_assert_eq!(&AdjacencyMatrix::from_index(d, a.index()), &a);
        prop_assert!(a.index().0 < 1u64 << num_positions(d));
        prop_assert_eq!(AdjacencyMatrix::from_index(d, GraphIndex(0)), AdjacencyMatrix::empty(d));
    }

    #[test]
    fn penalty_vanishes_exactly_on_dags(a in graph(5)) {
        let g = dag_penalty(&a);
        prop_assert!(g >= -1e-12);
        if is_acyclic(&a) {
            prop_assert!(g.abs() < 1e-9);
            let order = topological_order(&a).unwrap();
            let mut rank = vec![0; a.num_nodes()];
            for (r, &v) in order.iter().enumerate() {
                rank[v] = r;
            }
            prop_assert!(a.edges().all(|(i, j)| rank[i] < rank[j]));
        } else {
            prop_assert!(g > 1e-8);
            prop_assert!(topological_order(&a).is_err());
        }
    }

    #[test]
    fn acyclicity_survives_relabeling(a in graph(5), seed in any::<u64>()) {
        let d = a.num_nodes();
        let mut perm: Vec<usize> = (0..d).collect();
        let mut s = seed;
        for i in (1..d).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let p = a.permute(&perm);
        prop_assert_eq!(is_acyclic(&p), is_acyclic(&a));
        prop_assert_eq!(p.edge_count(), a.edge_count());
        assert_relative_eq!(dag_penalty(&p), dag_penalty(&a), epsilon = 1e-9);
    }

    #[test]
    fn shd_is_a_metric((a, b, c) in graph_pair_triple(4)) {
        let ab = shd(&a, &b).unwrap();
        prop_assert_eq!(ab, shd(&b, &a).unwrap());
        prop_assert_eq!(ab == 0, a == b);
        prop_assert!(shd(&a, &c).unwrap() <= ab + shd(&b, &c).unwrap());
        prop_assert_eq!(shd(&a, &a.transpose()).unwrap(), (0..4).flat_map(|i| ((i + 1)..4).map(move |j| (i, j)))
            .filter(|&(i, j)| a.has_edge(i, j) != a.has_edge(j, i)).count());
    }

    #[test]
    fn markov_equivalence_is_symmetric((a, b, _) in graph_pair_triple(4)) {
        prop_assert_eq!(markov_equivalent(&a, &b), markov_equivalent(&b, &a));
        prop_assert!(markov_equivalent(&a, &a));
    }

    #[test]
    fn hellinger_is_a_bounded_metric(p in table(2), q in table(2), r in table(2)) {
        let pq = hellinger(&p, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&pq));
        assert_relative_eq!(pq, hellinger(&q, &p).unwrap(), epsilon = 1e-15);
        prop_assert!(hellinger(&p, &p).unwrap() < 1e-7);
        prop_assert!(hellinger(&p, &r).unwrap() <= pq + hellinger(&q, &r).unwrap() + 1e-12);
    }

    #[test]
    fn auroc_depends_only_on_ranks(truth in graph(5), values in prop::collection::vec(0.0f64..1.0, 20), power in 0.2f64..5.0) {
        let d = truth.num_nodes();
        prop_assume!(truth.edge_count() > 0 && truth.edge_count() < num_positions(d));
        let mut it = values.iter().cycle();
        let m = DMatrix::from_fn(d, d, |i, j| if i == j { 0.0 } else { *it.next().unwrap() });
        let a = auroc(&m, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        assert_relative_eq!(auroc(&m.map(|x| x.powf(power)), &truth).unwrap(), a, epsilon = 1e-12);
        // flipping every score mirrors the curve
        assert_relative_eq!(auroc(&m.map(|x| 1.0 - x), &truth).unwrap(), 1.0 - a, epsilon = 1e-12);
    }

    #[test]
    fn factorized_models_are_normalized(logits in prop::collection::vec(-30.0f64..30.0, 6)) {
        let m = Model::Factorized(FactorizedModel::from_logits(3, logits).unwrap());
        let total: f64 = AdjacencyMatrix::all(3).map(|a| m.log_prob(&a).exp()).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn schedule_is_monotone_and_bounded(epochs in 1usize..5000, lo in 0.1f64..100.0, span in 0.0f64..5000.0) {
        let config = PriorConfig { temp_min: lo, temp_max: lo + span, ..Default::default() };
        let mut last = 0.0;
        for i in (0..epochs).step_by(1 + epochs / 50) {
            let l = temperature_schedule(i, epochs, &config);
            prop_assert!(l >= last && l >= lo - 1e-9 && l <= lo + span + 1e-9);
            last = l;
        }
        let end = temperature_schedule(epochs, epochs, &config);
        assert_relative_eq!(end, lo + span, max_relative = 1e-12);
    }
}
