use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use patternnet::autodiff::Tape;
use patternnet::neighbors::{hilbert_dist, knn, knn_with, KnnMethod, Metric};
use patternnet::Tensor;

fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

#[test]
fn edge_features_match_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let (n, f, k) = (rng.random_range(2..30), rng.random_range(1..6), rng.random_range(1..6));
        let x = gaussian(&mut rng, &[n, f]);
        let nbrs: Vec<usize> = (0..n * k).map(|_| rng.random_range(0..n)).collect();
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let e = tape.edge_features(v, &nbrs, k).unwrap();
        let got = tape.value(e);
        assert_eq!(got.shape(), &[n * k, 2 * f]);
        for i in 0..n {
            for s in 0..k {
                let j = nbrs[i * k + s];
                let row = got.row(i * k + s);
                for t in 0..f {
                    assert_eq!(row[t], x.at(i, t));
                    assert_eq!(row[f + t], x.at(j, t) - x.at(i, t));
                }
            }
        }
    }
}

#[test]
fn kdtree_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for inst in 0..1000 {
        let n = rng.random_range(2..120);
        let f = rng.random_range(1..5);
        let k = rng.random_range(1..n.min(12));
        // a coarse integer grid produces many exact ties, zero rows and parallel rows
        let grid = inst % 2 == 0;
        let x = Tensor::from_fn(&[n, f], |_| if grid { rng.random_range(0..4) as f64 } else { StandardNormal.sample(&mut rng) });
        let euclid = knn_with(&x, k, Metric::Euclidean, KnnMethod::BruteForce).unwrap();
        assert_eq!(euclid, knn_with(&x, k, Metric::Euclidean, KnnMethod::KdTree).unwrap(), "instance {inst}");
        let brute = knn_with(&x, k, Metric::Hilbert, KnnMethod::BruteForce).unwrap();
        let tree = knn_with(&x, k, Metric::Hilbert, KnnMethod::KdTree).unwrap();
        if !grid {
            assert_eq!(brute, tree, "instance {inst}");
            continue;
        }
        // parallel rows sit at distance 0 up to roundoff that differs between
        // the cosine and chord forms, so only the distance profile must agree
        for i in 0..n {
            for (a, b) in brute.row(i).iter().zip(tree.row(i)) {
                let da = hilbert_dist(x.row(i), x.row(*a)).unwrap();
                let db = hilbert_dist(x.row(i), x.row(*b)).unwrap();
                assert!((da - db).abs() <= 1e-12, "instance {inst} row {i}: {da} vs {db}");
            }
        }
    }
}

#[test]
fn zero_rows_keep_floored_hilbert_semantics() {
    let x = Tensor::new(vec![5, 2], vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.1]).unwrap();
    for method in [KnnMethod::BruteForce, KnnMethod::KdTree] {
        let g = knn_with(&x, 4, Metric::Hilbert, method).unwrap();
        // a zero row is at distance 2 from every other row, so ids ascend
        assert_eq!(g.row(0), &[1, 2, 3, 4]);
        assert_eq!(g.row(2), &[0, 1, 3, 4]);
    }
}

#[test]
fn neighbors_exclude_self_and_are_sorted() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = gaussian(&mut rng, &[60, 3]);
    let g = knn(&x, 7, Metric::Euclidean).unwrap();
    g.validate().unwrap();
    for i in 0..60 {
        let row = g.row(i);
        assert!(!row.contains(&i));
        let d = |j: usize| (0..3).map(|t| (x.at(i, t) - x.at(j, t)).powi(2)).sum::<f64>();
        assert!(row.windows(2).all(|w| d(w[0]) <= d(w[1])));
    }
}

#[test]
fn too_few_points_for_k_is_an_error() {
    let x = Tensor::<f64>::zeros(&[4, 3]);
    assert!(knn(&x, 4, Metric::Euclidean).is_err());
    assert!(knn(&x, 3, Metric::Euclidean).is_ok());
}
