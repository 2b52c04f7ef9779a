use mesm::space::{CriticalPointSpace, Metric};
use proptest::prelude::*;

fn pairs_by_brute_force(space: &CriticalPointSpace) -> Vec<(f64, usize, usize)> {
    let j = space.len();
    let mut all = Vec::new();
    for a in 0..j {
        for b in (a + 1)..j {
            all.push((space.distance(a, b), a, b));
        }
    }
    all.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    all
}

#[test]
fn circle_arc_distances() {
    let s = CriticalPointSpace::circle(4, 4.0).unwrap();
    assert_eq!(s.distance(0, 1), 1.0);
    assert_eq!(s.distance(0, 2), 2.0);
    assert_eq!(s.distance(0, 3), 1.0);
    let d = s.pairwise_distances();
    for a in 0..4 {
        assert_eq!(d[a][a], 0.0);
        for b in 0..4 {
            assert_eq!(d[a][b], d[b][a]);
        }
    }
}

#[test]
fn euclidean_distance() {
    let s = CriticalPointSpace::from_coordinates(None, vec![[0.0, 0.0], [3.0, 4.0]], Metric::Euclidean).unwrap();
    assert_eq!(s.distance(0, 1), 5.0);
}

#[test]
fn supplied_matrix_validation() {
    let asym = vec![vec![0.0, 1.0], vec![2.0, 0.0]];
    assert!(CriticalPointSpace::from_distance_matrix(None, asym, None).is_err());
    let triangle = vec![vec![0.0, 1.0, 5.0], vec![1.0, 0.0, 1.0], vec![5.0, 1.0, 0.0]];
    assert!(CriticalPointSpace::from_distance_matrix(None, triangle, None).is_err());
    let ok = vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 3.0], vec![2.0, 3.0, 0.0]];
    let s = CriticalPointSpace::from_distance_matrix(None, ok, None).unwrap();
    assert_eq!(s.clique_average_distance(&[0, 1, 2]).unwrap(), 2.0);
}

#[test]
fn clique_average_distance_examples() {
    let s = CriticalPointSpace::from_coordinates(
        None,
        vec![[0.0, 0.0], [1.0, 0.0], [0.5, 3f64.sqrt() / 2.0], [4.0, 4.0]],
        Metric::Euclidean,
    )
    .unwrap();
    assert!((s.clique_average_distance(&[0, 1, 2]).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(s.clique_average_distance(&[0, 3]).unwrap(), s.distance(0, 3));
    assert!(s.clique_average_distance(&[0, 0]).is_err());
}

#[test]
fn circle_graph_term_counts() {
    let s = CriticalPointSpace::circle(128, 128.0).unwrap();
    let g = s.generate_graph(2, 0.02).unwrap();
    assert_eq!(g.len(), 162);
    assert_eq!(g.total, 8128);
    assert_eq!(s.generate_graph(2, 1.0).unwrap().len(), 8128);
}

#[test]
fn small_and_brute_force_graphs() {
    let s3 = CriticalPointSpace::circle(3, 3.0).unwrap();
    assert_eq!(s3.generate_graph(2, 1.0).unwrap().len(), 3);

    let coords: Vec<[f64; 2]> = (0..20).map(|k| [((k * 37) % 20) as f64 / 19.0, ((k * k * 7) % 23) as f64 / 22.0]).collect();
    let s = CriticalPointSpace::from_coordinates(None, coords, Metric::Euclidean).unwrap();
    let g = s.generate_graph(2, 0.2).unwrap();
    let oracle: Vec<Vec<usize>> = pairs_by_brute_force(&s).into_iter().take(38).map(|(_, a, b)| vec![a, b]).collect();
    assert_eq!(g.len(), 38);
    let mut got = g.cliques.clone();
    got.sort();
    let mut want = oracle;
    want.sort();
    assert_eq!(got, want);
}

#[test]
fn graph_argument_errors() {
    let s = CriticalPointSpace::circle(10, 10.0).unwrap();
    assert!(s.generate_graph(2, 0.0).is_err());
    assert!(s.generate_graph(2, 1.5).is_err());
    assert!(s.generate_graph(1, 0.5).is_err());
    let big = CriticalPointSpace::circle(1000, 1000.0).unwrap();
    assert!(big.generate_graph(3, 0.1).is_err());
}

proptest! {
    #[test]
    fn graph_size_and_order(j in 3usize..25, q in 0.001f64..1.0, seed in 0u64..1000) {
        let coords: Vec<[f64; 2]> = (0..j)
            .map(|k| {
                let x = ((seed + 1) * (k as u64 * 2654435761 % 1000 + 1)) % 997;
                [x as f64 / 997.0, ((x * 31) % 991) as f64 / 991.0]
            })
            .collect();
        let s = CriticalPointSpace::from_coordinates(None, coords, Metric::Euclidean).unwrap();
        let g = s.generate_graph(2, q).unwrap();
        let total = j * (j - 1) / 2;
        let expect = ((q * total as f64).floor() as usize).max(1);
        prop_assert_eq!(g.len(), expect);
        let brute = pairs_by_brute_force(&s);
        // Ties are resolved lexicographically at a 1e-12 relative resolution.
        let scale = brute[brute.len() - 1].0;
        prop_assert!(g.deltas.windows(2).all(|w| w[0] <= w[1] + 1e-12 * scale));
        prop_assert!((g.deltas[g.len() - 1] - brute[expect - 1].0).abs() < 1e-12);
        for (c, d) in g.cliques.iter().zip(&g.deltas) {
            prop_assert!((s.distance(c[0], c[1]) - d).abs() < 1e-15);
        }
    }
}
