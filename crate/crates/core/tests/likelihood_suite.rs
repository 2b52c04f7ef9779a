mod common;

use common::phi;
use mesm::brownresnick::BrownResnickModel;
use mesm::data::BlockMatrix;
use mesm::likelihood::{composite_loglik, fit_tau, TauFitOptions};
use mesm::optim::{central_gradient, forward_gradient};
use mesm::space::{CliqueGraph, CriticalPointSpace, Metric};

/// Hüsler-Reiss log density written out from the bivariate closed form.
fn oracle_log_density(a: f64, z1: f64, z2: f64) -> f64 {
    let w = a / 2.0 + (z2 / z1).ln() / a;
    let v = a / 2.0 + (z1 / z2).ln() / a;
    let big_v = phi(w) / z1 + phi(v) / z2;
    let dens_w = (-0.5 * w * w).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let bracket = phi(w) * phi(v) / (z1 * z1 * z2 * z2) + dens_w / (a * z1 * z1 * z2);
    -big_v + bracket.ln()
}

fn oracle_loglik(model: &BrownResnickModel, coords: &[[f64; 2]], data: &BlockMatrix, pairs: &[(usize, usize)]) -> f64 {
    let mut total = 0.0;
    for b in 0..data.rows() {
        for &(i, k) in pairs {
            let a = model.dependence_param(coords[i], coords[k]);
            total += oracle_log_density(a, data.get(b, i), data.get(b, k));
        }
    }
    total
}

fn setup(j: usize, blocks: usize, seed: u64) -> (BrownResnickModel, Vec<[f64; 2]>, CriticalPointSpace, BlockMatrix) {
    let coords: Vec<[f64; 2]> = (0..j).map(|k| [0.17 * k as f64, 0.05 * ((k * 3) % 5) as f64]).collect();
    let space = CriticalPointSpace::from_coordinates(None, coords.clone(), Metric::Euclidean).unwrap();
    let model = BrownResnickModel::new(vec![0.4, 0.7]).unwrap();
    let data = model.sampler(&coords).unwrap().sample_many(blocks, seed, "likelihood-suite").unwrap();
    (model, coords, space, data)
}

#[test]
fn toy_matches_brute_force() {
    let (model, coords, space, data) = setup(3, 12, 1);
    for q in [0.34, 0.67, 1.0] {
        let graph = space.generate_graph(2, q).unwrap();
        let pairs: Vec<(usize, usize)> = graph.cliques.iter().map(|c| (c[0], c[1])).collect();
        let got = composite_loglik(&model, &data, &space, &graph).unwrap();
        let want = oracle_loglik(&model, &coords, &data, &pairs);
        assert!((got.value - want).abs() < 1e-10, "q={q}: {} vs {want}", got.value);
        assert_eq!(got.terms, pairs.len() * data.rows());
    }
}

#[test]
fn full_graph_equals_all_pairs() {
    let (model, coords, space, data) = setup(6, 8, 2);
    let graph = space.generate_graph(2, 1.0).unwrap();
    let all: Vec<(usize, usize)> = (0..6).flat_map(|a| ((a + 1)..6).map(move |b| (a, b))).collect();
    let got = composite_loglik(&model, &data, &space, &graph).unwrap();
    let want = oracle_loglik(&model, &coords, &data, &all);
    assert!((got.value - want).abs() < 1e-10 * want.abs().max(1.0));
}

#[test]
fn single_block_single_clique() {
    let (model, coords, space, data) = setup(4, 1, 3);
    let graph = space.generate_graph(2, 1.0 / 6.0).unwrap();
    assert_eq!(graph.len(), 1);
    let (i, k) = (graph.cliques[0][0], graph.cliques[0][1]);
    let got = composite_loglik(&model, &data, &space, &graph).unwrap();
    let direct = model.log_pairwise_density(coords[i], coords[k], data.get(0, i), data.get(0, k)).unwrap();
    assert!((got.value - direct).abs() < 1e-14);
}

#[test]
fn invariant_to_reordering() {
    let (model, _, space, data) = setup(12, 40, 4);
    let graph = space.generate_graph(2, 0.5).unwrap();
    let base = composite_loglik(&model, &data, &space, &graph).unwrap().value;

    let mut order: Vec<usize> = (0..graph.len()).collect();
    order.reverse();
    order.rotate_left(graph.len() / 3);
    let shuffled = CliqueGraph {
        cliques: order.iter().map(|&k| graph.cliques[k].iter().rev().copied().collect()).collect(),
        deltas: order.iter().map(|&k| graph.deltas[k]).collect(),
        ..graph.clone()
    };
    let rows: Vec<usize> = (0..data.rows()).map(|r| (r * 7) % data.rows()).collect();
    let permuted = data.select_rows(&rows);
    let other = composite_loglik(&model, &permuted, &space, &shuffled).unwrap().value;
    assert!((base - other).abs() < 1e-9, "{base} vs {other}");
}

#[test]
fn nonpositive_data_rejected() {
    let (model, _, space, _) = setup(3, 1, 5);
    let graph = space.generate_graph(2, 1.0).unwrap();
    let bad = BlockMatrix::new(1, 3, vec![1.0, -0.5, 2.0]).unwrap();
    assert!(composite_loglik(&model, &bad, &space, &graph).is_err());
}

#[test]
fn central_and_forward_gradients_agree() {
    let (_, _, space, data) = setup(8, 60, 6);
    let graph = space.generate_graph(2, 0.5).unwrap();
    let objective = |x: &[f64]| {
        let m = BrownResnickModel::new(x.iter().map(|v| v.exp()).collect()).unwrap();
        composite_loglik(&m, &data, &space, &graph).unwrap().value
    };
    for x in [[-1.0, -0.3], [-0.5, 0.2], [-1.4, -0.8]] {
        let c = central_gradient(objective, &x, 1e-5);
        let f = forward_gradient(objective, &x, 1e-7);
        let scale = c.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for k in 0..2 {
            assert!((c[k] - f[k]).abs() <= 1e-3 * scale, "{c:?} vs {f:?}");
        }
    }
}

#[test]
fn fit_improves_on_start_and_refit_is_a_fixed_point() {
    let (_, _, space, data) = setup(10, 80, 7);
    let graph = space.generate_graph(2, 0.6).unwrap();
    let fit = fit_tau(&data, &space, &graph, &TauFitOptions::default()).unwrap();
    assert!(fit.loglik >= fit.initial_loglik);
    let again = fit_tau(
        &data,
        &space,
        &graph,
        &TauFitOptions { tau0: fit.model.tau().to_vec(), restarts: 1, ..TauFitOptions::default() },
    )
    .unwrap();
    assert!((again.loglik - fit.loglik).abs() < 1e-6 * fit.loglik.abs());
    for (a, b) in again.model.tau().iter().zip(fit.model.tau()) {
        assert!((a.ln() - b.ln()).abs() < 1e-3);
    }
}

#[test]
fn complete_dependence_hits_upper_bound() {
    let (_, _, space, data) = setup(5, 30, 8);
    let copies: Vec<f64> = (0..data.rows()).flat_map(|r| std::iter::repeat_n(data.get(r, 0), 5)).collect();
    let same = BlockMatrix::new(data.rows(), 5, copies).unwrap();
    let graph = space.generate_graph(2, 1.0).unwrap();
    let fit = fit_tau(&same, &space, &graph, &TauFitOptions::default()).unwrap();
    assert!(fit.diagnostics.at_bound.iter().any(|&b| b), "{:?}", fit.model.tau());
}
