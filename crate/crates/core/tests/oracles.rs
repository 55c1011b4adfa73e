mod common;

use glgnn::config::BackboneKind;
use glgnn::tape::Tape;
use glgnn::DenseMatrix;

#[test]
fn engine_matches_brute_force_on_random_instances() {
    for (name, err) in common::oracle_suite(100, 11) {
        assert!(err <= 1e-10, "{name}: max deviation {err:e}");
    }
}

#[test]
fn dense_propagation_matrix_on_a_path() {
    let p = common::random_graph(0, 0.0, &mut common::rng(0));
    assert_eq!(p.num_nodes(), 0);
    let edges = [(0, 1), (1, 2)];
    let g = glgnn::graph::Graph::build_adjacency(edges, 3).unwrap();
    let expect = common::oracle_normalized_adjacency(3, &edges);
    assert!(common::max_abs_diff(&g.normalized_adjacency().to_dense(), &expect) < 1e-15);
    // middle node has degree 3 with its self loop, ends have 2
    assert!((expect.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
    assert!((expect.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn star_graph_attention_by_hand() {
    // Center 0 with leaves 1..=3, c = 1, K̃ = [1], a = [1, 2].
    let edges = [(0, 1), (0, 2), (0, 3)];
    let f = DenseMatrix::from_rows(&[[0.5], [1.0], [-1.0], [2.0]]);
    let k = DenseMatrix::from_rows(&[[1.0]]);
    let a = DenseMatrix::from_rows(&[[1.0], [2.0]]);
    let oracle = common::oracle_gat_coefficients(4, &edges, &f, &k, &a);
    // row 0 logits: 0.5 + 2·h_j for j ∈ {0,1,2,3} → 1.5, 2.5, leaky(-1.5), 4.5
    let logits = [1.5, 2.5, -0.3, 4.5];
    let z: f64 = logits.iter().map(|e: &f64| e.exp()).sum();
    for (j, e) in logits.iter().enumerate() {
        assert!((oracle.get(0, j) - e.exp() / z).abs() < 1e-15);
    }
    let mut tape = Tape::new();
    let g = glgnn::graph::Graph::build_adjacency(edges, 4).unwrap();
    let pattern = std::sync::Arc::new(g.self_loop_pattern());
    let att = glgnn::model::Attention {
        kernel: tape.constant(k),
        score: tape.constant(a),
    };
    let fv = tape.constant(f);
    let coeffs = glgnn::backbone::gat_coefficients(&mut tape, fv, &pattern, &att).unwrap();
    let engine = pattern.with_values(tape.value(coeffs).data().to_vec()).unwrap().to_dense();
    assert!(common::max_abs_diff(&engine, &oracle) < 1e-15);
}

#[test]
fn gcnii_beta_schedule_values() {
    let mut cfg = glgnn::config::TrainConfig::default().with_backbone(BackboneKind::Gcnii);
    cfg.backbone.gcnii_lambda = 0.5;
    for l in 1..=8 {
        let expect = (0.5 / l as f64 + 1.0).ln();
        assert_eq!(cfg.backbone.gcnii_beta(l), expect);
    }
    assert!(cfg.backbone.gcnii_beta(1) > cfg.backbone.gcnii_beta(8));
}
