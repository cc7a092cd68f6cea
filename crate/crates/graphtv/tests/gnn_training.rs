//! Trainer-level checks: analytic gradients against central differences
//! (through propagation, activations and a DC layer), a logistic-regression
//! oracle on separable SBM features, determinism, and the Monte-Carlo
//! reference for inter-class Pearson statistics.

use graphtv::gnn::{
    gcn_forward, loss_and_gradients, oversmoothing_metrics, train, Activation, GcnModel, Layer,
    Split, TrainConfig,
};
use graphtv::graph::{Graph, NodeField};
use graphtv::synth::{generate_sbm, SbmSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn ten_node_graph() -> Graph {
    Graph::build(
        10,
        &[
            (0, 1, 1.0),
            (1, 2, 1.0),
            (2, 3, 1.0),
            (3, 4, 1.0),
            (4, 5, 1.0),
            (5, 6, 1.0),
            (6, 7, 1.0),
            (7, 8, 1.0),
            (8, 9, 1.0),
            (0, 9, 1.0),
            (2, 7, 1.0),
            (1, 5, 1.0),
        ],
    )
    .unwrap()
}

#[test]
fn analytic_gradients_match_finite_differences_through_dc() {
    let g = ten_node_graph();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = NodeField::from_values(
        10,
        4,
        (0..40).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
    let mask = vec![true; 10];
    // Depth 3 with a DC layer after each hidden FC; large β keeps every
    // pre-clip value far from the cap, so the loss is smooth at the test
    // point and the straight-through rule is the true derivative.
    let mut model = GcnModel::new(&g, 4, 6, 3, 3, Activation::Tanh, &[1, 2], 1.0, 77).unwrap();
    model.beta = 50.0;
    let wd = 1e-3;

    let (_, analytic) = loss_and_gradients(&model, &g, &x, &labels, &mask, wd).unwrap();

    let mut fc_index = 0usize;
    for (li, layer) in model.layers.clone().iter().enumerate() {
        let Layer::Fc(fc) = layer else { continue };
        for p in 0..fc.weights.len() {
            let h = 1e-5;
            let mut plus = model.clone();
            if let Layer::Fc(f) = &mut plus.layers[li] {
                f.weights[p] += h;
            }
            let mut minus = model.clone();
            if let Layer::Fc(f) = &mut minus.layers[li] {
                f.weights[p] -= h;
            }
            let (lp, _) = loss_and_gradients(&plus, &g, &x, &labels, &mask, wd).unwrap();
            let (lm, _) = loss_and_gradients(&minus, &g, &x, &labels, &mask, wd).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let got = analytic[fc_index][p];
            if fd.abs().max(got.abs()) < 1e-7 {
                continue;
            }
            let rel = (fd - got).abs() / fd.abs().max(got.abs());
            assert!(
                rel < 1e-4,
                "layer {li} param {p}: analytic {got} vs fd {fd} (rel {rel})"
            );
        }
        fc_index += 1;
    }
}

#[test]
fn dc_layer_gradient_is_nonzero_in_unsaturated_regime() {
    // The DC path must actually contribute to the gradient: with the DC
    // layer removed, the gradients differ.
    let g = ten_node_graph();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = NodeField::from_values(
        10,
        3,
        (0..30).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
    let mask = vec![true; 10];
    let with_dc = GcnModel::new(&g, 3, 5, 2, 3, Activation::Tanh, &[1, 2], 1.0, 9).unwrap();
    let mut without = with_dc.clone();
    without.layers.retain(|l| matches!(l, Layer::Fc(_)));
    let (_, ga) = loss_and_gradients(&with_dc, &g, &x, &labels, &mask, 0.0).unwrap();
    let (_, gb) = loss_and_gradients(&without, &g, &x, &labels, &mask, 0.0).unwrap();
    let diff: f64 = ga
        .iter()
        .flatten()
        .zip(gb.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .sum();
    assert!(diff > 1e-6, "DC layer had no effect on gradients");
}

/// Plain logistic regression (gradient descent on the raw features),
/// independent of the GCN path: the oracle for the separable-SBM example.
fn logistic_oracle_accuracy(
    features: &NodeField,
    labels: &[usize],
    train: &[bool],
    test: &[bool],
) -> f64 {
    let d = features.channels();
    let mut w = vec![0.0f64; d];
    let mut b = 0.0f64;
    let n_train = train.iter().filter(|&&t| t).count() as f64;
    for _ in 0..3000 {
        let mut gw = vec![0.0f64; d];
        let mut gb = 0.0;
        for i in 0..labels.len() {
            if !train[i] {
                continue;
            }
            let z: f64 = features.row(i).iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() + b;
            let p = 1.0 / (1.0 + (-z).exp());
            let err = p - labels[i] as f64;
            for (gwk, xk) in gw.iter_mut().zip(features.row(i)) {
                *gwk += err * xk / n_train;
            }
            gb += err / n_train;
        }
        for (wk, gwk) in w.iter_mut().zip(&gw) {
            *wk -= 0.5 * gwk;
        }
        b -= 0.5 * gb;
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for i in 0..labels.len() {
        if !test[i] {
            continue;
        }
        let z: f64 = features.row(i).iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() + b;
        let pred = usize::from(z > 0.0);
        total += 1;
        if pred == labels[i] {
            correct += 1;
        }
    }
    correct as f64 / total as f64
}

#[test]
fn gcn_beats_090_on_separable_sbm_like_the_logistic_oracle() {
    let sample = generate_sbm(&SbmSpec {
        n: 120,
        blocks: 2,
        p_in: 0.12,
        p_out: 0.012,
        feature_dim: 6,
        feature_separation: 3.0,
        seed: 11,
    })
    .unwrap();
    let split = Split::random(120, 40, 0, 80, 101).unwrap();
    let oracle = logistic_oracle_accuracy(&sample.features, &sample.labels, &split.train, &split.test);
    assert!(oracle > 0.9, "logistic oracle reached only {oracle}");

    let model = GcnModel::new(
        &sample.graph,
        6,
        16,
        2,
        2,
        Activation::Tanh,
        &[1],
        1.0,
        11,
    )
    .unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        learning_rate: 0.3,
        weight_decay: 5e-4,
        split,
    };
    let (_, report) = train(&model, &sample.graph, &sample.features, &sample.labels, &cfg).unwrap();
    let acc = report.classification.unwrap().accuracy;
    assert!(acc > 0.9, "GCN reached only {acc}");
}

#[test]
fn training_is_deterministic() {
    let sample = generate_sbm(&SbmSpec {
        n: 60,
        blocks: 2,
        p_in: 0.2,
        p_out: 0.02,
        feature_dim: 4,
        feature_separation: 2.0,
        seed: 4,
    })
    .unwrap();
    let split = Split::random(60, 20, 0, 30, 8).unwrap();
    let cfg = TrainConfig {
        epochs: 60,
        learning_rate: 0.3,
        weight_decay: 5e-4,
        split,
    };
    let run = || {
        let model = GcnModel::new(
            &sample.graph,
            4,
            8,
            2,
            4,
            Activation::Tanh,
            &[2, 3],
            1.0,
            21,
        )
        .unwrap();
        let (trained, report) =
            train(&model, &sample.graph, &sample.features, &sample.labels, &cfg).unwrap();
        let fwd = gcn_forward(&trained, &sample.graph, &sample.features).unwrap();
        (fwd.logits, report)
    };
    let (la, ra) = run();
    let (lb, rb) = run();
    assert_eq!(la.values(), lb.values(), "logits must be bitwise identical");
    assert_eq!(
        ra.classification.unwrap(),
        rb.classification.unwrap(),
        "metrics must be identical"
    );
    assert_eq!(ra.per_layer_dirichlet, rb.per_layer_dirichlet);
}

#[test]
fn random_embeddings_have_near_zero_interclass_pearson() {
    // Monte-Carlo reference: for 64-dimensional independent Gaussian
    // embeddings the mean inter-class correlation over 100 seeds is ~0.
    let g = Graph::build(2, &[(0, 1, 1.0)]).unwrap();
    let labels = vec![0usize, 1usize];
    let mut total = 0.0;
    let mut count = 0usize;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = NodeField::from_values(
            2,
            64,
            (0..128).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        )
        .unwrap();
        let report = oversmoothing_metrics(&g, &[emb], &labels).unwrap();
        if let Some(m) = report.mean_interclass_pearson {
            total += m;
            count += 1;
        }
    }
    let mean = total / count as f64;
    assert!(mean.abs() < 0.1, "mean correlation {mean} over {count} seeds");
}
