mod common;

use common::{gradient_check, random_batch, split_net};
use modular_arcade::neural::{Adam, DenseNet, HeadSpec, Topology, TrainBatch};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = DenseNet::new(split_net(6, 8, 5), 11).unwrap();
    let batch = random_batch(&net, 4, &mut rng);
    let check = gradient_check(&net, &batch, 8, &mut rng);
    assert_eq!(check.failures, 0, "worst relative error {}", check.worst_rel_err);
    assert!(check.compared >= 6, "only {} probes were kink-free", check.compared);
}

#[test]
fn masked_outputs_carry_no_gradient() {
    let topo = Topology {
        input: 3,
        trunk: vec![4],
        heads: vec![HeadSpec::new("q", vec![], 3)],
    };
    let net = DenseNet::new(topo, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut batch = random_batch(&net, 2, &mut rng);
    let mut mask = Array2::zeros((2, 3));
    mask[[0, 1]] = 1.0;
    mask[[1, 2]] = 1.0;
    batch.weights = Some(vec![mask]);
    let (_, grads) = net.backward(&batch).unwrap();
    let (w_out, b_out) = &grads.layers[1];
    assert!(w_out.row(0).iter().all(|g| *g == 0.0));
    assert_eq!(b_out[0], 0.0);
    assert!(b_out[1] != 0.0 && b_out[2] != 0.0);
    let check = gradient_check(&net, &batch, 8, &mut rng);
    assert!(check.compared > 0 && check.failures == 0);
}

#[test]
fn training_lowers_average_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut net = DenseNet::new(split_net(4, 16, 8), 5).unwrap();
    let x = Array2::from_shape_fn((64, 4), |_| rng.gen_range(-1.0..1.0));
    let vx = Array2::from_shape_fn((64, 1), |(r, _)| x[[r, 0]] - 0.5 * x[[r, 1]]);
    let vy = Array2::from_shape_fn((64, 1), |(r, _)| x[[r, 2]] * x[[r, 3]]);
    let data = TrainBatch::new(x, vec![vx, vy]);
    let initial = net.loss(&data).unwrap();
    let mut adam = Adam::new(&net, 1e-3);
    for _ in 0..200 {
        let (_, g) = net.backward(&data).unwrap();
        net.apply_update(&g, &mut adam);
    }
    assert!(net.loss(&data).unwrap() < initial);
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.bin");
    let net = DenseNet::new(split_net(5, 7, 3), 8).unwrap();
    net.save(&path).unwrap();
    let back = DenseNet::load(&path, Some(net.topology())).unwrap();
    assert_eq!(back.fingerprint(), net.fingerprint());
    assert!(DenseNet::load(dir.path().join("missing.bin"), None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradient_check_on_random_nets(
        input in 1usize..7,
        trunk in 2usize..9,
        head in 1usize..6,
        rows in 1usize..5,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = DenseNet::new(split_net(input, trunk, head), seed ^ 0x5eed).unwrap();
        let batch = random_batch(&net, rows, &mut rng);
        let check = gradient_check(&net, &batch, 8, &mut rng);
        prop_assert_eq!(check.failures, 0, "worst relative error {}", check.worst_rel_err);
    }

    #[test]
    fn loss_is_non_negative_and_gradients_shaped(seed in any::<u64>(), rows in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = DenseNet::new(split_net(3, 5, 2), seed).unwrap();
        let batch = random_batch(&net, rows, &mut rng);
        let (loss, grads) = net.backward(&batch).unwrap();
        prop_assert!(loss >= 0.0);
        for (layer, (gw, gb)) in net.layers().iter().zip(&grads.layers) {
            prop_assert_eq!(layer.weights.dim(), gw.dim());
            prop_assert_eq!(layer.bias.len(), gb.len());
        }
    }

    #[test]
    fn seeded_init_is_bitwise_reproducible(seed in any::<u64>()) {
        let a = DenseNet::new(split_net(4, 6, 3), seed).unwrap();
        let b = DenseNet::new(split_net(4, 6, 3), seed).unwrap();
        prop_assert!(a.params().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
