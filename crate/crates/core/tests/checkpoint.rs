use std::collections::BTreeMap;

use cascade_core::data::Standardizer;
use cascade_core::{Checkpoint, Network, NetworkSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn net32() -> Network<f32> {
    Network::init(
        NetworkSpec::mlp(5, 4, 2, 3, 3),
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap()
}

#[test]
fn round_trip_is_exact() {
    let mut net = net32();
    net.norm.layers[1][2].var[0] = 0.123_456_79;
    let ckpt = Checkpoint::new(
        net,
        Some(Standardizer {
            mean: vec![0.1],
            std: vec![0.3],
        }),
        BTreeMap::from([("lambda".to_string(), "0".to_string())]),
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::<f32>::load(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_json().unwrap(), ckpt.to_json().unwrap());
}

#[test]
fn rejects_wrong_scalar_and_version() {
    let ckpt = Checkpoint::new(net32(), None, BTreeMap::new());
    let text = ckpt.to_json().unwrap();
    assert!(Checkpoint::<f64>::from_json(&text).is_err());
    let bumped = text.replace("\"version\":1", "\"version\":99");
    assert!(Checkpoint::<f32>::from_json(&bumped).is_err());
    assert!(Checkpoint::<f32>::from_json("{}").is_err());
}

#[test]
fn rejects_inconsistent_parameters() {
    let mut net = net32();
    net.params.pop();
    let text = Checkpoint::new(net, None, BTreeMap::new())
        .to_json()
        .unwrap();
    assert!(Checkpoint::<f32>::from_json(&text).is_err());
}

#[test]
fn cast_preserves_outputs() {
    let net = net32();
    let wide: Network<f64> = net.cast();
    let x = cascade_core::Tensor::new(vec![1, 5], vec![0.5f32, -0.2, 0.1, 0.9, -1.0]).unwrap();
    let a = net.forward_standard(&x).unwrap();
    let b = wide.forward_standard(&x.cast()).unwrap();
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((*p as f64 - q).abs() < 1e-5);
    }
}
