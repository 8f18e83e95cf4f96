//! Sequential and parallel execution must agree bit for bit.

use rankdehaze::dehaze::{dehaze, transmission_map, white_balance, AtmosphericLight, DehazeOptions};
use rankdehaze::forest::{fit_forest, ForestConfig};
use rankdehaze::net::{build_network, FeatureLayer, Placement, FEATURE_DIM};
use rankdehaze::par::{with_threads, Exec};
use rankdehaze::procedural;
use rankdehaze::synth::{build_dataset, sample_clear_patches};

#[test]
fn dataset_features_forest_and_map_match() {
    let images = procedural::corpus(3, 48, 48, 5);
    let clear = sample_clear_patches(&images, 40, 20, 6).unwrap();
    let seq = build_dataset(&clear, 3, 7, Exec::Sequential).unwrap();
    let par = with_threads(Some(3), || build_dataset(&clear, 3, 7, Exec::Parallel).unwrap());
    assert_eq!(seq, par);

    let mut net = build_network(Placement::AfterPool1, 1);
    net.assume_trained();
    let refs: Vec<&[f32]> = seq.samples.iter().map(|s| s.hazy.as_slice()).collect();
    let fs = net.features_for(&refs, FeatureLayer::Fc2, Exec::Sequential).unwrap();
    let fp = net.features_for(&refs, FeatureLayer::Fc2, Exec::Parallel).unwrap();
    assert_eq!(fs, fp);

    let t: Vec<f64> = seq.samples.iter().map(|s| s.t).collect();
    let cfg = ForestConfig { n_trees: 12, seed: 3, ..Default::default() };
    let a = fit_forest(&fs, FEATURE_DIM, &t, &cfg, Exec::Sequential).unwrap();
    let b = with_threads(Some(2), || fit_forest(&fs, FEATURE_DIM, &t, &cfg, Exec::Parallel).unwrap());
    assert_eq!(a.encode(), b.encode());

    let img = white_balance(&images[0], AtmosphericLight([0.9, 0.95, 1.0]));
    for stride in [1, 3] {
        let ms = transmission_map(&img, &net, &a, stride, Exec::Sequential).unwrap();
        let mp = transmission_map(&img, &net, &a, stride, Exec::Parallel).unwrap();
        assert_eq!(ms, mp);
    }

    let opts = |exec| DehazeOptions { guided_radius: 5, exec, ..Default::default() };
    let ds = dehaze(&images[1], &net, &a, &opts(Exec::Sequential)).unwrap();
    let dp = dehaze(&images[1], &net, &a, &opts(Exec::Parallel)).unwrap();
    assert_eq!(ds, dp);
}
