#![no_main]

use bcpo::features::FeatureMap;
use bcpo::State;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(map) = FeatureMap::from_json(text) else {
        return;
    };
    if map.dim() > 1 << 14 {
        return;
    }
    let s = match &map {
        FeatureMap::OneHot { n_states, .. } => State::Discrete(n_states - 1),
        FeatureMap::RandomFourier { state_dim, .. } if *state_dim <= 256 => {
            State::Continuous(vec![0.5; *state_dim])
        }
        FeatureMap::RandomFourier { .. } => return,
    };
    for a in 0..map.n_actions().min(8) {
        let phi = map.features(&s, a).expect("valid map featurizes a valid state");
        let norm: f64 = phi.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm <= 1.0 + 1e-9, "feature norm {norm}");
    }
});
