#![no_main]

use bcpo::mdp::{policy_return, TabularMdp, TabularPolicy};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(mdp) = TabularMdp::from_json(text) else {
        return;
    };
    let back = TabularMdp::from_json(&mdp.to_json().expect("valid MDP serializes"));
    assert_eq!(back.expect("round trip parses"), mdp);
    // The exact solver is cubic in |S||A|; only exercise it on small inputs.
    if mdp.n_states() * mdp.n_actions() <= 64 {
        let uniform = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
        if let Ok(j) = policy_return(&mdp, &uniform) {
            assert!(j.abs() <= mdp.vmax() * (1.0 + 1e-6));
        }
    }
});
