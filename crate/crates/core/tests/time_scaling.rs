use napinn::neural::{forward_with_time_derivative, he_init_stream, NetworkSpec};
use napinn::physics::{scale_time, CollocationGrid};
use proptest::prelude::*;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    // Folding the input scaling into the first layer (W/Δ, b − W·t_min/Δ)
    // gives a raw-time network whose values and d/dt equal the scaled network's
    // values and chain-rule-corrected rates.
    #[test]
    fn scaled_rates_match_an_equivalent_raw_time_network(
        seed in 0u64..1000,
        layers in 1usize..4,
        width in 1usize..12,
        outputs in 1usize..4,
        t_min in 0.0f64..100.0,
        span in 1.0f64..3000.0,
        frac in 0.0f64..1.0,
    ) {
        let spec = NetworkSpec::new(layers, width, outputs);
        let scaled_net = he_init_stream(&spec, seed, 0).unwrap();
        let t_max = t_min + span;
        let mut raw_net = scaled_net.clone();
        let first = spec.layers()[0];
        for j in 0..first.fan_out {
            let w = scaled_net.values[first.weights + j];
            raw_net.values[first.weights + j] = w / span;
            raw_net.values[first.bias + j] -= w * t_min / span;
        }
        let grid = CollocationGrid::new(t_min, t_max, 2).unwrap();
        let t = t_min + frac * span;
        let tau = scale_time(t, t_min, t_max).unwrap();
        let (u_scaled, du_scaled) = forward_with_time_derivative(&scaled_net, tau);
        let (u_raw, du_raw) = forward_with_time_derivative(&raw_net, t);
        for o in 0..outputs {
            prop_assert!(close(u_scaled[o], u_raw[o]), "value {} vs {}", u_scaled[o], u_raw[o]);
            let chained = du_scaled[o] * grid.chain_factor();
            prop_assert!(close(chained, du_raw[o]), "rate {} vs {}", chained, du_raw[o]);
        }
    }
}
