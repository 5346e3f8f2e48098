//! Small reference models used by tests, benches and the CLI examples.

use crate::features::{Domain, FeatureSet};
use crate::model::FinitePomdp;
use crate::quantize::{ContinuousObsModel, ObservationDensity, Quantizer};
use crate::window::WindowSpace;

/// Two states, two observations, two actions.
///
/// Action 0 is sticky, action 1 resets to uniform; observations are noisy;
/// cost is `1{x=1} + 0.1·1{u=1}`; discount 0.8.
pub fn f1() -> FinitePomdp {
    FinitePomdp::new(
        vec![
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        ],
        vec![vec![0.8, 0.2], vec![0.3, 0.7]],
        vec![vec![0.0, 0.1], vec![1.0, 1.1]],
        0.8,
    )
    .expect("f1 is valid")
}

/// Three states, three observations, two actions, built like [`f1`]:
/// a sticky action, a mixing action, a noisy diagonal channel and a cost
/// increasing in the state with a surcharge on the mixing action.
pub fn f2() -> FinitePomdp {
    FinitePomdp::new(
        vec![
            vec![
                vec![0.8, 0.15, 0.05],
                vec![0.1, 0.8, 0.1],
                vec![0.05, 0.15, 0.8],
            ],
            vec![
                vec![0.4, 0.3, 0.3],
                vec![0.3, 0.4, 0.3],
                vec![0.3, 0.3, 0.4],
            ],
        ],
        vec![
            vec![0.7, 0.2, 0.1],
            vec![0.2, 0.6, 0.2],
            vec![0.1, 0.2, 0.7],
        ],
        vec![vec![0.0, 0.2], vec![0.5, 0.7], vec![1.0, 1.2]],
        0.85,
    )
    .expect("f2 is valid")
}

/// Hidden dynamics and cost of [`f1`] observed through Gaussian noise
/// (means 0 and 1, standard deviation 0.5) truncated to `[-1.5, 2.5]`, with
/// an 8-bin uniform quantizer.
pub fn gaussian_demo() -> (ContinuousObsModel, Quantizer) {
    let base = f1();
    let model = ContinuousObsModel {
        n_states: base.n_states,
        n_actions: base.n_actions,
        transition: base.transition,
        cost: base.cost,
        discount: base.discount,
        density: ObservationDensity::TruncatedGaussian {
            means: vec![0.0, 1.0],
            std_dev: 0.5,
            low: -1.5,
            high: 2.5,
        },
    };
    let quantizer = Quantizer::uniform(&[(-1.5, 2.5)], &[8]).expect("valid quantizer");
    (model, quantizer)
}

/// Three non-indicator features on windows: a constant, a signed
/// indicator of the latest observation, and a mix of the oldest
/// observation with the latest action.
pub fn generic_window_features(space: WindowSpace) -> FeatureSet {
    let rows = (0..space.len())
        .map(|h| {
            let w = space.decode(h);
            let last = w.obs[space.memory];
            let first = w.obs[0];
            let act = w.acts.last().copied().unwrap_or(0);
            vec![
                1.0,
                if last == 0 { 1.0 } else { -0.5 },
                0.5 * (first == 0) as u8 as f64 - 0.4 * (act == 0) as u8 as f64 + 0.3 * (last == 1) as u8 as f64,
            ]
        })
        .collect();
    FeatureSet::from_rows(space, Domain::Window, rows).expect("bounded rows")
}

/// Three non-indicator features on (window, action) pairs.
pub fn generic_pair_features(space: WindowSpace) -> FeatureSet {
    let rows = (0..space.pairs())
        .map(|p| {
            let (h, u) = (p / space.n_actions, p % space.n_actions);
            let y = (space.latest_obs(h) == 1) as u8 as f64;
            let a = (u == 1) as u8 as f64;
            vec![1.0, a, 0.5 * y + 0.5 * a * (1.0 - y)]
        })
        .collect();
    FeatureSet::from_rows(space, Domain::WindowAction, rows).expect("bounded rows")
}
