//! Shared fixtures for the benchmarks: a desk-scale scenario, a freshly
//! initialized model and a fixed batch of channels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use starsec::channel::{sample_realization, EffectiveChannels, ScenarioConfig};
use starsec::graphnn::{FeatureScaling, GnnModel, ModelConfig};
use starsec::secrecy::Strategy;

pub struct Fixture {
    pub scenario: ScenarioConfig,
    pub model: GnnModel,
    pub channels: Vec<EffectiveChannels>,
}

/// Desk scenario with `count` channel draws and an AN model of the default width.
pub fn desk_fixture(count: usize) -> Fixture {
    let scenario = ScenarioConfig::desk();
    let scaling = FeatureScaling::for_scenario(&scenario).expect("desk scaling");
    let cfg = ModelConfig::new(scenario.n, scenario.l, Strategy::An, scaling);
    let model = GnnModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(1)).expect("model");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let channels = (0..count)
        .map(|_| {
            sample_realization(&scenario, &mut rng)
                .and_then(|c| c.effective())
                .expect("channel draw")
        })
        .collect();
    Fixture {
        scenario,
        model,
        channels,
    }
}
