//! Ranking and property-agreement losses, negative samplers and the
//! training loop.

mod loss;
mod sampler;
mod train;

pub use loss::{
    bpr_loss, combined_loss, kl_divergence, phi_distribution, proploss_ui, proploss_uu, sim, tape_phi_distribution,
    tape_sim, triplet_loss, EntityCache, LossConfig, PropLossKind, Similarity, Triplet,
};
pub use sampler::{pool_probabilities, sample_prop, sample_uniform, PropDraw, SamplerConfig, SamplerKind};
pub use train::{
    fit, train, validation_map, write_log_line, EarlyStopping, EpochLog, OptimConfig, StopDecision, TrainConfig,
    TrainOutcome,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INIT_STREAM: u64 = 0;
pub const TRAIN_STREAM: u64 = 1;

/// Independent named random stream derived from a run seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
