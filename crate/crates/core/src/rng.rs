use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Offset separating validation scenario seeds from instance seeds.
pub const VALIDATION_OFFSET: u64 = 1_000_000;
/// Offset separating planning (training) scenario seeds from instance seeds.
pub const TRAINING_OFFSET: u64 = 2_000_000;

/// Independent reproducible stream `stream` of the generator seeded by `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
