use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent deterministic stream `stream` of the master seed.
///
/// Every consumer (phantom i, noise run k, weight init, patch sampler) gets
/// its own ChaCha stream of the same key, so results never depend on the
/// order in which consumers draw numbers.
pub(crate) fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
