use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream reserved for error augmentation draws.
pub const AUGMENT_STREAM: u64 = u64::MAX;

/// Independent ChaCha stream `stream` under key `seed`.
///
/// Replicate `l` of any seeded loop draws from stream `l`, so results do not
/// depend on which worker runs which replicate.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
