use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags so that independent stages never share a random sequence.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub(crate) enum Purpose {
    KnnInit = 1,
    LandmarkWalks = 2,
    InfluenceWalks = 3,
    RepresentationWalks = 4,
    LayoutInit = 5,
    LayoutOptimize = 6,
    Jitter = 7,
    Fixture = 8,
    Objective = 9,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent deterministic stream for `(seed, purpose, lane)`.
pub(crate) fn stream(seed: u64, purpose: Purpose, lane: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(purpose as u64)));
    rng.set_stream(lane);
    rng
}
