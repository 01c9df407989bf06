use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives a stream seed from a base seed and a path of integers
/// (epoch, user id, ...). SplitMix64 finalizer per component.
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = splitmix(base ^ 0x9E37_79B9_7F4A_7C15);
    for &p in parts {
        h = splitmix(h ^ splitmix(p.wrapping_add(0xD1B5_4A32_D192_ED03)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(base, parts))
}
