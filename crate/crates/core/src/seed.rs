//! Named random substreams derived from one root seed.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the substream `name` of `root`, e.g. `"data"`, `"init"`,
/// `"batch"`, `"selection"`.
pub fn substream(root: u64, name: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(root ^ splitmix64(h))
}

/// Seed for item `index` (a task, a stage) within a substream.
pub fn indexed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substreams_are_distinct_and_stable() {
        assert_eq!(substream(7, "data"), substream(7, "data"));
        assert_ne!(substream(7, "data"), substream(7, "init"));
        assert_ne!(substream(7, "data"), substream(8, "data"));
        assert_ne!(indexed(1, 0), indexed(1, 1));
    }
}
