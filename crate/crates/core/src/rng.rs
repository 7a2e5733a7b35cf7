//! Counter-based random streams.
//!
//! Every environment value is a pure function of `(seed, stream tag, time,
//! site)`: the key is hashed with the SplitMix64 finalizer and the result
//! seeds a throwaway generator from which one variate is drawn. Nothing is
//! stored, so arbitrarily large space-time windows cost O(1) memory and the
//! same value comes back regardless of visiting order or thread count.
//!
//! Task seeds for Monte Carlo replicates are derived the same way from a
//! single master seed (`derive_seed`), so the stream assigned to replicate
//! `k` never depends on how replicates are scheduled.

use rand::RngCore;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Stream tag for untilted environment values.
pub const TAG_BASE: u64 = 0x01;
/// Stream tag for the on-path overrides of a tilted field.
pub const TAG_TILT: u64 = 0x02;

/// Coordinates must satisfy `|x_k| < COORD_LIMIT` to be packed injectively.
pub const COORD_LIMIT: i32 = 1 << 20;

#[inline(always)]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for task `index` of logical stream `stream` under `master`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let s = mix64(master ^ mix64(stream.wrapping_add(GOLDEN)));
    mix64(s.wrapping_add(index.wrapping_mul(GOLDEN)))
}

/// Key shared by all sites of one time slice.
#[inline]
pub fn time_key(seed: u64, tag: u64, time: u32) -> u64 {
    let s = mix64(seed ^ tag.wrapping_mul(GOLDEN));
    mix64(s.wrapping_add(u64::from(time).wrapping_mul(0xd6e8_feb8_6659_fd93)))
}

/// Injective packing of up to three coordinates in `(-2^20, 2^20)`.
#[inline(always)]
pub fn pack_coords(c: &[i32; 3]) -> u64 {
    let off = |v: i32| (v + COORD_LIMIT) as u64;
    off(c[0]) | (off(c[1]) << 21) | (off(c[2]) << 42)
}

#[inline(always)]
pub fn site_key(time_key: u64, c: &[i32; 3]) -> u64 {
    mix64(time_key ^ pack_coords(c))
}

/// Uniform double in [0, 1) from the top 53 bits.
#[inline(always)]
pub fn unit_f64(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// SplitMix64 generator seeded from a site key; used to feed samplers that
/// may need more than one word (e.g. the ziggurat's rare slow path).
#[derive(Clone, Debug)]
pub struct SiteRng {
    state: u64,
}

impl SiteRng {
    #[inline(always)]
    pub fn new(key: u64) -> Self {
        SiteRng { state: key }
    }
}

impl RngCore for SiteRng {
    #[inline(always)]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline(always)]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}
