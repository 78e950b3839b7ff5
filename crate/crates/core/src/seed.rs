//! Counter-based seed derivation. Every random stream is a pure function of
//! `(master, tag, round, client)`, so draws do not depend on thread
//! scheduling or on how many other streams were consumed first.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn derive(&self, tag: &str, round: u64, client: u64) -> u64 {
        let mut h = splitmix(self.master);
        h = splitmix(h ^ fnv1a(tag));
        h = splitmix(h ^ round);
        splitmix(h ^ client)
    }

    pub fn stream(&self, tag: &str, round: u64, client: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive(tag, round, client))
    }
}
