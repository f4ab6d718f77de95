//! Named random streams derived from one seed, so that adding a consumer of
//! randomness in one place never shifts the numbers drawn elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    TeacherInit = 1,
    StudentInit = 2,
    Shuffle = 3,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
