//! Seeded random streams.
//!
//! One run seed fans out into independent ChaCha streams, one per consumer,
//! so that e.g. drawing more calibration samples never shifts the training
//! shuffle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Train,
    Calibration,
    Synthetic,
    Bench,
    Finetune,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Train => 2,
            Stream::Calibration => 3,
            Stream::Synthetic => 4,
            Stream::Bench => 5,
            Stream::Finetune => 6,
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
