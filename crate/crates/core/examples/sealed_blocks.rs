//! Sealing 4 KiB blocks with a freshness counter, and what replay and
//! tampering look like.
//!
//! cargo run --example sealed_blocks

use fidstore::atrest::{BlockId, BlockSealer, SealedBlock, BLOCK_SIZE};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() {
    let mut sealer = BlockSealer::new(&[7; 32], 1, ChaCha20Rng::seed_from_u64(1));
    let id = BlockId::new(3, 42);
    let mut page = Box::new([0u8; BLOCK_SIZE]);
    page[..5].copy_from_slice(b"hello");
    let v1 = sealer.seal_block(id, &page);
    page[..5].copy_from_slice(b"world");
    let v2 = sealer.seal_block(id, &page);
    let encoded = v2.encode();
    println!(
        "sealed {} plaintext bytes into {}",
        BLOCK_SIZE,
        encoded.len()
    );

    let opened = sealer.open_block(id, &v2).expect("current version opens");
    println!(
        "current version opens: {:?}",
        std::str::from_utf8(&opened[..5]).unwrap()
    );
    println!("replayed v1: {:?}", sealer.open_block(id, &v1).unwrap_err());

    let mut bytes = encoded;
    bytes[100] ^= 1;
    let tampered = SealedBlock::decode(&bytes).expect("length unchanged");
    println!(
        "one flipped bit: {:?}",
        sealer.open_block(id, &tampered).unwrap_err()
    );

    // The block id is bound in too: a block moved to another slot fails.
    println!(
        "moved block: {:?}",
        sealer.open_block(BlockId::new(3, 43), &v2).unwrap_err()
    );
}
