//! Hashing tokenizer: lowercased alphanumeric runs hashed into a fixed
//! vocabulary. Ids 0 and 1 are reserved (CLS slot, unknown).

pub const CLS_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const RESERVED_IDS: u32 = 2;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Id of a single (already normalized) word.
pub fn token_id(word: &str, vocab_size: usize) -> u32 {
    debug_assert!(vocab_size > RESERVED_IDS as usize);
    let buckets = vocab_size as u64 - u64::from(RESERVED_IDS);
    RESERVED_IDS + (fnv1a(word.as_bytes()) % buckets) as u32
}

pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Token ids for `text`, truncated to `max_len - 1` so the CLS slot fits.
pub fn tokenize(text: &str, vocab_size: usize, max_len: usize) -> Vec<u32> {
    words(text)
        .take(max_len.saturating_sub(1))
        .map(|w| token_id(&w, vocab_size))
        .collect()
}
