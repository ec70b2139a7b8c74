//! Permissioned hash-chained ledger.
//!
//! Writes are gated by a trust list of device ids; there is no proof of work
//! or voting. Each block stores digests of the round's accepted updates and
//! is bound to its predecessor through SHA-256.
//!
//! Block hash input, all integers little-endian:
//!
//! ```text
//! index u64 | record count u32 |
//!   per record: client_id u64 | round u64 | weight digest [32] |
//!               accuracy f64 | factor flag u8 (0 or 1) | factor f64 if flag = 1
//! prev_hash [32]
//! ```
//!
//! A chain file is `"FGCH" | version u8 = 1` followed, for every block, by
//! the bytes above and then the block's 32-byte hash.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub type Hash = [u8; 32];

pub const CHAIN_MAGIC: &[u8; 4] = b"FGCH";
pub const CHAIN_VERSION: u8 = 1;
const RECORD_MIN_BYTES: usize = 8 + 8 + 32 + 8 + 1;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("chain is invalid at block {0}")]
    InvalidChain(usize),
    #[error("bad chain file magic")]
    BadMagic,
    #[error("unsupported chain file version {0}")]
    BadVersion(u8),
    #[error("chain file truncated at byte {0}")]
    Truncated(usize),
    #[error("bad factor flag {flag} at byte {offset}")]
    BadFlag { flag: u8, offset: usize },
    #[error("chain file io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Authorization {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeviceRegistry {
    trusted: BTreeSet<u64>,
}

impl DeviceRegistry {
    pub fn new(ids: impl IntoIterator<Item = u64>) -> Self {
        Self {
            trusted: ids.into_iter().collect(),
        }
    }

    pub fn trusted(&self) -> &BTreeSet<u64> {
        &self.trusted
    }

    pub fn authorize(&self, client_id: u64) -> Authorization {
        if self.trusted.contains(&client_id) {
            Authorization::Accept
        } else {
            Authorization::Reject
        }
    }
}

pub fn authorize(registry: &DeviceRegistry, client_id: u64) -> Authorization {
    registry.authorize(client_id)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub client_id: u64,
    pub round: u64,
    pub weight_digest: Hash,
    pub reported_accuracy: f64,
    /// Set once the round has been fused.
    pub factor: Option<f64>,
}

impl UpdateRecord {
    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.client_id.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.weight_digest);
        out.extend_from_slice(&self.reported_accuracy.to_le_bytes());
        match self.factor {
            Some(f) => {
                out.push(1);
                out.extend_from_slice(&f.to_le_bytes());
            }
            None => out.push(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub index: u64,
    pub records: Vec<UpdateRecord>,
    pub prev_hash: Hash,
    pub hash: Hash,
}

impl Block {
    fn sealed(index: u64, records: Vec<UpdateRecord>, prev_hash: Hash) -> Self {
        let mut block = Self {
            index,
            records,
            prev_hash,
            hash: [0; 32],
        };
        block.hash = block.compute_hash();
        block
    }

    /// Bytes covered by the block hash.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.records.len() * (RECORD_MIN_BYTES + 8) + 32);
        out.extend_from_slice(&self.index.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            r.encode_into(&mut out);
        }
        out.extend_from_slice(&self.prev_hash);
        out
    }

    pub fn compute_hash(&self) -> Hash {
        Sha256::digest(self.canonical_bytes()).into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    blocks: Vec<Block>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainStatus {
    Valid,
    /// Index of the first block whose hash, link or position is wrong.
    Invalid(usize),
}

impl Chain {
    /// Wraps blocks without checking them; see [`verify_chain`].
    pub fn from_blocks(blocks: Vec<Block>) -> Self {
        Self { blocks }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut Vec<Block> {
        &mut self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> Option<&Block> {
        self.blocks.last()
    }
}

/// A chain holding only the genesis block: index 0, no records, zero
/// predecessor hash.
pub fn new_chain() -> Chain {
    Chain {
        blocks: vec![Block::sealed(0, Vec::new(), [0; 32])],
    }
}

pub fn verify_chain(chain: &Chain) -> ChainStatus {
    if chain.blocks.is_empty() {
        return ChainStatus::Invalid(0);
    }
    for (i, block) in chain.blocks.iter().enumerate() {
        let linked = if i == 0 {
            block.prev_hash == [0; 32] && block.records.is_empty()
        } else {
            block.prev_hash == chain.blocks[i - 1].hash
        };
        if block.index != i as u64 || !linked || block.compute_hash() != block.hash {
            return ChainStatus::Invalid(i);
        }
    }
    ChainStatus::Valid
}

fn ensure_valid(chain: &Chain) -> Result<(), LedgerError> {
    match verify_chain(chain) {
        ChainStatus::Valid => Ok(()),
        ChainStatus::Invalid(i) => Err(LedgerError::InvalidChain(i)),
    }
}

/// The chain extended by one block holding `records`. The input is left
/// untouched.
pub fn append_block(chain: &Chain, records: Vec<UpdateRecord>) -> Result<Chain, LedgerError> {
    ensure_valid(chain)?;
    let tip = chain.tip().expect("valid chains are non-empty");
    let mut next = chain.clone();
    next.blocks
        .push(Block::sealed(tip.index + 1, records, tip.hash));
    Ok(next)
}

pub fn replicate(chain: &Chain) -> Chain {
    chain.clone()
}

/// Longest valid chain wins; on equal length the local copy is kept.
pub fn reconcile(local: &Chain, remote: &Chain) -> Result<Chain, LedgerError> {
    ensure_valid(local)?;
    ensure_valid(remote)?;
    Ok(if remote.len() > local.len() {
        remote.clone()
    } else {
        local.clone()
    })
}

pub fn encode_chain(chain: &Chain) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHAIN_MAGIC);
    out.push(CHAIN_VERSION);
    for block in &chain.blocks {
        out.extend_from_slice(&block.canonical_bytes());
        out.extend_from_slice(&block.hash);
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], LedgerError> {
        if self.bytes.len() - self.pos < n {
            return Err(LedgerError::Truncated(self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], LedgerError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u64(&mut self) -> Result<u64, LedgerError> {
        self.array().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64, LedgerError> {
        self.array().map(f64::from_le_bytes)
    }
}

/// Parses a chain file. Structure only; hashes and links are checked by
/// [`verify_chain`].
pub fn decode_chain(bytes: &[u8]) -> Result<Chain, LedgerError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4).map_err(|_| LedgerError::BadMagic)? != CHAIN_MAGIC {
        return Err(LedgerError::BadMagic);
    }
    let version = c.take(1)?[0];
    if version != CHAIN_VERSION {
        return Err(LedgerError::BadVersion(version));
    }
    let mut blocks = Vec::new();
    while c.pos < bytes.len() {
        let index = c.u64()?;
        let count = u32::from_le_bytes(c.array()?) as usize;
        if count > (bytes.len() - c.pos) / RECORD_MIN_BYTES {
            return Err(LedgerError::Truncated(c.pos));
        }
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let client_id = c.u64()?;
            let round = c.u64()?;
            let weight_digest = c.array()?;
            let reported_accuracy = c.f64()?;
            let offset = c.pos;
            let factor = match c.take(1)?[0] {
                0 => None,
                1 => Some(c.f64()?),
                flag => return Err(LedgerError::BadFlag { flag, offset }),
            };
            records.push(UpdateRecord {
                client_id,
                round,
                weight_digest,
                reported_accuracy,
                factor,
            });
        }
        let prev_hash = c.array()?;
        let hash = c.array()?;
        blocks.push(Block {
            index,
            records,
            prev_hash,
            hash,
        });
    }
    Ok(Chain { blocks })
}

pub fn write_chain_file(path: impl AsRef<Path>, chain: &Chain) -> Result<(), LedgerError> {
    fs::write(path, encode_chain(chain))?;
    Ok(())
}

pub fn read_chain_file(path: impl AsRef<Path>) -> Result<Chain, LedgerError> {
    decode_chain(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(client_id: u64, round: u64, fill: u8, acc: f64, factor: Option<f64>) -> UpdateRecord {
        UpdateRecord {
            client_id,
            round,
            weight_digest: [fill; 32],
            reported_accuracy: acc,
            factor,
        }
    }

    fn chain_of(n_blocks: usize) -> Chain {
        let mut chain = new_chain();
        for i in 1..n_blocks {
            let recs = (0..3)
                .map(|k| {
                    record(
                        k,
                        i as u64,
                        (i * 7 + k as usize) as u8,
                        0.8,
                        Some(1.0 / 3.0),
                    )
                })
                .collect();
            chain = append_block(&chain, recs).unwrap();
        }
        chain
    }

    #[test]
    fn genesis_matches_external_digest() {
        // sha256 of 44 zero bytes: index, count, prev_hash
        let c = new_chain();
        assert_eq!(c.len(), 1);
        let g = &c.blocks()[0];
        assert_eq!(g.index, 0);
        assert_eq!(g.prev_hash, [0; 32]);
        assert_eq!(
            hex::encode(g.hash),
            "85759b3811ff7dc47b03792ac85317be51431a3f9e01dcafce317ed736a391b0"
        );
        assert_eq!(new_chain(), c);
    }

    #[test]
    fn fixed_block_matches_external_digest() {
        let c = append_block(
            &new_chain(),
            vec![
                record(3, 1, 0xab, 0.9, Some(0.5)),
                record(5, 1, 0x01, 0.75, None),
            ],
        )
        .unwrap();
        assert_eq!(
            hex::encode(c.blocks()[1].hash),
            "65107a300359f2b05b1dea6290b020ac85288ba3405245057b14258b6c664c10"
        );
    }

    #[test]
    fn authorization() {
        let reg = DeviceRegistry::new([1, 2, 3]);
        assert_eq!(authorize(&reg, 2), Authorization::Accept);
        assert_eq!(authorize(&reg, 9), Authorization::Reject);
        assert_eq!(
            authorize(&DeviceRegistry::default(), 0),
            Authorization::Reject
        );
    }

    #[test]
    fn append_links_to_tip() {
        let g = new_chain();
        let c = append_block(&g, vec![]).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(c.len(), 2);
        assert_eq!(c.blocks()[1].prev_hash, g.blocks()[0].hash);
        assert_eq!(c.blocks()[1].index, 1);
        assert_eq!(verify_chain(&c), ChainStatus::Valid);

        let recs = vec![record(1, 1, 9, 0.5, None)];
        let a = append_block(&replicate(&c), recs.clone()).unwrap();
        let b = append_block(&replicate(&c), recs).unwrap();
        assert_eq!(a.tip().unwrap().hash, b.tip().unwrap().hash);
    }

    #[test]
    fn refuses_to_extend_invalid_chain() {
        let mut c = chain_of(3);
        c.blocks_mut()[1].records[0].round = 99;
        assert!(matches!(
            append_block(&c, vec![]),
            Err(LedgerError::InvalidChain(1))
        ));
    }

    #[test]
    fn detects_record_mutation() {
        let mut c = chain_of(5);
        assert_eq!(verify_chain(&c), ChainStatus::Valid);
        c.blocks_mut()[2].records[1].weight_digest[4] ^= 1;
        assert_eq!(verify_chain(&c), ChainStatus::Invalid(2));
    }

    #[test]
    fn self_consistent_forgery_breaks_the_next_link() {
        let mut c = chain_of(5);
        let prev = c.blocks()[1].hash;
        let forged = Block::sealed(2, vec![record(66, 2, 0xee, 1.0, Some(1.0))], prev);
        c.blocks_mut()[2] = forged;
        assert_eq!(verify_chain(&c), ChainStatus::Invalid(3));
    }

    #[test]
    fn detects_misplaced_or_missing_blocks() {
        assert_eq!(
            verify_chain(&Chain::from_blocks(vec![])),
            ChainStatus::Invalid(0)
        );
        let mut c = chain_of(4);
        c.blocks_mut().remove(1);
        assert_eq!(verify_chain(&c), ChainStatus::Invalid(1));
        let fake_genesis = Block::sealed(0, vec![record(1, 0, 0, 0.0, None)], [0; 32]);
        assert_eq!(
            verify_chain(&Chain::from_blocks(vec![fake_genesis])),
            ChainStatus::Invalid(0)
        );
    }

    #[test]
    fn reconcile_prefers_longer_then_local() {
        let short = chain_of(3);
        let long = chain_of(5);
        assert_eq!(reconcile(&short, &long).unwrap(), long);
        let mut other = chain_of(3);
        other = append_block(&other, vec![record(4, 3, 1, 0.1, None)]).unwrap();
        let local = chain_of(4);
        assert_eq!(reconcile(&local, &other).unwrap(), local);
        let mut bad = chain_of(5);
        bad.blocks_mut()[3].index = 7;
        assert!(matches!(
            reconcile(&short, &bad),
            Err(LedgerError::InvalidChain(3))
        ));
    }

    #[test]
    fn file_layout() {
        let bytes = encode_chain(&new_chain());
        assert_eq!(&bytes[..5], b"FGCH\x01");
        assert_eq!(bytes.len(), 5 + 44 + 32);
        assert!(matches!(decode_chain(b""), Err(LedgerError::BadMagic)));
        assert!(matches!(
            decode_chain(b"FGCH\x07"),
            Err(LedgerError::BadVersion(7))
        ));
        assert!(matches!(
            decode_chain(&bytes[..bytes.len() - 1]),
            Err(LedgerError::Truncated(_))
        ));
        // header only decodes to an empty (and therefore invalid) chain
        assert_eq!(
            verify_chain(&decode_chain(b"FGCH\x01").unwrap()),
            ChainStatus::Invalid(0)
        );
    }

    #[test]
    fn bad_flag_is_a_format_error() {
        let c = chain_of(2);
        let mut bytes = encode_chain(&c);
        // first record's flag byte in block 1
        let flag_at = 5 + 44 + 32 + 12 + 56;
        assert_eq!(bytes[flag_at], 1);
        bytes[flag_at] = 2;
        assert!(matches!(
            decode_chain(&bytes),
            Err(LedgerError::BadFlag { flag: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn file_round_trip(n in 1usize..6) {
            let c = chain_of(n);
            prop_assert_eq!(decode_chain(&encode_chain(&c)).unwrap(), c);
        }

        #[test]
        fn appending_to_valid_stays_valid(n in 1usize..6, k in 0usize..5, fill in any::<u8>()) {
            let c = chain_of(n);
            let recs = (0..k as u64).map(|i| record(i, n as u64, fill, 0.5, None)).collect();
            prop_assert_eq!(verify_chain(&append_block(&c, recs).unwrap()), ChainStatus::Valid);
        }

        #[test]
        fn different_records_give_different_hashes(a in any::<u64>(), b in any::<u64>()) {
            prop_assume!(a != b);
            let base = new_chain();
            let ha = append_block(&base, vec![record(a, 1, 0, 0.5, None)]).unwrap();
            let hb = append_block(&base, vec![record(b, 1, 0, 0.5, None)]).unwrap();
            prop_assert_ne!(ha.tip().unwrap().hash, hb.tip().unwrap().hash);
        }

        #[test]
        fn any_byte_flip_after_header_is_detected(pos in any::<usize>(), flip in 1u8..=255) {
            let c = chain_of(4);
            let mut bytes = encode_chain(&c);
            let pos = 5 + pos % (bytes.len() - 5);
            bytes[pos] ^= flip;
            let detected = match decode_chain(&bytes) {
                Err(_) => true,
                Ok(decoded) => verify_chain(&decoded) != ChainStatus::Valid,
            };
            prop_assert!(detected);
        }
    }
}
