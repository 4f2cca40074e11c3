//! Path hashing and the token tables that disambiguate hash collisions.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::namespace::Path;
use crate::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HashKey(pub u64);

impl HashKey {
    /// Index into a 2^16-entry register array.
    pub fn low16(self) -> u16 {
        self.0 as u16
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
pub struct Token(pub u8);

impl Token {
    pub const INVALID: Token = Token(0);
    /// Token of the root directory, which is cached permanently.
    pub const ROOT: Token = Token(1);

    pub fn is_valid(self) -> bool {
        self.0 != 0
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenError {
    #[error("all 255 tokens for key {key:#018x} are in use; cannot admit {path}")]
    TokenSpaceExhausted { key: u64, path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HashMode {
    #[default]
    Md5,
    /// Key equals the path depth, so every path of a given depth collides.
    WeakDepth,
}

fn md5_key(canonical: &str) -> HashKey {
    let digest = Md5::digest(canonical.as_bytes());
    HashKey(u64::from_be_bytes(digest[..8].try_into().unwrap()))
}

fn root_md5_key() -> HashKey {
    static ROOT: OnceLock<HashKey> = OnceLock::new();
    *ROOT.get_or_init(|| md5_key("/"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PathHasher {
    pub mode: HashMode,
}

impl PathHasher {
    pub fn new(mode: HashMode) -> Self {
        Self { mode }
    }

    pub fn hash_level(&self, p: &Path) -> HashKey {
        match self.mode {
            HashMode::WeakDepth => HashKey(p.depth() as u64),
            HashMode::Md5 if p.is_root() => root_md5_key(),
            HashMode::Md5 => md5_key(&p.to_string()),
        }
    }

    /// One key per level, root first.
    pub fn hash_read_request(&self, p: &Path) -> Vec<HashKey> {
        match self.mode {
            HashMode::WeakDepth => (0..=p.depth()).map(|d| HashKey(d as u64)).collect(),
            HashMode::Md5 => {
                let mut keys = Vec::with_capacity(p.depth() + 1);
                keys.push(root_md5_key());
                let mut prefix = String::new();
                for c in p.components() {
                    prefix.push('/');
                    prefix.push_str(c);
                    keys.push(md5_key(&prefix));
                }
                keys
            }
        }
    }

    pub fn hash_write_request(&self, p: &Path) -> HashKey {
        self.hash_level(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenEntry {
    pub token: Token,
    pub expires_at: Option<SimTime>,
}

/// Path to token map held by clients (with expiry) and by servers and the
/// controller (without).
#[derive(Debug, Clone, Default)]
pub struct PathTokenMap {
    entries: HashMap<Path, TokenEntry>,
    ttl: Option<SimTime>,
}

impl PathTokenMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_ttl(ttl: SimTime) -> Self {
        Self {
            entries: HashMap::new(),
            ttl: Some(ttl),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Records `token` for `p`; a zero token removes the entry.
    pub fn set(&mut self, p: Path, token: Token, now: SimTime) {
        if !token.is_valid() {
            self.entries.remove(&p);
            return;
        }
        let expires_at = self.ttl.map(|ttl| now.saturating_add(ttl));
        self.entries.insert(p, TokenEntry { token, expires_at });
    }

    pub fn remove(&mut self, p: &Path) {
        self.entries.remove(p);
    }

    pub fn get(&self, p: &Path) -> Option<Token> {
        self.entries.get(p).map(|e| e.token)
    }

    /// Stored unexpired token, else the invalid token; expired entries are
    /// dropped on the way.
    pub fn token_for(&mut self, p: &Path, now: SimTime) -> Token {
        match self.entries.get(p) {
            Some(TokenEntry {
                expires_at: Some(t),
                ..
            }) if *t <= now => {
                self.entries.remove(p);
                Token::INVALID
            }
            Some(e) => e.token,
            None => Token::INVALID,
        }
    }

    pub fn purge_expired(&mut self, now: SimTime) {
        self.entries
            .retain(|_, e| e.expires_at.is_none_or(|t| t > now));
    }
}

#[derive(Debug, Clone, Default)]
struct KeyTokens {
    issued: BTreeMap<Token, Path>,
    next_free: u16,
}

/// Controller-side token bookkeeping. Entries are never dropped, so an
/// evicted path gets its old token back when re-admitted.
#[derive(Debug, Clone, Default)]
pub struct TokenAllocator {
    by_path: HashMap<Path, (HashKey, Token)>,
    by_key: HashMap<HashKey, KeyTokens>,
}

impl TokenAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn token_of(&self, p: &Path) -> Option<Token> {
        self.by_path.get(p).map(|(_, t)| *t)
    }

    pub fn allocate(&mut self, p: &Path, key: HashKey) -> Result<Token, TokenError> {
        if let Some((k, t)) = self.by_path.get(p) {
            debug_assert_eq!(*k, key);
            return Ok(*t);
        }
        let entry = self.by_key.entry(key).or_insert(KeyTokens {
            issued: BTreeMap::new(),
            next_free: 1,
        });
        if entry.next_free > u8::MAX as u16 {
            return Err(TokenError::TokenSpaceExhausted {
                key: key.0,
                path: p.to_string(),
            });
        }
        let token = Token(entry.next_free as u8);
        entry.next_free += 1;
        entry.issued.insert(token, p.clone());
        self.by_path.insert(p.clone(), (key, token));
        Ok(token)
    }

    /// Tokens are distinct per key and below the next-free counter.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (key, kt) in &self.by_key {
            for (tok, path) in &kt.issued {
                if tok.0 as u16 >= kt.next_free || !tok.is_valid() {
                    return Err(format!("token {} for {path} out of range", tok.0));
                }
                if self.by_path.get(path) != Some(&(*key, *tok)) {
                    return Err(format!("path map disagrees for {path}"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Path {
        Path::parse(s).unwrap()
    }

    #[test]
    fn md5_prefix_matches_known_digest() {
        // md5("/") = 6666cd76f96956469e7be39d750cc7d9, independently known.
        assert_eq!(
            PathHasher::default().hash_level(&p("/")),
            HashKey(0x6666cd76f9695646)
        );
        let h = PathHasher::default();
        assert_eq!(h.hash_level(&p("/a/b")), md5_key("/a/b"));
        assert_ne!(h.hash_level(&p("/a")), h.hash_level(&p("/b")));
    }

    #[test]
    fn read_and_write_keys_agree() {
        for mode in [HashMode::Md5, HashMode::WeakDepth] {
            let h = PathHasher::new(mode);
            let x = p("/a/b/c.txt");
            let keys = h.hash_read_request(&x);
            assert_eq!(keys.len(), 4);
            for (lvl, k) in x.levels().iter().zip(&keys) {
                assert_eq!(h.hash_level(lvl), *k);
            }
            assert_eq!(*keys.last().unwrap(), h.hash_write_request(&x));
            assert_eq!(h.hash_read_request(&p("/")).len(), 1);
        }
    }

    #[test]
    fn weak_mode_collides_by_depth() {
        let h = PathHasher::new(HashMode::WeakDepth);
        assert_eq!(h.hash_level(&p("/a")), h.hash_level(&p("/b")));
        assert_eq!(h.hash_level(&p("/a/x")), HashKey(2));
    }

    #[test]
    fn allocation_sequence() {
        let mut a = TokenAllocator::new();
        let k = HashKey(9);
        assert_eq!(a.allocate(&p("/a"), k), Ok(Token(1)));
        assert_eq!(a.allocate(&p("/b"), k), Ok(Token(2)));
        assert_eq!(a.allocate(&p("/a"), k), Ok(Token(1)));
        assert_eq!(a.allocate(&p("/c"), HashKey(10)), Ok(Token(1)));
        a.check_invariants().unwrap();
    }

    #[test]
    fn token_space_exhaustion() {
        let mut a = TokenAllocator::new();
        let k = HashKey(1);
        for i in 0..255 {
            assert_eq!(
                a.allocate(&p(&format!("/f{i}")), k).unwrap(),
                Token(i as u8 + 1)
            );
        }
        assert!(matches!(
            a.allocate(&p("/one-too-many"), k),
            Err(TokenError::TokenSpaceExhausted { .. })
        ));
        a.check_invariants().unwrap();
    }

    #[test]
    fn client_tokens_expire() {
        let mut m = PathTokenMap::with_ttl(100);
        assert_eq!(m.token_for(&p("/a"), 0), Token::INVALID);
        m.set(p("/a"), Token(3), 10);
        assert_eq!(m.token_for(&p("/a"), 109), Token(3));
        assert_eq!(m.token_for(&p("/a"), 110), Token::INVALID);
        assert!(m.is_empty());
        m.set(p("/b"), Token(1), 0);
        m.set(p("/c"), Token(1), 50);
        m.purge_expired(120);
        assert_eq!(m.len(), 1);
        m.set(p("/c"), Token::INVALID, 130);
        assert!(m.is_empty());
    }
}
