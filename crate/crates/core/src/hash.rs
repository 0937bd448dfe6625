//! Stable hashes shared by ids, feature hashing and checkpoints.

use std::fs::File;
use std::io::{self, Read};
use std::path::Path;

use sha2::{Digest, Sha256};

pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[inline]
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_extend(FNV_OFFSET, bytes)
}

/// Continues an FNV-1a state, so `extend(fnv(a), b) == fnv(a ++ b)`.
#[inline]
pub fn fnv1a64_extend(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

#[inline]
pub fn fnv1a64_byte(h: u64, b: u8) -> u64 {
    (h ^ b as u64).wrapping_mul(FNV_PRIME)
}

/// `x % d` by multiplication with a precomputed inverse (Lemire, Kaser and
/// Kurz); exact for every 64-bit `x`.
#[derive(Debug, Clone, Copy)]
pub struct FastMod {
    m: u128,
    d: u64,
}

impl FastMod {
    pub fn new(d: u64) -> Self {
        assert!(d > 0, "modulus must be positive");
        Self { m: (u128::MAX / d as u128).wrapping_add(1), d }
    }

    #[inline]
    pub fn rem(&self, x: u64) -> u64 {
        let low = self.m.wrapping_mul(x as u128);
        let bottom = ((low as u64) as u128 * self.d as u128) >> 64;
        let top = (low >> 64) * self.d as u128;
        ((bottom + top) >> 64) as u64
    }
}

/// splitmix64 finalizer.
#[inline]
pub fn mix64(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// 64-bit hex id over `parts`, separated by a unit-separator byte.
pub fn short_id(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([0x1f]);
        }
        hasher.update(p);
    }
    hex(&hasher.finalize()[..8])
}

pub fn file_sha256(path: &Path) -> io::Result<String> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn fnv_extend_is_concatenation() {
        assert_eq!(fnv1a64_extend(fnv1a64(b"foo"), b"bar"), fnv1a64(b"foobar"));
    }

    proptest::proptest! {
        #[test]
        fn fast_mod_matches_remainder(x: u64, d in 1u64..) {
            proptest::prop_assert_eq!(FastMod::new(d).rem(x), x % d);
        }
    }

    #[test]
    fn fast_mod_edges() {
        for d in [1, 2, 3, 7, 2_000_000, u32::MAX as u64, u64::MAX - 1, u64::MAX] {
            let m = FastMod::new(d);
            for x in [0, 1, d - 1, d, d.wrapping_add(1), u64::MAX, u64::MAX - 1, 1 << 63] {
                assert_eq!(m.rem(x), x % d, "{x} % {d}");
            }
        }
    }

    #[test]
    fn short_id_separates_parts() {
        assert_ne!(short_id(&[b"ab", b"c"]), short_id(&[b"a", b"bc"]));
        assert_eq!(short_id(&[b"x"]).len(), 16);
    }
}
