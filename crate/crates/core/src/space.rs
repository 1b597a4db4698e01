//! The truncated configuration space of the reduced density tensor.
//!
//! A configuration carries four bit registers: system ket occupations n̄,
//! system bra occupations n̄′ (N_s bits each), and one dissipaton bit per
//! (mode, σ) pair, split as m̄⁻ (ket side) and m̄⁺ (bra side), n_modes bits
//! each, N_E = 2·n_modes in total. The tensor is truncated at a maximum
//! total dissipaton number L (tier), and a fermionic superselection rule
//! keeps only globally even components: par(n̄) ⊕ par(n̄′) ⊕ par(m̄⁻) ⊕
//! par(m̄⁺) = 0. Odd components decouple from even ones under the dynamics
//! and vanish for any physical initial state, so the filter halves storage.
//!
//! Ranks are assigned block-wise: blocks are the combined dissipaton words
//! (m̄⁻ | m̄⁺ ≪ n_modes) in ascending numeric order, each block holding all
//! system pairs w = n̄ | n̄′ ≪ N_s in ascending order. With the parity filter
//! on, exactly one of {2q, 2q+1} survives in every block, so the local rank
//! is w ≫ 1 and the dropped bit is reconstructed from the block's parity.
//! Both rank directions are O(1) beyond one binary search over blocks.

use crate::{Error, Result};

/// Register widths shared by every configuration of a space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpaceDims {
    /// Number of system orbitals (N_s).
    pub n_s: usize,
    /// Number of dissipaton modes; N_E = 2·n_modes single-dissipaton states.
    pub n_modes: usize,
}

impl SpaceDims {
    pub fn n_e(&self) -> usize {
        2 * self.n_modes
    }

    fn validate(&self) -> Result<()> {
        if self.n_s == 0 || self.n_s > 12 {
            return Err(Error::Space(format!(
                "system orbital count {} outside supported range 1..=12",
                self.n_s
            )));
        }
        if 2 * self.n_s + self.n_e() > 62 {
            return Err(Error::Space(format!(
                "packed register width {} exceeds 62 bits",
                2 * self.n_s + self.n_e()
            )));
        }
        Ok(())
    }
}

/// One reduced-density-tensor index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Config {
    /// System ket occupations, bit ν = orbital ν.
    pub n_ket: u16,
    /// System bra occupations.
    pub n_bra: u16,
    /// Ket-side dissipaton occupations, bit j = mode j.
    pub m_minus: u32,
    /// Bra-side dissipaton occupations.
    pub m_plus: u32,
}

impl Config {
    pub const VACUUM: Config = Config { n_ket: 0, n_bra: 0, m_minus: 0, m_plus: 0 };

    /// Total dissipaton number M⁻ + M⁺ (the tier).
    pub fn tier(&self) -> u32 {
        self.m_minus.count_ones() + self.m_plus.count_ones()
    }

    /// Global occupation parity (0 = even, 1 = odd).
    pub fn parity(&self) -> u32 {
        (self.n_ket.count_ones()
            + self.n_bra.count_ones()
            + self.m_minus.count_ones()
            + self.m_plus.count_ones())
            & 1
    }

    /// Combined dissipaton word m̄⁻ | m̄⁺ ≪ n_modes.
    pub fn m_word(&self, dims: SpaceDims) -> u64 {
        self.m_minus as u64 | (self.m_plus as u64) << dims.n_modes
    }

    /// Packed register word: n̄, n̄′, m̄⁻, m̄⁺ from bit 0 upward.
    pub fn packed(&self, dims: SpaceDims) -> u64 {
        self.n_ket as u64
            | (self.n_bra as u64) << dims.n_s
            | self.m_word(dims) << (2 * dims.n_s)
    }

    pub fn unpack(word: u64, dims: SpaceDims) -> Config {
        let smask = (1u64 << dims.n_s) - 1;
        let mmask = (1u64 << dims.n_modes) - 1;
        Config {
            n_ket: (word & smask) as u16,
            n_bra: (word >> dims.n_s & smask) as u16,
            m_minus: (word >> (2 * dims.n_s) & mmask) as u32,
            m_plus: (word >> (2 * dims.n_s + dims.n_modes) & mmask) as u32,
        }
    }

    fn in_range(&self, dims: SpaceDims) -> bool {
        (self.n_ket as u64) < (1 << dims.n_s)
            && (self.n_bra as u64) < (1 << dims.n_s)
            && (self.m_minus as u64) < (1 << dims.n_modes)
            && (self.m_plus as u64) < (1 << dims.n_modes)
    }
}

/// Conjugation partner: registers swapped between ket and bra sides, with the
/// sign (−1)^{⌊M⁻/2⌋ + ⌊M⁺/2⌋} of the tensor's conjugation symmetry
/// ρ(s) = sign(s) · conj(ρ(partner(s))). Applying it twice is the identity
/// with net sign +1 (the sign is invariant under the swap).
pub fn conjugate_partner(s: Config) -> (Config, f64) {
    let partner = Config {
        n_ket: s.n_bra,
        n_bra: s.n_ket,
        m_minus: s.m_plus,
        m_plus: s.m_minus,
    };
    let k = s.m_minus.count_ones() / 2 + s.m_plus.count_ones() / 2;
    (partner, if k % 2 == 0 { 1.0 } else { -1.0 })
}

/// An enumerated, truncated, optionally parity-filtered configuration space.
#[derive(Debug, Clone)]
pub struct SpaceIndex {
    dims: SpaceDims,
    tier_cap: u32,
    parity_filter: bool,
    /// Combined dissipaton words with tier ≤ L, ascending.
    m_words: Vec<u64>,
    /// Entries per block: 4^{n_s}, halved under the parity filter.
    block_size: usize,
}

impl SpaceIndex {
    /// Enumerates the space for `n_s` orbitals, `n_e` single-dissipaton
    /// states (must be even: one ket-side and one bra-side bit per mode),
    /// tier cap `l`, with or without the global parity filter.
    pub fn enumerate(n_s: usize, n_e: usize, l: usize, parity_filter: bool) -> Result<SpaceIndex> {
        if n_e % 2 != 0 {
            return Err(Error::Space(format!(
                "single-dissipaton state count {n_e} must be even (one per mode and side)"
            )));
        }
        let dims = SpaceDims { n_s, n_modes: n_e / 2 };
        dims.validate()?;
        let tier_cap = l.min(n_e) as u32;
        // Blocks: all n_e-bit words of popcount ≤ L, ascending. Generated per
        // popcount class (Gosper's hack) and merged by value so the block
        // list stays sorted without materializing 2^{n_e} candidates.
        let mut m_words: Vec<u64> = Vec::new();
        for k in 0..=tier_cap {
            if k as usize > n_e {
                break;
            }
            if k == 0 {
                m_words.push(0);
                continue;
            }
            let mut w: u64 = (1u64 << k) - 1;
            let limit: u64 = 1u64 << n_e;
            while w < limit {
                m_words.push(w);
                // Next word with the same popcount.
                let c = w & w.wrapping_neg();
                let r = w + c;
                if r >= limit || c == 0 {
                    break;
                }
                w = ((w ^ r) >> (2 + c.trailing_zeros())) | r;
            }
        }
        m_words.sort_unstable();
        let full_block = 1u64 << (2 * n_s);
        let block_size = if parity_filter { full_block / 2 } else { full_block };
        let total = (m_words.len() as u64).checked_mul(block_size).ok_or_else(|| {
            Error::Space("configuration count overflows".into())
        })?;
        if total > u32::MAX as u64 {
            return Err(Error::Space(format!(
                "configuration count {total} exceeds the supported capacity {}",
                u32::MAX
            )));
        }
        Ok(SpaceIndex {
            dims,
            tier_cap,
            parity_filter,
            m_words,
            block_size: block_size as usize,
        })
    }

    pub fn dims(&self) -> SpaceDims {
        self.dims
    }

    pub fn tier_cap(&self) -> u32 {
        self.tier_cap
    }

    pub fn parity_filtered(&self) -> bool {
        self.parity_filter
    }

    /// Number of stored components.
    pub fn len(&self) -> usize {
        self.m_words.len() * self.block_size
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Component count the space would have without the parity filter.
    pub fn unfiltered_len(&self) -> usize {
        self.m_words.len() << (2 * self.dims.n_s)
    }

    /// True when the configuration is representable in this space: within
    /// register ranges, within the tier cap, and (if filtered) globally even.
    pub fn passes_filter(&self, s: Config) -> bool {
        s.in_range(self.dims)
            && s.tier() <= self.tier_cap
            && (!self.parity_filter || s.parity() == 0)
    }

    /// Rank of a configuration, or None if it is not stored.
    pub fn rank_of(&self, s: Config) -> Option<usize> {
        if !self.passes_filter(s) {
            return None;
        }
        let block = self.m_words.binary_search(&s.m_word(self.dims)).ok()?;
        let w = (s.n_ket as usize) | (s.n_bra as usize) << self.dims.n_s;
        let local = if self.parity_filter { w >> 1 } else { w };
        Some(block * self.block_size + local)
    }

    /// Configuration at a rank (inverse of `rank_of`).
    pub fn config_at(&self, rank: usize) -> Config {
        debug_assert!(rank < self.len());
        let block = rank / self.block_size;
        let local = rank % self.block_size;
        let m_word = self.m_words[block];
        let smask = (1usize << self.dims.n_s) - 1;
        let w = if self.parity_filter {
            let cand = local << 1;
            // Restore the dropped bit so the global parity is even.
            let m_par = (m_word.count_ones() & 1) as usize;
            let w_par = (cand.count_ones() & 1) as usize;
            cand | (m_par ^ w_par)
        } else {
            local
        };
        Config {
            n_ket: (w & smask) as u16,
            n_bra: (w >> self.dims.n_s & smask) as u16,
            m_minus: (m_word & ((1u64 << self.dims.n_modes) - 1)) as u32,
            m_plus: (m_word >> self.dims.n_modes) as u32,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Config> + '_ {
        (0..self.len()).map(move |r| self.config_at(r))
    }

    /// Ranks of the dissipaton-free block (m̄ = 0), which always sorts first.
    pub fn tier0_range(&self) -> std::ops::Range<usize> {
        debug_assert_eq!(self.m_words[0], 0);
        0..self.block_size
    }
}
