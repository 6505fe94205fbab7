//! Core coordinates and the 32-bit global address encoding.
//!
//! A global address packs the target core's absolute chip coordinate and a
//! byte offset into that core's local memory:
//!
//! ```text
//!  31      26 25      20 19                    0
//! +----------+----------+-----------------------+
//! |   row    |   col    |        offset         |
//! +----------+----------+-----------------------+
//! ```
//!
//! A zero core-id field (`row == col == 0`) is the local-alias window: it
//! names the issuing core's own memory, so a symmetric offset is also a valid
//! local address.

use std::fmt;

use thiserror::Error;

/// Width of each coordinate field.
pub const COORD_BITS: u32 = 6;
/// Width of the local offset field.
pub const OFFSET_BITS: u32 = 20;
/// Exclusive upper bound for a row or column.
pub const COORD_LIMIT: u32 = 1 << COORD_BITS;
/// Exclusive upper bound for a local offset.
pub const OFFSET_LIMIT: u32 = 1 << OFFSET_BITS;

const OFFSET_MASK: u32 = OFFSET_LIMIT - 1;
const COORD_MASK: u32 = COORD_LIMIT - 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddressError {
    #[error("coordinate ({row},{col}) does not fit the 6-bit address fields")]
    CoordOutOfRange { row: u32, col: u32 },
    #[error("offset {0:#x} does not fit the 20-bit offset field")]
    OffsetOverflow(u32),
    #[error("address {0} is not accessible")]
    Inaccessible(GlobalAddress),
    #[error("access of {len} bytes at {addr} crosses the end of core memory")]
    OutOfBounds { addr: GlobalAddress, len: usize },
    #[error("address {addr} is not aligned to {align} bytes")]
    Misaligned { addr: GlobalAddress, align: usize },
}

/// Absolute chip coordinate of a core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Coord {
    pub row: u32,
    pub col: u32,
}

impl Coord {
    pub const fn new(row: u32, col: u32) -> Self {
        Coord { row, col }
    }

    /// True when both fields fit the address encoding.
    pub fn is_addressable(self) -> bool {
        self.row < COORD_LIMIT && self.col < COORD_LIMIT
    }

    pub fn is_local_alias(self) -> bool {
        self.row == 0 && self.col == 0
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// Offset of a symmetric object. The same value names the corresponding
/// object on every PE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SymAddr(pub u32);

impl SymAddr {
    pub fn offset(self) -> u32 {
        self.0
    }

    /// The address `bytes` further on.
    #[allow(clippy::should_implement_trait)]
    pub fn add(self, bytes: usize) -> SymAddr {
        SymAddr(self.0 + bytes as u32)
    }
}

impl fmt::Display for SymAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sym:{:#x}", self.0)
    }
}

/// A 32-bit PGAS address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GlobalAddress(pub u32);

impl GlobalAddress {
    pub fn value(self) -> u32 {
        self.0
    }

    /// The raw (row, col) field pair, without local-alias resolution.
    pub fn coord_field(self) -> Coord {
        Coord::new(self.0 >> (COORD_BITS + OFFSET_BITS), (self.0 >> OFFSET_BITS) & COORD_MASK)
    }

    pub fn offset(self) -> u32 {
        self.0 & OFFSET_MASK
    }

    pub fn is_local_alias(self) -> bool {
        self.coord_field().is_local_alias()
    }

    /// Same core, offset moved by `delta` bytes. Fails if the offset field overflows.
    #[allow(clippy::should_implement_trait)]
    pub fn add(self, delta: u32) -> Result<GlobalAddress, AddressError> {
        let off = self.offset().saturating_add(delta);
        if off >= OFFSET_LIMIT {
            return Err(AddressError::OffsetOverflow(off));
        }
        Ok(GlobalAddress((self.0 & !OFFSET_MASK) | off))
    }
}

impl fmt::Display for GlobalAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#010x}", self.0)
    }
}

/// Packs a coordinate and a local offset into a global address.
pub fn encode_address(coord: Coord, offset: u32) -> Result<GlobalAddress, AddressError> {
    if !coord.is_addressable() {
        return Err(AddressError::CoordOutOfRange { row: coord.row, col: coord.col });
    }
    if offset >= OFFSET_LIMIT {
        return Err(AddressError::OffsetOverflow(offset));
    }
    Ok(GlobalAddress(
        (coord.row << (COORD_BITS + OFFSET_BITS)) | (coord.col << OFFSET_BITS) | offset,
    ))
}

/// Splits an address into its fields, resolving the local-alias window to
/// `issuer`. Liveness and bounds checks belong to the machine.
pub fn split_address(ga: GlobalAddress, issuer: Coord) -> (Coord, u32) {
    let field = ga.coord_field();
    let coord = if field.is_local_alias() { issuer } else { field };
    (coord, ga.offset())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_examples() {
        assert_eq!(encode_address(Coord::new(32, 8), 0).unwrap().0, 0x8080_0000);
        assert_eq!(encode_address(Coord::new(2, 3), 0x100).unwrap().0, 0x0830_0100);
        let alias = encode_address(Coord::new(0, 0), 0x100).unwrap();
        assert_eq!(alias.0, 0x0000_0100);
        assert!(alias.is_local_alias());
    }

    #[test]
    fn encode_rejects_overflow() {
        assert_eq!(
            encode_address(Coord::new(1, 1), OFFSET_LIMIT),
            Err(AddressError::OffsetOverflow(OFFSET_LIMIT))
        );
        assert!(encode_address(Coord::new(64, 0), 0).is_err());
    }

    #[test]
    fn alias_resolves_to_issuer() {
        let (c, off) = split_address(GlobalAddress(0x10), Coord::new(33, 9));
        assert_eq!((c, off), (Coord::new(33, 9), 0x10));
        let (c, off) = split_address(GlobalAddress(0x8080_0000), Coord::new(33, 9));
        assert_eq!((c, off), (Coord::new(32, 8), 0));
    }

    #[test]
    fn add_stays_on_core() {
        let ga = encode_address(Coord::new(2, 3), 0x100).unwrap();
        assert_eq!(ga.add(8).unwrap().0, 0x0830_0108);
        assert!(ga.add(OFFSET_LIMIT).is_err());
    }

    proptest! {
        #[test]
        fn encode_split_inverse(row in 1u32..64, col in 0u32..64, off in 0u32..OFFSET_LIMIT) {
            let ga = encode_address(Coord::new(row, col), off).unwrap();
            prop_assert_eq!(split_address(ga, Coord::new(5, 5)), (Coord::new(row, col), off));
        }
    }
}
