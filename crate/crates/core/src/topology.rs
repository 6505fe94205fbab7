//! One-dimensional PE ranks over a rectangular workgroup of cores.
//!
//! Ranks are assigned in row-major order over the live cores of the
//! rectangle; disabled cores are skipped. Both directions of the mapping are
//! table lookups.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::address::Coord;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("workgroup must be at least 1x1, got {rows}x{cols}")]
    EmptyRectangle { rows: u32, cols: u32 },
    #[error("disabled core {0} lies outside the workgroup rectangle")]
    DisabledOutside(Coord),
    #[error("every core of the workgroup is disabled")]
    NoLiveCores,
    #[error("rank {pe} out of range for {n_pes} PEs")]
    RankOutOfRange { pe: usize, n_pes: usize },
    #[error("core {0} is disabled")]
    Disabled(Coord),
    #[error("core {0} lies outside the workgroup")]
    OutsideRectangle(Coord),
    #[error("workgroup rectangle {origin}+{rows}x{cols} does not fit the machine grid")]
    OutOfGrid { origin: Coord, rows: u32, cols: u32 },
    #[error("machine-disabled core {0} is not excluded by the workgroup")]
    DisabledNotExcluded(Coord),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workgroup {
    origin: Coord,
    rows: u32,
    cols: u32,
    disabled: BTreeSet<Coord>,
    coords: Vec<Coord>,
    // rectangle-local row-major index -> rank
    ranks: Vec<Option<usize>>,
}

impl Workgroup {
    pub fn new(
        origin: Coord,
        rows: u32,
        cols: u32,
        disabled: impl IntoIterator<Item = Coord>,
    ) -> Result<Self, TopologyError> {
        if rows == 0 || cols == 0 {
            return Err(TopologyError::EmptyRectangle { rows, cols });
        }
        let disabled: BTreeSet<Coord> = disabled.into_iter().collect();
        let mut wg = Workgroup { origin, rows, cols, disabled, coords: Vec::new(), ranks: Vec::new() };
        if let Some(c) = wg.disabled.iter().find(|c| !wg.in_rectangle(**c)) {
            return Err(TopologyError::DisabledOutside(*c));
        }
        let cells = rows as usize * cols as usize;
        wg.ranks = vec![None; cells];
        for idx in 0..cells {
            let c = Coord::new(origin.row + (idx / cols as usize) as u32, origin.col + (idx % cols as usize) as u32);
            if !wg.disabled.contains(&c) {
                wg.ranks[idx] = Some(wg.coords.len());
                wg.coords.push(c);
            }
        }
        if wg.coords.is_empty() {
            return Err(TopologyError::NoLiveCores);
        }
        Ok(wg)
    }

    pub fn origin(&self) -> Coord {
        self.origin
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn disabled(&self) -> &BTreeSet<Coord> {
        &self.disabled
    }

    pub fn n_pes(&self) -> usize {
        self.coords.len()
    }

    /// Live cores in rank order.
    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn in_rectangle(&self, c: Coord) -> bool {
        c.row >= self.origin.row
            && c.col >= self.origin.col
            && c.row - self.origin.row < self.rows
            && c.col - self.origin.col < self.cols
    }

    pub fn coord_of_pe(&self, pe: usize) -> Result<Coord, TopologyError> {
        self.coords
            .get(pe)
            .copied()
            .ok_or(TopologyError::RankOutOfRange { pe, n_pes: self.n_pes() })
    }

    pub fn pe_of_coord(&self, c: Coord) -> Result<usize, TopologyError> {
        if !self.in_rectangle(c) {
            return Err(TopologyError::OutsideRectangle(c));
        }
        let idx = (c.row - self.origin.row) as usize * self.cols as usize + (c.col - self.origin.col) as usize;
        self.ranks[idx].ok_or(TopologyError::Disabled(c))
    }

    /// Checks the rectangle against a machine grid and its disabled cores.
    pub fn validate_against(
        &self,
        grid_origin: Coord,
        grid_rows: u32,
        grid_cols: u32,
        machine_disabled: &BTreeSet<Coord>,
    ) -> Result<(), TopologyError> {
        let fits = self.origin.row >= grid_origin.row
            && self.origin.col >= grid_origin.col
            && self.origin.row + self.rows <= grid_origin.row + grid_rows
            && self.origin.col + self.cols <= grid_origin.col + grid_cols;
        if !fits {
            return Err(TopologyError::OutOfGrid { origin: self.origin, rows: self.rows, cols: self.cols });
        }
        for c in machine_disabled {
            if self.in_rectangle(*c) && !self.disabled.contains(c) {
                return Err(TopologyError::DisabledNotExcluded(*c));
            }
        }
        Ok(())
    }

    /// True when the workgroup spans the whole grid and no core is disabled.
    pub fn covers_full_grid(&self, grid_origin: Coord, grid_rows: u32, grid_cols: u32) -> bool {
        self.origin == grid_origin && self.rows == grid_rows && self.cols == grid_cols && self.disabled.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ORIGIN: Coord = Coord::new(32, 8);

    // Oracle: walk the rectangle in row-major order, skipping disabled cores.
    fn enumerate_live(origin: Coord, rows: u32, cols: u32, disabled: &BTreeSet<Coord>) -> Vec<Coord> {
        let mut out = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let x = Coord::new(origin.row + r, origin.col + c);
                if !disabled.contains(&x) {
                    out.push(x);
                }
            }
        }
        out
    }

    #[test]
    fn rank_examples() {
        let wg = Workgroup::new(ORIGIN, 4, 4, []).unwrap();
        assert_eq!(wg.coord_of_pe(5).unwrap(), Coord::new(33, 9));
        assert_eq!(wg.pe_of_coord(Coord::new(33, 9)).unwrap(), 5);

        let holes: BTreeSet<_> = [Coord::new(33, 9)].into();
        let wg = Workgroup::new(ORIGIN, 4, 4, holes.clone()).unwrap();
        assert_eq!(wg.coord_of_pe(5).unwrap(), enumerate_live(ORIGIN, 4, 4, &holes)[5]);
        assert_eq!(wg.coord_of_pe(5).unwrap(), Coord::new(33, 10));
        assert_eq!(wg.pe_of_coord(Coord::new(33, 10)).unwrap(), 5);
        assert_eq!(wg.n_pes(), 15);

        let one = Workgroup::new(ORIGIN, 1, 1, []).unwrap();
        assert_eq!(one.coord_of_pe(0).unwrap(), ORIGIN);
        assert_eq!(one.pe_of_coord(ORIGIN).unwrap(), 0);
    }

    #[test]
    fn rank_errors() {
        let wg = Workgroup::new(ORIGIN, 4, 4, [Coord::new(33, 9)]).unwrap();
        assert_eq!(wg.pe_of_coord(Coord::new(33, 9)), Err(TopologyError::Disabled(Coord::new(33, 9))));
        assert!(matches!(wg.pe_of_coord(Coord::new(40, 8)), Err(TopologyError::OutsideRectangle(_))));
        assert!(matches!(wg.coord_of_pe(15), Err(TopologyError::RankOutOfRange { pe: 15, n_pes: 15 })));
        assert!(matches!(Workgroup::new(ORIGIN, 1, 1, [ORIGIN]), Err(TopologyError::NoLiveCores)));
        assert!(matches!(Workgroup::new(ORIGIN, 2, 2, [Coord::new(0, 0)]), Err(TopologyError::DisabledOutside(_))));
    }

    #[test]
    fn validate_examples() {
        let none = BTreeSet::new();
        let wg = Workgroup::new(ORIGIN, 4, 4, []).unwrap();
        assert!(wg.validate_against(ORIGIN, 4, 4, &none).is_ok());
        assert!(wg.covers_full_grid(ORIGIN, 4, 4));

        let tall = Workgroup::new(ORIGIN, 5, 4, []).unwrap();
        assert!(matches!(tall.validate_against(ORIGIN, 4, 4, &none), Err(TopologyError::OutOfGrid { .. })));

        let dis: BTreeSet<_> = [Coord::new(33, 9)].into();
        assert_eq!(
            wg.validate_against(ORIGIN, 4, 4, &dis),
            Err(TopologyError::DisabledNotExcluded(Coord::new(33, 9)))
        );
        let wg2 = Workgroup::new(ORIGIN, 4, 4, dis.clone()).unwrap();
        assert!(wg2.validate_against(ORIGIN, 4, 4, &dis).is_ok());
        assert!(!wg2.covers_full_grid(ORIGIN, 4, 4));
    }

    fn arb_workgroup() -> impl Strategy<Value = (Coord, u32, u32, BTreeSet<Coord>)> {
        (0u32..16, 0u32..16, 1u32..9, 1u32..9).prop_flat_map(|(r0, c0, rows, cols)| {
            let origin = Coord::new(r0, c0);
            let cells = (rows * cols) as usize;
            (Just(origin), Just(rows), Just(cols), proptest::collection::vec(any::<bool>(), cells)).prop_map(
                move |(o, r, c, mask)| {
                    let mut dis = BTreeSet::new();
                    // keep cell 0 alive so the set is never empty
                    for (i, off) in mask.iter().enumerate().skip(1) {
                        if *off {
                            dis.insert(Coord::new(o.row + i as u32 / c, o.col + i as u32 % c));
                        }
                    }
                    (o, r, c, dis)
                },
            )
        })
    }

    proptest! {
        #[test]
        fn bijection_matches_enumeration((origin, rows, cols, dis) in arb_workgroup()) {
            let wg = Workgroup::new(origin, rows, cols, dis.clone()).unwrap();
            let live = enumerate_live(origin, rows, cols, &dis);
            prop_assert_eq!(wg.n_pes(), live.len());
            for (pe, c) in live.iter().enumerate() {
                prop_assert_eq!(wg.coord_of_pe(pe).unwrap(), *c);
                prop_assert_eq!(wg.pe_of_coord(*c).unwrap(), pe);
            }
        }

        #[test]
        fn disabling_shifts_only_later_ranks((origin, rows, cols, dis) in arb_workgroup(), pick in any::<prop::sample::Index>()) {
            let wg = Workgroup::new(origin, rows, cols, dis.clone()).unwrap();
            prop_assume!(wg.n_pes() >= 2);
            let victim_rank = 1 + pick.index(wg.n_pes() - 1);
            let victim = wg.coord_of_pe(victim_rank).unwrap();
            let mut more = dis.clone();
            more.insert(victim);
            let smaller = Workgroup::new(origin, rows, cols, more).unwrap();
            prop_assert_eq!(smaller.n_pes(), wg.n_pes() - 1);
            for pe in 0..victim_rank {
                prop_assert_eq!(smaller.coord_of_pe(pe).unwrap(), wg.coord_of_pe(pe).unwrap());
            }
            for pe in victim_rank..smaller.n_pes() {
                prop_assert_eq!(smaller.coord_of_pe(pe).unwrap(), wg.coord_of_pe(pe + 1).unwrap());
            }
        }
    }
}
