//! Partitioned vectors: contiguous owned range plus ghost entries owned
//! by neighboring ranks.

use crate::error::{Error, Result};
use std::sync::Arc;

/// Index layout for a partitioned vector. Ownership ranges are contiguous
/// and ascending by rank; the halo plans on both sides of an exchange are
/// derived from the same replicated ghost lists, so they agree without
/// negotiation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VectorLayout {
    pub global_len: usize,
    pub my_rank: usize,
    /// Per rank: owned [start, end).
    pub owned_ranges: Vec<(usize, usize)>,
    /// Sorted global ids of entries this rank mirrors but does not own.
    pub ghost_ids: Vec<usize>,
    /// (neighbor, local owned indices to send, ascending by global id).
    pub send_plan: Vec<(usize, Vec<usize>)>,
    /// (neighbor, ghost-slot indices to fill, ascending by global id).
    pub recv_plan: Vec<(usize, Vec<usize>)>,
}

impl VectorLayout {
    /// Builds the layout for `my_rank` from the global ownership ranges
    /// and every rank's (sorted, deduped) ghost id list.
    pub fn build(
        owned_ranges: Vec<(usize, usize)>,
        ghosts_per_rank: &[Vec<usize>],
        my_rank: usize,
    ) -> Arc<VectorLayout> {
        let ranks = owned_ranges.len();
        let global_len = owned_ranges.last().map_or(0, |&(_, e)| e);
        let owner_of = |g: usize| -> usize {
            owned_ranges
                .partition_point(|&(_, e)| e <= g)
        };
        let ghost_ids = ghosts_per_rank[my_rank].clone();
        let (my_start, my_end) = owned_ranges[my_rank];

        let mut recv_plan: Vec<(usize, Vec<usize>)> = Vec::new();
        for (slot, &g) in ghost_ids.iter().enumerate() {
            debug_assert!(g < my_start || g >= my_end, "ghost {g} is owned");
            let owner = owner_of(g);
            match recv_plan.iter_mut().find(|(r, _)| *r == owner) {
                Some((_, v)) => v.push(slot),
                None => recv_plan.push((owner, vec![slot])),
            }
        }
        recv_plan.sort_by_key(|&(r, _)| r);

        let mut send_plan: Vec<(usize, Vec<usize>)> = Vec::new();
        for (r, ghosts) in ghosts_per_rank.iter().enumerate().take(ranks) {
            if r == my_rank {
                continue;
            }
            let mine: Vec<usize> = ghosts
                .iter()
                .filter(|&&g| g >= my_start && g < my_end)
                .map(|&g| g - my_start)
                .collect();
            if !mine.is_empty() {
                send_plan.push((r, mine));
            }
        }

        Arc::new(VectorLayout {
            global_len,
            my_rank,
            owned_ranges,
            ghost_ids,
            send_plan,
            recv_plan,
        })
    }

    /// Serial layout covering the whole index space on one rank.
    pub fn serial(global_len: usize) -> Arc<VectorLayout> {
        Self::build(vec![(0, global_len)], &[Vec::new()], 0)
    }

    pub fn ranks(&self) -> usize {
        self.owned_ranges.len()
    }

    pub fn my_range(&self) -> (usize, usize) {
        self.owned_ranges[self.my_rank]
    }

    pub fn owned_len(&self) -> usize {
        let (s, e) = self.my_range();
        e - s
    }

    pub fn owner_of(&self, g: usize) -> usize {
        self.owned_ranges.partition_point(|&(_, e)| e <= g)
    }

    pub fn owns(&self, g: usize) -> bool {
        let (s, e) = self.my_range();
        (s..e).contains(&g)
    }

    /// Slot of a ghosted global id, if present.
    pub fn ghost_slot(&self, g: usize) -> Option<usize> {
        self.ghost_ids.binary_search(&g).ok()
    }
}

/// A vector partitioned per the layout: owned values plus a mirror of the
/// ghost entries, with a freshness flag tracking halo validity.
#[derive(Debug, Clone)]
pub struct RankVector {
    pub layout: Arc<VectorLayout>,
    owned: Vec<f64>,
    ghosts: Vec<f64>,
    fresh: bool,
}

impl RankVector {
    pub fn zeros(layout: Arc<VectorLayout>) -> Self {
        let owned = vec![0.0; layout.owned_len()];
        let ghosts = vec![0.0; layout.ghost_ids.len()];
        RankVector {
            layout,
            owned,
            ghosts,
            // zero ghosts mirror zero owners
            fresh: true,
        }
    }

    pub fn from_owned(layout: Arc<VectorLayout>, owned: Vec<f64>) -> Self {
        assert_eq!(owned.len(), layout.owned_len());
        let ghosts = vec![0.0; layout.ghost_ids.len()];
        RankVector {
            layout,
            owned,
            ghosts,
            fresh: false,
        }
    }

    pub fn owned(&self) -> &[f64] {
        &self.owned
    }

    /// Mutable access to owned values; invalidates ghost freshness
    /// everywhere this vector is subsequently read.
    pub fn owned_mut(&mut self) -> &mut [f64] {
        self.fresh = false;
        &mut self.owned
    }

    pub fn is_fresh(&self) -> bool {
        self.fresh
    }

    pub fn ghosts(&self) -> &[f64] {
        &self.ghosts
    }

    pub(crate) fn ghosts_mut_and_mark_fresh(&mut self) -> &mut [f64] {
        self.fresh = true;
        &mut self.ghosts
    }

    /// Value at a global index that is either owned or a fresh ghost.
    pub fn value(&self, g: usize) -> Result<f64> {
        let (s, e) = self.layout.my_range();
        if (s..e).contains(&g) {
            return Ok(self.owned[g - s]);
        }
        if !self.fresh {
            return Err(Error::StaleGhosts);
        }
        match self.layout.ghost_slot(g) {
            Some(slot) => Ok(self.ghosts[slot]),
            None => Err(Error::LayoutMismatch(format!(
                "global index {g} neither owned nor ghosted on rank {}",
                self.layout.my_rank
            ))),
        }
    }

    pub fn same_layout(&self, other: &RankVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn fill(&mut self, v: f64) {
        self.owned_mut().iter_mut().for_each(|x| *x = v);
    }

    pub fn copy_from(&mut self, other: &RankVector) {
        debug_assert!(self.same_layout(other));
        self.owned.copy_from_slice(&other.owned);
        self.ghosts.copy_from_slice(&other.ghosts);
        self.fresh = other.fresh;
    }

    /// self += a * x
    pub fn axpy(&mut self, a: f64, x: &RankVector) {
        debug_assert!(self.same_layout(x));
        for (y, xv) in self.owned_mut().iter_mut().zip(x.owned()) {
            *y += a * xv;
        }
    }

    /// self = x + a * self
    pub fn aypx(&mut self, a: f64, x: &RankVector) {
        debug_assert!(self.same_layout(x));
        for (y, xv) in self.owned_mut().iter_mut().zip(x.owned()) {
            *y = xv + a * *y;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.owned_mut().iter_mut().for_each(|x| *x *= a);
    }
}
