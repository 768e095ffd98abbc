//! Rank-parallel matrix and vector operations.
//!
//! Reductions here follow a fixed-block contract: products are folded
//! serially inside fixed global index blocks, block sums are folded
//! serially in block order at the team root, and partial blocks are
//! completed by the block's owning rank from its neighbors' raw products.
//! The grouping never depends on the team size, so results are bitwise
//! identical for any rank count, not merely deterministic per count.

use super::{CsrMatrix, RankVector, VectorLayout};
use crate::error::{Error, Result};
use crate::runtime::Communicator;
use std::sync::Arc;

/// Fixed reduction block size (entries).
const DOT_BLOCK: usize = 4096;

/// y = A x over the rows this rank owns. Ghosts of x must be fresh; the
/// per-row accumulation runs in column order.
pub fn spmv(a: &CsrMatrix, x: &RankVector, out_layout: Arc<VectorLayout>) -> Result<RankVector> {
    let xl = &x.layout;
    if !x.layout.ghost_ids.is_empty() && !x.is_fresh() {
        return Err(Error::StaleGhosts);
    }
    if a.ncols_global != xl.global_len {
        return Err(Error::LayoutMismatch(format!(
            "matrix has {} columns, vector length {}",
            a.ncols_global, xl.global_len
        )));
    }
    let (xs, xe) = xl.my_range();
    let owned = x.owned();
    let ghosts = x.ghosts();
    let lookup = |g: usize| -> Result<f64> {
        if (xs..xe).contains(&g) {
            Ok(owned[g - xs])
        } else {
            match xl.ghost_slot(g) {
                Some(slot) => Ok(ghosts[slot]),
                None => Err(Error::LayoutMismatch(format!(
                    "column {g} neither owned nor ghosted on rank {}",
                    xl.my_rank
                ))),
            }
        }
    };
    let mut y = RankVector::zeros(out_layout);
    debug_assert_eq!(y.layout.owned_len(), a.local_rows());
    let out = y.owned_mut();
    for r in 0..a.local_rows() {
        let (cols, vals) = a.row(r);
        let mut acc = 0.0;
        for (&c, &v) in cols.iter().zip(vals) {
            acc += v * lookup(c)?;
        }
        out[r] = acc;
    }
    Ok(y)
}

/// Global dot product under the fixed-block contract; identical bits on
/// every rank and for every team size.
pub fn dot(comm: &Communicator, x: &RankVector, y: &RankVector) -> Result<f64> {
    if !x.same_layout(y) {
        return Err(Error::LayoutMismatch(
            "dot of vectors with different layouts".into(),
        ));
    }
    let layout = &x.layout;
    if layout.ranks() != comm.size() {
        return Err(Error::LayoutMismatch(format!(
            "layout built for {} ranks used on a team of {}",
            layout.ranks(),
            comm.size()
        )));
    }
    let n = layout.global_len;
    let (s, e) = layout.my_range();
    let xo = x.owned();
    let yo = y.owned();
    let prod = |g: usize| xo[g - s] * yo[g - s];

    // partial head block: my range starts inside a block someone else owns
    let first_block = s / DOT_BLOCK;
    let head_is_partial = e > s && s % DOT_BLOCK != 0;
    if head_is_partial {
        let owner = layout.owner_of(first_block * DOT_BLOCK);
        let stop = ((first_block + 1) * DOT_BLOCK).min(e).min(n);
        let part: Vec<f64> = (s..stop).map(prod).collect();
        comm.send_dot_part(owner, part);
    }

    // blocks whose start index this rank owns
    let mut block_ids = Vec::new();
    let mut block_sums = Vec::new();
    let mut k = s.div_ceil(DOT_BLOCK);
    while k * DOT_BLOCK < e {
        let b0 = k * DOT_BLOCK;
        let b1 = ((k + 1) * DOT_BLOCK).min(n);
        let mut acc = 0.0;
        for g in b0..b1.min(e) {
            acc += prod(g);
        }
        if b1 > e {
            // collect the tail of this block from the following ranks
            let mut at = e;
            let mut r = layout.my_rank + 1;
            while at < b1 && r < layout.ranks() {
                let (rs, re) = layout.owned_ranges[r];
                if rs < b1 && re > at {
                    let part = comm.recv_dot_part(r)?;
                    debug_assert_eq!(part.len(), re.min(b1) - at.max(rs));
                    for v in part {
                        acc += v;
                    }
                    at = re.min(b1);
                }
                r += 1;
            }
        }
        block_ids.push(k);
        block_sums.push(acc);
        k += 1;
    }

    // fold block sums in ascending block order at the root
    let gathered = comm.gather_f64s(&block_sums)?;
    let total = if let Some(parts) = gathered {
        // rank order equals block order because ranges ascend by rank
        let mut acc = 0.0;
        for part in parts {
            for v in part {
                acc += v;
            }
        }
        vec![acc]
    } else {
        Vec::new()
    };
    Ok(comm.broadcast_f64s(total)?[0])
}

/// Euclidean norm via the exact-contract dot product.
pub fn norm2(comm: &Communicator, x: &RankVector) -> Result<f64> {
    Ok(dot(comm, x, x)?.sqrt())
}

/// Gathers the distributed vector into a full global vector on team rank
/// 0 (rank-ordered concatenation).
pub fn gather_full(comm: &Communicator, x: &RankVector) -> Result<Option<Vec<f64>>> {
    Ok(comm
        .gather_f64s(x.owned())?
        .map(|parts| parts.concat()))
}

/// Every rank receives the full global vector.
pub fn allgather_full(comm: &Communicator, x: &RankVector) -> Result<Vec<f64>> {
    Ok(comm.allgather_f64s(x.owned())?.concat())
}
