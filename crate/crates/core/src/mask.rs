//! Node masking.
//!
//! Every quotient by `ρ` or `√ρ` is restricted to points where
//! `ρ > NODE_THRESHOLD · max ρ`. Points below that level form the node mask:
//! they are excluded from norms and zeroed in operator outputs.
//!
//! A wavepacket on a wide periodic box has most of its lattice in the
//! exponentially small tails, which are masked but are not nodes in any
//! physical sense. Mask-fraction limits are therefore applied to the
//! *support box*: per axis, the shortest periodic arc that contains every
//! unmasked index, and the fraction reported is masked points inside the
//! product of those arcs over the points inside it.

use crate::grid::{Grid, RealField};

/// Relative density threshold below which a point is node-masked.
pub const NODE_THRESHOLD: f64 = 1e-12;

/// Relative Tikhonov floor used inside composite operators so that
/// quotients by `ρ` decay smoothly into the masked tails instead of jumping.
pub const REGULARIZATION: f64 = 1e-24;

/// `true` where the density is at or below the node threshold.
pub fn node_mask(rho: &RealField) -> Vec<bool> {
    let eps = NODE_THRESHOLD * rho.max().max(0.0);
    rho.as_slice().iter().map(|&r| r <= eps).collect()
}

/// Fraction of all lattice points that are masked.
pub fn raw_fraction(mask: &[bool]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64
}

/// Masked fraction inside the support box (see module docs). A fully masked
/// lattice reports 1.
pub fn support_fraction(grid: &Grid, mask: &[bool]) -> f64 {
    let rank = grid.rank();
    let pts = grid.points();
    let mut occupied: Vec<Vec<bool>> = pts.iter().map(|&n| vec![false; n]).collect();
    let mut idx = vec![0; rank];
    let mut any = false;
    for (flat, &m) in mask.iter().enumerate() {
        if !m {
            any = true;
            grid.unravel(flat, &mut idx);
            for a in 0..rank {
                occupied[a][idx[a]] = true;
            }
        }
    }
    if !any {
        return 1.0;
    }
    let inside: Vec<Vec<bool>> = occupied.iter().map(|o| support_arc(o)).collect();
    let (mut total, mut masked) = (0usize, 0usize);
    for (flat, &m) in mask.iter().enumerate() {
        grid.unravel(flat, &mut idx);
        if (0..rank).all(|a| inside[a][idx[a]]) {
            total += 1;
            masked += m as usize;
        }
    }
    masked as f64 / total as f64
}

/// Complement of the longest circular run of unoccupied indices.
fn support_arc(occupied: &[bool]) -> Vec<bool> {
    let n = occupied.len();
    if occupied.iter().all(|&o| o) {
        return vec![true; n];
    }
    let (mut best_len, mut best_start) = (0usize, 0usize);
    // start scanning just after an occupied index so runs never straddle the seam
    let origin = occupied.iter().position(|&o| o).expect("at least one occupied index");
    let mut run_start = None;
    let mut run_len = 0;
    for step in 1..=n {
        let i = (origin + step) % n;
        if !occupied[i] {
            if run_start.is_none() {
                run_start = Some(i);
                run_len = 0;
            }
            run_len += 1;
            if run_len > best_len {
                best_len = run_len;
                best_start = run_start.unwrap();
            }
        } else {
            run_start = None;
        }
    }
    let mut inside = vec![true; n];
    for s in 0..best_len {
        inside[(best_start + s) % n] = false;
    }
    inside
}
