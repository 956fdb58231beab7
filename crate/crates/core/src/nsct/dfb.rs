//! Nonsubsampled directional filter bank: a binary tree of two-channel fan
//! splits without decimation.
//!
//! * depth 1: the fan pair itself (horizontal / vertical structures);
//! * depth 2: the fan pair resampled by the quincunx matrix, which turns it
//!   into a quadrant (checkerboard) pair and splits each fan in two wedges;
//! * depth 3: the fan pair resampled by a per-wedge shear, cutting each
//!   wedge again along a lattice direction of slope 2 or 1/2.
//!
//! Leaves are ordered depth-first with channel 0 before channel 1.

use super::filters::{FilterBank, Kernel};
use crate::error::{Error, Result};
use crate::image::Image;

const QUINCUNX: [[i32; 2]; 2] = [[1, 1], [-1, 1]];

/// Depth-3 resampling matrices, indexed by the depth-2 leaf they split.
/// Leaf order (frequency-vector angle): 90-135, 45-90, 135-180, 0-45 degrees.
const WEDGE_SHEARS: [[[i32; 2]; 2]; 4] = [
    [[1, 0], [1, 1]],
    [[1, 0], [-1, 1]],
    [[1, 1], [0, 1]],
    [[1, -1], [0, 1]],
];

fn depth_of(n_directions: usize) -> Result<usize> {
    match n_directions {
        2 => Ok(1),
        4 => Ok(2),
        8 => Ok(3),
        n => Err(Error::Parameter(format!(
            "directional bank supports 2, 4 or 8 directions, got {n}"
        ))),
    }
}

/// Analysis and synthesis kernel pairs for tree node `node` at `depth`
/// (1-based), before any pyramid-level dilation.
fn node_filters(bank: &FilterBank, depth: usize, node: usize) -> ([Kernel; 2], [Kernel; 2]) {
    let resample = |k: &Kernel| match depth {
        1 => k.clone(),
        2 => k.resample(QUINCUNX),
        _ => k.resample(WEDGE_SHEARS[node]),
    };
    (
        [resample(&bank.fan_analysis[0]), resample(&bank.fan_analysis[1])],
        [resample(&bank.fan_synthesis[0]), resample(&bank.fan_synthesis[1])],
    )
}

pub fn nsdfb_analyze(band: &Image, n_directions: usize, bank: &FilterBank) -> Result<Vec<Image>> {
    nsdfb_analyze_dilated(band, n_directions, bank, 1)
}

pub fn nsdfb_synthesize(channels: &[Image], bank: &FilterBank) -> Result<Image> {
    nsdfb_synthesize_dilated(channels, bank, 1)
}

/// Directional split with every kernel dilated by `dilation`, used on
/// coarser pyramid levels whose spectrum is confined near the origin.
pub fn nsdfb_analyze_dilated(
    band: &Image,
    n_directions: usize,
    bank: &FilterBank,
    dilation: i32,
) -> Result<Vec<Image>> {
    let depth = depth_of(n_directions)?;
    let mut nodes = vec![band.clone()];
    for d in 1..=depth {
        let mut next = Vec::with_capacity(nodes.len() * 2);
        for (i, x) in nodes.iter().enumerate() {
            let (ana, _) = node_filters(bank, d, i);
            next.push(ana[0].dilate(dilation).apply(x));
            next.push(ana[1].dilate(dilation).apply(x));
        }
        nodes = next;
    }
    Ok(nodes)
}

pub fn nsdfb_synthesize_dilated(channels: &[Image], bank: &FilterBank, dilation: i32) -> Result<Image> {
    let depth = depth_of(channels.len())?;
    for c in &channels[1..] {
        channels[0].same_dims(c)?;
    }
    let mut nodes: Vec<Image> = channels.to_vec();
    for d in (1..=depth).rev() {
        let mut prev = Vec::with_capacity(nodes.len() / 2);
        for (i, pair) in nodes.chunks_exact(2).enumerate() {
            let (_, syn) = node_filters(bank, d, i);
            let mut x = syn[0].dilate(dilation).apply(&pair[0]);
            syn[1].dilate(dilation).apply_into(&pair[1], &mut x, true);
            prev.push(x);
        }
        nodes = prev;
    }
    Ok(nodes.pop().expect("tree root"))
}
