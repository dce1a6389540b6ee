use crate::error::{invalid, shape_err, Result};

pub const PATCH_SIZE: usize = 256;

/// A `[C, size, size]` tile and its `(y, x)` origin in the source image.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch<T> {
    pub origin: (usize, usize),
    pub size: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

fn axis_starts(len: usize, size: usize) -> Vec<usize> {
    if len <= size {
        return vec![0];
    }
    let n = len.div_ceil(size);
    (0..n).map(|i| if i + 1 < n { i * size } else { len - size }).collect()
}

/// Row-major `(y, x)` patch origins; the last row and column snap to the
/// image edge instead of padding.
pub fn patch_origins(height: usize, width: usize, size: usize) -> Vec<(usize, usize)> {
    let xs = axis_starts(width, size);
    axis_starts(height, size)
        .into_iter()
        .flat_map(|y| xs.iter().map(move |&x| (y, x)))
        .collect()
}

/// Splits a `[C, H, W]` image into tiles. Images smaller than `size` along
/// an axis are zero-padded on the far side.
pub fn patchify<T: Copy + Default>(
    image: &[T],
    channels: usize,
    height: usize,
    width: usize,
    size: usize,
) -> Result<Vec<Patch<T>>> {
    if height == 0 || width == 0 || size == 0 {
        return invalid("patchify needs positive image and patch sizes");
    }
    if image.len() != channels * height * width {
        return shape_err(format!(
            "image has {} values, expected {channels}x{height}x{width}",
            image.len()
        ));
    }
    let mut patches = Vec::new();
    for (oy, ox) in patch_origins(height, width, size) {
        let mut data = vec![T::default(); channels * size * size];
        let rows = size.min(height - oy);
        let cols = size.min(width - ox);
        for c in 0..channels {
            for r in 0..rows {
                let src = c * height * width + (oy + r) * width + ox;
                let dst = c * size * size + r * size;
                data[dst..dst + cols].copy_from_slice(&image[src..src + cols]);
            }
        }
        patches.push(Patch {
            origin: (oy, ox),
            size,
            channels,
            data,
        });
    }
    Ok(patches)
}

/// Reassembles `[C, H, W]` from tiles; later patches overwrite earlier ones
/// where they overlap. Every pixel must be covered.
pub fn unpatchify<T: Copy + Default>(patches: &[Patch<T>], height: usize, width: usize) -> Result<Vec<T>> {
    let Some(first) = patches.first() else {
        return invalid("unpatchify needs at least one patch");
    };
    let channels = first.channels;
    let mut out = vec![T::default(); channels * height * width];
    let mut covered = vec![false; height * width];
    for p in patches {
        if p.channels != channels || p.data.len() != channels * p.size * p.size {
            return shape_err("patches disagree in channel count or size");
        }
        let (oy, ox) = p.origin;
        if oy >= height || ox >= width {
            return invalid(format!("patch origin {:?} outside {height}x{width}", p.origin));
        }
        let rows = p.size.min(height - oy);
        let cols = p.size.min(width - ox);
        for c in 0..channels {
            for r in 0..rows {
                let dst = c * height * width + (oy + r) * width + ox;
                let src = c * p.size * p.size + r * p.size;
                out[dst..dst + cols].copy_from_slice(&p.data[src..src + cols]);
            }
        }
        for r in 0..rows {
            covered[(oy + r) * width + ox..(oy + r) * width + ox + cols].fill(true);
        }
    }
    if let Some(i) = covered.iter().position(|&c| !c) {
        return invalid(format!("pixel ({}, {}) not covered by any patch", i / width, i % width));
    }
    Ok(out)
}
