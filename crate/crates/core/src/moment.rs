//! 2D temporal moment maps: candidate spans `(i, j)` with `i <= j` laid out
//! on an `n x n` grid whose upper triangle is valid.

use std::sync::Arc;

use crate::autodiff::{Activation, Mask, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-clip visual features: `n` clips of `dim` channels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatures<S: Scalar> {
    n: usize,
    dim: usize,
    values: Vec<S>,
}

impl<S: Scalar> ClipFeatures<S> {
    pub fn from_values(n: usize, dim: usize, values: Vec<S>) -> Result<Self> {
        if n == 0 || dim == 0 || values.len() != n * dim {
            return Err(Error::dim(
                "clip_features",
                format!("{n} clips x {dim} channels needs {} values, got {}", n * dim, values.len()),
            ));
        }
        Ok(ClipFeatures { n, dim, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn clip(&self, i: usize) -> &[S] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Moment feature map over the `n x n` grid, `dim` channels per cell,
/// row-major `(i * n + j) * dim`. Cells below the diagonal are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentFeatureMap<S: Scalar> {
    n: usize,
    dim: usize,
    values: Vec<S>,
}

impl<S: Scalar> MomentFeatureMap<S> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn cell(&self, i: usize, j: usize) -> &[S] {
        &self.values[(i * self.n + j) * self.dim..(i * self.n + j + 1) * self.dim]
    }
}

/// Number of valid moments on an `n x n` grid: `n (n + 1) / 2`.
pub fn valid_moment_count(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Row-major validity mask for the upper triangle (`i <= j`).
pub fn upper_triangle_mask(n: usize) -> Mask {
    Arc::new((0..n * n).map(|c| c / n <= c % n).collect())
}

/// Group `t` frame vectors into `n` clips by averaging. The first
/// `t mod n` groups take one extra frame so every frame is used exactly
/// once. Requires `t >= n`.
pub fn pool_clips<S: Scalar>(frames: &[S], dim: usize, n: usize) -> Result<ClipFeatures<S>> {
    if dim == 0 || frames.len() % dim != 0 {
        return Err(Error::dim(
            "pool_clips",
            format!("{} values do not divide into {dim}-channel frames", frames.len()),
        ));
    }
    let t = frames.len() / dim;
    if n == 0 || t < n {
        return Err(Error::pre("pool_clips", format!("{t} frames cannot fill {n} clips")));
    }
    let base = t / n;
    let extra = t % n;
    let mut values = Vec::with_capacity(n * dim);
    let mut frame = 0;
    for g in 0..n {
        let len = if g < extra { base + 1 } else { base };
        let mut acc = vec![S::zero(); dim];
        for f in frame..frame + len {
            for (a, v) in acc.iter_mut().zip(&frames[f * dim..(f + 1) * dim]) {
                *a += *v;
            }
        }
        let scale = S::from_f64_lossy(1.0 / len as f64);
        values.extend(acc.into_iter().map(|a| a * scale));
        frame += len;
    }
    ClipFeatures::from_values(n, dim, values)
}

/// Pooling backend: the feature of moment `(i, j)` is the elementwise max
/// of clips `i..=j`. Not learned; serves as the reference construction.
pub fn build_map_pool<S: Scalar>(clips: &ClipFeatures<S>) -> MomentFeatureMap<S> {
    let (n, dim) = (clips.n(), clips.dim());
    let mut values = vec![S::zero(); n * n * dim];
    for i in 0..n {
        for j in i..n {
            let cell = &mut values[(i * n + j) * dim..(i * n + j + 1) * dim];
            cell.copy_from_slice(clips.clip(i));
            for k in i + 1..=j {
                for (c, v) in cell.iter_mut().zip(clips.clip(k)) {
                    if *v > *c {
                        *c = *v;
                    }
                }
            }
        }
    }
    MomentFeatureMap { n, dim, values }
}

/// Stacked-convolution backend, recorded on the tape so the kernel learns.
///
/// The diagonal holds the clips themselves; each longer moment is built
/// from its two one-shorter neighbours by a shared size-2 convolution
/// (an affine map over their concatenation) followed by `act`:
/// `F[i][j] = act(W . [F[i][j-1] ; F[i+1][j]])`. Returns the flat
/// row-major `n * n * dim` map with invalid cells zero.
pub fn build_map_stackconv<S: Scalar>(
    tape: &mut Tape<S>,
    clips: Var,
    kernel: Var,
    n: usize,
    dim: usize,
    act: Activation,
) -> Result<Var> {
    if tape.numel(clips) != n * dim {
        return Err(Error::dim(
            "build_map_stackconv",
            format!("clip node has {} elements, expected {}", tape.numel(clips), n * dim),
        ));
    }
    let kshape = tape.shape(kernel).to_vec();
    if kshape != [dim, 2 * dim] {
        return Err(Error::dim(
            "build_map_stackconv",
            format!("kernel shape {:?} is not [{dim}, {}]", kshape, 2 * dim),
        ));
    }
    // cells[i * n + j] holds the Var for moment (i, j) once computed.
    let mut cells: Vec<Option<Var>> = vec![None; n * n];
    for i in 0..n {
        cells[i * n + i] = Some(tape.slice(clips, i * dim, dim)?);
    }
    for d in 1..n {
        for i in 0..n - d {
            let j = i + d;
            let left = cells[i * n + j - 1].expect("shorter moment on the same row");
            let down = cells[(i + 1) * n + j].expect("shorter moment on the next row");
            let cat = tape.concat(&[left, down])?;
            let mixed = tape.affine(cat, kernel, None)?;
            cells[i * n + j] = Some(act.apply(tape, mixed)?);
        }
    }
    let zero = tape.zeros_input(dim)?;
    let ordered: Vec<Var> = cells.into_iter().map(|c| c.unwrap_or(zero)).collect();
    tape.concat(&ordered)
}

/// Time span covered by moment `(i, j)` of an `n`-clip video lasting
/// `duration` seconds: `[i, j + 1]` clip boundaries scaled to seconds.
pub fn moment_to_span(i: usize, j: usize, n: usize, duration: f64) -> Result<(f64, f64)> {
    if i > j || j >= n {
        return Err(Error::Moment(format!("({i}, {j}) outside the upper triangle of n = {n}")));
    }
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::Interval(format!("duration {duration} must be positive and finite")));
    }
    let unit = duration / n as f64;
    Ok((i as f64 * unit, (j + 1) as f64 * unit))
}
