//! Sparse convolution and PReLU on [`FeatureMap`]s, with their adjoints.

use super::feature_map::FeatureMap;
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Sites per work block in the weight-gradient reduction. Fixed so the
/// summation order does not depend on the thread count.
const GRAD_BLOCK: usize = 256;

const NO_SITE: u32 = u32::MAX;

/// Borrowed convolution kernel, layout `[out][in][a][b]`.
///
/// Tap `(a, b)` of a `k x k` kernel reads the input at offset
/// `(a + 1 - k, b + 1 - k)`: 2×2 kernels are padded by one row on top and one
/// column on the left, so the output keeps the input's dimensions.
#[derive(Debug, Clone, Copy)]
pub struct ConvKernel<'a> {
    pub out_ch: usize,
    pub in_ch: usize,
    pub size: usize,
    pub weights: &'a [f64],
}

impl<'a> ConvKernel<'a> {
    pub fn new(out_ch: usize, in_ch: usize, size: usize, weights: &'a [f64]) -> Result<Self> {
        if !(size == 1 || size == 2) {
            return Err(Error::InvalidArgument(format!(
                "kernel size {size} not in {{1, 2}}"
            )));
        }
        let expected = out_ch * in_ch * size * size;
        if weights.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: weights.len(),
            });
        }
        Ok(Self {
            out_ch,
            in_ch,
            size,
            weights,
        })
    }

    fn taps(&self) -> usize {
        self.size * self.size
    }

    /// Input offset `(di, dj)` read by tap `t`.
    fn offset(&self, t: usize) -> (isize, isize) {
        let k = self.size as isize;
        (
            (t / self.size) as isize + 1 - k,
            (t % self.size) as isize + 1 - k,
        )
    }

    fn weight(&self, o: usize, c: usize, t: usize) -> f64 {
        self.weights[(o * self.in_ch + c) * self.taps() + t]
    }

    /// Weights reordered as `[t][c][o]`, so a tap and input channel select a
    /// contiguous run over output channels.
    fn tap_major(&self) -> Vec<f64> {
        let taps = self.taps();
        let mut packed = vec![0.0; self.weights.len()];
        for t in 0..taps {
            for c in 0..self.in_ch {
                for o in 0..self.out_ch {
                    packed[(t * self.in_ch + c) * self.out_ch + o] = self.weight(o, c, t);
                }
            }
        }
        packed
    }

    /// Taps that contribute to the output mask: all of them, or none for an
    /// identically zero kernel.
    fn active_taps(&self) -> Vec<usize> {
        if self.weights.iter().all(|&w| w == 0.0) {
            Vec::new()
        } else {
            (0..self.taps()).collect()
        }
    }
}

/// Gather table from a forward pass: for each output site and tap, the input
/// site it read.
#[derive(Debug, Clone)]
pub struct ConvPlan {
    taps: usize,
    sources: Vec<u32>,
}

fn check_channels(kernel: &ConvKernel, input: &FeatureMap) -> Result<()> {
    if kernel.in_ch != input.channels() {
        return Err(Error::DimensionMismatch {
            expected: kernel.in_ch,
            found: input.channels(),
        });
    }
    Ok(())
}

pub fn conv_forward(kernel: &ConvKernel, input: &FeatureMap) -> Result<FeatureMap> {
    conv_forward_planned(kernel, input, Execution::default()).map(|(out, _)| out)
}

/// Forward convolution on active sites. The output mask is the input mask
/// dilated by the kernel window, so it depends only on geometry; an all-zero
/// kernel yields an empty map.
pub fn conv_forward_planned(
    kernel: &ConvKernel,
    input: &FeatureMap,
    exec: Execution,
) -> Result<(FeatureMap, ConvPlan)> {
    check_channels(kernel, input)?;
    let (h, w) = (input.height(), input.width());
    let active = kernel.active_taps();
    let mut sites: Vec<(usize, usize)> = Vec::with_capacity(input.n_sites() * active.len());
    for (p, q) in input.sites() {
        for &t in &active {
            let (di, dj) = kernel.offset(t);
            let (i, j) = (p as isize - di, q as isize - dj);
            if (i as usize) < h && (j as usize) < w {
                sites.push((i as usize, j as usize));
            }
        }
    }
    sites.sort_unstable();
    sites.dedup();

    let taps = kernel.taps();
    let mut sources = vec![NO_SITE; sites.len() * taps];
    for (s, &(i, j)) in sites.iter().enumerate() {
        for &t in &active {
            let (di, dj) = kernel.offset(t);
            if let Some(src) = input.site_at(i as isize + di, j as isize + dj) {
                sources[s * taps + t] = src as u32;
            }
        }
    }

    let (out_ch, in_ch) = (kernel.out_ch, kernel.in_ch);
    let packed = kernel.tap_major();
    let mut values = vec![0.0; sites.len() * out_ch];
    if out_ch > 0 {
        exec.for_each_chunk_mut(&mut values, out_ch, |s, out| {
            for t in 0..taps {
                let src = sources[s * taps + t];
                if src == NO_SITE {
                    continue;
                }
                let x = input.site_values(src as usize);
                for (c, &xc) in x.iter().enumerate() {
                    let w = &packed[(t * in_ch + c) * out_ch..][..out_ch];
                    for (y, &wv) in out.iter_mut().zip(w) {
                        *y += wv * xc;
                    }
                }
            }
        });
    }
    let out = FeatureMap::from_sorted_sites(out_ch, h, w, &sites, values);
    Ok((out, ConvPlan { taps, sources }))
}

/// Adjoint of [`conv_forward_planned`]: returns `(∂L/∂weights, ∂L/∂input)`
/// given `∂L/∂output` on the output pattern. The input gradient is skipped
/// when `need_input_grad` is false.
pub fn conv_backward(
    kernel: &ConvKernel,
    input: &FeatureMap,
    plan: &ConvPlan,
    grad_out: &FeatureMap,
    need_input_grad: bool,
    exec: Execution,
) -> Result<(Vec<f64>, Option<FeatureMap>)> {
    check_channels(kernel, input)?;
    let taps = plan.taps;
    let n_out = grad_out.n_sites();
    if plan.sources.len() != n_out * taps || grad_out.channels() != kernel.out_ch {
        return Err(Error::ShapeMismatch {
            tensor: "conv gradient".into(),
        });
    }
    let (out_ch, in_ch) = (kernel.out_ch, kernel.in_ch);
    let n_w = kernel.weights.len();

    let n_blocks = n_out.div_ceil(GRAD_BLOCK);
    let partials = exec.map_range(n_blocks, |blk| {
        // accumulated as [t][o][c], unpacked to the kernel layout below
        let mut packed = vec![0.0; n_w];
        for s in blk * GRAD_BLOCK..((blk + 1) * GRAD_BLOCK).min(n_out) {
            let g = grad_out.site_values(s);
            for t in 0..taps {
                let src = plan.sources[s * taps + t];
                if src == NO_SITE {
                    continue;
                }
                let x = input.site_values(src as usize);
                for (o, &go) in g.iter().enumerate() {
                    if go == 0.0 {
                        continue;
                    }
                    let row = &mut packed[(t * out_ch + o) * in_ch..][..in_ch];
                    for (acc, &xc) in row.iter_mut().zip(x) {
                        *acc += go * xc;
                    }
                }
            }
        }
        let mut gw = vec![0.0; n_w];
        for t in 0..taps {
            for o in 0..out_ch {
                for c in 0..in_ch {
                    gw[(o * in_ch + c) * taps + t] = packed[(t * out_ch + o) * in_ch + c];
                }
            }
        }
        gw
    });
    let mut grad_w = vec![0.0; n_w];
    for part in partials {
        for (acc, v) in grad_w.iter_mut().zip(part) {
            *acc += v;
        }
    }

    if !need_input_grad {
        return Ok((grad_w, None));
    }
    // gather: input site (p, q) fed output (p - di, q - dj) through tap t
    let packed = kernel.tap_major();
    let mut grad_in = vec![0.0; input.n_sites() * in_ch];
    if in_ch > 0 {
        exec.for_each_chunk_mut(&mut grad_in, in_ch, |src, gx| {
            let (p, q) = input.site(src);
            for t in 0..taps {
                let (di, dj) = kernel.offset(t);
                let Some(s) = grad_out.site_at(p as isize - di, q as isize - dj) else {
                    continue;
                };
                if plan.sources[s * taps + t] != src as u32 {
                    continue;
                }
                let g = grad_out.site_values(s);
                for (c, gxc) in gx.iter_mut().enumerate() {
                    let w = &packed[(t * in_ch + c) * out_ch..][..out_ch];
                    for (&wv, &go) in w.iter().zip(g) {
                        *gxc += wv * go;
                    }
                }
            }
        });
    }
    Ok((grad_w, Some(input.with_values(in_ch, grad_in))))
}

pub fn prelu(a: f64, x: &FeatureMap) -> FeatureMap {
    let values = x
        .values()
        .iter()
        .map(|&v| if v > 0.0 { v } else { a * v })
        .collect();
    x.with_values(x.channels(), values)
}

/// Adjoint of [`prelu`]: `(∂L/∂a, ∂L/∂x)` from `∂L/∂y` and the pre-activation
/// `x`.
pub fn prelu_backward(a: f64, x: &FeatureMap, grad_out: &FeatureMap) -> (f64, FeatureMap) {
    let mut grad_a = 0.0;
    let values = x
        .values()
        .iter()
        .zip(grad_out.values())
        .map(|(&v, &g)| {
            if v > 0.0 {
                g
            } else {
                grad_a += g * v;
                a * g
            }
        })
        .collect();
    (grad_a, x.with_values(x.channels(), values))
}
