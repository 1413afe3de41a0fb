//! Reverse-mode gradient of `κ(A M⁻¹)` with respect to the model parameters,
//! Adam, and the train/validate loop.

mod adam;
mod train;

pub use adam::{adam_step, AdamState};
pub use train::{
    load_history_csv, read_history_csv, save_history_csv, train, write_history_csv, EpochRecord,
    TrainConfig, TrainHistory, TrainOutcome,
};

use crate::cnn::{
    conv_backward, forward_trace, learned_operator_dense, prelu_backward, spd_assemble, CnnParams,
    FeatureMap, ForwardTrace, Tensor, EPSILON, N_ACTIVATIONS, N_LAYERS,
};
use crate::error::Result;
use crate::exec::Execution;
use crate::krylov::condition_number;
use crate::sparse::CsrMatrix;

/// Singular-value gaps below this fraction of `σ_max` make the extreme
/// singular vectors ill-defined; such steps are skipped.
pub const DEGENERACY_GAP: f64 = 1e-10;

/// One gradient tensor per parameter tensor, same names and shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub tensors: Vec<Tensor>,
}

impl GradientSet {
    pub fn zeros_like(params: &CnnParams) -> Self {
        Self {
            tensors: params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.tensors.iter_mut() {
            for x in t.data.iter_mut() {
                *x *= c;
            }
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grads: GradientSet,
    /// Extreme singular values were (nearly) repeated; `grads` is zero.
    pub degenerate: bool,
}

/// `κ(A F Fᵀ)` for the factor the model assigns to `a`.
pub fn kappa_loss(a: &CsrMatrix, params: &CnnParams) -> Result<f64> {
    kappa_loss_with(a, params, Execution::default())
}

pub fn kappa_loss_with(a: &CsrMatrix, params: &CnnParams, exec: Execution) -> Result<f64> {
    let trace = forward_trace(params, a, exec)?;
    let factors = spd_assemble(trace.output())?;
    let b = learned_operator_dense(a, &factors.factor, exec)?;
    Ok(condition_number(&b)?.kappa())
}

pub fn kappa_loss_and_grad(a: &CsrMatrix, params: &CnnParams) -> Result<LossAndGrad> {
    kappa_loss_and_grad_with(a, params, Execution::default())
}

pub fn kappa_loss_and_grad_with(
    a: &CsrMatrix,
    params: &CnnParams,
    exec: Execution,
) -> Result<LossAndGrad> {
    let trace = forward_trace(params, a, exec)?;
    let (loss, raw_grad, degenerate) = raw_loss_and_grad(a, trace.output(), exec)?;
    let grads = if degenerate {
        GradientSet::zeros_like(params)
    } else {
        backward(params, &trace, raw_grad, exec)?
    };
    Ok(LossAndGrad {
        loss,
        grads,
        degenerate,
    })
}

/// Loss and its gradient with respect to the raw factor map, on the raw
/// map's sites. The third value flags degenerate extreme singular values.
pub fn raw_loss_and_grad(
    a: &CsrMatrix,
    raw: &FeatureMap,
    exec: Execution,
) -> Result<(f64, FeatureMap, bool)> {
    let factors = spd_assemble(raw)?;
    let f = &factors.factor;
    let b = learned_operator_dense(a, f, exec)?;
    let info = condition_number(&b)?;
    let loss = info.kappa();
    let (top_gap, bottom_gap) = info.extreme_gaps();
    if top_gap < DEGENERACY_GAP || bottom_gap < DEGENERACY_GAP {
        log::debug!("degenerate extreme singular values (gaps {top_gap:e}, {bottom_gap:e})");
        return Ok((loss, raw.zeros_on_pattern(1), true));
    }

    // ∂κ/∂B = c₁ u₁v₁ᵀ + c₂ uₙvₙᵀ; with B = A M, ∂κ/∂M = Σ cₖ pₖ vₖᵀ where
    // pₖ = Aᵀuₖ, and M = F Fᵀ gives ∂κ/∂F = Σ cₖ (pₖ qₖᵀ + vₖ sₖᵀ) with
    // qₖ = Fᵀvₖ, sₖ = Fᵀpₖ.
    let c = [
        1.0 / info.sigma_min,
        -info.sigma_max / (info.sigma_min * info.sigma_min),
    ];
    let mut terms = Vec::with_capacity(2);
    for (ck, (u, v)) in c
        .into_iter()
        .zip([(&info.u_max, &info.v_max), (&info.u_min, &info.v_min)])
    {
        let p = a.spmv_transpose(u)?;
        let q = f.spmv_transpose(v)?;
        let s = f.spmv_transpose(&p)?;
        terms.push((ck, p, q, v.clone(), s));
    }
    let grad_f = |i: usize, j: usize| -> f64 {
        terms
            .iter()
            .map(|(ck, p, q, v, s)| ck * (p[i] * q[j] + v[i] * s[j]))
            .sum()
    };
    let values = raw
        .sites()
        .enumerate()
        .map(|(site, (i, j))| {
            if j < i {
                grad_f(i, j)
            } else if j == i && raw.site_values(site)[0] > EPSILON {
                grad_f(i, i)
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss, raw.with_values(1, values), false))
}

/// Back-propagates `∂L/∂raw` through the six layers.
pub fn backward(
    params: &CnnParams,
    trace: &ForwardTrace,
    raw_grad: FeatureMap,
    exec: Execution,
) -> Result<GradientSet> {
    let mut grads = GradientSet::zeros_like(params);
    let mut g = raw_grad;
    for layer in (0..N_LAYERS).rev() {
        let input = &trace.conv_inputs[layer];
        let (gw, gx) = conv_backward(
            &params.kernel(layer),
            input,
            &trace.plans[layer],
            &g,
            layer > 0,
            exec,
        )?;
        grads.tensors[layer].data = gw;
        if layer == 0 {
            break;
        }
        let act = layer - 1;
        let (ga, gz) = prelu_backward(
            params.slope(act),
            &trace.conv_outputs[act],
            &gx.expect("requested"),
        );
        grads.tensors[N_LAYERS + act].data[0] = ga;
        g = gz;
    }
    debug_assert_eq!(grads.tensors.len(), N_LAYERS + N_ACTIVATIONS);
    Ok(grads)
}

/// Worst relative discrepancy between the analytic gradient and central
/// differences with step `h`, over every parameter entry.
///
/// Entries are compared as `|g - ĝ| / max(|g|, |ĝ|, floor)` where the floor
/// is [`FD_RELATIVE_FLOOR`] times the largest analytic gradient entry, so
/// entries at round-off level do not dominate.
///
/// A central difference whose two evaluations see different PReLU signs or
/// diagonal clamp states straddles a kink and says nothing about the
/// gradient; the step then shrinks tenfold, up to [`KINK_RETRIES`] times.
pub fn finite_diff_check(params: &CnnParams, a: &CsrMatrix, h: f64) -> Result<f64> {
    finite_diff_check_with(params, a, h, Execution::default())
}

pub const FD_RELATIVE_FLOOR: f64 = 1e-3;
pub const KINK_RETRIES: usize = 3;

/// Loss plus the on/off state of every nondifferentiable point it passes
/// through: PReLU inputs above zero and raw diagonals above `ε`.
fn loss_and_kink_pattern(a: &CsrMatrix, params: &CnnParams) -> Result<(f64, Vec<bool>)> {
    let trace = forward_trace(params, a, Execution::Sequential)?;
    let raw = trace.output();
    let mut pattern: Vec<bool> = trace.conv_outputs[..N_ACTIVATIONS]
        .iter()
        .flat_map(|z| z.values().iter().map(|&v| v > 0.0))
        .collect();
    pattern.extend(
        (0..raw.n_sites())
            .filter(|&s| {
                let (i, j) = raw.site(s);
                i == j
            })
            .map(|s| raw.site_values(s)[0] > EPSILON),
    );
    let factors = spd_assemble(raw)?;
    let b = learned_operator_dense(a, &factors.factor, Execution::Sequential)?;
    Ok((condition_number(&b)?.kappa(), pattern))
}

pub fn finite_diff_check_with(
    params: &CnnParams,
    a: &CsrMatrix,
    h: f64,
    exec: Execution,
) -> Result<f64> {
    let analytic = kappa_loss_and_grad_with(a, params, Execution::Sequential)?
        .grads
        .flat();
    let floor = FD_RELATIVE_FLOOR * analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let numeric = exec.map_range(analytic.len(), |k| -> Result<f64> {
        let base = params.flat_get(k);
        let mut p = params.clone();
        let mut step = h;
        let mut retries = 0;
        loop {
            p.flat_set(k, base + step);
            let (up, up_pattern) = loss_and_kink_pattern(a, &p)?;
            p.flat_set(k, base - step);
            let (down, down_pattern) = loss_and_kink_pattern(a, &p)?;
            if up_pattern == down_pattern || retries == KINK_RETRIES {
                return Ok((up - down) / (2.0 * step));
            }
            step /= 10.0;
            retries += 1;
        }
    });
    let mut worst = 0.0f64;
    for (g, fd) in analytic.iter().zip(numeric) {
        let fd = fd?;
        let denom = g.abs().max(fd.abs()).max(floor);
        if denom > 0.0 {
            worst = worst.max((g - fd).abs() / denom);
        }
    }
    Ok(worst)
}
