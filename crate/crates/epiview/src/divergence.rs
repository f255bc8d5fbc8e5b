//! The cross-view consistency loss between flattened row distributions and
//! its analytic gradients with respect to the source heatmap grids.
//!
//! Forward path per channel and ordered pair (i, j): warp each heatmap into
//! its rectified frame, max-pool rows into flats, resample view j's flat
//! onto view i's rows through the affine row correspondence, then take the
//! asymmetric divergence. The backward pass retraces the same taps: log
//! terms, interpolation transpose, argmax routing, bilinear scatter.

use crate::heatmap::{
    resample_flat, resample_flat_transpose, row_max, warp, warp_transpose, FlatDistribution,
    Heatmap, HeatmapError, RectifiedPairGeometry, Tensor3,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DivergenceError {
    #[error("flat lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("channel counts differ: {left} vs {right}")]
    ChannelMismatch { left: usize, right: usize },
    #[error("heatmap is {got}px square, pair geometry expects {expected}px")]
    GridMismatch { expected: usize, got: usize },
    #[error("no view pairs to sum over")]
    EmptyPairSet,
    #[error("view index {index} out of range for {views} views")]
    ViewOutOfRange { index: usize, views: usize },
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
}

/// Loss configuration. `epsilon` floors both log arguments so empty support
/// stays finite; `normalize` rescales each flat to unit sum first, which is
/// what makes the divergence provably nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DivergenceConfig {
    pub epsilon: f64,
    pub normalize: bool,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        Self { epsilon: 1e-6, normalize: false }
    }
}

impl DivergenceConfig {
    pub fn validate(&self) -> bool {
        self.epsilon > 0.0
    }
}

/// Gradients of one pair loss with respect to both source heatmaps; zero
/// wherever the forward pass read no value.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient {
    pub d_p_i: Tensor3,
    pub d_p_j: Tensor3,
}

/// One ordered entry of a scene's pair sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub i: usize,
    pub j: usize,
    pub geom: RectifiedPairGeometry,
}

fn normalized(values: &[f64], on: bool) -> (Vec<f64>, Option<f64>) {
    if !on {
        return (values.to_vec(), None);
    }
    let sum: f64 = values.iter().sum();
    if sum <= 0.0 {
        // Nothing to normalize; fall through to the raw values.
        return (values.to_vec(), None);
    }
    (values.iter().map(|v| v / sum).collect(), Some(sum))
}

/// Chains a gradient with respect to normalized values back to raw values.
fn denormalize_grad(grad_hat: &[f64], hat: &[f64], sum: Option<f64>) -> Vec<f64> {
    let Some(s) = sum else { return grad_hat.to_vec() };
    let dot: f64 = grad_hat.iter().zip(hat).map(|(g, q)| g * q).sum();
    grad_hat.iter().map(|g| (g - dot) / s).collect()
}

fn divergence_with_grad(
    q_i: &FlatDistribution,
    q_ji: &FlatDistribution,
    cfg: &DivergenceConfig,
) -> Result<(f64, Vec<f64>, Vec<f64>), DivergenceError> {
    assert!(cfg.validate(), "epsilon must be positive");
    if q_i.len() != q_ji.len() {
        return Err(DivergenceError::LengthMismatch { left: q_i.len(), right: q_ji.len() });
    }
    let (p_hat, p_sum) = normalized(&q_i.values, cfg.normalize);
    let (q_hat, q_sum) = normalized(&q_ji.values, cfg.normalize);
    let eps = cfg.epsilon;
    let mut loss = 0.0;
    let mut g_p = vec![0.0; p_hat.len()];
    let mut g_q = vec![0.0; q_hat.len()];
    for v in 0..p_hat.len() {
        let (p, q) = (p_hat[v], q_hat[v]);
        let log_ratio = ((p + eps) / (q + eps)).ln();
        loss += p * log_ratio;
        g_p[v] = log_ratio + p / (p + eps);
        g_q[v] = -p / (q + eps);
    }
    let g_p = denormalize_grad(&g_p, &p_hat, p_sum);
    let g_q = denormalize_grad(&g_q, &q_hat, q_sum);
    Ok((loss, g_p, g_q))
}

/// Asymmetric divergence between a view's own flat and the one transferred
/// from its partner. Exactly 0 for identical inputs.
pub fn epipolar_divergence(
    q_i: &FlatDistribution,
    q_ji: &FlatDistribution,
    cfg: &DivergenceConfig,
) -> Result<f64, DivergenceError> {
    divergence_with_grad(q_i, q_ji, cfg).map(|(loss, _, _)| loss)
}

fn check_grid(p: &Heatmap, expected: usize) -> Result<(), DivergenceError> {
    if p.w != expected || p.h != expected {
        return Err(DivergenceError::GridMismatch { expected, got: p.w.max(p.h) });
    }
    Ok(())
}

/// Scatters per-row flat gradients onto the recorded argmax cell of each row.
fn scatter_rows(grad_flat: &[f64], argmax: &[usize], w: usize) -> Vec<f64> {
    let mut grid = vec![0.0; w * grad_flat.len()];
    for (v, (&g, &x)) in grad_flat.iter().zip(argmax).enumerate() {
        grid[v * w + x] = g;
    }
    grid
}

/// Channel-summed pair loss and its gradients with respect to both source
/// heatmaps, differentiated by reverse traversal of the transfer pipeline.
pub fn pair_loss(
    p_i: &Heatmap,
    p_j: &Heatmap,
    geom: &RectifiedPairGeometry,
    cfg: &DivergenceConfig,
) -> Result<(f64, PairGradient), DivergenceError> {
    if p_i.c != p_j.c {
        return Err(DivergenceError::ChannelMismatch { left: p_i.c, right: p_j.c });
    }
    check_grid(p_i, geom.hm_size_i)?;
    check_grid(p_j, geom.hm_size_j)?;
    let (w_i, h_i) = (geom.rect_w_i, geom.rect_h_i);
    let (w_j, h_j) = (geom.rect_w_j, geom.rect_h_j);
    let (ra, rb) = (1.0 / geom.a, -geom.b / geom.a);
    let mut loss = 0.0;
    let mut d_p_i = Tensor3::zeros(p_i.w, p_i.h, p_i.c);
    let mut d_p_j = Tensor3::zeros(p_j.w, p_j.h, p_j.c);
    for c in 0..p_i.c {
        let rect_i = warp(p_i.channel(c), p_i.w, p_i.h, &geom.chain_i, w_i, h_i)?;
        let (q_i, arg_i) = row_max(&rect_i, w_i, h_i);
        let rect_j = warp(p_j.channel(c), p_j.w, p_j.h, &geom.chain_j, w_j, h_j)?;
        let (q_j, arg_j) = row_max(&rect_j, w_j, h_j);
        let q_ji = resample_flat(&q_j, ra, rb, h_i)?;
        let (d, g_qi, g_qji) = divergence_with_grad(&q_i, &q_ji, cfg)?;
        loss += d;

        let grad_rect_i = scatter_rows(&g_qi, &arg_i, w_i);
        let back_i = warp_transpose(&grad_rect_i, w_i, h_i, &geom.chain_i, p_i.w, p_i.h)?;
        for (dst, src) in d_p_i.channel_mut(c).iter_mut().zip(&back_i) {
            *dst += src;
        }

        let g_qj = resample_flat_transpose(&g_qji, ra, rb, h_j)?;
        let grad_rect_j = scatter_rows(&g_qj, &arg_j, w_j);
        let back_j = warp_transpose(&grad_rect_j, w_j, h_j, &geom.chain_j, p_j.w, p_j.h)?;
        for (dst, src) in d_p_j.channel_mut(c).iter_mut().zip(&back_j) {
            *dst += src;
        }
    }
    Ok((loss, PairGradient { d_p_i, d_p_j }))
}

/// Sum of [`pair_loss`] over all ordered pairs with gradients accumulated
/// per view. Reduction is deterministic and sequential in pair order.
pub fn scene_loss(
    heatmaps: &[Heatmap],
    pairs: &[ScenePair],
    cfg: &DivergenceConfig,
) -> Result<(f64, Vec<Tensor3>), DivergenceError> {
    if pairs.is_empty() {
        return Err(DivergenceError::EmptyPairSet);
    }
    let mut grads: Vec<Tensor3> =
        heatmaps.iter().map(|h| Tensor3::zeros(h.w, h.h, h.c)).collect();
    let mut total = 0.0;
    for pair in pairs {
        for &idx in &[pair.i, pair.j] {
            if idx >= heatmaps.len() {
                return Err(DivergenceError::ViewOutOfRange { index: idx, views: heatmaps.len() });
            }
        }
        let (loss, grad) = pair_loss(&heatmaps[pair.i], &heatmaps[pair.j], &pair.geom, cfg)?;
        total += loss;
        grads[pair.i].axpy(1.0, &grad.d_p_i);
        grads[pair.j].axpy(1.0, &grad.d_p_j);
    }
    Ok((total, grads))
}
