//! Forward pass and hand-derived backpropagation.
//!
//! Pipeline: per-image depth normalization → patch embedding → (+position,
//! per-stream, and modal-type embeddings) → pre-norm transformer encoder
//! over the concatenated image+text sequence with PAD keys masked → patch
//! tokens reshaped to a feature grid → alternating 3×3 conv (GELU) and 2×
//! nearest-neighbor upsampling → 1-channel head → softmax over all pixels.
//!
//! Every layer's backward is written out explicitly; `grad_batch` returns
//! exact gradients of the mean loss, verified elsewhere against central
//! finite differences.

use super::params::TensorMap;
use super::tokenizer::TokenSeq;
use super::{ModelConfig, ModelError};
use crate::sim::DepthImage;

/// A normalized affordance heatmap; values are positive and sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl Heatmap {
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Highest-likelihood pixel; ties break to the lowest row-major index.
    pub fn argmax(&self) -> (u32, u32) {
        let mut best = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for (i, &v) in self.data.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        ((best as u32) % self.width, (best as u32) / self.width)
    }
}

/// One training example: observation, tokenized instruction, labeled pixel.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: DepthImage,
    pub tokens: TokenSeq,
    pub target: (u32, u32),
}

const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-6;
const LOG_FLOOR: f64 = 1e-12;
const MASKED_SCORE: f64 = -1e30;

fn gelu(x: f64) -> f64 {
    const C0: f64 = 0.7978845608028654; // sqrt(2/pi)
    const C1: f64 = 0.044715;
    0.5 * x * (1.0 + (C0 * (x + C1 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C0: f64 = 0.7978845608028654;
    const C1: f64 = 0.044715;
    let u = C0 * (x + C1 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C0 * (1.0 + 3.0 * C1 * x * x)
}

// --- dense helpers (row-major flat storage) ---

fn linear(x: &[f64], rows: usize, cin: usize, w: &[f64], cout: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; rows * cout];
    for r in 0..rows {
        let yr = &mut y[r * cout..(r + 1) * cout];
        yr.copy_from_slice(b);
        for ci in 0..cin {
            let xv = x[r * cin + ci];
            if xv == 0.0 {
                continue;
            }
            let wrow = &w[ci * cout..(ci + 1) * cout];
            for (yv, wv) in yr.iter_mut().zip(wrow) {
                *yv += xv * wv;
            }
        }
    }
    y
}

/// Accumulates dw/db and returns dx.
fn linear_backward(
    dy: &[f64],
    x: &[f64],
    rows: usize,
    cin: usize,
    w: &[f64],
    cout: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * cin];
    for r in 0..rows {
        let dyr = &dy[r * cout..(r + 1) * cout];
        for (dbv, dyv) in db.iter_mut().zip(dyr) {
            *dbv += dyv;
        }
        for ci in 0..cin {
            let xv = x[r * cin + ci];
            let wrow = &w[ci * cout..(ci + 1) * cout];
            let dwrow = &mut dw[ci * cout..(ci + 1) * cout];
            let mut acc = 0.0;
            for co in 0..cout {
                acc += dyr[co] * wrow[co];
                dwrow[co] += xv * dyr[co];
            }
            dx[r * cin + ci] = acc;
        }
    }
    dx
}

struct LnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    out: Vec<f64>,
}

fn layer_norm(x: &[f64], rows: usize, d: usize, scale: &[f64], offset: &[f64]) -> LnCache {
    let mut xhat = vec![0.0; rows * d];
    let mut inv_std = vec![0.0; rows];
    let mut out = vec![0.0; rows * d];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = istd;
        for c in 0..d {
            let xh = (row[c] - mean) * istd;
            xhat[r * d + c] = xh;
            out[r * d + c] = xh * scale[c] + offset[c];
        }
    }
    LnCache { xhat, inv_std, out }
}

fn layer_norm_backward(
    dy: &[f64],
    cache: &LnCache,
    rows: usize,
    d: usize,
    scale: &[f64],
    dscale: &mut [f64],
    doffset: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xhr = &cache.xhat[r * d..(r + 1) * d];
        let istd = cache.inv_std[r];
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for c in 0..d {
            dscale[c] += dyr[c] * xhr[c];
            doffset[c] += dyr[c];
            let dxhat = dyr[c] * scale[c];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhr[c];
        }
        let inv_d = 1.0 / d as f64;
        for c in 0..d {
            let dxhat = dyr[c] * scale[c];
            dx[r * d + c] = istd * (dxhat - inv_d * sum_dxhat - xhr[c] * inv_d * sum_dxhat_xhat);
        }
    }
    dx
}

// --- conv helpers: channel-major [C][G][G] flat storage ---

fn conv3x3(x: &[f64], cin: usize, g: usize, w: &[f64], cout: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; cout * g * g];
    for co in 0..cout {
        let plane = &mut y[co * g * g..(co + 1) * g * g];
        for v in plane.iter_mut() {
            *v = b[co];
        }
    }
    for ci in 0..cin {
        let xin = &x[ci * g * g..(ci + 1) * g * g];
        for ky in 0..3usize {
            for kx in 0..3usize {
                for co in 0..cout {
                    let wv = w[((ky * 3 + kx) * cin + ci) * cout + co];
                    if wv == 0.0 {
                        continue;
                    }
                    let plane = &mut y[co * g * g..(co + 1) * g * g];
                    for yy in 0..g {
                        let iy = yy as isize + ky as isize - 1;
                        if iy < 0 || iy >= g as isize {
                            continue;
                        }
                        let row_in = &xin[(iy as usize) * g..(iy as usize + 1) * g];
                        let row_out = &mut plane[yy * g..(yy + 1) * g];
                        // kx-1 shifts the input row against the output row.
                        match kx {
                            0 => {
                                for xx in 1..g {
                                    row_out[xx] += wv * row_in[xx - 1];
                                }
                            }
                            1 => {
                                for xx in 0..g {
                                    row_out[xx] += wv * row_in[xx];
                                }
                            }
                            _ => {
                                for xx in 0..g - 1 {
                                    row_out[xx] += wv * row_in[xx + 1];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

fn conv3x3_backward(
    dy: &[f64],
    x: &[f64],
    cin: usize,
    g: usize,
    w: &[f64],
    cout: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; cin * g * g];
    for co in 0..cout {
        let dplane = &dy[co * g * g..(co + 1) * g * g];
        db[co] += dplane.iter().sum::<f64>();
    }
    for ci in 0..cin {
        let xin = &x[ci * g * g..(ci + 1) * g * g];
        let dxin = &mut dx[ci * g * g..(ci + 1) * g * g];
        for ky in 0..3usize {
            for kx in 0..3usize {
                for co in 0..cout {
                    let widx = ((ky * 3 + kx) * cin + ci) * cout + co;
                    let wv = w[widx];
                    let dplane = &dy[co * g * g..(co + 1) * g * g];
                    let mut dw_acc = 0.0;
                    for yy in 0..g {
                        let iy = yy as isize + ky as isize - 1;
                        if iy < 0 || iy >= g as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for xx in 0..g {
                            let ix = xx as isize + kx as isize - 1;
                            if ix < 0 || ix >= g as isize {
                                continue;
                            }
                            let ix = ix as usize;
                            let gout = dplane[yy * g + xx];
                            dw_acc += xin[iy * g + ix] * gout;
                            dxin[iy * g + ix] += wv * gout;
                        }
                    }
                    dw[widx] += dw_acc;
                }
            }
        }
    }
    dx
}

fn upsample2x(x: &[f64], c: usize, g: usize) -> Vec<f64> {
    let g2 = g * 2;
    let mut y = vec![0.0; c * g2 * g2];
    for ch in 0..c {
        for yy in 0..g2 {
            for xx in 0..g2 {
                y[ch * g2 * g2 + yy * g2 + xx] = x[ch * g * g + (yy / 2) * g + xx / 2];
            }
        }
    }
    y
}

fn upsample2x_backward(dy: &[f64], c: usize, g: usize) -> Vec<f64> {
    let g2 = g * 2;
    let mut dx = vec![0.0; c * g * g];
    for ch in 0..c {
        for yy in 0..g2 {
            for xx in 0..g2 {
                dx[ch * g * g + (yy / 2) * g + xx / 2] += dy[ch * g2 * g2 + yy * g2 + xx];
            }
        }
    }
    dx
}

// --- caches ---

struct LayerCache {
    ln1: LnCache,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>, // [heads][S][S]
    ctx: Vec<f64>,
    ln2: LnCache,
    mlp_pre: Vec<f64>,
    mlp_hidden: Vec<f64>,
}

struct StageCache {
    input: Vec<f64>,
    pre_act: Vec<f64>,
    grid: usize,
}

pub(crate) struct ForwardCache {
    patches: Vec<f64>,
    token_ids: Vec<u32>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    stages: Vec<StageCache>,
    head_input: Vec<f64>,
    probs: Vec<f64>,
}

fn check_inputs(
    config: &ModelConfig,
    image: &DepthImage,
    tokens: &TokenSeq,
) -> Result<(), ModelError> {
    if image.width as usize != config.image_size || image.height as usize != config.image_size {
        return Err(ModelError::ShapeMismatch {
            expected: format!("{0}x{0} image", config.image_size),
            actual: format!("{}x{}", image.width, image.height),
        });
    }
    if tokens.ids.len() != config.max_text_len {
        return Err(ModelError::ShapeMismatch {
            expected: format!("{} token ids", config.max_text_len),
            actual: format!("{}", tokens.ids.len()),
        });
    }
    if tokens.ids.iter().any(|&id| id as usize >= config.vocab_size) {
        return Err(ModelError::ShapeMismatch {
            expected: format!("token ids below {}", config.vocab_size),
            actual: "out-of-range token id".to_string(),
        });
    }
    Ok(())
}

/// Per-image depth normalization to [0, 1].
fn normalize_depth(image: &DepthImage) -> Vec<f64> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in &image.data {
        let v = v as f64;
        min = min.min(v);
        max = max.max(v);
    }
    image.data.iter().map(|&v| (v as f64 - min) / (max - min + NORM_EPS)).collect()
}

fn forward_cached(
    params: &TensorMap,
    config: &ModelConfig,
    image: &DepthImage,
    tokens: &TokenSeq,
) -> Result<(Heatmap, ForwardCache), ModelError> {
    check_inputs(config, image, tokens)?;
    let d = config.embed_dim;
    let p = config.patch_size;
    let g0 = config.patch_grid();
    let n = config.patch_count();
    let t_len = config.max_text_len;
    let s_len = n + t_len;
    let h = config.image_size;

    let norm = normalize_depth(image);

    // Patch extraction: patches are row-major over the grid, pixels
    // row-major within a patch.
    let mut patches = vec![0.0; n * p * p];
    for pi in 0..n {
        let px0 = (pi % g0) * p;
        let py0 = (pi / g0) * p;
        for dy in 0..p {
            for dx in 0..p {
                patches[pi * p * p + dy * p + dx] = norm[(py0 + dy) * h + px0 + dx];
            }
        }
    }

    // Embed both streams.
    let mut x = vec![0.0; s_len * d];
    {
        let e = linear(
            &patches,
            n,
            p * p,
            &params.get("patch_proj_w").data,
            d,
            &params.get("patch_proj_b").data,
        );
        let img_pos = &params.get("img_pos").data;
        let img_stream = &params.get("img_stream").data;
        let modal_img = &params.get("modal_img").data;
        for pi in 0..n {
            for c in 0..d {
                x[pi * d + c] = e[pi * d + c] + img_pos[pi * d + c] + img_stream[c] + modal_img[c];
            }
        }
        let token_embedding = &params.get("token_embedding").data;
        let txt_pos = &params.get("txt_pos").data;
        let txt_stream = &params.get("txt_stream").data;
        let modal_txt = &params.get("modal_txt").data;
        for ti in 0..t_len {
            let id = tokens.ids[ti] as usize;
            for c in 0..d {
                x[(n + ti) * d + c] =
                    token_embedding[id * d + c] + txt_pos[ti * d + c] + txt_stream[c] + modal_txt[c];
            }
        }
    }

    // PAD positions (beyond the true text length) are masked as attention
    // keys.
    let key_ok: Vec<bool> = (0..s_len).map(|si| si < n || si - n < tokens.len).collect();

    let heads = config.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut layers = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let pre = |suffix: &str| format!("layer{l}.{suffix}");
        let x_in = x.clone();
        let ln1 = layer_norm(
            &x_in,
            s_len,
            d,
            &params.get(&pre("ln1_scale")).data,
            &params.get(&pre("ln1_offset")).data,
        );
        let q = linear(&ln1.out, s_len, d, &params.get(&pre("attn_q_w")).data, d, &params.get(&pre("attn_q_b")).data);
        let k = linear(&ln1.out, s_len, d, &params.get(&pre("attn_k_w")).data, d, &params.get(&pre("attn_k_b")).data);
        let v = linear(&ln1.out, s_len, d, &params.get(&pre("attn_v_w")).data, d, &params.get(&pre("attn_v_b")).data);

        let mut attn = vec![0.0; heads * s_len * s_len];
        let mut ctx = vec![0.0; s_len * d];
        for hh in 0..heads {
            let off = hh * dh;
            for i in 0..s_len {
                let arow = &mut attn[(hh * s_len + i) * s_len..(hh * s_len + i + 1) * s_len];
                let mut max_score = f64::NEG_INFINITY;
                for j in 0..s_len {
                    let score = if key_ok[j] {
                        let mut dot = 0.0;
                        for c in 0..dh {
                            dot += q[i * d + off + c] * k[j * d + off + c];
                        }
                        dot * scale
                    } else {
                        MASKED_SCORE
                    };
                    arow[j] = score;
                    if key_ok[j] && score > max_score {
                        max_score = score;
                    }
                }
                let mut denom = 0.0;
                for j in 0..s_len {
                    let e = (arow[j] - max_score).exp();
                    arow[j] = e;
                    denom += e;
                }
                let inv = 1.0 / denom;
                for j in 0..s_len {
                    arow[j] *= inv;
                }
                for c in 0..dh {
                    let mut acc = 0.0;
                    for j in 0..s_len {
                        acc += arow[j] * v[j * d + off + c];
                    }
                    ctx[i * d + off + c] = acc;
                }
            }
        }
        let attn_out = linear(&ctx, s_len, d, &params.get(&pre("attn_o_w")).data, d, &params.get(&pre("attn_o_b")).data);
        let mut x_mid = x_in.clone();
        for i in 0..s_len * d {
            x_mid[i] += attn_out[i];
        }

        let ln2 = layer_norm(
            &x_mid,
            s_len,
            d,
            &params.get(&pre("ln2_scale")).data,
            &params.get(&pre("ln2_offset")).data,
        );
        let mlp_pre = linear(&ln2.out, s_len, d, &params.get(&pre("mlp_w1")).data, config.mlp_hidden, &params.get(&pre("mlp_b1")).data);
        let mlp_hidden: Vec<f64> = mlp_pre.iter().map(|&v| gelu(v)).collect();
        let mlp_out = linear(&mlp_hidden, s_len, config.mlp_hidden, &params.get(&pre("mlp_w2")).data, d, &params.get(&pre("mlp_b2")).data);
        x = x_mid.clone();
        for i in 0..s_len * d {
            x[i] += mlp_out[i];
        }

        layers.push(LayerCache { ln1, q, k, v, attn, ctx, ln2, mlp_pre, mlp_hidden });
    }

    let lnf = layer_norm(&x, s_len, d, &params.get("ln_f_scale").data, &params.get("ln_f_offset").data);

    // Patch tokens → channel-major feature grid.
    let mut fmap = vec![0.0; d * g0 * g0];
    for pi in 0..n {
        for c in 0..d {
            fmap[c * g0 * g0 + pi] = lnf.out[pi * d + c];
        }
    }

    let channels = config.decoder_channels();
    let mut stages = Vec::with_capacity(config.decoder_stages);
    let mut grid = g0;
    let mut current = fmap;
    for s in 0..config.decoder_stages {
        let w = &params.get(&format!("decoder{s}_w")).data;
        let b = &params.get(&format!("decoder{s}_b")).data;
        let pre_act = conv3x3(&current, channels[s], grid, w, channels[s + 1], b);
        let activated: Vec<f64> = pre_act.iter().map(|&v| gelu(v)).collect();
        let upsampled = upsample2x(&activated, channels[s + 1], grid);
        stages.push(StageCache { input: current, pre_act, grid });
        current = upsampled;
        grid *= 2;
    }
    debug_assert_eq!(grid, h);

    let head_input = current;
    let logits = conv3x3(
        &head_input,
        *channels.last().unwrap(),
        h,
        &params.get("head_w").data,
        1,
        &params.get("head_b").data,
    );

    // Softmax over all pixels.
    let max_logit = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|&v| (v - max_logit).exp()).collect();
    let denom: f64 = probs.iter().sum();
    for v in &mut probs {
        *v /= denom;
    }

    let heatmap = Heatmap { width: h as u32, height: h as u32, data: probs.clone() };
    let cache = ForwardCache {
        patches,
        token_ids: tokens.ids.clone(),
        layers,
        lnf,
        stages,
        head_input,
        probs,
    };
    Ok((heatmap, cache))
}

/// Runs the model on one observation/instruction pair.
pub fn forward(
    params: &TensorMap,
    config: &ModelConfig,
    image: &DepthImage,
    tokens: &TokenSeq,
) -> Result<Heatmap, ModelError> {
    forward_cached(params, config, image, tokens).map(|(h, _)| h)
}

/// Cross-entropy of the heatmap at the labeled pixel, floored to avoid −∞.
pub fn heatmap_loss(heatmap: &Heatmap, target: (u32, u32)) -> f64 {
    let idx = (target.1 * heatmap.width + target.0) as usize;
    -heatmap.data[idx].max(LOG_FLOOR).ln()
}

/// Backpropagates one sample's loss, scaled by `scale`, into `grads`.
/// Returns the sample's loss.
fn backward_into(
    params: &TensorMap,
    config: &ModelConfig,
    cache: &ForwardCache,
    target: (u32, u32),
    scale_factor: f64,
    grads: &mut TensorMap,
) -> f64 {
    let d = config.embed_dim;
    let p = config.patch_size;
    let g0 = config.patch_grid();
    let n = config.patch_count();
    let t_len = config.max_text_len;
    let s_len = n + t_len;
    let h = config.image_size;
    let channels = config.decoder_channels();

    let target_idx = (target.1 as usize) * h + target.0 as usize;
    let loss = -cache.probs[target_idx].max(LOG_FLOOR).ln();

    // Softmax + cross-entropy: dlogits = p − onehot(target).
    let mut dlogits: Vec<f64> = cache.probs.iter().map(|&v| v * scale_factor).collect();
    dlogits[target_idx] -= scale_factor;

    // Head conv. Weight/bias gradient buffers are taken out of the map and
    // put back so the helper can borrow both at once.
    let c_last = *channels.last().unwrap();
    let d_head_input = {
        let mut dwv = std::mem::take(&mut grads.get_mut("head_w").data);
        let mut dbv = std::mem::take(&mut grads.get_mut("head_b").data);
        let dx = conv3x3_backward(
            &dlogits,
            &cache.head_input,
            c_last,
            h,
            &params.get("head_w").data,
            1,
            &mut dwv,
            &mut dbv,
        );
        grads.get_mut("head_w").data = dwv;
        grads.get_mut("head_b").data = dbv;
        dx
    };

    // Decoder stages in reverse.
    let mut d_current = d_head_input;
    for s in (0..config.decoder_stages).rev() {
        let stage = &cache.stages[s];
        let d_activated = upsample2x_backward(&d_current, channels[s + 1], stage.grid);
        let mut d_pre = d_activated;
        for (dv, &pre) in d_pre.iter_mut().zip(&stage.pre_act) {
            *dv *= gelu_grad(pre);
        }
        let mut dwv = std::mem::take(&mut grads.get_mut(&format!("decoder{s}_w")).data);
        let mut dbv = std::mem::take(&mut grads.get_mut(&format!("decoder{s}_b")).data);
        d_current = conv3x3_backward(
            &d_pre,
            &stage.input,
            channels[s],
            stage.grid,
            &params.get(&format!("decoder{s}_w")).data,
            channels[s + 1],
            &mut dwv,
            &mut dbv,
        );
        grads.get_mut(&format!("decoder{s}_w")).data = dwv;
        grads.get_mut(&format!("decoder{s}_b")).data = dbv;
    }

    // Feature grid → sequence rows (text rows receive no decoder gradient).
    let mut d_lnf_out = vec![0.0; s_len * d];
    for pi in 0..n {
        for c in 0..d {
            d_lnf_out[pi * d + c] = d_current[c * g0 * g0 + pi];
        }
    }

    let mut d_x = {
        let mut dscale = std::mem::take(&mut grads.get_mut("ln_f_scale").data);
        let mut doffset = std::mem::take(&mut grads.get_mut("ln_f_offset").data);
        let dx = layer_norm_backward(
            &d_lnf_out,
            &cache.lnf,
            s_len,
            d,
            &params.get("ln_f_scale").data,
            &mut dscale,
            &mut doffset,
        );
        grads.get_mut("ln_f_scale").data = dscale;
        grads.get_mut("ln_f_offset").data = doffset;
        dx
    };

    let heads = config.heads;
    let dh = d / heads;
    let attn_scale = 1.0 / (dh as f64).sqrt();

    for l in (0..config.layers).rev() {
        let pre = |suffix: &str| format!("layer{l}.{suffix}");
        let lc = &cache.layers[l];
        let m = config.mlp_hidden;

        // MLP branch: x = x_mid + mlp_out.
        let d_mlp_out = d_x.clone();
        let mut dw2 = std::mem::take(&mut grads.get_mut(&pre("mlp_w2")).data);
        let mut db2 = std::mem::take(&mut grads.get_mut(&pre("mlp_b2")).data);
        let d_hidden = linear_backward(
            &d_mlp_out,
            &lc.mlp_hidden,
            s_len,
            m,
            &params.get(&pre("mlp_w2")).data,
            d,
            &mut dw2,
            &mut db2,
        );
        grads.get_mut(&pre("mlp_w2")).data = dw2;
        grads.get_mut(&pre("mlp_b2")).data = db2;

        let mut d_mlp_pre = d_hidden;
        for (dv, &prev) in d_mlp_pre.iter_mut().zip(&lc.mlp_pre) {
            *dv *= gelu_grad(prev);
        }
        let mut dw1 = std::mem::take(&mut grads.get_mut(&pre("mlp_w1")).data);
        let mut db1 = std::mem::take(&mut grads.get_mut(&pre("mlp_b1")).data);
        let d_ln2_out = linear_backward(
            &d_mlp_pre,
            &lc.ln2.out,
            s_len,
            d,
            &params.get(&pre("mlp_w1")).data,
            m,
            &mut dw1,
            &mut db1,
        );
        grads.get_mut(&pre("mlp_w1")).data = dw1;
        grads.get_mut(&pre("mlp_b1")).data = db1;

        let mut dscale2 = std::mem::take(&mut grads.get_mut(&pre("ln2_scale")).data);
        let mut doffset2 = std::mem::take(&mut grads.get_mut(&pre("ln2_offset")).data);
        let d_x_mid_from_mlp = layer_norm_backward(
            &d_ln2_out,
            &lc.ln2,
            s_len,
            d,
            &params.get(&pre("ln2_scale")).data,
            &mut dscale2,
            &mut doffset2,
        );
        grads.get_mut(&pre("ln2_scale")).data = dscale2;
        grads.get_mut(&pre("ln2_offset")).data = doffset2;

        let mut d_x_mid = d_x;
        for i in 0..s_len * d {
            d_x_mid[i] += d_x_mid_from_mlp[i];
        }

        // Attention branch: x_mid = x_in + attn_out.
        let d_attn_out = d_x_mid.clone();
        let mut dwo = std::mem::take(&mut grads.get_mut(&pre("attn_o_w")).data);
        let mut dbo = std::mem::take(&mut grads.get_mut(&pre("attn_o_b")).data);
        let d_ctx = linear_backward(
            &d_attn_out,
            &lc.ctx,
            s_len,
            d,
            &params.get(&pre("attn_o_w")).data,
            d,
            &mut dwo,
            &mut dbo,
        );
        grads.get_mut(&pre("attn_o_w")).data = dwo;
        grads.get_mut(&pre("attn_o_b")).data = dbo;

        let mut dq = vec![0.0; s_len * d];
        let mut dk = vec![0.0; s_len * d];
        let mut dv = vec![0.0; s_len * d];
        for hh in 0..heads {
            let off = hh * dh;
            for i in 0..s_len {
                let arow = &lc.attn[(hh * s_len + i) * s_len..(hh * s_len + i + 1) * s_len];
                // d_attn from context accumulation, plus softmax backward.
                let mut d_arow = vec![0.0; s_len];
                for j in 0..s_len {
                    let mut acc = 0.0;
                    for c in 0..dh {
                        acc += d_ctx[i * d + off + c] * lc.v[j * d + off + c];
                    }
                    d_arow[j] = acc;
                }
                for j in 0..s_len {
                    if arow[j] == 0.0 {
                        continue;
                    }
                    for c in 0..dh {
                        dv[j * d + off + c] += arow[j] * d_ctx[i * d + off + c];
                    }
                }
                let dot: f64 = d_arow.iter().zip(arow).map(|(dv, av)| dv * av).sum();
                for j in 0..s_len {
                    let ds = arow[j] * (d_arow[j] - dot) * attn_scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..dh {
                        dq[i * d + off + c] += ds * lc.k[j * d + off + c];
                        dk[j * d + off + c] += ds * lc.q[i * d + off + c];
                    }
                }
            }
        }

        let mut d_ln1_out = vec![0.0; s_len * d];
        for (w_name, b_name, dvec) in [
            ("attn_q_w", "attn_q_b", &dq),
            ("attn_k_w", "attn_k_b", &dk),
            ("attn_v_w", "attn_v_b", &dv),
        ] {
            let mut dwv = std::mem::take(&mut grads.get_mut(&pre(w_name)).data);
            let mut dbv = std::mem::take(&mut grads.get_mut(&pre(b_name)).data);
            let dx_part = linear_backward(
                dvec,
                &lc.ln1.out,
                s_len,
                d,
                &params.get(&pre(w_name)).data,
                d,
                &mut dwv,
                &mut dbv,
            );
            grads.get_mut(&pre(w_name)).data = dwv;
            grads.get_mut(&pre(b_name)).data = dbv;
            for i in 0..s_len * d {
                d_ln1_out[i] += dx_part[i];
            }
        }

        let mut dscale1 = std::mem::take(&mut grads.get_mut(&pre("ln1_scale")).data);
        let mut doffset1 = std::mem::take(&mut grads.get_mut(&pre("ln1_offset")).data);
        let d_x_in_from_attn = layer_norm_backward(
            &d_ln1_out,
            &lc.ln1,
            s_len,
            d,
            &params.get(&pre("ln1_scale")).data,
            &mut dscale1,
            &mut doffset1,
        );
        grads.get_mut(&pre("ln1_scale")).data = dscale1;
        grads.get_mut(&pre("ln1_offset")).data = doffset1;

        d_x = d_x_mid;
        for i in 0..s_len * d {
            d_x[i] += d_x_in_from_attn[i];
        }
    }

    // Embedding gradients.
    {
        let mut dwv = std::mem::take(&mut grads.get_mut("patch_proj_w").data);
        let mut dbv = std::mem::take(&mut grads.get_mut("patch_proj_b").data);
        // The patch projection sees only the image rows.
        let d_img_rows = &d_x[..n * d];
        let _ = linear_backward(
            d_img_rows,
            &cache.patches,
            n,
            p * p,
            &params.get("patch_proj_w").data,
            d,
            &mut dwv,
            &mut dbv,
        );
        grads.get_mut("patch_proj_w").data = dwv;
        grads.get_mut("patch_proj_b").data = dbv;
    }
    {
        let d_img_pos = &mut grads.get_mut("img_pos").data;
        for pi in 0..n {
            for c in 0..d {
                d_img_pos[pi * d + c] += d_x[pi * d + c];
            }
        }
    }
    {
        let d_img_stream = &mut grads.get_mut("img_stream").data;
        for pi in 0..n {
            for c in 0..d {
                d_img_stream[c] += d_x[pi * d + c];
            }
        }
    }
    {
        let d_modal = &mut grads.get_mut("modal_img").data;
        for pi in 0..n {
            for c in 0..d {
                d_modal[c] += d_x[pi * d + c];
            }
        }
    }
    {
        let d_tok = &mut grads.get_mut("token_embedding").data;
        for ti in 0..t_len {
            let id = cache.token_ids[ti] as usize;
            for c in 0..d {
                d_tok[id * d + c] += d_x[(n + ti) * d + c];
            }
        }
    }
    {
        let d_txt_pos = &mut grads.get_mut("txt_pos").data;
        for ti in 0..t_len {
            for c in 0..d {
                d_txt_pos[ti * d + c] += d_x[(n + ti) * d + c];
            }
        }
    }
    {
        let d_txt_stream = &mut grads.get_mut("txt_stream").data;
        for ti in 0..t_len {
            for c in 0..d {
                d_txt_stream[c] += d_x[(n + ti) * d + c];
            }
        }
    }
    {
        let d_modal = &mut grads.get_mut("modal_txt").data;
        for ti in 0..t_len {
            for c in 0..d {
                d_modal[c] += d_x[(n + ti) * d + c];
            }
        }
    }

    loss
}

/// Exact gradients of the mean loss over a batch, accumulated sample by
/// sample in a fixed order.
pub fn grad_batch(
    params: &TensorMap,
    config: &ModelConfig,
    batch: &[TrainSample],
) -> Result<(f64, TensorMap), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut grads = params.zeros_like();
    let scale = 1.0 / batch.len() as f64;
    let mut total_loss = 0.0;
    for sample in batch {
        let (_, cache) = forward_cached(params, config, &sample.image, &sample.tokens)?;
        total_loss += backward_into(params, config, &cache, sample.target, scale, &mut grads);
    }
    let mean_loss = total_loss * scale;
    if !mean_loss.is_finite() || !grads.is_finite() {
        return Err(ModelError::TrainingDiverged("non-finite loss or gradient".to_string()));
    }
    Ok((mean_loss, grads))
}

/// Argmax pixel of the heatmap for an observation/instruction pair.
pub fn predict_point(
    params: &TensorMap,
    config: &ModelConfig,
    image: &DepthImage,
    tokens: &TokenSeq,
) -> Result<(u32, u32), ModelError> {
    Ok(forward(params, config, image, tokens)?.argmax())
}
