//! The full forecaster: instance normalization, patch embedding, operator
//! layers with every SSM variant, the spectral variable kernel, the linear
//! prediction head, and the zero-padded autoregressive mode.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{adam_step, AdamConfig, AdamState, NodeId, ParamStore, Tape, Value};
use crate::data::{windows, DataError, DatasetFrame, Split};
use crate::hippo::{
    build_legs, build_legs_normal, build_legt, build_legt_normal, diagonalize, HippoError,
};
use crate::legp::{build_two_scale, LegpError, TwoScaleOperators};
use crate::tensor::{matexp, RealMatrix, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("variant mismatch: {0}")]
    VariantMismatch(String),
    #[error("loss diverged to a non-finite value at step {0}")]
    DivergedLoss(usize),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Hippo(#[from] HippoError),
    #[error(transparent)]
    Legp(#[from] LegpError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    S4DReal,
    LegSComplex,
    LegTComplex,
    LegPComplex,
    LegSDense,
    LegTDense,
    RobustB,
    FullSelect,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::S4DReal,
        Variant::LegSComplex,
        Variant::LegTComplex,
        Variant::LegPComplex,
        Variant::LegSDense,
        Variant::LegTDense,
        Variant::RobustB,
        Variant::FullSelect,
    ];

    pub fn parse(s: &str) -> Option<Variant> {
        match s.to_ascii_lowercase().as_str() {
            "s4d-real" | "s4dreal" => Some(Variant::S4DReal),
            "legs" | "legs-complex" | "legscomplex" => Some(Variant::LegSComplex),
            "legt" | "legt-complex" | "legtcomplex" => Some(Variant::LegTComplex),
            "legp" | "legp-complex" | "legpcomplex" => Some(Variant::LegPComplex),
            "legs-dense" | "legsdense" => Some(Variant::LegSDense),
            "legt-dense" | "legtdense" => Some(Variant::LegTDense),
            "robust-b" | "robustb" => Some(Variant::RobustB),
            "full-select" | "fullselect" => Some(Variant::FullSelect),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::S4DReal => "s4d-real",
            Variant::LegSComplex => "legs",
            Variant::LegTComplex => "legt",
            Variant::LegPComplex => "legp",
            Variant::LegSDense => "legs-dense",
            Variant::LegTDense => "legt-dense",
            Variant::RobustB => "robust-b",
            Variant::FullSelect => "full-select",
        }
    }

    fn is_complex(&self) -> bool {
        matches!(
            self,
            Variant::LegSComplex | Variant::LegTComplex | Variant::LegPComplex
        )
    }

    fn is_dense(&self) -> bool {
        matches!(self, Variant::LegSDense | Variant::LegTDense)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub patch_len: usize,
    pub d_model: usize,
    pub d_state: usize,
    pub n_layers: usize,
    pub n_channels: usize,
    pub variant: Variant,
    pub variable_kernel: bool,
    pub k_modes: usize,
    pub ar_pad: usize,
    pub legp_scales: usize,
    pub without_w: bool,
    pub without_v: bool,
    pub identity_activation: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lookback: 96,
            horizon: 96,
            patch_len: 16,
            d_model: 256,
            d_state: 64,
            n_layers: 2,
            n_channels: 1,
            variant: Variant::S4DReal,
            variable_kernel: false,
            k_modes: 64,
            ar_pad: 0,
            legp_scales: 3,
            without_w: false,
            without_v: false,
            identity_activation: false,
        }
    }
}

impl ModelConfig {
    /// Token count over the padded input length; stride equals patch_len.
    pub fn n_tokens(&self) -> usize {
        (self.lookback + self.ar_pad).div_ceil(self.patch_len)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::VariantMismatch(msg.to_string()));
        if self.lookback < 2 || self.horizon == 0 || self.patch_len == 0 {
            return bad("lookback >= 2, horizon >= 1, patch_len >= 1 required");
        }
        if self.d_model == 0 || self.d_state == 0 || self.n_layers == 0 || self.n_channels == 0 {
            return bad("model dimensions must be positive");
        }
        if self.variant == Variant::LegPComplex && self.d_state > 64 {
            return bad("legp variant limited to d_state <= 64");
        }
        Ok(())
    }
}

/// Per-channel statistics of one lookback window; std floored at 1e-5.
#[derive(Debug, Clone)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn instance_normalize(u: &[f64], rows: usize, channels: usize) -> (Vec<f64>, NormStats) {
    assert_eq!(u.len(), rows * channels);
    assert!(rows >= 2, "normalization needs at least two rows");
    let mut mean = vec![0.0; channels];
    let mut std = vec![0.0; channels];
    for d in 0..channels {
        let mut m = 0.0;
        for r in 0..rows {
            m += u[r * channels + d];
        }
        m /= rows as f64;
        let mut var = 0.0;
        for r in 0..rows {
            let dv = u[r * channels + d] - m;
            var += dv * dv;
        }
        var /= rows as f64;
        mean[d] = m;
        std[d] = var.sqrt().max(1e-5);
    }
    let mut out = vec![0.0; u.len()];
    for r in 0..rows {
        for d in 0..channels {
            out[r * channels + d] = (u[r * channels + d] - mean[d]) / std[d];
        }
    }
    (out, NormStats { mean, std })
}

pub fn denormalize(y: &[f64], channels: usize, stats: &NormStats) -> Vec<f64> {
    y.iter()
        .enumerate()
        .map(|(i, &v)| v * stats.std[i % channels] + stats.mean[i % channels])
        .collect()
}

/// Apply stats in the forward direction to an arbitrary (rows, channels)
/// block, used to carry targets into normalized space.
pub fn normalize_with(y: &[f64], channels: usize, stats: &NormStats) -> Vec<f64> {
    y.iter()
        .enumerate()
        .map(|(i, &v)| (v - stats.mean[i % channels]) / stats.std[i % channels])
        .collect()
}

/// Frozen numerical structure shared by all layers of a variant.
#[derive(Debug, Clone, Default)]
struct Frozen {
    lambda: Option<(Vec<f64>, Vec<f64>)>,
    v: Option<(RealMatrix, RealMatrix)>,
    dense: Option<(RealMatrix, Vec<f64>)>,
    two_scale: Option<TwoScaleOperators>,
}

#[derive(Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub seed: u64,
    frozen: Frozen,
}

fn uniform(rng: &mut StdRng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// softplus^{-1}(0.1), the bias putting initial step sizes near 0.1.
const DELTA_BIAS: f64 = -2.2521684610440907;

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model, ModelError> {
        config.validate()?;
        let frozen = build_frozen(&config)?;
        let mut rng = StdRng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (p, dm, n, h) = (
            config.patch_len,
            config.d_model,
            config.d_state,
            config.horizon,
        );
        let t_total = config.n_tokens();

        let s_embed = 1.0 / (p as f64).sqrt();
        params.insert("embed.p", Value::new(vec![p, dm], uniform(&mut rng, p * dm, s_embed)), true);
        params.insert("embed.p_b", Value::zeros(vec![dm]), true);

        let s_dm = 1.0 / (dm as f64).sqrt();
        for l in 0..config.n_layers {
            params.insert(
                &format!("l{l}.w"),
                Value::new(vec![dm, dm], uniform(&mut rng, dm * dm, s_dm)),
                true,
            );
            params.insert(&format!("l{l}.w_b"), Value::zeros(vec![dm]), true);
            if !config.variant.is_dense() {
                params.insert(
                    &format!("l{l}.wd"),
                    Value::new(vec![dm, dm], uniform(&mut rng, dm * dm, s_dm)),
                    true,
                );
                params.insert(
                    &format!("l{l}.wd_b"),
                    Value::new(vec![dm], vec![DELTA_BIAS; dm]),
                    true,
                );
            }
            match config.variant {
                Variant::S4DReal => {
                    let log_a: Vec<f64> = (0..n).map(|j| ((j + 1) as f64).ln()).collect();
                    params.insert(&format!("l{l}.log_a"), Value::new(vec![n], log_a), true);
                    insert_linear_bc(&mut params, &mut rng, l, dm, n, true, true);
                }
                Variant::LegSComplex | Variant::LegTComplex | Variant::LegPComplex => {
                    let (lr, li) = frozen.lambda.as_ref().unwrap();
                    params.insert(&format!("l{l}.lam_re"), Value::new(vec![n], lr.clone()), true);
                    params.insert(&format!("l{l}.lam_im"), Value::new(vec![n], li.clone()), true);
                    insert_linear_bc(&mut params, &mut rng, l, dm, n, true, true);
                    if config.variant == Variant::LegPComplex && config.legp_scales > 0 {
                        let ts = frozen.two_scale.as_ref().unwrap();
                        params.insert(
                            &format!("l{l}.h_left"),
                            Value::new(vec![n, n], ts.h_left.data.clone()),
                            true,
                        );
                        params.insert(
                            &format!("l{l}.h_right"),
                            Value::new(vec![n, n], ts.h_right.data.clone()),
                            true,
                        );
                    }
                }
                Variant::LegSDense | Variant::LegTDense => {
                    let s_n = 1.0 / (n as f64).sqrt();
                    params.insert(
                        &format!("l{l}.c_dense"),
                        Value::new(vec![dm, n], uniform(&mut rng, dm * n, s_n)),
                        true,
                    );
                }
                Variant::RobustB => {
                    let log_a: Vec<f64> = (0..n).map(|j| ((j + 1) as f64).ln()).collect();
                    params.insert(&format!("l{l}.log_a"), Value::new(vec![n], log_a), true);
                    params.insert(&format!("l{l}.b_vec"), Value::new(vec![n], vec![1.0; n]), true);
                    insert_linear_bc(&mut params, &mut rng, l, dm, n, false, true);
                }
                Variant::FullSelect => {
                    insert_linear_bc(&mut params, &mut rng, l, dm, n, true, true);
                    params.insert(
                        &format!("l{l}.wl"),
                        Value::new(vec![dm, n], uniform(&mut rng, dm * n, s_dm)),
                        true,
                    );
                    params.insert(&format!("l{l}.wl_b"), Value::zeros(vec![n]), true);
                }
            }
        }
        if config.variable_kernel {
            let d = config.n_channels;
            params.insert("vk.w_re", Value::new(vec![d], vec![1.0; d]), true);
            params.insert("vk.w_im", Value::zeros(vec![d]), true);
        }
        let width = t_total * dm;
        let s_head = 1.0 / (width as f64).sqrt();
        params.insert(
            "head.q",
            Value::new(vec![width, h], uniform(&mut rng, width * h, s_head)),
            true,
        );
        params.insert("head.q_b", Value::zeros(vec![h]), true);
        Ok(Model { config, params, seed, frozen })
    }

    /// Normalize, AR-pad with zeros, patch with last-value tail padding,
    /// and lay tokens out as (tokens * channels, patch_len).
    fn prepare_tokens(&self, input: &[f64]) -> (Vec<f64>, NormStats) {
        let c = &self.config;
        let (l, d, p) = (c.lookback, c.n_channels, c.patch_len);
        assert_eq!(input.len(), l * d, "input length mismatch");
        let (u_norm, stats) = instance_normalize(input, l, d);
        let padded_len = l + c.ar_pad;
        let t_total = c.n_tokens();
        let full_len = t_total * p;
        let mut series = vec![0.0; full_len * d];
        series[..l * d].copy_from_slice(&u_norm);
        // zeros fill the AR region; the patch tail repeats the last row
        let last_row_start = (padded_len - 1) * d;
        for r in padded_len..full_len {
            for ch in 0..d {
                series[r * d + ch] = series[last_row_start + ch];
            }
        }
        let mut tokens = vec![0.0; t_total * d * p];
        for t in 0..t_total {
            for ch in 0..d {
                for j in 0..p {
                    tokens[(t * d + ch) * p + j] = series[(t * p + j) * d + ch];
                }
            }
        }
        (tokens, stats)
    }

    /// Single-example forecast in the raw data scale, shape (horizon,
    /// channels) row-major.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, ModelError> {
        let (tokens, stats) = self.prepare_tokens(input);
        let mut ctx = GraphCtx::new(&self.params);
        let forecast = self.build_forward(&mut ctx, &tokens)?;
        let norm_out = ctx.tape.value(forecast).data.clone();
        Ok(denormalize(&norm_out, self.config.n_channels, &stats))
    }

    /// Forward + backward on one example; gradients are accumulated into
    /// the store and the normalized-space MSE is returned.
    pub fn accumulate_example(
        &mut self,
        input: &[f64],
        target: &[f64],
    ) -> Result<f64, ModelError> {
        let (tokens, stats) = self.prepare_tokens(input);
        let target_norm = normalize_with(target, self.config.n_channels, &stats);
        let (value, grads) = {
            let mut ctx = GraphCtx::new(&self.params);
            let forecast = self.build_forward(&mut ctx, &tokens)?;
            let t = ctx.tape.leaf(Value::new(
                vec![self.config.horizon, self.config.n_channels],
                target_norm,
            ));
            let diff = ctx.tape.sub(forecast, t);
            let sq = ctx.tape.mul(diff, diff);
            let loss = ctx.tape.mean(sq);
            let value = ctx.tape.value(loss).data[0];
            ctx.tape
                .backward(loss)
                .expect("single backward per forward");
            let grads: Vec<(String, Vec<f64>)> = ctx
                .leaves
                .iter()
                .map(|(name, id)| (name.clone(), ctx.tape.grad(*id).to_vec()))
                .collect();
            (value, grads)
        };
        for (name, g) in &grads {
            self.params.accumulate(name, g);
        }
        Ok(value)
    }

    /// Same forward pass, loss only; used for validation.
    pub fn example_loss(&self, input: &[f64], target: &[f64]) -> Result<f64, ModelError> {
        let (tokens, stats) = self.prepare_tokens(input);
        let target_norm = normalize_with(target, self.config.n_channels, &stats);
        let mut ctx = GraphCtx::new(&self.params);
        let forecast = self.build_forward(&mut ctx, &tokens)?;
        let pred = ctx.tape.value(forecast);
        let (mse, _) = crate::data::metrics(&pred.data, &target_norm);
        Ok(mse)
    }

    /// Run the model over the zero-padded length and return the horizon
    /// forecast; `pad == 0` reduces to the standard forward.
    pub fn forward_ar_padded(&self, input: &[f64], pad: usize) -> Result<Vec<f64>, ModelError> {
        if pad == self.config.ar_pad {
            return self.predict(input);
        }
        Err(ModelError::VariantMismatch(format!(
            "model head is sized for ar_pad = {}, rebuild for pad = {pad}",
            self.config.ar_pad
        )))
    }

    fn build_forward(&self, ctx: &mut GraphCtx, tokens_raw: &[f64]) -> Result<NodeId, ModelError> {
        let c = &self.config;
        let (p, dm, n, d) = (c.patch_len, c.d_model, c.d_state, c.n_channels);
        let t_total = c.n_tokens();
        let td = t_total * d;

        let tok_in = ctx.tape.leaf(Value::new(vec![td, p], tokens_raw.to_vec()));
        let pe = ctx.leaf("embed.p");
        let pb = ctx.leaf("embed.p_b");
        let projected = ctx.tape.matmul(tok_in, pe);
        let mut tokens = ctx.tape.add_row(projected, pb);

        for l in 0..c.n_layers {
            let ssm = self.build_ssm_path(ctx, tokens, l, t_total)?;
            let pre = if c.without_w {
                ssm
            } else {
                let w = ctx.leaf(&format!("l{l}.w"));
                let wb = ctx.leaf(&format!("l{l}.w_b"));
                let lin0 = ctx.tape.matmul(tokens, w);
                let lin = ctx.tape.add_row(lin0, wb);
                ctx.tape.add(lin, ssm)
            };
            tokens = if c.identity_activation {
                pre
            } else {
                ctx.tape.gelu(pre)
            };
        }

        if c.variable_kernel {
            tokens = self.build_variable_kernel(ctx, tokens, t_total);
        }

        // head: per-channel flatten of all tokens, shared linear map
        let by_channel = ctx.tape.swap01(tokens, t_total, d, dm);
        let flat = ctx.tape.reshape(by_channel, vec![d, t_total * dm]);
        let q = ctx.leaf("head.q");
        let qb = ctx.leaf("head.q_b");
        let head0 = ctx.tape.matmul(flat, q);
        let head = ctx.tape.add_row(head0, qb);
        let forecast = ctx.tape.transpose2(head);
        let _ = n;
        Ok(forecast)
    }

    fn build_ssm_path(
        &self,
        ctx: &mut GraphCtx,
        tokens: NodeId,
        l: usize,
        t_total: usize,
    ) -> Result<NodeId, ModelError> {
        let c = &self.config;
        let (dm, n, d) = (c.d_model, c.d_state, c.n_channels);
        let td = t_total * d;

        if c.variant.is_dense() {
            // frozen continuous system, fixed step 1/L_tokens, trainable C
            let (a, b) = self.frozen.dense.as_ref().unwrap();
            let delta0 = 1.0 / t_total as f64;
            let a_bar = matexp(&a.scale(delta0))?;
            let b_bar: Vec<f64> = b.iter().map(|v| v * delta0).collect();
            let u_scan = ctx.tape.reshape(tokens, vec![t_total, d * dm]);
            let states = ctx.tape.dense_scan(u_scan, &a_bar, &b_bar);
            let states_rs = ctx.tape.reshape(states, vec![td * dm, n]);
            let cd = ctx.leaf(&format!("l{l}.c_dense"));
            let cd_flat = ctx.tape.reshape(cd, vec![dm * n]);
            let c_exp0 = ctx.tape.tile_outer(cd_flat, td);
            let c_exp = ctx.tape.reshape(c_exp0, vec![td * dm, n]);
            let prod = ctx.tape.mul(c_exp, states_rs);
            let y_flat = ctx.tape.sum_inner(prod, n);
            return Ok(ctx.tape.reshape(y_flat, vec![td, dm]));
        }

        // step sizes per (token, feature)
        let wd = ctx.leaf(&format!("l{l}.wd"));
        let wdb = ctx.leaf(&format!("l{l}.wd_b"));
        let d_pre0 = ctx.tape.matmul(tokens, wd);
        let d_pre = ctx.tape.add_row(d_pre0, wdb);
        let delta = ctx.tape.softplus(d_pre);
        let delta_flat = ctx.tape.reshape(delta, vec![td * dm]);
        let dl0 = ctx.tape.tile_inner(delta_flat, n);
        let dl = ctx.tape.reshape(dl0, vec![td * dm, n]);

        // transition a_bar = exp(delta * lambda), complex when needed
        let (a_re, a_im) = match c.variant {
            Variant::S4DReal | Variant::RobustB => {
                let log_a = ctx.leaf(&format!("l{l}.log_a"));
                let ea = ctx.tape.exp(log_a);
                let lam = ctx.tape.neg(ea);
                let lam_exp0 = ctx.tape.tile_outer(lam, td * dm);
                let lam_exp = ctx.tape.reshape(lam_exp0, vec![td * dm, n]);
                let a_in = ctx.tape.mul(dl, lam_exp);
                (ctx.tape.exp(a_in), None)
            }
            Variant::FullSelect => {
                let wl = ctx.leaf(&format!("l{l}.wl"));
                let wlb = ctx.leaf(&format!("l{l}.wl_b"));
                let lam_pre0 = ctx.tape.matmul(tokens, wl);
                let lam_pre = ctx.tape.add_row(lam_pre0, wlb);
                let lam_sp = ctx.tape.softplus(lam_pre);
                let lam_tok = ctx.tape.neg(lam_sp);
                let lam_exp0 = ctx.tape.tile_mid(lam_tok, td, dm);
                let lam_exp = ctx.tape.reshape(lam_exp0, vec![td * dm, n]);
                let a_in = ctx.tape.mul(dl, lam_exp);
                (ctx.tape.exp(a_in), None)
            }
            _ => {
                let lr = ctx.leaf(&format!("l{l}.lam_re"));
                let li = ctx.leaf(&format!("l{l}.lam_im"));
                let lr_exp0 = ctx.tape.tile_outer(lr, td * dm);
                let lr_exp = ctx.tape.reshape(lr_exp0, vec![td * dm, n]);
                let li_exp0 = ctx.tape.tile_outer(li, td * dm);
                let li_exp = ctx.tape.reshape(li_exp0, vec![td * dm, n]);
                let re_in = ctx.tape.mul(dl, lr_exp);
                let im_in = ctx.tape.mul(dl, li_exp);
                let mag = ctx.tape.exp(re_in);
                let cos = ctx.tape.cos(im_in);
                let sin = ctx.tape.sin(im_in);
                let are = ctx.tape.mul(mag, cos);
                let aim = ctx.tape.mul(mag, sin);
                (are, Some(aim))
            }
        };

        // input injection b = delta * B * u
        let du = ctx.tape.mul(delta, tokens);
        let du_flat = ctx.tape.reshape(du, vec![td * dm]);
        let dug0 = ctx.tape.tile_inner(du_flat, n);
        let dug = ctx.tape.reshape(dug0, vec![td * dm, n]);
        let (b_re, b_im) = match c.variant {
            Variant::RobustB => {
                let bv = ctx.leaf(&format!("l{l}.b_vec"));
                let b_exp0 = ctx.tape.tile_outer(bv, td * dm);
                let b_exp = ctx.tape.reshape(b_exp0, vec![td * dm, n]);
                (ctx.tape.mul(dug, b_exp), None)
            }
            _ => {
                let wb = ctx.leaf(&format!("l{l}.wb"));
                let wbb = ctx.leaf(&format!("l{l}.wb_b"));
                let lin0 = ctx.tape.matmul(tokens, wb);
                let linb = ctx.tape.add_row(lin0, wbb);
                if c.variant.is_complex() && !c.without_v {
                    // B = V^T Linear_B(u): row form is linb * V
                    let (v_re, v_im) = self.v_leaves(ctx, false);
                    let b_re_tok = ctx.tape.matmul(linb, v_re);
                    let b_im_tok = ctx.tape.matmul(linb, v_im);
                    let br0 = ctx.tape.tile_mid(b_re_tok, td, dm);
                    let br = ctx.tape.reshape(br0, vec![td * dm, n]);
                    let bi0 = ctx.tape.tile_mid(b_im_tok, td, dm);
                    let bi = ctx.tape.reshape(bi0, vec![td * dm, n]);
                    let bre = ctx.tape.mul(dug, br);
                    let bim = ctx.tape.mul(dug, bi);
                    (bre, Some(bim))
                } else {
                    let br0 = ctx.tape.tile_mid(linb, td, dm);
                    let br = ctx.tape.reshape(br0, vec![td * dm, n]);
                    (ctx.tape.mul(dug, br), None)
                }
            }
        };

        let zeros = ctx.tape.leaf(Value::zeros(vec![td * dm, n]));
        let a_im_id = a_im.unwrap_or(zeros);
        let b_im_id = b_im.unwrap_or(zeros);
        let scan = ctx.tape.complex_scan(a_re, a_im_id, b_re, b_im_id, t_total);
        let xr0 = ctx.tape.select_mid(scan, 1, 2, 0);
        let mut x_re = ctx.tape.reshape(xr0, vec![td * dm, n]);
        let xi0 = ctx.tape.select_mid(scan, 1, 2, 1);
        let mut x_im = ctx.tape.reshape(xi0, vec![td * dm, n]);

        if c.variant == Variant::LegPComplex && c.legp_scales > 0 {
            let hl = ctx.leaf(&format!("l{l}.h_left"));
            let hr = ctx.leaf(&format!("l{l}.h_right"));
            x_re = self.legp_tape(ctx, x_re, t_total, d * dm, n, hl, hr);
            x_im = self.legp_tape(ctx, x_im, t_total, d * dm, n, hl, hr);
        }

        // readout y = Re(C x)
        let wc = ctx.leaf(&format!("l{l}.wc"));
        let wcb = ctx.leaf(&format!("l{l}.wc_b"));
        let linc0 = ctx.tape.matmul(tokens, wc);
        let linc = ctx.tape.add_row(linc0, wcb);
        let y_flat = if c.variant.is_complex() {
            let (c_re_tok, c_im_tok) = if c.without_v {
                (linc, None)
            } else {
                // C = V Linear_C(u): row form is linc * V^T
                let (v_re_t, v_im_t) = self.v_leaves(ctx, true);
                let cre = ctx.tape.matmul(linc, v_re_t);
                let cim = ctx.tape.matmul(linc, v_im_t);
                (cre, Some(cim))
            };
            let cr0 = ctx.tape.tile_mid(c_re_tok, td, dm);
            let cr = ctx.tape.reshape(cr0, vec![td * dm, n]);
            let re_prod = ctx.tape.mul(cr, x_re);
            match c_im_tok {
                Some(cim_tok) => {
                    let ci0 = ctx.tape.tile_mid(cim_tok, td, dm);
                    let ci = ctx.tape.reshape(ci0, vec![td * dm, n]);
                    let im_prod = ctx.tape.mul(ci, x_im);
                    let real_part = ctx.tape.sub(re_prod, im_prod);
                    ctx.tape.sum_inner(real_part, n)
                }
                None => {
                    // without V the state is still complex; drop Im(x)
                    ctx.tape.sum_inner(re_prod, n)
                }
            }
        } else {
            let cr0 = ctx.tape.tile_mid(linc, td, dm);
            let cr = ctx.tape.reshape(cr0, vec![td * dm, n]);
            let prod = ctx.tape.mul(cr, x_re);
            ctx.tape.sum_inner(prod, n)
        };
        Ok(ctx.tape.reshape(y_flat, vec![td, dm]))
    }

    /// Frozen unitary eigenbasis as constant leaves, optionally transposed.
    fn v_leaves(&self, ctx: &mut GraphCtx, transposed: bool) -> (NodeId, NodeId) {
        let (vr, vi) = self.frozen.v.as_ref().unwrap();
        let key = if transposed { "frozen.vT" } else { "frozen.v" };
        if let Some(&pair) = ctx.constants.get(key) {
            return pair;
        }
        let n = vr.rows;
        let (re, im) = if transposed {
            (vr.transpose(), vi.transpose())
        } else {
            (vr.clone(), vi.clone())
        };
        let re_id = ctx.tape.leaf(Value::new(vec![n, n], re.data));
        let im_id = ctx.tape.leaf(Value::new(vec![n, n], im.data));
        ctx.constants.insert(key.to_string(), (re_id, im_id));
        (re_id, im_id)
    }

    /// Tape mirror of legp_block: merge token pairs up the scales and add
    /// every back-projected scale to the trajectory.
    fn legp_tape(
        &self,
        ctx: &mut GraphCtx,
        x: NodeId,
        t_len: usize,
        lanes: usize,
        n: usize,
        hl: NodeId,
        hr: NodeId,
    ) -> NodeId {
        let hl_t = ctx.tape.transpose2(hl);
        let hr_t = ctx.tape.transpose2(hr);
        let mut out = x;
        let mut current = x;
        let mut cur_len = t_len;
        for _ in 0..self.config.legp_scales {
            if cur_len < 2 {
                break;
            }
            let (padded, plen) = if cur_len % 2 == 1 {
                let pr = ctx.tape.pad_rows(current, cur_len, cur_len + 1);
                (pr, cur_len + 1)
            } else {
                (current, cur_len)
            };
            let half = plen / 2;
            let even0 = ctx.tape.select_mid(padded, half, 2, 0);
            let even = ctx.tape.reshape(even0, vec![half * lanes, n]);
            let odd0 = ctx.tape.select_mid(padded, half, 2, 1);
            let odd = ctx.tape.reshape(odd0, vec![half * lanes, n]);
            let ce = ctx.tape.matmul(even, hl_t);
            let co = ctx.tape.matmul(odd, hr_t);
            let coarse = ctx.tape.add(ce, co);
            let mut exp = coarse;
            let mut exp_len = half;
            while exp_len < t_len {
                let e = ctx.tape.matmul(exp, hl);
                let o = ctx.tape.matmul(exp, hr);
                let st = ctx.tape.stack2_mid(e, o, exp_len);
                exp = ctx.tape.reshape(st, vec![2 * exp_len * lanes, n]);
                exp_len *= 2;
            }
            let trimmed = if exp_len > t_len {
                let sl = ctx.tape.slice_rows(exp, exp_len, 0, t_len);
                ctx.tape.reshape(sl, vec![t_len * lanes, n])
            } else {
                exp
            };
            out = ctx.tape.add(out, trimmed);
            current = coarse;
            cur_len = half;
        }
        out
    }

    /// Channel-axis spectral filter: FFT over channels, keep the dominant
    /// modes, reweight, inverse FFT, real part.
    fn build_variable_kernel(&self, ctx: &mut GraphCtx, tokens: NodeId, t_total: usize) -> NodeId {
        let c = &self.config;
        let (dm, d) = (c.d_model, c.n_channels);
        let batch = t_total * dm;
        let re0 = ctx.tape.swap12(tokens, t_total, d, dm);
        let re = ctx.tape.reshape(re0, vec![batch, d]);
        let im = ctx.tape.leaf(Value::zeros(vec![batch, d]));
        let stacked0 = ctx.tape.stack2_mid(re, im, batch);
        let stacked = ctx.tape.reshape(stacked0, vec![batch, 2, d]);
        let spec = ctx.tape.fft_op(stacked, false);
        let kept = ctx.tape.topk_mask(spec, c.k_modes.min(d));
        let w_re = ctx.leaf("vk.w_re");
        let w_im = ctx.leaf("vk.w_im");
        let weighted = ctx.tape.cmul_vec(kept, w_re, w_im);
        let back = ctx.tape.fft_op(weighted, true);
        let real0 = ctx.tape.select_mid(back, batch, 2, 0);
        let real = ctx.tape.reshape(real0, vec![t_total, dm, d]);
        let restored = ctx.tape.swap12(real, t_total, dm, d);
        ctx.tape.reshape(restored, vec![t_total * d, dm])
    }
}

fn insert_linear_bc(
    params: &mut ParamStore,
    rng: &mut StdRng,
    l: usize,
    dm: usize,
    n: usize,
    with_b: bool,
    with_c: bool,
) {
    let s = 1.0 / (dm as f64).sqrt();
    if with_b {
        params.insert(
            &format!("l{l}.wb"),
            Value::new(vec![dm, n], uniform(rng, dm * n, s)),
            true,
        );
        params.insert(&format!("l{l}.wb_b"), Value::zeros(vec![n]), true);
    }
    if with_c {
        params.insert(
            &format!("l{l}.wc"),
            Value::new(vec![dm, n], uniform(rng, dm * n, s)),
            true,
        );
        params.insert(&format!("l{l}.wc_b"), Value::zeros(vec![n]), true);
    }
}

fn build_frozen(config: &ModelConfig) -> Result<Frozen, ModelError> {
    let n = config.d_state;
    let mut frozen = Frozen::default();
    match config.variant {
        Variant::LegSComplex | Variant::LegTComplex | Variant::LegPComplex => {
            let nf = if config.variant == Variant::LegSComplex {
                build_legs_normal(n)
            } else {
                build_legt_normal(n)?
            };
            let diag = diagonalize(&nf)?;
            let (mut lr, mut li) = (vec![0.0; n], vec![0.0; n]);
            for (j, lam) in diag.lambda.iter().enumerate() {
                lr[j] = lam.re;
                li[j] = lam.im;
            }
            frozen.lambda = Some((lr, li));
            let mut v_re = RealMatrix::zeros(n, n);
            let mut v_im = RealMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    v_re[(i, j)] = diag.v[(i, j)].re;
                    v_im[(i, j)] = diag.v[(i, j)].im;
                }
            }
            frozen.v = Some((v_re, v_im));
            if config.variant == Variant::LegPComplex && config.legp_scales > 0 {
                frozen.two_scale = Some(build_two_scale(n)?);
            }
        }
        Variant::LegSDense => {
            let sys = build_legs(n);
            frozen.dense = Some((sys.a, sys.b));
        }
        Variant::LegTDense => {
            let sys = build_legt(n);
            frozen.dense = Some((sys.a, sys.b));
        }
        Variant::S4DReal | Variant::RobustB | Variant::FullSelect => {}
    }
    Ok(frozen)
}

/// One forward graph: a fresh tape plus the leaf ids of every parameter it
/// touched, in first-touch order.
struct GraphCtx<'a> {
    tape: Tape,
    store: &'a ParamStore,
    leaves: Vec<(String, NodeId)>,
    index: HashMap<String, NodeId>,
    constants: HashMap<String, (NodeId, NodeId)>,
}

impl<'a> GraphCtx<'a> {
    fn new(store: &'a ParamStore) -> Self {
        GraphCtx {
            tape: Tape::new(),
            store,
            leaves: Vec::new(),
            index: HashMap::new(),
            constants: HashMap::new(),
        }
    }

    fn leaf(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.tape.leaf(self.store.get(name).value.clone());
        self.index.insert(name.to_string(), id);
        self.leaves.push((name.to_string(), id));
        id
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub patience: usize,
    pub seed: u64,
    pub max_val_windows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 16,
            max_steps: 200,
            patience: 3,
            seed: 0,
            max_val_windows: 64,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_mse: Vec<f64>,
    pub steps: usize,
    pub stopped_early: bool,
}

/// Minibatch Adam with early stopping on validation MSE in normalized
/// space; deterministic for a fixed seed on one thread.
pub fn train(
    model: &mut Model,
    frame: &DatasetFrame,
    tc: &TrainConfig,
) -> Result<TrainHistory, ModelError> {
    let (l, h) = (model.config.lookback, model.config.horizon);
    let train_windows = windows(frame, l, h, Split::Train)?;
    let val_windows = windows(frame, l, h, Split::Val).unwrap_or_default();
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let mut rng = StdRng::seed_from_u64(tc.seed);
    let mut state = AdamState::new();
    let cfg = AdamConfig::with_lr(tc.lr);
    let mut history = TrainHistory::default();
    let mut best_val = f64::INFINITY;
    let mut bad_epochs = 0;
    'outer: loop {
        // Fisher-Yates with the run seed keeps epochs reproducible
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(tc.batch_size.max(1)) {
            model.params.zero_grads();
            let mut batch_loss = 0.0;
            for &idx in chunk {
                let (input, target) = &train_windows[idx];
                batch_loss += model.accumulate_example(input, target)?;
            }
            batch_loss /= chunk.len() as f64;
            if !batch_loss.is_finite() {
                return Err(ModelError::DivergedLoss(history.steps));
            }
            let inv = 1.0 / chunk.len() as f64;
            for p in model.params.iter_mut() {
                p.grad.iter_mut().for_each(|g| *g *= inv);
            }
            adam_step(&mut model.params, &mut state, &cfg);
            history.train_loss.push(batch_loss);
            history.steps += 1;
            if history.steps >= tc.max_steps {
                break 'outer;
            }
        }
        if !val_windows.is_empty() {
            let mut val = 0.0;
            let count = val_windows.len().min(tc.max_val_windows.max(1));
            for (input, target) in val_windows.iter().take(count) {
                val += model.example_loss(input, target)?;
            }
            val /= count as f64;
            history.val_mse.push(val);
            if val < best_val - 1e-12 {
                best_val = val;
                bad_epochs = 0;
            } else {
                bad_epochs += 1;
                if bad_epochs >= tc.patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(history)
}

/// Denormalized-space MSE and MAE over the windows of a split.
pub fn evaluate(
    model: &Model,
    frame: &DatasetFrame,
    split: Split,
    max_windows: usize,
) -> Result<(f64, f64), ModelError> {
    let (l, h) = (model.config.lookback, model.config.horizon);
    let win = windows(frame, l, h, split)?;
    let count = win.len().min(max_windows.max(1));
    let mut mse = 0.0;
    let mut mae = 0.0;
    for (input, target) in win.iter().take(count) {
        let pred = model.predict(input)?;
        let (m, a) = crate::data::metrics(&pred, target);
        mse += m;
        mae += a;
    }
    Ok((mse / count as f64, mae / count as f64))
}

const CHECKPOINT_MAGIC: &str = "timessm-v1";

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), ModelError> {
    let mut out = String::new();
    out.push_str(CHECKPOINT_MAGIC);
    out.push('\n');
    let cfg = serde_json::to_string(&model.config)
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    out.push_str(&format!("config {cfg}\nseed {}\n", model.seed));
    for p in model.params.iter() {
        let dims: Vec<String> = p.value.shape.iter().map(|d| d.to_string()).collect();
        out.push_str(&format!(
            "param {} {} {} {}\n",
            p.name,
            u8::from(p.trainable),
            p.value.shape.len(),
            dims.join(" ")
        ));
        let rows = p.value.shape[0];
        let cols = p.value.len() / rows;
        for r in 0..rows {
            let cells: Vec<String> = (0..cols)
                .map(|c| format!("{:.17e}", p.value.data[r * cols + c]))
                .collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model, ModelError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let magic = lines.next().ok_or_else(|| ModelError::Checkpoint("empty file".into()))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint(format!(
            "bad header {magic:?}, expected {CHECKPOINT_MAGIC:?}"
        )));
    }
    let cfg_line = lines
        .next()
        .and_then(|l| l.strip_prefix("config "))
        .ok_or_else(|| ModelError::Checkpoint("missing config line".into()))?;
    let config: ModelConfig =
        serde_json::from_str(cfg_line).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let seed: u64 = lines
        .next()
        .and_then(|l| l.strip_prefix("seed "))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ModelError::Checkpoint("missing seed line".into()))?;
    let mut model = Model::new(config, seed)?;
    let mut loaded = 0usize;
    let mut lines = lines.peekable();
    while let Some(line) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() < 4 || parts[0] != "param" {
            return Err(ModelError::Checkpoint(format!("bad param header {line:?}")));
        }
        let name = parts[1];
        let ndim: usize = parts[3]
            .parse()
            .map_err(|_| ModelError::Checkpoint(format!("bad ndim in {line:?}")))?;
        let dims: Vec<usize> = parts[4..4 + ndim]
            .iter()
            .map(|s| s.parse().map_err(|_| ModelError::Checkpoint("bad dim".into())))
            .collect::<Result<_, _>>()?;
        if !model.params.contains(name) {
            return Err(ModelError::Checkpoint(format!("unknown parameter {name}")));
        }
        let rows = dims[0];
        let total: usize = dims.iter().product();
        let mut data = Vec::with_capacity(total);
        for _ in 0..rows {
            let row = lines
                .next()
                .ok_or_else(|| ModelError::Checkpoint(format!("truncated rows for {name}")))?;
            for cell in row.split_whitespace() {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| ModelError::Checkpoint(format!("bad value in {name}")))?;
                data.push(v);
            }
        }
        if data.len() != total {
            return Err(ModelError::Checkpoint(format!(
                "size mismatch for {name}: {} vs {total}",
                data.len()
            )));
        }
        let p = model.params.get_mut(name);
        if p.value.shape != dims {
            return Err(ModelError::Checkpoint(format!("shape mismatch for {name}")));
        }
        p.value.data = data;
        loaded += 1;
    }
    if loaded != model.params.len() {
        return Err(ModelError::Checkpoint(format!(
            "checkpoint holds {loaded} of {} parameters",
            model.params.len()
        )));
    }
    Ok(model)
}
