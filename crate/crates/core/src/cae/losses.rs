use serde::{Deserialize, Serialize};

use super::CaeModel;
use crate::error::{shape_err, Result};
use crate::nnkit::{Activations, Gradients, Network, OutputGrad, Tensor};

const EPS: f64 = 1e-8;

/// One co-located training patch pair with its weights.
#[derive(Debug, Clone, Copy)]
pub struct PatchInput<'a> {
    /// `[c₁, p, p]`, normalized to [−1, 1].
    pub x: &'a Tensor,
    /// `[c₂, p, p]`, normalized to [−1, 1].
    pub y: &'a Tensor,
    /// Input-data prior Π⁰, fixed once computed; weights the code loss.
    pub pi0: &'a [f64],
    /// Current translation weight Π; weights the translation loss.
    pub pi: &'a [f64],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub rec: f64,
    pub code: f64,
    pub cyc: f64,
    pub tr: f64,
    pub total: f64,
}

impl LossTerms {
    pub(crate) fn accumulate(&mut self, other: &LossTerms, scale: f64) {
        self.rec += other.rec * scale;
        self.code += other.code * scale;
        self.cyc += other.cyc * scale;
        self.tr += other.tr * scale;
        self.total += other.total * scale;
    }

    pub fn is_finite(&self) -> bool {
        [self.rec, self.code, self.cyc, self.tr, self.total].iter().all(|v| v.is_finite())
    }
}

pub(crate) struct CaeGradients {
    pub ex: Gradients,
    pub dx: Gradients,
    pub ey: Gradients,
    pub dy: Gradients,
}

impl CaeGradients {
    pub fn zeros(model: &CaeModel) -> Self {
        CaeGradients {
            ex: Gradients::zeros_like(model.encoder_x.params()),
            dx: Gradients::zeros_like(model.decoder_x.params()),
            ey: Gradients::zeros_like(model.encoder_y.params()),
            dy: Gradients::zeros_like(model.decoder_y.params()),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in [&mut self.ex, &mut self.dx, &mut self.ey, &mut self.dy] {
            g.scale(s);
        }
    }
}

/// Batch-mean loss terms. Per patch:
///
/// * `rec  = MSE(D_X(E_X x), x) + MSE(D_Y(E_Y y), y)`
/// * `code = Σ_i Π⁰_i ‖z_x,i − z_y,i‖² / (K Σ_i Π⁰_i + ε)`, reaching the encoders only
/// * `cyc  = MSE(D_X(E_Y ŷ), x) + MSE(D_Y(E_X x̂), y)`
/// * `tr   = Σ_i Π_i (‖x̂_i − x_i‖²/c₁ + ‖ŷ_i − y_i‖²/c₂) / (Σ_i Π_i + ε)`
pub fn cae_losses(model: &CaeModel, batch: &[PatchInput<'_>]) -> Result<LossTerms> {
    if batch.is_empty() {
        return Err(shape_err!("empty patch batch"));
    }
    let mut sum = LossTerms::default();
    for p in batch {
        let terms = evaluate(model, p, None)?;
        sum.accumulate(&terms, 1.0 / batch.len() as f64);
    }
    Ok(sum)
}

/// Loss terms for one patch and, when `grads` is given, their weighted
/// gradients accumulated into it.
pub(crate) fn evaluate(model: &CaeModel, p: &PatchInput<'_>, grads: Option<&mut CaeGradients>) -> Result<LossTerms> {
    let (c1, c2) = (model.x_channels(), model.y_channels());
    let (x, y) = (p.x, p.y);
    let sx = x.shape();
    let sy = y.shape();
    if sx.len() != 3 || sy.len() != 3 || sx[0] != c1 || sy[0] != c2 || sx[1..] != sy[1..] {
        return Err(shape_err!("patch shapes {sx:?} / {sy:?} do not fit a {c1}/{c2}-channel model"));
    }
    let n = sx[1] * sx[2];
    if p.pi0.len() != n || p.pi.len() != n {
        return Err(shape_err!("weights cover {} / {} pixels, patch has {n}", p.pi0.len(), p.pi.len()));
    }
    let k = model.config.code_channels;
    let w = model.config.loss_weights;

    let a_zx = model.encoder_x.forward(x)?;
    let a_zy = model.encoder_y.forward(y)?;
    let (zx, zy) = (a_zx.output(), a_zy.output());
    let a_xrec = model.decoder_x.forward(zx)?;
    let a_yrec = model.decoder_y.forward(zy)?;
    let a_xhat = model.decoder_x.forward(zy)?;
    let a_yhat = model.decoder_y.forward(zx)?;
    let (xhat, yhat) = (a_xhat.output(), a_yhat.output());
    let a_zyhat = model.encoder_y.forward(yhat)?;
    let a_xcyc = model.decoder_x.forward(a_zyhat.output())?;
    let a_zxhat = model.encoder_x.forward(xhat)?;
    let a_ycyc = model.decoder_y.forward(a_zxhat.output())?;

    let rec = mse(a_xrec.output(), x) + mse(a_yrec.output(), y);
    let cyc = mse(a_xcyc.output(), x) + mse(a_ycyc.output(), y);

    let pi0_sum: f64 = p.pi0.iter().sum();
    let code_norm = k as f64 * pi0_sum + EPS;
    let mut code = 0.0;
    for i in 0..n {
        let d2: f64 = (0..k).map(|c| (zx.values()[c * n + i] - zy.values()[c * n + i]).powi(2)).sum();
        code += p.pi0[i] * d2;
    }
    code /= code_norm;

    let pi_sum: f64 = p.pi.iter().sum();
    let tr_norm = pi_sum + EPS;
    let mut tr = 0.0;
    for i in 0..n {
        let ex: f64 = (0..c1).map(|c| (xhat.values()[c * n + i] - x.values()[c * n + i]).powi(2)).sum();
        let ey: f64 = (0..c2).map(|c| (yhat.values()[c * n + i] - y.values()[c * n + i]).powi(2)).sum();
        tr += p.pi[i] * (ex / c1 as f64 + ey / c2 as f64);
    }
    tr /= tr_norm;

    let total = w.rec * rec + w.code * code + w.cyc * cyc + w.tr * tr;
    let terms = LossTerms { rec, code, cyc, tr, total };
    if !terms.is_finite() {
        return Err(crate::Error::NonFinite("CAE loss".into()));
    }

    let Some(g) = grads else { return Ok(terms) };

    // gradients w.r.t. network outputs
    let mut g_xhat = vec![0.0; c1 * n];
    let mut g_yhat = vec![0.0; c2 * n];
    if w.tr > 0.0 {
        for c in 0..c1 {
            for i in 0..n {
                let j = c * n + i;
                g_xhat[j] = w.tr * p.pi[i] * 2.0 * (xhat.values()[j] - x.values()[j]) / c1 as f64 / tr_norm;
            }
        }
        for c in 0..c2 {
            for i in 0..n {
                let j = c * n + i;
                g_yhat[j] = w.tr * p.pi[i] * 2.0 * (yhat.values()[j] - y.values()[j]) / c2 as f64 / tr_norm;
            }
        }
    }

    let mut g_zx = vec![0.0; k * n];
    let mut g_zy = vec![0.0; k * n];

    if w.cyc > 0.0 {
        let d = back(&model.decoder_x, &a_xcyc, mse_grad(a_xcyc.output(), x, w.cyc), &mut g.dx)?;
        add(&mut g_yhat, &back(&model.encoder_y, &a_zyhat, d, &mut g.ey)?);
        let d = back(&model.decoder_y, &a_ycyc, mse_grad(a_ycyc.output(), y, w.cyc), &mut g.dy)?;
        add(&mut g_xhat, &back(&model.encoder_x, &a_zxhat, d, &mut g.ex)?);
    }
    add(&mut g_zy, &back(&model.decoder_x, &a_xhat, g_xhat, &mut g.dx)?);
    add(&mut g_zx, &back(&model.decoder_y, &a_yhat, g_yhat, &mut g.dy)?);
    if w.rec > 0.0 {
        add(&mut g_zx, &back(&model.decoder_x, &a_xrec, mse_grad(a_xrec.output(), x, w.rec), &mut g.dx)?);
        add(&mut g_zy, &back(&model.decoder_y, &a_yrec, mse_grad(a_yrec.output(), y, w.rec), &mut g.dy)?);
    }
    if w.code > 0.0 {
        for c in 0..k {
            for i in 0..n {
                let j = c * n + i;
                let d = w.code * 2.0 * p.pi0[i] * (zx.values()[j] - zy.values()[j]) / code_norm;
                g_zx[j] += d;
                g_zy[j] -= d;
            }
        }
    }
    back(&model.encoder_x, &a_zx, g_zx, &mut g.ex)?;
    back(&model.encoder_y, &a_zy, g_zy, &mut g.ey)?;
    Ok(terms)
}

fn back(net: &Network, acts: &Activations, grad: Vec<f64>, into: &mut Gradients) -> Result<Vec<f64>> {
    let t = Tensor::new(acts.output().shape().to_vec(), grad)?;
    Ok(net.backward_into(acts, OutputGrad::Output(&t), into)?.into_values())
}

fn add(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

fn mse(a: &Tensor, b: &Tensor) -> f64 {
    a.values().iter().zip(b.values()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len() as f64
}

fn mse_grad(a: &Tensor, b: &Tensor, weight: f64) -> Vec<f64> {
    let s = 2.0 * weight / a.len() as f64;
    a.values().iter().zip(b.values()).map(|(p, q)| s * (p - q)).collect()
}
