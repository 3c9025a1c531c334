//! Two-branch reconstruction autoencoder over frequency representations.
//! Each branch gates the amplitudes with the sin/cos marks, compresses them
//! with one dualistic-convolution layer (peak or valley), and decodes the
//! latent back to amplitudes through a linear up-map with rectification.
//! Gradients are analytic; training is full-batch gradient descent.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

use crate::dualconv::{dualistic_conv, dualistic_conv_grad, valley_conv, valley_conv_grad, ConvKernel, PadMode};
use crate::error::{Error, Result};
use crate::patex::FrequencyRepresentation;
use crate::series::HyperParams;

const MAGIC: &[u8; 4] = b"MACE";
const FORMAT_VERSION: u16 = 1;
const DIVERGENCE_CAP: f64 = 1e6;
const DESCENT_TOLERANCE: f64 = 1e-6;
const MAX_HALVINGS: u32 = 60;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BranchKind {
    Peak,
    Valley,
}

/// Parameters of one branch: channel-mixing gate, convolution weights,
/// linear decoder.
#[derive(Debug, Clone)]
pub struct BranchParams {
    pub mix: [f64; 3],
    pub alpha: Vec<f64>,
    pub dec_w: Array2<f64>,
    pub dec_b: Vec<f64>,
}

impl BranchParams {
    fn zeros_like(&self) -> Self {
        Self {
            mix: [0.0; 3],
            alpha: vec![0.0; self.alpha.len()],
            dec_w: Array2::zeros(self.dec_w.dim()),
            dec_b: vec![0.0; self.dec_b.len()],
        }
    }

}

/// Gradients mirror the parameter layout.
pub type ModelGrads = (BranchParams, BranchParams);

/// Gradients in [`ModelState::param_vec`] order.
pub fn flatten_grads(grads: &ModelGrads) -> Vec<f64> {
    let mut out = Vec::new();
    for br in [&grads.0, &grads.1] {
        out.extend_from_slice(&br.mix);
        out.extend_from_slice(&br.alpha);
        out.extend(br.dec_w.iter());
        out.extend_from_slice(&br.dec_b);
    }
    out
}

/// Autoencoder parameters for both branches plus optimizer state.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub peak: BranchParams,
    pub valley: BranchParams,
    pub gamma_f: i32,
    pub sigma_f: f64,
    pub kernel_len: usize,
    pub k_bases: usize,
    pub latent_len: usize,
    /// Ablation switch: replace the dualistic convolution with a plain
    /// strided convolution in both branches.
    pub linear_conv: bool,
    pub step: u64,
    pub learning_rate: f64,
    /// Adam moment estimates over the flattened parameter vector; transient
    /// training state, not persisted.
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
}

/// Branch outputs for one representation.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub recon_peak: Array2<f64>,
    pub recon_valley: Array2<f64>,
    pub latent_peak: Array2<f64>,
    pub latent_valley: Array2<f64>,
}

impl ModelState {
    /// Seeded initialization. Mixing and decoder weights are uniform in
    /// [-0.1, 0.1], decoder bias is zero, and the convolution weights start
    /// at sigma_f / kernel_len so each branch preserves constants before
    /// any training.
    pub fn init(hp: &HyperParams, seed: u64, linear_conv: bool) -> Result<Self> {
        hp.validate()?;
        let l = hp.kernel_len;
        let k = hp.k_bases;
        let latent = k.div_ceil(l);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let branch = |rng: &mut ChaCha8Rng| BranchParams {
            mix: std::array::from_fn(|_| rng.random_range(-0.1..0.1)),
            alpha: vec![hp.sigma_f / l as f64; l],
            dec_w: Array2::from_shape_fn((k, latent), |_| rng.random_range(-0.1..0.1)),
            dec_b: vec![0.0; k],
        };
        let peak = branch(&mut rng);
        let valley = branch(&mut rng);
        let n_params = 2 * (3 + l + k * latent + k);
        Ok(Self {
            peak,
            valley,
            gamma_f: hp.gamma_f,
            sigma_f: hp.sigma_f,
            kernel_len: l,
            k_bases: k,
            latent_len: latent,
            linear_conv,
            step: 0,
            learning_rate: hp.learning_rate,
            adam_m: vec![0.0; n_params],
            adam_v: vec![0.0; n_params],
        })
    }

    fn kernel(&self, kind: BranchKind, alpha: &[f64]) -> Result<ConvKernel> {
        let gamma = match kind {
            BranchKind::Peak => self.gamma_f,
            BranchKind::Valley => -self.gamma_f,
        };
        ConvKernel::new(alpha.to_vec(), gamma, self.sigma_f, self.kernel_len)
    }

    fn encode(&self, kind: BranchKind, alpha: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if self.linear_conv {
            return Ok(plain_strided_conv(y, alpha, self.kernel_len));
        }
        match kind {
            BranchKind::Peak => dualistic_conv(y, &self.kernel(kind, alpha)?, PadMode::ZeroTail),
            BranchKind::Valley => valley_conv(y, &self.kernel(kind, alpha)?, PadMode::MeanTail),
        }
    }

    fn encode_grad(
        &self,
        kind: BranchKind,
        alpha: &[f64],
        y: &[f64],
        upstream: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.linear_conv {
            return Ok(plain_strided_conv_grad(y, alpha, self.kernel_len, upstream));
        }
        match kind {
            BranchKind::Peak => {
                dualistic_conv_grad(y, &self.kernel(kind, alpha)?, PadMode::ZeroTail, upstream)
            }
            BranchKind::Valley => {
                valley_conv_grad(y, &self.kernel(kind, alpha)?, PadMode::MeanTail, upstream)
            }
        }
    }

    /// One branch pass over one feature row. Returns the gated amplitudes,
    /// the latent, the pre-rectification decoder output and the
    /// reconstruction.
    fn branch_eval(
        &self,
        params: &BranchParams,
        kind: BranchKind,
        amps: &[f64],
        sin_mark: &[f64],
        cos_mark: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let [w_amp, w_sin, w_cos] = params.mix;
        let y: Vec<f64> = amps
            .iter()
            .zip(sin_mark)
            .zip(cos_mark)
            .map(|((&a, &s), &c)| a * (w_amp + w_sin * s + w_cos * c))
            .collect();
        let z = self.encode(kind, &params.alpha, &y)?;
        if z.len() != self.latent_len {
            return Err(Error::ShapeMismatch(format!(
                "latent length {} != expected {}",
                z.len(),
                self.latent_len
            )));
        }
        if let Some(bad) = z.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite activation in {kind:?} encoder latent: {bad}"
            )));
        }
        let mut lin = params.dec_b.clone();
        for (i, li) in lin.iter_mut().enumerate() {
            for (l, zl) in z.iter().enumerate() {
                *li += params.dec_w[[i, l]] * zl;
            }
        }
        // Non-negativity rectification. |x| rather than max(x, 0): a hard
        // cutoff leaves outputs with a negative pre-activation permanently
        // dead under gradient descent.
        let ahat: Vec<f64> = lin.iter().map(|&v| v.abs()).collect();
        if let Some(bad) = ahat.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite activation in {kind:?} decoder output: {bad}"
            )));
        }
        Ok((y, z, lin, ahat))
    }

    /// Reconstruct both branches. Outputs are non-negative amplitude
    /// tensors shaped like the input amplitudes.
    pub fn forward(&self, rep: &FrequencyRepresentation) -> Result<ForwardOutput> {
        self.check_rep(rep)?;
        let (m, k) = (rep.m_feat(), rep.k_bases());
        let mut recon_peak = Array2::zeros((m, k));
        let mut recon_valley = Array2::zeros((m, k));
        let mut latent_peak = Array2::zeros((m, self.latent_len));
        let mut latent_valley = Array2::zeros((m, self.latent_len));
        for f in 0..m {
            let amps: Vec<f64> = rep.amps.row(f).to_vec();
            let sin: Vec<f64> = rep.sin_mark.row(f).to_vec();
            let cos: Vec<f64> = rep.cos_mark.row(f).to_vec();
            for (kind, params, recon, latent) in [
                (BranchKind::Peak, &self.peak, &mut recon_peak, &mut latent_peak),
                (BranchKind::Valley, &self.valley, &mut recon_valley, &mut latent_valley),
            ] {
                let (_, z, _, ahat) = self.branch_eval(params, kind, &amps, &sin, &cos)?;
                for (j, &v) in ahat.iter().enumerate() {
                    recon[[f, j]] = v;
                }
                for (l, &v) in z.iter().enumerate() {
                    latent[[f, l]] = v;
                }
            }
        }
        Ok(ForwardOutput {
            recon_peak,
            recon_valley,
            latent_peak,
            latent_valley,
        })
    }

    fn check_rep(&self, rep: &FrequencyRepresentation) -> Result<()> {
        if rep.k_bases() != self.k_bases {
            return Err(Error::ShapeMismatch(format!(
                "representation has {} bases, model expects {}",
                rep.k_bases(),
                self.k_bases
            )));
        }
        Ok(())
    }

    /// Mean training loss over the batch without gradients.
    pub fn loss_on(&self, reps: &[FrequencyRepresentation]) -> Result<f64> {
        if reps.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut total = 0.0;
        for rep in reps {
            let out = self.forward(rep)?;
            total += loss(&out.recon_peak, &out.recon_valley, &rep.amps)?;
        }
        Ok(total / reps.len() as f64)
    }

    /// Mean training loss and its analytic gradients over the batch.
    pub fn loss_and_grads(&self, reps: &[FrequencyRepresentation]) -> Result<(f64, ModelGrads)> {
        if reps.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut grad_peak = self.peak.zeros_like();
        let mut grad_valley = self.valley.zeros_like();
        let mut total = 0.0;
        let batch = reps.len() as f64;
        for rep in reps {
            self.check_rep(rep)?;
            let (m, k) = (rep.m_feat(), rep.k_bases());
            let scale = 1.0 / (batch * (m * k) as f64);
            for f in 0..m {
                let amps: Vec<f64> = rep.amps.row(f).to_vec();
                let sin: Vec<f64> = rep.sin_mark.row(f).to_vec();
                let cos: Vec<f64> = rep.cos_mark.row(f).to_vec();
                for (kind, params, grads) in [
                    (BranchKind::Peak, &self.peak, &mut grad_peak),
                    (BranchKind::Valley, &self.valley, &mut grad_valley),
                ] {
                    let (y, z, lin, ahat) = self.branch_eval(params, kind, &amps, &sin, &cos)?;
                    let mut d_lin = vec![0.0; k];
                    for j in 0..k {
                        let err = ahat[j] - amps[j];
                        total += err * err * scale;
                        let d_ahat = 2.0 * err * scale;
                        d_lin[j] = d_ahat * lin[j].signum();
                    }
                    let mut d_z = vec![0.0; self.latent_len];
                    for j in 0..k {
                        grads.dec_b[j] += d_lin[j];
                        for l in 0..self.latent_len {
                            grads.dec_w[[j, l]] += d_lin[j] * z[l];
                            d_z[l] += params.dec_w[[j, l]] * d_lin[j];
                        }
                    }
                    let (d_y, d_alpha) = self.encode_grad(kind, &params.alpha, &y, &d_z)?;
                    for (ga, da) in grads.alpha.iter_mut().zip(&d_alpha) {
                        *ga += da;
                    }
                    for j in 0..k {
                        grads.mix[0] += d_y[j] * amps[j];
                        grads.mix[1] += d_y[j] * amps[j] * sin[j];
                        grads.mix[2] += d_y[j] * amps[j] * cos[j];
                    }
                }
            }
        }
        Ok((total, (grad_peak, grad_valley)))
    }

    /// Adam-scaled descent direction for the flattened gradient at the
    /// current step count. Moments must already be updated.
    fn descent_direction(&self) -> Vec<f64> {
        let t = self.step as i32 + 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        self.adam_m
            .iter()
            .zip(&self.adam_v)
            .map(|(&m, &v)| (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS))
            .collect()
    }

    /// Full-batch gradient descent with per-parameter Adam scaling. The
    /// step size halves whenever an update would raise the loss beyond
    /// tolerance, so the recorded curve is non-increasing; after a clean
    /// step the rate creeps back toward the configured one so a single bad
    /// region does not freeze the rest of the run. Returns the loss after
    /// each epoch.
    pub fn train(&mut self, reps: &[FrequencyRepresentation], epochs: usize) -> Result<Vec<f64>> {
        let base_rate = self.learning_rate;
        let mut curve = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            let (loss_before, grads) = self.loss_and_grads(reps)?;
            if !loss_before.is_finite() || loss_before > DIVERGENCE_CAP {
                return Err(Error::Numerical(format!(
                    "training diverged at epoch {epoch}: loss {loss_before}"
                )));
            }
            let flat = flatten_grads(&grads);
            for ((m, v), &g) in self.adam_m.iter_mut().zip(&mut self.adam_v).zip(&flat) {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            }
            let direction = self.descent_direction();
            let params = self.param_vec();
            let mut accepted = f64::NAN;
            let mut halved = false;
            for _ in 0..=MAX_HALVINGS {
                let stepped: Vec<f64> = params
                    .iter()
                    .zip(&direction)
                    .map(|(&p, &d)| p - self.learning_rate * d)
                    .collect();
                let mut candidate = self.clone();
                candidate.set_param_vec(&stepped)?;
                let after = candidate.loss_on(reps)?;
                if after <= loss_before + DESCENT_TOLERANCE {
                    let rate = self.learning_rate;
                    *self = candidate;
                    self.learning_rate = rate;
                    accepted = after;
                    break;
                }
                self.learning_rate /= 2.0;
                halved = true;
            }
            if accepted.is_nan() {
                // Step too large at every tried rate; keep parameters.
                accepted = loss_before;
            }
            if !accepted.is_finite() || accepted > DIVERGENCE_CAP {
                return Err(Error::Numerical(format!(
                    "training diverged at epoch {epoch}: loss {accepted}"
                )));
            }
            if !halved {
                self.learning_rate = (self.learning_rate * 2.0).min(base_rate);
            }
            self.step += 1;
            curve.push(accepted);
        }
        Ok(curve)
    }

    /// All parameters in serialization order: for each branch (peak, then
    /// valley): mix[3], alpha[kernel_len], dec_w row-major [k_bases x
    /// latent_len], dec_b[k_bases].
    pub fn param_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for br in [&self.peak, &self.valley] {
            out.extend_from_slice(&br.mix);
            out.extend_from_slice(&br.alpha);
            out.extend(br.dec_w.iter());
            out.extend_from_slice(&br.dec_b);
        }
        out
    }

    pub fn set_param_vec(&mut self, params: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if params.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters given, model holds {expected}",
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for br in [&mut self.peak, &mut self.valley] {
            for m in br.mix.iter_mut() {
                *m = it.next().unwrap();
            }
            for a in br.alpha.iter_mut() {
                *a = it.next().unwrap();
            }
            for w in br.dec_w.iter_mut() {
                *w = it.next().unwrap();
            }
            for b in br.dec_b.iter_mut() {
                *b = it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        2 * (3 + self.kernel_len + self.k_bases * self.latent_len + self.k_bases)
    }
}

fn plain_strided_conv(y: &[f64], alpha: &[f64], stride: usize) -> Vec<f64> {
    let out_len = y.len().div_ceil(stride);
    let mut out = vec![0.0; out_len];
    for (i, o) in out.iter_mut().enumerate() {
        for (j, &w) in alpha.iter().enumerate() {
            if let Some(&v) = y.get(i * stride + j) {
                *o += w * v;
            }
        }
    }
    out
}

fn plain_strided_conv_grad(
    y: &[f64],
    alpha: &[f64],
    stride: usize,
    upstream: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut d_y = vec![0.0; y.len()];
    let mut d_alpha = vec![0.0; alpha.len()];
    for (i, &g) in upstream.iter().enumerate() {
        for (j, &w) in alpha.iter().enumerate() {
            let idx = i * stride + j;
            if idx < y.len() {
                d_y[idx] += g * w;
                d_alpha[j] += g * y[idx];
            }
        }
    }
    (d_y, d_alpha)
}

/// Sum of per-branch mean squared errors against the target amplitudes.
pub fn loss(recon_p: &Array2<f64>, recon_v: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    if recon_p.dim() != target.dim() || recon_v.dim() != target.dim() {
        return Err(Error::ShapeMismatch(format!(
            "reconstructions {:?}/{:?} vs target {:?}",
            recon_p.dim(),
            recon_v.dim(),
            target.dim()
        )));
    }
    let n = target.len() as f64;
    let mse = |r: &Array2<f64>| {
        r.iter()
            .zip(target.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n
    };
    Ok(mse(recon_p) + mse(recon_v))
}

/// Write the model as magic "MACE", version u16 LE, then every value as a
/// little-endian f64: 8 header values (gamma_f, sigma_f, kernel_len,
/// k_bases, latent_len, linear_conv, step, learning_rate) followed by
/// [`ModelState::param_vec`] order. A text manifest with the shapes is
/// written next to it.
pub fn save_model(model: &ModelState, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let header = [
        model.gamma_f as f64,
        model.sigma_f,
        model.kernel_len as f64,
        model.k_bases as f64,
        model.latent_len as f64,
        if model.linear_conv { 1.0 } else { 0.0 },
        model.step as f64,
        model.learning_rate,
    ];
    for v in header.iter().chain(model.param_vec().iter()) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;

    let manifest = path.with_extension("manifest.txt");
    let text = format!(
        "format = MACE v{FORMAT_VERSION}\n\
         header_f64 = gamma_f, sigma_f, kernel_len, k_bases, latent_len, linear_conv, step, learning_rate\n\
         branch_order = peak, valley\n\
         branch_f64 = mix[3], alpha[{}], dec_w[{} x {}] row-major, dec_b[{}]\n\
         note = optimizer moment buffers are transient and not persisted\n",
        model.kernel_len, model.k_bases, model.latent_len, model.k_bases
    );
    std::fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))
}

pub fn load_model(path: &Path) -> Result<ModelState> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 6 || &bytes[0..4] != MAGIC {
        return Err(Error::Data(format!(
            "{}: not a MACE model file",
            path.display()
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported model version {version}",
            path.display()
        )));
    }
    let body = &bytes[6..];
    if body.len() % 8 != 0 {
        return Err(Error::Data(format!(
            "{}: truncated float payload",
            path.display()
        )));
    }
    let floats: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if floats.len() < 8 {
        return Err(Error::Data(format!("{}: missing header", path.display())));
    }
    let gamma_f = floats[0] as i32;
    let sigma_f = floats[1];
    let kernel_len = floats[2] as usize;
    let k_bases = floats[3] as usize;
    let latent_len = floats[4] as usize;
    let linear_conv = floats[5] != 0.0;
    let step = floats[6] as u64;
    let learning_rate = floats[7];
    if kernel_len == 0 || k_bases == 0 || latent_len != k_bases.div_ceil(kernel_len) {
        return Err(Error::Data(format!(
            "{}: inconsistent shape header",
            path.display()
        )));
    }
    let blank = BranchParams {
        mix: [0.0; 3],
        alpha: vec![0.0; kernel_len],
        dec_w: Array2::zeros((k_bases, latent_len)),
        dec_b: vec![0.0; k_bases],
    };
    let n_params = 2 * (3 + kernel_len + k_bases * latent_len + k_bases);
    let mut model = ModelState {
        peak: blank.clone(),
        valley: blank,
        gamma_f,
        sigma_f,
        kernel_len,
        k_bases,
        latent_len,
        linear_conv,
        step,
        learning_rate,
        adam_m: vec![0.0; n_params],
        adam_v: vec![0.0; n_params],
    };
    let params = &floats[8..];
    if params.len() != model.param_count() {
        return Err(Error::Data(format!(
            "{}: {} parameters in file, shapes require {}",
            path.display(),
            params.len(),
            model.param_count()
        )));
    }
    model.set_param_vec(params)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patex::{ca_dft, characterize, select_basis};
    use crate::series::TimeSeriesWindow;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn small_hp() -> HyperParams {
        HyperParams {
            gamma_t: 7,
            gamma_f: 7,
            sigma_t: 5.0,
            sigma_f: 5.0,
            kernel_len: 3,
            window_size: 40,
            k_bases: 6,
            learning_rate: 0.001,
        }
    }

    fn rep_from_amps(amps: Array2<f64>, w: usize) -> FrequencyRepresentation {
        let theta = |j: usize| 2.0 * PI * (j + 1) as f64 / w as f64;
        FrequencyRepresentation {
            sin_mark: Array2::from_shape_fn(amps.dim(), |(_, j)| theta(j).sin()),
            cos_mark: Array2::from_shape_fn(amps.dim(), |(_, j)| theta(j).cos()),
            phases: Array2::zeros(amps.dim()),
            amps,
        }
    }

    fn pipeline_rep(freq: usize, hp: &HyperParams) -> FrequencyRepresentation {
        let w = hp.window_size;
        let values = Array2::from_shape_fn((2, w), |(f, t)| {
            0.5 + 0.4 * (2.0 * PI * (freq + f) as f64 * t as f64 / w as f64).sin()
        });
        let win = TimeSeriesWindow::new(values, 0, "svc").unwrap();
        let basis = select_basis(std::slice::from_ref(&win), hp.k_bases).unwrap();
        let spec = ca_dft(&win, &basis).unwrap();
        characterize(&spec, &basis).unwrap()
    }

    #[test]
    fn zero_amplitudes_reconstruct_to_zero_at_init() {
        let hp = small_hp();
        let model = ModelState::init(&hp, 3, false).unwrap();
        let rep = rep_from_amps(Array2::zeros((2, hp.k_bases)), hp.window_size);
        let out = model.forward(&rep).unwrap();
        for &v in out.recon_peak.iter().chain(out.recon_valley.iter()) {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn output_shape_matches_input() {
        let hp = small_hp();
        let model = ModelState::init(&hp, 5, false).unwrap();
        let rep = pipeline_rep(3, &hp);
        let out = model.forward(&rep).unwrap();
        assert_eq!(out.recon_peak.dim(), rep.amps.dim());
        assert_eq!(out.recon_valley.dim(), rep.amps.dim());
        assert!(out.recon_peak.iter().all(|&v| v >= 0.0));
        assert!(out.recon_valley.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn loss_hand_values() {
        let a = array![[1.0, 0.0]];
        assert_abs_diff_eq!(loss(&a, &a, &a).unwrap(), 0.0);
        let p = array![[0.0, 0.0]];
        let v = array![[1.0, 0.0]];
        assert_abs_diff_eq!(loss(&p, &v, &a).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn loss_invariant_to_consistent_feature_permutation() {
        let p = array![[0.1, 0.2], [0.9, 0.3]];
        let v = array![[0.4, 0.6], [0.2, 0.8]];
        let a = array![[0.0, 0.5], [1.0, 0.1]];
        let swap = |m: &Array2<f64>| {
            let mut s = m.clone();
            let top = m.row(0).to_owned();
            s.row_mut(0).assign(&m.row(1));
            s.row_mut(1).assign(&top);
            s
        };
        assert_abs_diff_eq!(
            loss(&p, &v, &a).unwrap(),
            loss(&swap(&p), &swap(&v), &swap(&a)).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn zero_epochs_change_nothing() {
        let hp = small_hp();
        let mut model = ModelState::init(&hp, 7, false).unwrap();
        let before = model.param_vec();
        let curve = model.train(&[pipeline_rep(3, &hp)], 0).unwrap();
        assert!(curve.is_empty());
        assert_eq!(model.param_vec(), before);
        assert_eq!(model.step, 0);
    }

    #[test]
    fn descent_sanity_on_one_window() {
        let hp = small_hp();
        let mut model = ModelState::init(&hp, 11, false).unwrap();
        let reps = vec![pipeline_rep(3, &hp)];
        let initial = model.loss_on(&reps).unwrap();
        let curve = model.train(&reps, 500).unwrap();
        assert!(curve.last().unwrap() < &initial);
        for pair in curve.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-6);
        }
    }

    #[test]
    fn overfits_one_repeated_window() {
        let hp = small_hp();
        let mut model = ModelState::init(&hp, 13, false).unwrap();
        model.learning_rate = 0.05;
        let reps = vec![pipeline_rep(4, &hp)];
        model.train(&reps, 3000).unwrap();
        let out = model.forward(&reps[0]).unwrap();
        for (r, a) in out
            .recon_peak
            .iter()
            .chain(out.recon_valley.iter())
            .zip(reps[0].amps.iter().chain(reps[0].amps.iter()))
        {
            assert!(
                (r - a).abs() <= 1e-2,
                "per-element error {} too large",
                (r - a).abs()
            );
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let hp = small_hp();
        let reps = vec![pipeline_rep(3, &hp), pipeline_rep(5, &hp)];
        let run = || {
            let mut model = ModelState::init(&hp, 99, false).unwrap();
            model.train(&reps, 50).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let hp = HyperParams {
            kernel_len: 3,
            k_bases: 6,
            ..small_hp()
        };
        let mut model = ModelState::init(&hp, 17, false).unwrap();
        // Keep decoder pre-activations away from the rectifier kink.
        for b in model.peak.dec_b.iter_mut().chain(model.valley.dec_b.iter_mut()) {
            *b = 0.05;
        }
        let reps = vec![pipeline_rep(3, &hp), pipeline_rep(6, &hp)];
        let (_, grads) = model.loss_and_grads(&reps).unwrap();
        let analytic = flatten_grads(&grads);
        let params = model.param_vec();
        let h = 1e-5;
        for (i, &g) in analytic.iter().enumerate() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[i] += h;
            minus[i] -= h;
            let mut mp = model.clone();
            mp.set_param_vec(&plus).unwrap();
            let mut mm = model.clone();
            mm.set_param_vec(&minus).unwrap();
            let fd = (mp.loss_on(&reps).unwrap() - mm.loss_on(&reps).unwrap()) / (2.0 * h);
            let denom = g.abs().max(fd.abs()).max(1e-6);
            assert!(
                (g - fd).abs() / denom <= 1e-4,
                "param {i}: analytic {g} vs fd {fd}"
            );
        }
    }

    #[test]
    fn peak_latent_dominated_by_outlier_bin() {
        let hp = small_hp();
        let mut model = ModelState::init(&hp, 23, false).unwrap();
        let mut reps = Vec::new();
        for i in 0..8 {
            let amps = Array2::from_shape_fn((1, hp.k_bases), |(_, j)| {
                0.8 + 0.05 * ((i * 7 + j) % 5) as f64
            });
            reps.push(rep_from_amps(amps, hp.window_size));
        }
        model.train(&reps, 100).unwrap();

        let mut amps = Array2::from_elem((1, hp.k_bases), 1.0);
        amps[[0, 2]] = 30.0;
        let with_outlier = model.forward(&rep_from_amps(amps.clone(), hp.window_size)).unwrap();
        amps[[0, 2]] = 1.0;
        let without = model.forward(&rep_from_amps(amps, hp.window_size)).unwrap();
        let norm = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = &with_outlier.latent_peak - &without.latent_peak;
        assert!(norm(&diff) >= 0.5 * norm(&with_outlier.latent_peak));
    }

    #[test]
    fn high_variance_spectra_reconstruct_worse() {
        let hp = small_hp();
        let mut model = ModelState::init(&hp, 31, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let profile: Vec<f64> = (0..hp.k_bases).map(|j| 1.0 + 0.3 * (j as f64)).collect();
        let mut gen = |spread: f64, rng: &mut ChaCha8Rng| {
            let amps = Array2::from_shape_fn((1, hp.k_bases), |(_, j)| {
                (profile[j] + spread * rng.random_range(-1.0..1.0)).max(0.0)
            });
            rep_from_amps(amps, hp.window_size)
        };
        let train: Vec<_> = (0..20).map(|_| gen(0.02, &mut rng)).collect();
        model.train(&train, 300).unwrap();
        let low: Vec<_> = (0..20).map(|_| gen(0.02, &mut rng)).collect();
        let high: Vec<_> = (0..20).map(|_| gen(0.8, &mut rng)).collect();
        let err_low = model.loss_on(&low).unwrap();
        let err_high = model.loss_on(&high).unwrap();
        assert!(
            err_high > err_low,
            "high-variance {err_high} <= low-variance {err_low}"
        );
    }

    #[test]
    fn model_file_round_trip() {
        let hp = small_hp();
        let mut model = ModelState::init(&hp, 41, false).unwrap();
        model.train(&[pipeline_rep(3, &hp)], 20).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.param_vec(), model.param_vec());
        assert_eq!(loaded.step, model.step);
        assert_eq!(loaded.gamma_f, model.gamma_f);
        assert!(path.with_extension("manifest.txt").exists());
    }
}
