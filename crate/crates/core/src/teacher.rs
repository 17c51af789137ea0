//! Ray-marching teacher: positional encoding, trunk MLP with a mid-trunk
//! skip concatenation, density/color heads, alpha-composited rendering
//! and its training loop on scene-oracle images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::PositionalEncoding;
use crate::error::{Error, Result};
use crate::img::Image;
use crate::linalg::{Matrix, Scalar};
use crate::nn::{adam_step, lr_schedule, Activation, AdamHyper, AdamState, DenseLayer, GradientTape};
use crate::scene::{CameraPose, Ray};
use crate::volume::{composite_backward, composite_ray, stratified_depths, QuadratureSamples, SampleMode};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NerfConfig {
    /// Trunk width.
    pub width: usize,
    /// Number of trunk layers.
    pub trunk_depth: usize,
    /// Index of the trunk layer whose input is concatenated with the
    /// encoded position.
    pub skip_layer: usize,
    pub pos_octaves: usize,
    pub dir_octaves: usize,
    /// Quadrature samples per ray.
    pub n_samples: usize,
    /// Compositing background color.
    pub background: [f64; 3],
}

impl Default for NerfConfig {
    fn default() -> Self {
        NerfConfig {
            width: 256,
            trunk_depth: 8,
            skip_layer: 4,
            pos_octaves: 10,
            dir_octaves: 4,
            n_samples: 192,
            background: [1.0, 1.0, 1.0],
        }
    }
}

impl NerfConfig {
    pub fn pos_enc(&self) -> PositionalEncoding {
        PositionalEncoding::new(self.pos_octaves, true)
    }
    pub fn dir_enc(&self) -> PositionalEncoding {
        PositionalEncoding::new(self.dir_octaves, true)
    }
    pub fn pos_dim(&self) -> usize {
        self.pos_enc().output_dim(3)
    }
    pub fn dir_dim(&self) -> usize {
        self.dir_enc().output_dim(3)
    }
    pub fn color_hidden(&self) -> usize {
        self.width / 2
    }
}

/// Radiance-field MLP with softplus density and sigmoid color heads.
#[derive(Clone, Debug)]
pub struct NerfMlp<S> {
    pub config: NerfConfig,
    /// trunk[0..D], density, feature, color_hidden, color_out.
    pub layers: Vec<DenseLayer<S>>,
}

fn softplus<S: Scalar>(z: S) -> S {
    if z > S::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid<S: Scalar>(z: S) -> S {
    S::one() / (S::one() + (-z).exp())
}

/// Forward intermediates the heads need beyond the tape.
pub struct PointOutputs<S> {
    pub sigma: Vec<S>,
    pub rgb: Matrix<S>,
    softplus_pre: Vec<S>,
}

impl<S: Scalar> NerfMlp<S> {
    pub fn new<R: Rng>(config: NerfConfig, rng: &mut R) -> Self {
        let w = config.width;
        let mut layers = Vec::new();
        for i in 0..config.trunk_depth {
            let in_dim = if i == 0 {
                config.pos_dim()
            } else if i == config.skip_layer {
                w + config.pos_dim()
            } else {
                w
            };
            layers.push(DenseLayer::new(in_dim, w, Activation::Relu).init_he(rng, 1.0));
        }
        layers.push(DenseLayer::new(w, 1, Activation::Identity).init_he(rng, 1.0));
        layers.push(DenseLayer::new(w, w, Activation::Identity).init_he(rng, 1.0));
        layers.push(
            DenseLayer::new(w + config.dir_dim(), config.color_hidden(), Activation::Relu)
                .init_he(rng, 1.0),
        );
        layers.push(
            DenseLayer::new(config.color_hidden(), 3, Activation::Sigmoid).init_he(rng, 1.0),
        );
        NerfMlp { config, layers }
    }

    fn idx_density(&self) -> usize {
        self.config.trunk_depth
    }
    fn idx_feature(&self) -> usize {
        self.config.trunk_depth + 1
    }
    fn idx_color_hidden(&self) -> usize {
        self.config.trunk_depth + 2
    }
    fn idx_color_out(&self) -> usize {
        self.config.trunk_depth + 3
    }

    pub fn param_shapes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data.len(), l.bias.len()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [S]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn param_blobs(&self) -> Vec<&[S]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data.as_slice(), l.bias.as_slice()])
            .collect()
    }

    /// Number of scalar parameters.
    pub fn n_params(&self) -> usize {
        self.param_shapes().iter().sum()
    }

    /// Tape-recorded forward over a batch of encoded points.
    pub fn forward_train(
        &self,
        enc_pos: &Matrix<S>,
        enc_dir: &Matrix<S>,
        tape: &mut GradientTape<S>,
    ) -> Result<PointOutputs<S>> {
        let mut h = tape.forward(&self.layers, 0, enc_pos)?;
        for i in 1..self.config.trunk_depth {
            let input = if i == self.config.skip_layer {
                h.hcat(enc_pos)
            } else {
                h
            };
            h = tape.forward(&self.layers, i, &input)?;
        }
        let pre = tape.forward(&self.layers, self.idx_density(), &h)?;
        let softplus_pre: Vec<S> = pre.data.clone();
        let sigma = softplus_pre.iter().map(|&z| softplus(z)).collect();
        let feat = tape.forward(&self.layers, self.idx_feature(), &h)?;
        let ch = tape.forward(&self.layers, self.idx_color_hidden(), &feat.hcat(enc_dir))?;
        let rgb = tape.forward(&self.layers, self.idx_color_out(), &ch)?;
        Ok(PointOutputs {
            sigma,
            rgb,
            softplus_pre,
        })
    }

    /// Lean forward without gradient recording.
    pub fn infer(&self, enc_pos: &Matrix<S>, enc_dir: &Matrix<S>) -> Result<(Vec<S>, Matrix<S>)> {
        let mut h = self.layers[0].forward(enc_pos)?;
        for i in 1..self.config.trunk_depth {
            let input = if i == self.config.skip_layer {
                h.hcat(enc_pos)
            } else {
                h
            };
            h = self.layers[i].forward(&input)?;
        }
        let pre = self.layers[self.idx_density()].forward(&h)?;
        let sigma = pre.data.iter().map(|&z| softplus(z)).collect();
        let feat = self.layers[self.idx_feature()].forward(&h)?;
        let ch = self.layers[self.idx_color_hidden()].forward(&feat.hcat(enc_dir))?;
        let rgb = self.layers[self.idx_color_out()].forward(&ch)?;
        Ok((sigma, rgb))
    }

    /// Backward through heads and trunk given per-point dL/dsigma and
    /// dL/drgb; accumulates parameter gradients into the tape.
    pub fn backward(
        &self,
        tape: &mut GradientTape<S>,
        out: &PointOutputs<S>,
        dsigma: &[S],
        drgb: &Matrix<S>,
    ) -> Result<()> {
        let w = self.config.width;
        let dch = tape.backward(&self.layers, self.idx_color_out(), drgb)?;
        let dfeat_dir = tape.backward(&self.layers, self.idx_color_hidden(), &dch)?;
        // split [feature | enc_dir]; encoded inputs take no gradient
        let mut dfeat = Matrix::zeros(dfeat_dir.rows, w);
        for r in 0..dfeat_dir.rows {
            dfeat.row_mut(r).copy_from_slice(&dfeat_dir.row(r)[..w]);
        }
        let mut dh = tape.backward(&self.layers, self.idx_feature(), &dfeat)?;
        // density path: dsigma -> dz via softplus' = sigmoid(z)
        let mut dz = Matrix::zeros(dsigma.len(), 1);
        for (i, (&ds, &z)) in dsigma.iter().zip(out.softplus_pre.iter()).enumerate() {
            dz.data[i] = ds * sigmoid(z);
        }
        let dh_density = tape.backward(&self.layers, self.idx_density(), &dz)?;
        for (a, b) in dh.data.iter_mut().zip(dh_density.data.iter()) {
            *a = *a + *b;
        }
        for i in (1..self.config.trunk_depth).rev() {
            let dx = tape.backward(&self.layers, i, &dh)?;
            dh = if i == self.config.skip_layer {
                let mut trimmed = Matrix::zeros(dx.rows, w);
                for r in 0..dx.rows {
                    trimmed.row_mut(r).copy_from_slice(&dx.row(r)[..w]);
                }
                trimmed
            } else {
                dx
            };
        }
        tape.backward(&self.layers, 0, &dh)?;
        Ok(())
    }

    /// Encode sample points and view directions for a set of rays with
    /// given per-ray depths; rows are ray-major then depth-major.
    pub fn encode_points(&self, rays: &[Ray], depths: &[Vec<f64>]) -> (Matrix<S>, Matrix<S>) {
        let pe = self.config.pos_enc();
        let de = self.config.dir_enc();
        let n: usize = depths.iter().map(|d| d.len()).sum();
        let mut pos = Vec::with_capacity(n * pe.output_dim(3));
        let mut dir = Vec::with_capacity(n * de.output_dim(3));
        for (ray, ds) in rays.iter().zip(depths) {
            let d_enc = de.encode(&[
                S::from_f64(ray.dir.x),
                S::from_f64(ray.dir.y),
                S::from_f64(ray.dir.z),
            ]);
            for &t in ds {
                let p = ray.origin.add(ray.dir.scale(t));
                pe.encode_into(
                    &[S::from_f64(p.x), S::from_f64(p.y), S::from_f64(p.z)],
                    &mut pos,
                );
                dir.extend_from_slice(&d_enc);
            }
        }
        (
            Matrix::from_vec(n, pe.output_dim(3), pos),
            Matrix::from_vec(n, de.output_dim(3), dir),
        )
    }

    fn quadrature_for_ray(
        &self,
        ray: &Ray,
        depths: &[f64],
        sigma: &[S],
        rgb: &Matrix<S>,
        offset: usize,
    ) -> QuadratureSamples<S> {
        let n = depths.len();
        QuadratureSamples {
            depths: depths.iter().map(|&t| S::from_f64(t)).collect(),
            far: S::from_f64(ray.far),
            sigmas: sigma[offset..offset + n].to_vec(),
            colors: (0..n)
                .map(|k| {
                    let row = rgb.row(offset + k);
                    [row[0], row[1], row[2]]
                })
                .collect(),
        }
    }

    fn background_s(&self) -> [S; 3] {
        let b = self.config.background;
        [S::from_f64(b[0]), S::from_f64(b[1]), S::from_f64(b[2])]
    }

    /// Composited colors for a set of rays; depths chosen by `mode`.
    /// Returns the [B x 3] colors and the number of network queries.
    pub fn render_rays<R: Rng>(
        &self,
        rays: &[Ray],
        mode: SampleMode,
        rng: &mut R,
    ) -> Result<(Matrix<S>, u64)> {
        let n = self.config.n_samples;
        let mut out = Matrix::zeros(rays.len(), 3);
        let mut queries = 0u64;
        // chunk to bound activation memory
        for (ci, chunk) in rays.chunks(CHUNK_RAYS).enumerate() {
            let depths: Vec<Vec<f64>> = chunk
                .iter()
                .map(|r| stratified_depths(r.near, r.far, n, mode, rng))
                .collect();
            let (enc_pos, enc_dir) = self.encode_points(chunk, &depths);
            let (sigma, rgb) = self.infer(&enc_pos, &enc_dir)?;
            queries += enc_pos.rows as u64;
            let mut offset = 0;
            for (ri, ray) in chunk.iter().enumerate() {
                let qs = self.quadrature_for_ray(ray, &depths[ri], &sigma, &rgb, offset);
                let comp = composite_ray(&qs, self.background_s());
                out.row_mut(ci * CHUNK_RAYS + ri).copy_from_slice(&comp.rgb);
                offset += n;
            }
        }
        Ok((out, queries))
    }

    /// Render a full image in test mode (deterministic midpoint depths).
    pub fn render_image(&self, pose: &CameraPose) -> Result<(Image, u64)> {
        let rays = pose.all_rays();
        let mut rng = ChaCha8Rng::seed_from_u64(0); // unused in test mode
        let (rgb, queries) = self.render_rays(&rays, SampleMode::Test, &mut rng)?;
        let mut img = Image::new(pose.width, pose.height);
        for (px, row) in img.data.chunks_mut(3).zip(0..rgb.rows) {
            for c in 0..3 {
                px[c] = rgb.get(row, c).to_f64() as f32;
            }
        }
        Ok((img, queries))
    }
}

const CHUNK_RAYS: usize = 256;

#[derive(Clone, Debug)]
pub struct TeacherTrainConfig {
    pub iters: u64,
    pub batch_rays: usize,
    pub lr0: f64,
    pub seed: u64,
    /// Evaluate held-out PSNR every this many iterations (0 = never).
    pub eval_every: u64,
    pub threads: usize,
}

impl Default for TeacherTrainConfig {
    fn default() -> Self {
        TeacherTrainConfig {
            iters: 100_000,
            batch_rays: 1024,
            lr0: 5e-4,
            seed: 0,
            eval_every: 0,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainLogEntry {
    pub iter: u64,
    pub loss: f64,
    pub lr: f64,
    pub eval_psnr: Option<f64>,
}

/// Rays plus target colors, flattened from posed images.
pub struct RayDataset<S> {
    pub rays: Vec<Ray>,
    pub targets: Matrix<S>,
}

impl<S: Scalar> RayDataset<S> {
    pub fn from_images(images: &[Image], poses: &[CameraPose]) -> Self {
        assert_eq!(images.len(), poses.len());
        let mut rays = Vec::new();
        let mut targets = Vec::new();
        for (img, pose) in images.iter().zip(poses) {
            rays.extend(pose.all_rays());
            targets.extend(img.data.iter().map(|&v| S::from_f64(v as f64)));
        }
        let n = rays.len();
        RayDataset {
            rays,
            targets: Matrix::from_vec(n, 3, targets),
        }
    }
}

/// Minimize MSE between composited rays and image pixels.
///
/// A training step shards the ray batch, runs forward/backward per shard
/// in parallel, merges gradients in shard order and applies one Adam
/// update. Aborts on a non-finite loss.
pub fn train_teacher<S: Scalar>(
    model: &mut NerfMlp<S>,
    data: &RayDataset<S>,
    eval: Option<&RayDataset<S>>,
    cfg: &TeacherTrainConfig,
    log_every: u64,
) -> Result<Vec<TrainLogEntry>> {
    if data.rays.is_empty() {
        return Err(Error::Usage("teacher training needs at least one image".into()));
    }
    let mut adam = AdamState::new(
        AdamHyper {
            lr0: cfg.lr0,
            ..AdamHyper::default()
        },
        &model.param_shapes(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::new();
    let n_samples = model.config.n_samples;
    let chunk = CHUNK_RAYS.min(cfg.batch_rays.max(1));

    for iter in 0..cfg.iters {
        let idx: Vec<usize> = (0..cfg.batch_rays)
            .map(|_| rng.gen_range(0..data.rays.len()))
            .collect();
        let chunk_seeds: Vec<u64> = (0..idx.len().div_ceil(chunk)).map(|_| rng.gen()).collect();
        let batch_total = idx.len();
        let model_ref: &NerfMlp<S> = model;

        let shards: Vec<(GradientTape<S>, f64)> = idx
            .par_chunks(chunk)
            .zip(chunk_seeds.par_iter())
            .map(|(ids, &shard_seed)| {
                let mut shard_rng = ChaCha8Rng::seed_from_u64(shard_seed);
                let rays: Vec<Ray> = ids.iter().map(|&i| data.rays[i]).collect();
                let depths: Vec<Vec<f64>> = rays
                    .iter()
                    .map(|r| {
                        stratified_depths(r.near, r.far, n_samples, SampleMode::Train, &mut shard_rng)
                    })
                    .collect();
                let (enc_pos, enc_dir) = model_ref.encode_points(&rays, &depths);
                let mut tape = GradientTape::new(&model_ref.layers);
                let out = model_ref.forward_train(&enc_pos, &enc_dir, &mut tape)?;

                let bg = model_ref.background_s();
                let mut loss_sum = 0.0f64;
                let mut dsigma = vec![S::zero(); out.sigma.len()];
                let mut drgb = Matrix::zeros(out.rgb.rows, 3);
                let norm = 2.0 / (batch_total as f64 * 3.0);
                let mut offset = 0;
                for (ri, ray) in rays.iter().enumerate() {
                    let qs = model_ref.quadrature_for_ray(ray, &depths[ri], &out.sigma, &out.rgb, offset);
                    let comp = composite_ray(&qs, bg);
                    let target = data.targets.row(ids[ri]);
                    let mut dl = [S::zero(); 3];
                    for c in 0..3 {
                        let diff = comp.rgb[c] - target[c];
                        loss_sum += diff.to_f64() * diff.to_f64();
                        dl[c] = S::from_f64(diff.to_f64() * norm);
                    }
                    let (ds, dc) = composite_backward(&qs, &comp, bg, dl);
                    for (k, v) in ds.into_iter().enumerate() {
                        dsigma[offset + k] = v;
                    }
                    for (k, v) in dc.into_iter().enumerate() {
                        drgb.row_mut(offset + k).copy_from_slice(&v);
                    }
                    offset += n_samples;
                }
                model_ref.backward(&mut tape, &out, &dsigma, &drgb)?;
                Ok((tape, loss_sum))
            })
            .collect::<Result<Vec<_>>>()?;

        // fixed-order merge
        let mut iter_shards = shards.into_iter();
        let (mut master, mut loss_sum) = iter_shards.next().expect("at least one shard");
        for (tape, l) in iter_shards {
            master.merge(&tape);
            loss_sum += l;
        }
        let loss = loss_sum / (batch_total as f64 * 3.0);
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "teacher loss non-finite at iteration {iter}"
            )));
        }

        let lr = lr_schedule(iter, cfg.iters, cfg.lr0);
        let grads: Vec<&[S]> = master
            .grads
            .iter()
            .flat_map(|g| [g.weight.data.as_slice(), g.bias.as_slice()])
            .collect();
        adam_step(&mut model.params_mut(), &grads, &mut adam, lr)?;

        let should_eval = cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0;
        if (log_every > 0 && iter % log_every == 0) || should_eval || iter + 1 == cfg.iters {
            let eval_psnr = if should_eval || (iter + 1 == cfg.iters && eval.is_some()) {
                eval.map(|e| held_out_psnr(model, e, 1024))
            } else {
                None
            };
            log.push(TrainLogEntry {
                iter,
                loss,
                lr,
                eval_psnr: eval_psnr.flatten(),
            });
        }
    }
    Ok(log)
}

/// PSNR of test-mode renders against targets on a deterministic subset.
pub fn held_out_psnr<S: Scalar>(model: &NerfMlp<S>, data: &RayDataset<S>, max_rays: usize) -> Option<f64> {
    let step = (data.rays.len() / max_rays).max(1);
    let rays: Vec<Ray> = data.rays.iter().step_by(step).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (pred, _) = model.render_rays(&rays, SampleMode::Test, &mut rng).ok()?;
    let mut se = 0.0f64;
    for (k, row) in (0..pred.rows).enumerate() {
        let target = data.targets.row(k * step);
        for c in 0..3 {
            let d = pred.get(row, c).to_f64() - target[c].to_f64();
            se += d * d;
        }
    }
    let mse = se / (pred.rows * 3) as f64;
    Some(10.0 * (1.0 / mse).log10())
}
