//! Pseudo-ray synthesis from a trained teacher, dataset persistence,
//! the hard-example pool, and the student training loop.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::checkpoint::teacher_digest;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Scalar};
use crate::nn::{adam_step, lr_schedule, AdamHyper, AdamState, GradientTape};
use crate::scene::{Ray, Vec3};
use crate::student::{RayEncoder, ResidualMlp};
use crate::teacher::{NerfMlp, TrainLogEntry};
use crate::volume::SampleMode;

/// Componentwise min/max over training-ray origins and unit directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayBoundingBox {
    pub origin_min: [f64; 3],
    pub origin_max: [f64; 3],
    pub dir_min: [f64; 3],
    pub dir_max: [f64; 3],
}

impl RayBoundingBox {
    pub fn validate(&self) -> Result<()> {
        for c in 0..3 {
            if self.origin_min[c] > self.origin_max[c] || self.dir_min[c] > self.dir_max[c] {
                return Err(Error::Config("bounding box min exceeds max".into()));
            }
        }
        Ok(())
    }

    pub fn contains(&self, ray: &Ray) -> bool {
        let o = [ray.origin.x, ray.origin.y, ray.origin.z];
        let d = [ray.dir.x, ray.dir.y, ray.dir.z];
        (0..3).all(|c| {
            o[c] >= self.origin_min[c]
                && o[c] <= self.origin_max[c]
                && d[c] >= self.dir_min[c]
                && d[c] <= self.dir_max[c]
        })
    }

    fn flat(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        out[0..3].copy_from_slice(&self.origin_min);
        out[3..6].copy_from_slice(&self.origin_max);
        out[6..9].copy_from_slice(&self.dir_min);
        out[9..12].copy_from_slice(&self.dir_max);
        out
    }

    fn from_flat(v: &[f64]) -> Self {
        RayBoundingBox {
            origin_min: [v[0], v[1], v[2]],
            origin_max: [v[3], v[4], v[5]],
            dir_min: [v[6], v[7], v[8]],
            dir_max: [v[9], v[10], v[11]],
        }
    }
}

/// Exact componentwise enclosure of the training rays, no margin.
pub fn infer_bbox(rays: &[Ray]) -> Result<RayBoundingBox> {
    if rays.is_empty() {
        return Err(Error::Usage("bounding box needs at least one ray".into()));
    }
    let mut bb = RayBoundingBox {
        origin_min: [f64::INFINITY; 3],
        origin_max: [f64::NEG_INFINITY; 3],
        dir_min: [f64::INFINITY; 3],
        dir_max: [f64::NEG_INFINITY; 3],
    };
    for ray in rays {
        let o = [ray.origin.x, ray.origin.y, ray.origin.z];
        let d = [ray.dir.x, ray.dir.y, ray.dir.z];
        for c in 0..3 {
            bb.origin_min[c] = bb.origin_min[c].min(o[c]);
            bb.origin_max[c] = bb.origin_max[c].max(o[c]);
            bb.dir_min[c] = bb.dir_min[c].min(d[c]);
            bb.dir_max[c] = bb.dir_max[c].max(d[c]);
        }
    }
    Ok(bb)
}

/// One training record: ray origin, unit direction, target RGB.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PseudoSample {
    pub origin: [f32; 3],
    pub dir: [f32; 3],
    pub rgb: [f32; 3],
}

impl PseudoSample {
    pub fn ray(&self, near: f64, far: f64) -> Ray {
        Ray {
            origin: Vec3::new(self.origin[0] as f64, self.origin[1] as f64, self.origin[2] as f64),
            dir: Vec3::new(self.dir[0] as f64, self.dir[1] as f64, self.dir[2] as f64),
            near,
            far,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetHeader {
    pub bbox: RayBoundingBox,
    pub near: f64,
    pub far: f64,
    pub teacher_digest: [u8; 32],
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct PseudoDataset {
    pub header: DatasetHeader,
    pub records: Vec<PseudoSample>,
}

const DATASET_MAGIC: &[u8; 4] = b"PRAY";
const DATASET_VERSION: u32 = 1;

impl PseudoDataset {
    pub fn ray(&self, i: usize) -> Ray {
        self.records[i].ray(self.header.near, self.header.far)
    }

    /// Refuse to pair the dataset with a teacher other than the one that
    /// generated it.
    pub fn verify_teacher<S: Scalar>(&self, teacher: &NerfMlp<S>) -> Result<()> {
        if teacher_digest(teacher) != self.header.teacher_digest {
            return Err(Error::Mismatch(
                "dataset was generated by a different teacher checkpoint".into(),
            ));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(128 + self.records.len() * 36);
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for v in self.header.bbox.flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.header.near.to_le_bytes());
        out.extend_from_slice(&self.header.far.to_le_bytes());
        out.extend_from_slice(&self.header.teacher_digest);
        out.extend_from_slice(&self.header.seed.to_le_bytes());
        for rec in &self.records {
            for v in rec.origin.iter().chain(&rec.dir).chain(&rec.rgb) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        std::fs::write(path, &out)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<PseudoDataset> {
        let bytes = std::fs::read(path)?;
        if bytes.len() < 4 + 4 + 8 + 14 * 8 + 32 + 8 + 32 || &bytes[0..4] != DATASET_MAGIC {
            return Err(Error::Corrupt("not a pseudo-ray dataset".into()));
        }
        let body = &bytes[..bytes.len() - 32];
        let stored = &bytes[bytes.len() - 32..];
        let computed: [u8; 32] = Sha256::digest(body).into();
        if stored != computed {
            return Err(Error::Corrupt("dataset checksum mismatch".into()));
        }
        let mut pos = 4;
        let version = u32::from_le_bytes(body[pos..pos + 4].try_into().unwrap());
        pos += 4;
        if version != DATASET_VERSION {
            return Err(Error::Corrupt(format!("unsupported dataset version {version}")));
        }
        let count = u64::from_le_bytes(body[pos..pos + 8].try_into().unwrap()) as usize;
        pos += 8;
        let mut box_flat = [0.0f64; 12];
        for v in box_flat.iter_mut() {
            *v = f64::from_le_bytes(body[pos..pos + 8].try_into().unwrap());
            pos += 8;
        }
        let near = f64::from_le_bytes(body[pos..pos + 8].try_into().unwrap());
        pos += 8;
        let far = f64::from_le_bytes(body[pos..pos + 8].try_into().unwrap());
        pos += 8;
        let teacher_digest: [u8; 32] = body[pos..pos + 32].try_into().unwrap();
        pos += 32;
        let seed = u64::from_le_bytes(body[pos..pos + 8].try_into().unwrap());
        pos += 8;
        if body.len() != pos + count * 36 {
            return Err(Error::Corrupt("dataset record count mismatch".into()));
        }
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let mut vals = [0.0f32; 9];
            for v in vals.iter_mut() {
                *v = f32::from_le_bytes(body[pos..pos + 4].try_into().unwrap());
                pos += 4;
            }
            records.push(PseudoSample {
                origin: [vals[0], vals[1], vals[2]],
                dir: [vals[3], vals[4], vals[5]],
                rgb: [vals[6], vals[7], vals[8]],
            });
        }
        Ok(PseudoDataset {
            header: DatasetHeader {
                bbox: RayBoundingBox::from_flat(&box_flat),
                near,
                far,
                teacher_digest,
                seed,
            },
            records,
        })
    }
}

/// Componentwise-uniform draws within the box; direction renormalized to
/// unit length afterwards.
pub fn sample_pseudo_rays<R: Rng>(
    bbox: &RayBoundingBox,
    n: usize,
    near: f64,
    far: f64,
    rng: &mut R,
) -> Result<Vec<Ray>> {
    bbox.validate()?;
    let draw = |lo: f64, hi: f64, rng: &mut R| if lo == hi { lo } else { rng.gen_range(lo..=hi) };
    let mut rays = Vec::with_capacity(n);
    for _ in 0..n {
        let mut rejects = 0;
        let dir = loop {
            let dir = Vec3::new(
                draw(bbox.dir_min[0], bbox.dir_max[0], rng),
                draw(bbox.dir_min[1], bbox.dir_max[1], rng),
                draw(bbox.dir_min[2], bbox.dir_max[2], rng),
            );
            if dir.norm() > 1e-12 {
                break dir;
            }
            rejects += 1;
            if rejects >= 1000 {
                return Err(Error::Usage(
                    "direction box admits only near-zero directions".into(),
                ));
            }
        };
        rays.push(Ray {
            origin: Vec3::new(
                draw(bbox.origin_min[0], bbox.origin_max[0], rng),
                draw(bbox.origin_min[1], bbox.origin_max[1], rng),
                draw(bbox.origin_min[2], bbox.origin_max[2], rng),
            ),
            dir: dir.normalized(),
            near,
            far,
        });
    }
    Ok(rays)
}

#[derive(Clone, Debug)]
pub struct GenOptions {
    pub n_rays: usize,
    pub near: f64,
    pub far: f64,
    pub seed: u64,
}

fn quantize(ray: &Ray) -> PseudoSample {
    PseudoSample {
        origin: [ray.origin.x as f32, ray.origin.y as f32, ray.origin.z as f32],
        dir: [ray.dir.x as f32, ray.dir.y as f32, ray.dir.z as f32],
        rgb: [0.0; 3],
    }
}

/// Label box-uniform pseudo rays with the teacher's test-mode renders.
/// Ray coordinates are rounded to f32 before labeling so a stored record
/// re-queried against the same teacher reproduces its RGB exactly.
/// With `real` set, every original training ray and its ground-truth
/// color is appended after the synthesized records.
pub fn generate_pseudo_dataset<S: Scalar>(
    teacher: &NerfMlp<S>,
    bbox: &RayBoundingBox,
    opts: &GenOptions,
    real: Option<(&[Ray], &Matrix<S>)>,
) -> Result<PseudoDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let sampled = sample_pseudo_rays(bbox, opts.n_rays, opts.near, opts.far, &mut rng)?;
    let mut records: Vec<PseudoSample> = sampled.iter().map(quantize).collect();
    let rays: Vec<Ray> = records
        .iter()
        .map(|s| s.ray(opts.near, opts.far))
        .collect();

    let labeled: Vec<Result<Vec<[f32; 3]>>> = rays
        .par_chunks(512)
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(0); // unused in test mode
            let (rgb, _) = teacher.render_rays(chunk, SampleMode::Test, &mut rng)?;
            Ok((0..rgb.rows)
                .map(|r| {
                    [
                        rgb.get(r, 0).to_f64() as f32,
                        rgb.get(r, 1).to_f64() as f32,
                        rgb.get(r, 2).to_f64() as f32,
                    ]
                })
                .collect())
        })
        .collect();
    let mut k = 0;
    for chunk in labeled {
        for rgb in chunk? {
            records[k].rgb = rgb;
            k += 1;
        }
    }

    if let Some((real_rays, targets)) = real {
        for (i, ray) in real_rays.iter().enumerate() {
            let mut rec = quantize(ray);
            let t = targets.row(i);
            rec.rgb = [
                t[0].to_f64() as f32,
                t[1].to_f64() as f32,
                t[2].to_f64() as f32,
            ];
            records.push(rec);
        }
    }

    Ok(PseudoDataset {
        header: DatasetHeader {
            bbox: *bbox,
            near: opts.near,
            far: opts.far,
            teacher_digest: teacher_digest(teacher),
            seed: opts.seed,
        },
        records,
    })
}

/// Bounded store of high-loss rays; capacity 4·r·B, uniform eviction.
#[derive(Clone, Debug)]
pub struct HardExamplePool {
    pub entries: Vec<(PseudoSample, f64)>,
    pub capacity: usize,
    pub r: f64,
}

impl HardExamplePool {
    pub fn new(r: f64, batch_size: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::Config(format!("pool ratio {r} outside [0, 1)")));
        }
        Ok(HardExamplePool {
            entries: Vec::new(),
            capacity: (4.0 * r * batch_size as f64).floor() as usize,
            r,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Insert the ⌊r·B⌋ largest-loss rays of the batch; evict uniformly at
/// random past capacity.
pub fn pool_update<R: Rng>(
    pool: &mut HardExamplePool,
    batch: &[PseudoSample],
    losses: &[f64],
    rng: &mut R,
) -> Result<()> {
    if batch.len() != losses.len() {
        return Err(Error::Usage("pool update batch/loss length mismatch".into()));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Usage("pool update with non-finite loss".into()));
    }
    let k = (pool.r * batch.len() as f64).floor() as usize;
    if k == 0 {
        return Ok(());
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by(|&a, &b| losses[b].partial_cmp(&losses[a]).unwrap());
    for &i in &order[..k] {
        pool.entries.push((batch[i], losses[i]));
        if pool.entries.len() > pool.capacity {
            let evict = rng.gen_range(0..pool.entries.len());
            pool.entries.swap_remove(evict);
        }
    }
    Ok(())
}

/// Shuffled pass over the dataset indices; every record is visited
/// exactly once per epoch.
#[derive(Clone, Debug)]
pub struct EpochStream {
    order: Vec<usize>,
    pos: usize,
}

impl EpochStream {
    pub fn new(n: usize) -> Self {
        EpochStream {
            order: (0..n).collect(),
            pos: n, // force a shuffle on first use
        }
    }

    pub fn next_indices<R: Rng>(&mut self, k: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos >= self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let take = (k - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

/// ⌈(1−r)·B⌉ fresh rays from the epoch stream plus ⌊r·B⌋ uniform picks
/// from the pool (fewer if the pool is smaller); exactly B in total.
pub fn compose_batch<R: Rng>(
    records: &[PseudoSample],
    stream: &mut EpochStream,
    pool: &HardExamplePool,
    b: usize,
    r: f64,
    rng: &mut R,
) -> Vec<PseudoSample> {
    let n_pool = ((r * b as f64).floor() as usize).min(pool.len());
    let n_fresh = b - n_pool;
    let mut batch: Vec<PseudoSample> = stream
        .next_indices(n_fresh, rng)
        .into_iter()
        .map(|i| records[i])
        .collect();
    if n_pool > 0 {
        for i in rand::seq::index::sample(rng, pool.len(), n_pool) {
            batch.push(pool.entries[i].0);
        }
    }
    batch
}

#[derive(Clone, Debug)]
pub struct StudentTrainConfig {
    pub iters: u64,
    pub batch: usize,
    /// Hard-example ratio.
    pub r: f64,
    pub lr0: f64,
    pub seed: u64,
    /// Evaluate held-out PSNR every this many iterations (0 = never).
    pub eval_every: u64,
    /// Parameter snapshot cadence for divergence recovery.
    pub snapshot_every: u64,
}

impl Default for StudentTrainConfig {
    fn default() -> Self {
        StudentTrainConfig {
            iters: 50_000,
            batch: 8192,
            r: 0.2,
            lr0: 5e-4,
            seed: 0,
            eval_every: 0,
            snapshot_every: 1000,
        }
    }
}

const SHARD_RAYS: usize = 2048;

fn snapshot_params<S: Scalar>(model: &ResidualMlp<S>) -> Vec<Vec<S>> {
    model.param_blobs().into_iter().map(|b| b.to_vec()).collect()
}

fn restore_params<S: Scalar>(model: &mut ResidualMlp<S>, snap: &[Vec<S>]) {
    for (p, s) in model.params_mut().into_iter().zip(snap) {
        p.copy_from_slice(s);
    }
}

/// Held-out PSNR of the student against target colors, test-mode encoding.
pub fn student_psnr<S: Scalar>(
    model: &ResidualMlp<S>,
    encoder: &RayEncoder,
    rays: &[Ray],
    targets: &Matrix<S>,
) -> Result<f64> {
    let enc = encoder.with_mode(SampleMode::Test);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut se = 0.0f64;
    let mut row0 = 0;
    for chunk in rays.chunks(4096) {
        let x = enc.encode_batch::<S, _>(chunk, &mut rng);
        let pred = model.forward(&x)?;
        for r in 0..pred.rows {
            let t = targets.row(row0 + r);
            for c in 0..3 {
                let d = pred.get(r, c).to_f64() - t[c].to_f64();
                se += d * d;
            }
        }
        row0 += pred.rows;
    }
    let mse = se / (rays.len() * 3) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Distill the dataset into the student: compose a batch, re-encode the
/// rays with fresh train-mode stratification, minimize MSE, feed per-ray
/// losses back into the hard-example pool, Adam with the decaying
/// schedule. Aborts on a non-finite loss with the last parameter
/// snapshot restored.
pub fn train_student<S: Scalar>(
    dataset: &PseudoDataset,
    model: &mut ResidualMlp<S>,
    encoder: &RayEncoder,
    eval: Option<(&[Ray], &Matrix<S>)>,
    cfg: &StudentTrainConfig,
    log_every: u64,
) -> Result<Vec<TrainLogEntry>> {
    if dataset.records.is_empty() {
        return Err(Error::Usage("student training needs a nonempty dataset".into()));
    }
    let mut pool = HardExamplePool::new(cfg.r, cfg.batch)?;
    let mut stream = EpochStream::new(dataset.records.len());
    let mut adam = AdamState::new(
        AdamHyper {
            lr0: cfg.lr0,
            ..AdamHyper::default()
        },
        &model.param_shapes(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let enc_train = encoder.with_mode(SampleMode::Train);
    let (near, far) = (dataset.header.near, dataset.header.far);
    let mut snapshot = snapshot_params(model);
    let mut log = Vec::new();

    for iter in 0..cfg.iters {
        let batch = compose_batch(&dataset.records, &mut stream, &pool, cfg.batch, cfg.r, &mut rng);
        let shard_seeds: Vec<u64> = (0..batch.len().div_ceil(SHARD_RAYS)).map(|_| rng.gen()).collect();
        let batch_total = batch.len();
        let model_ref: &ResidualMlp<S> = model;

        let shards: Vec<(GradientTape<S>, f64, Vec<f64>)> = batch
            .par_chunks(SHARD_RAYS)
            .zip(shard_seeds.par_iter())
            .map(|(samples, &shard_seed)| {
                let mut shard_rng = ChaCha8Rng::seed_from_u64(shard_seed);
                let rays: Vec<Ray> = samples.iter().map(|s| s.ray(near, far)).collect();
                let x = enc_train.encode_batch::<S, _>(&rays, &mut shard_rng);
                let mut tape = GradientTape::new(&model_ref.layers);
                let pred = model_ref.forward_train(&x, &mut tape)?;
                let norm = S::from_f64(2.0 / (batch_total as f64 * 3.0));
                let mut dout = Matrix::zeros(pred.rows, 3);
                let mut per_ray = Vec::with_capacity(pred.rows);
                let mut loss_sum = 0.0f64;
                for r in 0..pred.rows {
                    let mut ray_se = 0.0f64;
                    for c in 0..3 {
                        let diff = pred.get(r, c) - S::from_f64(samples[r].rgb[c] as f64);
                        ray_se += diff.to_f64() * diff.to_f64();
                        dout.set(r, c, diff * norm);
                    }
                    per_ray.push(ray_se / 3.0);
                    loss_sum += ray_se;
                }
                model_ref.backward(&mut tape, &dout)?;
                Ok((tape, loss_sum, per_ray))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut iter_shards = shards.into_iter();
        let (mut master, mut loss_sum, mut per_ray) = iter_shards.next().expect("nonempty batch");
        for (tape, l, p) in iter_shards {
            master.merge(&tape);
            loss_sum += l;
            per_ray.extend(p);
        }
        let loss = loss_sum / (batch_total as f64 * 3.0);
        if !loss.is_finite() {
            restore_params(model, &snapshot);
            return Err(Error::Divergence(format!(
                "student loss non-finite at iteration {iter}; last snapshot restored"
            )));
        }

        pool_update(&mut pool, &batch, &per_ray, &mut rng)?;

        let lr = lr_schedule(iter, cfg.iters, cfg.lr0);
        let grads: Vec<&[S]> = master
            .grads
            .iter()
            .flat_map(|g| [g.weight.data.as_slice(), g.bias.as_slice()])
            .collect();
        if let Err(e) = adam_step(&mut model.params_mut(), &grads, &mut adam, lr) {
            restore_params(model, &snapshot);
            return Err(e);
        }

        if cfg.snapshot_every > 0 && (iter + 1) % cfg.snapshot_every == 0 {
            snapshot = snapshot_params(model);
        }
        let should_eval = cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0;
        if (log_every > 0 && iter % log_every == 0) || should_eval || iter + 1 == cfg.iters {
            let eval_psnr = if should_eval || (iter + 1 == cfg.iters && eval.is_some()) {
                match eval {
                    Some((rays, targets)) => student_psnr(model, encoder, rays, targets).ok(),
                    None => None,
                }
            } else {
                None
            };
            log.push(TrainLogEntry {
                iter,
                loss,
                lr,
                eval_psnr,
            });
        }
    }
    Ok(log)
}
