//! Deep residual light-field network and its ray encoders: renders a
//! pixel with one network query instead of marching the ray.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::PositionalEncoding;
use crate::error::{Error, Result};
use crate::img::Image;
use crate::linalg::{Matrix, Scalar};
use crate::nn::{Activation, DenseLayer, GradientTape};
use crate::scene::{CameraPose, Ray};
use crate::volume::{stratified_depths, SampleMode};

/// Width/depth of the residual student; depth D = 2 + 2B for B blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentShape {
    pub width: usize,
    pub depth: usize,
    /// Ablation switch: `false` removes the identity skips while keeping
    /// the layer stack identical.
    pub residual: bool,
}

impl StudentShape {
    /// Named budget configs plus custom(W, D).
    pub fn build_config(name: &str) -> Result<StudentShape> {
        let (width, depth) = match name {
            "W256D88" => (256, 88),
            "W181D88" => (181, 88),
            "W256D44" => (256, 44),
            "W363D22" => (363, 22),
            custom => {
                let rest = custom
                    .strip_prefix('W')
                    .ok_or_else(|| Error::Config(format!("unknown model config {custom:?}")))?;
                let (w, d) = rest
                    .split_once('D')
                    .ok_or_else(|| Error::Config(format!("unknown model config {custom:?}")))?;
                let w: usize = w.parse().map_err(|_| Error::Config("bad width".into()))?;
                let d: usize = d.parse().map_err(|_| Error::Config("bad depth".into()))?;
                (w, d)
            }
        };
        if depth % 2 != 0 || depth < 4 {
            return Err(Error::Config(format!(
                "depth {depth} not expressible as 2 + 2B residual blocks"
            )));
        }
        Ok(StudentShape {
            width,
            depth,
            residual: true,
        })
    }

    pub fn blocks(&self) -> usize {
        (self.depth - 2) / 2
    }
}

/// Ray-to-input-vector encoders.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RayEncoder {
    /// Concatenate K sampled points along the ray, positionally encoded.
    /// Stratified depths in train mode, bin midpoints in test mode.
    KPoint {
        k: usize,
        enc: PositionalEncoding,
        mode: SampleMode,
    },
    /// Encode (direction, origin x direction).
    Plucker { enc: PositionalEncoding },
}

// SampleMode serialization lives here so checkpoints are self-describing.
impl Serialize for SampleMode {
    fn serialize<Ser: serde::Serializer>(&self, s: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        s.serialize_str(match self {
            SampleMode::Train => "train",
            SampleMode::Test => "test",
        })
    }
}

impl<'de> Deserialize<'de> for SampleMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "train" => Ok(SampleMode::Train),
            "test" => Ok(SampleMode::Test),
            other => Err(serde::de::Error::custom(format!("bad sample mode {other:?}"))),
        }
    }
}

impl RayEncoder {
    pub fn k_point(k: usize, octaves: usize, mode: SampleMode) -> Self {
        assert!(k >= 2, "need at least two points to define a ray");
        RayEncoder::KPoint {
            k,
            enc: PositionalEncoding::new(octaves, true),
            mode,
        }
    }

    pub fn plucker(octaves: usize) -> Self {
        RayEncoder::Plucker {
            enc: PositionalEncoding::new(octaves, true),
        }
    }

    pub fn with_mode(self, mode: SampleMode) -> Self {
        match self {
            RayEncoder::KPoint { k, enc, .. } => RayEncoder::KPoint { k, enc, mode },
            p => p,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            RayEncoder::KPoint { k, enc, .. } => enc.output_dim(3 * k),
            RayEncoder::Plucker { enc } => enc.output_dim(6),
        }
    }

    /// Raw (pre-encoding) coordinates for one ray.
    pub fn raw_coords<R: Rng>(&self, ray: &Ray, rng: &mut R) -> Vec<f64> {
        match self {
            RayEncoder::KPoint { k, mode, .. } => {
                let depths = stratified_depths(ray.near, ray.far, *k, *mode, rng);
                let mut out = Vec::with_capacity(3 * k);
                for t in depths {
                    let p = ray.origin.add(ray.dir.scale(t));
                    out.extend_from_slice(&[p.x, p.y, p.z]);
                }
                out
            }
            RayEncoder::Plucker { .. } => {
                let m = ray.origin.cross(ray.dir);
                vec![ray.dir.x, ray.dir.y, ray.dir.z, m.x, m.y, m.z]
            }
        }
    }

    pub fn encode_ray<S: Scalar, R: Rng>(&self, ray: &Ray, rng: &mut R) -> Vec<S> {
        let raw = self.raw_coords(ray, rng);
        let raw_s: Vec<S> = raw.iter().map(|&v| S::from_f64(v)).collect();
        match self {
            RayEncoder::KPoint { enc, .. } | RayEncoder::Plucker { enc } => enc.encode(&raw_s),
        }
    }

    /// Encode a batch of rays into a [B x input_dim] matrix.
    pub fn encode_batch<S: Scalar, R: Rng>(&self, rays: &[Ray], rng: &mut R) -> Matrix<S> {
        let dim = self.input_dim();
        let mut data = Vec::with_capacity(rays.len() * dim);
        for ray in rays {
            data.extend(self.encode_ray::<S, R>(ray, rng));
        }
        Matrix::from_vec(rays.len(), dim, data)
    }
}

/// Deep residual MLP: input layer, B two-layer residual blocks, sigmoid
/// output head. One forward pass per ray, no iteration over depth.
#[derive(Clone, Debug)]
pub struct ResidualMlp<S> {
    pub shape: StudentShape,
    pub input_dim: usize,
    /// input, (block0.a, block0.b), ..., head.
    pub layers: Vec<DenseLayer<S>>,
}

impl<S: Scalar> ResidualMlp<S> {
    pub fn new<R: Rng>(shape: StudentShape, input_dim: usize, rng: &mut R) -> Self {
        let w = shape.width;
        let mut layers = Vec::with_capacity(2 + 2 * shape.blocks());
        layers.push(DenseLayer::new(input_dim, w, Activation::Relu).init_he(rng, 1.0));
        // damp each block's exit layer by 1/sqrt(B): accumulated skip
        // variance then stays O(1) at 88-layer depth instead of growing
        // exponentially and saturating the output head; without skips
        // plain He is the right scaling
        let block_gain = if shape.residual {
            1.0 / (shape.blocks().max(1) as f64).sqrt()
        } else {
            1.0
        };
        for _ in 0..shape.blocks() {
            layers.push(DenseLayer::new(w, w, Activation::Relu).init_he(rng, 1.0));
            layers.push(DenseLayer::new(w, w, Activation::Relu).init_he(rng, block_gain));
        }
        // small head so initial predictions sit near mid-gray
        layers.push(DenseLayer::new(w, 3, Activation::Sigmoid).init_he(rng, 0.1));
        ResidualMlp {
            shape,
            input_dim,
            layers,
        }
    }

    fn idx_head(&self) -> usize {
        self.layers.len() - 1
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

    pub fn n_params(&self) -> usize {
        self.param_shapes().iter().sum()
    }

    /// One forward pass per ray over an encoded batch.
    pub fn forward(&self, encoded: &Matrix<S>) -> Result<Matrix<S>> {
        let mut h = self.layers[0].forward(encoded)?;
        for b in 0..self.shape.blocks() {
            let a = self.layers[1 + 2 * b].forward(&h)?;
            let f = self.layers[2 + 2 * b].forward(&a)?;
            h = if self.shape.residual {
                let mut out = f;
                for (o, x) in out.data.iter_mut().zip(h.data.iter()) {
                    *o = *o + *x;
                }
                out
            } else {
                f
            };
        }
        self.layers[self.idx_head()].forward(&h)
    }

    /// Tape-recorded forward.
    pub fn forward_train(&self, encoded: &Matrix<S>, tape: &mut GradientTape<S>) -> Result<Matrix<S>> {
        let mut h = tape.forward(&self.layers, 0, encoded)?;
        for b in 0..self.shape.blocks() {
            let a = tape.forward(&self.layers, 1 + 2 * b, &h)?;
            let f = tape.forward(&self.layers, 2 + 2 * b, &a)?;
            h = if self.shape.residual {
                let mut out = f;
                for (o, x) in out.data.iter_mut().zip(h.data.iter()) {
                    *o = *o + *x;
                }
                out
            } else {
                f
            };
        }
        tape.forward(&self.layers, self.idx_head(), &h)
    }

    /// Reverse sweep; gradients route through both the block layers and
    /// the identity skips.
    pub fn backward(&self, tape: &mut GradientTape<S>, dout: &Matrix<S>) -> Result<Matrix<S>> {
        let mut dh = tape.backward(&self.layers, self.idx_head(), dout)?;
        for b in (0..self.shape.blocks()).rev() {
            let df = dh.clone();
            let da = tape.backward(&self.layers, 2 + 2 * b, &df)?;
            let dx = tape.backward(&self.layers, 1 + 2 * b, &da)?;
            dh = if self.shape.residual {
                let mut sum = dx;
                for (s, g) in sum.data.iter_mut().zip(df.data.iter()) {
                    *s = *s + *g;
                }
                sum
            } else {
                dx
            };
        }
        tape.backward(&self.layers, 0, &dh)
    }

    /// Deterministic image render; exactly one query per pixel.
    pub fn render_image(&self, encoder: &RayEncoder, pose: &CameraPose) -> Result<(Image, u64)> {
        let rays = pose.all_rays();
        let mut rng = ChaCha8Rng::seed_from_u64(0); // test-mode encoders ignore it
        let mut img = Image::new(pose.width, pose.height);
        let mut queries = 0u64;
        for (ci, chunk) in rays.chunks(4096).enumerate() {
            let encoded = encoder.encode_batch::<S, _>(chunk, &mut rng);
            let rgb = self.forward(&encoded)?;
            queries += rgb.rows as u64;
            for r in 0..rgb.rows {
                let px = ci * 4096 + r;
                let (i, j) = (px % pose.width, px / pose.width);
                img.set_pixel(
                    i,
                    j,
                    [
                        rgb.get(r, 0).to_f64() as f32,
                        rgb.get(r, 1).to_f64() as f32,
                        rgb.get(r, 2).to_f64() as f32,
                    ],
                );
            }
        }
        Ok((img, queries))
    }
}

pub use crate::volume::SampleMode as EncoderMode;
