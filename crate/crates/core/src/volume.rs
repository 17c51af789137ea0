//! Volume rendering quadrature: stratified depth sampling and
//! alpha-composited aggregation with its reverse-mode gradient.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Scalar;

/// Point sampling mode along a ray: one uniform draw per equal bin in
/// training, deterministic bin midpoints in testing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    Train,
    Test,
}

/// N depths in [near, far]; train mode draws one uniform sample per
/// equal-width bin, test mode returns bin midpoints.
pub fn stratified_depths<R: Rng>(
    near: f64,
    far: f64,
    n: usize,
    mode: SampleMode,
    rng: &mut R,
) -> Vec<f64> {
    assert!(near < far, "near must precede far");
    assert!(n >= 1);
    let bin = (far - near) / n as f64;
    (0..n)
        .map(|i| {
            let lo = near + i as f64 * bin;
            match mode {
                SampleMode::Test => lo + 0.5 * bin,
                SampleMode::Train => lo + rng.gen::<f64>() * bin,
            }
        })
        .collect()
}

/// Per-ray quadrature samples: ascending depths with their field values.
#[derive(Clone, Debug)]
pub struct QuadratureSamples<S> {
    pub depths: Vec<S>,
    pub far: S,
    pub sigmas: Vec<S>,
    pub colors: Vec<[S; 3]>,
}

impl<S: Scalar> QuadratureSamples<S> {
    pub fn validate(&self) -> Result<()> {
        let n = self.depths.len();
        if self.sigmas.len() != n || self.colors.len() != n || n == 0 {
            return Err(Error::Config("quadrature sample lengths differ".into()));
        }
        for i in 0..n {
            let next = if i + 1 < n { self.depths[i + 1] } else { self.far };
            if !(next > self.depths[i]) {
                return Err(Error::Config("quadrature depths not strictly increasing".into()));
            }
        }
        Ok(())
    }

    /// Interval lengths; the last interval runs to `far`.
    pub fn deltas(&self) -> Vec<S> {
        let n = self.depths.len();
        (0..n)
            .map(|i| {
                let next = if i + 1 < n { self.depths[i + 1] } else { self.far };
                next - self.depths[i]
            })
            .collect()
    }
}

/// Output of the alpha-composition quadrature.
#[derive(Clone, Debug)]
pub struct CompositeOut<S> {
    pub rgb: [S; 3],
    pub weights: Vec<S>,
    pub alphas: Vec<S>,
    /// T_i before each sample (transmittance).
    pub trans: Vec<S>,
    pub acc_opacity: S,
}

/// Standard discretization of the volume rendering integral:
/// alpha_i = 1 - exp(-sigma_i delta_i), T_i = prod_{j<i}(1 - alpha_j),
/// w_i = T_i alpha_i, rgb = sum w_i c_i + (1 - sum w_i) * background.
pub fn composite_ray<S: Scalar>(
    samples: &QuadratureSamples<S>,
    background: [S; 3],
) -> CompositeOut<S> {
    let deltas = samples.deltas();
    let n = samples.sigmas.len();
    let mut weights = Vec::with_capacity(n);
    let mut alphas = Vec::with_capacity(n);
    let mut trans = Vec::with_capacity(n);
    let mut t = S::one();
    let mut rgb = [S::zero(); 3];
    let mut acc = S::zero();
    for i in 0..n {
        let alpha = S::one() - (-samples.sigmas[i] * deltas[i]).exp();
        let w = t * alpha;
        for c in 0..3 {
            rgb[c] = rgb[c] + w * samples.colors[i][c];
        }
        acc = acc + w;
        trans.push(t);
        alphas.push(alpha);
        weights.push(w);
        t = t * (S::one() - alpha);
    }
    for c in 0..3 {
        rgb[c] = rgb[c] + (S::one() - acc) * background[c];
    }
    CompositeOut {
        rgb,
        weights,
        alphas,
        trans,
        acc_opacity: acc,
    }
}

/// Reverse-mode gradient of `composite_ray` with respect to the
/// per-sample densities and colors.
///
/// Uses the suffix-sum identity d w_j / d alpha_i = -w_j / (1 - alpha_i)
/// for j > i, so the whole sweep is O(N).
pub fn composite_backward<S: Scalar>(
    samples: &QuadratureSamples<S>,
    out: &CompositeOut<S>,
    background: [S; 3],
    dl_drgb: [S; 3],
) -> (Vec<S>, Vec<[S; 3]>) {
    let deltas = samples.deltas();
    let n = samples.sigmas.len();
    let mut dsigma = vec![S::zero(); n];
    let mut dcolor = vec![[S::zero(); 3]; n];

    // g_i = dL/dw_i = dl_drgb . (c_i - background)
    let mut g = Vec::with_capacity(n);
    for i in 0..n {
        let mut gi = S::zero();
        for c in 0..3 {
            gi = gi + dl_drgb[c] * (samples.colors[i][c] - background[c]);
        }
        g.push(gi);
        for c in 0..3 {
            dcolor[i][c] = out.weights[i] * dl_drgb[c];
        }
    }
    // suffix[i] = sum_{j>i} g_j w_j
    let mut suffix = S::zero();
    for i in (0..n).rev() {
        let one_minus_alpha = S::one() - out.alphas[i];
        // dL/dsigma_i = delta_i * [(1-alpha_i) g_i T_i - suffix_i]
        dsigma[i] = deltas[i] * (one_minus_alpha * g[i] * out.trans[i] - suffix);
        suffix = suffix + g[i] * out.weights[i];
    }
    (dsigma, dcolor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn test_mode_midpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = stratified_depths(2.0, 6.0, 4, SampleMode::Test, &mut rng);
        assert_eq!(d, vec![2.5, 3.5, 4.5, 5.5]);
    }

    #[test]
    fn train_mode_stays_in_bins_and_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = stratified_depths(0.0, 8.0, 8, SampleMode::Train, &mut rng);
        for (i, t) in d.iter().enumerate() {
            assert!(*t >= i as f64 && *t <= (i + 1) as f64);
        }
        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let d2 = stratified_depths(0.0, 8.0, 8, SampleMode::Train, &mut rng2);
        assert_eq!(d, d2);
    }

    fn uniform_samples(sigmas: Vec<f64>, colors: Vec<[f64; 3]>) -> QuadratureSamples<f64> {
        let n = sigmas.len();
        QuadratureSamples {
            depths: (0..n).map(|i| i as f64).collect(),
            far: n as f64,
            sigmas,
            colors,
        }
    }

    #[test]
    fn empty_space_is_background() {
        let s = uniform_samples(vec![0.0; 5], vec![[0.3, 0.3, 0.3]; 5]);
        let out = composite_ray(&s, [1.0, 1.0, 1.0]);
        assert!(out.weights.iter().all(|&w| w == 0.0));
        assert_eq!(out.rgb, [1.0, 1.0, 1.0]);
    }

    #[test]
    fn opaque_first_sample() {
        let s = uniform_samples(vec![50.0, 1.0], vec![[0.2, 0.4, 0.6], [1.0, 1.0, 1.0]]);
        let out = composite_ray(&s, [0.0, 0.0, 0.0]);
        assert!((out.weights[0] - 1.0).abs() < 1e-9);
        for c in 0..3 {
            assert!((out.rgb[c] - s.colors[0][c]).abs() < 1e-9);
        }
    }

    #[test]
    fn hand_composited_two_samples() {
        // sigma*delta = ln 2 twice: alpha = 1/2, w = (1/2, 1/4)
        let ln2 = std::f64::consts::LN_2;
        let s = uniform_samples(vec![ln2, ln2], vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let out = composite_ray(&s, [0.0, 0.0, 0.0]);
        assert!((out.weights[0] - 0.5).abs() < 1e-12);
        assert!((out.weights[1] - 0.25).abs() < 1e-12);
        assert!((out.rgb[0] - 0.5).abs() < 1e-12);
        assert!((out.rgb[1] - 0.25).abs() < 1e-12);
        assert_eq!(out.rgb[2], 0.0);
    }

    #[test]
    fn constant_sigma_interval_split_invariance() {
        // Splitting an interval with constant sigma and color leaves the
        // composited color exactly unchanged.
        let sigma = 0.7;
        let color = [0.2, 0.9, 0.4];
        let whole: QuadratureSamples<f64> = QuadratureSamples {
            depths: vec![0.0, 2.0],
            far: 4.0,
            sigmas: vec![sigma, sigma],
            colors: vec![color, color],
        };
        let split = QuadratureSamples {
            depths: vec![0.0, 1.0, 2.0, 3.0],
            far: 4.0,
            sigmas: vec![sigma; 4],
            colors: vec![color; 4],
        };
        let a = composite_ray(&whole, [1.0, 1.0, 1.0]);
        let b = composite_ray(&split, [1.0, 1.0, 1.0]);
        for c in 0..3 {
            assert!((a.rgb[c] - b.rgb[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn composite_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 8;
        let depths = stratified_depths(1.0, 5.0, n, SampleMode::Train, &mut rng);
        let sigmas: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        let colors: Vec<[f64; 3]> = (0..n)
            .map(|_| [rng.gen(), rng.gen(), rng.gen()])
            .collect();
        let bg = [1.0, 1.0, 1.0];
        let s = QuadratureSamples {
            depths,
            far: 5.0,
            sigmas,
            colors,
        };
        // L = sum of rgb channels
        let dl = [1.0, 1.0, 1.0];
        let out = composite_ray(&s, bg);
        let (dsigma, dcolor) = composite_backward(&s, &out, bg, dl);
        let h = 1e-6;
        let loss = |s: &QuadratureSamples<f64>| {
            let o = composite_ray(s, bg);
            o.rgb[0] + o.rgb[1] + o.rgb[2]
        };
        for i in 0..n {
            let mut sp = s.clone();
            sp.sigmas[i] += h;
            let mut sm = s.clone();
            sm.sigmas[i] -= h;
            let fd = (loss(&sp) - loss(&sm)) / (2.0 * h);
            assert!(
                (fd - dsigma[i]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "sigma grad {i}: fd {fd} vs {g}",
                g = dsigma[i]
            );
            for c in 0..3 {
                let mut sp = s.clone();
                sp.colors[i][c] += h;
                let mut sm = s.clone();
                sm.colors[i][c] -= h;
                let fd = (loss(&sp) - loss(&sm)) / (2.0 * h);
                assert!((fd - dcolor[i][c]).abs() <= 1e-6 * (1.0 + fd.abs()));
            }
        }
    }
}
