//! Analytic volumetric scenes: Gaussian density blobs with a closed-form
//! view-dependent radiance, a pinhole camera model, orbit pose sampling
//! and a fine-quadrature reference renderer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{composite_ray, QuadratureSamples};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }
    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }
    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        Vec3::new(self.x / n, self.y / n, self.z / n)
    }
    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
    pub fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
    pub fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// One Gaussian density blob with a squared clamped-cosine radiance lobe.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Blob {
    pub center: Vec3,
    pub scale: f64,
    pub sigma_max: f64,
    pub albedo: [f64; 3],
    /// View-dependence strength in [0, 1]; 0 is Lambertian.
    #[serde(default)]
    pub kappa: f64,
    /// Preferred view direction of the lobe (unit).
    #[serde(default = "default_lobe")]
    pub lobe: Vec3,
}

fn default_lobe() -> Vec3 {
    Vec3::new(0.0, 0.0, 1.0)
}

/// Orbit band from which train/test camera poses are drawn.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrbitSpec {
    pub radius: f64,
    pub elev_min_deg: f64,
    pub elev_max_deg: f64,
    #[serde(default)]
    pub azimuth_start_deg: f64,
    /// Per-pose jitter as a fraction of the azimuth spacing; 0 gives a
    /// deterministic lattice independent of the seed.
    #[serde(default)]
    pub jitter: f64,
    pub focal_px: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlobScene {
    #[serde(rename = "blob")]
    pub blobs: Vec<Blob>,
    pub background: [f64; 3],
    pub orbit: OrbitSpec,
}

impl BlobScene {
    pub fn validate(&self) -> Result<()> {
        if self.blobs.is_empty() {
            return Err(Error::Config("scene needs at least one blob".into()));
        }
        for b in &self.blobs {
            if b.scale <= 0.0 || b.sigma_max < 0.0 {
                return Err(Error::Config("blob scale/sigma_max out of range".into()));
            }
            if !(0.0..=1.0).contains(&b.kappa) {
                return Err(Error::Config("blob kappa must be in [0,1]".into()));
            }
            if (b.lobe.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::Config("blob lobe direction must be unit".into()));
            }
            for c in b.albedo.iter().chain(self.background.iter()) {
                if !(0.0..=1.0).contains(c) {
                    return Err(Error::Config("colors must be in [0,1]".into()));
                }
            }
        }
        if !(self.orbit.near > 0.0 && self.orbit.near < self.orbit.far) {
            return Err(Error::Config("orbit requires 0 < near < far".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<BlobScene> {
        let scene: BlobScene =
            toml::from_str(text).map_err(|e| Error::Parse(format!("scene file: {e}")))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scene serializes")
    }

    /// Density and emitted radiance at a point for a view direction.
    ///
    /// sigma is the sum of Gaussian blob densities; color is the
    /// density-weighted mix of per-blob lobe colors, falling back to the
    /// background where sigma vanishes.
    pub fn query_field(&self, point: Vec3, view_dir: Vec3) -> (f64, [f64; 3]) {
        let mut sigma = 0.0;
        let mut color = [0.0; 3];
        for b in &self.blobs {
            let d = point.sub(b.center);
            let r2 = d.dot(d);
            let s = b.sigma_max * (-r2 / (2.0 * b.scale * b.scale)).exp();
            let lobe = 1.0 - b.kappa + b.kappa * view_dir.dot(b.lobe).max(0.0);
            let lobe2 = lobe * lobe;
            for c in 0..3 {
                color[c] += s * b.albedo[c] * lobe2;
            }
            sigma += s;
        }
        if sigma < 1e-12 {
            (sigma, self.background)
        } else {
            for c in color.iter_mut() {
                *c /= sigma;
            }
            (sigma, color)
        }
    }

    /// Dense midpoint quadrature of the analytic field; the ground-truth
    /// renderer everything else is compared against.
    pub fn reference_render(&self, ray: &Ray, n_quad: usize) -> [f64; 3] {
        assert!(n_quad >= 2);
        let bin = (ray.far - ray.near) / n_quad as f64;
        let mut depths = Vec::with_capacity(n_quad);
        let mut sigmas = Vec::with_capacity(n_quad);
        let mut colors = Vec::with_capacity(n_quad);
        for i in 0..n_quad {
            let t = ray.near + (i as f64 + 0.5) * bin;
            let p = ray.origin.add(ray.dir.scale(t));
            let (s, c) = self.query_field(p, ray.dir);
            depths.push(t);
            sigmas.push(s);
            colors.push(c);
        }
        let samples = QuadratureSamples {
            depths,
            far: ray.far,
            sigmas,
            colors,
        };
        composite_ray(&samples, self.background).rgb
    }
}

/// Oriented ray with its integration interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction.
    pub dir: Vec3,
    pub near: f64,
    pub far: f64,
}

/// Pinhole camera: position, orthonormal rotation (columns are the
/// camera axes in world space, looking down -z), pixel intrinsics.
#[derive(Clone, Debug)]
pub struct CameraPose {
    pub position: Vec3,
    /// Column-major camera axes: [right, up, backward].
    pub axes: [Vec3; 3],
    pub focal_px: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl CameraPose {
    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            for j in 0..3 {
                let d = self.axes[i].dot(self.axes[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-6 {
                    return Err(Error::Config("camera rotation not orthonormal".into()));
                }
            }
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::Config("camera requires 0 < near < far".into()));
        }
        Ok(())
    }

    /// Ray through the center of pixel (i, j) = (column, row).
    pub fn generate_ray(&self, pixel: (usize, usize)) -> Result<Ray> {
        let (i, j) = pixel;
        if i >= self.width || j >= self.height {
            return Err(Error::Usage(format!(
                "pixel ({i}, {j}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let x = (i as f64 + 0.5 - self.width as f64 / 2.0) / self.focal_px;
        let y = -(j as f64 + 0.5 - self.height as f64 / 2.0) / self.focal_px;
        let cam = Vec3::new(x, y, -1.0).normalized();
        let dir = self.axes[0]
            .scale(cam.x)
            .add(self.axes[1].scale(cam.y))
            .add(self.axes[2].scale(cam.z))
            .normalized();
        Ok(Ray {
            origin: self.position,
            dir,
            near: self.near,
            far: self.far,
        })
    }

    /// Rays for every pixel in row-major order.
    pub fn all_rays(&self) -> Vec<Ray> {
        let mut rays = Vec::with_capacity(self.width * self.height);
        for j in 0..self.height {
            for i in 0..self.width {
                rays.push(self.generate_ray((i, j)).expect("pixel in bounds"));
            }
        }
        rays
    }
}

/// Poses on the orbit band, looking at the origin. Deterministic per
/// seed; with jitter > 0 distinct seeds give disjoint pose sets.
pub fn sample_poses(orbit: &OrbitSpec, n: usize, seed: u64) -> Vec<CameraPose> {
    assert!(n >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let az_step = 360.0 / n as f64;
    let elev_span = orbit.elev_max_deg - orbit.elev_min_deg;
    (0..n)
        .map(|i| {
            let (ua, ue): (f64, f64) = (rng.gen(), rng.gen());
            let az = (orbit.azimuth_start_deg + (i as f64 + orbit.jitter * ua) * az_step)
                .to_radians();
            let frac = if n == 1 {
                0.0
            } else {
                i as f64 / (n - 1) as f64
            };
            let elev = (orbit.elev_min_deg
                + (frac * (1.0 - orbit.jitter) + orbit.jitter * ue) * elev_span)
                .to_radians();
            let position = Vec3::new(
                orbit.radius * elev.cos() * az.cos(),
                orbit.radius * elev.cos() * az.sin(),
                orbit.radius * elev.sin(),
            );
            look_at_origin(position, orbit)
        })
        .collect()
}

fn look_at_origin(position: Vec3, orbit: &OrbitSpec) -> CameraPose {
    // Camera backward axis points away from the target.
    let backward = position.normalized();
    let up = Vec3::new(0.0, 0.0, 1.0);
    let right = up.cross(backward).normalized();
    let cam_up = backward.cross(right);
    CameraPose {
        position,
        axes: [right, cam_up, backward],
        focal_px: orbit.focal_px,
        width: orbit.width,
        height: orbit.height,
        near: orbit.near,
        far: orbit.far,
    }
}

/// Three-blob scene used as the default desk-scale benchmark subject.
pub fn default_scene() -> BlobScene {
    BlobScene {
        blobs: vec![
            Blob {
                center: Vec3::new(0.0, 0.0, 0.0),
                scale: 0.45,
                sigma_max: 14.0,
                albedo: [0.85, 0.25, 0.2],
                kappa: 0.0,
                lobe: default_lobe(),
            },
            Blob {
                center: Vec3::new(0.7, 0.3, 0.25),
                scale: 0.3,
                sigma_max: 10.0,
                albedo: [0.2, 0.6, 0.9],
                kappa: 0.6,
                lobe: Vec3::new(0.0, 0.0, -1.0),
            },
            Blob {
                center: Vec3::new(-0.55, -0.4, -0.2),
                scale: 0.35,
                sigma_max: 8.0,
                albedo: [0.3, 0.8, 0.3],
                kappa: 0.3,
                lobe: Vec3::new(1.0, 0.0, 0.0),
            },
        ],
        background: [1.0, 1.0, 1.0],
        orbit: OrbitSpec {
            radius: 3.5,
            elev_min_deg: 15.0,
            elev_max_deg: 55.0,
            azimuth_start_deg: 0.0,
            jitter: 0.8,
            focal_px: 70.0,
            width: 64,
            height: 64,
            near: 2.0,
            far: 5.5,
        },
    }
}
