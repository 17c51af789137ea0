//! Analytic per-ray FLOPs accounting for the teacher and student
//! pipelines, with the counting convention echoed in every report.

use crate::student::{RayEncoder, StudentShape};
use crate::teacher::NerfConfig;

pub const CONVENTIONS: &str = "multiply-accumulate = 2 FLOPs; dense layer = 2*in*out + out; \
     activation = 1 FLOP per unit; sin/cos = 2 FLOPs per output; \
     point sampling = 6 FLOPs per point; compositing = 12 FLOPs per \
     quadrature sample + 6 for the background term; PSNR over joint RGB";

#[derive(Clone, Debug)]
pub struct FlopsReport {
    pub name: String,
    pub queries_per_ray: u64,
    pub per_query: u64,
    /// Per-ray totals by layer group; sums to `total`.
    pub breakdown: Vec<(String, u64)>,
    /// Per-ray FLOPs.
    pub total: u64,
    pub conventions: &'static str,
}

impl FlopsReport {
    fn from_breakdown(name: String, queries_per_ray: u64, per_query: u64, breakdown: Vec<(String, u64)>) -> Self {
        let total = breakdown.iter().map(|(_, v)| v).sum();
        FlopsReport {
            name,
            queries_per_ray,
            per_query,
            breakdown,
            total,
            conventions: CONVENTIONS,
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("model: {}\n", self.name));
        out.push_str(&format!("queries_per_ray: {}\n", self.queries_per_ray));
        out.push_str(&format!("flops_per_query: {}\n", self.per_query));
        for (group, v) in &self.breakdown {
            out.push_str(&format!("  {group}: {v}\n"));
        }
        out.push_str(&format!("flops_per_ray: {}\n", self.total));
        out.push_str(&format!("flops_per_ray_m: {:.2}\n", self.total as f64 / 1e6));
        out.push_str(&format!("conventions: {}\n", self.conventions));
        out
    }
}

pub fn dense_flops(in_dim: usize, out_dim: usize) -> u64 {
    (2 * in_dim * out_dim + out_dim) as u64
}

fn encoder_flops(encoder: &RayEncoder) -> u64 {
    match encoder {
        RayEncoder::KPoint { k, enc, .. } => {
            let points = (6 * k) as u64;
            let sincos = (2 * 3 * k * 2 * enc.octaves) as u64;
            points + sincos
        }
        RayEncoder::Plucker { enc } => {
            // cross product: 3 components of 2 mul + 1 sub
            let moment = 15u64;
            let sincos = (2 * 6 * 2 * enc.octaves) as u64;
            moment + sincos
        }
    }
}

/// One query per ray: ray encoding, input layer, residual blocks, head.
pub fn count_student_flops(shape: &StudentShape, encoder: &RayEncoder) -> FlopsReport {
    let w = shape.width;
    let blocks = shape.blocks() as u64;
    let encoding = encoder_flops(encoder);
    let dense = dense_flops(encoder.input_dim(), w)
        + blocks * 2 * dense_flops(w, w)
        + dense_flops(w, 3);
    let activations = (1 + 2 * blocks) * w as u64 + 3;
    let skips = if shape.residual { blocks * w as u64 } else { 0 };
    let breakdown = vec![
        ("ray encoding".to_string(), encoding),
        ("dense layers".to_string(), dense),
        ("activations".to_string(), activations),
        ("skip connections".to_string(), skips),
    ];
    let per_query = encoding + dense + activations + skips;
    FlopsReport::from_breakdown(
        format!("student W{}D{}{}", w, shape.depth, if shape.residual { "" } else { " (no residual)" }),
        1,
        per_query,
        breakdown,
    )
}

/// N queries per ray plus the compositing quadrature.
pub fn count_teacher_flops(cfg: &NerfConfig, queries_per_ray: u64) -> FlopsReport {
    let w = cfg.width;
    let encoding = 6 + (2 * 3 * 2 * cfg.pos_octaves) as u64 + (2 * 3 * 2 * cfg.dir_octaves) as u64;
    let mut trunk = dense_flops(cfg.pos_dim(), w);
    for i in 1..cfg.trunk_depth {
        let in_dim = if i == cfg.skip_layer { w + cfg.pos_dim() } else { w };
        trunk += dense_flops(in_dim, w);
    }
    let heads = dense_flops(w, 1)
        + dense_flops(w, w)
        + dense_flops(w + cfg.dir_dim(), cfg.color_hidden())
        + dense_flops(cfg.color_hidden(), 3);
    let activations = (cfg.trunk_depth * w) as u64 + 1 + cfg.color_hidden() as u64 + 3;
    let per_query = encoding + trunk + heads + activations;
    let compositing = queries_per_ray * 12 + 6;
    let breakdown = vec![
        ("ray encoding".to_string(), queries_per_ray * encoding),
        ("trunk layers".to_string(), queries_per_ray * trunk),
        ("head layers".to_string(), queries_per_ray * heads),
        ("activations".to_string(), queries_per_ray * activations),
        ("compositing".to_string(), compositing),
    ];
    FlopsReport::from_breakdown(
        format!("teacher W{}D{}", w, cfg.trunk_depth),
        queries_per_ray,
        per_query,
        breakdown,
    )
}

/// FLOPs-reduction factor of `fast` relative to `reference`.
pub fn speedup(reference: &FlopsReport, fast: &FlopsReport) -> f64 {
    reference.total as f64 / fast.total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::PositionalEncoding;
    use crate::volume::SampleMode;

    fn default_student_encoder() -> RayEncoder {
        RayEncoder::k_point(16, 10, SampleMode::Test)
    }

    #[test]
    fn w256d88_matches_published_band() {
        let shape = StudentShape::build_config("W256D88").unwrap();
        let report = count_student_flops(&shape, &default_student_encoder());
        let m = report.total as f64 / 1e6;
        assert!((m - 11.79).abs() / 11.79 < 0.10, "got {m}M");
    }

    #[test]
    fn w181d88_matches_published_band() {
        let shape = StudentShape::build_config("W181D88").unwrap();
        let report = count_student_flops(&shape, &default_student_encoder());
        let m = report.total as f64 / 1e6;
        assert!((m - 6.00).abs() / 6.00 < 0.10, "got {m}M");
    }

    #[test]
    fn teacher_matches_published_band() {
        let report = count_teacher_flops(&NerfConfig::default(), 256);
        let m = report.total as f64 / 1e6;
        assert!((m - 303.82).abs() / 303.82 < 0.10, "got {m}M");
    }

    #[test]
    fn speedup_in_published_band() {
        let t = count_teacher_flops(&NerfConfig::default(), 256);
        let s = count_student_flops(
            &StudentShape::build_config("W256D88").unwrap(),
            &default_student_encoder(),
        );
        let ratio = speedup(&t, &s);
        assert!((25.5..35.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn toy_config_exact_hand_count() {
        // W3D4 student, K = 2 points, L = 0 with raw coords: input dim 6.
        let shape = StudentShape {
            width: 3,
            depth: 4,
            residual: true,
        };
        let enc = RayEncoder::KPoint {
            k: 2,
            enc: PositionalEncoding::new(0, true),
            mode: SampleMode::Test,
        };
        let report = count_student_flops(&shape, &enc);
        // points: 2*6 = 12; input: 2*6*3+3 = 39; block: 2*(2*3*3+3) = 42;
        // head: 2*3*3+3 = 21; relu: 3*3 = 9; sigmoid: 3; skip add: 3
        assert_eq!(report.total, 12 + 39 + 42 + 21 + 9 + 3 + 3);
        assert_eq!(report.total, 129);
    }

    #[test]
    fn breakdown_sums_to_total() {
        for report in [
            count_teacher_flops(&NerfConfig::default(), 192),
            count_student_flops(
                &StudentShape::build_config("W64D24").unwrap(),
                &default_student_encoder(),
            ),
        ] {
            let sum: u64 = report.breakdown.iter().map(|(_, v)| v).sum();
            assert_eq!(sum, report.total);
        }
    }

    #[test]
    fn no_residual_drops_skip_cost_only() {
        let shape = StudentShape {
            width: 64,
            depth: 24,
            residual: true,
        };
        let mut plain = shape;
        plain.residual = false;
        let enc = default_student_encoder();
        let a = count_student_flops(&shape, &enc);
        let b = count_student_flops(&plain, &enc);
        assert_eq!(a.total - b.total, (shape.blocks() * shape.width) as u64);
    }
}
