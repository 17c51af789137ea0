use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use raydistill::bench::bench_walltime;
use raydistill::checkpoint;
use raydistill::config::RunConfig;
use raydistill::distill::{
    generate_pseudo_dataset, infer_bbox, train_student, GenOptions, PseudoDataset,
    StudentTrainConfig,
};
use raydistill::flops::{count_student_flops, count_teacher_flops, speedup};
use raydistill::img::Image;
use raydistill::linalg::Matrix;
use raydistill::metrics::{psnr, ssim};
use raydistill::scene::{default_scene, sample_poses, BlobScene, CameraPose, Ray};
use raydistill::student::{RayEncoder, ResidualMlp, StudentShape};
use raydistill::teacher::{train_teacher, NerfMlp, RayDataset, TeacherTrainConfig};
use raydistill::volume::SampleMode;
use raydistill::Error;

#[derive(Parser)]
#[command(name = "raydistill", about = "Distill a ray-marching radiance field into a one-query-per-pixel light-field network", version)]
struct Cli {
    /// Run configuration TOML (for `bench flops`, a model name such as
    /// W256D88 is also accepted).
    #[arg(long, global = true)]
    config: Option<String>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Analytic scene utilities.
    Scene {
        #[command(subcommand)]
        cmd: SceneCmd,
    },
    /// Ray-marching teacher.
    Teacher {
        #[command(subcommand)]
        cmd: TeacherCmd,
    },
    /// Pseudo-ray dataset synthesis.
    Distill {
        #[command(subcommand)]
        cmd: DistillCmd,
    },
    /// Light-field student.
    Student {
        #[command(subcommand)]
        cmd: StudentCmd,
    },
    /// PSNR/SSIM tables against the reference renderer.
    Eval(EvalArgs),
    /// FLOPs and wall-time benchmarks.
    Bench {
        #[command(subcommand)]
        cmd: BenchCmd,
    },
    /// Parameter sweeps: k, r, pseudo, residual.
    Ablate {
        #[arg(long)]
        sweep: String,
    },
}

#[derive(Subcommand)]
enum SceneCmd {
    /// Reference-render the train/test pose sets.
    Render,
}

#[derive(Subcommand)]
enum TeacherCmd {
    Train,
    Render,
}

#[derive(Subcommand)]
enum DistillCmd {
    Gen,
}

#[derive(Subcommand)]
enum StudentCmd {
    Train,
}

#[derive(Args)]
struct EvalArgs {
    /// Compare two stored images directly instead of the checkpoints.
    #[arg(long, requires = "image_b")]
    image_a: Option<PathBuf>,
    #[arg(long, requires = "image_a")]
    image_b: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchCmd {
    Flops {
        /// Student model name; defaults to the run config's model.
        #[arg(long)]
        model: Option<String>,
    },
    Time {
        #[arg(long, default_value_t = 60)]
        frames: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.max(1);
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
    {
        eprintln!("error: thread pool: {e}");
        return ExitCode::FAILURE;
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Usage(msg)) | Err(Error::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

struct Env {
    run: RunConfig,
    scene: BlobScene,
    seed: u64,
    threads: usize,
    out: PathBuf,
}

impl Env {
    fn load(cli: &Cli) -> Result<Env, Error> {
        let run = match &cli.config {
            Some(path) if Path::new(path).exists() => RunConfig::load(Path::new(path))?,
            Some(path) => {
                return Err(Error::Usage(format!("config file {path:?} not found")));
            }
            None => RunConfig::default(),
        };
        let scene = match &run.scene {
            Some(path) => BlobScene::from_toml(&std::fs::read_to_string(path)?)?,
            None => default_scene(),
        };
        std::fs::create_dir_all(&cli.out)?;
        Ok(Env {
            run,
            scene,
            seed: cli.seed,
            threads: cli.threads.max(1),
            out: cli.out.clone(),
        })
    }

    /// Disjoint train/test pose sets from independent orbit seeds.
    fn poses(&self) -> (Vec<CameraPose>, Vec<CameraPose>) {
        let train = sample_poses(&self.scene.orbit, self.run.train_views, self.seed);
        let test = sample_poses(&self.scene.orbit, self.run.test_views, self.seed + 1);
        (train, test)
    }

    fn reference_image(&self, pose: &CameraPose) -> Image {
        let n = self.run.teacher.reference_samples;
        let rays = pose.all_rays();
        let pixels: Vec<[f64; 3]> = rays
            .par_iter()
            .map(|ray| self.scene.reference_render(ray, n))
            .collect();
        let mut img = Image::new(pose.width, pose.height);
        for (px, rgb) in img.data.chunks_mut(3).zip(pixels) {
            for c in 0..3 {
                px[c] = rgb[c] as f32;
            }
        }
        img
    }

    fn reference_images(&self, poses: &[CameraPose]) -> Vec<Image> {
        poses.iter().map(|p| self.reference_image(p)).collect()
    }

    fn teacher_path(&self) -> PathBuf {
        self.out.join("teacher.ckpt")
    }
    fn student_path(&self) -> PathBuf {
        self.out.join("student.ckpt")
    }
    fn dataset_path(&self) -> PathBuf {
        self.out.join("pseudo.rays")
    }

    fn load_teacher(&self) -> Result<NerfMlp<f32>, Error> {
        let path = self.teacher_path();
        if !path.exists() {
            return Err(Error::Usage(format!(
                "no teacher checkpoint at {path:?}; run `teacher train` first"
            )));
        }
        Ok(checkpoint::load_teacher::<f32>(&path)?.0)
    }

    fn write_results(&self, name: &str, body: &str) -> Result<(), Error> {
        let path = self.out.join(name);
        std::fs::write(&path, body)?;
        println!("wrote {}", path.display());
        Ok(())
    }
}

fn dataset_targets(images: &[Image]) -> Matrix<f32> {
    let n: usize = images.iter().map(|i| i.data.len() / 3).sum();
    let mut data = Vec::with_capacity(n * 3);
    for img in images {
        data.extend_from_slice(&img.data);
    }
    Matrix::from_vec(n, 3, data)
}

fn all_rays(poses: &[CameraPose]) -> Vec<Ray> {
    poses.iter().flat_map(|p| p.all_rays()).collect()
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.2}")
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.cmd {
        Cmd::Scene { cmd: SceneCmd::Render } => {
            let env = Env::load(cli)?;
            let (train, test) = env.poses();
            let mut report = String::new();
            for (label, poses) in [("train", &train), ("test", &test)] {
                for (i, pose) in poses.iter().enumerate() {
                    let img = env.reference_image(pose);
                    let path = env.out.join(format!("scene_{label}_{i:03}.ppm"));
                    img.write_ppm(&path)?;
                }
                report.push_str(&format!(
                    "{label}_views: {} at {}x{}\n",
                    poses.len(),
                    env.scene.orbit.width,
                    env.scene.orbit.height
                ));
            }
            report.push_str(&format!(
                "reference_samples: {}\nseed: {}\n",
                env.run.teacher.reference_samples, env.seed
            ));
            env.write_results("scene_render.txt", &report)
        }
        Cmd::Teacher { cmd: TeacherCmd::Train } => {
            let env = Env::load(cli)?;
            let (train_poses, test_poses) = env.poses();
            println!("rendering {} reference views...", train_poses.len() + test_poses.len());
            let train_images = env.reference_images(&train_poses);
            let test_images = env.reference_images(&test_poses);
            let data = RayDataset::<f32>::from_images(&train_images, &train_poses);
            let eval = RayDataset::<f32>::from_images(&test_images, &test_poses);
            let nerf_cfg = env.run.teacher.nerf_config(env.scene.background);
            let mut rng = ChaCha8Rng::seed_from_u64(env.seed);
            let mut model = NerfMlp::<f32>::new(nerf_cfg, &mut rng);
            let cfg = TeacherTrainConfig {
                iters: env.run.teacher.iters,
                batch_rays: env.run.teacher.batch_rays,
                lr0: env.run.teacher.lr0,
                seed: env.seed,
                eval_every: env.run.teacher.eval_every,
                threads: env.threads,
            };
            println!("training teacher for {} iterations...", cfg.iters);
            let log = train_teacher(&mut model, &data, Some(&eval), &cfg, 100)?;
            let digest = checkpoint::save_teacher(&model, &env.teacher_path())?;
            let mut body = String::new();
            for e in &log {
                body.push_str(&format!(
                    "iter {} loss {:.6e} lr {:.3e}{}\n",
                    e.iter,
                    e.loss,
                    e.lr,
                    e.eval_psnr
                        .map(|p| format!(" eval_psnr {}", fmt_db(p)))
                        .unwrap_or_default()
                ));
            }
            body.push_str(&format!("checkpoint_digest: {}\n", hex(&digest)));
            env.write_results("teacher_train.txt", &body)
        }
        Cmd::Teacher { cmd: TeacherCmd::Render } => {
            let env = Env::load(cli)?;
            let model = env.load_teacher()?;
            let (_, test_poses) = env.poses();
            for (i, pose) in test_poses.iter().enumerate() {
                let (img, _) = model.render_image(pose)?;
                img.write_ppm(&env.out.join(format!("teacher_test_{i:03}.ppm")))?;
            }
            println!("rendered {} teacher views", test_poses.len());
            Ok(())
        }
        Cmd::Distill { cmd: DistillCmd::Gen } => {
            let env = Env::load(cli)?;
            let model = env.load_teacher()?;
            let (train_poses, _) = env.poses();
            let train_rays = all_rays(&train_poses);
            let bbox = infer_bbox(&train_rays)?;
            let per_image = env.scene.orbit.width * env.scene.orbit.height;
            let n_rays = env.run.distill.pseudo_images * per_image;
            let opts = GenOptions {
                n_rays,
                near: env.scene.orbit.near,
                far: env.scene.orbit.far,
                seed: env.seed,
            };
            println!("labeling {n_rays} pseudo rays with the teacher...");
            let real_targets;
            let real = if env.run.distill.include_real {
                let train_images = env.reference_images(&train_poses);
                real_targets = dataset_targets(&train_images);
                Some((train_rays.as_slice(), &real_targets))
            } else {
                None
            };
            let ds = generate_pseudo_dataset(&model, &bbox, &opts, real)?;
            ds.write(&env.dataset_path())?;
            println!(
                "wrote {} ({} records)",
                env.dataset_path().display(),
                ds.records.len()
            );
            Ok(())
        }
        Cmd::Student { cmd: StudentCmd::Train } => {
            let env = Env::load(cli)?;
            let ds = PseudoDataset::read(&env.dataset_path())?;
            if env.teacher_path().exists() {
                ds.verify_teacher(&checkpoint::load_teacher::<f32>(&env.teacher_path())?.0)?;
            }
            let shape = env.run.student.shape()?;
            let encoder = env.run.student.ray_encoder()?;
            let mut rng = ChaCha8Rng::seed_from_u64(env.seed);
            let mut model = ResidualMlp::<f32>::new(shape, encoder.input_dim(), &mut rng);
            let (_, test_poses) = env.poses();
            let test_images = env.reference_images(&test_poses);
            let test_rays = all_rays(&test_poses);
            let test_targets = dataset_targets(&test_images);
            let cfg = StudentTrainConfig {
                iters: env.run.student.iters,
                batch: env.run.student.batch,
                r: env.run.student.r,
                lr0: env.run.student.lr0,
                seed: env.seed,
                eval_every: env.run.student.eval_every,
                snapshot_every: 1000,
            };
            println!("training student {shape:?} for {} iterations...", cfg.iters);
            let log = train_student(
                &ds,
                &mut model,
                &encoder,
                Some((&test_rays, &test_targets)),
                &cfg,
                100,
            )?;
            checkpoint::save_student(&model, &encoder, &env.student_path())?;
            let mut body = String::new();
            for e in &log {
                body.push_str(&format!(
                    "iter {} loss {:.6e} lr {:.3e}{}\n",
                    e.iter,
                    e.loss,
                    e.lr,
                    e.eval_psnr
                        .map(|p| format!(" eval_psnr {}", fmt_db(p)))
                        .unwrap_or_default()
                ));
            }
            env.write_results("student_train.txt", &body)
        }
        Cmd::Eval(args) => {
            if let (Some(a), Some(b)) = (&args.image_a, &args.image_b) {
                let ia = Image::read_ppm(a)?;
                let ib = Image::read_ppm(b)?;
                println!("psnr_db: {}", fmt_db(psnr(&ia, &ib)?));
                println!("ssim: {:.4}", ssim(&ia, &ib)?);
                return Ok(());
            }
            let env = Env::load(cli)?;
            let (_, test_poses) = env.poses();
            let references = env.reference_images(&test_poses);
            let teacher = env.teacher_path().exists().then(|| env.load_teacher()).transpose()?;
            let student = env
                .student_path()
                .exists()
                .then(|| checkpoint::load_student::<f32>(&env.student_path()))
                .transpose()?;
            let mut body = String::from("view  teacher_psnr  teacher_ssim  student_psnr  student_ssim\n");
            let mut sums = [0.0f64; 4];
            for (i, (pose, reference)) in test_poses.iter().zip(&references).enumerate() {
                let mut row = format!("{i:4}");
                if let Some(t) = &teacher {
                    let (img, _) = t.render_image(pose)?;
                    let p = psnr(reference, &img)?;
                    let s = ssim(reference, &img)?;
                    sums[0] += p;
                    sums[1] += s;
                    row.push_str(&format!("  {:>12}  {:>12.4}", fmt_db(p), s));
                } else {
                    row.push_str("             -             -");
                }
                if let Some((m, enc)) = &student {
                    let (img, _) = m.render_image(enc, pose)?;
                    let p = psnr(reference, &img)?;
                    let s = ssim(reference, &img)?;
                    sums[2] += p;
                    sums[3] += s;
                    row.push_str(&format!("  {:>12}  {:>12.4}", fmt_db(p), s));
                } else {
                    row.push_str("             -             -");
                }
                body.push_str(&row);
                body.push('\n');
            }
            let n = test_poses.len() as f64;
            if teacher.is_some() {
                body.push_str(&format!(
                    "mean teacher: psnr {} ssim {:.4}\n",
                    fmt_db(sums[0] / n),
                    sums[1] / n
                ));
            }
            if student.is_some() {
                body.push_str(&format!(
                    "mean student: psnr {} ssim {:.4}\n",
                    fmt_db(sums[2] / n),
                    sums[3] / n
                ));
            }
            print!("{body}");
            env.write_results("eval.txt", &body)
        }
        Cmd::Bench { cmd: BenchCmd::Flops { model } } => {
            // accept a model name passed through --config as well
            let named = model.clone().or_else(|| {
                cli.config
                    .as_ref()
                    .filter(|c| !Path::new(c).exists())
                    .cloned()
            });
            let named_model = named.is_some();
            let (shape, encoder, teacher_cfg) = match named {
                Some(name) => {
                    let run = RunConfig::default();
                    (
                        StudentShape::build_config(&name)?,
                        RayEncoder::k_point(run.student.k, run.student.octaves, SampleMode::Test),
                        run.teacher.nerf_config([1.0; 3]),
                    )
                }
                None => {
                    let env = Env::load(cli)?;
                    (
                        env.run.student.shape()?,
                        env.run.student.ray_encoder()?,
                        env.run.teacher.nerf_config(env.scene.background),
                    )
                }
            };
            // published comparisons quote the teacher at 256 queries/ray
            let teacher_queries = if named_model { 256 } else { teacher_cfg.n_samples as u64 };
            let t = count_teacher_flops(&teacher_cfg, teacher_queries);
            let s = count_student_flops(&shape, &encoder);
            print!("{}", s.render());
            println!();
            print!("{}", t.render());
            println!("\nflops_reduction: {:.2}x", speedup(&t, &s));
            Ok(())
        }
        Cmd::Bench { cmd: BenchCmd::Time { frames } } => {
            let env = Env::load(cli)?;
            let poses: Vec<CameraPose> = {
                let base = sample_poses(&env.scene.orbit, (*frames).max(1), env.seed + 2);
                base
            };
            let teacher = if env.teacher_path().exists() {
                env.load_teacher()?
            } else {
                // untrained weights time identically
                let mut rng = ChaCha8Rng::seed_from_u64(env.seed);
                NerfMlp::new(env.run.teacher.nerf_config(env.scene.background), &mut rng)
            };
            let (student, encoder) = if env.student_path().exists() {
                checkpoint::load_student::<f32>(&env.student_path())?
            } else {
                let shape = env.run.student.shape()?;
                let encoder = env.run.student.ray_encoder()?;
                let mut rng = ChaCha8Rng::seed_from_u64(env.seed);
                (ResidualMlp::<f32>::new(shape, encoder.input_dim(), &mut rng), encoder)
            };
            let tb = bench_walltime("teacher", &poses, env.threads, |pose| {
                teacher.render_image(pose).map(|_| ())
            })?;
            let sb = bench_walltime("student", &poses, env.threads, |pose| {
                student.render_image(&encoder, pose).map(|_| ())
            })?;
            let mut body = String::new();
            body.push_str(&tb.render());
            body.push('\n');
            body.push_str(&sb.render());
            body.push_str(&format!(
                "\nwalltime_speedup: {:.2}x\n",
                tb.per_ray_micros / sb.per_ray_micros
            ));
            print!("{body}");
            env.write_results("bench_time.txt", &body)
        }
        Cmd::Ablate { sweep } => {
            let env = Env::load(cli)?;
            run_ablation(&env, sweep)
        }
    }
}

/// Train one student variant and report (final loss, test PSNR, log).
fn ablation_run(
    env: &Env,
    ds: &PseudoDataset,
    shape: StudentShape,
    encoder: &RayEncoder,
    r: f64,
    test: (&[Ray], &Matrix<f32>),
) -> Result<(f64, f64, Vec<raydistill::teacher::TrainLogEntry>), Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(env.seed);
    let mut model = ResidualMlp::<f32>::new(shape, encoder.input_dim(), &mut rng);
    let cfg = StudentTrainConfig {
        iters: env.run.student.iters,
        batch: env.run.student.batch,
        r,
        lr0: env.run.student.lr0,
        seed: env.seed,
        eval_every: 0,
        snapshot_every: 0,
    };
    let log = train_student(ds, &mut model, encoder, None, &cfg, 100)?;
    let final_loss = log.last().map(|e| e.loss).unwrap_or(f64::NAN);
    let test_psnr = raydistill::distill::student_psnr(&model, encoder, test.0, test.1)?;
    Ok((final_loss, test_psnr, log))
}

fn run_ablation(env: &Env, sweep: &str) -> Result<(), Error> {
    let ds = PseudoDataset::read(&env.dataset_path())?;
    let (_, test_poses) = env.poses();
    let test_images = env.reference_images(&test_poses);
    let test_rays = all_rays(&test_poses);
    let test_targets = dataset_targets(&test_images);
    let test = (test_rays.as_slice(), &test_targets);
    let base_shape = env.run.student.shape()?;
    let mut body = String::new();
    match sweep {
        "k" => {
            body.push_str("k  final_loss  test_psnr\n");
            for k in [2usize, 4, 8, 16, 32] {
                let enc = RayEncoder::k_point(k, env.run.student.octaves, SampleMode::Train);
                let (loss, p, _) = ablation_run(env, &ds, base_shape, &enc, env.run.student.r, test)?;
                body.push_str(&format!("{k}  {loss:.6e}  {}\n", fmt_db(p)));
                println!("k={k}: loss {loss:.4e} psnr {}", fmt_db(p));
            }
        }
        "r" => {
            let enc = env.run.student.ray_encoder()?;
            body.push_str("r  final_loss  test_psnr\n");
            for r in [0.0, 0.1, 0.2, 0.3] {
                let (loss, p, _) = ablation_run(env, &ds, base_shape, &enc, r, test)?;
                body.push_str(&format!("{r}  {loss:.6e}  {}\n", fmt_db(p)));
                println!("r={r}: loss {loss:.4e} psnr {}", fmt_db(p));
            }
        }
        "pseudo" => {
            let enc = env.run.student.ray_encoder()?;
            let teacher = env.load_teacher()?;
            let (train_poses, _) = env.poses();
            let bbox = infer_bbox(&all_rays(&train_poses))?;
            let per_image = env.scene.orbit.width * env.scene.orbit.height;
            body.push_str("pseudo_images  final_loss  test_psnr\n");
            for frac in [4usize, 2, 1] {
                let n_images = env.run.distill.pseudo_images / frac;
                let opts = GenOptions {
                    n_rays: n_images * per_image,
                    near: env.scene.orbit.near,
                    far: env.scene.orbit.far,
                    seed: env.seed,
                };
                let ds = generate_pseudo_dataset(&teacher, &bbox, &opts, None)?;
                let (loss, p, _) = ablation_run(env, &ds, base_shape, &enc, env.run.student.r, test)?;
                body.push_str(&format!("{n_images}  {loss:.6e}  {}\n", fmt_db(p)));
                println!("pseudo={n_images}: loss {loss:.4e} psnr {}", fmt_db(p));
            }
        }
        "residual" => {
            let enc = env.run.student.ray_encoder()?;
            for residual in [true, false] {
                let mut shape = base_shape;
                shape.residual = residual;
                let (_, _, log) = ablation_run(env, &ds, shape, &enc, env.run.student.r, test)?;
                body.push_str(&format!("curve residual={residual}\n"));
                for e in &log {
                    body.push_str(&format!("iter {} loss {:.6e}\n", e.iter, e.loss));
                }
                println!(
                    "residual={residual}: final loss {:.4e}",
                    log.last().map(|e| e.loss).unwrap_or(f64::NAN)
                );
            }
        }
        other => {
            return Err(Error::Usage(format!(
                "unknown sweep {other:?}; expected k, r, pseudo or residual"
            )));
        }
    }
    env.write_results(&format!("ablate_{sweep}.txt"), &body)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
