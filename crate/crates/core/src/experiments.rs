//! Experiment driver: TOML configuration, orchestration and artifact output.
//!
//! Configuration grammar (all paths relative to the config file):
//!
//! ```toml
//! kind = "toy2d"            # toy2d | toy3d | adsn-deblur | adsn-generate
//! seed = 7
//! output_dir = "out/toy2d"  # optional, overridden by GAUSSDIFF_OUTPUT_DIR
//! samples = 2               # image experiments only
//!
//! [schedule]                # optional, defaults to 1000 steps from 1e-4 to 0.02
//! steps = 1000
//! beta_start = 1e-4
//! beta_end = 0.02
//!
//! [prior]                   # toys: mean + cov, images: image = "texture.png"
//! mean = [0.3, -0.2]
//! cov = [[1.0, 0.8], [0.8, 1.0]]
//!
//! [problem]
//! observed = [0]            # toys: observed coordinates
//! v = [0.6]                 # toys, optional: drawn from the model when absent
//! sigma = 0.0392156862745098
//! kernel = { kind = "file", path = "motion1.txt" }  # adsn-deblur: file | bicubic (factor) | identity
//!
//! [[models]]
//! kind = "dps"
//! alpha_dps = 1.0
//! [[models]]
//! kind = "cgdm"
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adsn::{self, SpectralAdsn};
use crate::analysis::{self, CurvePoint, WassersteinCurve};
use crate::deblur::{self, BlurKernel, SpectralProblem};
use crate::error::{Error, Result};
use crate::fft::RgbImage;
use crate::gaussian::{self, GaussianLaw, GaussianSampler, LinearInverseProblem};
use crate::samplers::GuidanceModel;
use crate::schedule::{Schedule, ScheduleParams};

/// Environment variable overriding `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "GAUSSDIFF_OUTPUT_DIR";
const DEFAULT_OUTPUT_DIR: &str = "gaussdiff-out";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub kind: Option<String>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub samples: Option<usize>,
    pub schedule: Option<RawSchedule>,
    pub prior: Option<RawPrior>,
    pub problem: Option<RawProblem>,
    pub models: Option<Vec<RawModel>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSchedule {
    pub steps: Option<usize>,
    pub beta_start: Option<f64>,
    pub beta_end: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPrior {
    pub mean: Option<Vec<f64>>,
    pub cov: Option<Vec<Vec<f64>>>,
    pub image: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawProblem {
    pub observed: Option<Vec<usize>>,
    pub v: Option<Vec<f64>>,
    pub sigma: Option<f64>,
    pub kernel: Option<RawKernel>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawKernel {
    pub kind: Option<String>,
    pub path: Option<PathBuf>,
    pub factor: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawModel {
    pub kind: Option<String>,
    pub alpha_dps: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Toy2d,
    Toy3d,
    AdsnDeblur,
    AdsnGenerate,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Toy2d => "toy2d",
            ExperimentKind::Toy3d => "toy3d",
            ExperimentKind::AdsnDeblur => "adsn-deblur",
            ExperimentKind::AdsnGenerate => "adsn-generate",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Self::Toy2d, Self::Toy3d, Self::AdsnDeblur, Self::AdsnGenerate]
            .into_iter()
            .find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone)]
pub enum KernelSpec {
    File(PathBuf),
    Bicubic(usize),
    Identity,
}

impl KernelSpec {
    pub fn load(&self) -> Result<BlurKernel> {
        match self {
            KernelSpec::File(p) => deblur::load_kernel(p),
            KernelSpec::Bicubic(f) => deblur::bicubic_zoom_kernel(*f),
            KernelSpec::Identity => Ok(BlurKernel::identity()),
        }
    }
}

#[derive(Debug, Clone)]
pub enum ProblemSpec {
    Toy {
        prior: GaussianLaw,
        observed: Vec<usize>,
        sigma: f64,
        v: Option<Vec<f64>>,
    },
    Deblur {
        image: PathBuf,
        kernel: KernelSpec,
        sigma: f64,
    },
    Generate {
        image: PathBuf,
    },
}

/// A configuration that passed every check.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub schedule: ScheduleParams,
    pub output_dir: PathBuf,
    pub samples: usize,
    pub models: Vec<GuidanceModel>,
    pub problem: ProblemSpec,
    pub raw: RawConfig,
}

impl ExperimentConfig {
    /// Output directory after applying the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }
}

/// Parses and checks a config file, reporting every violation at once.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base)
}

/// As [`validate_config`] on in-memory text; relative paths are taken from `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
    check(raw, base)
}

fn finite_positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

fn check(raw: RawConfig, base: &Path) -> Result<ExperimentConfig> {
    let mut errs: Vec<String> = Vec::new();
    let kind = match raw.kind.as_deref() {
        None => {
            errs.push("kind: missing (toy2d | toy3d | adsn-deblur | adsn-generate)".into());
            None
        }
        Some(k) => {
            let parsed = ExperimentKind::parse(k);
            if parsed.is_none() {
                errs.push(format!("kind: unknown experiment `{k}`"));
            }
            parsed
        }
    };
    if raw.seed.is_none() {
        errs.push("seed: missing (a seed is mandatory)".into());
    }

    let rs = raw.schedule.clone().unwrap_or_default();
    let def = ScheduleParams::default();
    let schedule = ScheduleParams {
        steps: rs.steps.unwrap_or(def.steps),
        beta_start: rs.beta_start.unwrap_or(def.beta_start),
        beta_end: rs.beta_end.unwrap_or(def.beta_end),
    };
    if let Err(e) = Schedule::from_params(&schedule) {
        errs.push(format!("schedule: {e}"));
    }

    let samples = raw.samples.unwrap_or(match kind {
        Some(ExperimentKind::AdsnGenerate) => 4,
        _ => 1,
    });

    let mut models = Vec::new();
    let raw_models = raw.models.clone().unwrap_or_default();
    for (i, m) in raw_models.iter().enumerate() {
        let model = match m.kind.as_deref() {
            Some("dps") => match m.alpha_dps {
                None => {
                    errs.push(format!("models[{i}]: dps requires alpha_dps"));
                    continue;
                }
                Some(a) if !finite_positive(a) => {
                    errs.push(format!("models[{i}].alpha_dps: must be > 0, got {a}"));
                    continue;
                }
                Some(a) => GuidanceModel::Dps { alpha_dps: a },
            },
            Some(k @ ("pigdm" | "cgdm")) => {
                if m.alpha_dps.is_some() {
                    errs.push(format!("models[{i}].alpha_dps: only meaningful for dps"));
                }
                if k == "pigdm" {
                    GuidanceModel::PiGdm
                } else {
                    GuidanceModel::Cgdm
                }
            }
            Some(k) => {
                errs.push(format!("models[{i}].kind: unknown model `{k}` (dps | pigdm | cgdm)"));
                continue;
            }
            None => {
                errs.push(format!("models[{i}].kind: missing"));
                continue;
            }
        };
        if models.iter().any(|o| model_label(o) == model_label(&model)) {
            errs.push(format!("models[{i}]: duplicate model {}", model_label(&model)));
        }
        models.push(model);
    }
    match kind {
        Some(ExperimentKind::AdsnGenerate) => {
            if !raw_models.is_empty() {
                errs.push("models: adsn-generate runs the unconditional sampler and takes no models".into());
            }
        }
        Some(_) if raw_models.is_empty() => errs.push("models: at least one model is required".into()),
        _ => {}
    }

    let prior = raw.prior.clone().unwrap_or_default();
    let problem = raw.problem.clone().unwrap_or_default();
    let sigma = |errs: &mut Vec<String>| match problem.sigma {
        None => {
            errs.push("problem.sigma: missing".into());
            1.0
        }
        Some(s) if !finite_positive(s) => {
            errs.push(format!("problem.sigma: must be > 0, got {s}"));
            1.0
        }
        Some(s) => s,
    };
    let image_path = |errs: &mut Vec<String>| -> PathBuf {
        let Some(p) = &prior.image else {
            errs.push("prior.image: missing".into());
            return PathBuf::new();
        };
        let full = base.join(p);
        match image::image_dimensions(&full) {
            Err(e) => errs.push(format!("prior.image: cannot read {}: {e}", full.display())),
            Ok((w, h)) if w as usize > deblur::MAX_CURVE_SIDE || h as usize > deblur::MAX_CURVE_SIDE => errs.push(format!(
                "prior.image: {w}x{h} exceeds the {0}x{0} limit",
                deblur::MAX_CURVE_SIDE
            )),
            Ok(_) => {}
        }
        full
    };

    let spec = match kind {
        Some(k @ (ExperimentKind::Toy2d | ExperimentKind::Toy3d)) => {
            let d = if k == ExperimentKind::Toy2d { 2 } else { 3 };
            if prior.image.is_some() {
                errs.push("prior.image: not used by toy experiments".into());
            }
            if problem.kernel.is_some() {
                errs.push("problem.kernel: not used by toy experiments".into());
            }
            let mean = match &prior.mean {
                None => {
                    errs.push("prior.mean: missing".into());
                    None
                }
                Some(m) if m.len() != d => {
                    errs.push(format!("prior.mean: {k:?} needs {d} entries, got {}", m.len()));
                    None
                }
                Some(m) => Some(DVector::from_column_slice(m)),
            };
            let cov = match &prior.cov {
                None => {
                    errs.push("prior.cov: missing".into());
                    None
                }
                Some(rows) if rows.len() != d || rows.iter().any(|r| r.len() != d) => {
                    let got = format!("{}x{}", rows.len(), rows.first().map_or(0, Vec::len));
                    errs.push(format!("prior.cov: dimension mismatch, {} needs {d}x{d}, got {got}", k.as_str()));
                    None
                }
                Some(rows) => Some(DMatrix::from_fn(d, d, |i, j| rows[i][j])),
            };
            let law = match (mean, cov) {
                (Some(m), Some(c)) => match GaussianLaw::new(m, c) {
                    Ok(l) => Some(l),
                    Err(e) => {
                        errs.push(format!("prior.cov: {e}"));
                        None
                    }
                },
                _ => None,
            };
            let observed = problem.observed.clone().unwrap_or_default();
            if problem.observed.is_none() {
                errs.push("problem.observed: missing".into());
            } else if observed.is_empty() {
                errs.push("problem.observed: at least one coordinate must be observed".into());
            }
            for &i in &observed {
                if i >= d {
                    errs.push(format!("problem.observed: coordinate {i} out of range 0..{d}"));
                }
            }
            let mut sorted = observed.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != observed.len() {
                errs.push("problem.observed: duplicate coordinates".into());
            }
            if let Some(v) = &problem.v {
                if v.len() != observed.len() {
                    errs.push(format!("problem.v: needs {} entries (one per observed coordinate), got {}", observed.len(), v.len()));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    errs.push("problem.v: non-finite entry".into());
                }
            }
            let s = sigma(&mut errs);
            law.map(|prior| ProblemSpec::Toy {
                prior,
                observed,
                sigma: s,
                v: problem.v.clone(),
            })
        }
        Some(ExperimentKind::AdsnDeblur) => {
            if prior.mean.is_some() || prior.cov.is_some() {
                errs.push("prior: adsn experiments take `image`, not mean/cov".into());
            }
            if problem.observed.is_some() || problem.v.is_some() {
                errs.push("problem: observed/v are toy-only; the observation is synthesised".into());
            }
            let image = image_path(&mut errs);
            let s = sigma(&mut errs);
            let kernel = match &problem.kernel {
                None => {
                    errs.push("problem.kernel: missing".into());
                    None
                }
                Some(k) => parse_kernel(k, base, &mut errs),
            };
            kernel.map(|kernel| ProblemSpec::Deblur { image, kernel, sigma: s })
        }
        Some(ExperimentKind::AdsnGenerate) => {
            if prior.mean.is_some() || prior.cov.is_some() {
                errs.push("prior: adsn experiments take `image`, not mean/cov".into());
            }
            if raw.problem.is_some() {
                errs.push("problem: adsn-generate is unconditional and takes no problem section".into());
            }
            Some(ProblemSpec::Generate {
                image: image_path(&mut errs),
            })
        }
        None => None,
    };
    if matches!(kind, Some(ExperimentKind::AdsnDeblur | ExperimentKind::AdsnGenerate)) && samples == 0 && raw.samples.is_some() {
        errs.push("samples: must be at least 1".into());
    }

    match (errs.is_empty(), kind, spec, raw.seed) {
        (true, Some(kind), Some(problem), Some(seed)) => Ok(ExperimentConfig {
            kind,
            seed,
            schedule,
            output_dir: raw.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
            samples,
            models,
            problem,
            raw,
        }),
        _ => Err(Error::Config(errs)),
    }
}

fn parse_kernel(k: &RawKernel, base: &Path, errs: &mut Vec<String>) -> Option<KernelSpec> {
    let spec = match k.kind.as_deref() {
        Some("file") => match &k.path {
            Some(p) => KernelSpec::File(base.join(p)),
            None => {
                errs.push("problem.kernel.path: missing for a file kernel".into());
                return None;
            }
        },
        Some("bicubic") => match k.factor {
            Some(f) if f >= 1 => KernelSpec::Bicubic(f),
            Some(_) => {
                errs.push("problem.kernel.factor: must be at least 1".into());
                return None;
            }
            None => {
                errs.push("problem.kernel.factor: missing for a bicubic kernel".into());
                return None;
            }
        },
        Some("identity") => KernelSpec::Identity,
        Some(other) => {
            errs.push(format!("problem.kernel.kind: unknown kernel `{other}` (file | bicubic | identity)"));
            return None;
        }
        None => {
            errs.push("problem.kernel.kind: missing".into());
            return None;
        }
    };
    if let Err(e) = spec.load() {
        errs.push(format!("problem.kernel: {e}"));
        return None;
    }
    Some(spec)
}

/// Curve label, distinguishing DPS weights.
pub fn model_label(m: &GuidanceModel) -> String {
    match m {
        GuidanceModel::Dps { alpha_dps } => format!("DPS(alpha={alpha_dps})"),
        other => other.name().to_string(),
    }
}

fn model_slug(m: &GuidanceModel) -> String {
    match m {
        GuidanceModel::Dps { alpha_dps } => format!("dps_alpha{alpha_dps}"),
        other => other.name().to_lowercase(),
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DefectEntry {
    pub t: usize,
    pub defect: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub model: String,
    pub terminal: CurvePoint,
    pub max_w_total: f64,
    /// `‖μ₀ − μ_{0|v}‖`.
    pub terminal_mean_bias: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub forward_consistency_defect: Vec<DefectEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub kind: String,
    pub seed: u64,
    pub version: String,
    pub schedule: ScheduleParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observation: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_eigenbasis_leakage: Option<f64>,
    pub models: Vec<ModelSummary>,
    pub config: RawConfig,
}

/// Runs an experiment and writes `curves.csv`, `summary.json` and images.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    let sched = Schedule::from_params(&config.schedule)?;
    let out = config.resolved_output_dir();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let (curves, summary) = match &config.problem {
        ProblemSpec::Toy { prior, observed, sigma, v } => run_toy(config, &sched, prior, observed, *sigma, v.as_deref())?,
        ProblemSpec::Deblur { image, kernel, sigma } => run_deblur(config, &sched, &out, image, kernel, *sigma)?,
        ProblemSpec::Generate { image } => run_generate(config, &sched, &out, image)?,
    };
    write_curves(&out.join("curves.csv"), &curves)?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Parameter(e.to_string()))?;
    let path = out.join("summary.json");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

fn base_summary(config: &ExperimentConfig) -> RunSummary {
    RunSummary {
        kind: config.kind.as_str().to_string(),
        seed: config.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        schedule: config.schedule,
        observation: None,
        max_eigenbasis_leakage: None,
        models: Vec::new(),
        config: config.raw.clone(),
    }
}

fn model_summary(curve: &WassersteinCurve, bias: f64) -> ModelSummary {
    ModelSummary {
        model: curve.model.clone(),
        terminal: *curve.points.last().expect("curves are never empty"),
        max_w_total: curve.points.iter().map(|p| p.w_total).fold(0.0, f64::max),
        terminal_mean_bias: bias,
        forward_consistency_defect: Vec::new(),
        images: Vec::new(),
    }
}

fn run_toy(
    config: &ExperimentConfig,
    sched: &Schedule,
    prior: &GaussianLaw,
    observed: &[usize],
    sigma: f64,
    v: Option<&[f64]>,
) -> Result<(Vec<WassersteinCurve>, RunSummary)> {
    let d = prior.dim();
    let v = match v {
        Some(v) => DVector::from_column_slice(v),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let x0 = GaussianSampler::new(prior)?.sample(&mut rng);
            let noise = gaussian::standard_normal_vector(observed.len(), &mut rng);
            DVector::from_iterator(observed.len(), observed.iter().map(|&i| x0[i])) + noise * sigma
        }
    };
    let prob = LinearInverseProblem::inpainting(d, observed, sigma, Some(v.clone()))?;
    let post = gaussian::condition_on_observation(prior, &prob)?;
    let big_t = sched.steps();
    let mut summary = base_summary(config);
    summary.observation = Some(v.iter().copied().collect());
    let mut curves = Vec::new();
    for m in &config.models {
        let traj = analysis::propagate(*m, prior, &prob, sched)?;
        let curve = analysis::curve_from_trajectory(&model_label(m), &traj, prior, &prob, sched)?;
        let mut ms = model_summary(&curve, (traj.mean(0) - &post.mean).norm());
        let mut ts = vec![1, big_t / 2, big_t];
        ts.dedup();
        for t in ts {
            ms.forward_consistency_defect.push(DefectEntry {
                t,
                defect: analysis::forward_consistency_defect(*m, prior, &prob, sched, t)?,
            });
        }
        summary.models.push(ms);
        curves.push(curve);
    }
    Ok((curves, summary))
}

fn load_model(image: &Path) -> Result<SpectralAdsn> {
    Ok(adsn::texton_from_image(&RgbImage::load_png(image)?))
}

/// Independent stream per sample index, shared by every model.
fn sample_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64 + 1);
    rng
}

fn save(img: &RgbImage, out: &Path, name: &str) -> Result<String> {
    img.save_png(&out.join(name))?;
    Ok(name.to_string())
}

fn spatial_mean_bias(problem: &SpectralProblem, sched: &Schedule, terminal: &[adsn::C3]) -> Result<f64> {
    let (_, truth) = deblur::spectral_noisy_posterior(problem, sched, 0)?;
    let mut acc = 0.0;
    for (k, m) in terminal.iter().enumerate() {
        let proj = problem.eigen(k).basis.adjoint() * m;
        for j in 0..3 {
            acc += (proj[j] - truth[k][j]).norm_sqr();
        }
    }
    Ok((acc / problem.pixels() as f64).sqrt())
}

fn run_deblur(
    config: &ExperimentConfig,
    sched: &Schedule,
    out: &Path,
    image: &Path,
    kernel: &KernelSpec,
    sigma: f64,
) -> Result<(Vec<WassersteinCurve>, RunSummary)> {
    let model = load_model(image)?;
    let kernel = kernel.load()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (x0, v) = deblur::make_observation(&model, &kernel, sigma, &mut rng)?;
    let problem = SpectralProblem::new(&model, &kernel, sigma, &v)?;
    let result = deblur::deblur_wasserstein_curves(&problem, sched, &config.models)?;
    let mut summary = base_summary(config);
    summary.max_eigenbasis_leakage = Some(result.leakage);
    save(&x0, out, "x0.png")?;
    save(&v, out, "v.png")?;
    let mut curves = result.curves.clone();
    for (i, m) in config.models.iter().enumerate() {
        curves[i].model = model_label(m);
        let dir = out.join(model_slug(m));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let bias = spatial_mean_bias(&problem, sched, &result.terminal_means[i])?;
        let mut ms = model_summary(&curves[i], bias);
        let slug = model_slug(m);
        ms.images.push(format!("{slug}/{}", save(&result.mean_image(&problem, i), &dir, "mean.png")?));
        for k in 0..config.samples {
            let img = deblur::sample_conditional(&problem, *m, sched, &mut sample_rng(config.seed, k))?;
            ms.images.push(format!("{slug}/{}", save(&img, &dir, &format!("sample_{k}.png"))?));
        }
        summary.models.push(ms);
    }
    Ok((curves, summary))
}

fn run_generate(
    config: &ExperimentConfig,
    sched: &Schedule,
    out: &Path,
    image: &Path,
) -> Result<(Vec<WassersteinCurve>, RunSummary)> {
    let model = load_model(image)?;
    let problem = SpectralProblem::unconditional(&model)?;
    let result = deblur::deblur_wasserstein_curves(&problem, sched, &[GuidanceModel::Cgdm])?;
    let mut curves = result.curves.clone();
    curves[0].model = "DDPM".into();
    let mut summary = base_summary(config);
    summary.max_eigenbasis_leakage = Some(result.leakage);
    let bias = spatial_mean_bias(&problem, sched, &result.terminal_means[0])?;
    let mut ms = model_summary(&curves[0], bias);
    ms.images.push(save(&result.mean_image(&problem, 0), out, "mean.png")?);
    for k in 0..config.samples {
        let img = deblur::sample_unconditional(&model, sched, &mut sample_rng(config.seed, k))?;
        ms.images.push(save(&img, out, &format!("sample_{k}.png"))?);
    }
    summary.models.push(ms);
    Ok((curves, summary))
}

/// `t,model,w_total,w_ker,w_perp,mean_bias_norm`, `T+1` rows per model with `t` descending.
pub fn write_curves(path: &Path, curves: &[WassersteinCurve]) -> Result<()> {
    let mut s = String::from("t,model,w_total,w_ker,w_perp,mean_bias_norm\n");
    for c in curves {
        for p in &c.points {
            let fields = [p.w_total, p.w_ker, p.w_perp, p.mean_gap];
            if fields.iter().any(|x| !x.is_finite()) {
                return Err(Error::Instability {
                    model: c.model.clone(),
                    t: p.t,
                    detail: "non-finite curve value".into(),
                });
            }
            writeln!(s, "{},{},{},{},{},{}", p.t, c.model, p.w_total, p.w_ker, p.w_perp, p.mean_gap).expect("writing to a String");
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
