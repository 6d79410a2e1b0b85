use std::fs;
use std::time::{Duration, Instant};

use gaussdiff::adsn::{self, texton_from_image, C3, M3};
use gaussdiff::analysis;
use gaussdiff::deblur::{self, BlurKernel, SpectralProblem};
use gaussdiff::experiments;
use gaussdiff::fft::RgbImage;
use gaussdiff::gaussian::{self, GaussianLaw, LinearInverseProblem};
use gaussdiff::samplers::{ConditionalSampler, GuidanceModel};
use gaussdiff::schedule::Schedule;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{config_path, ensure, fixture, toy, Check, Outcome};

const SIGMA: f64 = 10.0 / 255.0;

fn secs(s: f64) -> Option<Duration> {
    Some(Duration::from_secs_f64(s))
}

pub fn all() -> Vec<Check> {
    let c = |n: u32, name: &str, budget: Option<Duration>, run: fn() -> Outcome| Check {
        label: format!("criterion {n:>2} ({name})"),
        budget,
        run,
    };
    vec![
        c(1, "schedule exactness", None, schedule_exactness),
        c(2, "CGDM interpretive exactness", secs(1.0), cgdm_interpretation),
        c(3, "t=0 coincidence", secs(1.0), t0_coincidence),
        c(4, "identity prior degeneracy", secs(5.0), identity_prior),
        c(5, "ordering on the 2D fixture", secs(30.0), ordering_2d),
        c(6, "Monte-Carlo agreement", secs(120.0), monte_carlo),
        c(7, "structured vs dense oracle", secs(300.0), structured_vs_dense),
        c(8, "kernel-component universality", None, kernel_universality),
        c(9, "rank-1 lemma", secs(1.0), rank1_lemma),
        c(10, "exact backward sanity", secs(10.0), exact_backward),
        c(11, "determinism", None, determinism),
    ]
}

fn schedule_exactness() -> Outcome {
    let start = Instant::now();
    let s = Schedule::linear(1000, 1e-4, 0.02).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let ab = s.alpha_bar(1000);
    let detail = format!("alpha_bar_T = {ab:.7e}, target 4.03e-5 +/- 0.005e-5, built in {elapsed:.2?}");
    ensure!((ab - 4.03e-5).abs() <= 0.005e-5, "{detail}");
    ensure!(elapsed < Duration::from_millis(1), "{detail}");
    Ok(detail)
}

fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    &b * b.transpose() / d as f64 + DMatrix::identity(d, d) * 0.05
}

/// Ten random priors with random observation operators.
fn random_instances() -> Vec<(GaussianLaw, LinearInverseProblem)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    (0..10)
        .map(|i| {
            let d = [2, 3, 5][i % 3];
            let m = 1 + i % d;
            let prior = GaussianLaw::new(DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)), random_spd(d, &mut rng)).unwrap();
            let a = DMatrix::from_fn(m, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let v = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            (prior, LinearInverseProblem::new(a, SIGMA, Some(v)).unwrap())
        })
        .collect()
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn cgdm_interpretation() -> Outcome {
    let s = Schedule::linear(1000, 1e-4, 0.02).unwrap();
    let mut worst: f64 = 0.0;
    for (prior, prob) in random_instances() {
        for t in [1, 250, 500, 750, 1000] {
            let model = analysis::induced_noisy_posterior(GuidanceModel::Cgdm, &prior, &prob, &s, t).map_err(|e| e.to_string())?;
            let exact = gaussian::noisy_posterior(&prior, &prob, &s, t).map_err(|e| e.to_string())?;
            worst = worst.max(rel(&model.cov, &exact.cov));
        }
    }
    let detail = format!("max relative Frobenius gap {worst:.2e} over 10 priors x 5 times (tol 1e-10)");
    ensure!(worst <= 1e-10, "{detail}");
    Ok(detail)
}

fn t0_coincidence() -> Outcome {
    let s = Schedule::linear(1000, 1e-4, 0.02).unwrap();
    let mut worst: f64 = 0.0;
    for (prior, prob) in random_instances() {
        let exact = gaussian::condition_on_observation(&prior, &prob).map_err(|e| e.to_string())?;
        for m in [GuidanceModel::Dps { alpha_dps: 1.0 }, GuidanceModel::PiGdm] {
            let law = analysis::induced_noisy_posterior(m, &prior, &prob, &s, 0).map_err(|e| e.to_string())?;
            worst = worst.max(rel(&law.cov, &exact.cov));
        }
    }
    let detail = format!("DPS(alpha=1) and PiGDM vs exact posterior covariance at t=0: max relative gap {worst:.2e} (tol 1e-10)");
    ensure!(worst <= 1e-10, "{detail}");
    Ok(detail)
}

fn identity_prior() -> Outcome {
    let fx = toy("toy3d");
    let prior = GaussianLaw::new(fx.prior.mean.clone(), DMatrix::identity(3, 3)).unwrap();
    let a = analysis::propagate(GuidanceModel::PiGdm, &prior, &fx.prob, &fx.sched).map_err(|e| e.to_string())?;
    let b = analysis::propagate(GuidanceModel::Cgdm, &prior, &fx.prob, &fx.sched).map_err(|e| e.to_string())?;
    let worst = (0..=fx.sched.steps())
        .map(|t| (a.cov(t) - b.cov(t)).amax())
        .fold(0.0, f64::max);
    let detail = format!("max entrywise covariance gap {worst:.2e} over {} steps (tol 1e-12)", fx.sched.steps() + 1);
    ensure!(worst <= 1e-12, "{detail}");
    Ok(detail)
}

fn ordering_2d() -> Outcome {
    let fx = toy("toy2d");
    let curves: Vec<_> = fx
        .models
        .iter()
        .map(|&m| analysis::wasserstein_curve(m, &fx.prior, &fx.prob, &fx.sched))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let w = |i: usize, t: usize| curves[i].at(t).unwrap().w_total;
    let ordered = (1..=1000).filter(|&t| w(2, t) < w(1, t) && w(1, t) < w(0, t)).count();
    let frac = ordered as f64 / 1000.0;
    let (d, p, c) = (w(0, 500), w(1, 500), w(2, 500));
    let detail = format!("CGDM < PiGDM < DPS on {:.1}% of t; at t=500 DPS {d:.3e}, PiGDM {p:.3e}, CGDM {c:.3e}", 100.0 * frac);
    ensure!(frac >= 0.95, "{detail}");
    ensure!(d >= 10.0 * p && p >= 10.0 * c, "{detail} (not an order of magnitude apart)");
    Ok(detail)
}

fn monte_carlo() -> Outcome {
    let fx = toy("toy2d");
    let traj = analysis::propagate(GuidanceModel::Cgdm, &fx.prior, &fx.prob, &fx.sched).map_err(|e| e.to_string())?;
    let sampler = ConditionalSampler::new(GuidanceModel::Cgdm, &fx.prior, &fx.prob, &fx.sched).map_err(|e| e.to_string())?;
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut sum = DVector::zeros(2);
    let mut sq = DMatrix::zeros(2, 2);
    for _ in 0..n {
        let y = sampler.sample(&mut rng).map_err(|e| e.to_string())?;
        sum += &y;
        sq += &y * y.transpose();
    }
    let nf = n as f64;
    let mean = &sum / nf;
    let cov = (sq - &mean * mean.transpose() * nf) / (nf - 1.0);
    let (mu, sigma) = (traj.mean(0), traj.cov(0));
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        worst = worst.max((mean[i] - mu[i]).abs() / (sigma[(i, i)] / nf).sqrt());
        for j in 0..2 {
            let se = ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2)) / nf).sqrt();
            worst = worst.max((cov[(i, j)] - sigma[(i, j)]).abs() / se);
        }
    }
    let detail = format!("{n} CGDM runs: worst entry deviation {worst:.2} standard errors (tol 4)");
    ensure!(worst <= 4.0, "{detail}");
    Ok(detail)
}

fn random_image(h: usize, w: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planes = [0, 1, 2].map(|_| (0..h * w).map(|_| rng.random::<f64>()).collect());
    RgbImage::new(w, h, planes).unwrap()
}

fn small_kernel() -> BlurKernel {
    BlurKernel::new(3, 3, vec![0.3, 0.2, 0.0, 0.1, 0.25, 0.05, 0.0, 0.05, 0.05]).unwrap()
}

/// 4×4 RGB texture, blur and observation, in spectral and dense form.
fn fixture_4x4() -> (SpectralProblem, GaussianLaw, LinearInverseProblem) {
    let model = texton_from_image(&random_image(4, 4, 17));
    let kernel = small_kernel();
    let (_, v) = deblur::make_observation(&model, &kernel, SIGMA, &mut ChaCha8Rng::seed_from_u64(18)).unwrap();
    let problem = SpectralProblem::new(&model, &kernel, SIGMA, &v).unwrap();
    let prior = model.dense_law().unwrap();
    let a = deblur::dense_blur_matrix(&kernel, 4, 4).unwrap();
    (problem, prior, LinearInverseProblem::new(a, SIGMA, Some(v.to_vector())).unwrap())
}

const MODELS_4X4: [GuidanceModel; 3] = [GuidanceModel::Dps { alpha_dps: 0.2 }, GuidanceModel::PiGdm, GuidanceModel::Cgdm];

fn structured_vs_dense() -> Outcome {
    let (problem, prior, prob) = fixture_4x4();
    let sched = Schedule::linear(1000, 1e-4, 0.02).unwrap();
    let n = problem.pixels();
    let curves = deblur::deblur_wasserstein_curves(&problem, &sched, &MODELS_4X4).map_err(|e| e.to_string())?;
    let post = gaussian::condition_on_observation(&prior, &prob).map_err(|e| e.to_string())?;
    let atoms: Vec<Vec<DVector<Complex64>>> = (0..n)
        .map(|k| {
            let basis = problem.eigen(k).basis;
            (0..3).map(|j| deblur::fourier_atom(4, 4, k, &basis.column(j).into_owned())).collect()
        })
        .collect();
    let (mut e_err, mut m_err, mut w_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (mi, &m) in MODELS_4X4.iter().enumerate() {
        let dense = analysis::propagate(m, &prior, &prob, &sched).map_err(|e| e.to_string())?;
        let spectral = deblur::spectral_backward_propagation(&problem, m, &sched).map_err(|e| e.to_string())?;
        for t in 0..=sched.steps() {
            let st = &spectral[sched.steps() - t];
            let cov = dense.cov(t).map(|x| Complex64::new(x, 0.0));
            let mean = dense.mean(t).map(|x| Complex64::new(x, 0.0));
            let (mut de, mut se, mut dm, mut sm): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
            for (k, row) in atoms.iter().enumerate() {
                for (j, u) in row.iter().enumerate() {
                    let e = (u.adjoint() * &cov * u)[(0, 0)].re;
                    let mu = u.dotc(&mean) * (n as f64).sqrt();
                    de = de.max((e - st.eigenvalues[k][j]).abs());
                    se = se.max(e.abs());
                    dm = dm.max((mu - st.means[k][j]).norm());
                    sm = sm.max(mu.norm());
                }
            }
            e_err = e_err.max(de / se);
            m_err = m_err.max(dm / sm.max(f64::MIN_POSITIVE));
            let truth = gaussian::forward_marginal(&post, &sched, t).map_err(|e| e.to_string())?;
            let w = gaussian::wasserstein2(&dense.law(t), &truth).map_err(|e| e.to_string())?;
            let got = curves.curves[mi].at(t).unwrap().w_total;
            w_err = w_err.max((w - got).abs() / w.max(f64::MIN_POSITIVE));
        }
    }
    let detail = format!("3 models x 1001 steps: eigenvalues rel {e_err:.1e}, means rel {m_err:.1e}, W2 totals rel {w_err:.1e} (tol 1e-8)");
    ensure!(e_err <= 1e-8 && m_err <= 1e-8 && w_err <= 1e-8, "{detail}");
    Ok(detail)
}

fn ker_spread(curves: &[analysis::WassersteinCurve]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, p) in curves[0].points.iter().enumerate() {
        for c in &curves[1..] {
            worst = worst.max((c.points[i].w_ker - p.w_ker).abs());
        }
    }
    worst
}

fn kernel_universality() -> Outcome {
    let sched = Schedule::linear(1000, 1e-4, 0.02).unwrap();
    let (small, _, _) = fixture_4x4();
    let a = deblur::deblur_wasserstein_curves(&small, &sched, &MODELS_4X4).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let texture = texton_from_image(&RgbImage::load_png(&fixture("texture64.png")).unwrap());
    let kernel = deblur::load_kernel(&fixture("motion1.txt")).unwrap();
    let (_, v) = deblur::make_observation(&texture, &kernel, SIGMA, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let big = SpectralProblem::new(&texture, &kernel, SIGMA, &v).unwrap();
    let models = [GuidanceModel::Dps { alpha_dps: 0.1 }, GuidanceModel::PiGdm, GuidanceModel::Cgdm];
    let b = deblur::deblur_wasserstein_curves(&big, &sched, &models).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let (sa, sb) = (ker_spread(&a.curves), ker_spread(&b.curves));
    let detail = format!(
        "max spread of w_ker across models: 4x4 {sa:.1e}, 64x64 {sb:.1e} (tol 1e-10); 64x64 run {elapsed:.2?} (budget 10 min)"
    );
    ensure!(sa <= 1e-10 && sb <= 1e-10, "{detail}");
    ensure!(elapsed < Duration::from_secs(600), "{detail}");
    Ok(detail)
}

fn rank1_lemma() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let c = |x: f64| Complex64::new(x, 0.0);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let y = C3::from_fn(|_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let (a, b) = (rng.random_range(0.0..1.0), rng.random_range(0.1..1.0));
        let m = y * y.adjoint() * c(a) + M3::identity() * c(b);
        let x = m.try_inverse().ok_or("dense inverse failed")?;
        let dense = x + x * (M3::identity() - m * x);
        let closed = adsn::rank1_inverse(a, b, &y).map_err(|e| e.to_string())?;
        worst = worst.max((closed - dense).camax());
    }
    let detail = format!("10^4 triples, max entrywise error {worst:.2e} (tol 1e-12)");
    ensure!(worst <= 1e-12, "{detail}");
    Ok(detail)
}

fn exact_backward() -> Outcome {
    let fx = toy("toy3d");
    let traj = analysis::propagate_exact_backward(&fx.prior, &fx.prob, &fx.sched).map_err(|e| e.to_string())?;
    let curve = analysis::curve_from_trajectory("exact", &traj, &fx.prior, &fx.prob, &fx.sched).map_err(|e| e.to_string())?;
    let worst = curve.points.iter().map(|p| p.w_total).fold(0.0, f64::max);
    let detail = format!("max W2 to the forward marginals over all t: {worst:.2e} (tol 1e-8)");
    ensure!(worst <= 1e-8, "{detail}");
    Ok(detail)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut report = Vec::new();
    for name in ["toy2d", "toy3d", "adsn_motion1", "adsn_generate"] {
        let mut config = experiments::validate_config(&config_path(name)).map_err(|e| e.to_string())?;
        let mut outputs = Vec::new();
        let mut times = Vec::new();
        for run in 0..2 {
            config.output_dir = dir.path().join(format!("{name}-{run}"));
            let start = Instant::now();
            experiments::run_experiment(&config).map_err(|e| e.to_string())?;
            times.push(start.elapsed());
            outputs.push(read_tree(&config.output_dir));
        }
        ensure!(outputs[0].len() >= 2, "{name}: missing outputs");
        for ((fa, a), (fb, b)) in outputs[0].iter().zip(&outputs[1]) {
            ensure!(fa == fb && a == b, "{name}: {fa} differs between runs");
        }
        report.push(format!("{name} ({:.2?} + {:.2?})", times[0], times[1]));
    }
    Ok(format!("byte-identical curves.csv, summary.json and images: {}", report.join(", ")))
}

/// Every file under `root` with its path relative to `root`, sorted.
fn read_tree(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

