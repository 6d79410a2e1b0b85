use std::fs;
use std::process::Command;

use gaussdiff::adsn::texton_from_image;
use gaussdiff::analysis;
use gaussdiff::deblur::{self, SpectralProblem};
use gaussdiff::fft::{Fft2, RgbImage};
use gaussdiff::gaussian;
use gaussdiff::samplers::GuidanceModel;
use gaussdiff::schedule::Schedule;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{config_path, ensure, fixture, toy, Check, Outcome};

pub fn all() -> Vec<Check> {
    let c = |name: &str, run: fn() -> Outcome| Check {
        label: format!("check {name}"),
        budget: None,
        run,
    };
    vec![
        c("frozen toy regression values", frozen_values),
        c("terminal bias of DPS on the 3D fixture", dps_bias_3d),
        c("texture deblurring order at t=0", texture_order),
        c("unconditional texture generation energy", generation_energy),
        c("cli exit codes and output override", cli),
    ]
}

fn close(name: &str, got: f64, frozen: f64) -> Result<(), String> {
    ensure!((got - frozen).abs() <= 1e-8 * frozen.abs(), "{name}: {got:e} vs frozen {frozen:e}");
    Ok(())
}

fn frozen_values() -> Outcome {
    let fx = toy("toy2d");
    let post = gaussian::condition_on_observation(&fx.prior, &fx.prob).unwrap();
    let cgdm = analysis::propagate(GuidanceModel::Cgdm, &fx.prior, &fx.prob, &fx.sched).unwrap();
    let curve = analysis::curve_from_trajectory("CGDM", &cgdm, &fx.prior, &fx.prob, &fx.sched).unwrap();
    let bias = (cgdm.mean(0) - &post.mean).norm();
    close("CGDM terminal bias", bias, 6.083747929277394e-7)?;
    close("CGDM W2 at t=0", curve.at(0).unwrap().w_total, 0.0016025879280795454)?;
    close("CGDM W2 at t=500", curve.at(500).unwrap().w_total, 0.00027695810887579136)?;
    let dps = GuidanceModel::Dps { alpha_dps: 1.0 };
    let defect = analysis::forward_consistency_defect(dps, &fx.prior, &fx.prob, &fx.sched, 500).unwrap();
    close("DPS defect at t=500", defect, 0.9191804893067619)?;
    ensure!(bias > 0.0, "CGDM terminal bias should be nonzero");
    Ok(format!("2D fixture: CGDM bias {bias:.6e}, DPS defect(t=500) {defect:.6e} (tol 1e-8 relative)"))
}

fn dps_bias_3d() -> Outcome {
    let fx = toy("toy3d");
    let post = gaussian::condition_on_observation(&fx.prior, &fx.prob).unwrap();
    let bias = |m| (analysis::propagate(m, &fx.prior, &fx.prob, &fx.sched).unwrap().mean(0) - &post.mean).norm();
    let (dps, cgdm) = (bias(GuidanceModel::Dps { alpha_dps: 0.2 }), bias(GuidanceModel::Cgdm));
    close("DPS bias", dps, 0.01584301533997623)?;
    close("CGDM bias", cgdm, 9.424090749953323e-6)?;
    ensure!(dps > cgdm, "DPS bias {dps:e} not above CGDM bias {cgdm:e}");
    let unstable = analysis::propagate(GuidanceModel::Dps { alpha_dps: 1.0 }, &fx.prior, &fx.prob, &fx.sched);
    ensure!(unstable.is_err(), "DPS with alpha_dps = 1 should diverge on the 3D fixture");
    Ok(format!("DPS(0.2) {dps:.4e} > CGDM {cgdm:.4e}; DPS(1) diverges"))
}

fn texture_order() -> Outcome {
    let sched = Schedule::linear(1000, 1e-4, 0.02).unwrap();
    let model = texton_from_image(&RgbImage::load_png(&fixture("texture64.png")).unwrap());
    let mut lines = Vec::new();
    for k in ["motion1.txt", "motion2.txt"] {
        let kernel = deblur::load_kernel(&fixture(k)).unwrap();
        let (_, v) = deblur::make_observation(&model, &kernel, 10.0 / 255.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let problem = SpectralProblem::new(&model, &kernel, 10.0 / 255.0, &v).unwrap();
        let models = [GuidanceModel::Dps { alpha_dps: 0.1 }, GuidanceModel::PiGdm, GuidanceModel::Cgdm];
        let out = deblur::deblur_wasserstein_curves(&problem, &sched, &models).unwrap();
        let end: Vec<_> = out.curves.iter().map(|c| *c.at(0).unwrap()).collect();
        ensure!(end[2].w_total <= end[1].w_total && end[1].w_total <= end[0].w_total, "{k}: totals out of order");
        ensure!(end[2].w_perp <= end[1].w_perp && end[1].w_perp <= end[0].w_perp, "{k}: perp components out of order");
        ensure!(out.leakage <= 1e-10, "{k}: eigenbasis leakage {:e}", out.leakage);
        lines.push(format!("{k}: perp {:.3e} <= {:.3e} <= {:.3e}", end[2].w_perp, end[1].w_perp, end[0].w_perp));
    }
    Ok(lines.join("; "))
}

/// Energy of 32 unconditional samples along `v₁(ξ)`, per radial band, against the exact backward law.
fn generation_energy() -> Outcome {
    let sched = Schedule::linear(1000, 1e-4, 0.02).unwrap();
    let full = RgbImage::load_png(&fixture("texture64.png")).unwrap();
    let (h, w) = (32, 32);
    let planes = [0, 1, 2].map(|c| (0..h * w).map(|p| full.get(c, p / w, p % w)).collect());
    let model = texton_from_image(&RgbImage::new(w, h, planes).unwrap());
    let problem = SpectralProblem::unconditional(&model).unwrap();
    let states = deblur::spectral_backward_propagation(&problem, GuidanceModel::Cgdm, &sched).unwrap();
    let last = states.last().unwrap();
    let n = h * w;
    let fft = Fft2::new(h, w);
    let band = |k: usize| {
        let f = |i: usize, m: usize| i.min(m - i) as f64 / m as f64;
        ((f(k / w, h).hypot(f(k % w, w)) / 0.71 * 4.0) as usize).min(3)
    };
    let samples = 32;
    let mut energy = [0.0; 4];
    for s in 0..samples {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        rng.set_stream(s);
        let img = deblur::sample_unconditional(&model, &sched, &mut rng).unwrap();
        let spec: Vec<_> = (0..3).map(|c| fft.forward_real(&img.planes[c])).collect();
        for k in 0..n {
            let v1 = problem.eigen(k).basis.column(0).into_owned();
            let y = nalgebra::Vector3::new(spec[0][k], spec[1][k], spec[2][k]);
            energy[band(k)] += (v1.dotc(&y) - last.means[k][0]).norm_sqr() / n as f64 / samples as f64;
        }
    }
    let (mut expect, mut var, mut adsn, mut adsn_var) = ([0.0; 4], [0.0; 4], [0.0; 4], [0.0; 4]);
    let lambdas = model.block_eigenvalues();
    for k in 0..n {
        let e = last.eigenvalues[k][0];
        expect[band(k)] += e;
        var[band(k)] += 4.0 * e * e / samples as f64;
        adsn[band(k)] += lambdas[k];
        adsn_var[band(k)] += 4.0 * lambdas[k] * lambdas[k] / samples as f64;
    }
    let mut lines = Vec::new();
    for b in 0..4 {
        let (se, se_adsn) = (var[b].sqrt(), adsn_var[b].sqrt());
        ensure!((energy[b] - expect[b]).abs() <= 4.0 * se, "band {b}: sample energy {:.4} vs exact law {:.4} (se {se:.4})", energy[b], expect[b]);
        ensure!((energy[b] - adsn[b]).abs() <= 4.0 * se_adsn, "band {b}: sample energy {:.4} vs ADSN {:.4} (se {se_adsn:.4})", energy[b], adsn[b]);
        lines.push(format!("{:.3}/{:.3} (se {:.3})", energy[b], adsn[b], se_adsn));
    }
    Ok(format!("band energies sample/ADSN {}", lines.join(", ")))
}

fn cli() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_gaussdiff");
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| Command::new(exe).args(args).env("GAUSSDIFF_OUTPUT_DIR", dir.path().join("out")).output().unwrap();
    let out = run(&["version"]);
    ensure!(out.status.code() == Some(0), "version exited {:?}", out.status.code());
    let toy2d = config_path("toy2d");
    let out = run(&["validate", toy2d.to_str().unwrap()]);
    ensure!(out.status.code() == Some(0), "validate toy2d exited {:?}", out.status.code());

    let text = fs::read_to_string(&toy2d).unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, text.replace("seed = 2024", "").replace("alpha_dps = 1.0", "alpha_dps = 0.0")).unwrap();
    let out = run(&["validate", bad.to_str().unwrap()]);
    let err = String::from_utf8_lossy(&out.stderr);
    ensure!(out.status.code() == Some(2), "invalid config exited {:?}", out.status.code());
    ensure!(err.contains("seed") && err.contains("alpha_dps"), "errors not aggregated: {err}");

    let unstable = dir.path().join("unstable.toml");
    fs::write(&unstable, text.replace("alpha_dps = 1.0", "alpha_dps = 50.0")).unwrap();
    let out = run(&["run", unstable.to_str().unwrap()]);
    let err = String::from_utf8_lossy(&out.stderr);
    ensure!(out.status.code() == Some(3), "diverging run exited {:?}", out.status.code());
    ensure!(err.contains("DPS") && err.contains("t="), "instability message lacks model/t: {err}");

    let out = run(&["run", dir.path().join("absent.toml").to_str().unwrap()]);
    ensure!(out.status.code() == Some(4), "missing file exited {:?}", out.status.code());

    let out = run(&["run", toy2d.to_str().unwrap()]);
    ensure!(out.status.code() == Some(0), "toy2d run exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/curves.csv")).map_err(|e| format!("output override ignored: {e}"))?;
    let rows = csv.lines().count() - 1;
    ensure!(rows == 3 * 1001, "curves.csv has {rows} rows");
    ensure!(dir.path().join("out/summary.json").exists(), "summary.json missing");
    Ok("exit codes 0/2/3/4 and GAUSSDIFF_OUTPUT_DIR honoured".into())
}
