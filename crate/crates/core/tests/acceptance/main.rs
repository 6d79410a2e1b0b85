//! Acceptance criteria and end-to-end checks, run sequentially with a
//! PASS/FAIL line each. Extra arguments filter checks by substring.

mod checks;
mod criteria;

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use gaussdiff::experiments::{self, ProblemSpec};
use gaussdiff::gaussian::{GaussianLaw, LinearInverseProblem};
use gaussdiff::samplers::GuidanceModel;
use gaussdiff::schedule::Schedule;
use nalgebra::DVector;

pub type Outcome = Result<String, String>;

#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($arg)+)),
        }
    };
}

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn config_path(name: &str) -> PathBuf {
    crate_dir().join("configs").join(format!("{name}.toml"))
}

pub fn fixture(name: &str) -> PathBuf {
    crate_dir().join("fixtures").join(name)
}

pub struct Toy {
    pub prior: GaussianLaw,
    pub prob: LinearInverseProblem,
    pub sched: Schedule,
    pub models: Vec<GuidanceModel>,
}

/// Prior, problem and models of a committed toy config.
pub fn toy(name: &str) -> Toy {
    let c = experiments::validate_config(&config_path(name)).unwrap();
    let ProblemSpec::Toy { prior, observed, sigma, v } = c.problem else {
        panic!("{name} is not a toy config");
    };
    let v = DVector::from_column_slice(v.as_deref().expect("committed toys fix v"));
    Toy {
        prob: LinearInverseProblem::inpainting(prior.dim(), &observed, sigma, Some(v)).unwrap(),
        prior,
        sched: Schedule::from_params(&c.schedule).unwrap(),
        models: c.models,
    }
}

pub struct Check {
    pub label: String,
    pub budget: Option<Duration>,
    pub run: fn() -> Outcome,
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut all = criteria::all();
    all.extend(checks::all());
    let selected: Vec<Check> = all
        .into_iter()
        .filter(|c| filters.is_empty() || filters.iter().any(|f| c.label.contains(f.as_str())))
        .collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for check in &selected {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match (result, check.budget) {
            (Ok(d), Some(b)) if elapsed > b => Err(format!("{d}; took {elapsed:.2?}, budget {b:.2?}")),
            (r, _) => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {}: {detail} [{elapsed:.2?}]", check.label);
    }
    println!("\n{} checks, {} passed, {} failed", selected.len(), selected.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

