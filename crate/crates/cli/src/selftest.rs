use chaoslab_core::chaos::ChaosConfig;

use crate::checks::{self, Check};
use crate::error::{EXIT_CONDITION, EXIT_OK};
use crate::output::Output;

const SEED: u64 = 0x5eed;

type Suite = (&'static str, Box<dyn Fn() -> Check>);

/// Reduced-count versions of the acceptance suites.
pub fn suites(seed: u64) -> Vec<Suite> {
    vec![
        ("constants", Box::new(|| checks::constants(2000))),
        ("stochastic-exponential", Box::new(move || checks::stochastic_exponential(200, seed))),
        ("representation", Box::new(move || checks::representation(100, seed))),
        ("gamma-lipschitz", Box::new(move || checks::gamma_lipschitz(200, seed))),
        ("a-priori", Box::new(move || checks::apriori(30, seed))),
        ("picard-contraction", Box::new(move || checks::contraction(20, seed))),
        ("closed-forms", Box::new(move || checks::closed_forms(10, seed))),
        ("conservation", Box::new(|| checks::conservation(&ChaosConfig::standard(), &[2, 3]))),
        ("propagation-of-chaos", Box::new(|| checks::chaos_gaps(&ChaosConfig::standard(), &[2, 4]))),
        ("wasserstein", Box::new(move || checks::wasserstein(100, 60, 200, 200, seed))),
        ("rates", Box::new(move || checks::rates(&ChaosConfig::standard(), &[16, 64, 256], 6.0, seed))),
        ("lambda-qt", Box::new(move || checks::lambda(10, seed))),
    ]
}

/// Runs the suites in order and stops at the first failure.
pub fn run(seed: Option<u64>) -> Output {
    let mut out = Output::default();
    for (name, suite) in suites(seed.unwrap_or(SEED)) {
        let c = suite();
        out.line(format!("{} {name}: {}", if c.passed { "PASS" } else { "FAIL" }, c.detail));
        if !c.passed {
            out.line(format!("selftest failed at {name}"));
            out.code = EXIT_CONDITION;
            return out;
        }
    }
    out.line("selftest passed");
    out.code = EXIT_OK;
    out
}
