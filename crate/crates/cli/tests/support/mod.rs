#![allow(dead_code)]

use std::path::PathBuf;
use std::process::Command;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Golden name, model file and extra flags.
pub const GOLDEN_CASES: &[(&str, &str, &[&str])] = &[
    ("hmm_sum_parallel", "hmm_weather.json", &["--scan", "parallel"]),
    ("hmm_sum_sequential", "hmm_weather.json", &["--scan", "sequential"]),
    ("hmm_max_parallel", "hmm_weather.json", &["--scan", "parallel", "--semiring", "maxproduct"]),
    ("hmm_max_sequential", "hmm_weather.json", &["--scan", "sequential", "--semiring", "maxproduct"]),
    ("hmm_uniform_sum", "hmm.json", &[]),
    ("hmm_uniform_max", "hmm.json", &["--semiring", "maxproduct"]),
    ("hmm_optimize", "hmm_weather.json", &["--interp", "optimize"]),
    ("hmm_montecarlo", "hmm_weather.json", &["--interp", "montecarlo", "--samples", "500", "--seed", "7"]),
    ("kalman_parallel", "kalman.json", &["--scan", "parallel"]),
    ("kalman_sequential", "kalman.json", &["--scan", "sequential"]),
    ("kalman_bias_parallel", "kalman_bias.json", &["--scan", "parallel"]),
    ("kalman_bias_sequential", "kalman_bias.json", &["--scan", "sequential"]),
    ("slds_parallel", "slds.json", &["--interp", "momentmatching", "--scan", "parallel"]),
    ("slds_sequential", "slds.json", &["--interp", "momentmatching", "--scan", "sequential"]),
    ("gmm_momentmatching", "gmm.json", &["--interp", "momentmatching"]),
    ("gmm_montecarlo", "gmm.json", &["--interp", "montecarlo", "--samples", "200", "--seed", "3"]),
    ("kalman_maxproduct_rejected", "kalman.json", &["--semiring", "maxproduct"]),
    ("slds_exact_intractable", "slds.json", &["--interp", "exact"]),
];

pub struct Output {
    pub stdout: String,
    pub stderr: String,
    pub code: i32,
}

pub fn funsor(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_funsor"))
        .args(args)
        .current_dir(repo_root())
        .env_remove("FUNSOR_FUEL")
        .output()
        .expect("binary runs");
    Output {
        stdout: String::from_utf8(out.stdout).expect("utf-8 output"),
        stderr: String::from_utf8(out.stderr).expect("utf-8 output"),
        code: out.status.code().unwrap_or(-1),
    }
}

pub fn run_case(model: &str, flags: &[&str]) -> Output {
    let path = format!("models/{model}");
    let mut args = vec!["run", path.as_str(), "--deterministic"];
    args.extend_from_slice(flags);
    funsor(&args)
}

/// Runs every golden case twice and compares both runs with the stored file.
/// With `FUNSOR_BLESS` set the files are rewritten instead.
pub fn check_goldens() -> Result<(), String> {
    let bless = std::env::var_os("FUNSOR_BLESS").is_some();
    for (name, model, flags) in GOLDEN_CASES {
        let first = run_case(model, flags);
        let second = run_case(model, flags);
        if first.stdout != second.stdout {
            return Err(format!("{name}: output differs between runs"));
        }
        let path = golden_dir().join(format!("{name}.json"));
        if bless {
            std::fs::write(&path, &first.stdout).map_err(|e| e.to_string())?;
            continue;
        }
        let want = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        if first.stdout != want {
            return Err(format!("{name}: got {} expected {}", first.stdout.trim(), want.trim()));
        }
    }
    Ok(())
}
