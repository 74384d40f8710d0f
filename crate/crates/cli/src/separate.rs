use std::path::{Path, PathBuf};

use informed_iva::pipeline;
use informed_iva::solver::{write_trace_csv, IterationDiagnostics, SolverConfig};
use serde::Serialize;

use crate::config::{env_seed, parse_run_config, rebase, RunConfig, SeedSource};
use crate::error::{CliError, CliResult};
use crate::files::{fmt_f64, read_text, read_wav, wav_rate, write_atomic, write_csv, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";

pub fn soi_file(q: usize) -> String {
    format!("soi_{}.wav", q + 1)
}

/// Everything needed to rerun a separation, plus what it produced.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub command: &'static str,
    pub version: &'static str,
    /// Input document with defaults written out; accepted by `separate --config`.
    pub config: &'a RunConfig,
    pub seed: u64,
    pub seed_source: SeedSource,
    /// The solver settings after resolution, angles in radians.
    pub resolved_solver: &'a SolverConfig,
    pub final_cost: f64,
    pub outputs: Vec<String>,
}

/// Summary returned to the caller of [`cmd_separate`].
#[derive(Debug, Clone)]
pub struct SeparateReport {
    pub output_dir: PathBuf,
    pub outputs: Vec<PathBuf>,
}

fn absolute(p: &Path) -> CliResult<PathBuf> {
    std::path::absolute(p).map_err(|e| CliError::io(p, e))
}

pub fn cmd_separate(config_path: &Path) -> CliResult<SeparateReport> {
    let text = read_text(config_path)?;
    let doc = parse_run_config(&text, config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("")).to_path_buf();
    let resolved = doc.resolve(env_seed()?)?;
    let input = absolute(&rebase(&base, &doc.io.input))?;
    let output_dir = absolute(&rebase(&base, &doc.io.output_dir))?;

    let audio = read_wav(&input)?;
    let m = resolved.geometry.num_mics();
    if audio.channels.len() != m {
        return Err(CliError::Config(format!(
            "{} has {} channels, the array has {m} microphones",
            input.display(),
            audio.channels.len()
        )));
    }
    if f64::from(audio.sample_rate) != resolved.stft.sample_rate {
        return Err(CliError::Config(format!(
            "{} is sampled at {} Hz, the config expects {} Hz",
            input.display(),
            audio.sample_rate,
            resolved.stft.sample_rate
        )));
    }

    let sep = pipeline::separate(
        &audio.channels,
        &resolved.stft,
        &resolved.solver,
        Some(&resolved.geometry),
    )?;

    let rate = wav_rate(resolved.stft.sample_rate)?;
    let mut outputs = Vec::new();
    for (q, est) in sep.estimates.iter().enumerate() {
        let path = output_dir.join(soi_file(q));
        crate::files::write_wav(&path, std::slice::from_ref(est), rate)?;
        outputs.push(path);
    }
    let trace_path = output_dir.join(TRACE_FILE);
    write_atomic(&trace_path, |w| write_trace_csv(w, &sep.run.trace))?;
    outputs.push(trace_path);
    let diag_path = output_dir.join(DIAGNOSTICS_FILE);
    write_diagnostics(&diag_path, &sep.run.diagnostics)?;
    outputs.push(diag_path);

    let mut explicit = resolved.explicit.clone();
    explicit.io.input = input;
    explicit.io.output_dir = output_dir.clone();
    let manifest = RunManifest {
        command: "separate",
        version: env!("CARGO_PKG_VERSION"),
        config: &explicit,
        seed: resolved.solver.seed,
        seed_source: resolved.seed_source,
        resolved_solver: &resolved.solver,
        final_cost: sep.run.trace.last().map_or(f64::NAN, |c| c.j_total),
        outputs: outputs
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    let manifest_path = output_dir.join(MANIFEST_FILE);
    write_json(&manifest_path, &manifest)?;
    outputs.push(manifest_path);
    Ok(SeparateReport {
        output_dir,
        outputs,
    })
}

fn write_diagnostics(path: &Path, diag: &[IterationDiagnostics]) -> CliResult<()> {
    let rows: Vec<Vec<String>> = diag
        .iter()
        .enumerate()
        .map(|(i, d)| {
            vec![
                (i + 1).to_string(),
                fmt_f64(d.stationarity),
                fmt_f64(d.cross_terms),
                fmt_f64(d.bg_orthogonality),
                d.retries.to_string(),
                d.skipped.to_string(),
            ]
        })
        .collect();
    write_csv(
        path,
        &["iter", "stationarity", "cross_terms", "bg_orthogonality", "retries", "skipped"],
        &rows,
    )
}
