use std::io::Write;
use std::path::{Path, PathBuf};

use informed_iva::pipeline::{score, ChannelScore};

use crate::error::{CliError, CliResult};
use crate::files::{fmt_f64, read_wav, render_csv, write_atomic};
use crate::separate::{soi_file, MANIFEST_FILE};
use crate::simulate::{image_file, MIXTURE_FILE};

pub const METRICS_HEADER: [&str; 9] = [
    "trial", "variant", "channel", "sdr", "sir", "sar", "dsdr", "dsir", "dsar",
];

/// One CSV row in [`METRICS_HEADER`] order. `channel` is 1-based.
pub fn metrics_row(trial: usize, variant: Option<u8>, channel: usize, s: &ChannelScore) -> Vec<String> {
    vec![
        trial.to_string(),
        variant.map(|v| v.to_string()).unwrap_or_default(),
        channel.to_string(),
        fmt_f64(s.processed.sdr),
        fmt_f64(s.processed.sir),
        fmt_f64(s.processed.sar),
        fmt_f64(s.delta.sdr),
        fmt_f64(s.delta.sir),
        fmt_f64(s.delta.sar),
    ]
}

fn mono(path: &Path) -> CliResult<Vec<f64>> {
    let audio = read_wav(path)?;
    if audio.channels.len() != 1 {
        return Err(CliError::Config(format!("{} is not mono", path.display())));
    }
    Ok(audio.channels.into_iter().next().unwrap_or_default())
}

/// Files `name(0)`, `name(1)`, ... in `dir` up to the first missing one.
fn numbered(dir: &Path, name: impl Fn(usize) -> String) -> Vec<PathBuf> {
    (0..)
        .map(|i| dir.join(name(i)))
        .take_while(|p| p.is_file())
        .collect()
}

fn manifest_variant(dir: &Path) -> Option<u8> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v.get("config")?.get("variant")?.as_u64().and_then(|v| u8::try_from(v).ok())
}

/// Scores every estimate in `est_dir` against the images in `ref_dir`.
/// `target` is 1-based.
pub fn evaluate_dirs(
    est_dir: &Path,
    ref_dir: &Path,
    target: usize,
    trial: usize,
) -> CliResult<Vec<Vec<String>>> {
    let refs: Vec<Vec<f64>> = numbered(ref_dir, image_file)
        .iter()
        .map(|p| mono(p))
        .collect::<CliResult<_>>()?;
    if refs.is_empty() {
        return Err(CliError::Io(format!(
            "{}: no {} found",
            ref_dir.display(),
            image_file(0)
        )));
    }
    if target == 0 || target > refs.len() {
        return Err(CliError::Config(format!(
            "target {target} outside 1..={}",
            refs.len()
        )));
    }
    let mix_path = ref_dir.join(MIXTURE_FILE);
    let mixture = read_wav(&mix_path)?
        .channels
        .into_iter()
        .next()
        .unwrap_or_default();
    let est_paths = numbered(est_dir, soi_file);
    if est_paths.is_empty() {
        return Err(CliError::Io(format!(
            "{}: no {} found",
            est_dir.display(),
            soi_file(0)
        )));
    }
    let variant = manifest_variant(est_dir);
    est_paths
        .iter()
        .enumerate()
        .map(|(q, p)| {
            let est = mono(p)?;
            if est.len() != refs[0].len() || mixture.len() != refs[0].len() {
                return Err(CliError::Config(format!(
                    "{} has {} samples, references have {}",
                    p.display(),
                    est.len(),
                    refs[0].len()
                )));
            }
            let s = score(&est, &mixture, &refs, target - 1)?;
            Ok(metrics_row(trial, variant, q + 1, &s))
        })
        .collect()
}

pub fn cmd_evaluate(
    est_dir: &Path,
    ref_dir: &Path,
    target: usize,
    trial: usize,
    out: Option<&Path>,
) -> CliResult<()> {
    let rows = evaluate_dirs(est_dir, ref_dir, target, trial)?;
    let bytes = render_csv(&METRICS_HEADER, &rows).map_err(|e| CliError::Io(e.to_string()))?;
    match out {
        Some(path) => write_atomic(path, |w| w.write_all(&bytes)),
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}
