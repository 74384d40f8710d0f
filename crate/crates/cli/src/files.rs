//! WAV, CSV and JSON persistence. Every write goes to a temporary sibling
//! first and is renamed into place.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.{}.tmp", std::process::id()))
}

/// Writes `path` via `fill`, replacing any previous file only on success.
pub fn write_atomic(
    path: &Path,
    fill: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = temp_sibling(path);
    let result = (|| {
        let file = fs::File::create(&tmp)?;
        let mut out = BufWriter::new(file);
        fill(&mut out)?;
        out.flush()?;
        out.get_ref().sync_all()?;
        drop(out);
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::io(path, e));
    }
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("serializing {}: {e}", path.display())))?;
    write_atomic(path, |w| {
        w.write_all(text.as_bytes())?;
        w.write_all(b"\n")
    })
}

/// CSV bytes with a header row, CRLF line ends and RFC 4180 quoting.
pub fn render_csv<R: AsRef<[String]>>(header: &[&str], rows: &[R]) -> csv::Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.as_ref())?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

pub fn write_csv<R: AsRef<[String]>>(path: &Path, header: &[&str], rows: &[R]) -> CliResult<()> {
    let bytes = render_csv(header, rows).map_err(|e| CliError::io(path, e))?;
    write_atomic(path, |w| w.write_all(&bytes))
}

/// Shortest round-trip decimal for a float; non-finite values become `nan`, `inf`, `-inf`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v}")
    }
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Multichannel audio as one vector per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

/// Reads a WAV file. Float and integer PCM are accepted.
pub fn read_wav(path: &Path) -> CliResult<Audio> {
    let mut reader = hound::WavReader::open(path).map_err(|e| CliError::io(path, e))?;
    let spec = reader.spec();
    let nch = spec.channels as usize;
    if nch == 0 {
        return Err(CliError::io(path, "no channels"));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>(),
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()
        }
    }
    .map_err(|e| CliError::io(path, e))?;
    let mut channels = vec![Vec::with_capacity(interleaved.len() / nch); nch];
    for frame in interleaved.chunks_exact(nch) {
        for (c, v) in channels.iter_mut().zip(frame) {
            c.push(*v);
        }
    }
    Ok(Audio {
        channels,
        sample_rate: spec.sample_rate,
    })
}

/// Writes 32-bit float PCM.
pub fn write_wav(path: &Path, channels: &[Vec<f64>], sample_rate: u32) -> CliResult<()> {
    let nch = channels.len();
    if nch == 0 || channels.iter().any(|c| c.len() != channels[0].len()) {
        return Err(CliError::Io(format!(
            "{}: channels must be non-empty and equally long",
            path.display()
        )));
    }
    let spec = hound::WavSpec {
        channels: nch as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    write_atomic(path, |w| {
        let to_io = |e: hound::Error| std::io::Error::other(e.to_string());
        let mut wr = hound::WavWriter::new(w, spec).map_err(to_io)?;
        for i in 0..channels[0].len() {
            for c in channels {
                wr.write_sample(c[i] as f32).map_err(to_io)?;
            }
        }
        wr.finalize().map_err(to_io)
    })
}

/// Sample rate as stored in a WAV header; rejects non-integer rates.
pub fn wav_rate(sample_rate: f64) -> CliResult<u32> {
    if sample_rate.fract() != 0.0 || !(1.0..=u32::MAX as f64).contains(&sample_rate) {
        return Err(CliError::Config(format!(
            "sample rate {sample_rate} cannot be stored in a WAV header"
        )));
    }
    Ok(sample_rate as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting() {
        assert_eq!(fmt_f64(1.5), "1.5");
        assert_eq!(fmt_f64(f64::NAN), "nan");
        assert_eq!(fmt_f64(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn csv_quotes_and_crlf() {
        let rows = vec![vec!["a,b".to_string(), "say \"hi\"".to_string()]];
        let text = String::from_utf8(render_csv(&["x", "y"], &rows).unwrap()).unwrap();
        assert_eq!(text, "x,y\r\n\"a,b\",\"say \"\"hi\"\"\"\r\n");
    }

    #[test]
    fn fractional_rates_rejected() {
        assert!(wav_rate(16000.0).is_ok());
        assert!(wav_rate(44100.5).is_err());
        assert!(wav_rate(0.0).is_err());
    }
}
