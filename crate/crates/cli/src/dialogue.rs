//! Terminal version of a disclosure session: the engine asks, a person answers.

use std::io::{BufRead, Write};

use mindrel_core::artifacts::Artifacts;
use mindrel_core::data::FeaturePartition;
use mindrel_core::engine::{Engine, Session};
use mindrel_core::{Error, Result};

fn io_err(e: std::io::Error) -> Error {
    Error::Io {
        path: "<terminal>".into(),
        source: e,
    }
}

/// Raw value to the model scale, clipped the way the engine clips.
fn normalized(artifacts: &Artifacts, feature: usize, raw: f64) -> (f64, bool) {
    let v = artifacts.normalize(feature, raw);
    let c = v.clamp(-1.0, 1.0);
    (c, c != v)
}

/// Runs one session. `public_raw` is aligned with `partition.public_idx`.
/// Unparseable answers are rejected and the same feature is asked again.
pub fn run<R: BufRead, W: Write>(
    engine: &Engine,
    artifacts: &Artifacts,
    partition: &FeaturePartition,
    public_raw: &[f64],
    input: &mut R,
    out: &mut W,
) -> Result<Session> {
    let names = artifacts.feature_names();
    let mut public = Vec::with_capacity(public_raw.len());
    for (&i, &raw) in partition.public_idx.iter().zip(public_raw) {
        let (v, clipped) = normalized(artifacts, i, raw);
        let note = if clipped { " (clipped)" } else { "" };
        writeln!(out, "public {} = {raw} -> {v:.4}{note}", names[i]).map_err(io_err)?;
        public.push(v);
    }
    let mut session = engine.start(partition, &public)?;
    writeln!(out, "confidence {:.4}", session.confidence).map_err(io_err)?;

    let mut line = String::new();
    while let Some(feature) = session.requested() {
        write!(out, "{}? ", names[feature]).map_err(io_err)?;
        out.flush().map_err(io_err)?;
        line.clear();
        if input.read_line(&mut line).map_err(io_err)? == 0 {
            return Err(Error::InvalidArgument(format!(
                "input ended while waiting for `{}`",
                names[feature]
            )));
        }
        let raw = match line.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ => {
                writeln!(out, "error: `{}` is not a finite number, try again", line.trim()).map_err(io_err)?;
                continue;
            }
        };
        let (v, clipped) = normalized(artifacts, feature, raw);
        let record = engine.step(&mut session, v)?;
        let note = if clipped { " (clipped)" } else { "" };
        writeln!(
            out,
            "  using {} = {v:.4}{note}; confidence {:.4}",
            names[feature], record.confidence_after
        )
        .map_err(io_err)?;
    }

    let t = session.terminal.expect("loop ends only at a decision");
    let revealed: Vec<&str> = session.revealed.iter().map(|r| names[r.feature].as_str()).collect();
    writeln!(
        out,
        "decision: label {} (confidence {:.4}); revealed {} of {} sensitive features: [{}]",
        t.label.unwrap_or_default(),
        t.confidence,
        revealed.len(),
        partition.sensitive_idx.len(),
        revealed.join(", ")
    )
    .map_err(io_err)?;
    Ok(session)
}
