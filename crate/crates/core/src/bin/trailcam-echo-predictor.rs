//! Scriptable stand-in for an external predictor, used by the gateway tests.
//!
//! Flags:
//!   --fixed PA,PN     answer every classify with these probabilities (default 0.93,0.07)
//!   --brightness      p_animal = clamp(1 - 2|mean - 0.5|, 0, 1) from the image file
//!   --shuffle N       hold replies until N are pending, then emit them in scrambled order
//!   --omit FIELD      leave FIELD out of classify replies
//!   --stall           never answer classify requests
//!   --detect          also advertise and answer `detect`
//!   --version V       version to claim in the hello reply

use std::io::{self, BufRead, Write};
use std::path::Path;

use trailcam_core::evaluation::ScoredBox;
use trailcam_core::gateway::protocol::{decode_request, Reply, Request};
use trailcam_core::imaging::io::load;
use trailcam_core::BoundingBox;

#[derive(Default)]
struct Opts {
    fixed: (f64, f64),
    brightness: bool,
    shuffle: usize,
    omit: Option<String>,
    stall: bool,
    detect: bool,
    version: u64,
}

fn parse_args() -> Result<Opts, String> {
    let mut o = Opts {
        fixed: (0.93, 0.07),
        version: 1,
        ..Opts::default()
    };
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        let mut val = || args.next().ok_or_else(|| format!("{a} needs a value"));
        match a.as_str() {
            "--fixed" => {
                let v = val()?;
                let (pa, pn) = v.split_once(',').ok_or("--fixed takes PA,PN")?;
                o.fixed = (
                    pa.parse().map_err(|_| "bad PA")?,
                    pn.parse().map_err(|_| "bad PN")?,
                );
            }
            "--brightness" => o.brightness = true,
            "--shuffle" => o.shuffle = val()?.parse().map_err(|_| "bad --shuffle")?,
            "--omit" => o.omit = Some(val()?),
            "--stall" => o.stall = true,
            "--detect" => o.detect = true,
            "--version" => o.version = val()?.parse().map_err(|_| "bad --version")?,
            other => return Err(format!("unknown flag {other}")),
        }
    }
    Ok(o)
}

fn brightness(path: &str) -> Result<(f64, f64), String> {
    let img = load(Path::new(path)).map_err(|e| e.to_string())?;
    let mean = img.pixels.iter().map(|&v| v as f64).sum::<f64>() / img.pixels.len() as f64;
    let pa = (1.0 - 2.0 * (mean - 0.5).abs()).clamp(0.0, 1.0);
    Ok((pa, 1.0 - pa))
}

fn classify_line(o: &Opts, id: &str, image: &str) -> String {
    let (pa, pn) = if o.brightness {
        match brightness(image) {
            Ok(p) => p,
            Err(e) => {
                return Reply::Error {
                    id: Some(id.into()),
                    message: e,
                }
                .encode()
            }
        }
    } else {
        o.fixed
    };
    let line = Reply::Classify {
        id: id.into(),
        p_animal: pa,
        p_no_animal: pn,
    }
    .encode();
    match &o.omit {
        Some(field) => {
            let mut v: serde_json::Value = serde_json::from_str(&line).expect("own output parses");
            v.as_object_mut().expect("object").remove(field);
            format!("{v}\n")
        }
        None => line,
    }
}

/// Deterministic scramble: odd positions reversed, then even positions.
fn scramble(mut pending: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(pending.len());
    let mut evens = Vec::new();
    for (i, l) in pending.drain(..).enumerate() {
        if i % 2 == 1 {
            out.push(l);
        } else {
            evens.push(l);
        }
    }
    out.reverse();
    out.extend(evens);
    out
}

fn main() {
    let opts = match parse_args() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("trailcam-echo-predictor: {e}");
            std::process::exit(2);
        }
    };
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut pending: Vec<String> = Vec::new();
    let emit = |out: &mut io::StdoutLock<'_>, s: &str| {
        // a closed pipe just ends the session
        if out
            .write_all(s.as_bytes())
            .and_then(|_| out.flush())
            .is_err()
        {
            std::process::exit(0);
        }
    };
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let req = match decode_request(&line) {
            Ok(r) => r,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_str()).map(str::to_string));
                emit(
                    &mut out,
                    &Reply::Error {
                        id,
                        message: e.to_string(),
                    }
                    .encode(),
                );
                continue;
            }
        };
        match req {
            Request::Hello { .. } => {
                let mut caps = vec!["classify".to_string()];
                if opts.detect {
                    caps.push("detect".into());
                }
                emit(
                    &mut out,
                    &Reply::Hello {
                        version: opts.version,
                        capabilities: caps,
                    }
                    .encode(),
                );
            }
            Request::Classify { id, image } => {
                if opts.stall {
                    continue;
                }
                let reply = classify_line(&opts, &id, &image);
                if opts.shuffle > 1 {
                    pending.push(reply);
                    if pending.len() >= opts.shuffle {
                        for r in scramble(std::mem::take(&mut pending)) {
                            emit(&mut out, &r);
                        }
                    }
                } else {
                    emit(&mut out, &reply);
                }
            }
            Request::Detect { id, .. } => {
                let reply = if opts.detect {
                    Reply::Detect {
                        id,
                        boxes: vec![ScoredBox::new(
                            BoundingBox::new(10.0, 12.0, 30.0, 20.0),
                            0.9,
                        )],
                    }
                } else {
                    Reply::Error {
                        id: Some(id),
                        message: "detect not supported".into(),
                    }
                };
                emit(&mut out, &reply.encode());
            }
            Request::Bye => break,
        }
    }
    for r in scramble(pending) {
        emit(&mut out, &r);
    }
}
