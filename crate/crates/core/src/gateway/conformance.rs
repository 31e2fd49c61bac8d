//! Protocol conformance harness for external predictors.
//!
//! Drives a predictor through the handshake, a run of classify round
//! trips, malformed input, and shutdown, counting every deviation.

use std::collections::HashSet;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::external::ProcessChannel;
use super::protocol::{decode_reply, Reply, Request, CAP_CLASSIFY, PROTOCOL_VERSION};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceReport {
    pub handshake_ok: bool,
    pub capabilities: Vec<String>,
    pub requests: usize,
    pub round_trips: usize,
    pub protocol_errors: Vec<String>,
    pub survived_malformed: bool,
    pub clean_shutdown: bool,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.handshake_ok
            && self.round_trips == self.requests
            && self.protocol_errors.is_empty()
            && self.survived_malformed
            && self.clean_shutdown
    }
}

#[derive(Debug, Clone)]
pub struct ConformanceConfig {
    pub requests: usize,
    pub timeout: Duration,
    /// Probability sums must be within this of 1.
    pub sum_tolerance: f64,
}

impl Default for ConformanceConfig {
    fn default() -> Self {
        ConformanceConfig {
            requests: 1000,
            timeout: super::DEFAULT_TIMEOUT,
            sum_tolerance: 1e-6,
        }
    }
}

fn check_classify(reply: &Reply, tol: f64) -> std::result::Result<(), String> {
    match reply {
        Reply::Classify {
            id,
            p_animal,
            p_no_animal,
        } => {
            if !(0.0..=1.0).contains(p_animal) || !(0.0..=1.0).contains(p_no_animal) {
                return Err(format!("{id}: probabilities outside [0, 1]"));
            }
            if (p_animal + p_no_animal - 1.0).abs() > tol {
                return Err(format!(
                    "{id}: probabilities sum to {}",
                    p_animal + p_no_animal
                ));
            }
            Ok(())
        }
        other => Err(format!("expected classify reply, got {other:?}")),
    }
}

/// Runs the suite against `command`, classifying `image` repeatedly.
/// Only failure to launch is an `Err`; everything else lands in the report.
pub fn run_conformance(
    command: &str,
    image: &Path,
    cfg: &ConformanceConfig,
) -> Result<ConformanceReport> {
    let image = image
        .canonicalize()
        .map_err(|e| Error::io(image, e))?
        .to_string_lossy()
        .into_owned();
    let mut ch = ProcessChannel::spawn(command)?;
    let mut report = ConformanceReport {
        handshake_ok: false,
        capabilities: Vec::new(),
        requests: cfg.requests,
        round_trips: 0,
        protocol_errors: Vec::new(),
        survived_malformed: false,
        clean_shutdown: false,
    };
    let deadline = || Instant::now() + cfg.timeout;

    ch.send(&Request::Hello {
        version: PROTOCOL_VERSION,
    })?;
    match ch.recv_line(deadline()).and_then(|l| decode_reply(&l)) {
        Ok(Reply::Hello {
            version,
            capabilities,
        }) => {
            report.handshake_ok =
                version == PROTOCOL_VERSION && capabilities.iter().any(|c| c == CAP_CLASSIFY);
            report.capabilities = capabilities;
        }
        Ok(other) => report
            .protocol_errors
            .push(format!("handshake: unexpected {other:?}")),
        Err(e) => report.protocol_errors.push(format!("handshake: {e}")),
    }
    if !report.handshake_ok {
        report.clean_shutdown = ch.shutdown();
        return Ok(report);
    }

    let mut outstanding: HashSet<String> = HashSet::new();
    for k in 0..cfg.requests {
        let id = format!("conf-{k}");
        ch.send(&Request::Classify {
            id: id.clone(),
            image: image.clone(),
        })?;
        outstanding.insert(id.clone());
        // one in flight at a time: read until this id is answered
        loop {
            match ch.recv_line(deadline()).and_then(|l| decode_reply(&l)) {
                Ok(reply) => {
                    let rid = reply.id().map(str::to_string);
                    match rid {
                        Some(rid) if outstanding.remove(&rid) => {
                            match check_classify(&reply, cfg.sum_tolerance) {
                                Ok(()) => report.round_trips += 1,
                                Err(e) => report.protocol_errors.push(e),
                            }
                            if rid == id {
                                break;
                            }
                        }
                        other => report
                            .protocol_errors
                            .push(format!("reply with unexpected id {other:?}")),
                    }
                }
                Err(e) => {
                    report.protocol_errors.push(format!("{id}: {e}"));
                    break;
                }
            }
        }
    }

    // malformed input must be answered or ignored, never fatal
    for bad in [
        "this is not json",
        "{\"op\":\"classify\"}",
        "{\"op\":\"teleport\",\"id\":\"bad-1\"}",
    ] {
        ch.send_line(bad)?;
    }
    let probe = "conf-probe".to_string();
    ch.send(&Request::Classify {
        id: probe.clone(),
        image: image.clone(),
    })?;
    loop {
        match ch.recv_line(deadline()).and_then(|l| decode_reply(&l)) {
            Ok(Reply::Error { .. }) => continue,
            Ok(reply) if reply.id() == Some(probe.as_str()) => {
                match check_classify(&reply, cfg.sum_tolerance) {
                    Ok(()) => report.survived_malformed = true,
                    Err(e) => report.protocol_errors.push(e),
                }
                break;
            }
            Ok(other) => report
                .protocol_errors
                .push(format!("after malformed input: {other:?}")),
            Err(e) => {
                report
                    .protocol_errors
                    .push(format!("after malformed input: {e}"));
                break;
            }
        }
    }

    report.clean_shutdown = ch.shutdown();
    Ok(report)
}
