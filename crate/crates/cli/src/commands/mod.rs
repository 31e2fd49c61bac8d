pub mod data;
pub mod drift;
pub mod experiments;
pub mod predict;

use crate::context::Context;
use crate::{CliResult, Command, EXIT_OK};

pub fn dispatch(ctx: &Context, cmd: Command) -> CliResult<i32> {
    match cmd {
        Command::Synth(a) => data::synth(ctx, &a).map(|_| EXIT_OK),
        Command::Ingest { manifest } => data::ingest(ctx, &manifest).map(|_| EXIT_OK),
        Command::Crop(a) => data::crop(ctx, &a).map(|_| EXIT_OK),
        Command::Sample(a) => data::sample(ctx, &a).map(|_| EXIT_OK),
        Command::Mean { input, no_register } => {
            drift::mean(ctx, &input, no_register).map(|_| EXIT_OK)
        }
        Command::DriftCheck {
            input,
            no_register,
            quota,
        } => drift::drift_check(ctx, &input, no_register, quota),
        Command::RtiMatrix => drift::rti_matrix(ctx).map(|_| EXIT_OK),
        Command::Predict(a) => predict::predict(ctx, &a).map(|_| EXIT_OK),
        Command::EvalClassify {
            manifest,
            predictions,
        } => predict::eval_classify(ctx, manifest.as_deref(), predictions.as_deref())
            .map(|_| EXIT_OK),
        Command::EvalDetect {
            manifest,
            detections,
            iou,
        } => predict::eval_detect(ctx, manifest.as_deref(), detections.as_deref(), iou)
            .map(|_| EXIT_OK),
        Command::Twin { input, image } => experiments::twin(ctx, &input, &image).map(|_| EXIT_OK),
        Command::TpExp { manifest, images } => {
            experiments::tp_exp(ctx, manifest, images).map(|_| EXIT_OK)
        }
        Command::TnExp {
            manifest,
            images,
            templates,
        } => experiments::tn_exp(ctx, manifest, images, templates).map(|_| EXIT_OK),
    }
}

/// Per-site seed that does not depend on which other sites are processed.
pub fn site_seed(seed: u64, site: &str) -> u64 {
    // FNV-1a over the id, folded into the run seed
    let h = site.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    seed ^ h
}
