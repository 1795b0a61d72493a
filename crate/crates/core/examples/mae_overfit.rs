//! Overfits masked-autoencoder pretraining on a single cloud and prints the
//! loss trace every 20 steps.
//!
//! `cargo run --release --example mae_overfit -- '{"learning_rate": 0.1}'`

use spectral_order::geometry::{gen_shape, ShapeKind};
use spectral_order::pipeline::{prepare, pretrain_mae, TrainConfig};

fn main() -> spectral_order::Result<()> {
    let mut config = serde_json::to_value(TrainConfig {
        epochs: 200,
        batch_size: 1,
        ..TrainConfig::default()
    })?;
    if let Some(arg) = std::env::args().nth(1) {
        let overrides: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&arg)?;
        config.as_object_mut().expect("object").extend(overrides);
    }
    let config: TrainConfig = serde_json::from_value(config)?;
    let kind: ShapeKind = std::env::var("SHAPE").unwrap_or("sphere".into()).parse()?;
    let cloud = gen_shape(kind, 1024, 1, 0.01)?;
    let sample = prepare(&cloud, 0, &config, 0)?;
    let report = pretrain_mae(&[sample], &config, 2, None)?;
    for (i, l) in report.loss_trace.iter().enumerate().step_by(20) {
        println!("{i} {l:.5}");
    }
    let trace = &report.loss_trace;
    let tail = &trace[trace.len().saturating_sub(10)..];
    let last = tail.iter().sum::<f64>() / tail.len() as f64;
    println!("first {:.5} last10 {last:.5} ratio {:.2}", trace[0], trace[0] / last);
    Ok(())
}
