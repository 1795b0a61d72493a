//! Trains the classifier on synthetic sphere/torus/box clouds and prints
//! per-epoch metrics.
//!
//! `cargo run --release --example train_synthetic -- '{"ordering": "random", "epochs": 10}'`
//!
//! The optional argument is a JSON object overriding fields of the default
//! training configuration.

use std::time::Instant;

use spectral_order::geometry::ShapeKind;
use spectral_order::pipeline::{prepare_all, train_classifier, Dataset, TrainConfig};

fn main() -> spectral_order::Result<()> {
    let mut config = serde_json::to_value(TrainConfig::default())?;
    if let Some(arg) = std::env::args().nth(1) {
        let overrides: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&arg)?;
        config.as_object_mut().expect("object").extend(overrides);
    }
    let config: TrainConfig = serde_json::from_value(config)?;
    let kinds = [ShapeKind::Sphere, ShapeKind::Torus, ShapeKind::Box];
    let start = Instant::now();
    let augment = std::env::var("AUGMENT").map_or(true, |v| v != "0");
    let data = Dataset::synthetic(&kinds, 300, 1024, config.seed, augment)?;
    let (train, test) = data.split(0.2, config.seed)?;
    let train = prepare_all(&train, &config)?;
    let test = prepare_all(&test, &config)?;
    println!("prepared in {:.1}s", start.elapsed().as_secs_f64());
    let report = train_classifier(&train, &test, kinds.len(), &config, None)?;
    for m in &report.metrics {
        println!("{} {} {:.4} {:.3}", m.epoch, m.split, m.loss, m.accuracy.unwrap_or(f64::NAN));
    }
    println!(
        "train {:.3} test {:.3} in {:.1}s",
        report.train_accuracy,
        report.test_accuracy,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
