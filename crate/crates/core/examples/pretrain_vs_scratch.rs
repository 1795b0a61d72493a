//! Compares classifier accuracy from scratch and after masked-autoencoder
//! pretraining, over several seeds.
//!
//! `cargo run --release --example pretrain_vs_scratch -- [seeds] [pretrain_epochs] [finetune_epochs]`

use spectral_order::geometry::ShapeKind;
use spectral_order::pipeline::{prepare_all, pretrain_mae, train_classifier, Dataset, TrainConfig};

fn main() -> spectral_order::Result<()> {
    let arg = |i: usize, d: usize| std::env::args().nth(i).map_or(d, |v| v.parse().expect("integer"));
    let (seeds, pre_epochs, ft_epochs) = (arg(1, 5), arg(2, 10), arg(3, 3));
    let kinds = [ShapeKind::Sphere, ShapeKind::Torus, ShapeKind::Box];
    let (mut scratch, mut pretrained) = (Vec::new(), Vec::new());
    for seed in 0..seeds as u64 {
        let config = TrainConfig {
            seed,
            epochs: ft_epochs,
            ..TrainConfig::default()
        };
        let data = Dataset::synthetic(&kinds, 300, 1024, seed, true)?;
        let (train, test) = data.split(0.2, seed)?;
        let train = prepare_all(&train, &config)?;
        let test = prepare_all(&test, &config)?;
        let base = train_classifier(&train, &test, 3, &config, None)?;
        let pre_config = TrainConfig {
            epochs: pre_epochs,
            ..config.clone()
        };
        let pre = pretrain_mae(&train, &pre_config, 3, None)?;
        let tuned = train_classifier(&train, &test, 3, &config, Some(pre.model))?;
        println!(
            "seed {seed}: scratch {:.3} pretrained {:.3} (mae {:.4} -> {:.4})",
            base.test_accuracy,
            tuned.test_accuracy,
            pre.metrics[0].loss,
            pre.metrics.last().map_or(f64::NAN, |m| m.loss)
        );
        scratch.push(base.test_accuracy);
        pretrained.push(tuned.test_accuracy);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("mean scratch {:.3} pretrained {:.3}", mean(&scratch), mean(&pretrained));
    Ok(())
}
