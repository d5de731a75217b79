//! Runs the synthetic leave-one-subject-out benchmark for a few variants and
//! prints mean accuracy and timing.
//!
//! LAMBDAS=0,1,2 cargo run --release --example synthetic_benchmark -- [seed] [variant ...]

use std::time::Instant;

use eeggraph::dataio::{generate_synthetic, SyntheticSpec};
use eeggraph::train::{loso, TrainConfig, Variant};

fn main() {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut variants: Vec<Variant> = args.filter_map(|a| a.parse().ok()).collect();
    if variants.is_empty() {
        variants = vec![Variant::NoDomainAdaptation, Variant::TaRgnn];
    }
    let spec = SyntheticSpec {
        n_subjects: 10,
        samples_per_subject_per_class: 200,
        class_separation: 2.0,
        subject_shift: 1.0,
        noise_scale: 1.0,
        rng_seed: seed,
    };
    let data = generate_synthetic::<f64>(&spec).expect("valid spec");
    let lambdas: Vec<f64> = std::env::var("LAMBDAS")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.parse().ok()).collect())
        .unwrap_or_else(|| vec![TrainConfig::default().lambda]);
    for (variant, lambda) in variants.iter().flat_map(|v| lambdas.iter().map(move |l| (*v, *l))) {
        let cfg = TrainConfig {
            variant,
            seed,
            lambda,
            ..Default::default()
        };
        let t = Instant::now();
        let summary = loso(&data, &cfg).expect("loso");
        let accs: Vec<String> = summary.folds.iter().map(|f| format!("{:.2}", f.accuracy)).collect();
        println!(
            "{variant:<26} lambda={lambda:<4} mean_acc={:.4} std={:.4} mean_epochs={:.1} [{}] {:.1}s",
            summary.mean_accuracy,
            summary.std_accuracy,
            summary.mean_epochs,
            accs.join(" "),
            t.elapsed().as_secs_f64()
        );
    }
}
