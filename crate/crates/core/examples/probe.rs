// Scratch probe: train the zoo on synthetic data, run default attacks.
use advib_core::attacks::*;
use advib_core::metrics::CostConfig;
use advib_core::models::*;
use advib_core::signal::{synth_dataset, SplitRatios};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let wpc: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let names: Vec<&str> = args.get(2).map(|s| s.split(',').collect::<Vec<_>>().leak() as &[&str]).unwrap_or(&["wdcnn", "lenet1d", "cnn1d", "alexnet1d"]).to_vec();
    let t0 = Instant::now();
    let ds = synth_dataset(wpc, 2048, SplitRatios::default(), 7).unwrap();
    println!("dataset {} windows/class in {:.1?}", wpc, t0.elapsed());

    for name in names {
        let spec = build(name).unwrap();
        let cfg = TrainConfig::default();
        let t = Instant::now();
        let model = train(&spec, &ds, &cfg).unwrap();
        println!(
            "{name}: {} epochs in {:.1?}  train {:.4} val {:.4} test {:.4}",
            model.metrics.epochs_run, t.elapsed(),
            model.metrics.train_acc, model.metrics.val_acc, model.metrics.test_acc
        );

        let t = Instant::now();
        let fgsm = run_attack(&model, &ds.test, &AttackConfig::fgsm_untargeted(0.03), CostConfig::default()).unwrap();
        println!("  fgsm-unt: {:.2}% of {} rows, cost {:.3}  ({:.1?})",
            100.0 * fgsm.successes() as f64 / fgsm.rows as f64, fgsm.rows,
            fgsm.cost.iter().filter(|c| c.is_finite()).sum::<f64>() / fgsm.cost.iter().filter(|c| c.is_finite()).count().max(1) as f64,
            t.elapsed());

        let t = Instant::now();
        let pgd_cfg = AttackConfig::pgd_untargeted(0.005, 20);
        let pgd = run_attack(&model, &ds.test, &pgd_cfg, CostConfig::default()).unwrap();
        println!("  pgd-unt:  {:.2}% of {} rows, cost {:.3}  ({:.1?})",
            100.0 * pgd.successes() as f64 / pgd.rows as f64, pgd.rows,
            pgd.cost.iter().filter(|c| c.is_finite()).sum::<f64>() / pgd.cost.iter().filter(|c| c.is_finite()).count().max(1) as f64,
            t.elapsed());
    }
    println!("total {:.1?}", t0.elapsed());
}
