// Pilot: time training steps and check directional desk-scale behaviour.
use contrario_lab::eval::eval_l2i_miou;
use contrario_lab::probe::{collect_responses, constant_condition_probe, ConstCondition, ProbeMode};
use contrario_lab::rng::stream;
use contrario_lab::synth::{gen_shapes_l2i, ShapesSceneSpec};
use contrario_lab::trainer::{
    finetune_optimal_discriminator, tail_mean, train, Objective, TrainConfig,
};
use contrario_core::histogram::classification_rates;
use contrario_core::pairing::PairingKind;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(11);
    let n_train: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let l1: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(10.0);
    let objective = match args.get(5).map(|s| s.as_str()) {
        Some("baseline") => Objective::Baseline,
        _ => Objective::AContrarioBce,
    };

    let t0 = Instant::now();
    let spec = ShapesSceneSpec::desk_default(1234);
    let ds = gen_shapes_l2i(&spec, n_train, 500).unwrap();
    println!("dataset: {:.1}s", t0.elapsed().as_secs_f64());

    let cfg = TrainConfig {
        objective,
        epochs,
        decay_start_epoch: epochs,
        aux_l1_weight: l1,
        eval_every_steps: 25,
        eval_samples: 96,
        grad_log_every: 25,
        checkpoint_every: 1,
        seed,
        ..TrainConfig::new(objective, seed)
    };
    let t0 = Instant::now();
    let run = train(&cfg, &ds).unwrap();
    let steps = run.steps.len();
    let train_time = t0.elapsed().as_secs_f64();
    println!(
        "train {:?}: {} steps in {:.1}s ({:.0} ms/step)",
        objective,
        steps,
        train_time,
        1000.0 * train_time / steps as f64
    );

    // Monitored a-contrario losses (criterion 7 signal)
    let rac = run.kind_curve(PairingKind::RealAContrario);
    let gac = run.kind_curve(PairingKind::GeneratedAContrario);
    println!(
        "tail means: rc={:.3} gc={:.3} rac={:.3} gac={:.3}",
        tail_mean(&run.kind_curve(PairingKind::RealConditional), 0.1),
        tail_mean(&run.kind_curve(PairingKind::GeneratedConditional), 0.1),
        tail_mean(&rac, 0.1),
        tail_mean(&gac, 0.1)
    );
    for m in run.metrics.iter().step_by(4) {
        println!("  step {:>5}: miou {:.3}", m.step, m.value);
    }

    // Finetune + probe (criteria 5, 6 signal)
    let t0 = Instant::now();
    let ft = finetune_optimal_discriminator(&cfg, &ds, &run, run.last_epoch(), 1).unwrap();
    println!(
        "finetune: {:.1}s, d loss {:.3} -> {:.3}",
        t0.elapsed().as_secs_f64(),
        ft.d_loss_before,
        ft.d_loss_after
    );
    let mut disc = ft.discriminator.discriminator().unwrap();
    let mut gen = ft.generator.generator().unwrap();
    let t0 = Instant::now();
    let mut rng = stream(seed, "probe");
    for mode in [ProbeMode::Inference, ProbeMode::TrainingBehavior] {
        let samples = collect_responses(
            &mut disc, &mut gen, &ds.val, &PairingKind::ALL, 500, &mut rng, mode, "pilot",
        )
        .unwrap();
        let rates = classification_rates(&samples, 0.0).unwrap();
        print!("rates {mode:?}: ");
        for (k, r) in &rates {
            print!("{}={:.3} ", k.label(), r);
        }
        let uni = constant_condition_probe(&mut disc, &ds.val, ConstCondition::UniformClass(1), mode).unwrap();
        let empty = constant_condition_probe(&mut disc, &ds.val, ConstCondition::Empty, mode).unwrap();
        println!("uniform1={uni:.3} empty={empty:.3}");
    }
    println!("probe: {:.1}s", t0.elapsed().as_secs_f64());

    // Final full-val miou
    let miou = eval_l2i_miou(&mut gen, &ds.val, &ds.meta.palette, ds.meta.n_classes, 16).unwrap();
    println!("final miou (500 val): {miou:.3}");
}
