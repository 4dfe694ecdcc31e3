//! Command-line driver: dataset generation, model training, single attacks,
//! and the grid experiments (transfer, defense, gamma ablation, plotting).

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pcadv::attacks::{
    pgd_attack, soft_attack, AttackConfig, AttackMode, AttackOutcome, Constraint, SoftDistance,
};
use pcadv::dataset::{generate_split, load_dataset, save_dataset, Split};
use pcadv::harness::{
    configure_threads, defense_by_name, emit_results, gamma_ablation, load_records,
    run_attack_grid, sensitivity_curves, transfer_matrix, AttackGrid, ExperimentConfig,
    GridContext,
};
use pcadv::nn::{
    forward_classifier, load_ae, load_classifier, save_ae, save_classifier, train_ae,
    train_classifier, Arch, TrainConfig,
};
use pcadv::{Error, Result};

#[derive(Parser)]
#[command(name = "pcadv", about = "Adversarial attacks on 3D point-cloud classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic shape dataset (train and test splits).
    GenData {
        /// Output directory for train.pcds and test.pcds.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        per_class_train: usize,
        #[arg(long, default_value_t = 50)]
        per_class_test: usize,
        #[arg(long, default_value_t = 256)]
        n_points: usize,
        #[arg(long, default_value_t = 0.02)]
        noise: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a classifier and save its checkpoint.
    Train {
        /// Architecture: pointnet_tiny, pointnet_wide, or edgeconv_lite.
        #[arg(long)]
        arch: String,
        /// Training split (PCDS file).
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 60)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f32,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        /// Stop early once training accuracy reaches this value.
        #[arg(long)]
        early_stop_accuracy: Option<f32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Test split to report held-out accuracy on after training.
        #[arg(long)]
        test_data: Option<PathBuf>,
    },
    /// Train the point-cloud auto-encoder and save its checkpoint.
    TrainAe {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 64)]
        latent: usize,
        #[arg(long, default_value_t = 120)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attack one test sample and print the outcome.
    Attack {
        /// Victim classifier checkpoint.
        #[arg(long)]
        victim: PathBuf,
        /// Auto-encoder checkpoint (required when gamma > 0).
        #[arg(long)]
        ae: Option<PathBuf>,
        /// Test split to draw the sample from.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        sample_index: usize,
        /// targeted or untargeted.
        #[arg(long, default_value = "untargeted")]
        mode: String,
        /// Target selection for targeted mode: `all` or `<k>-random`.
        #[arg(long, default_value = "3-random")]
        targets: String,
        /// linf, l2, or soft.
        #[arg(long, default_value = "linf")]
        constraint: String,
        #[arg(long, default_value_t = 0.18)]
        eps: f32,
        /// Initial lambda of the soft constraint.
        #[arg(long, default_value_t = 1.0)]
        lambda: f32,
        /// Soft distance: l2, chamfer, or emd.
        #[arg(long, default_value = "l2")]
        soft_distance: String,
        #[arg(long, default_value_t = 0.25)]
        gamma: f32,
        #[arg(long, default_value_t = 30.0)]
        kappa: f32,
        #[arg(long, default_value_t = 0.01)]
        lr: f32,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[arg(long, default_value_t = 2)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the attack grid from a config file and print transfer matrices.
    EvalTransfer {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the attack grid from a config file and print per-defense tables.
    EvalDefense {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sweep gamma for the first configured attack and tabulate the
    /// victim-success / transferability trade-off.
    AblateGamma {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated gamma values.
        #[arg(long, default_value = "0,0.25,0.5,1")]
        gammas: String,
    },
    /// Re-emit CSV and SVG charts from an existing results file.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    configure_threads();
    if let Err(e) = run(Cli::parse().command) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData {
            out,
            per_class_train,
            per_class_test,
            n_points,
            noise,
            seed,
        } => {
            std::fs::create_dir_all(&out)?;
            let train = generate_split(per_class_train, n_points, noise, seed, Split::Train)?;
            let test = generate_split(per_class_test, n_points, noise, seed, Split::Test)?;
            save_dataset(&train, &out.join("train.pcds"))?;
            save_dataset(&test, &out.join("test.pcds"))?;
            println!(
                "wrote {} train and {} test samples ({} points each) to {}",
                train.len(),
                test.len(),
                n_points,
                out.display()
            );
            Ok(())
        }
        Command::Train {
            arch,
            data,
            epochs,
            lr,
            batch_size,
            early_stop_accuracy,
            seed,
            out,
            test_data,
        } => {
            let arch = Arch::from_name(&arch)?;
            let train = load_dataset(&data, Split::Train)?;
            let cfg = TrainConfig {
                lr,
                batch_size,
                epochs,
                early_stop_accuracy,
                early_stop_loss: None,
            };
            let model = train_classifier(arch, &train, &cfg, seed)?;
            save_classifier(&model, &out)?;
            println!("saved {} checkpoint to {}", arch.name(), out.display());
            if let Some(test_path) = test_data {
                let test = load_dataset(&test_path, Split::Test)?;
                let mut correct = 0;
                for (x, label) in &test.samples {
                    if forward_classifier(&model, x)?.argmax() == *label {
                        correct += 1;
                    }
                }
                println!(
                    "held-out accuracy: {:.1}% ({}/{})",
                    100.0 * correct as f64 / test.len() as f64,
                    correct,
                    test.len()
                );
            }
            Ok(())
        }
        Command::TrainAe {
            data,
            latent,
            epochs,
            lr,
            seed,
            out,
        } => {
            let train = load_dataset(&data, Split::Train)?;
            let cfg = TrainConfig {
                lr,
                epochs,
                ..TrainConfig::ae_default()
            };
            let model = train_ae(&train, latent, &cfg, seed)?;
            save_ae(&model, &out)?;
            println!("saved auto-encoder checkpoint to {}", out.display());
            Ok(())
        }
        Command::Attack {
            victim,
            ae,
            data,
            sample_index,
            mode,
            targets,
            constraint,
            eps,
            lambda,
            soft_distance,
            gamma,
            kappa,
            lr,
            iters,
            restarts,
            seed,
        } => {
            let f = load_classifier(&victim)?;
            let g = ae.as_deref().map(load_ae).transpose()?;
            let test = load_dataset(&data, Split::Test)?;
            let (x, label) = test.samples.get(sample_index).ok_or_else(|| {
                Error::invalid_argument(format!(
                    "sample index {sample_index} out of range (test split has {} samples)",
                    test.len()
                ))
            })?;
            let constraint = match constraint.as_str() {
                "linf" => Constraint::HardLinf(eps),
                "l2" => Constraint::HardL2(eps),
                "soft" => Constraint::Soft {
                    lambda,
                    distance: match soft_distance.as_str() {
                        "l2" => SoftDistance::L2,
                        "chamfer" => SoftDistance::Chamfer,
                        "emd" => SoftDistance::Emd,
                        other => {
                            return Err(Error::invalid_argument(format!(
                                "unknown soft distance `{other}`"
                            )))
                        }
                    },
                },
                other => {
                    return Err(Error::invalid_argument(format!(
                        "unknown constraint `{other}`"
                    )))
                }
            };
            let modes: Vec<AttackMode> = match mode.as_str() {
                "untargeted" => vec![AttackMode::Untargeted],
                "targeted" => parse_targets(&targets, test.n_classes, *label, seed)?
                    .into_iter()
                    .map(AttackMode::Targeted)
                    .collect(),
                other => {
                    return Err(Error::invalid_argument(format!("unknown mode `{other}`")))
                }
            };
            println!(
                "attacking sample {sample_index} (true label {label}) with {} run(s)",
                modes.len()
            );
            for m in modes {
                let cfg = AttackConfig {
                    mode: m,
                    constraint,
                    gamma,
                    kappa,
                    lr,
                    iterations: iters,
                    n_restarts: restarts,
                    seed,
                    use_ae: gamma > 0.0,
                };
                let out = match constraint {
                    Constraint::Soft { .. } => soft_attack(&f, g.as_ref(), x, *label, &cfg)?,
                    _ => pgd_attack(&f, g.as_ref(), x, *label, &cfg)?,
                };
                print_outcome(m, &out);
            }
            Ok(())
        }
        Command::EvalTransfer { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (ctx, grid) = build_grid(&cfg)?;
            let records = run_attack_grid(&ctx, &grid)?;
            emit_results(&records, &cfg.out_dir)?;
            for (name, _) in &grid.attacks {
                let m = transfer_matrix(&records, name)?;
                println!("\ntransfer matrix for `{name}` (rows: victim, cols: transfer):");
                print!("{:>16}", "");
                for t in &m.transfers {
                    print!("{t:>16}");
                }
                println!();
                for (vi, v) in m.victims.iter().enumerate() {
                    print!("{v:>16}");
                    for ti in 0..m.transfers.len() {
                        print!("{:>16.3}", m.cells[vi][ti]);
                    }
                    println!();
                }
                if let Some(s) = m.transferability_score {
                    println!("transferability score (off-diagonal mean): {s:.3}");
                }
            }
            for c in sensitivity_curves(&records) {
                println!(
                    "sensitivity `{}` on `{}`: max accuracy increase along the curve {:.3}",
                    c.attack, c.model, c.max_increase
                );
            }
            println!("\nresults written to {}", cfg.out_dir.display());
            Ok(())
        }
        Command::EvalDefense { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (ctx, grid) = build_grid(&cfg)?;
            let records = run_attack_grid(&ctx, &grid)?;
            emit_results(&records, &cfg.out_dir)?;
            println!("success rate by defense (victim == transfer):");
            println!(
                "{:>12} {:>12} {:>12} {:>8} {:>10}",
                "attack", "victim", "defense", "eps", "success"
            );
            for r in &records {
                if r.victim == r.transfer {
                    println!(
                        "{:>12} {:>12} {:>12} {:>8} {:>10.3}",
                        r.attack, r.victim, r.defense, r.epsilon, r.success_rate
                    );
                }
            }
            println!("\nresults written to {}", cfg.out_dir.display());
            Ok(())
        }
        Command::AblateGamma { config, gammas } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (ctx, grid) = build_grid(&cfg)?;
            let gammas: Vec<f32> = gammas
                .split(',')
                .map(|s| {
                    s.trim().parse::<f32>().map_err(|_| {
                        Error::invalid_argument(format!("bad gamma value `{s}`"))
                    })
                })
                .collect::<Result<_>>()?;
            let (_, base) = grid.attacks.first().ok_or_else(|| {
                Error::Config("config lists no attacks to ablate".into())
            })?;
            let rows = gamma_ablation(
                &ctx,
                base,
                &gammas,
                &grid.epsilons,
                grid.n_samples,
                grid.seed,
                &cfg.out_dir.join("gamma_ablation"),
            )?;
            println!("{:>8} {:>16} {:>16}", "gamma", "victim success", "transfer score");
            for row in &rows {
                println!(
                    "{:>8} {:>16.3} {:>16}",
                    row.gamma,
                    row.victim_success,
                    row.transfer_score
                        .map(|s| format!("{s:.3}"))
                        .unwrap_or_else(|| "-".into())
                );
            }
            Ok(())
        }
        Command::Plot { csv, out } => {
            let records = load_records(&csv)?;
            emit_results(&records, &out)?;
            println!("charts written to {}", out.display());
            Ok(())
        }
    }
}

/// `all` -> every label but the true one; `<k>-random` -> k distinct random
/// non-true labels drawn from the seed.
fn parse_targets(spec: &str, n_classes: usize, true_label: usize, seed: u64) -> Result<Vec<usize>> {
    let candidates: Vec<usize> = (0..n_classes).filter(|&t| t != true_label).collect();
    if spec == "all" {
        return Ok(candidates);
    }
    if let Some(k) = spec.strip_suffix("-random").and_then(|k| k.parse::<usize>().ok()) {
        if k == 0 || k > candidates.len() {
            return Err(Error::invalid_argument(format!(
                "target count must be in 1..={}",
                candidates.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = candidates
            .choose_multiple(&mut rng, k)
            .cloned()
            .collect();
        picked.sort_unstable();
        return Ok(picked);
    }
    Err(Error::invalid_argument(format!(
        "bad --targets value `{spec}`; expected `all` or `<k>-random`"
    )))
}

fn print_outcome(mode: AttackMode, out: &AttackOutcome) {
    let mode_str = match mode {
        AttackMode::Untargeted => "untargeted".to_string(),
        AttackMode::Targeted(t) => format!("targeted({t})"),
    };
    println!(
        "  {mode_str}: success={} predicted={} first_success_iter={} \
linf={:.4} l2={:.4} chamfer_sym={:.6}{}",
        out.success_victim,
        out.predicted_label,
        out.iterations_to_first_success
            .map(|i| i.to_string())
            .unwrap_or_else(|| "-".into()),
        out.norms.linf,
        out.norms.l2,
        out.norms.chamfer_symmetric,
        out.norms
            .emd
            .map(|e| format!(" emd={e:.4}"))
            .unwrap_or_default()
    );
}

/// Loads every checkpoint referenced by the config and assembles the grid.
fn build_grid(cfg: &ExperimentConfig) -> Result<(GridContext, AttackGrid)> {
    let test_set = load_dataset(&cfg.dataset, Split::Test)?;
    let mut models = Vec::new();
    for m in &cfg.models {
        let model = load_classifier(&m.checkpoint).map_err(|e| {
            Error::Config(format!(
                "model `{}`: cannot load checkpoint {}: {e}",
                m.name,
                m.checkpoint.display()
            ))
        })?;
        let arch = Arch::from_name(&m.arch)?;
        if model.arch != arch {
            return Err(Error::Config(format!(
                "model `{}` is declared as {} but its checkpoint holds {}",
                m.name,
                arch.name(),
                model.arch.name()
            )));
        }
        models.push((m.name.clone(), model));
    }
    let attack_ae = cfg.attack_ae.as_deref().map(load_ae).transpose()?;
    let defense_ae = cfg.defense_ae.as_deref().map(load_ae).transpose()?;
    let mut defenses = Vec::new();
    for (i, name) in cfg.defenses.iter().enumerate() {
        defenses.push((name.clone(), defense_by_name(name, cfg.seed ^ i as u64)?));
    }
    let mut attacks = Vec::new();
    for a in &cfg.attacks {
        let constraint = match a.constraint.as_str() {
            "linf" => Constraint::HardLinf(0.0),
            "l2" => Constraint::HardL2(0.0),
            other => {
                return Err(Error::Config(format!(
                    "attack `{}` has unsupported grid constraint `{other}`",
                    a.name
                )))
            }
        };
        attacks.push((
            a.name.clone(),
            AttackConfig {
                mode: AttackMode::Untargeted,
                constraint,
                gamma: a.gamma,
                kappa: a.kappa,
                lr: a.lr,
                iterations: a.iterations,
                n_restarts: a.restarts,
                seed: cfg.seed,
                use_ae: a.gamma > 0.0,
            },
        ));
    }
    let ctx = GridContext {
        models,
        attack_ae,
        defense_ae,
        defenses,
        test_set,
    };
    let grid = AttackGrid {
        attacks,
        epsilons: cfg.epsilons.clone(),
        n_samples: cfg.n_samples,
        seed: cfg.seed,
        out_dir: cfg.out_dir.clone(),
    };
    Ok((ctx, grid))
}
