// Scratch pilot for sizing the acceptance protocols. Not part of the
// deliverable surface; run with `cargo run -p ladder-core --example pilot`.

use ladder_core::coupled::{CoupledKernelState, EvaluatedTriple, StructuredKernelSpec};
use ladder_core::experiments::{
    cmd_bo_compare, cmd_surrogate_fit, resolve_latent, ExperimentConfig, LatentSource,
};
use ladder_core::kernels::MaternParams;
use ladder_core::latent::LatentModel;
use ladder_core::seed::derive;
use ladder_core::{bo, expr};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use std::time::Instant;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    match which.as_str() {
        "reduction" => reduction(),
        "fit" => fit_pilot(),
        "bo" => bo_pilot(),
        "cond" => probes::conditioning(),
        "diag" => probes::diagnose(),
        "sweep" => probes::sweep(),
        "knn" => probes::knn(),
        "sweep2" => probes::sweep2(),
        "bo_full" => probes::bo_full(),
        _ => eprintln!("usage: pilot reduction|fit|bo|cond"),
    }
}

fn reduction() {
    let t0 = Instant::now();
    let cfg = ExperimentConfig::default();
    let model = resolve_latent(&cfg).unwrap();
    println!("codebook build: {:?}", t0.elapsed());

    let mut worst = 0.0f64;
    for ds in 0..20 {
        let m = [5usize, 20, 50][ds % 3];
        let mut rng = ChaCha8Rng::seed_from_u64(derive(2027, &[0xAA, ds as u64]));
        let (triples, _) = bo::init_dataset(&model, &expr::structure_objective, m, &mut rng);
        let state = CoupledKernelState::fit(
            &triples,
            MaternParams::unit(model.dim()),
            StructuredKernelSpec::default(),
        )
        .unwrap();
        let cands: Vec<(Vec<f64>, ladder_core::Structure)> =
            triples.iter().map(|t| (t.z.clone(), t.x.clone())).collect();
        let gram = state.coupled_gram(&cands).unwrap();
        let l = state.latent_gram();
        let mut num = 0.0;
        for i in 0..m {
            for j in 0..m {
                let e = gram.get(i, j) - l.get(i, j);
                num += e * e;
            }
        }
        let rel = num.sqrt() / l.frobenius_norm();
        worst = worst.max(rel);
        println!("dataset {ds:2} m={m:3} rel={rel:.3e} jitter={:.1e}", state.jitter_used());
    }
    println!("worst rel = {worst:.3e} (needs <= 1e-4), total {:?}", t0.elapsed());
}

fn fit_pilot() {
    let t0 = Instant::now();
    let cfg = ExperimentConfig {
        seed: 2027,
        out_dir: std::path::PathBuf::from("/tmp/pilot_fit"),
        workers: 1,
        latent: LatentSource::Codebook {
            database_size: 2000,
            dim: 16,
            max_depth: 6,
        },
        train_sizes: vec![20, 50],
        train_sets: 6,
        test_sets: 5,
        test_size: 50,
        ..ExperimentConfig::default()
    };
    let out = cmd_surrogate_fit(&cfg).unwrap();
    for (model, size, mean, two_se) in &out.aggregates {
        println!("{model:>18} size {size:>3}: {mean:.4} ± {two_se:.4}");
    }
    println!("total {:?}", t0.elapsed());
}

fn bo_pilot() {
    let t0 = Instant::now();
    let cfg = ExperimentConfig {
        seed: 2027,
        out_dir: std::path::PathBuf::from("/tmp/pilot_bo"),
        workers: 1,
        latent: LatentSource::Codebook {
            database_size: 2000,
            dim: 16,
            max_depth: 6,
        },
        runs: 3,
        iterations: 30,
        ..ExperimentConfig::default()
    };
    let out = cmd_bo_compare(&cfg).unwrap();
    for (label, run, rec) in &out.records {
        println!(
            "{label:>14} run {run}: final {:.4} @30, {:.4} @15",
            rec.incumbent_at(30).unwrap(),
            rec.incumbent_at(15).unwrap()
        );
    }
    println!("failures: {:?}", out.failures);
    println!("total {:?}", t0.elapsed());
}

// appended probes
mod probes {
    use super::*;
    use ladder_core::linalg::{sym_eigen_raw, SymMatrix};
    use ladder_core::kernels::{string_kernel, string_kernel_normalized, expr_fingerprint, fingerprint_dot, StringKernelParams};


    pub fn diagnose() {
        use ladder_core::gp::{fit_hyperparams, GpFitConfig, KernelMode};
        let cfg = ExperimentConfig::default();
        let model = resolve_latent(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (train, _) = bo::init_dataset(&model, &expr::structure_objective, 50, &mut rng);
        let (test, _) = bo::init_dataset(&model, &expr::structure_objective, 20, &mut ChaCha8Rng::seed_from_u64(1009));

        let mut fit_rng = ChaCha8Rng::seed_from_u64(5);
        for mode in [KernelMode::LatentOnly, KernelMode::StructureCoupled] {
            let m = fit_hyperparams(&train, mode, StructuredKernelSpec::default(), &GpFitConfig::default(), &mut fit_rng).unwrap();
            let ls = &m.matern.lengthscales;
            let (lmin, lmax) = (ls.iter().cloned().fold(f64::INFINITY, f64::min), ls.iter().cloned().fold(0.0f64, f64::max));
            println!("mode {mode:?}: out {:.3e} noise {:.3e} mean {:.3} ls [{lmin:.3e}, {lmax:.3e}] mll {:.2}", m.matern.outputscale, m.noise_variance, m.mean_const, m.log_marginal);
            let mut abs = 0.0;
            for t in &test {
                let p = m.posterior_predict(&t.z, &t.x).unwrap();
                abs += (p.mean - t.y).abs();
                if matches!(mode, KernelMode::StructureCoupled) {
                    let state = m.coupled_state().unwrap();
                    let xi = state.feature_map(&t.z, &t.x).unwrap();
                    let c_self: f64 = xi.iter().map(|v| v*v).sum();
                    println!("  y {:+7.2} mu {:+9.2} var {:9.2} c_self {:9.2}", t.y, p.mean, p.variance, c_self);
                }
            }
            println!("  MAE {:.3}", abs / test.len() as f64);
        }
    }


    pub fn sweep() {
        use ladder_core::gp::{fit_hyperparams, GpFitConfig, GpModel, KernelMode};
        use ladder_core::kernels::StringKernelParams;
        let cfg = ExperimentConfig::default();
        let model = resolve_latent(&cfg).unwrap();
        for m in [20usize, 50, 100] {
            let mut rng = ChaCha8Rng::seed_from_u64(3000 + m as u64);
            let (train, _) = bo::init_dataset(&model, &expr::structure_objective, m, &mut rng);
            let mut tests = Vec::new();
            for j in 0..5 {
                let (ts, _) = bo::init_dataset(&model, &expr::structure_objective, 50, &mut ChaCha8Rng::seed_from_u64(9000 + j));
                tests.push(ts);
            }
            let mut fit_rng = ChaCha8Rng::seed_from_u64(5);
            let naive = fit_hyperparams(&train, KernelMode::LatentOnly, StructuredKernelSpec::default(), &GpFitConfig::default(), &mut fit_rng).unwrap();
            let mae = |mdl: &GpModel| -> f64 {
                let mut s = 0.0; let mut n = 0;
                for ts in &tests { s += mdl.surrogate_mae(ts).unwrap() * ts.len() as f64; n += ts.len(); }
                s / n as f64
            };
            println!("== m={m}: naive MAE {:.3} (out {:.2e} ls_med {:.2} noise {:.2e})", mae(&naive), naive.matern.outputscale, {
                let mut ls = naive.matern.lengthscales.clone(); ls.sort_by(f64::total_cmp); ls[ls.len()/2]
            }, naive.noise_variance);
            let sk = |g: f64, mt: f64, n: usize, norm: bool, exact: bool| StructuredKernelSpec::String {
                params: StringKernelParams { gap_decay: g, match_decay: mt, max_subseq_len: n, exact_length: exact },
                normalize: norm,
            };
            let specs: Vec<(&str, StructuredKernelSpec)> = vec![
                ("norm .5/.8 n3", sk(0.5, 0.8, 3, true, false)),
                ("raw  .5/.8 n3", sk(0.5, 0.8, 3, false, false)),
                ("norm .25/.5 n3", sk(0.25, 0.5, 3, true, false)),
                ("norm .75/1. n3", sk(0.75, 1.0, 3, true, false)),
                ("norm .5/.8 n5", sk(0.5, 0.8, 5, true, false)),
                ("norm .5/.8 n2", sk(0.5, 0.8, 2, true, false)),
                ("norm exact n3", sk(0.5, 0.8, 3, true, true)),
                ("fingerprint", StructuredKernelSpec::default_fingerprint()),
            ];
            for (name, spec) in specs {
                let coupled = GpModel::with_params(&train, KernelMode::StructureCoupled, naive.matern.clone(), naive.noise_variance, naive.mean_const, spec).unwrap();
                println!("   {name:>16}: MAE {:.3}", mae(&coupled));
            }
        }
    }


    pub fn knn() {
        use ladder_core::kernels::{string_kernel_normalized, StringKernelParams};
        let cfg = ExperimentConfig::default();
        let model = resolve_latent(&cfg).unwrap();
        // objective distribution over the database
        let ys: Vec<f64> = model.database().iter().map(expr::structure_objective).collect();
        let penalty = expr::objective_penalty();
        let at_ceiling = ys.iter().filter(|y| (**y - penalty).abs() < 1e-9).count();
        let mut sorted = ys.clone(); sorted.sort_by(f64::total_cmp);
        println!("db objectives: min {:.2} p25 {:.2} median {:.2} p75 {:.2} max {:.2}; ceiling {}/{}",
            sorted[0], sorted[sorted.len()/4], sorted[sorted.len()/2], sorted[3*sorted.len()/4], sorted[sorted.len()-1], at_ceiling, ys.len());

        for m in [20usize, 50, 100] {
            let mut rng = ChaCha8Rng::seed_from_u64(3000 + m as u64);
            let (train, _) = bo::init_dataset(&model, &expr::structure_objective, m, &mut rng);
            let (test, _) = bo::init_dataset(&model, &expr::structure_objective, 100, &mut ChaCha8Rng::seed_from_u64(888));
            let p = StringKernelParams::default();
            let train_toks: Vec<Vec<String>> = train.iter().map(|t| t.x.tokens().unwrap().to_vec()).collect();
            let mut mae_nn = 0.0;
            let mut mae_const = 0.0;
            let y_mean = train.iter().map(|t| t.y).sum::<f64>() / m as f64;
            for t in &test {
                let toks = t.x.tokens().unwrap().to_vec();
                let mut best = (f64::NEG_INFINITY, 0usize);
                for (i, tt) in train_toks.iter().enumerate() {
                    let s = string_kernel_normalized(&toks, tt, &p).unwrap();
                    if s > best.0 { best = (s, i); }
                }
                mae_nn += (train[best.1].y - t.y).abs();
                mae_const += (y_mean - t.y).abs();
            }
            println!("m={m}: 1NN-string MAE {:.3}, constant MAE {:.3}", mae_nn / test.len() as f64, mae_const / test.len() as f64);
        }
    }


    pub fn sweep2() {
        use ladder_core::gp::{fit_hyperparams, GpFitConfig, GpModel, KernelMode};
        use ladder_core::kernels::StringKernelParams;
        let cfg = ExperimentConfig::default();
        let model = resolve_latent(&cfg).unwrap();
        let mut tests = Vec::new();
        for j in 0..5 {
            let (ts, _) = bo::init_dataset(&model, &expr::structure_objective, 50, &mut ChaCha8Rng::seed_from_u64(9000 + j));
            tests.push(ts);
        }
        let sk = |g: f64, mt: f64, n: usize, norm: bool| StructuredKernelSpec::String {
            params: StringKernelParams { gap_decay: g, match_decay: mt, max_subseq_len: n, exact_length: false },
            normalize: norm,
        };
        let fp = |w: usize, n: usize| StructuredKernelSpec::Fingerprint { width: w, max_ngram: n };
        let specs: Vec<(String, StructuredKernelSpec)> = vec![
            ("naive".into(), StructuredKernelSpec::default()), // placeholder
            ("norm .5/.8 n3".into(), sk(0.5, 0.8, 3, true)),
            ("norm .75/1 n3".into(), sk(0.75, 1.0, 3, true)),
            ("norm 1/1 n3".into(), sk(1.0, 1.0, 3, true)),
            ("norm 1/1 n5".into(), sk(1.0, 1.0, 5, true)),
            ("norm .75/1 n5".into(), sk(0.75, 1.0, 5, true)),
            ("raw .75/1 n3".into(), sk(0.75, 1.0, 3, false)),
            ("raw 1/1 n3".into(), sk(1.0, 1.0, 3, false)),
            ("fp 2048/3".into(), fp(2048, 3)),
            ("fp 2048/4".into(), fp(2048, 4)),
            ("fp 512/2".into(), fp(512, 2)),
        ];
        for m in [20usize, 50, 100] {
            let mut sums: Vec<f64> = vec![0.0; specs.len()];
            for set in 0..3u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(3000 + m as u64 + 31 * set);
                let (train, _) = bo::init_dataset(&model, &expr::structure_objective, m, &mut rng);
                let mut fit_rng = ChaCha8Rng::seed_from_u64(5 + set);
                let naive = fit_hyperparams(&train, KernelMode::LatentOnly, StructuredKernelSpec::default(), &GpFitConfig::default(), &mut fit_rng).unwrap();
                let mae = |mdl: &GpModel| -> f64 {
                    let mut s = 0.0; let mut n = 0;
                    for ts in &tests { s += mdl.surrogate_mae(ts).unwrap() * ts.len() as f64; n += ts.len(); }
                    s / n as f64
                };
                sums[0] += mae(&naive);
                for (k, (_, spec)) in specs.iter().enumerate().skip(1) {
                    let coupled = GpModel::with_params(&train, KernelMode::StructureCoupled, naive.matern.clone(), naive.noise_variance, naive.mean_const, spec.clone()).unwrap();
                    sums[k] += mae(&coupled);
                }
            }
            print!("m={m:3} |");
            for (k, (name, _)) in specs.iter().enumerate() {
                print!(" {name} {:.2} |", sums[k] / 3.0);
            }
            println!();
        }
    }


    pub fn bo_full() {
        let t0 = Instant::now();
        let cfg = ExperimentConfig {
            seed: 2027,
            out_dir: std::path::PathBuf::from("/tmp/accept8_pilot"),
            workers: 1,
            ..ExperimentConfig::default()
        };
        let out = cmd_bo_compare(&cfg).unwrap();
        println!("failures: {:?}", out.failures);
        for (label, run, rec) in &out.records {
            println!("{label:>14} run {run}: @50 {:.4} final {:.4}", rec.incumbent_at(50).unwrap(), rec.incumbent_at(100).unwrap());
        }
        println!("total {:?}", t0.elapsed());
    }

    pub fn conditioning() {
        let cfg = ExperimentConfig::default();
        let model = resolve_latent(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (triples, _) = bo::init_dataset(&model, &expr::structure_objective, 50, &mut rng);
        let toks: Vec<Vec<String>> = triples
            .iter()
            .map(|t| t.x.tokens().unwrap().to_vec())
            .collect();

        for (name, gram) in [
            ("normalized n=3", SymMatrix::from_fn(50, |i, j| {
                string_kernel_normalized(&toks[i], &toks[j], &StringKernelParams::default()).unwrap()
            })),
            ("raw n=3", SymMatrix::from_fn(50, |i, j| {
                string_kernel(&toks[i], &toks[j], &StringKernelParams::default())
            })),
            ("normalized n=3 lg=.25 lm=.5", {
                let p = StringKernelParams::new(0.25, 0.5, 3).unwrap();
                SymMatrix::from_fn(50, |i, j| string_kernel_normalized(&toks[i], &toks[j], &p).unwrap())
            }),
            ("fingerprint 2048", {
                let fps: Vec<_> = toks.iter().map(|t| expr_fingerprint(t, 2048, 3)).collect();
                SymMatrix::from_fn(50, |i, j| fingerprint_dot(&fps[i], &fps[j]).unwrap())
            }),
        ] {
            let eig = sym_eigen_raw(&gram);
            let lmax = eig.eigvals[0];
            let lmin = *eig.eigvals.last().unwrap();
            let mean_diag = gram.mean_diag();
            println!("{name:>30}: lmax {lmax:.3e} lmin {lmin:.3e} cond {:.3e} mean_diag {mean_diag:.3e} lmin/mean_diag {:.3e}", lmax/lmin.max(1e-300), lmin/mean_diag);
        }
    }
}
