//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Criteria 5-7 share one end-to-end run of
//! `configs/acceptance.toml`; set `DIFFMIA_ACCEPTANCE_WORKSPACE` to keep its
//! artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use diffmia::attack::{train_quantile, RegressorConfig};
use diffmia::datagen::{flatten_batch, generate};
use diffmia::diffusion::{big_phi, q_sample, score_dataset, t_error, Denoiser, NoiseSchedule};
use diffmia::eval::binomial_interval;
use diffmia::ndcore::{gradient_check, SgdConfig, Tensor};
use diffmia_cli::{Pipeline, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Line {
    id: u8,
    pass: bool,
    detail: String,
    seconds: f64,
}

fn timed(id: u8, f: impl FnOnce() -> (bool, String)) -> Line {
    let start = Instant::now();
    let (pass, detail) = f();
    Line {
        id,
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn gradients() -> (bool, String) {
    let cfg = RunConfig::load(&configs().join("acceptance.toml")).unwrap();
    let heads = cfg.heads().unwrap().len();
    let input = cfg.dataset.dims().numel();
    let model = diffmia::diffusion::DiffusionModel::new(&cfg.diffusion.model(), input, 1).unwrap();
    let mut shapes = vec![("denoiser".to_string(), model.eps_net().architecture().clone())];
    for &p in &cfg.attack.trunk_params {
        let w = RegressorConfig::width_for_params(p, input, heads, cfg.attack.blocks);
        shapes.push((format!("regressor w{w}"), RegressorConfig::new(w).architecture(input, heads)));
    }
    let k = cfg.attack.alphas.len();
    let w = RegressorConfig::width_for_params(cfg.attack.trunk_params[0], input, k, cfg.attack.blocks);
    shapes.push((format!("calibration w{w}"), RegressorConfig::new(w).architecture(input, k)));
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, (name, arch)) in shapes.iter().enumerate() {
        let r = gradient_check(arch, 4, i as u64 + 1, 1e-5, 1e-4).unwrap();
        pass &= r.fraction() >= 0.99;
        parts.push(format!("{name} {:.4} of {}", r.fraction(), r.coordinates));
    }
    (pass, parts.join(", "))
}

struct Constant {
    sched: NoiseSchedule,
    value: f64,
}

impl Denoiser for Constant {
    fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    fn predict_noise(&self, z: &Tensor, _t: usize) -> diffmia::Result<Tensor> {
        Ok(Tensor::full(z.shape(), self.value))
    }
}

fn identities() -> (bool, String) {
    let sched = NoiseSchedule::linear(50, 0.002, 0.4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    let mut worst_a = 0.0f64;
    for _ in 0..100 {
        let m = Constant {
            sched: sched.clone(),
            value: rng.random_range(-2.0..2.0),
        };
        let z: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        worst_a = worst_a.max(t_error(&m, &z, rng.random_range(1..50)).unwrap().abs());
    }

    let zero = Constant {
        sched: sched.clone(),
        value: 0.0,
    };
    let z0 = Tensor::new(vec![1, 64], (0..64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut worst_b = 0.0f64;
    for t in 1..=50 {
        let s = sched.alphabar(t).unwrap().sqrt();
        let zt = big_phi(&zero, &z0, t).unwrap();
        for (a, b) in zt.data().iter().zip(z0.data()) {
            worst_b = worst_b.max((a - s * b).abs());
        }
    }

    let n = 10_000;
    let x0 = 0.7;
    let mut worst_c = 0.0f64;
    for t in [1usize, 10, 25, 50] {
        let mut iter = Vec::with_capacity(n);
        let mut closed = Vec::with_capacity(n);
        for _ in 0..n {
            let mut z = x0;
            for s in 0..t {
                let b = sched.betas()[s];
                let e: f64 = rng.sample(StandardNormal);
                z = (1.0 - b).sqrt() * z + b.sqrt() * e;
            }
            iter.push(z);
            let noise = Tensor::new(vec![1, 1], vec![rng.sample(StandardNormal)]).unwrap();
            let x = Tensor::new(vec![1, 1], vec![x0]).unwrap();
            closed.push(q_sample(&x, t, &noise, &sched).unwrap().data()[0]);
        }
        let ab = sched.alphabar(t).unwrap();
        let (mean, var) = (ab.sqrt() * x0, 1.0 - ab);
        for xs in [&iter, &closed] {
            let m = xs.iter().sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            worst_c = worst_c
                .max((m - mean).abs() / (var / n as f64).sqrt())
                .max((v - var).abs() / (var * (2.0 / (n - 1) as f64).sqrt()));
        }
    }
    let pass = worst_a < 1e-10 && worst_b < 1e-10 && worst_c < 3.0;
    (
        pass,
        format!("max t-error {worst_a:.1e}, max telescoping gap {worst_b:.1e}, max moment gap {worst_c:.2} SE"),
    )
}

fn synthetic(n: usize, seed: u64) -> (Tensor, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n * 4);
    let mut s = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loc = 0.8 * z[0] - 0.5 * z[1];
        let scale = 0.3 + 0.2 * (z[2] + 1.0);
        let e: f64 = rng.sample(StandardNormal);
        s.push((loc + scale * e).exp());
        x.extend(z);
    }
    (Tensor::new(vec![n, 4], x).unwrap(), s)
}

fn quantile_recovery() -> (bool, String) {
    let alphas = [0.1, 0.5, 0.9];
    let (x, s) = synthetic(10_000, 1);
    let mut sgd = SgdConfig::new(0.005, 0.9, 64, 4000, 2);
    sgd.final_lr_fraction = 0.0;
    let reg = train_quantile(&x, &s, &alphas, &RegressorConfig::new(32), &sgd).unwrap();
    let (fx, fs) = synthetic(10_000, 99);
    let pred = reg.predict(&fx).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, &a) in alphas.iter().enumerate() {
        let hits = fs.iter().enumerate().filter(|(i, v)| v.ln() <= pred.row(*i)[k]).count();
        let cov = hits as f64 / fs.len() as f64;
        pass &= (cov - a).abs() <= 0.02;
        parts.push(format!("α={a}: {cov:.4}"));
    }
    (pass, parts.join(", "))
}

/// Single attacker on fresh nonmembers drawn with a seed disjoint from the
/// training data: a large public set so the threshold estimate itself is
/// precise, and 1,200 holdout examples.
fn calibration(p: &Pipeline) -> (bool, String) {
    let cfg = p.config();
    let (model, _) = p.load_model().unwrap();
    let (n_public, n_holdout) = (4000, 1200);
    let data = generate(cfg.dataset.kind, n_public + n_holdout, cfg.dataset.dims(), 1001).unwrap();
    let (public, holdout) = data.split_at(n_public);
    let score = |e: &[diffmia::datagen::Example]| score_dataset(&model, e, cfg.score_t(), 64, None).unwrap().scores();
    let feats = |e: &[diffmia::datagen::Example]| flatten_batch(&e.iter().collect::<Vec<_>>()).unwrap();
    let alphas = [0.01, 0.05, 0.1];
    let input = cfg.dataset.dims().numel();
    let width = RegressorConfig::width_for_params(cfg.attack.trunk_params[0], input, alphas.len(), cfg.attack.blocks);
    let mut net = RegressorConfig::new(width);
    net.blocks = cfg.attack.blocks;
    net.transform = cfg.attack.transform;
    let reg = train_quantile(&feats(public), &score(public), &alphas, &net, &cfg.attack.train).unwrap();
    let (hx, hs) = (feats(holdout), score(holdout));
    let pred = reg.predict(&hx).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, &a) in alphas.iter().enumerate() {
        let fp = hs.iter().enumerate().filter(|(i, v)| v.ln() <= pred.row(*i)[k]).count();
        let fpr = fp as f64 / n_holdout as f64;
        let (lo, hi) = binomial_interval(n_holdout, a, 0.95).unwrap();
        pass &= fpr >= lo && fpr <= hi;
        parts.push(format!("α={a}: {fpr:.4} in [{lo:.4}, {hi:.4}]"));
    }
    (pass, parts.join(", "))
}

fn read_csvs(root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>, base: &Path) {
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            read_csvs(&path, out, base);
        } else if path.extension().is_some_and(|e| e == "csv") {
            out.insert(path.strip_prefix(base).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
        }
    }
}

fn determinism() -> (bool, String) {
    let cfg = RunConfig::load(&configs().join("smoke.toml")).unwrap();
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::open(cfg.clone(), Some(dir.path()), false).unwrap();
        p.gen_data().unwrap();
        p.train_dm().unwrap();
        p.score(&diffmia_cli::Subset::ALL).unwrap();
        p.attack().unwrap();
        p.evaluate().unwrap();
        let mut files = BTreeMap::new();
        read_csvs(dir.path(), &mut files, dir.path());
        runs.push(files);
    }
    let differing: Vec<String> = runs[0]
        .iter()
        .filter(|(k, v)| runs[1].get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let pass = differing.is_empty() && runs[0].len() == runs[1].len() && !runs[0].is_empty();
    (
        pass,
        format!("{} CSV files compared, {} differ {:?}", runs[0].len(), differing.len(), differing),
    )
}

fn main() {
    let mut lines = Vec::new();
    lines.push(timed(1, gradients));
    lines.push(timed(2, identities));
    lines.push(timed(3, quantile_recovery));

    let keep = std::env::var_os("DIFFMIA_ACCEPTANCE_WORKSPACE").map(PathBuf::from);
    let tmp = tempfile::tempdir().unwrap();
    let root = keep.unwrap_or_else(|| tmp.path().to_path_buf());
    let cfg = RunConfig::load(&configs().join("acceptance.toml")).unwrap();
    let p = Pipeline::open(cfg, Some(&root), false).unwrap();

    let start = Instant::now();
    let report = p.evaluate().unwrap();
    let eval_seconds = start.elapsed().as_secs_f64();
    let (_, prov) = p.load_model().unwrap();
    let dm_seconds = prov.seconds.unwrap_or(f64::NAN);

    lines.push(timed(4, || calibration(&p)));

    lines.push(timed(5, || {
        let mw = &report.rank_test;
        let bag = report.tpr("bag", 0.1).unwrap();
        let marginal = report.tpr("marginal", 0.1).unwrap();
        let pass = mw.p_value < 0.01 && mw.p_less > 0.5 && bag.mean_tpr > marginal.mean_tpr && dm_seconds < 1800.0;
        (
            pass,
            format!(
                "rank test p = {:.2e} (P[member lower] = {:.3}); TPR@10%FPR bag {:.4} ± {:.4} over {} seeds vs marginal {:.4}; \
                 diffusion training {dm_seconds:.1}s, trunk {} params",
                mw.p_value, mw.p_less, bag.mean_tpr, bag.std_tpr, bag.runs, marginal.mean_tpr, report.trunk_params
            ),
        )
    }));

    let ablation = p.ablate().unwrap();
    let width = report.trunk_width;
    lines.push(timed(6, || {
        let t7 = ablation.sweep_row(7, width, 0.001).unwrap().mean_tpr;
        let t1 = ablation.sweep_row(1, width, 0.001).unwrap().mean_tpr;
        let v7 = ablation.variance("all", 7).unwrap();
        let v1 = ablation.variance("all", 1).unwrap();
        (
            t7 >= t1 && v7 <= v1,
            format!(
                "TPR@0.1%FPR m=7 {t7:.4} vs m=1 {t1:.4}; mean verdict variance at α={} m=7 {v7:.4} vs m=1 {v1:.4}",
                ablation.variance_alpha
            ),
        )
    }));

    let bench = p.bench_prep().unwrap();
    lines.push(timed(7, || {
        (
            bench.learning_fraction < 0.1,
            format!(
                "bag training {:.2}s vs diffusion training {:.1}s ({:.1}%); scoring {:.2}s",
                bench.learning_seconds,
                bench.diffusion_training_seconds,
                100.0 * bench.learning_fraction,
                bench.scoring_seconds
            ),
        )
    }));
    drop(p);

    lines.push(timed(8, determinism));

    println!();
    for l in &lines {
        println!(
            "criterion {}: {} ({:.1}s) {}",
            l.id,
            if l.pass { "PASS" } else { "FAIL" },
            l.seconds,
            l.detail
        );
    }
    println!("end-to-end evaluate stage: {eval_seconds:.1}s");
    let failed: Vec<u8> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", lines.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
