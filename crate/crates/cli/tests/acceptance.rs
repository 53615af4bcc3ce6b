//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. The full five-seed experiment takes roughly half an
//! hour on one core.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use mentor_core::autodiff::gradcheck::{check_gradients, weighted_sum};
use mentor_core::autodiff::{Tape, Var};
use mentor_core::data::{generate_synthetic_task, SaliencyMap, SampleSet, SyntheticTaskSpec};
use mentor_core::losses::{
    cross_entropy, joint_loss, mentor_pretrain_loss, salience_dissimilarity, Dissimilarity, PixelNormalization,
};
use mentor_core::metrics::{auroc, salience_entropy, ScoredSample};
use mentor_core::nn::{build_autoencoder, ModelSpec};
use mentor_core::tensor::Tensor;
use mentor_core::train::{
    init_step2_model, params_digest, train_step1, train_step2, RunRecord, TrainSpec,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- gradients

type Make = fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>;
type Body = fn(&mut Tape<f64>, &[Var]) -> mentor_core::Result<Var>;

fn uniform(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(-1.0..1.0))
}

fn unit(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(0.0..1.0))
}

fn nonzero(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = r.random_range(0.05..1.0);
        if r.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn distinct(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.02 - 0.5).collect();
    v.shuffle(r);
    Tensor::new(shape.to_vec(), v).unwrap()
}

fn gradient_cases() -> Vec<(&'static str, Make, Body)> {
    vec![
        ("add", |r| vec![uniform(&[3, 4], r), uniform(&[3, 4], r)], |t, v| {
            let y = t.add(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        ("sub", |r| vec![uniform(&[5], r), uniform(&[5], r)], |t, v| {
            let y = t.sub(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        ("mul", |r| vec![uniform(&[2, 3], r), uniform(&[2, 3], r)], |t, v| {
            let y = t.mul(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        ("scale", |r| vec![uniform(&[6], r)], |t, v| {
            let y = t.scale(v[0], -1.7);
            weighted_sum(t, y)
        }),
        ("square", |r| vec![uniform(&[6], r)], |t, v| {
            let y = t.square(v[0]);
            weighted_sum(t, y)
        }),
        ("abs", |r| vec![nonzero(&[6], r)], |t, v| {
            let y = t.abs(v[0]);
            weighted_sum(t, y)
        }),
        ("sum", |r| vec![uniform(&[2, 5], r)], |t, v| {
            let s = t.sum(v[0]);
            Ok(t.square(s))
        }),
        ("mean", |r| vec![uniform(&[2, 5], r)], |t, v| {
            let s = t.mean(v[0]);
            Ok(t.square(s))
        }),
        ("relu", |r| vec![nonzero(&[2, 7], r)], |t, v| {
            let y = t.relu(v[0]);
            weighted_sum(t, y)
        }),
        ("sigmoid", |r| vec![uniform(&[2, 7], r)], |t, v| {
            let y = t.sigmoid(v[0]);
            weighted_sum(t, y)
        }),
        ("softmax", |r| vec![uniform(&[3, 4], r)], |t, v| {
            let y = t.softmax(v[0], 1)?;
            weighted_sum(t, y)
        }),
        ("linear", |r| vec![uniform(&[3, 4], r), uniform(&[4, 2], r), uniform(&[2], r)], |t, v| {
            let y = t.linear(v[0], v[1], v[2])?;
            weighted_sum(t, y)
        }),
        ("conv2d", |r| vec![uniform(&[2, 2, 5, 5], r), uniform(&[3, 2, 3, 3], r), uniform(&[3], r)], |t, v| {
            let y = t.conv2d_bias(v[0], v[1], v[2], 1, 1)?;
            weighted_sum(t, y)
        }),
        ("maxpool2x", |r| vec![distinct(&[2, 2, 4, 4], r)], |t, v| {
            let y = t.maxpool2x(v[0])?;
            weighted_sum(t, y)
        }),
        ("upsample2x", |r| vec![uniform(&[2, 2, 2, 3], r)], |t, v| {
            let y = t.upsample_nearest2x(v[0])?;
            weighted_sum(t, y)
        }),
        ("concat_channels", |r| vec![uniform(&[2, 1, 3, 3], r), uniform(&[2, 2, 3, 3], r)], |t, v| {
            let y = t.concat_channels(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        ("global_avg_pool", |r| vec![uniform(&[2, 3, 2, 2], r)], |t, v| {
            let y = t.global_avg_pool(v[0])?;
            weighted_sum(t, y)
        }),
        ("class_map", |r| vec![uniform(&[3, 4, 2, 2], r), uniform(&[4, 2], r)], |t, v| {
            let y = t.class_map(v[0], v[1], &[1, 0, 1])?;
            weighted_sum(t, y)
        }),
        ("minmax_normalize", |r| vec![distinct(&[2, 1, 3, 3], r)], |t, v| {
            let y = t.minmax_normalize(v[0], 1e-6)?;
            weighted_sum(t, y)
        }),
        ("cross_entropy loss", |r| vec![uniform(&[5, 2], r)], |t, v| cross_entropy(t, v[0], &[0, 1, 1, 0, 1])),
        ("dissimilarity mse", |r| vec![uniform(&[2, 1, 4, 4], r), unit(&[2, 1, 4, 4], r)], |t, v| {
            salience_dissimilarity(t, v[0], v[1], Dissimilarity::Mse)
        }),
        ("dissimilarity l1", |r| vec![nonzero(&[2, 1, 4, 4], r), Tensor::zeros(vec![2, 1, 4, 4])], |t, v| {
            salience_dissimilarity(t, v[0], v[1], Dissimilarity::L1)
        }),
        ("joint loss", |r| vec![uniform(&[2, 2], r), uniform(&[2, 1, 4, 4], r), unit(&[2, 1, 4, 4], r)], |t, v| {
            joint_loss(t, v[0], &[1, 0], v[1], v[2], 0.3, Dissimilarity::Mse)
        }),
        ("pretrain loss", |r| vec![uniform(&[2, 1, 4, 4], r), unit(&[2, 1, 4, 4], r)], |t, v| {
            mentor_pretrain_loss(t, v[0], v[1], PixelNormalization::PerPixel)
        }),
        ("pretrain loss raw", |r| vec![uniform(&[2, 1, 4, 4], r), unit(&[2, 1, 4, 4], r)], |t, v| {
            mentor_pretrain_loss(t, v[0], v[1], PixelNormalization::Raw)
        }),
    ]
}

fn gradient_correctness() -> Check {
    let start = Instant::now();
    let cases = gradient_cases();
    let mut worst: f64 = 0.0;
    for (i, (name, make, body)) in cases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        for instance in 0..10 {
            let report = check_gradients(&make(&mut rng), 1e-3, *body).map_err(err)?;
            ensure(
                report.max_rel_error < 1e-3,
                format!("{name} instance {instance}: relative error {:.2e}", report.max_rel_error),
            )?;
            worst = worst.max(report.max_rel_error);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, format!("took {secs:.1}s"))?;
    Ok(format!("{} ops and losses x 10 instances, worst relative error {worst:.2e}, {secs:.1}s", cases.len()))
}

// ---------------------------------------------------------------- losses

fn loss_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let logits: Tensor = uniform(&[4, 2], &mut rng).cast();
        let pred: Tensor = unit(&[4, 1, 6, 6], &mut rng).cast();
        let human: Tensor = unit(&[4, 1, 6, 6], &mut rng).cast();
        let labels = [0, 1, 1, 0];
        for d in [Dissimilarity::Mse, Dissimilarity::L1] {
            let mut t = Tape::new();
            let (l, p, h) = (t.constant(logits.clone()), t.constant(pred.clone()), t.constant(human.clone()));
            let ce = cross_entropy(&mut t, l, &labels).map_err(err)?;
            let sal = salience_dissimilarity(&mut t, p, h, d).map_err(err)?;
            let j1 = joint_loss(&mut t, l, &labels, p, h, 1.0, d).map_err(err)?;
            let j0 = joint_loss(&mut t, l, &labels, p, h, 0.0, d).map_err(err)?;
            let v = |t: &Tape, x: Var| t.value(x).data()[0];
            ensure(v(&t, j1).to_bits() == v(&t, ce).to_bits(), "alpha=1 differs from cross-entropy")?;
            ensure(v(&t, j0).to_bits() == v(&t, sal).to_bits(), "alpha=0 differs from dissimilarity")?;
        }
        let mut t = Tape::new();
        let (p, h) = (t.constant(pred), t.constant(human));
        let pre = mentor_pretrain_loss(&mut t, p, h, PixelNormalization::PerPixel).map_err(err)?;
        let mse = salience_dissimilarity(&mut t, p, h, Dissimilarity::Mse).map_err(err)?;
        let gap = (t.value(pre).data()[0] as f64 - t.value(mse).data()[0] as f64).abs();
        ensure(gap <= 1e-7, format!("pretrain vs mse gap {gap:e}"))?;
    }
    Ok("joint endpoints bit-exact, pretrain = mse over 20 random batches".into())
}

// ---------------------------------------------------------------- step 1 contracts

fn permuted_labels(data: &SampleSet, seed: u64) -> SampleSet {
    let mut labels: Vec<Option<u8>> = data.samples.iter().map(|s| s.label).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = data.clone();
    for (s, l) in out.samples.iter_mut().zip(labels) {
        s.label = l;
    }
    out
}

fn step1_spec() -> TrainSpec {
    let mut spec = TrainSpec::step1(11);
    spec.max_epochs = 2;
    spec
}

fn label_independence(data: &SampleSet) -> Check {
    let shuffled = permuted_labels(data, 5);
    let changed = data.samples.iter().zip(&shuffled.samples).filter(|(a, b)| a.label != b.label).count();
    ensure(changed > 0, "permutation left every label in place")?;
    let run = |d: &SampleSet| {
        let (enc, dec) = build_autoencoder(&ModelSpec::default(), 11).map_err(err)?;
        train_step1(enc, dec, d, &step1_spec(), None).map_err(err)
    };
    let (a, _) = run(data)?;
    let (b, _) = run(&shuffled)?;
    let (ja, jb) = (serde_json::to_string(&a).map_err(err)?, serde_json::to_string(&b).map_err(err)?);
    ensure(a == b && ja == jb, "Step 1 reports differ after permuting labels")?;
    Ok(format!("{changed} labels moved, reports identical ({} bytes)", ja.len()))
}

fn handoff_and_no_freeze(data: &SampleSet, dir: &Path) -> Check {
    let ckpt = dir.join("handoff.ckpt");
    let (enc, dec) = build_autoencoder(&ModelSpec::default(), 12).map_err(err)?;
    let (s1, ae) = train_step1(enc, dec, data, &step1_spec(), Some(&ckpt)).map_err(err)?;
    let model = init_step2_model(&ckpt, Some(&ModelSpec::default()), 12).map_err(err)?;
    let bits = |m: &mentor_core::nn::Params| -> Vec<(String, Vec<u32>)> {
        m.iter().map(|(n, t)| (n.to_string(), t.data().iter().map(|v| v.to_bits()).collect())).collect()
    };
    ensure(bits(model.encoder.params()) == bits(ae.encoder.params()), "encoder changed across the handoff")?;
    let mut spec = TrainSpec::step2(12);
    spec.max_epochs = 1;
    let (s2, trained) = train_step2(&ckpt, Some(&ModelSpec::default()), data, &spec, None).map_err(err)?;
    ensure(s2.init_encoder_digest == s1.best_encoder_digest, "Step 2 start digest differs")?;
    ensure(s2.grad_reach.encoder > 0.0, "first Step 2 batch left encoder gradients at zero")?;
    ensure(params_digest(trained.encoder.params()) != s1.best_encoder_digest, "encoder frozen in Step 2")?;
    Ok(format!(
        "encoder bit-equal at start (digest {}), first-batch encoder grad norm {:.3e}",
        s1.best_encoder_digest, s2.grad_reach.encoder
    ))
}

// ---------------------------------------------------------------- metrics

fn pair_count(s: &[ScoredSample]) -> f64 {
    let (mut num, mut den) = (0u64, 0u64);
    for p in s.iter().filter(|x| x.label == 1) {
        for n in s.iter().filter(|x| x.label == 0) {
            den += 2;
            num += if p.score > n.score {
                2
            } else if p.score == n.score {
                1
            } else {
                0
            };
        }
    }
    num as f64 / den as f64
}

fn auroc_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut with_ties = 0;
    for i in 0..100 {
        let n = rng.random_range(2..200);
        let levels = rng.random_range(2..20);
        let mut s: Vec<ScoredSample> = (0..n)
            .map(|_| ScoredSample::new(rng.random_range(0..levels) as f64 / levels as f64, rng.random_range(0..2)))
            .collect();
        s[0].label = 0;
        s[1].label = 1;
        let fast = auroc(&s).map_err(err)?;
        let slow = pair_count(&s);
        ensure(fast == slow, format!("set {i}: {fast} vs oracle {slow}"))?;
        let mut scores: Vec<f64> = s.iter().map(|x| x.score).collect();
        scores.sort_by(f64::total_cmp);
        if scores.windows(2).any(|w| w[0] == w[1]) {
            with_ties += 1;
        }
        for f in [|x: f64| x.exp(), |x: f64| 3.0 * x * x * x + 1.0, |x: f64| (x + 0.5).ln()] {
            let moved: Vec<ScoredSample> = s.iter().map(|x| ScoredSample::new(f(x.score), x.label)).collect();
            ensure(auroc(&moved).map_err(err)? == fast, format!("set {i}: monotone transform changed AUROC"))?;
        }
    }
    Ok(format!("100 sets ({with_ties} with ties) exact, 3 monotone transforms invariant"))
}

fn entropy_sanity() -> Check {
    let mut worst: f64 = 0.0;
    for (w, h) in [(1, 2), (8, 8), (32, 32), (7, 13)] {
        let n = w * h;
        let uniform = SaliencyMap::new(w, h, vec![0.5; n]).map_err(err)?;
        let e = salience_entropy(&uniform).map_err(err)?;
        ensure((e - 1.0).abs() < 1e-12, format!("uniform {w}x{h} entropy {e}"))?;
        let mut one = vec![0.0; n];
        one[n / 2] = 1.0;
        let e = salience_entropy(&SaliencyMap::new(w, h, one).map_err(err)?).map_err(err)?;
        ensure(e == 0.0, format!("one-hot {w}x{h} entropy {e}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        // integer grid values stay exact under these scales
        let base: Vec<f32> = (0..64).map(|_| rng.random_range(0..=16) as f32 / 16.0).collect();
        let m = SaliencyMap::new(8, 8, base.clone()).map_err(err)?;
        let Ok(e) = salience_entropy(&m) else { continue };
        for k in [0.5f32, 0.25, 0.0625, 0.75, 0.3125] {
            let scaled = SaliencyMap::new(8, 8, base.iter().map(|v| v * k).collect()).map_err(err)?;
            let gap = (salience_entropy(&scaled).map_err(err)? - e).abs();
            ensure(gap < 1e-10, format!("scale {k} moved entropy by {gap:e}"))?;
            worst = worst.max(gap);
        }
    }
    Ok(format!("uniform 1, one-hot 0, scale gap <= {worst:.1e}"))
}

// ---------------------------------------------------------------- experiment

const FULL_STRATEGIES: &str = r#"experiment.strategies=["xent","mentor","joint_cam","mentor_joint_cam"]"#;

struct Experiment {
    runs: BTreeMap<(String, u64), RunRecord>,
    seeds: Vec<u64>,
    minutes: f64,
}

impl Experiment {
    fn auroc(&self, strategy: &str, seed: u64) -> Result<f64, String> {
        self.runs
            .get(&(strategy.to_string(), seed))
            .and_then(|r| r.report.metrics.test_auroc)
            .ok_or_else(|| format!("no AUROC for {strategy} seed {seed}"))
    }

    fn mean(&self, strategy: &str) -> Result<f64, String> {
        let v: Result<Vec<f64>, String> = self.seeds.iter().map(|&s| self.auroc(strategy, s)).collect();
        let v = v?;
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    }

    fn pretrain(&self, seed: u64) -> Result<&mentor_core::train::RunReport, String> {
        self.runs
            .get(&("mentor".to_string(), seed))
            .and_then(|r| r.pretrain.as_ref())
            .ok_or_else(|| format!("no Step 1 report for seed {seed}"))
    }
}

fn mentor_bin(args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mentor")).args(args).output().map_err(err)?;
    if !out.status.success() {
        return Err(format!("{args:?} exited with {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out)
}

fn run_full_experiment(dir: &Path) -> Result<Experiment, String> {
    let out = dir.join("full");
    let start = Instant::now();
    let res = mentor_bin(&["experiment", "--out", out.to_str().unwrap(), "--overrides", FULL_STRATEGIES]);
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let stdout = res?;
    println!("  {}", String::from_utf8_lossy(&stdout.stdout).lines().last().unwrap_or(""));
    let seeds = vec![1, 2, 3, 4, 5];
    let mut runs = BTreeMap::new();
    for strategy in ["xent", "mentor", "joint_cam", "mentor_joint_cam"] {
        for &seed in &seeds {
            let path = out.join("runs").join(strategy).join(seed.to_string()).join("report.json");
            let rec: RunRecord = serde_json::from_slice(&fs::read(&path).map_err(err)?).map_err(err)?;
            runs.insert((strategy.to_string(), seed), rec);
        }
    }
    Ok(Experiment { runs, seeds, minutes })
}

fn mentor_beats_xent(x: &Experiment) -> Check {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for &s in &x.seeds {
        let (m, c) = (x.auroc("mentor", s)?, x.auroc("xent", s)?);
        if m > c {
            wins += 1;
        }
        pairs.push(format!("{m:.3}/{c:.3}"));
    }
    let gap = x.mean("mentor")? - x.mean("xent")?;
    let detail = format!(
        "mean gap {gap:+.4}, wins {wins}/5 (mentor/xent {}), {:.1} min",
        pairs.join(" "),
        x.minutes
    );
    ensure(gap > 0.0 && wins >= 4 && x.minutes < 45.0, detail.clone())?;
    Ok(detail)
}

fn pretrained_joint_cam(x: &Experiment) -> Check {
    let (m, r) = (x.mean("mentor_joint_cam")?, x.mean("joint_cam")?);
    let detail = format!("joint_cam from Step 1 encoder {m:.4} vs random init {r:.4}");
    ensure(m >= r, detail.clone())?;
    Ok(detail)
}

fn step1_converges(x: &Experiment) -> Check {
    let mut parts = Vec::new();
    for &s in &x.seeds {
        let p = x.pretrain(s)?;
        let hit = p
            .epochs
            .iter()
            .take(10)
            .find(|e| e.val_loss < 0.5 * p.initial_val_loss)
            .map(|e| e.epoch);
        let Some(epoch) = hit else {
            return Err(format!("seed {s}: val loss never fell below half of {:.4} in 10 epochs", p.initial_val_loss));
        };
        parts.push(format!("seed {s} epoch {epoch}"));
    }
    Ok(format!("halved by {}", parts.join(", ")))
}

fn localization(x: &Experiment) -> Check {
    let mut parts = Vec::new();
    let mut ok = true;
    for &s in &x.seeds {
        let m = x
            .pretrain(s)?
            .metrics
            .saliency_mass_in_box
            .ok_or_else(|| format!("seed {s}: no localization metric"))?;
        ok &= m >= 0.6;
        parts.push(format!("{m:.3}"));
    }
    let detail = format!("mass in box per seed {}", parts.join(" "));
    ensure(ok, detail.clone())?;
    Ok(detail)
}

fn reproducible(dir: &Path) -> Check {
    let overrides = [
        "data.synthetic.n_train=60",
        "data.synthetic.n_val=30",
        "data.synthetic.n_test=60",
        "train.step1.max_epochs=2",
        "train.step2.max_epochs=2",
        "train.baseline.max_epochs=2",
        "experiment.seeds=[3,4]",
        FULL_STRATEGIES,
    ];
    let mut csvs = Vec::new();
    for name in ["repro-a", "repro-b"] {
        let out = dir.join(name);
        let mut args = vec!["experiment", "--jobs", "2", "--out", out.to_str().unwrap(), "--overrides"];
        args.extend(overrides);
        mentor_bin(&args)?;
        csvs.push(fs::read(out.join("metrics.csv")).map_err(err)?);
    }
    ensure(csvs[0] == csvs[1], "metrics.csv differs between identical runs")?;
    Ok(format!("two runs, metrics.csv identical ({} bytes)", csvs[0].len()))
}

// ---------------------------------------------------------------- driver

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let data = generate_synthetic_task(&SyntheticTaskSpec::default()).expect("synthetic data");
    let mut results: Vec<(u32, &str, Check)> = Vec::new();
    let mut report = |id: u32, name: &'static str, r: Check| {
        match &r {
            Ok(d) => println!("PASS  {id:>2} {name}: {d}"),
            Err(d) => println!("FAIL  {id:>2} {name}: {d}"),
        }
        results.push((id, name, r));
    };

    report(1, "gradient correctness", gradient_correctness());
    report(2, "loss identities", loss_identities());
    report(3, "pretraining ignores labels", label_independence(&data));
    report(4, "encoder handoff without freezing", handoff_and_no_freeze(&data, dir.path()));
    report(5, "AUROC matches pair counting", auroc_oracle());
    report(10, "salience entropy sanity", entropy_sanity());
    report(11, "experiment reproducibility", reproducible(dir.path()));
    match run_full_experiment(dir.path()) {
        Ok(x) => {
            report(6, "mentor beats cross-entropy", mentor_beats_xent(&x));
            report(7, "pretrained init helps joint_cam", pretrained_joint_cam(&x));
            report(8, "pretraining converges quickly", step1_converges(&x));
            report(9, "predicted saliency localizes defects", localization(&x));
        }
        Err(e) => {
            for (id, name) in [
                (6, "mentor beats cross-entropy"),
                (7, "pretrained init helps joint_cam"),
                (8, "pretraining converges quickly"),
                (9, "predicted saliency localizes defects"),
            ] {
                report(id, name, Err(format!("experiment failed: {e}")));
            }
        }
    }

    results.sort_by_key(|r| r.0);
    let failed: Vec<u32> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!("acceptance: {}/{} passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
