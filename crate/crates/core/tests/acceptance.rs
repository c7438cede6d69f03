//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The MNIST criteria read the IDX files from `FOLDSCOPE_DATA_DIR`, falling
//! back to `data/mnist` at the workspace root.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use foldscope::analysis::{
    clustering_sensitivity_sweep, depth_correlation, folding_ratio_report, heatmap_matrix,
    pair_folding_sweep, ClusterMode, Sampling, SensitivityConfig,
};
use foldscope::cantornet::{fig3_fixture, fig4_fixture};
use foldscope::convexity::{run_equivalence_trials, TrialConfig};
use foldscope::dataset::{kmeans_cluster, load_mnist_split, LabeledDataset, Split, DATA_DIR_ENV};
use foldscope::folding::{
    chi_upper_bound, global_folding_estimate, sample_segment, FoldingProfile, PathStat,
    RandomSegments,
};
use foldscope::trainer::{architecture_label, evaluate, train, TrainConfig, TrainingHistory};
use foldscope::{folding_profile, hamming, ActivationPattern, MlpNetwork};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MNIST_SEED: u64 = 4;
const MNIST_EPOCHS: usize = 30;
const SHALLOW_GATE: f64 = 0.95;
const DEEP_GATE: f64 = 0.90;
const PER_CLASS: usize = 100;
const RATIO_PER_CLASS: usize = 10;
const RATIO_CLASSES: [u8; 4] = [0, 3, 6, 9];
const RATIO_GAP: f64 = 0.3;
const SENSITIVITY_TOLERANCE: f64 = 0.15;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

/// Runs a criterion, checks its time limit and prints the result line.
fn criterion(id: u32, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let passed = out.passed && in_time;
    let timing = if in_time {
        format!("{:.2}s", elapsed.as_secs_f64())
    } else {
        format!("{:.2}s, over the {}s limit", elapsed.as_secs_f64(), limit.as_secs())
    };
    println!(
        "[{}] {id:>2} {name}: {} ({timing})",
        if passed { "PASS" } else { "FAIL" },
        out.detail
    );
    passed
}

/// Range measures straight from the definitions, on a collapsed walk.
fn oracle(patterns: &[ActivationPattern]) -> (usize, usize, usize, f64) {
    let mut walk: Vec<&ActivationPattern> = Vec::new();
    for p in patterns {
        if walk.last() != Some(&p) {
            walk.push(p);
        }
    }
    let r1 = walk.iter().map(|p| hamming(walk[0], p).unwrap()).max().unwrap();
    let r2: usize = walk.windows(2).map(|w| hamming(w[0], w[1]).unwrap()).sum();
    let chi = if r2 == 0 { 0.0 } else { 1.0 - r1 as f64 / r2 as f64 };
    (walk.len(), r1, r2, chi)
}

fn random_net(rng: &mut ChaCha8Rng, input: usize, hidden: &[usize]) -> MlpNetwork {
    MlpNetwork::he_uniform(input, hidden, rng.random_range(1..4), rng).unwrap()
}

fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()
}

fn fig3() -> Outcome {
    match fig3_fixture() {
        Ok(r) => outcome(
            r.passed(),
            format!(
                "regions={} chi(first layer)={} chi(all layers)={}",
                r.regions.len(),
                r.first_layer_chi,
                r.all_layers_chi
            ),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn fig4() -> Outcome {
    match fig4_fixture() {
        Ok(r) => outcome(
            r.r1() == 5 && (0.65..=0.75).contains(&r.chi_final()),
            format!("r1={} r2={} chi_final={}", r.r1(), r.profile.r2(), r.chi_final()),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn bounds_suite() -> Outcome {
    const CASES: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut violations, mut mismatches, mut non_degenerate) = (0, 0, 0);
    for _ in 0..CASES {
        let input = rng.random_range(1..6);
        let depth = rng.random_range(1..6);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..11)).collect();
        let net = random_net(&mut rng, input, &hidden);
        let path = sample_segment(&random_point(&mut rng, input), &random_point(&mut rng, input), rng.random_range(2..65))
            .unwrap();
        let profile = folding_profile(&net, &path).unwrap();
        let pats: Vec<ActivationPattern> = path.points().map(|x| net.forward_with_pattern(&x).unwrap().1).collect();
        let (m, r1, r2, chi) = oracle(&pats);
        if (profile.r1(), profile.r2(), profile.chi_final) != (r1, r2, chi) {
            mismatches += 1;
        }
        if r2 > 0 {
            non_degenerate += 1;
            if !(0.0..=chi_upper_bound(m)).contains(&profile.chi_final) {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0 && mismatches == 0,
        format!("{CASES} cases, {non_degenerate} non-degenerate, {violations} bound violations, {mismatches} oracle mismatches"),
    )
}

fn depth_one() -> Outcome {
    const CASES: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut folded = 0;
    for _ in 0..CASES {
        let input = rng.random_range(1..8);
        let width = rng.random_range(1..33);
        let net = random_net(&mut rng, input, &[width]);
        let path = sample_segment(&random_point(&mut rng, input), &random_point(&mut rng, input), 100).unwrap();
        let p = folding_profile(&net, &path).unwrap();
        if p.chi_final != 0.0 || p.chi_prefix_max() != 0.0 {
            folded += 1;
        }
    }
    outcome(folded == 0, format!("{CASES} one-hidden-layer nets, {folded} with non-zero folding"))
}

fn lemma_trials() -> Outcome {
    match run_equivalence_trials(&TrialConfig {
        trials: 1000,
        max_hyperplanes: 5,
        ..TrialConfig::default()
    }) {
        Ok(r) => outcome(
            r.counterexamples.is_empty() && r.trials >= 1000,
            format!(
                "{} trials, {} disagreements, {} convex subsets",
                r.trials,
                r.counterexamples.len(),
                r.convex_subsets
            ),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn oscillation() -> Outcome {
    let a = ActivationPattern::parse("0000").unwrap();
    let b = ActivationPattern::parse("1011").unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    let mut prev = 0.0;
    for n in [3usize, 5, 11, 101] {
        let walk: Vec<ActivationPattern> = (0..n).map(|i| if i % 2 == 0 { a.clone() } else { b.clone() }).collect();
        let chi = FoldingProfile::from_patterns(&walk, None).unwrap().chi_final;
        let expected = 1.0 - 1.0 / (n as f64 - 1.0);
        ok &= chi == expected && chi == oracle(&walk).3 && chi > prev;
        prev = chi;
        parts.push(format!("n={n}: {chi:.4}"));
    }
    outcome(ok, parts.join(", "))
}

fn collapse_and_determinism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut collapse_failures = 0;
    for _ in 0..1000 {
        let bits = rng.random_range(1..16);
        let len = rng.random_range(1..40);
        let walk: Vec<ActivationPattern> = (0..len)
            .map(|_| ActivationPattern::from_bits((0..bits).map(|_| rng.random_bool(0.5))))
            .collect();
        let stretched: Vec<ActivationPattern> = walk
            .iter()
            .flat_map(|p| std::iter::repeat_n(p.clone(), rng.random_range(1..5)))
            .collect();
        let x = FoldingProfile::from_patterns(&walk, None).unwrap();
        let y = FoldingProfile::from_patterns(&stretched, None).unwrap();
        if (x.r1(), x.r2(), x.chi_final) != (y.r1(), y.r2(), y.chi_final) {
            collapse_failures += 1;
        }
    }

    // Every parallel pipeline under several pool sizes.
    let mut drng = ChaCha8Rng::seed_from_u64(11);
    let net = MlpNetwork::he_uniform(8, &[12, 12, 12], 4, &mut drng).unwrap();
    let images = Array2::from_shape_fn((90, 8), |_| drng.random::<f64>());
    let labels: Vec<u8> = (0..90).map(|i| (i % 4) as u8).collect();
    let data = LabeledDataset::new(images, labels, Split::Test).unwrap();
    let segments = RandomSegments {
        lower: vec![0.0; 8],
        upper: vec![1.0; 8],
        steps: 40,
        seed: 1,
    };
    let toy_config = TrainConfig {
        epochs: 3,
        batch_size: 16,
        classes: 4,
        ..TrainConfig::new(vec![6, 6], 2)
    };
    let fingerprint = || {
        let sweep = pair_folding_sweep(&net, data.images(), data.images(), 40, PathStat::PrefixMax).unwrap();
        let heat = heatmap_matrix(&net, &data, &[0, 1, 2, 3], &Sampling::Cluster { k: 4, max_iters: 30 }, 40, PathStat::PrefixMax, 5)
            .unwrap();
        let global = global_folding_estimate(&net, &segments, 300).unwrap();
        let clusters = kmeans_cluster(data.images(), 7, 3, 50).unwrap();
        let trials = run_equivalence_trials(&TrialConfig {
            trials: 50,
            ..TrialConfig::default()
        })
        .unwrap();
        let trained = train(&toy_config, &data, &data).unwrap();
        format!(
            "{sweep:?}|{heat:?}|{global}|{clusters:?}|{}|{}|{:?}",
            trials.agreements,
            trained.0.to_json(),
            trained.1
        )
    };
    let runs: Vec<String> = [1, 2, 4]
        .iter()
        .map(|&t| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .unwrap()
                .install(fingerprint)
        })
        .collect();
    let identical = runs.windows(2).all(|w| w[0] == w[1]);
    outcome(
        collapse_failures == 0 && identical,
        format!(
            "1000 stretched walks, {collapse_failures} changed; pipelines identical across 1/2/4 threads: {identical}"
        ),
    )
}

fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

struct Trained {
    hidden: Vec<usize>,
    net: MlpNetwork,
    history: TrainingHistory,
}

impl Trained {
    fn label(&self) -> String {
        architecture_label(&self.hidden)
    }

    fn accuracy(&self) -> f64 {
        self.history.final_accuracy()
    }
}

struct Mnist {
    train: LabeledDataset,
    test: LabeledDataset,
}

fn load_mnist() -> Result<Mnist, String> {
    let dir = data_dir();
    let load = |split| load_mnist_split(&dir, split).map_err(|e| format!("MNIST unavailable in {}: {e}", dir.display()));
    Ok(Mnist {
        train: load(Split::Train)?,
        test: load(Split::Test)?,
    })
}

fn train_arch(mnist: &Mnist, hidden: &[usize]) -> Result<Trained, String> {
    let config = TrainConfig {
        epochs: MNIST_EPOCHS,
        ..TrainConfig::new(hidden.to_vec(), MNIST_SEED)
    };
    let (net, history) = train(&config, &mnist.train, &mnist.test).map_err(|e| e.to_string())?;
    debug_assert_eq!(evaluate(&net, &mnist.test).unwrap(), history.final_accuracy());
    Ok(Trained {
        hidden: hidden.to_vec(),
        net,
        history,
    })
}

fn small_suite(mnist: &Mnist, suite: &mut Vec<Trained>) -> Outcome {
    for (l, w) in foldscope::trainer::SMALL_SUITE {
        match train_arch(mnist, &vec![w; l]) {
            Ok(t) => suite.push(t),
            Err(e) => return outcome(false, e),
        }
    }
    let acc = |label: &str| suite.iter().find(|t| t.label() == label).map_or(0.0, Trained::accuracy);
    let (shallow_acc, deep_acc) = (acc("2x30"), acc("6x10"));
    let gates = shallow_acc >= SHALLOW_GATE && deep_acc >= DEEP_GATE;

    let mut points = Vec::new();
    let mut parts = vec![format!("acc 2x30={shallow_acc:.4} 6x10={deep_acc:.4}")];
    let (mut shallow_agg, mut deep_agg) = (None, None);
    for t in suite.iter() {
        if t.history.is_low_accuracy() {
            parts.push(format!("{} low-accuracy ({:.3}), excluded", t.label(), t.accuracy()));
            continue;
        }
        let heat = match heatmap_matrix(
            &t.net,
            &mnist.test,
            &(0..10).collect::<Vec<u8>>(),
            &Sampling::Limit(Some(PER_CLASS)),
            t.net.hidden_neuron_count(),
            PathStat::PrefixMax,
            0,
        ) {
            Ok(h) => h,
            Err(e) => return outcome(false, e.to_string()),
        };
        let agg = heat.aggregate();
        match t.label().as_str() {
            "2x30" => shallow_agg = agg,
            "6x10" => deep_agg = agg,
            _ => {}
        }
        if let Some(a) = agg {
            points.push((t.hidden.len() as f64, a));
        }
        parts.push(format!("{}: {}", t.label(), agg.map_or("n/a".into(), |a| format!("{a:.4}"))));
    }
    let deeper_folds_more = matches!((shallow_agg, deep_agg), (Some(s), Some(d)) if d > s);
    let correlation = if points.len() >= 4 { depth_correlation(&points).ok() } else { None };
    parts.push(format!(
        "pearson over {} depths = {}",
        points.len(),
        correlation.map_or("n/a".into(), |c| format!("{c:.3}"))
    ));
    outcome(
        gates && deeper_folds_more && correlation.is_some_and(|c| c > 0.0),
        parts.join("; "),
    )
}

fn ratio_pairs() -> Vec<(u8, u8)> {
    let mut pairs = Vec::new();
    for (i, &a) in RATIO_CLASSES.iter().enumerate() {
        for &b in &RATIO_CLASSES[i + 1..] {
            pairs.push((a, b));
        }
    }
    pairs
}

fn ratio_trend(mnist: &Mnist, shallow: Option<&Trained>) -> Outcome {
    let Some(shallow) = shallow else {
        return outcome(false, "2x30 net not available");
    };
    let wide = match train_arch(mnist, &[300, 300]) {
        Ok(t) => t,
        Err(e) => return outcome(false, e),
    };
    let ratio = |t: &Trained| {
        folding_ratio_report(
            &t.net,
            &mnist.test,
            &ratio_pairs(),
            &Sampling::Limit(Some(RATIO_PER_CLASS)),
            t.net.hidden_neuron_count(),
            PathStat::PrefixMax,
            0,
        )
    };
    match (ratio(&wide), ratio(shallow)) {
        (Ok(w), Ok(s)) => outcome(
            w.mean_ratio - s.mean_ratio >= RATIO_GAP,
            format!(
                "2x300 (acc {:.4}) ratio {:.3}±{:.3}, 2x30 ratio {:.3}±{:.3}, gap {:.3}",
                wide.accuracy(),
                w.mean_ratio,
                w.std_ratio,
                s.mean_ratio,
                s.std_ratio,
                w.mean_ratio - s.mean_ratio
            ),
        ),
        (Err(e), _) | (_, Err(e)) => outcome(false, e.to_string()),
    }
}

fn sensitivity(mnist: &Mnist, net: Option<&Trained>) -> Outcome {
    let Some(t) = net else {
        return outcome(false, "6x10 net not available");
    };
    let config = SensitivityConfig {
        n_steps: t.net.hidden_neuron_count(),
        stat: PathStat::PrefixMax,
        seed: 0,
        per_class: Some(PER_CLASS),
        max_iters: 100,
    };
    match clustering_sensitivity_sweep(&t.net, &mnist.test, 0, 3, &[1, 2, 5], ClusterMode::BothClasses, &config) {
        Ok(r) => {
            let k5 = r.row(5).expect("k=5 requested");
            let k1 = r.row(1).expect("k=1 requested");
            outcome(
                k5.mean_chi > 0.0 && (k5.mean_chi - r.reference_chi).abs() <= SENSITIVITY_TOLERANCE,
                format!(
                    "6x10 classes 0/3: k=1 {:.4}, k=5 {:.4}, reference {:.4}",
                    k1.mean_chi, k5.mean_chi, r.reference_chi
                ),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let secs = Duration::from_secs;
    let mut all = true;
    all &= criterion(1, "CantorNet depth-1 fixture", secs(1), fig3);
    all &= criterion(2, "CantorNet depth-2 fixture", secs(1), fig4);
    all &= criterion(3, "chi bounds", secs(60), bounds_suite);
    all &= criterion(4, "depth-1 zero folding", secs(60), depth_one);
    all &= criterion(5, "convexity equivalence trials", secs(120), lemma_trials);
    all &= criterion(6, "oscillation limit", secs(1), oscillation);

    let mnist = load_mnist();
    let mut suite = Vec::new();
    all &= criterion(7, "MNIST depth trend", secs(20 * 60), || match &mnist {
        Ok(m) => small_suite(m, &mut suite),
        Err(e) => outcome(false, e.clone()),
    });
    let find = |label: &str| suite.iter().find(|t| t.label() == label);
    all &= criterion(8, "folding ratio trend", secs(40 * 60), || match &mnist {
        Ok(m) => ratio_trend(m, find("2x30")),
        Err(e) => outcome(false, e.clone()),
    });
    all &= criterion(9, "clustering sensitivity", secs(10 * 60), || match &mnist {
        Ok(m) => sensitivity(m, find("6x10")),
        Err(e) => outcome(false, e.clone()),
    });
    all &= criterion(10, "collapse invariance and determinism", secs(60), collapse_and_determinism);

    if !all {
        std::process::exit(1);
    }
}
