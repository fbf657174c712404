//! One PASS/FAIL line per acceptance criterion, written straight to stdout so
//! the report shows without `--nocapture`. The test fails if any criterion
//! fails.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};
use sha2::{Digest, Sha256};

use troubleshoot::advisory::{build_prompt, INSTRUCTION_TEMPLATE, QUERY_TEMPLATE, SAFETY_TEMPLATE};
use troubleshoot::corpus::split;
use troubleshoot::engine::{Engine, SolveRequest};
use troubleshoot::evaluation::{bayes_optimal_rca, evaluate_rca, generate_synthetic, GroundTruthSpec};
use troubleshoot::inference::{
    adjusted_solution, conditional, enumerate_interventional_oracle, interventional_solution, rca_index, recourse_index,
    Evidence, NoiseMode, NoiseModel, RankedDistribution, RankedEntry, TransportTarget,
};
use troubleshoot::model::{load, save, Assignment, CategoricalDomain, CbnModel, Domains, FitOptions, Var};
use troubleshoot::pipeline::{train, TrainConfig};
use troubleshoot::quantizer::EmbedderConfig;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const TOL: f64 = 1e-12;
const N_MODELS: u64 = 100;

fn domains(sizes: [usize; 4]) -> Domains {
    let named = |v: Var, prefix: &str, n: usize| CategoricalDomain::new(v, (0..n).map(|i| format!("{prefix}{i}")).collect()).unwrap();
    Domains {
        z: named(Var::Z, "z", sizes[0]),
        c: named(Var::C, "c", sizes[1]),
        o: CategoricalDomain::numbered(Var::O, sizes[2]).unwrap(),
        s: CategoricalDomain::numbered(Var::S, sizes[3]).unwrap(),
    }
}

fn model_from_rows(sizes: [usize; 4], rows: &[Assignment], alpha: f64) -> CbnModel {
    let options = FitOptions { alpha, ..FitOptions::default() };
    CbnModel::from_assignments(domains(sizes), rows, BTreeMap::new(), &options).unwrap()
}

/// Random sizes within |Z|,|C| <= 4 and |O|,|S| <= 6, random sparse counts.
fn random_model(seed: u64) -> CbnModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = [rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=6), rng.gen_range(1..=6)];
    let n = rng.gen_range(1..=120);
    let rows: Vec<Assignment> = (0..n)
        .map(|_| Assignment {
            z: rng.gen_range(0..sizes[0]),
            c: rng.gen_range(0..sizes[1]),
            o: rng.gen_range(0..sizes[2]),
            s: rng.gen_range(0..sizes[3]),
        })
        .collect();
    let alpha = [1e-3, 0.1, 1.0][rng.gen_range(0..3)];
    model_from_rows(sizes, &rows, alpha)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// `P(S | do(O=o))` from the mutilated graph: the O factor is removed and the
/// remaining factors are summed over Z and C.
fn mutilated_oracle(m: &CbnModel, o: usize) -> Vec<f64> {
    let [nz, nc, _, ns] = m.domains.sizes();
    let mut out = vec![0.0; ns];
    for z in 0..nz {
        for c in 0..nc {
            for (s, slot) in out.iter_mut().enumerate() {
                let a = Assignment { z, c, o, s };
                let p_o = m.cpts.o.prob(&[c as u32, z as u32], o as u32);
                *slot += m.joint_index(a) / p_o;
            }
        }
    }
    out
}

fn adjustment_identity() -> Outcome {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..N_MODELS {
        let m = random_model(seed);
        for o in 0..m.domains.o.size() {
            let got = interventional_solution(&m, o);
            worst = worst.max(max_abs_diff(&got, &mutilated_oracle(&m, o)));
            worst = worst.max(max_abs_diff(&got, &enumerate_interventional_oracle(&m, o).unwrap()));
        }
    }
    let elapsed = started.elapsed();
    let detail = format!("max |diff| {worst:.2e} over {N_MODELS} models in {elapsed:.2?}");
    if worst <= TOL && elapsed < Duration::from_secs(5) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn conditioning_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..N_MODELS {
        let m = random_model(seed);
        let [nz, nc, no, ns] = m.domains.sizes();
        for o in 0..no {
            let mut joint_c = vec![0.0; nc];
            for (c, slot) in joint_c.iter_mut().enumerate() {
                for z in 0..nz {
                    for s in 0..ns {
                        *slot += m.joint_index(Assignment { z, c, o, s });
                    }
                }
            }
            let evidence_mass: f64 = joint_c.iter().sum();
            let evidence = Evidence::default().with(Var::O, m.domains.o.label(o));
            let got = conditional(&m, Var::C, &evidence).unwrap().dense(&m.domains.c);
            let expected: Vec<f64> = joint_c.iter().map(|p| p / evidence_mass).collect();
            worst = worst.max(max_abs_diff(&got, &expected));
        }
    }
    let detail = format!("max |diff| {worst:.2e} over {N_MODELS} models");
    if worst <= TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn transport_consistency() -> Outcome {
    let mut source_worst: f64 = 0.0;
    let mut point_worst: f64 = 0.0;
    for seed in 0..N_MODELS {
        let m = random_model(seed);
        let [nz, nc, no, _] = m.domains.sizes();
        let source: BTreeMap<String, f64> = m.domains.z.labels().iter().cloned().zip(m.p_z()).collect();
        let source_pz = TransportTarget::Marginal(source).z_marginal(&m).unwrap();
        for o in 0..no {
            let reference = interventional_solution(&m, o);
            source_worst = source_worst.max(max_abs_diff(&adjusted_solution(&m, o, &source_pz), &reference));
            for z in 0..nz {
                let point: BTreeMap<String, f64> = m
                    .domains
                    .z
                    .labels()
                    .iter()
                    .enumerate()
                    .map(|(i, l)| (l.clone(), if i == z { 1.0 } else { 0.0 }))
                    .collect();
                let pz = TransportTarget::Marginal(point).z_marginal(&m).unwrap();
                let got = adjusted_solution(&m, o, &pz);
                // Closed form under a point mass: sum_c P(c|z) P(S|c,z,o).
                let p_c = m.p_c_given_z(z);
                let mut closed = vec![0.0; got.len()];
                for (c, &pc) in p_c.iter().enumerate().take(nc) {
                    for (slot, ps) in closed.iter_mut().zip(m.p_s_given(c, z, o)) {
                        *slot += pc * ps;
                    }
                }
                point_worst = point_worst.max(max_abs_diff(&got, &closed));
            }
        }
    }
    let detail = format!("source {source_worst:.2e}, point mass {point_worst:.2e}");
    if source_worst <= TOL && point_worst <= TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Rejection sampling of the twin network: draw the solution noise from its
/// prior, keep draws that reproduce the factual solution, replay them under
/// the alternative observation.
fn rejection_oracle(m: &CbnModel, f: Assignment, alt_o: usize, draws: usize, seed: u64) -> Vec<f64> {
    let factual = m.p_s_given(f.c, f.z, f.o);
    let alternative = m.p_s_given(f.c, f.z, alt_o);
    let argmax = |row: &[f64], g: &[f64]| {
        (0..row.len())
            .max_by(|&a, &b| (row[a].ln() + g[a]).total_cmp(&(row[b].ln() + g[b])))
            .unwrap()
    };
    let gumbel = Gumbel::new(0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = vec![0.0; factual.len()];
    let mut counts = vec![0u64; factual.len()];
    let mut kept = 0u64;
    for _ in 0..draws {
        g.iter_mut().for_each(|x| *x = gumbel.sample(&mut rng));
        if argmax(&factual, &g) == f.s {
            kept += 1;
            counts[argmax(&alternative, &g)] += 1;
        }
    }
    counts.iter().map(|&k| k as f64 / kept as f64).collect()
}

fn counterfactual_consistency() -> Outcome {
    let samples = 10_000;
    let floor = 1.0 - 3.0 / (samples as f64).sqrt();
    let mut lowest: f64 = 1.0;
    for seed in 0..20 {
        let m = random_model(seed);
        let [nz, nc, no, ns] = m.domains.sizes();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = Assignment {
            z: rng.gen_range(0..nz),
            c: rng.gen_range(0..nc),
            o: rng.gen_range(0..no),
            s: rng.gen_range(0..ns),
        };
        let noise = NoiseModel { mode: NoiseMode::GumbelMax, samples, seed };
        lowest = lowest.min(recourse_index(&m, f, f.o, &noise).unwrap()[f.s]);
    }

    // 2x2x2x2 model with an informative solution mechanism.
    let mut rows = Vec::new();
    for (z, c, o, s, n) in [
        (0, 0, 0, 0, 30),
        (0, 0, 0, 1, 10),
        (0, 0, 1, 0, 5),
        (0, 0, 1, 1, 25),
        (1, 1, 0, 1, 12),
        (1, 1, 1, 0, 18),
        (0, 1, 1, 1, 7),
        (1, 0, 0, 0, 9),
    ] {
        rows.extend(std::iter::repeat_n(Assignment { z, c, o, s }, n));
    }
    let m = model_from_rows([2, 2, 2, 2], &rows, 0.5);
    let mut worst_tv: f64 = 0.0;
    for f in [Assignment { z: 0, c: 0, o: 0, s: 0 }, Assignment { z: 0, c: 0, o: 0, s: 1 }, Assignment { z: 1, c: 1, o: 1, s: 0 }] {
        let alt = 1 - f.o;
        let oracle = rejection_oracle(&m, f, alt, 10_000_000, 11);
        let noise = NoiseModel { mode: NoiseMode::GumbelMax, samples: 100_000, seed: 3 };
        let got = recourse_index(&m, f, alt, &noise).unwrap();
        worst_tv = worst_tv.max(total_variation(&got, &oracle));
    }
    let detail = format!("min P(S*=s_f | a=o_f) {lowest:.4} (floor {floor:.2}), rejection oracle TV {worst_tv:.4}");
    if lowest >= floor && worst_tv <= 0.02 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn confounding_separation() -> Outcome {
    // Z drives both O and S: z1 mostly reports o1 and rarely needs s1.
    let mut rows = Vec::new();
    for (z, o, s, n) in [
        (0, 0, 0, 450),
        (0, 1, 1, 45),
        (0, 1, 0, 5),
        (1, 0, 0, 50),
        (1, 1, 1, 135),
        (1, 1, 0, 315),
    ] {
        rows.extend(std::iter::repeat_n(Assignment { z, c: 0, o, s }, n));
    }
    let m = model_from_rows([2, 1, 2, 2], &rows, 1.0);
    let seen = conditional(&m, Var::S, &Evidence::default().with(Var::O, "1")).unwrap().dense(&m.domains.s);
    let done = interventional_solution(&m, 1);
    let argmax = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    let detail = format!(
        "P(S=1|O=1) {:.3} argmax {}, P(S=1|do(O=1)) {:.3} argmax {}",
        seen[1],
        argmax(&seen),
        done[1],
        argmax(&done)
    );
    if argmax(&seen) != argmax(&done) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn metrics_analogue() -> Outcome {
    let started = Instant::now();
    let spec = GroundTruthSpec::reference_scale(1);
    let (corpus, truth) = generate_synthetic(&spec, 20_000).map_err(|e| e.to_string())?;
    let bayes = bayes_optimal_rca(&truth);
    let (train_set, test_set) = split(&corpus, 0.8, 1).map_err(|e| e.to_string())?;
    let model = train(&train_set, &TrainConfig::seeded(1)).map_err(|e| e.to_string())?;
    let r = evaluate_rca(&model, &test_set).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let detail = format!(
        "|C|={} bayes {bayes:.3} accuracy {:.3} precision {:.3} recall {:.3} in {elapsed:.1?}",
        model.domains.c.size(),
        r.accuracy,
        r.macro_precision,
        r.macro_recall
    );
    let ok = model.domains.c.size() == 20
        && r.accuracy >= 0.80
        && r.macro_precision >= 0.70
        && r.macro_recall >= 0.70
        && elapsed < Duration::from_secs(60);
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn table_shape() -> Outcome {
    // Every record of the observation category has the same cause; the
    // other nineteen causes are only present through smoothing.
    let rows = vec![Assignment { z: 0, c: 0, o: 0, s: 0 }; 17];
    let m = model_from_rows([1, 20, 1, 1], &rows, 17.0 / 172.3);
    let p = rca_index(&m, 0, None).unwrap().dense(&m.domains.c);
    let tail = &p[1..];
    let uniform = tail.iter().all(|&x| x.to_bits() == tail[0].to_bits());
    let sum: f64 = p.iter().sum();
    let detail = format!("{:.4} + 19 x {:.4}, sum {sum:.12}", p[0], tail[0]);
    let printed = (p[0] * 1e4).round() == 9012.0 && (tail[0] * 1e4).round() == 52.0;
    if uniform && printed && (sum - 1.0).abs() <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = common::write_corpus(dir.path(), 90);
    let artifact = |name: &str| -> Result<Vec<u8>, String> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_troubleshoot"))
            .arg("train")
            .arg("--data")
            .arg(&data)
            .arg("--out")
            .arg(&out)
            .args(["--seed", "7", "--fit-timestamp", "1700000000"])
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        std::fs::read(&out).map_err(|e| e.to_string())
    };
    let (a, b) = (artifact("a.json")?, artifact("b.json")?);
    let identical_artifacts = a == b;

    let mut mismatches = 0;
    let mut queries = 0;
    for seed in 0..N_MODELS {
        let m = random_model(seed);
        let back = load(&save(&m)).map_err(|e| e.to_string())?;
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        for o in 0..m.domains.o.size() {
            let pairs = [
                (interventional_solution(&m, o), interventional_solution(&back, o)),
                (rca_index(&m, o, None).unwrap().dense(&m.domains.c), rca_index(&back, o, None).unwrap().dense(&back.domains.c)),
                (adjusted_solution(&m, o, &m.p_z()), adjusted_solution(&back, o, &back.p_z())),
            ];
            for (x, y) in pairs {
                queries += 1;
                if bits(x) != bits(y) {
                    mismatches += 1;
                }
            }
            let f = Assignment { z: 0, c: 0, o, s: 0 };
            let noise = NoiseModel { mode: NoiseMode::GumbelMax, samples: 1000, seed };
            queries += 1;
            if bits(recourse_index(&m, f, 0, &noise).unwrap()) != bits(recourse_index(&back, f, 0, &noise).unwrap()) {
                mismatches += 1;
            }
        }
    }
    let detail = format!(
        "artifacts identical: {identical_artifacts} ({} bytes), reload mismatches {mismatches}/{queries}",
        a.len()
    );
    if identical_artifacts && mismatches == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const TEMPLATE_SHA256: [(&str, &str); 3] = [
    ("instruction", "9d0d36d19d3176f4205751ac0b9fb48bfc7073bbf6dd0f261418579e3bb4ee51"),
    ("query", "dfeb9830fe1dfee259b8bac48c9f31392f8108ae98eb95027cfc70f1841bc86f"),
    ("safety", "cc559871c61cd43fe69584d0037abfc12473d856c16e91903ee93ad353dee84e"),
];

fn hex_sha256(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn prompt_fidelity() -> Outcome {
    for ((name, want), template) in TEMPLATE_SHA256.iter().zip([INSTRUCTION_TEMPLATE, QUERY_TEMPLATE, SAFETY_TEMPLATE]) {
        if hex_sha256(template) != *want {
            return Err(format!("{name} template digest changed"));
        }
    }
    let causes = RankedDistribution {
        variable: Var::C,
        entries: [("seal_wear", 0.72), ("filter_clog", 0.20), ("air_ingress", 0.08)]
            .into_iter()
            .map(|(label, probability)| RankedEntry { label: label.into(), probability })
            .collect(),
        total: 1.0,
        domain_size: 3,
    };
    let solutions = ["replace pump shaft seal".to_string(), "flush and change filter".to_string()];
    let bundle = build_prompt("hydraulic pump whines under load", &causes, &solutions);
    let golden = include_str!("golden/assembled_prompt.txt");
    let placeholders = ["{O}", "{C}", "{S}", "{Q}"].iter().filter(|p| bundle.assembled.contains(*p)).count();
    let blocks = [&bundle.instruction_block, &bundle.query_block]
        .iter()
        .all(|b| bundle.assembled.matches(b.as_str()).count() == 1);
    let detail = format!("{} bytes, {placeholders} placeholders left", bundle.assembled.len());
    if bundle.assembled == golden && placeholders == 0 && blocks && bundle.assembled.ends_with(&bundle.safety_block) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn zero_network() -> Outcome {
    let corpus = common::keyword_corpus(60);
    let model = train(&corpus, &TrainConfig::seeded(0)).map_err(|e| e.to_string())?;
    let q = model.quantizers().map_err(|e| e.to_string())?;
    let builtin = [&q.observation.embedder, &q.solution.embedder]
        .iter()
        .all(|e| matches!(e, EmbedderConfig::Hashed { .. }));
    let engine = Engine::new(model, Some(corpus)).map_err(|e| e.to_string())?;
    let req = SolveRequest {
        text: "door seal leaking".into(),
        top_k: None,
        generate: true,
        k_retrieve: None,
    };
    let advisory = engine.solve(&req).map_err(|e| e.to_string())?.advisory.ok_or("no advisory")?;
    let detail = format!("embedder built in: {builtin}, generator: {}", advisory.provenance);
    if builtin && advisory.provenance == "stub" && !advisory.options.is_empty() {
        Ok(detail)
    } else {
        Err(detail)
    }
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("adjustment identity", adjustment_identity),
        ("conditioning oracle", conditioning_oracle),
        ("transport consistency", transport_consistency),
        ("counterfactual consistency", counterfactual_consistency),
        ("confounding separation", confounding_separation),
        ("classification metrics", metrics_analogue),
        ("smoothed ranking shape", table_shape),
        ("determinism", determinism),
        ("prompt fidelity", prompt_fidelity),
        ("zero network", zero_network),
    ];
    let mut failed = Vec::new();
    let mut out = std::io::stdout().lock();
    for (name, check) in criteria {
        let line = match check() {
            Ok(detail) => format!("PASS {name}: {detail}"),
            Err(detail) => {
                failed.push(name);
                format!("FAIL {name}: {detail}")
            }
        };
        writeln!(out, "{line}").unwrap();
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
