mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use common::{decorate, random_tree, report, TreeShape};
use cotree_core::dataset::{
    mask_steps, mix, DatasetSplit, DedupParams, HistoryEntry, MinHashSignature, MixtureConfig, Provenance,
    TrainingInstance,
};
use cotree_core::env::{generate_task, replay_prefix, DeskApp, StateHash, TaskSpec};
use cotree_core::eval::{EvalReport, DEPTHS};
use cotree_core::expansion::{
    fragility_score, recovery_score, run_co_expansion, select_fragile_node, select_recovery_node, Candidate,
    CandidateSet, CoExpansionConfig, RoundOutcome, RoundRecord,
};
use cotree_core::oracles::{ErrorInjectionProfile, ErrorType, OracleSet};
use cotree_core::orchestrator::{Orchestrator, RunConfig};
use cotree_core::tree::{read_tree, BranchKind, NodeId, TrajectoryTree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Serializes the timed tests so their wall clocks do not overlap.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

// ---------------------------------------------------------------------------
// Shared 50-task store

struct Shared {
    _dir: tempfile::TempDir,
    config: RunConfig,
    synth_time: Duration,
}

const STORE_TASKS: usize = 50;

fn shared() -> &'static Shared {
    static CELL: OnceLock<Shared> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut config = RunConfig::default();
        config.store = dir.path().to_path_buf();
        config.generate.count = STORE_TASKS;
        let orch = Orchestrator::new(config.clone()).unwrap();
        orch.generate_tasks().unwrap();
        let t = Instant::now();
        let out = orch.synthesize(None).unwrap();
        let synth_time = t.elapsed();
        assert!(out.failed.is_empty(), "synthesis failures: {:?}", out.failed);
        let index = orch.build_cases().unwrap();
        assert!(index.failed.is_empty(), "case failures: {:?}", index.failed);
        Shared {
            _dir: dir,
            config,
            synth_time,
        }
    })
}

fn load_store_trees(config: &RunConfig) -> Vec<(Arc<TaskSpec>, Arc<DeskApp>, TrajectoryTree)> {
    let orch = Orchestrator::new(config.clone()).unwrap();
    let store = orch.store();
    let registry = store.load_snapshots().unwrap();
    let obs = store.observations();
    store
        .load_tasks(&config.tasks)
        .unwrap()
        .into_iter()
        .map(|mut task| {
            task.max_steps = config.co_expansion.max_steps;
            let app = registry.get(&task.snapshot_id).unwrap();
            let tree = read_tree(&store.tree_path(&task.task_id), &obs).unwrap();
            (Arc::new(task), app, tree)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// 1. Trajectory count

#[test]
fn criterion_01_trajectory_count() {
    let _g = serial();
    let start = Instant::now();
    let config = CoExpansionConfig::default();
    let expected = (config.parallel_n + 2 * config.rounds) as usize;
    let mut policy = ErrorInjectionProfile::uniform(0.1, 0.9);
    policy.rates.remove(&ErrorType::FailToTerminate);
    let mut recovery = ErrorInjectionProfile::uniform(0.05, 0.9);
    recovery.rates.remove(&ErrorType::FailToTerminate);

    let mut ledger_ok = true;
    let mut full = Vec::new();
    let mut tallies = Vec::new();
    for i in 0..8usize {
        let (app, task) = generate_task(i, 0);
        let app = Arc::new(app);
        let oracles = OracleSet::scripted(&task, Arc::clone(&app), policy.clone(), recovery.clone());
        let cfg = CoExpansionConfig {
            base_seed: i as u64,
            ..config.clone()
        };
        let run = run_co_expansion(&task, app, &cfg, &oracles).unwrap();
        let leaves = run.tree.leaves().len();
        let s = run.stats;
        let inserted = (s.parallel + s.fde + s.eir) as usize;
        ledger_ok &= leaves == inserted && run.tree.verdicts().len() >= leaves;
        let every_round_inserted = run.rounds.iter().all(|r| r.outcome == RoundOutcome::Inserted)
            && s.parallel == config.parallel_n;
        let p = run.tree.partition().unwrap();
        if every_round_inserted && !p.corr_trajectories.is_empty() && !p.fail_trajectories.is_empty() {
            full.push((task.task_id.clone(), leaves));
        }
        tallies.push(format!(
            "{}:{}(dup {} skip {} stale {})",
            task.task_id, leaves, s.duplicates, s.skipped, s.stale
        ));
    }
    let elapsed = start.elapsed();
    let law = !full.is_empty() && full.iter().all(|(_, n)| *n == expected);
    let ok = ledger_ok && law && elapsed < Duration::from_secs(60);
    report(&format!(
        "criterion 1 trajectory count: {} (expected {expected} on {} task(s) with both subtrees non-empty in every round; \
         leaves equal inserted rollouts on all tasks: {ledger_ok}; {}; {})",
        verdict(ok),
        full.len(),
        tallies.join(" "),
        secs(elapsed)
    ));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 2. Selection oracles

fn brute_fragile(tree: &TrajectoryTree, c: f64) -> Option<(NodeId, f64)> {
    let mut on_success = BTreeSet::new();
    for leaf in tree.leaves() {
        if tree.verdict(leaf).unwrap().r_tau == 1 {
            let mut cur = Some(leaf);
            while let Some(n) = cur {
                on_success.insert(n);
                cur = tree.node(n).unwrap().parent_edge.map(|e| tree.edge(e).source);
            }
        }
    }
    let mut best: Option<(NodeId, f64)> = None;
    for n in on_success {
        let node = tree.node(n).unwrap();
        if node.children.is_empty() || node.stale {
            continue;
        }
        let samples = &node.step_success.as_ref().unwrap().samples;
        let r = samples.iter().map(|&x| x as f64).sum::<f64>() / samples.len() as f64;
        let parent = node.parent_edge.map_or(node, |e| tree.node(tree.edge(e).source).unwrap());
        let score = (1.0 - r) + c * ((parent.v_fde as f64 + 1.0).ln() / (node.v_fde as f64 + 1.0)).sqrt();
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((n, score));
        }
    }
    best
}

fn brute_recovery(tree: &TrajectoryTree, set: &CandidateSet, c: f64) -> Option<(NodeId, f64)> {
    let mut best: Option<(NodeId, f64)> = None;
    for (&n, cand) in set {
        let node = tree.node(n).unwrap();
        if node.stale {
            continue;
        }
        let parent = node.parent_edge.map_or(node, |e| tree.node(tree.edge(e).source).unwrap());
        let score = cand.priority + c * ((parent.v_eir as f64 + 1.0).ln() / (node.v_eir as f64 + 1.0)).sqrt();
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((n, score));
        }
    }
    best
}

#[test]
fn criterion_02_selection_matches_brute_force() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shape = TreeShape {
        max_nodes: 100,
        max_depth: 12,
        alphabet: 3,
        obs_tags: 3,
    };
    let c = 0.25;
    let (mut fde_checked, mut eir_checked, mut mismatches) = (0, 0, 0);
    for _ in 0..1000 {
        let mut tree = random_tree(&mut rng, &shape);
        decorate(&mut rng, &mut tree, 0.1);
        let partition = tree.partition().unwrap();
        let got = select_fragile_node(&tree, &partition, c).ok();
        let want = brute_fragile(&tree, c);
        fde_checked += 1;
        if got.map(|g| g.0) != want.map(|w| w.0) || got.zip(want).is_some_and(|(g, w)| (g.1 - w.1).abs() > 1e-12) {
            mismatches += 1;
        }

        let mut set = CandidateSet::new();
        for _ in 0..rng.gen_range(0..8) {
            let n = NodeId(rng.gen_range(0..tree.nodes().len()) as u32);
            set.insert(
                n,
                Candidate {
                    guidance: String::new(),
                    priority: [0.25, 0.5, 0.75, 1.0][rng.gen_range(0..4)],
                    source_leaf: NodeId(0),
                    step: 1,
                },
            );
        }
        let got = select_recovery_node(&set, &tree, c).ok().map(|(n, _, s)| (n, s));
        let want = brute_recovery(&tree, &set, c);
        eir_checked += 1;
        if got.map(|g| g.0) != want.map(|w| w.0) || got.zip(want).is_some_and(|(g, w)| (g.1 - w.1).abs() > 1e-12) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    let ok = mismatches == 0 && elapsed < Duration::from_secs(30);
    report(&format!(
        "criterion 2 selection oracle equivalence: {} ({fde_checked} fragility and {eir_checked} recovery selections, \
         {mismatches} mismatches; {})",
        verdict(ok),
        secs(elapsed)
    ));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 3. Neighbor sets

fn brute_neighbors(tree: &TrajectoryTree, failed: NodeId) -> BTreeSet<NodeId> {
    let f_nodes = tree.path_nodes(failed).unwrap();
    let f_actions = tree.path_actions(failed).unwrap();
    let t = f_actions.len();
    let mut out = BTreeSet::new();
    for leaf in tree.leaves() {
        if leaf == failed {
            continue;
        }
        let nodes = tree.path_nodes(leaf).unwrap();
        if nodes.iter().any(|&n| tree.node(n).unwrap().stale) {
            continue;
        }
        let actions = tree.path_actions(leaf).unwrap();
        let branches =
            (2..=t).any(|i| actions.len() >= i && nodes[i - 1] == f_nodes[i - 1] && actions[i - 1] != f_actions[i - 1]);
        if branches {
            out.insert(leaf);
        }
    }
    out
}

#[test]
fn criterion_03_neighbors_match_brute_force() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shape = TreeShape {
        max_nodes: 60,
        max_depth: 8,
        alphabet: 3,
        obs_tags: 2,
    };
    let (mut checked, mut mismatches, mut nonempty) = (0, 0, 0);
    for _ in 0..500 {
        let mut tree = random_tree(&mut rng, &shape);
        decorate(&mut rng, &mut tree, 0.05);
        for leaf in tree.leaves() {
            let got = tree.neighbor_trajectories(leaf).unwrap();
            let want = brute_neighbors(&tree, leaf);
            checked += 1;
            nonempty += usize::from(!want.is_empty());
            mismatches += usize::from(got != want);
        }
    }
    let elapsed = start.elapsed();
    let ok = mismatches == 0 && nonempty > 0 && elapsed < Duration::from_secs(30);
    report(&format!(
        "criterion 3 neighbor-set oracle equivalence: {} ({checked} leaves over 500 trees, {nonempty} with neighbors, \
         {mismatches} mismatches; {})",
        verdict(ok),
        secs(elapsed)
    ));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 4. Closed-form scores

#[test]
fn criterion_04_closed_form_scores() {
    // 0.5 + 0.25 * sqrt(ln 4 / 2) and 0.5 + 0.25 * sqrt(ln 6 / 3), evaluated
    // to 18 digits with arbitrary-precision arithmetic.
    const FRAGILITY_EXACT: f64 = 0.708_138_652_789_424_439;
    const RECOVERY_EXACT: f64 = 0.693_205_388_836_813_967;
    const RECOVERY_STATED: f64 = 0.69338;
    let f = fragility_score(0.5, 1, 3, 0.25);
    let r = recovery_score(0.5, 2, 5, 0.25);
    let ok = (f - FRAGILITY_EXACT).abs() <= 1e-5 && (r - RECOVERY_EXACT).abs() <= 1e-5 && (f - 0.70814).abs() <= 1e-5;
    report(&format!(
        "criterion 4 closed-form scores: {} (fragility {f:.10} vs {FRAGILITY_EXACT:.10}, recovery {r:.10} vs \
         {RECOVERY_EXACT:.10}; the quoted recovery literal {RECOVERY_STATED} is {:.2e} from the exact value)",
        verdict(ok),
        (RECOVERY_STATED - RECOVERY_EXACT).abs()
    ));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 5. Recovery prefix law

#[test]
fn criterion_05_recovery_prefix() {
    let shared = shared();
    let _g = serial();
    let start = Instant::now();
    let orch = Orchestrator::new(shared.config.clone()).unwrap();
    let trees = load_store_trees(&shared.config);
    let (mut total, mut sharing) = (0usize, 0usize);
    for (task, _, tree) in &trees {
        let text = std::fs::read_to_string(orch.store().rounds_path(&task.task_id)).unwrap();
        for line in text.lines() {
            let r: RoundRecord = serde_json::from_str(line).unwrap();
            if r.arm != BranchKind::Eir || r.outcome != RoundOutcome::Inserted {
                continue;
            }
            let (leaf, source, step) = (r.leaf.unwrap(), r.source_leaf.unwrap(), r.step.unwrap());
            let new = tree.path_actions(leaf).unwrap();
            let old = tree.path_actions(source).unwrap();
            total += 1;
            if new.len() >= step - 1 && old.len() >= step - 1 && new[..step - 1] == old[..step - 1] {
                sharing += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let ok = total > 0 && sharing == total && trees.len() == STORE_TASKS;
    report(&format!(
        "criterion 5 recovery prefix law: {} ({sharing}/{total} recovery trajectories share the source prefix over \
         {} tasks; synthesis {}, check {})",
        verdict(ok),
        trees.len(),
        secs(shared.synth_time),
        secs(elapsed)
    ));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 6. Mixture counts

fn instance(i: usize, reflection: bool) -> TrainingInstance {
    TrainingInstance {
        instruction: String::new(),
        history: Vec::<HistoryEntry>::new(),
        observation: StateHash(i as u64),
        target: String::new(),
        reflection,
        provenance: Provenance {
            task_id: "mix".into(),
            policy_id: "p".into(),
            branch_kind: BranchKind::Parallel,
            trajectory_id: i as u32,
            step: 1,
            history_image_cap: 0,
        },
    }
}

#[test]
fn criterion_06_mixture_counts() {
    let split = DatasetSplit {
        agn: (0..100_000).map(|i| instance(i, false)).collect(),
        refl: (0..12_000).map(|i| instance(100_000 + i, true)).collect(),
    };
    let out = mix(
        &split,
        &MixtureConfig {
            lambda_ref: 0.1,
            total: 100_000,
            seed: 6,
        },
    )
    .unwrap();
    let refl = out.iter().filter(|i| i.reflection).count();
    let agn = out.len() - refl;
    let ok = agn == 90_000 && refl == 10_000;
    report(&format!(
        "criterion 6 mixture exactness: {} ({agn} reflection-agnostic / {refl} reflection-related of {})",
        verdict(ok),
        out.len()
    ));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 7. MinHash accuracy

fn trigram_ids(text: &str, vocab: &mut HashMap<Vec<String>, u32>) -> Vec<u32> {
    let toks: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    let grams: Vec<Vec<String>> = if toks.len() < 3 {
        vec![toks]
    } else {
        toks.windows(3).map(<[String]>::to_vec).collect()
    };
    let mut ids: Vec<u32> = grams
        .into_iter()
        .map(|g| {
            let next = vocab.len() as u32;
            *vocab.entry(g).or_insert(next)
        })
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn jaccard(a: &[u32], b: &[u32]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// 250 base documents, each with three edited variants.
fn near_duplicate_corpus(rng: &mut ChaCha8Rng) -> Vec<String> {
    let words: Vec<String> = (0..400).map(|i| format!("w{i}")).collect();
    let mut docs = Vec::new();
    for _ in 0..250 {
        let len = rng.gen_range(30..90);
        let base: Vec<String> = (0..len).map(|_| words[rng.gen_range(0..words.len())].clone()).collect();
        docs.push(base.join(" "));
        for rate in [0.02, 0.05, 0.1] {
            let mut v = base.clone();
            for w in v.iter_mut() {
                if rng.gen_bool(rate) {
                    *w = words[rng.gen_range(0..words.len())].clone();
                }
            }
            if rng.gen_bool(0.5) {
                v.truncate(len - rng.gen_range(0..len / 4));
            }
            docs.push(v.join(" "));
        }
    }
    docs
}

#[test]
fn criterion_07_minhash_accuracy() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let docs = near_duplicate_corpus(&mut rng);
    let params = DedupParams::default();
    let mut vocab = HashMap::new();
    let grams: Vec<Vec<u32>> = docs.iter().map(|d| trigram_ids(d, &mut vocab)).collect();
    let sigs: Vec<MinHashSignature> = docs.iter().map(|d| MinHashSignature::compute(d, &params)).collect();
    let (mut sum, mut max, mut pairs, mut similar) = (0.0f64, 0.0f64, 0usize, 0usize);
    for i in 0..docs.len() {
        for j in i + 1..docs.len() {
            let exact = jaccard(&grams[i], &grams[j]);
            let err = (sigs[i].similarity(&sigs[j]) - exact).abs();
            sum += err;
            max = max.max(err);
            pairs += 1;
            similar += usize::from(exact > 0.2);
        }
    }
    let mae = sum / pairs as f64;
    let elapsed = start.elapsed();
    let ok = docs.len() == 1000 && mae <= 0.05 && max <= 0.15 && elapsed < Duration::from_secs(60);
    report(&format!(
        "criterion 7 minhash accuracy: {} (k={} n={} over {pairs} pairs, {similar} with Jaccard > 0.2; mean abs error \
         {mae:.5}, max {max:.4}; {})",
        verdict(ok),
        params.k,
        params.n,
        secs(elapsed)
    ));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 8. Replay fidelity

#[test]
fn criterion_08_replay_fidelity() {
    let shared = shared();
    let _g = serial();
    let start = Instant::now();
    let trees = load_store_trees(&shared.config);
    let (mut nodes, mut matched) = (0usize, 0usize);
    for (task, app, tree) in trees.iter().take(20) {
        assert_eq!(task.stochasticity, 0.0);
        let mut verified = vec![false; tree.nodes().len()];
        for leaf in tree.leaves() {
            let path = tree.path_nodes(leaf).unwrap();
            let actions = tree.path_actions(leaf).unwrap();
            let (_, observed) = replay_prefix(task, app, &actions, None, task.seed).unwrap();
            for (n, o) in path.iter().zip(&observed) {
                if tree.node(*n).unwrap().observation == o.state_hash {
                    verified[n.0 as usize] = true;
                }
            }
        }
        nodes += verified.len();
        matched += verified.iter().filter(|v| **v).count();
    }
    let elapsed = start.elapsed();
    let ok = nodes > 0 && matched == nodes && elapsed < Duration::from_secs(60);
    report(&format!(
        "criterion 8 replay fidelity: {} ({matched}/{nodes} nodes over 20 tasks reproduce their hash; {})",
        verdict(ok),
        secs(elapsed)
    ));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 9. Benchmark bracketing

fn read_report(config: &RunConfig, run_id: &str) -> EvalReport {
    let path = config.store.join("reports").join(run_id).join("report.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn depth_rates(report: &EvalReport, agent: &str) -> BTreeMap<u32, (usize, f64, f64)> {
    report
        .rows
        .iter()
        .filter(|r| r.agent == agent && r.error_type.is_none())
        .map(|r| (r.depth, (r.runs, r.awareness_rate, r.success_rate)))
        .collect()
}

#[test]
fn criterion_09_benchmark_bracketing() {
    let shared = shared();
    let _g = serial();
    let start = Instant::now();
    let orch = Orchestrator::new(shared.config.clone()).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for (agent, want) in [("oracle-recovery", 1.0), ("frozen", 0.0)] {
        let run_id = format!("bracket-{agent}");
        let out = orch.evaluate(agent, Some(1), Some(&run_id)).unwrap();
        ok &= out.failed.is_empty();
        let rates = depth_rates(&read_report(&shared.config, &run_id), agent);
        for d in DEPTHS {
            match rates.get(&d) {
                Some(&(runs, aware, success)) => {
                    ok &= runs > 0 && aware == want && success == want;
                    notes.push(format!("{agent}@{d}: {aware:.2}/{success:.2} ({runs} runs)"));
                }
                None => {
                    ok = false;
                    notes.push(format!("{agent}@{d}: no cases"));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(60);
    report(&format!(
        "criterion 9 benchmark bracketing: {} ({}; {})",
        verdict(ok),
        notes.join(", "),
        secs(elapsed)
    ));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 10. Depth degradation

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn criterion_10_depth_degradation() {
    let shared = shared();
    let _g = serial();
    let start = Instant::now();
    let orch = Orchestrator::new(shared.config.clone()).unwrap();
    let cases = orch.load_cases().unwrap();
    let min_cases = DEPTHS
        .iter()
        .map(|d| cases.iter().filter(|c| c.depth == *d).count())
        .min()
        .unwrap();
    assert!(min_cases > 0, "a depth has no cases");
    let runs = 500usize.div_ceil(min_cases) as u32;
    let agent = "decay:1:0.7";
    orch.evaluate(agent, Some(runs), Some("depth-decay")).unwrap();
    let rates = depth_rates(&read_report(&shared.config, "depth-decay"), "decay:1:0.7");
    let depths: Vec<f64> = DEPTHS.iter().map(|d| *d as f64).collect();
    let success: Vec<f64> = DEPTHS.iter().map(|d| rates.get(d).map_or(f64::NAN, |r| r.2)).collect();
    let enough = DEPTHS.iter().all(|d| rates.get(d).is_some_and(|r| r.0 >= 500));
    let rho = spearman(&depths, &success);
    let elapsed = start.elapsed();
    let ok = enough && rho == -1.0 && elapsed < Duration::from_secs(300);
    let cells: Vec<String> = DEPTHS
        .iter()
        .map(|d| match rates.get(d) {
            Some(r) => format!("d{d} {:.3} ({} runs)", r.2, r.0),
            None => format!("d{d} missing"),
        })
        .collect();
    report(&format!(
        "criterion 10 depth degradation: {} (spearman {rho:.3}; {}; {})",
        verdict(ok),
        cells.join(", "),
        secs(elapsed)
    ));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 11. Masking

#[test]
fn criterion_11_masking_exactness() {
    let shared = shared();
    let _g = serial();
    let trees = load_store_trees(&shared.config);
    let (mut tp, mut fp, mut fneg, mut steps) = (0usize, 0usize, 0usize, 0usize);
    for (task, app, tree) in &trees {
        let oracles = OracleSet::scripted(
            task,
            Arc::clone(app),
            shared.config.policy.clone(),
            shared.config.recovery.clone(),
        );
        for traj in tree.enumerate_trajectories() {
            let kept: BTreeSet<usize> = mask_steps(tree, &traj, &task.instruction, &*oracles.progress, &*oracles.action)
                .unwrap()
                .into_iter()
                .collect();
            for (i, e) in traj.edges.iter().enumerate() {
                let removed = !kept.contains(&(i + 1));
                let planted = !tree.edge(*e).label.as_ref().expect("scripted label").correct;
                steps += 1;
                match (removed, planted) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    (false, false) => {}
                }
            }
        }
    }
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { 1.0 } else { tp as f64 / (tp + fneg) as f64 };
    let ok = tp > 0 && fp == 0 && fneg == 0;
    report(&format!(
        "criterion 11 masking exactness: {} (precision {precision:.4}, recall {recall:.4} over {steps} steps with {} \
         planted incorrect)",
        verdict(ok),
        tp + fneg
    ));
    assert!(ok);
}

// ---------------------------------------------------------------------------
// 12. Determinism

fn files_under(root: &Path, sub: &str) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.join(sub)];
    while let Some(dir) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&dir) else { continue };
        for e in entries {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn full_pipeline(workers: usize) -> (tempfile::TempDir, BTreeMap<PathBuf, Vec<u8>>) {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig::default();
    config.store = dir.path().to_path_buf();
    config.workers = workers;
    config.base_seed = 12;
    config.generate.count = 8;
    let orch = Orchestrator::new(config).unwrap();
    orch.generate_tasks().unwrap();
    let synth = orch.synthesize(Some("synth")).unwrap();
    assert!(synth.failed.is_empty());
    orch.build_dataset("default").unwrap();
    orch.report("synth").unwrap();
    orch.report("dataset-default").unwrap();
    let mut files = BTreeMap::new();
    for sub in ["trees", "trajectories", "observations", "datasets", "reports"] {
        files.extend(files_under(dir.path(), sub));
    }
    (dir, files)
}

#[test]
fn criterion_12_determinism() {
    let _g = serial();
    let start = Instant::now();
    let (_a, one) = full_pipeline(1);
    let (_b, four) = full_pipeline(4);
    let (_c, again) = full_pipeline(4);
    let differing: Vec<String> = one
        .keys()
        .chain(four.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|k| one.get(*k) != four.get(*k) || four.get(*k) != again.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let has = |sub: &str| one.keys().any(|k| k.starts_with(sub));
    let ok = differing.is_empty() && has("trees") && has("datasets") && has("reports");
    report(&format!(
        "criterion 12 determinism: {} ({} files compared across workers 1, 4 and a repeat at 4; {} differ{}; {})",
        verdict(ok),
        one.len(),
        differing.len(),
        if differing.is_empty() {
            String::new()
        } else {
            format!(": {}", differing.join(", "))
        },
        secs(start.elapsed())
    ));
    assert!(ok);
}
