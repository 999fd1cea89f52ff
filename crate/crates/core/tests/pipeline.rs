use std::collections::HashSet;

use recdcl::corpus::{self, InteractionTable, Split};
use recdcl::eval::{self, Scorer};
use recdcl::graph::BipartiteGraph;
use recdcl::model::ModelState;
use recdcl::synth::SyntheticSpec;
use recdcl::trainer::{fit, ObjectiveKind, TrainConfig, Trainer};

fn small_corpus(seed: u64) -> InteractionTable {
    let spec = SyntheticSpec {
        users: 120,
        items: 90,
        topics: 6,
        ..SyntheticSpec::beauty_like()
    };
    let raw = spec.generate(seed).unwrap();
    corpus::split(&raw, Default::default(), seed).unwrap()
}

fn small_config(seed: u64) -> TrainConfig {
    let mut c = TrainConfig::preset("beauty").unwrap();
    c.dim = 16;
    c.batch_size = 64;
    c.lr = 0.01;
    c.seed = seed;
    c
}

/// Per-user metrics by sorting the whole catalog and counting by hand.
fn brute_force(scorer: &Scorer, table: &InteractionTable, split: Split, k: usize) -> (f64, f64, usize) {
    let train = table.items_by_user(Split::Train);
    let held = table.items_by_user(split);
    let (mut recall, mut ndcg, mut n) = (0.0, 0.0, 0usize);
    for u in 0..table.user_count {
        if held[u].is_empty() {
            continue;
        }
        let scores = scorer.score_all(u as u32, &[]);
        let mut order: Vec<usize> = (0..scores.len()).filter(|i| !train[u].contains(&(*i as u32))).collect();
        order.sort_by(|a, b| scores[*b].partial_cmp(&scores[*a]).unwrap().then(a.cmp(b)));
        let truth: HashSet<u32> = held[u].iter().copied().collect();
        let mut hits = 0;
        let mut dcg = 0.0;
        for (pos, &i) in order.iter().take(k).enumerate() {
            if truth.contains(&(i as u32)) {
                hits += 1;
                dcg += 1.0 / (pos as f64 + 2.0).log2();
            }
        }
        let idcg: f64 = (0..k.min(truth.len())).map(|p| 1.0 / (p as f64 + 2.0).log2()).sum();
        recall += hits as f64 / truth.len() as f64;
        ndcg += dcg / idcg;
        n += 1;
    }
    (recall / n as f64, ndcg / n as f64, n)
}

#[test]
fn evaluation_matches_brute_force() {
    let table = small_corpus(3);
    let graph = BipartiteGraph::build(&table).unwrap();
    let state = ModelState::init(table.user_count, table.item_count, 8, 2, false, 3).unwrap();
    let scorer = Scorer::new(&state, &graph, false).unwrap();
    let m = eval::evaluate_scorer(&scorer, &table, Split::Test, &[5, 20]).unwrap();
    for (p, &k) in [5usize, 20].iter().enumerate() {
        let (r, g, n) = brute_force(&scorer, &table, Split::Test, k);
        assert_eq!(n, m.n_users_evaluated);
        assert!((r - m.recall[p]).abs() < 1e-12, "recall@{k}");
        assert!((g - m.ndcg[p]).abs() < 1e-12, "ndcg@{k}");
    }
}

#[test]
fn one_epoch_lowers_the_loss_for_most_seeds() {
    let table = small_corpus(5);
    let mut lowered = 0;
    for seed in 0..10 {
        let mut trainer = Trainer::new(small_config(seed), &table).unwrap();
        let before = trainer.probe_loss().unwrap().total;
        trainer.train_epoch().unwrap();
        let after = trainer.probe_loss().unwrap().total;
        if after < before {
            lowered += 1;
        }
    }
    assert!(lowered >= 9, "loss fell for {lowered}/10 seeds");
}

#[test]
fn every_objective_trains_and_beats_random_ranking() {
    let table = small_corpus(8);
    for objective in [ObjectiveKind::RecDcl, ObjectiveKind::Dcl, ObjectiveKind::Bpr] {
        let mut c = small_config(1);
        c.objective = objective;
        c.epochs = 15;
        let out = fit(&c, &table).unwrap();
        assert!(out.best_recall20 > 0.0, "{}", objective.name());
        assert!(out.history.iter().all(|h| h.losses.total.is_finite()));
    }
}

#[test]
fn checkpoint_reproduces_scores() {
    let table = small_corpus(2);
    let mut c = small_config(4);
    c.epochs = 3;
    let out = fit(&c, &table).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    out.best_state.save_checkpoint(&out.best_hist, &path).unwrap();
    let (state, _) = ModelState::load_checkpoint(&path).unwrap();
    let a = eval::evaluate(&out.best_state, &out.graph, &table, Split::Valid, &[20], false).unwrap();
    let b = eval::evaluate(&state, &out.graph, &table, Split::Valid, &[20], false).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.recall[0], out.best_recall20);
}

#[test]
fn shipped_config_files_match_presets() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["beauty", "food", "game", "yelp"] {
        let mut c = TrainConfig::preset("yelp").unwrap();
        c.apply_file(dir.join(format!("{name}.cfg"))).unwrap();
        assert_eq!(c.to_text(), TrainConfig::preset(name).unwrap().to_text(), "{name}");
    }
}
