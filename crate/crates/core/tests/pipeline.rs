use layertree::dumpio::{read_dump, write_dump, HiddenStateDump};
use layertree::layercluster::{spectral_cluster, to_affinity};
use layertree::patternminer::{mine_frequent_subtrees, pattern_occurrences};
use layertree::pruneplan::{build_plan, BiMetric};
use layertree::simmetrics::{average_matrices, dump_trees, layer_similarity_matrix, Metric};
use layertree::subtreestats::layer_profile;
use layertree::treebuild::{build_graph, max_spanning_tree, LayerTree, TreeJson};
use ndarray::{Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(seed: u64) -> HiddenStateDump {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = ["The", "cat", "(sat)", "on", "the", "mat", "."];
    // two "islands" of layers: snapshots drift slowly inside each island and
    // jump between them
    let mut acts = Array3::<f32>::zeros((9, words.len(), 6));
    acts.index_axis_mut(Axis(0), 0)
        .mapv_inplace(|_| rng.random_range(-1.0..1.0));
    for l in 1..9 {
        let step = if l == 5 { 2.0 } else { 0.05 };
        let prev = acts.index_axis(Axis(0), l - 1).to_owned();
        let next = prev.mapv(|v| v + step * rng.random_range(-1.0f32..1.0));
        acts.index_axis_mut(Axis(0), l).assign(&next);
    }
    let mut meta = serde_json::Map::new();
    meta.insert("sample_id".into(), format!("s{seed}").into());
    HiddenStateDump::new(
        words.iter().map(|w| w.to_string()).collect(),
        acts,
        Some(meta),
    )
    .unwrap()
}

#[test]
fn dump_file_to_trees_and_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.sldump");
    let dump = sample(1);
    write_dump(&dump, &path).unwrap();
    let dump = read_dump(&path).unwrap();
    assert_eq!(dump.sample_id().as_deref(), Some("s1"));

    let trees = dump_trees(&dump).unwrap();
    assert_eq!(trees.len(), 9);
    for (l, tree) in trees.iter().enumerate() {
        let graph = build_graph(dump.layer_slice(l).unwrap()).unwrap();
        let general = max_spanning_tree(&graph, tree.tokens().clone()).unwrap();
        assert_eq!(general.parents(), tree.parents());

        let text = tree.to_sexpr();
        assert!(text.starts_with("(1_The"));
        assert!(text.contains("3_[sat]"));
        let back = LayerTree::from_sexpr(&text).unwrap();
        assert_eq!(back.parents(), tree.parents());

        let json: TreeJson =
            serde_json::from_str(&serde_json::to_string(&tree.to_json()).unwrap()).unwrap();
        assert_eq!(LayerTree::from_json(&json).unwrap(), *tree);
    }
}

#[test]
fn islands_show_up_in_every_stage() {
    let dumps: Vec<_> = (0..3).map(sample).collect();
    for metric in [Metric::Cka, Metric::CosBase] {
        let mats: Vec<_> = dumps
            .iter()
            .map(|d| layer_similarity_matrix(d, metric).unwrap())
            .collect();
        let mean = average_matrices(&mats).unwrap();
        assert_eq!(mean.sample_count, 3);
        let report = spectral_cluster(to_affinity(&mean).unwrap().view(), 2, 42).unwrap();
        assert_eq!(report.assignment, [0, 0, 0, 0, 0, 1, 1, 1, 1], "{metric}");
    }

    // the jump into the second island is the most influential block
    let plan = build_plan(&dumps, BiMetric::CosBaseBi, 2).unwrap();
    assert_eq!(*plan.removal_order.last().unwrap(), 5);
    assert_eq!(plan.calibration_ids, ["s0", "s1", "s2"]);

    let profile = layer_profile(&dumps[0]).unwrap();
    assert_eq!(profile.len(), 9);
    assert_eq!(profile[8].layer_pct, 100.0);
}

#[test]
fn mined_patterns_embed_in_their_layers() {
    let dump = sample(4);
    let trees = dump_trees(&dump).unwrap();
    let patterns = mine_frequent_subtrees(&trees, 4, 2).unwrap();
    assert!(!patterns.is_empty());
    for p in &patterns {
        for (l, tree) in trees.iter().enumerate() {
            let expected = u64::from(p.supporting_layers.contains(&l));
            assert_eq!(pattern_occurrences(p, tree).unwrap(), expected);
        }
    }
}
