use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use layertree::dumpio::{read_dump, HiddenStateDump};
use layertree::layercluster::{consistency_report, spectral_cluster, to_affinity, ClusterReport};
use layertree::patternminer::{mine_frequent_subtrees_with, pattern_report, MineMode};
use layertree::pruneplan::{build_plan, plan_report, BiMetric};
use layertree::simmetrics::{
    average_matrices, dump_trees, layer_similarity_matrix_with, CosBaseMode, MatrixOptions, Metric,
    SimilarityMatrix,
};
use layertree::subtreestats::{layer_profile, mean_profile, mean_profile_csv, profile_csv};
use rayon::prelude::*;
use serde::Serialize;

use crate::output::Outputs;

const DEFAULT_METRIC: Metric = Metric::EdgeEdit;
const DEFAULT_BI_METRIC: BiMetric = BiMetric::CosBaseBi;
const DUMP_EXTENSION: &str = "sldump";

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .with_context(|| format!("{} has no usable file name", path.display()))
}

/// Reads every dump up front and checks that their names cannot collide in
/// the output directory.
fn load_dumps(paths: &[PathBuf]) -> Result<Vec<(String, HiddenStateDump)>> {
    for p in paths {
        if !p.exists() {
            bail!("input {} does not exist", p.display());
        }
    }
    let mut seen = BTreeSet::new();
    for p in paths {
        let s = stem(p)?;
        if !seen.insert(s.clone()) {
            bail!("two inputs share the name {s:?}");
        }
    }
    paths
        .par_iter()
        .map(|p| {
            let dump = read_dump(p).with_context(|| format!("reading {}", p.display()))?;
            Ok((stem(p)?, dump))
        })
        .collect()
}

fn parse_metric(metric: Option<&str>) -> Result<Metric> {
    Ok(metric
        .map(str::parse)
        .transpose()?
        .unwrap_or(DEFAULT_METRIC))
}

pub fn build_trees(paths: &[PathBuf]) -> Result<Outputs> {
    let dumps = load_dumps(paths)?;
    let built: Vec<_> = dumps
        .par_iter()
        .map(|(name, dump)| dump_trees(dump).with_context(|| format!("building trees for {name}")))
        .collect::<Result<_>>()?;
    let mut out = Outputs::default();
    for ((name, _), trees) in dumps.iter().zip(built) {
        let mut sexprs = String::new();
        for (layer, tree) in trees.iter().enumerate() {
            let json = serde_json::to_string(&tree.to_json())?;
            out.add(format!("{name}.layer{layer}.json"), json + "\n")?;
            sexprs.push_str(&tree.to_sexpr());
            sexprs.push('\n');
        }
        out.add(format!("{name}.sexpr"), sexprs)?;
    }
    Ok(out)
}

fn add_matrix(out: &mut Outputs, prefix: &str, m: &SimilarityMatrix) -> Result<()> {
    out.add(format!("{prefix}.{}.csv", m.metric), m.to_csv())?;
    out.add(format!("{prefix}.{}.pgm", m.metric), m.to_pgm())?;
    out.add(format!("{prefix}.{}.json", m.metric), m.to_json() + "\n")?;
    Ok(())
}

fn matrices(
    dumps: &[(String, HiddenStateDump)],
    metric: Metric,
    opts: &MatrixOptions,
) -> Result<Vec<SimilarityMatrix>> {
    dumps
        .par_iter()
        .map(|(name, dump)| {
            layer_similarity_matrix_with(dump, metric, opts)
                .with_context(|| format!("scoring layers of {name} with {metric}"))
        })
        .collect()
}

pub fn similarity(
    paths: &[PathBuf],
    metric: Option<&str>,
    average: bool,
    raw_sum: bool,
) -> Result<Outputs> {
    let metric = parse_metric(metric)?;
    if raw_sum && metric != Metric::CosBase {
        bail!("--raw-sum only applies to cos-base");
    }
    let opts = MatrixOptions {
        cos_base: if raw_sum {
            CosBaseMode::Sum
        } else {
            CosBaseMode::Mean
        },
        ..Default::default()
    };
    let dumps = load_dumps(paths)?;
    let mats = matrices(&dumps, metric, &opts)?;
    let mut out = Outputs::default();
    if average {
        let mean = average_matrices(&mats).context("averaging matrices")?;
        add_matrix(&mut out, "mean", &mean)?;
    } else {
        for ((name, _), m) in dumps.iter().zip(&mats) {
            add_matrix(&mut out, name, m)?;
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct SampleClusters<'a> {
    id: &'a str,
    assignment: &'a [usize],
    conductance: &'a [f64],
}

#[derive(Serialize)]
struct ClusterFile<'a> {
    k: usize,
    seed: u64,
    metric: Metric,
    samples: Vec<SampleClusters<'a>>,
    ari_mean: Option<f64>,
    ari_std: Option<f64>,
    conductance_mean: Option<f64>,
    conductance_std: Option<f64>,
}

pub fn cluster(paths: &[PathBuf], metric: Option<&str>, k: usize, seed: u64) -> Result<Outputs> {
    let metric = parse_metric(metric)?;
    let (json_paths, dump_paths): (Vec<PathBuf>, Vec<PathBuf>) = paths
        .iter()
        .cloned()
        .partition(|p| p.extension().is_some_and(|e| e == "json"));
    if !json_paths.is_empty() && !dump_paths.is_empty() {
        bail!("cluster inputs must be all matrix JSON files or all dumps");
    }

    let named: Vec<(String, SimilarityMatrix)> = if json_paths.is_empty() {
        let dumps = load_dumps(&dump_paths)?;
        let mats = matrices(&dumps, metric, &MatrixOptions::default())?;
        dumps.into_iter().map(|(n, _)| n).zip(mats).collect()
    } else {
        let mut seen = BTreeSet::new();
        json_paths
            .iter()
            .map(|p| {
                let text =
                    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let m = SimilarityMatrix::from_json(&text)
                    .with_context(|| format!("parsing {}", p.display()))?;
                let name = stem(p)?;
                if !seen.insert(name.clone()) {
                    bail!("two inputs share the name {name:?}");
                }
                Ok((name, m))
            })
            .collect::<Result<_>>()?
    };
    let matrix_metric = named[0].1.metric;
    if named.iter().any(|(_, m)| m.metric != matrix_metric) {
        bail!("cluster inputs mix similarity metrics");
    }

    let reports: Vec<ClusterReport> = named
        .par_iter()
        .map(|(name, m)| {
            let affinity = to_affinity(m).with_context(|| format!("affinity for {name}"))?;
            spectral_cluster(affinity.view(), k, seed).with_context(|| format!("clustering {name}"))
        })
        .collect::<Result<_>>()?;
    let summary = if reports.len() >= 2 {
        Some(consistency_report(&reports)?)
    } else {
        None
    };

    let file = ClusterFile {
        k,
        seed,
        metric: matrix_metric,
        samples: named
            .iter()
            .zip(&reports)
            .map(|((name, _), r)| SampleClusters {
                id: name,
                assignment: &r.assignment,
                conductance: &r.conductance,
            })
            .collect(),
        ari_mean: summary.map(|s| s.ari_mean),
        ari_std: summary.map(|s| s.ari_std),
        conductance_mean: summary.map(|s| s.conductance_mean),
        conductance_std: summary.map(|s| s.conductance_std),
    };
    let layers = reports[0].assignment.len();
    let mut csv = String::from("sample");
    for l in 0..layers {
        csv.push_str(&format!(",{l}"));
    }
    csv.push('\n');
    for ((name, _), r) in named.iter().zip(&reports) {
        csv.push_str(name);
        for c in &r.assignment {
            csv.push_str(&format!(",{c}"));
        }
        csv.push('\n');
    }

    let mut out = Outputs::default();
    out.add("clusters.json", serde_json::to_string_pretty(&file)? + "\n")?;
    out.add("assignments.csv", csv)?;
    Ok(out)
}

pub fn subtrees(paths: &[PathBuf]) -> Result<Outputs> {
    let dumps = load_dumps(paths)?;
    let profiles: Vec<_> = dumps
        .par_iter()
        .map(|(name, d)| layer_profile(d).with_context(|| format!("profiling {name}")))
        .collect::<Result<_>>()?;
    let mut out = Outputs::default();
    for ((name, _), p) in dumps.iter().zip(&profiles) {
        out.add(format!("{name}.subtrees.csv"), profile_csv(p))?;
    }
    if profiles.len() > 1 {
        let mean = mean_profile(&profiles).context("averaging profiles")?;
        out.add("subtrees_mean.csv", mean_profile_csv(&mean))?;
    }
    Ok(out)
}

pub fn mine(path: &Path, size: usize, min_support: usize, up_to: bool) -> Result<Outputs> {
    let (name, dump) = load_dumps(&[path.to_path_buf()])?.remove(0);
    let trees = dump_trees(&dump).with_context(|| format!("building trees for {name}"))?;
    let mode = if up_to {
        MineMode::UpTo
    } else {
        MineMode::Exact
    };
    let patterns = mine_frequent_subtrees_with(&trees, size, min_support, mode)?;
    let mut jsonl = String::new();
    for p in &patterns {
        jsonl.push_str(&p.to_json_line());
        jsonl.push('\n');
    }
    let mut out = Outputs::default();
    out.add("patterns.jsonl", jsonl)?;
    out.add("patterns.txt", pattern_report(&patterns))?;
    Ok(out)
}

pub fn prune(dir: &Path, metric: Option<&str>, k: Option<usize>) -> Result<Outputs> {
    let metric = metric
        .map(str::parse)
        .transpose()?
        .unwrap_or(DEFAULT_BI_METRIC);
    if !dir.is_dir() {
        bail!("calibration directory {} does not exist", dir.display());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| Ok(e?.path()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == DUMP_EXTENSION))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .{DUMP_EXTENSION} files in {}", dir.display());
    }
    let loaded = load_dumps(&paths)?;
    let ids: Vec<String> = loaded
        .iter()
        .map(|(name, d)| d.sample_id().unwrap_or_else(|| name.clone()))
        .collect();
    let dumps: Vec<HiddenStateDump> = loaded.into_iter().map(|(_, d)| d).collect();
    let blocks = dumps[0].num_blocks();
    let k = k.unwrap_or_else(|| (blocks as f64 * 0.25).round() as usize);
    let mut plan = build_plan(&dumps, metric, k)?;
    plan.calibration_ids = ids;

    let mut out = Outputs::default();
    out.add(format!("plan.{metric}.json"), plan.to_json() + "\n")?;
    out.add(format!("plan.{metric}.txt"), plan_report(&plan))?;
    Ok(out)
}
