//! The implementations behind the CLI verbs. Each command writes only under
//! the chosen output directory, prints a `wrote <path>` line per artifact,
//! and is deterministic given its config and seed.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use colstm_core::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use colstm_core::data::{
    joint_covariance, load_manifest, load_sequence, preprocess, save_manifest, save_sequence,
    synth_generate, PreprocessConfig, SkeletonSequence, SynthSpec,
};
use colstm_core::network::{Layer, Network, NetworkMasks, SequenceSample};
use colstm_core::reg::{group_column_rms, partition_groups};
use colstm_core::rng::{derive_rng, STREAM_INIT};
use colstm_core::training::{
    evaluate, gradcheck_fixture, gradcheck_masks, gradient_check, gradient_check_against,
    train as train_network, EpochRecord,
};
use colstm_core::tensor::Matrix;

use crate::config::RunConfig;
use crate::heatmap::{index_labels, Heatmap};

/// Largest per-entry relative error `gradcheck` accepts.
pub const GRAD_TOLERANCE: f64 = 1e-6;

fn announce(path: &Path) {
    println!("wrote {}", path.display());
}

fn manifest_dir(path: &Path) -> &Path {
    path.parent().unwrap_or_else(|| Path::new("."))
}

/// `--out` wins, then the config's `out_dir`, then `out/`.
fn effective_out(cli: Option<&Path>, cfg: Option<&Path>) -> PathBuf {
    cli.or(cfg).map_or_else(|| PathBuf::from("out"), Path::to_path_buf)
}

/// Lexically anchor a relative path to the current directory, so a config
/// echo stays valid when loaded from somewhere else.
fn absolutize(p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        std::env::current_dir().map(|d| d.join(&p)).unwrap_or(p)
    }
}

/// Characters outside `[A-Za-z0-9_-]` become `_` so class names are safe in
/// file names.
fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct TrainSummary<'a> {
    epochs: usize,
    parameters: usize,
    final_epoch: Option<&'a EpochRecord>,
    total_wall_secs: f64,
}

/// Split the loaded dataset into training and validation parts according to
/// the config: an explicit validation manifest, a held-out fold id, or
/// neither.
fn split_train_val(
    cfg: &RunConfig,
    dataset: Vec<(SequenceSample, Option<usize>)>,
    classes: &[String],
) -> Result<(Vec<SequenceSample>, Option<Vec<SequenceSample>>)> {
    if let Some(val_path) = &cfg.val_data {
        let val_manifest = load_manifest(val_path)?;
        if val_manifest.classes != classes {
            bail!(
                "validation manifest classes {:?} do not match the training manifest's {:?}",
                val_manifest.classes,
                classes
            );
        }
        let val = colstm_core::data::load_dataset(
            &val_manifest,
            manifest_dir(val_path),
            &cfg.preprocess,
        )?;
        let train = dataset.into_iter().map(|(s, _)| s).collect();
        return Ok((train, Some(val.into_iter().map(|(s, _)| s).collect())));
    }
    if let Some(held) = cfg.holdout_fold {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (sample, fold) in dataset {
            if fold == Some(held) {
                val.push(sample);
            } else {
                train.push(sample);
            }
        }
        if val.is_empty() {
            bail!("no manifest entry carries holdout fold {held}");
        }
        if train.is_empty() {
            bail!("every manifest entry carries holdout fold {held}; nothing left to train on");
        }
        return Ok((train, Some(val)));
    }
    Ok((dataset.into_iter().map(|(s, _)| s).collect(), None))
}

pub fn train(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.sgd.seed = s;
    }
    let out = effective_out(out, cfg.out_dir.as_deref());
    let out = out.as_path();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    // The echo must reproduce the run when loaded from anywhere, so record
    // every path in anchored form.
    cfg.data = cfg.data.take().map(absolutize);
    cfg.val_data = cfg.val_data.take().map(absolutize);
    cfg.out_dir = Some(absolutize(out.to_path_buf()));

    let data_path = cfg
        .data
        .clone()
        .context("the run config names no training data manifest (`data`)")?;
    let manifest = load_manifest(&data_path)?;
    let dataset =
        colstm_core::data::load_dataset(&manifest, manifest_dir(&data_path), &cfg.preprocess)?;
    let (train_set, val_set) = split_train_val(&cfg, dataset, &manifest.classes)?;

    // Echo the effective config first so a crashed run still documents what
    // it was asked to do.
    announce(&cfg.echo(out)?);

    let mut net = Network::init(
        cfg.network.clone(),
        &mut derive_rng(cfg.sgd.seed, &[STREAM_INIT]),
    )?;

    let metrics_path = out.join("metrics.jsonl");
    let mut metrics = BufWriter::new(
        File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?,
    );
    let mut stream_err: Option<std::io::Error> = None;
    let report = train_network(
        &mut net,
        &train_set,
        val_set.as_deref(),
        &cfg.sgd,
        &cfg.reg,
        |record| {
            // One JSON object per line, flushed as the epoch completes, so
            // the stream is live while training runs.
            let res = serde_json::to_writer(&mut metrics, record)
                .map_err(std::io::Error::other)
                .and_then(|()| writeln!(metrics))
                .and_then(|()| metrics.flush());
            if let Err(e) = res {
                stream_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = stream_err {
        return Err(e).with_context(|| format!("writing {}", metrics_path.display()));
    }
    metrics.flush()?;
    announce(&metrics_path);

    let meta = CheckpointMeta {
        network: cfg.network.clone(),
        reg: cfg.reg.clone(),
        preprocess: cfg.preprocess.clone(),
        classes: manifest.classes.clone(),
        seed: cfg.sgd.seed,
    };
    let ckpt_path = out.join("model.ckpt");
    save_checkpoint(&net, &meta, &ckpt_path)?;
    announce(&ckpt_path);

    let summary = TrainSummary {
        epochs: report.epochs.len(),
        parameters: net.parameter_count(),
        final_epoch: report.epochs.last(),
        total_wall_secs: report.epochs.iter().map(|e| e.wall_secs).sum(),
    };
    let report_path = out.join("report.json");
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(&report_path, text)?;
    announce(&report_path);

    match summary.final_epoch {
        Some(last) => {
            let val = last
                .val_accuracy
                .map(|v| format!("; validation accuracy {v:.4}"))
                .unwrap_or_default();
            println!(
                "trained {} epochs; final train accuracy {:.4}{val}",
                summary.epochs, last.train_accuracy
            );
        }
        None => println!("trained 0 epochs; the checkpoint holds the initial weights"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn confusion_csv(confusion: &Matrix, classes: &[String]) -> String {
    let mut out = String::new();
    out.push_str(&format!(",{}\n", classes.join(",")));
    for (i, name) in classes.iter().enumerate() {
        out.push_str(name);
        for j in 0..classes.len() {
            out.push_str(&format!(",{}", confusion.get(i, j) as i64));
        }
        out.push('\n');
    }
    out
}

pub fn eval(checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let manifest = load_manifest(data)?;
    if manifest.classes != ckpt.meta.classes {
        bail!(
            "manifest classes {:?} do not match the checkpoint's {:?}",
            manifest.classes,
            ckpt.meta.classes
        );
    }
    let dataset =
        colstm_core::data::load_dataset(&manifest, manifest_dir(data), &ckpt.meta.preprocess)?;
    let expected = ckpt.network.config.input_width;
    for (entry, (sample, _)) in manifest.entries.iter().zip(&dataset) {
        let got = sample.frames.first().map_or(0, Vec::len);
        if got != expected {
            bail!(
                "{}: frame width {got} does not match the network's input width {expected}",
                entry.path
            );
        }
    }
    let samples: Vec<SequenceSample> = dataset.into_iter().map(|(s, _)| s).collect();
    let (accuracy, confusion) = evaluate(&ckpt.network, &samples);

    fs::create_dir_all(out)?;
    let path = out.join("confusion.csv");
    fs::write(&path, confusion_csv(&confusion, &manifest.classes))?;
    println!("accuracy {accuracy:.4}");
    announce(&path);
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

/// Run the finite-difference comparison on the configured architecture and
/// print one line per parameter tensor. Returns whether every tensor stayed
/// under [`GRAD_TOLERANCE`]. With `corrupt`, one analytic entry is falsified
/// first — the negative control proving the comparison can fail.
pub fn gradcheck(config: &Path, seed: Option<u64>, corrupt: bool) -> Result<bool> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.gradcheck.seed = s;
    }
    let opts = cfg.gradcheck.clone();
    let (net, sample) = gradcheck_fixture(&cfg.network, opts.t_len, opts.seed)?;
    let masks = if opts.dropout_masks {
        gradcheck_masks(&cfg.network, opts.t_len)
    } else {
        NetworkMasks::none(cfg.network.layers.len())
    };

    let report = if corrupt {
        let cache = net.forward_with_masks(&sample.frames, &masks);
        let mut analytic = net.backward(&cache, sample.label);
        net.add_penalty_subgradients(&cfg.reg, &mut analytic);
        analytic.tensors_mut()[0].1.values_mut()[0] += 1.0;
        gradient_check_against(&net, &sample, &cfg.reg, &masks, opts.step, &analytic)
    } else {
        gradient_check(&net, &sample, &cfg.reg, &masks, opts.step)
    };

    let width = report.per_tensor.iter().map(|t| t.name.len()).max().unwrap_or(0);
    for t in &report.per_tensor {
        println!("{:<width$}  {:.3e}", t.name, t.max_rel_err);
    }
    let ok = report.max_rel_err < GRAD_TOLERANCE;
    if ok {
        println!("max relative error {:.3e}, under {GRAD_TOLERANCE:e}", report.max_rel_err);
    } else {
        let worst = report
            .per_tensor
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
            .expect("a network always has tensors");
        println!(
            "max relative error {:.3e} exceeds {GRAD_TOLERANCE:e} ({} entry {}: analytic {:.6e}, numeric {:.6e})",
            report.max_rel_err, worst.name, worst.worst_index, worst.analytic, worst.numeric
        );
    }
    Ok(ok)
}

// ---------------------------------------------------------------------------
// viz-weights
// ---------------------------------------------------------------------------

fn write_heatmap(map: &Heatmap, out: &Path, stem: &str) -> Result<()> {
    let csv = out.join(format!("{stem}.csv"));
    map.write_csv(&csv)?;
    announce(&csv);
    let pgm = out.join(format!("{stem}.pgm"));
    map.write_pgm(&pgm)?;
    announce(&pgm);
    Ok(())
}

pub fn viz_weights(
    checkpoint: &Path,
    layer: usize,
    gate: &str,
    group_average: bool,
    groups: Option<usize>,
    out: &Path,
) -> Result<()> {
    if !matches!(gate, "i" | "f" | "c" | "o") {
        bail!("unknown gate {gate:?}; expected one of i, f, c, o");
    }
    let ckpt = load_checkpoint(checkpoint)?;
    let bl = match ckpt.network.layers.get(layer) {
        None => bail!(
            "layer {layer} is out of range; the network has {} layers",
            ckpt.network.layers.len()
        ),
        Some(Layer::Feedforward(_)) => {
            bail!("layer {layer} is feedforward; gate input weights exist on recurrent layers only")
        }
        Some(Layer::Blstm(bl)) => bl,
    };

    fs::create_dir_all(out)?;
    for (dir_name, params) in [("fwd", &bl.fwd), ("bwd", &bl.bwd)] {
        let w = match gate {
            "i" => &params.w_xi,
            "f" => &params.w_xf,
            "c" => &params.w_xc,
            _ => &params.w_xo,
        };
        let map = Heatmap::of_magnitudes(
            w,
            index_labels("unit", w.rows()),
            index_labels("in", w.cols()),
        )?;
        write_heatmap(&map, out, &format!("layer{layer}_w_x{gate}_{dir_name}"))?;

        if group_average {
            let k = groups.or_else(|| ckpt.meta.reg.groups_for_layer(layer)).with_context(|| {
                format!(
                    "layer {layer} is not grouped by the checkpoint's penalty config; pass --groups"
                )
            })?;
            let partition = partition_groups(w.rows(), k)?;
            let rms = group_column_rms(w, &partition);
            let map = Heatmap::of_magnitudes(
                &rms,
                index_labels("group", rms.rows()),
                index_labels("in", rms.cols()),
            )?;
            write_heatmap(&map, out, &format!("layer{layer}_w_x{gate}_{dir_name}_groups"))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// cooccurrence
// ---------------------------------------------------------------------------

pub fn cooccurrence(
    data: &Path,
    class_filter: &[String],
    config: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let manifest = load_manifest(data)?;
    let (pre, cfg_out) = match config {
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            (cfg.preprocess, cfg.out_dir)
        }
        None => (PreprocessConfig::off(), None),
    };
    let out = effective_out(out, cfg_out.as_deref());
    let out = out.as_path();
    let selected: Vec<usize> = if class_filter.is_empty() {
        (0..manifest.classes.len()).collect()
    } else {
        class_filter
            .iter()
            .map(|name| {
                manifest.classes.iter().position(|c| c == name).with_context(|| {
                    format!("class {name:?} is not in the manifest (classes: {:?})", manifest.classes)
                })
            })
            .collect::<Result<_>>()?
    };

    let base = manifest_dir(data);
    fs::create_dir_all(out)?;
    for c in selected {
        let seqs: Vec<SkeletonSequence> = manifest
            .entries
            .iter()
            .filter(|e| e.label == c)
            .map(|e| load_sequence(&base.join(&e.path)).and_then(|s| preprocess(&s, &pre)))
            .collect::<colstm_core::error::Result<_>>()?;
        if seqs.is_empty() {
            bail!("class {:?} has no sequences in the manifest", manifest.classes[c]);
        }
        let cov = joint_covariance(&seqs)?;
        let labels = index_labels("joint", cov.rows());
        let map = Heatmap::of_magnitudes(&cov, labels.clone(), labels)?;
        write_heatmap(&map, out, &format!("cooccurrence_{}", sanitize(&manifest.classes[c])))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn synth(spec_path: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let text = fs::read_to_string(spec_path)
        .with_context(|| format!("reading {}", spec_path.display()))?;
    let mut spec: SynthSpec = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a valid synthesis spec", spec_path.display()))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let (manifest, sequences) = synth_generate(&spec)?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (entry, seq) in manifest.entries.iter().zip(&sequences) {
        save_sequence(seq, &out.join(&entry.path))?;
    }
    let manifest_path = out.join("manifest.jsonl");
    save_manifest(&manifest, &manifest_path)?;
    announce(&manifest_path);
    println!(
        "{} classes × {} samples per class: {} sequence files under {}",
        spec.classes,
        spec.samples_per_class,
        sequences.len(),
        out.display()
    );
    Ok(())
}
