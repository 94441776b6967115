// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{DeltaLossSource, PlotKind, RunConfig};
use super::CliError;
use crate::analysis::{self, Campaign, CampaignSummary, FeatureStats, SteeringOutcome};
use crate::bridge::{Bridge, Transcript};
use crate::error::{Error, Result};
use crate::fidelity::{self, DecodeRecord, ErrorTaxonomy, FidelityReport, ReadoutProxy};
use crate::io::{
    self, load_checkpoint, manifest_path, read_labels, read_shard, write_shard, ColumnKind,
    EmbeddingShard, LabelMatrix, Manifest, Provenance, SaeCheckpoint,
};
use crate::probes::{self, decomposition, rank, toxicity};
use crate::sae::SparseCode;
use crate::similarity::{self, Fingerprint, NullDistribution};
use crate::trainer::{self, SweepReport};

type CmdResult<T> = std::result::Result<T, CliError>;

/// Output directory plus the list of files written so far.
struct Out<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl<'a> Out<'a> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn note(&mut self, name: &str) {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
    }

    fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if let Some(parent) = self.path(name).parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        io::write_file(&self.path(name), bytes)?;
        self.note(name);
        Ok(())
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        self.bytes(name, text.as_bytes())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.bytes(name, &bytes)
    }
}

fn need<'p>(p: &'p Option<PathBuf>, key: &str) -> CmdResult<&'p Path> {
    p.as_deref()
        .ok_or_else(|| CliError::Usage(format!("`{key}` must be set in the config for this command")))
}

pub(super) fn dispatch(name: &str, cfg: &RunConfig, dir: &Path) -> CmdResult<Vec<String>> {
    let mut out = Out { dir, written: vec![] };
    match name {
        "embed" => embed(cfg, &mut out)?,
        "train" => train(cfg, &mut out)?,
        "sweep" => sweep(cfg, &mut out)?,
        "eval-fidelity" => eval_fidelity(cfg, &mut out)?,
        "landscape" => landscape(cfg, &mut out)?,
        "probe-substructures" => probe_substructures(cfg, &mut out)?,
        "probe-descriptors" => probe_descriptors(cfg, &mut out)?,
        "probe-toxicity" => probe_toxicity(cfg, &mut out)?,
        "steer-features" => steer(cfg, &mut out, true)?,
        "steer-neurons" => steer(cfg, &mut out, false)?,
        "tanimoto-null" => tanimoto_null(cfg, &mut out)?,
        "export-plots" => export_plots(cfg, &mut out)?,
        other => return Err(CliError::Usage(format!("unknown command {other}"))),
    }
    Ok(out.written)
}

/// Runs `f` with a bridge built from the config, saving the transcript when
/// recording is enabled, whether or not `f` succeeds.
fn with_bridge<T>(cfg: &RunConfig, out: &mut Out, f: impl FnOnce(&mut Bridge, &mut Out) -> CmdResult<T>) -> CmdResult<T> {
    let mut bridge = match &cfg.bridge.replay {
        Some(path) => Bridge::replay(Transcript::load(path)?),
        None if cfg.bridge.command.is_empty() => {
            return Err(CliError::Usage("this command needs `bridge.command` or `bridge.replay`".into()))
        }
        None => Bridge::spawn(&cfg.bridge.command)?,
    };
    if cfg.bridge.record {
        bridge.start_recording();
    }
    let result = f(&mut bridge, out);
    if let Some(t) = bridge.take_transcript() {
        out.text("bridge_transcript.jsonl", &t.to_jsonl())?;
    }
    result
}

/// A shard restricted to rows without an embedding error.
struct Dataset {
    path: PathBuf,
    full: EmbeddingShard,
    manifest: Manifest,
    valid: Vec<usize>,
    data: EmbeddingShard,
}

impl Dataset {
    fn load(path: &Path) -> Result<Self> {
        let (full, manifest) = read_shard(path)?;
        let valid: Vec<usize> = manifest.valid_rows().collect();
        if valid.is_empty() {
            return Err(Error::EmptyData(format!("{} has no valid rows", path.display())));
        }
        let data = full.select_rows(&valid);
        Ok(Self {
            path: path.to_path_buf(),
            full,
            manifest,
            valid,
            data,
        })
    }

    fn smiles(&self) -> Vec<String> {
        self.valid.iter().map(|&r| self.manifest.records[r].smiles.clone()).collect()
    }

    /// Label rows aligned with the valid rows.
    fn labels(&self, path: &Path) -> Result<LabelMatrix> {
        let labels = read_labels(path)?;
        if labels.count() != self.full.count() {
            return Err(Error::Shape(format!(
                "{} has {} rows, the shard has {}",
                path.display(),
                labels.count(),
                self.full.count()
            )));
        }
        Ok(labels.select_rows(&self.valid))
    }
}

fn dense_codes(codes: &[SparseCode<f32>]) -> Vec<f32> {
    codes.iter().flat_map(|c| c.to_dense()).collect()
}

fn checkpoint_and_eval(cfg: &RunConfig) -> CmdResult<(SaeCheckpoint, Dataset)> {
    let ck = load_checkpoint(need(&cfg.data.checkpoint, "data.checkpoint")?)?;
    let eval = Dataset::load(need(&cfg.data.eval, "data.eval")?)?;
    if eval.data.d_model() != ck.d_model() {
        return Err(Error::Shape(format!(
            "eval d_model {} differs from checkpoint {}",
            eval.data.d_model(),
            ck.d_model()
        ))
        .into());
    }
    Ok((ck, eval))
}

fn read_smiles(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let smiles: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if smiles.is_empty() {
        return Err(Error::EmptyData(format!("{} lists no molecules", path.display())));
    }
    Ok(smiles)
}

#[derive(Serialize)]
struct EmbedReport {
    molecules: usize,
    embedded: usize,
    failed: usize,
    curated: bool,
    substructure_patterns: usize,
    descriptors: usize,
}

fn embed(cfg: &RunConfig, out: &mut Out) -> CmdResult<()> {
    let mut smiles = read_smiles(need(&cfg.data.smiles, "data.smiles")?)?;
    with_bridge(cfg, out, |bridge, out| {
        if cfg.data.curate {
            smiles = bridge.curate(&smiles)?;
        }
        let shard_path = out.path("embeddings.saev");
        let outcome = bridge.embed(&smiles, &shard_path)?;
        let (shard, manifest) = read_shard(&shard_path)?;
        if shard.count() != smiles.len() || outcome.count != smiles.len() {
            return Err(Error::Shape(format!(
                "bridge embedded {} rows for {} molecules",
                shard.count(),
                smiles.len()
            ))
            .into());
        }
        out.note("embeddings.saev");
        out.note("embeddings.manifest.jsonl");
        let n = smiles.len();
        let patterns = &cfg.probes.smarts;
        if !patterns.is_empty() {
            let smarts: Vec<String> = patterns.iter().map(|p| p.smarts.clone()).collect();
            let matrix = bridge.match_smarts(&smiles, &smarts)?;
            let mut cells = Vec::with_capacity(n * smarts.len());
            for (row, m) in matrix.into_iter().enumerate() {
                match m {
                    Some(v) => cells.extend(v),
                    None => {
                        log::warn!("row {row}: pattern matching failed, marking no matches");
                        cells.extend(std::iter::repeat_n(false, smarts.len()));
                    }
                }
            }
            let names = patterns.iter().map(|p| p.name.clone()).collect();
            let labels = LabelMatrix::binary(names, Provenance::Smarts, n, cells)?;
            out.bytes("substructures.sael", &labels.to_bytes())?;
        }
        let mut descriptor_count = 0;
        if cfg.probes.compute_descriptors {
            let table = bridge.descriptors(&smiles)?;
            descriptor_count = table.names.len();
            let kinds = vec![ColumnKind::Continuous; table.names.len()];
            let cells = table.values.into_iter().flatten().collect();
            let labels = LabelMatrix::new(table.names, kinds, Provenance::Descriptor, n, cells)?;
            out.bytes("descriptors.sael", &labels.to_bytes())?;
        }
        let embedded = manifest.valid_rows().count();
        out.json(
            "embed_report.json",
            &EmbedReport {
                molecules: n,
                embedded,
                failed: n - embedded,
                curated: cfg.data.curate,
                substructure_patterns: patterns.len(),
                descriptors: descriptor_count,
            },
        )?;
        Ok(())
    })
}

fn train(cfg: &RunConfig, out: &mut Out) -> CmdResult<()> {
    let data = Dataset::load(need(&cfg.data.train, "data.train")?)?;
    let (ck, report) = trainer::fit(&data.data, &cfg.train)?;
    out.bytes("checkpoint.saec", &ck.to_bytes())?;
    out.json("train_report.json", &report)?;
    out.text("loss_curve.csv", &report.loss_curve_csv())?;
    Ok(())
}

fn proxy_for(cfg: &RunConfig, eval: &EmbeddingShard) -> Result<ReadoutProxy> {
    let scale = match cfg.eval.proxy_input_scale {
        Some(s) => s,
        None => 1.0 / trainer::compute_normalizer(eval.data(), eval.d_model())? as f64,
    };
    Ok(ReadoutProxy::new(eval.d_model(), cfg.eval.proxy_classes, scale, cfg.seed))
}

/// ΔL from the bridge's model loss on every row, averaged over valid rows.
fn bridge_delta_loss(bridge: &mut Bridge, eval: &Dataset, recon_path: &Path) -> Result<f64> {
    let losses = bridge.model_loss(&eval.path, recon_path, &manifest_path(&eval.path), eval.full.count())?;
    let (o, r): (Vec<f64>, Vec<f64>) = eval.valid.iter().map(|&i| losses[i]).unzip();
    fidelity::delta_loss(&o, &r)
}

fn reconstruct_full(ck: &SaeCheckpoint, eval: &Dataset) -> Result<(Vec<SparseCode<f32>>, EmbeddingShard)> {
    let (codes, x_hat) = fidelity::reconstruct(ck, &eval.full)?;
    Ok((codes, EmbeddingShard::new(eval.full.d_model(), x_hat)?))
}

fn sweep(cfg: &RunConfig, out: &mut Out) -> CmdResult<()> {
    let train = Dataset::load(need(&cfg.data.train, "data.train")?)?;
    let eval = Dataset::load(need(&cfg.data.eval, "data.eval")?)?;
    let proxy = proxy_for(cfg, &eval.data)?;
    let grid = trainer::grid(&cfg.train, &cfg.eval.expansions, &cfg.eval.ks);
    let (mut report, ckpts) = trainer::sweep(&train.data, &grid, &eval.data, &proxy)?;
    if cfg.eval.delta_loss == DeltaLossSource::Bridge {
        with_bridge(cfg, out, |bridge, out| {
            let recon_path = out.path("sweep_reconstruction.saev");
            for (row, ck) in report.rows.iter_mut().zip(&ckpts) {
                let Some(ck) = ck else { continue };
                let (_, recon) = reconstruct_full(ck, &eval)?;
                write_shard(&recon, &eval.manifest, &recon_path)?;
                let dl = bridge_delta_loss(bridge, &eval, &recon_path);
                let _ = std::fs::remove_file(&recon_path);
                let _ = std::fs::remove_file(manifest_path(&recon_path));
                row.delta_loss = Some(dl?);
            }
            Ok(())
        })?;
        report.frontier = trainer::pareto_frontier(&report.rows);
    }
    if cfg.eval.save_checkpoints {
        for (cell, ck) in grid.iter().zip(&ckpts) {
            if let Some(ck) = ck {
                out.bytes(
                    &format!("checkpoints/e{}_k{}.saec", cell.expansion_factor, cell.k),
                    &ck.to_bytes(),
                )?;
            }
        }
    }
    out.text("sweep.csv", &report.to_csv())?;
    out.json("sweep.json", &report)?;
    Ok(())
}

fn eval_fidelity(cfg: &RunConfig, out: &mut Out) -> CmdResult<()> {
    let (ck, eval) = checkpoint_and_eval(cfg)?;
    let proxy = proxy_for(cfg, &eval.data)?;
    let base = fidelity::evaluate_checkpoint(&ck, &eval.data, &proxy)?;
    let mut report = FidelityReport {
        l2: base.l2,
        fraction_variance_explained: base.fve,
        fraction_alive: base.fraction_alive,
        delta_loss: base.delta_loss,
        delta_loss_source: "proxy".into(),
        functional: None,
    };
    let use_bridge = cfg.eval.delta_loss == DeltaLossSource::Bridge || cfg.eval.functional;
    if use_bridge {
        let taxonomy = match &cfg.eval.taxonomy {
            Some(p) => ErrorTaxonomy::load(p)?,
            None => ErrorTaxonomy::default(),
        };
        let (_, recon) = reconstruct_full(&ck, &eval)?;
        let recon_path = out.path("reconstructed.saev");
        write_shard(&recon, &eval.manifest, &recon_path)?;
        out.note("reconstructed.saev");
        out.note("reconstructed.manifest.jsonl");
        with_bridge(cfg, out, |bridge, out| {
            if cfg.eval.delta_loss == DeltaLossSource::Bridge {
                report.delta_loss = bridge_delta_loss(bridge, &eval, &recon_path)?;
                report.delta_loss_source = "bridge".into();
            }
            if cfg.eval.functional {
                let decoded = bridge.decode(&recon_path, eval.full.count())?;
                let decoded: Vec<_> = eval.valid.iter().map(|&i| decoded[i].clone()).collect();
                let originals = bridge.canonicalize(&eval.smiles())?;
                let ok: Vec<String> = decoded.iter().filter_map(|d| d.as_ref().ok().cloned()).collect();
                let mut canon = if ok.is_empty() { vec![] } else { bridge.canonicalize(&ok)? }.into_iter();
                let mut records = vec![];
                for (row, (orig, dec)) in originals.into_iter().zip(decoded).enumerate() {
                    let dec = dec.and_then(|_| canon.next().expect("one form per decoded row"));
                    match orig {
                        Ok(original) => records.push(DecodeRecord { original, decoded: dec }),
                        Err(e) => log::warn!("row {}: original does not canonicalize: {e}", eval.valid[row]),
                    }
                }
                let functional = fidelity::functional_fidelity(&records, &taxonomy);
                out.text("error_histogram.csv", &functional.histogram_csv())?;
                report.functional = Some(functional);
            }
            Ok(())
        })?;
    }
    out.json("fidelity.json", &report)?;
    Ok(())
}

fn landscape(cfg: &RunConfig, out: &mut Out) -> CmdResult<()> {
    let (ck, eval) = checkpoint_and_eval(cfg)?;
    let codes = ck.encode_raw_batch(eval.data.data())?;
    let stats = analysis::feature_landscape(&codes, ck.config.dict_size)?;
    out.text("landscape.csv", &analysis::landscape_csv(&stats))?;
    out.json("landscape.json", &stats)?;
    Ok(())
}

fn probe_substructures(cfg: &RunConfig, out: &mut Out) -> CmdResult<()> {
    let (ck, eval) = checkpoint_and_eval(cfg)?;
    let labels = eval.labels(need(&cfg.data.substructures, "data.substructures")?)?;
    let codes = ck.encode_raw_batch(eval.data.data())?;
    let features = dense_codes(&codes);
    let rows = probes::substructure_screen(
        &features,
        ck.config.dict_size,
        eval.data.data(),
        eval.data.d_model(),
        &labels,
        &cfg.cv(),
    )?;
    out.text("substructures.csv", &probes::screen_csv(&rows))?;
    out.json("substructures.json", &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct BaselineSummary {
    components: usize,
    summary: rank::CorrelationSummary,
    explained_variance_ratio: Option<Vec<f64>>,
    converged: Option<bool>,
    iterations: Option<usize>,
}

#[derive(Serialize)]
struct DescriptorReport {
    descriptors: Vec<String>,
    molecules: usize,
    features: rank::CorrelationSummary,
    neurons: rank::CorrelationSummary,
    pca: BaselineSummary,
    nmf: BaselineSummary,
    feature_redundancy: rank::Redundancy,
    neuron_redundancy: rank::Redundancy,
}

fn f64_columns(x: &[f64], cols: usize) -> Vec<rank::Column> {
    (0..cols)
        .map(|j| rank::Column::complete(x.chunks_exact(cols).map(|r| r[j]).collect()))
        .collect()
}

fn probe_descriptors(cfg: &RunConfig, out: &mut Out) -> CmdResult<()> {
    let (ck, eval) = checkpoint_and_eval(cfg)?;
    let labels = eval.labels(need(&cfg.data.descriptors, "data.descriptors")?)?;
    let p = &cfg.probes;
    let desc: Vec<rank::Column> = (0..labels.n_targets())
        .map(|j| rank::Column::from_options(&labels.column(j)))
        .collect();
    let summarize = |cols: &[rank::Column]| -> Result<rank::CorrelationSummary> {
        let m = rank::spearman_matrix(cols, &desc)?;
        Ok(rank::correlation_summary(&m, p.rho_threshold, p.alpha, p.top_n))
    };
    let n = ck.config.dict_size;
    let d = eval.data.d_model();
    let count = eval.data.count();
    let features = dense_codes(&ck.encode_raw_batch(eval.data.data())?);
    let feature_summary = summarize(&rank::columns_of(&features, n))?;
    let neuron_summary = summarize(&rank::columns_of(eval.data.data(), d))?;
    let x64: Vec<f64> = eval.data.data().iter().map(|&v| v as f64).collect();
    let pca_k = p.pca_components.unwrap_or(d);
    let pca = decomposition::pca_fit(&x64, count, d, pca_k)?;
    let nmf_r = p.nmf_components.unwrap_or(pca_k);
    let nmf = decomposition::nmf_fit(&x64, count, d, nmf_r, &cfg.nmf())?;
    if !nmf.converged {
        log::warn!("nmf stopped after {} iterations without converging", nmf.errors.len());
    }
    let report = DescriptorReport {
        descriptors: labels.targets().to_vec(),
        molecules: count,
        pca: BaselineSummary {
            components: pca_k,
            summary: summarize(&f64_columns(&pca.scores, pca_k))?,
            explained_variance_ratio: Some(pca.explained_variance_ratio.clone()),
            converged: None,
            iterations: None,
        },
        nmf: BaselineSummary {
            components: nmf_r,
            summary: summarize(&f64_columns(&nmf.w, nmf_r))?,
            explained_variance_ratio: None,
            converged: Some(nmf.converged),
            iterations: Some(nmf.errors.len()),
        },
        feature_redundancy: rank::pairwise_redundancy(&features, n, p.redundancy_pairs, cfg.seed)?,
        neuron_redundancy: rank::pairwise_redundancy(eval.data.data(), d, p.redundancy_pairs, cfg.seed)?,
        features: feature_summary,
        neurons: neuron_summary,
    };
    let mut csv = String::from(
        "descriptor,features_significant,features_unfiltered,neurons_significant,neurons_unfiltered,pca_significant,nmf_significant\n",
    );
    for (j, name) in report.descriptors.iter().enumerate() {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            name,
            report.features.counts_significant[j],
            report.features.counts_unfiltered[j],
            report.neurons.counts_significant[j],
            report.neurons.counts_unfiltered[j],
            report.pca.summary.counts_significant[j],
            report.nmf.summary.counts_significant[j]
        )
        .unwrap();
    }
    out.text("descriptor_counts.csv", &csv)?;
    out.json("descriptors.json", &report)?;
    Ok(())
}

#[derive(Serialize)]
struct ModelOutcome {
    result: Option<toxicity::ToxicityResult>,
    error: Option<String>,
    trace: Option<Vec<f64>>,
}

impl From<Result<toxicity::ToxicityResult>> for ModelOutcome {
    fn from(r: Result<toxicity::ToxicityResult>) -> Self {
        match r {
            Ok(result) => Self {
                result: Some(result),
                error: None,
                trace: None,
            },
            Err(e) => {
                let trace = match &e {
                    Error::NotConverged { trace, .. } => Some(trace.clone()),
                    _ => None,
                };
                Self {
                    result: None,
                    error: Some(e.to_string()),
                    trace,
                }
            }
        }
    }
}

#[derive(Serialize)]
struct ToxicityReport {
    label: String,
    molecules: usize,
    features: ModelOutcome,
    neurons: ModelOutcome,
    /// Paired test of per-fold AUCpr, features minus neurons.
    fold_t_test: Option<toxicity::TTest>,
}

fn probe_toxicity(cfg: &RunConfig, out: &mut Out) -> CmdResult<()> {
    let (ck, eval) = checkpoint_and_eval(cfg)?;
    let labels = eval.labels(need(&cfg.data.toxicity, "data.toxicity")?)?;
    let col = match &cfg.probes.toxicity_column {
        Some(name) => labels
            .column_index(name)
            .ok_or_else(|| CliError::Usage(format!("label column {name} not found")))?,
        None if labels.n_targets() > 0 => 0,
        None => return Err(Error::EmptyData("toxicity labels have no columns".into()).into()),
    };
    let ys = labels.binary_column(col)?;
    let features = dense_codes(&ck.encode_raw_batch(eval.data.data())?);
    let cv = cfg.cv();
    let f = ModelOutcome::from(toxicity::toxicity_regression(&features, ck.config.dict_size, &ys, &cv));
    let n = ModelOutcome::from(toxicity::toxicity_regression(eval.data.data(), eval.data.d_model(), &ys, &cv));
    let fold_t_test = match (&f.result, &n.result) {
        (Some(a), Some(b)) => Some(toxicity::paired_t_test(&a.aucpr_folds, &b.aucpr_folds)?),
        _ => None,
    };
    out.json(
        "toxicity.json",
        &ToxicityReport {
            label: labels.targets()[col].clone(),
            molecules: ys.len(),
            features: f,
            neurons: n,
            fold_t_test,
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct CampaignCursor {
    cursor: usize,
    interventions: usize,
    outcomes_written: usize,
    error: String,
}

fn steer(cfg: &RunConfig, out: &mut Out, features: bool) -> CmdResult<()> {
    let prefix = if features { "feature_steering" } else { "neuron_steering" };
    let (ck, eval) = if features {
        let (ck, eval) = checkpoint_and_eval(cfg)?;
        (Some(ck), eval)
    } else {
        (None, Dataset::load(need(&cfg.data.eval, "data.eval")?)?)
    };
    let originals = eval.smiles();
    let codes = match &ck {
        Some(ck) => ck.encode_raw_batch(eval.data.data())?,
        None => vec![],
    };
    let campaign = match &ck {
        Some(ck) => Campaign::features(ck, &codes, &originals, cfg.steering.features.as_deref(), &cfg.campaign())?,
        None => Campaign::neurons(&eval.data, &originals, cfg.steering.neurons.as_deref(), &cfg.campaign())?,
    };
    let total = campaign.tasks().len();
    if cfg.steering.start > total {
        return Err(CliError::Usage(format!(
            "steering.start {} exceeds the {total} planned interventions",
            cfg.steering.start
        )));
    }
    let mut outcomes: Vec<SteeringOutcome> = vec![];
    let run = with_bridge(cfg, out, |bridge, out| {
        campaign
            .run(bridge, out.dir, cfg.steering.start, cfg.steering.batch_rows, &mut outcomes)
            .map_err(CliError::from)
    });
    for o in &mut outcomes {
        o.molecule = eval.valid[o.molecule];
    }
    out.text(&format!("{prefix}_outcomes.csv"), &analysis::outcomes_csv(&outcomes))?;
    if let Err(CliError::Run(Error::CampaignAborted { cursor, source })) = &run {
        out.json(
            &format!("{prefix}_cursor.json"),
            &CampaignCursor {
                cursor: *cursor,
                interventions: total,
                outcomes_written: outcomes.len(),
                error: source.to_string(),
            },
        )?;
    }
    run?;
    let summary = analysis::summarize(&outcomes);
    out.text(&format!("{prefix}_scatter.csv"), &analysis::steering_scatter_csv(&summary))?;
    out.json(&format!("{prefix}_summary.json"), &summary)?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FingerprintFile {
    nbits: u32,
    fingerprints: Vec<Option<Vec<u32>>>,
}

#[derive(Serialize)]
struct NullReport {
    molecules: usize,
    pilot_pairs: usize,
    pilot_sd: f64,
    required_pairs: u64,
    n_pairs: usize,
    mean: f64,
    sd: f64,
    z: f64,
    epsilon: f64,
    coherent_features: Option<usize>,
    tested_features: Option<usize>,
}

fn load_fingerprints(cfg: &RunConfig, eval: Option<&Dataset>, out: &mut Out) -> CmdResult<Vec<Option<Fingerprint>>> {
    let params = cfg.similarity.fingerprint;
    let raw: Vec<Option<Vec<u32>>> = if let Some(path) = &cfg.data.fingerprints {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: FingerprintFile =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.column() as u64, e.to_string()))?;
        if file.nbits != params.nbits {
            return Err(Error::Shape(format!("fingerprints have {} bits, config says {}", file.nbits, params.nbits)).into());
        }
        match eval {
            Some(ev) if file.fingerprints.len() != ev.full.count() => {
                return Err(Error::Shape(format!(
                    "{} fingerprints for {} shard rows",
                    file.fingerprints.len(),
                    ev.full.count()
                ))
                .into())
            }
            Some(ev) => ev.valid.iter().map(|&i| file.fingerprints[i].clone()).collect(),
            None => file.fingerprints,
        }
    } else {
        let smiles = match eval {
            Some(ev) => ev.smiles(),
            None => read_smiles(need(&cfg.data.smiles, "data.smiles or data.eval")?)?,
        };
        with_bridge(cfg, out, |bridge, _| {
            Ok(bridge.fingerprint(&smiles, params.radius, params.nbits, params.chirality)?)
        })?
    };
    raw.into_iter()
        .map(|r| r.map(|bits| Fingerprint::from_unsorted(params.nbits, bits)).transpose())
        .collect::<Result<_>>()
        .map_err(CliError::from)
}

fn mean_pairwise_tanimoto(fps: &[&Fingerprint]) -> Result<f64> {
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..fps.len() {
        for j in i + 1..fps.len() {
            sum += similarity::tanimoto(fps[i], fps[j])?;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

fn tanimoto_null(cfg: &RunConfig, out: &mut Out) -> CmdResult<()> {
    let s = &cfg.similarity;
    let eval = match &cfg.data.eval {
        Some(p) => Some(Dataset::load(p)?),
        None => None,
    };
    let fps = load_fingerprints(cfg, eval.as_ref(), out)?;
    let usable: Vec<Fingerprint> = fps.iter().flatten().cloned().collect();
    let pilot = similarity::build_null(&usable, s.pilot_pairs, cfg.seed, s.fingerprint)?;
    let required = similarity::required_sample_size(s.z, pilot.header.sd, s.epsilon)?;
    let n_pairs = s.n_pairs.unwrap_or(required.max(1) as usize);
    let null = similarity::build_null(&usable, n_pairs, cfg.seed, s.fingerprint)?;
    out.bytes("null.saen", &null.to_bytes())?;
    out.text("tanimoto_histogram.csv", &null.histogram_csv(s.bins))?;

    let mut coherent = None;
    let mut tested = None;
    if let (Some(ck_path), Some(ev)) = (&cfg.data.checkpoint, &eval) {
        let ck = load_checkpoint(ck_path)?;
        let codes = ck.encode_raw_batch(ev.data.data())?;
        let n = ck.config.dict_size;
        let mut by_feature: Vec<Vec<(f32, usize)>> = vec![vec![]; n];
        for (row, c) in codes.iter().enumerate() {
            for (f, v) in c.iter() {
                if v > 0.0 && fps[row].is_some() {
                    by_feature[f as usize].push((v, row));
                }
            }
        }
        let mut csv = String::from("feature,molecules,mean_tanimoto,p_value\n");
        let (mut hits, mut count) = (0usize, 0usize);
        for (f, mut rows) in by_feature.into_iter().enumerate() {
            rows.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            rows.truncate(s.top_molecules);
            if rows.len() < 2 {
                continue;
            }
            let members: Vec<&Fingerprint> = rows.iter().map(|&(_, r)| fps[r].as_ref().expect("filtered")).collect();
            let m = mean_pairwise_tanimoto(&members)?;
            let p = null.empirical_p(m);
            count += 1;
            hits += (p < cfg.probes.alpha) as usize;
            writeln!(csv, "{f},{},{m:.9},{p:.9}", rows.len()).unwrap();
        }
        out.text("feature_similarity.csv", &csv)?;
        coherent = Some(hits);
        tested = Some(count);

        if let Some(tpath) = &cfg.data.targets {
            let text = std::fs::read_to_string(tpath).map_err(|e| Error::io(tpath, e))?;
            let all: Vec<BTreeSet<String>> =
                serde_json::from_str(&text).map_err(|e| Error::format(tpath, e.column() as u64, e.to_string()))?;
            if all.len() != ev.full.count() {
                return Err(Error::Shape(format!("{} target sets for {} shard rows", all.len(), ev.full.count())).into());
            }
            let targets: Vec<BTreeSet<String>> = ev.valid.iter().map(|&i| all[i].clone()).collect();
            let inter =
                similarity::target_set_intersection(&dense_codes(&codes), n, s.target_threshold, &targets, s.min_molecules)?;
            out.json("targets.json", &inter)?;
        }
    }
    out.json(
        "tanimoto_null.json",
        &NullReport {
            molecules: usable.len(),
            pilot_pairs: s.pilot_pairs,
            pilot_sd: pilot.header.sd,
            required_pairs: required,
            n_pairs,
            mean: null.header.mean,
            sd: null.header.sd,
            z: s.z,
            epsilon: s.epsilon,
            coherent_features: coherent,
            tested_features: tested,
        },
    )?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.column() as u64, e.to_string()))
}

/// Sweep series: `expansion,k,fve,delta_loss`, failed cells left empty.
pub(crate) fn sweep_plot_csv(report: &SweepReport) -> String {
    let mut csv = String::from("expansion,k,fve,delta_loss\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in &report.rows {
        writeln!(csv, "{},{},{},{}", r.expansion_factor, r.k, opt(r.fve), opt(r.delta_loss)).unwrap();
    }
    csv
}

fn export_plots(cfg: &RunConfig, out: &mut Out) -> CmdResult<()> {
    let run_dir = cfg.data.run_dir.clone().unwrap_or_else(|| out.dir.to_path_buf());
    let kinds: BTreeSet<PlotKind> = cfg
        .data
        .plots
        .clone()
        .unwrap_or_else(|| PlotKind::ALL.to_vec())
        .into_iter()
        .collect();
    let steering = ["feature_steering_summary.json", "neuron_steering_summary.json"].map(|n| run_dir.join(n));
    let mut missing = vec![];
    for kind in &kinds {
        match kind {
            PlotKind::Landscape => missing.push(run_dir.join("landscape.json")),
            PlotKind::Sweep => missing.push(run_dir.join("sweep.json")),
            PlotKind::Tanimoto => missing.push(run_dir.join("null.saen")),
            PlotKind::Steering => {
                if !steering.iter().any(|p| p.exists()) {
                    missing.push(steering[0].clone());
                    missing.push(steering[1].clone());
                }
                continue;
            }
        }
        if missing.last().is_some_and(|p| p.exists()) {
            missing.pop();
        }
    }
    if !missing.is_empty() {
        let names: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
        return Err(Error::EmptyData(format!("missing inputs for export-plots: {}", names.join(", "))).into());
    }
    for kind in &kinds {
        match kind {
            PlotKind::Landscape => {
                let stats: Vec<FeatureStats> = read_json(&run_dir.join("landscape.json"))?;
                out.text("plots/landscape.csv", &analysis::landscape_csv(&stats))?;
            }
            PlotKind::Sweep => {
                let report: SweepReport = read_json(&run_dir.join("sweep.json"))?;
                out.text("plots/sweep.csv", &sweep_plot_csv(&report))?;
            }
            PlotKind::Steering => {
                let mut csv = String::new();
                for p in steering.iter().filter(|p| p.exists()) {
                    let summary: CampaignSummary = read_json(p)?;
                    let part = analysis::steering_scatter_csv(&summary);
                    let body = if csv.is_empty() { &part[..] } else { part.split_once('\n').map_or("", |x| x.1) };
                    csv.push_str(body);
                }
                out.text("plots/steering_scatter.csv", &csv)?;
            }
            PlotKind::Tanimoto => {
                let null: NullDistribution = similarity::read_null(&run_dir.join("null.saen"))?;
                out.text("plots/tanimoto_histogram.csv", &null.histogram_csv(cfg.similarity.bins))?;
            }
        }
    }
    Ok(())
}
