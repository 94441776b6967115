// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use molsae::analysis::{summarize, Campaign, CampaignConfig, CampaignSummary};
use molsae::bridge::{Bridge, Transcript};
use molsae::fidelity::{evaluate_checkpoint, ReadoutProxy};
use molsae::io::{
    read_labels, read_shard, write_labels, write_shard, ColumnKind, EmbeddingShard, LabelMatrix, Manifest, Provenance,
    SaeCheckpoint, SaeConfig,
};
use molsae::probes::rank::spearman;
use molsae::probes::toxicity::{paired_t_test, toxicity_regression};
use molsae::probes::{fit_logistic_single, CvConfig};
use molsae::sae::{ablate_feature, LossConfig, Sae, SparseCode};
use molsae::similarity::{read_null, required_sample_size, write_null, FingerprintParams, NullDistribution, NullHeader};
use molsae::synthetic::{decaying_mixture, planted_dictionary};
use molsae::trainer::{fit, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn sample_f64(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn planted_recovery() -> Outcome {
    let start = Instant::now();
    let planted = planted_dictionary(64, 256, 4, 50_000, 0.0, 7).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        expansion_factor: 4,
        k: 4,
        lr: 1e-3,
        epochs: 40,
        batch_size: 256,
        dead_window: 20_000,
        seed: 1,
        ..Default::default()
    };
    let (ck, _) = fit(&planted.data, &cfg).map_err(|e| e.to_string())?;
    let columns: Vec<Vec<f32>> = (0..ck.config.dict_size).map(|i| ck.sae.decoder_column(i).to_vec()).collect();
    let cos = common::greedy_match(&planted.atoms, planted.n_atoms, &columns);
    let matched = cos.iter().filter(|&&c| c >= 0.9).count();
    let secs = start.elapsed().as_secs_f64();
    check(
        matched * 10 >= planted.n_atoms * 9 && secs <= 300.0,
        format!("{matched}/{} atoms matched at cosine >= 0.9 in {secs:.1}s", planted.n_atoms),
    )
}

fn sparsity_fidelity() -> Outcome {
    let m = decaying_mixture(256, 1024, 256, 12_000, 1.0, 3).map_err(|e| e.to_string())?;
    let train = m.data.select_rows(&(0..10_000).collect::<Vec<_>>());
    let eval = m.data.select_rows(&(10_000..12_000).collect::<Vec<_>>());
    let proxy = ReadoutProxy::new(256, 32, 1.0, 5);
    let mut fve = vec![];
    let mut dl = vec![];
    for k in [40, 80, 160] {
        let cfg = TrainConfig {
            expansion_factor: 4,
            k,
            lr: 1e-3,
            epochs: 5,
            batch_size: 256,
            dead_window: 20_000,
            seed: 1,
            ..Default::default()
        };
        let (ck, _) = fit(&train, &cfg).map_err(|e| e.to_string())?;
        let r = evaluate_checkpoint(&ck, &eval, &proxy).map_err(|e| e.to_string())?;
        fve.push(r.fve);
        dl.push(r.delta_loss);
    }
    let ok = fve[1] - fve[0] >= 0.005 && fve[2] - fve[1] >= 0.005 && dl[0] > dl[1] && dl[1] > dl[2];
    check(
        ok,
        format!(
            "FVE {:.4} < {:.4} < {:.4}; delta-loss proxy {:.5} > {:.5} > {:.5}",
            fve[0], fve[1], fve[2], dl[0], dl[1], dl[2]
        ),
    )
}

fn random_sae(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Sae<f64> {
    let mut v = |len: usize, s: f64| (0..len).map(|_| s * sample_f64(&mut *rng)).collect::<Vec<f64>>();
    Sae::from_parts(d, n, v(n * d, 0.7), v(n, 0.3), v(n * d, 0.7), v(d, 0.2)).expect("consistent shapes")
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (d, n, h) = (4, 8, 1e-6);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let sae = random_sae(&mut rng, d, n);
        let rows = rng.random_range(1..6);
        let batch: Vec<f64> = (0..rows * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dead: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let cfg = LossConfig {
            k: rng.random_range(1..=3),
            k_aux: rng.random_range(1..=4),
            auxk_alpha: 0.03125,
        };
        let res = sae.loss_and_grad(&batch, &cfg, &dead).map_err(|e| e.to_string())?;
        let mut analytic = vec![];
        let mut numeric = vec![];
        for t in 0..4 {
            let g = res.grads.iter()[t].1.to_vec();
            for p in 0..g.len() {
                let mut plus = sae.clone();
                plus.tensors_mut()[t].1[p] += h;
                let mut minus = sae.clone();
                minus.tensors_mut()[t].1[p] -= h;
                let lp = plus.forward_loss(&batch, &cfg, &dead).map_err(|e| e.to_string())?.total;
                let lm = minus.forward_loss(&batch, &cfg, &dead).map_err(|e| e.to_string())?.total;
                numeric.push((lp - lm) / (2.0 * h));
            }
            analytic.extend(g);
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(diff / scale);
    }
    check(worst <= 1e-4, format!("worst relative error {worst:.2e} over 100 points"))
}

fn probe_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let len = rng.random_range(3..80);
        let levels = rng.random_range(2..20) as f64;
        let x: Vec<f64> = (0..len).map(|_| (rng.random::<f64>() * levels).floor()).collect();
        let y: Vec<f64> = (0..len).map(|_| rng.random::<f64>() * 3.0 - 1.0).collect();
        let oracle = common::spearman_oracle(&x, &y);
        match spearman(&x, &y) {
            Some(r) => worst = worst.max((r - oracle).abs()),
            None if oracle.is_nan() => {}
            None => return Err(format!("spearman undefined where oracle gives {oracle}")),
        }
    }
    let g1 = [0.7, -1.6, -0.2, -1.2, -0.1, 3.4, 3.7, 0.8, 0.0, 2.0];
    let g2 = [1.9, 0.8, 1.1, 0.1, -0.1, 4.4, 5.5, 1.6, 4.6, 3.4];
    let t = paired_t_test(&g1, &g2).map_err(|e| e.to_string())?;
    let t_ok = (t.t - (-4.0621)).abs() <= 1e-3 && t.df == 9.0 && (t.p - 0.002833).abs() <= 1e-3;

    let (n, cols) = (2000, 6);
    let x: Vec<f32> = (0..n * cols).map(|_| sample_f64(&mut rng) as f32).collect();
    let mut labels: Vec<bool> = x.chunks(cols).map(|r| r[0] + 0.5 * r[1] > 1.0).collect();
    labels.shuffle(&mut rng);
    let prevalence = labels.iter().filter(|&&y| y).count() as f64 / n as f64;
    let fit = toxicity_regression(&x, cols, &labels, &CvConfig::default()).map_err(|e| e.to_string())?;
    let auc = fit.aucpr_mean;
    let auc_ok = (auc - prevalence).abs() <= 0.05;
    check(
        worst <= 1e-10 && t_ok && auc_ok,
        format!(
            "spearman max deviation {worst:.1e}; t = {:.4}, df = {}, p = {:.6}; shuffled AUCpr {auc:.4} at prevalence {prevalence:.4}",
            t.t, t.df, t.p
        ),
    )
}

fn planted_detection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 2000;
    let positives = n / 4;
    let mut labels: Vec<bool> = (0..n).map(|i| i < positives).collect();
    labels.shuffle(&mut rng);
    let mut planted: Vec<f64> = labels.iter().map(|&y| y as u8 as f64).collect();
    for i in rand::seq::index::sample(&mut rng, n, n / 20) {
        planted[i] = 1.0 - planted[i];
    }
    let cv = CvConfig {
        seed: 9,
        ..Default::default()
    };
    let planted_f1 = fit_logistic_single(&planted, &labels, &cv).map_err(|e| e.to_string())?.max_f1;
    let mut noise_best = 0.0f64;
    for _ in 0..20 {
        let x: Vec<f64> = (0..n).map(|_| sample_f64(&mut rng)).collect();
        noise_best = noise_best.max(fit_logistic_single(&x, &labels, &cv).map_err(|e| e.to_string())?.max_f1);
    }
    check(
        planted_f1 >= 0.9 && planted_f1 >= 2.0 * noise_best,
        format!("planted max F1 {planted_f1:.3}, best of 20 noise variables {noise_best:.3} (prevalence 0.25)"),
    )
}

fn sample_size() -> Outcome {
    let n = required_sample_size(2.576, 0.062, 0.0001).map_err(|e| e.to_string())?;
    check((2_500_000..=2_650_000).contains(&n), format!("required pairs {n}"))
}

fn steering_linearity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (d, n, k) = (32, 128, 8);
    let mut v = |len: usize| (0..len).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f32>>();
    let sae = Sae::from_parts(d, n, v(n * d), v(n), v(n * d), v(d)).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut identity = true;
    for _ in 0..1000 {
        let idx = rand::seq::index::sample(&mut rng, n, k);
        let entries: Vec<(u32, f32)> = idx
            .iter()
            .enumerate()
            .map(|(j, i)| (i as u32, if j == 0 { 0.0 } else { rng.random_range(0.0f32..2.0) }))
            .collect();
        let code = SparseCode::new(n, entries).map_err(|e| e.to_string())?;
        let base = sae.decode(&code).map_err(|e| e.to_string())?;
        for (i, value) in code.iter() {
            let ablated = sae.decode(&ablate_feature(&code, i)).map_err(|e| e.to_string())?;
            let col = sae.decoder_column(i as usize);
            let scale = base.iter().chain(&ablated).fold(1.0f64, |m, &x| m.max((x as f64).abs()));
            for j in 0..d {
                let delta = ablated[j] as f64 - base[j] as f64;
                worst = worst.max((delta + value as f64 * col[j] as f64).abs() / scale);
            }
            if value == 0.0 {
                identity &= ablated.iter().zip(&base).all(|(a, b)| a.to_bits() == b.to_bits());
            }
        }
        let absent = (0..n as u32).find(|i| code.indices().binary_search(i).is_err()).expect("k < n");
        let same = ablate_feature(&code, absent);
        let decoded = sae.decode(&same).map_err(|e| e.to_string())?;
        identity &= same == code && decoded.iter().zip(&base).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    check(
        worst <= 1e-6 && identity,
        format!("max relative linearity error {worst:.2e}; inactive ablation bitwise identity: {identity}"),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_molsae"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let count = 300;
    let data = planted_dictionary(16, 48, 3, count, 0.01, 4).map_err(|e| e.to_string())?;
    let manifest = Manifest::synthetic("acceptance", "m", count);
    write_shard(&data.data, &manifest, &dir.join("data.saev")).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let first: Vec<bool> = (0..count).map(|i| data.data.row(i)[0] > 0.1).collect();
    let mut subs = vec![];
    for i in 0..count {
        subs.extend([first[i], data.data.row(i)[1] > 0.2, rng.random_bool(0.1)]);
    }
    let subs = LabelMatrix::binary(vec!["a".into(), "b".into(), "c".into()], Provenance::Smarts, count, subs)
        .map_err(|e| e.to_string())?;
    write_labels(&subs, &dir.join("subs.sael")).map_err(|e| e.to_string())?;
    let mut cells = vec![];
    for i in 0..count {
        let r = data.data.row(i);
        cells.extend([Some(r[2] as f64), Some((r[3] * r[4]) as f64), (i % 7 != 0).then(|| rng.random::<f64>())]);
    }
    let desc = LabelMatrix::new(
        vec!["x".into(), "y".into(), "z".into()],
        vec![ColumnKind::Continuous; 3],
        Provenance::Descriptor,
        count,
        cells,
    )
    .map_err(|e| e.to_string())?;
    write_labels(&desc, &dir.join("desc.sael")).map_err(|e| e.to_string())?;
    let tox = LabelMatrix::binary(vec!["tox".into()], Provenance::Toxicity, count, first).map_err(|e| e.to_string())?;
    write_labels(&tox, &dir.join("tox.sael")).map_err(|e| e.to_string())?;
    let config = serde_json::json!({
        "seed": 3,
        "data": {
            "train": "data.saev", "eval": "data.saev", "checkpoint": "ck/checkpoint.saec",
            "substructures": "subs.sael", "descriptors": "desc.sael", "toxicity": "tox.sael"
        },
        "train": { "epochs": 10, "batch_size": 32, "expansion_factor": 2, "k": 3, "lr": 0.002, "dead_window": 3000 },
        "probes": { "folds": 3, "pca_components": 4, "nmf_components": 4, "nmf_max_iter": 100, "redundancy_pairs": 200 }
    });
    let cfg_path = dir.join("run.json");
    std::fs::write(&cfg_path, serde_json::to_vec(&config).unwrap()).map_err(|e| e.to_string())?;
    let cfg = cfg_path.to_str().unwrap();
    run_cli(&["train", "--config", cfg, "--out", dir.join("ck").to_str().unwrap(), "--threads", "1"])?;
    let commands = ["train", "probe-substructures", "probe-descriptors", "probe-toxicity"];
    let mut snapshots = vec![];
    for (run, threads) in [(0, "1"), (1, "1"), (2, "4"), (3, "4")] {
        let out = dir.join(format!("run{run}"));
        for c in commands {
            run_cli(&[c, "--config", cfg, "--out", out.to_str().unwrap(), "--threads", threads])?;
        }
        snapshots.push(dir_bytes(&out));
    }
    let files = snapshots[0].len();
    let same = snapshots.windows(2).all(|w| w[0] == w[1]);
    check(
        same && files >= 8,
        format!("{files} output files identical across 2 runs x threads {{1,4}}: {same}"),
    )
}

fn round_trip<T>(
    dir: &Path,
    ext: &str,
    make: &mut dyn FnMut(usize) -> T,
    write: &dyn Fn(&T, &Path) -> molsae::Result<()>,
    read: &dyn Fn(&Path) -> molsae::Result<T>,
) -> Result<(), String> {
    for i in 0..100 {
        let value = make(i);
        let a = dir.join(format!("a{i}.{ext}"));
        let b = dir.join(format!("b{i}.{ext}"));
        write(&value, &a).map_err(|e| e.to_string())?;
        let back = read(&a).map_err(|e| format!("{ext} #{i}: {e}"))?;
        write(&back, &b).map_err(|e| e.to_string())?;
        if std::fs::read(&a).unwrap() != std::fs::read(&b).unwrap() {
            return Err(format!("{ext} instance {i} changed on rewrite"));
        }
    }
    Ok(())
}

fn format_round_trips() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut shards = |_: usize| {
        let d = rng.random_range(1..20);
        let count = rng.random_range(0..30);
        let data: Vec<f32> = (0..d * count).map(|_| f32::from_bits(rng.random::<u32>() & 0xbf7f_ffff)).collect();
        let shard = EmbeddingShard::new(d, data).expect("finite values");
        (shard, Manifest::synthetic("rt", "r", count))
    };
    round_trip(
        dir,
        "saev",
        &mut shards,
        &|(s, m), p| write_shard(s, m, p),
        &|p| read_shard(p),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(405);
    let mut ckpts = |i: usize| {
        let d = rng.random_range(1..12);
        let e = rng.random_range(1..4);
        let n = d * e;
        let mut v = |len: usize| (0..len).map(|_| rng.random_range(-3.0f32..3.0)).collect::<Vec<f32>>();
        let sae = Sae::from_parts(d, n, v(n * d), v(n), v(n * d), v(d)).unwrap();
        let config = SaeConfig {
            d_model: d,
            dict_size: n,
            k: 1 + i % n,
            auxk_alpha: 0.03125,
            seed: i as u64,
        };
        SaeCheckpoint::new(config, sae, 0.5 + i as f32, i as u64 * 7).unwrap()
    };
    round_trip(
        dir,
        "saec",
        &mut ckpts,
        &|c, p| molsae::io::save_checkpoint(c, p),
        &|p| molsae::io::load_checkpoint(p),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(406);
    let mut labels = |i: usize| {
        let t = rng.random_range(0..5);
        let count = rng.random_range(0..40);
        let kinds: Vec<ColumnKind> = (0..t)
            .map(|_| if rng.random_bool(0.5) { ColumnKind::Binary } else { ColumnKind::Continuous })
            .collect();
        let mut cells = vec![];
        for _ in 0..count {
            for k in &kinds {
                cells.push(match k {
                    ColumnKind::Binary => Some(rng.random_range(0..2) as f64),
                    ColumnKind::Continuous => rng.random_bool(0.8).then(|| rng.random_range(-1e6..1e6)),
                });
            }
        }
        let provenance = [Provenance::Smarts, Provenance::Descriptor, Provenance::Toxicity, Provenance::Bioactivity][i % 4];
        LabelMatrix::new((0..t).map(|j| format!("target {j} ü")).collect(), kinds, provenance, count, cells).unwrap()
    };
    round_trip(dir, "sael", &mut labels, &|l, p| write_labels(l, p), &|p| read_labels(p))?;

    let mut rng = ChaCha8Rng::seed_from_u64(407);
    let mut nulls = |i: usize| {
        let len = rng.random_range(0..500);
        let samples: Vec<f32> = (0..len).map(|_| rng.random::<f32>()).collect();
        let header = NullHeader {
            seed: rng.random(),
            n_pairs: len as u64,
            molecules: rng.random_range(2..10_000),
            params: FingerprintParams {
                radius: 1 + i as u32 % 3,
                nbits: 1024 << (i % 3),
                chirality: i.is_multiple_of(2),
            },
            mean: rng.random(),
            sd: rng.random::<f64>() / 3.0,
        };
        NullDistribution::from_parts(header, samples).unwrap()
    };
    round_trip(dir, "saen", &mut nulls, &|n, p| write_null(n, p), &|p| read_null(p))?;
    Ok("100 shards, 100 checkpoints, 100 label matrices, 100 nulls rewrite byte-identically".into())
}

fn campaign_replay() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let vocab = common::fake_bridge::vocabulary(150);
    let dim = 8;
    let rows: Vec<Vec<f32>> = vocab.iter().map(|s| common::fake_bridge::embed_one(s, dim)).collect();
    let data = EmbeddingShard::from_rows(&rows).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        expansion_factor: 2,
        k: 3,
        lr: 3e-3,
        epochs: 30,
        batch_size: 32,
        dead_window: 3000,
        seed: 2,
        ..Default::default()
    };
    let (ck, _) = fit(&data, &cfg).map_err(|e| e.to_string())?;
    let codes = ck.encode_raw_batch(data.data()).map_err(|e| e.to_string())?;
    let ccfg = CampaignConfig {
        max_molecules: 6,
        batch_rows: 20,
        seed: 4,
    };
    let features = Campaign::features(&ck, &codes, &vocab, None, &ccfg).map_err(|e| e.to_string())?;
    let neurons = Campaign::neurons(&data, &vocab, None, &ccfg).map_err(|e| e.to_string())?;

    let run = |bridge: &mut Bridge, campaign: &Campaign, sub: &str| -> Result<CampaignSummary, String> {
        let work = tmp.path().join(sub);
        std::fs::create_dir_all(&work).unwrap();
        let mut out = vec![];
        campaign.run(bridge, &work, 0, ccfg.batch_rows, &mut out).map_err(|e| e.to_string())?;
        Ok(summarize(&out))
    };

    let mut live = Bridge::new(Box::new(common::fake_bridge::FakeBridge::new(&vocab, dim, 0.8)));
    live.start_recording();
    let live_f = run(&mut live, &features, "live")?;
    let live_n = run(&mut live, &neurons, "live")?;
    let transcript = live.take_transcript().expect("recording");
    let path = tmp.path().join("session.jsonl");
    transcript.save(&path).map_err(|e| e.to_string())?;

    let mut replay = Bridge::replay(Transcript::load(&path).map_err(|e| e.to_string())?);
    let rep_f = run(&mut replay, &features, "replay")?;
    let rep_n = run(&mut replay, &neurons, "replay")?;
    let counts = |s: &CampaignSummary| (s.original, s.steered, s.invalid);
    let lev = |s: &CampaignSummary| -> Vec<(Option<u64>, Option<u64>)> {
        s.interventions
            .iter()
            .map(|i| (i.levenshtein_mean.map(f64::to_bits), i.levenshtein_sd.map(f64::to_bits)))
            .collect()
    };
    let same = live_f == rep_f && live_n == rep_n && lev(&live_f) == lev(&rep_f) && lev(&live_n) == lev(&rep_n);
    check(
        same && live_f.steered + live_f.invalid > 0,
        format!(
            "features {:?} and neurons {:?} (original, steered, invalid) reproduced from {} exchanges: {same}",
            counts(&rep_f),
            counts(&rep_n),
            transcript.exchanges.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("planted-dictionary recovery", planted_recovery),
        ("sparsity-fidelity monotonicity", sparsity_fidelity),
        ("gradient check", gradient_check),
        ("probe oracles", probe_oracles),
        ("planted substructure detection", planted_detection),
        ("sample-size formula", sample_size),
        ("steering linearity", steering_linearity),
        ("determinism", determinism),
        ("format round trips", format_round_trips),
        ("campaign replay", campaign_replay),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
