//! End-to-end commands behind the CLI: data generation, training,
//! evaluation with fusion, summarization, gradient checking, ablations.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::appearance::AppearanceEncoder;
use crate::config::RunConfig;
use crate::dataio::{self, FeatureRecord};
use crate::error::{Error, Result};
use crate::fusion::{self, ModalityHeads, ModalityScores};
use crate::metrics::{mean_f1, spearman_rc};
use crate::numerics::{grad_check, Adam, AdamConfig, ParamSet, Tape, Tensor};
use crate::report::{
    AblationArm, AblationSection, GradCheckEntry, ModalityRc, MuSweepRow, Report,
    VideoSummaryEntry,
};
use crate::summarizer::{self, generate_corpus};
use crate::tmccl::{self, tmccl_loss, MotionModel};
use crate::util::fnv1a;

/// Generate the synthetic record dataset (and, when `corpus_videos > 0`,
/// the summarization manifests) at the configured paths.
pub fn run_gen_data(cfg: &RunConfig, out_dir: &Path) -> Result<Report> {
    let start = Instant::now();
    let mut report = Report::new("gen-data", cfg.seed, cfg.echo());

    let records = dataio::generate_synthetic(&cfg.synthetic_config())?;
    if let Some(parent) = cfg.dataset_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    dataio::write_dataset(&cfg.dataset_path, &records)?;
    report.artifacts.insert(
        "dataset".into(),
        cfg.dataset_path.display().to_string(),
    );

    if cfg.corpus_videos > 0 {
        let manifests = generate_corpus(&cfg.synthetic_config(), &cfg.corpus_config())?;
        std::fs::create_dir_all(&cfg.manifest_dir)?;
        for m in &manifests {
            let path = cfg.manifest_dir.join(format!("{}.json", m.video_id));
            dataio::write_manifest(&path, m)?;
        }
        report.artifacts.insert(
            "manifests".into(),
            cfg.manifest_dir.display().to_string(),
        );
    }

    report.wall_clock_secs = start.elapsed().as_secs_f64();
    report.write(out_dir)?;
    Ok(report)
}

/// Train the motion encoder on the train split and save the model.
pub fn run_train(cfg: &RunConfig, out_dir: &Path) -> Result<Report> {
    let start = Instant::now();
    let mut report = Report::new("train", cfg.seed, cfg.echo());

    let records = dataio::load_dataset(&cfg.dataset_path)?;
    if records.is_empty() {
        return Err(Error::DegenerateData("dataset is empty".into()));
    }
    let (train, _val, _test) = dataio::split(&records, cfg.fractions(), cfg.seed)?;
    let outcome =
        tmccl::train_motion_encoder(&train, &cfg.train_config(), cfg.encoder_config(), cfg.use_tmccl)?;

    if let Some(parent) = cfg.model_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    outcome.model.save(&cfg.model_path)?;
    report
        .artifacts
        .insert("model".into(), cfg.model_path.display().to_string());
    report.loss_trace = Some(outcome.loss_trace);
    report.contrastive_trace = Some(outcome.contrastive_trace);

    report.wall_clock_secs = start.elapsed().as_secs_f64();
    report.write(out_dir)?;
    Ok(report)
}

/// The three per-modality branches trained during evaluation.
struct Branches {
    appearance: AppearanceEncoder,
    heads: ModalityHeads,
    params: ParamSet<f64>,
}

fn predict_modalities(
    branches: &Branches,
    rec: &FeatureRecord,
    f_m: &[f64],
) -> Result<ModalityScores> {
    let mut tape = Tape::new();
    let frames = tape.constant(&Tensor::from_rows(&rec.frames)?)?;
    let text = tape.constant_vector(rec.text.to_vec())?;
    let fm = tape.constant_vector(f_m.to_vec())?;
    let (f_ve, _alphas) = branches
        .appearance
        .forward(&mut tape, &branches.params, frames, text)?;
    let (sv, st, sm) = branches
        .heads
        .forward(&mut tape, &branches.params, f_ve, text, fm)?;
    Ok(ModalityScores {
        s_v: tape.item(sv)?,
        s_t: tape.item(st)?,
        s_m: tape.item(sm)?,
    })
}

fn train_branches(
    cfg: &RunConfig,
    train: &[FeatureRecord],
    train_fm: &[Vec<f64>],
    model: &MotionModel,
) -> Result<(Branches, Vec<f64>)> {
    let d_v = train[0].frames[0].len();
    let d_t = train[0].text.len();
    let app_cfg = cfg.appearance_config(d_v);
    app_cfg.validate()?;
    let appearance = AppearanceEncoder::new("app", app_cfg, d_t)?;
    let heads = ModalityHeads::new(
        "head",
        app_cfg.segment_dim(),
        d_t,
        model.encoder.cfg.embed_dim,
        cfg.head_hidden,
    );
    let mut params = ParamSet::new(cfg.seed ^ fnv1a("branches"));
    appearance.init(&mut params)?;
    heads.init(&mut params)?;

    let mut adam = Adam::new(AdamConfig {
        lr: cfg.eval_lr,
        ..Default::default()
    });
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ fnv1a("branch-order"));
    let mut trace = Vec::with_capacity(cfg.eval_epochs);

    for _epoch in 0..cfg.eval_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0.0;
        for batch in order.chunks(cfg.eval_batch.max(1)) {
            let mut tape = Tape::new();
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let rec = &train[i];
                let frames = tape.constant(&Tensor::from_rows(&rec.frames)?)?;
                let text = tape.constant_vector(rec.text.to_vec())?;
                let fm = tape.constant_vector(train_fm[i].to_vec())?;
                let (f_ve, _alphas) = appearance.forward(&mut tape, &params, frames, text)?;
                let (sv, st, sm) = heads.forward(&mut tape, &params, f_ve, text, fm)?;
                let gt = tape.constant_scalar(rec.st_score)?;
                let lv = tape.squared_error(sv, gt)?;
                let lt = tape.squared_error(st, gt)?;
                let lm = tape.squared_error(sm, gt)?;
                let sum = tape.add(lv, lt)?;
                losses.push(tape.add(sum, lm)?);
            }
            let all = tape.concat(&losses)?;
            let loss = tape.mean_all(all)?;
            epoch_loss += tape.item(loss)?;
            batches += 1.0;
            tape.backward_params(loss, &mut params)?;
            adam.step(&mut params, cfg.eval_lr)?;
        }
        trace.push(epoch_loss / batches);
    }

    Ok((
        Branches {
            appearance,
            heads,
            params,
        },
        trace,
    ))
}

fn motion_features(model: &MotionModel, records: &[FeatureRecord]) -> Result<Vec<Vec<f64>>> {
    records
        .iter()
        .map(|r| model.encoder.embed_value(&model.params, &r.motion_seq))
        .collect()
}

/// Full-model evaluation: train per-modality branches on the train split,
/// select fusion weights on validation, report fused test metrics.
pub fn run_eval(cfg: &RunConfig, out_dir: &Path) -> Result<Report> {
    let start = Instant::now();
    let mut report = Report::new("eval", cfg.seed, cfg.echo());

    let records = dataio::load_dataset(&cfg.dataset_path)?;
    let (train, val, test) = dataio::split(&records, cfg.fractions(), cfg.seed)?;
    if train.is_empty() || val.len() < 2 || test.len() < 2 {
        return Err(Error::DegenerateData(format!(
            "splits too small for evaluation: train {}, val {}, test {}",
            train.len(),
            val.len(),
            test.len()
        )));
    }
    let model = MotionModel::load(&cfg.model_path)?;

    let train_fm = motion_features(&model, &train)?;
    let val_fm = motion_features(&model, &val)?;
    let test_fm = motion_features(&model, &test)?;

    let (branches, trace) = train_branches(cfg, &train, &train_fm, &model)?;
    report.loss_trace = Some(trace);

    let val_scores: Vec<ModalityScores> = val
        .iter()
        .zip(&val_fm)
        .map(|(r, fm)| predict_modalities(&branches, r, fm))
        .collect::<Result<_>>()?;
    let val_gt: Vec<f64> = val.iter().map(|r| r.st_score).collect();
    let (weights, _val_rc) = fusion::select_weights(&val_scores, &val_gt, cfg.fusion_step)?;
    report.fusion_weights = Some(weights);

    let test_scores: Vec<ModalityScores> = test
        .iter()
        .zip(&test_fm)
        .map(|(r, fm)| predict_modalities(&branches, r, fm))
        .collect::<Result<_>>()?;
    let test_gt: Vec<f64> = test.iter().map(|r| r.st_score).collect();
    let fused: Vec<f64> = test_scores.iter().map(|&s| fusion::fuse(s, weights)).collect();
    report.metrics.st_rc = Some(spearman_rc(&fused, &test_gt)?);

    if test.iter().all(|r| r.lt_score.is_some()) {
        let lt_gt: Vec<f64> = test.iter().map(|r| r.lt_score.unwrap()).collect();
        report.metrics.lt_rc = spearman_rc(&fused, &lt_gt).ok();
    }

    let rc_of = |pick: fn(&ModalityScores) -> f64| -> Result<f64> {
        let preds: Vec<f64> = test_scores.iter().map(pick).collect();
        spearman_rc(&preds, &test_gt)
    };
    report.modality_st_rc = Some(ModalityRc {
        v: rc_of(|s| s.s_v)?,
        t: rc_of(|s| s.s_t)?,
        m: rc_of(|s| s.s_m)?,
    });

    report.wall_clock_secs = start.elapsed().as_secs_f64();
    report.write(out_dir)?;
    Ok(report)
}

/// Summarize every manifest in the configured directory with the trained
/// model, reporting per-video selections and the dataset mean F1.
pub fn run_summarize(cfg: &RunConfig, out_dir: &Path) -> Result<Report> {
    let start = Instant::now();
    let mut report = Report::new("summarize", cfg.seed, cfg.echo());

    let model = MotionModel::load(&cfg.model_path)?;
    let mut paths: Vec<_> = std::fs::read_dir(&cfg.manifest_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::DegenerateData(format!(
            "no manifests found under {}",
            cfg.manifest_dir.display()
        )));
    }

    let mut entries = Vec::with_capacity(paths.len());
    let mut evals = Vec::with_capacity(paths.len());
    for path in &paths {
        let manifest = dataio::load_manifest(path)?;
        let (selection, _rectified, eval) =
            summarizer::summarize(&manifest, &model, cfg.mu, cfg.budget_fraction)?;
        entries.push(VideoSummaryEntry {
            video_id: manifest.video_id.clone(),
            selected_clips: selection
                .selected
                .iter()
                .map(|&i| manifest.clips[i].clip_id.clone())
                .collect(),
            budget_frames: selection.budget_frames,
            selected_frames: selection.total_selected_frames,
            objective: selection.objective,
            value_shift: selection.value_shift,
            precision: eval.precision,
            recall: eval.recall,
            f1: eval.f1,
        });
        evals.push(eval);
    }
    report.metrics.f1 = Some(mean_f1(&evals));
    report.summaries = Some(entries);

    report.wall_clock_secs = start.elapsed().as_secs_f64();
    report.write(out_dir)?;
    Ok(report)
}

/// Thresholded finite-difference suite over every differentiable block.
/// Returns the report and whether every check passed.
pub fn run_grad_check(cfg: &RunConfig, out_dir: &Path) -> Result<(Report, bool)> {
    let start = Instant::now();
    let mut report = Report::new("grad-check", cfg.seed, cfg.echo());
    let entries = grad_check_suite(cfg.seed)?;
    let all_pass = entries.iter().all(|e| e.pass);
    report.grad_checks = Some(entries);
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    report.write(out_dir)?;
    Ok((report, all_pass))
}

/// The gradient checks behind the `grad-check` command, shared with the
/// acceptance suite.
pub fn grad_check_suite(seed: u64) -> Result<Vec<GradCheckEntry>> {
    const EPS: f64 = 1e-5;
    let mut entries: Vec<GradCheckEntry> = Vec::new();
    let mut push = |name: &str, threshold: f64, rep: crate::numerics::GradCheckReport| {
        entries.push(GradCheckEntry {
            op: name.to_string(),
            max_rel_error: rep.max_rel_error,
            threshold,
            pass: rep.max_rel_error < threshold,
        });
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a("grad-check"));
    let mut rand_tensor = |rows: usize, cols: usize| -> Result<Tensor<f64>> {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if rows == 1 {
            Tensor::vector(data)
        } else {
            Tensor::matrix(rows, cols, data)
        }
    };

    // linear: sum((x W + b)^2) over a 3x4 input
    {
        let mut ps = ParamSet::new(seed ^ 1);
        ps.get_or_create("w", &[4, 2], 4)?;
        ps.get_or_create("b", &[2], 4)?;
        let x = rand_tensor(3, 4)?;
        let rep = grad_check("linear", &ps, EPS, |tape, ps| {
            let xv = tape.constant(&x)?;
            let w = tape.param(ps, "w")?;
            let b = tape.param(ps, "b")?;
            let y = tape.linear(xv, w, Some(b))?;
            let sq = tape.mul(y, y)?;
            tape.sum_all(sq)
        })?;
        push("linear", 1e-6, rep);
    }

    // the same affine map at the top of the supported width range
    {
        let mut ps = ParamSet::new(seed ^ 2);
        ps.get_or_create("w", &[64, 8], 64)?;
        ps.get_or_zeros("b", &[8])?;
        let x = rand_tensor(8, 64)?;
        let rep = grad_check("linear_wide", &ps, EPS, |tape, ps| {
            let xv = tape.constant(&x)?;
            let w = tape.param(ps, "w")?;
            let b = tape.param(ps, "b")?;
            let y = tape.linear(xv, w, Some(b))?;
            let sq = tape.mul(y, y)?;
            tape.sum_all(sq)
        })?;
        push("linear_wide", 1e-4, rep);
    }

    // conv1d for every kernel size used by the local encoder
    for k in [2usize, 3, 4, 5] {
        let mut ps = ParamSet::new(seed ^ (10 + k as u64));
        ps.get_or_create("w", &[3, k, 4], 4 * k)?;
        ps.get_or_create("b", &[3], 4 * k)?;
        let x = rand_tensor(6, 4)?;
        let rep = grad_check(&format!("conv1d_k{k}"), &ps, EPS, |tape, ps| {
            let xv = tape.constant(&x)?;
            let w = tape.param(ps, "w")?;
            let b = tape.param(ps, "b")?;
            let y = tape.conv1d(xv, w, Some(b))?;
            let sq = tape.mul(y, y)?;
            tape.sum_all(sq)
        })?;
        push(&format!("conv1d_k{k}"), 1e-4, rep);
    }

    // bidirectional GRU over a short sequence
    {
        use crate::numerics::BiGruLayer;
        let layer = BiGruLayer::new("gru", 6, 4)?;
        let mut ps = ParamSet::new(seed ^ 21);
        layer.init(&mut ps)?;
        let x = rand_tensor(4, 6)?;
        let rep = grad_check("bigru", &ps, EPS, |tape, ps| {
            let xv = tape.constant(&x)?;
            let h = layer.forward(tape, ps, xv)?;
            let sq = tape.mul(h, h)?;
            tape.sum_all(sq)
        })?;
        push("bigru", 1e-4, rep);
    }

    // text-visual attention block (attention parameters only)
    {
        use crate::appearance::AppearanceConfig;
        let app_cfg = AppearanceConfig {
            d_v: 6,
            hidden: 3,
            channels: 3,
            l: 3,
            common_dim: 5,
        };
        let enc = AppearanceEncoder::new("app", app_cfg, 4)?;
        let mut full = ParamSet::new(seed ^ 22);
        enc.init(&mut full)?;
        let mut ps = ParamSet::new(seed ^ 22);
        for (path, t) in full.iter() {
            if path.contains(".attn.") {
                ps.insert(path, t.clone());
            }
        }
        let f_vm = rand_tensor(1, app_cfg.d_vm())?;
        let f_t = rand_tensor(1, 4)?;
        let probe = rand_tensor(1, app_cfg.segment_dim())?;
        let rep = grad_check("attention", &ps, EPS, |tape, ps| {
            let vm = tape.constant(&f_vm)?;
            let t = tape.constant(&f_t)?;
            let (f_ve, _alphas) = enc.attend(tape, ps, vm, t)?;
            let pv = tape.constant(&probe)?;
            tape.dot(f_ve, pv)
        })?;
        push("attention", 1e-4, rep);
    }

    // modality heads
    {
        let heads = ModalityHeads::new("head", 5, 4, 6, 4);
        let mut ps = ParamSet::new(seed ^ 23);
        heads.init(&mut ps)?;
        let fv = rand_tensor(1, 5)?;
        let ft = rand_tensor(1, 4)?;
        let fm = rand_tensor(1, 6)?;
        let rep = grad_check("modality_heads", &ps, EPS, |tape, ps| {
            let v = tape.constant(&fv)?;
            let t = tape.constant(&ft)?;
            let m = tape.constant(&fm)?;
            let (sv, st, sm) = heads.forward(tape, ps, v, t, m)?;
            let g1 = tape.constant_scalar(0.3)?;
            let g2 = tape.constant_scalar(0.7)?;
            let g3 = tape.constant_scalar(0.5)?;
            let e1 = tape.squared_error(sv, g1)?;
            let e2 = tape.squared_error(st, g2)?;
            let e3 = tape.squared_error(sm, g3)?;
            let s = tape.add(e1, e2)?;
            tape.add(s, e3)
        })?;
        push("modality_heads", 1e-4, rep);
    }

    // contrastive loss w.r.t. every embedding (normalized on the tape)
    {
        let mut ps = ParamSet::new(seed ^ 24);
        ps.get_or_create("target", &[6], 1)?;
        for i in 0..2 {
            ps.get_or_create(&format!("pos{i}"), &[6], 1)?;
        }
        for i in 0..3 {
            ps.get_or_create(&format!("neg{i}"), &[6], 1)?;
        }
        let rep = grad_check("tmccl_loss", &ps, EPS, |tape, ps| {
            let t_raw = tape.param(ps, "target")?;
            let t = tape.l2_normalize(t_raw)?;
            let mut pos = Vec::new();
            for i in 0..2 {
                let p = tape.param(ps, &format!("pos{i}"))?;
                pos.push(tape.l2_normalize(p)?);
            }
            let mut neg = Vec::new();
            for i in 0..3 {
                let n = tape.param(ps, &format!("neg{i}"))?;
                neg.push(tape.l2_normalize(n)?);
            }
            tmccl_loss(tape, t, &pos, &neg, 0.07)
        })?;
        push("tmccl_loss", 1e-4, rep);
    }

    Ok(entries)
}

/// Outcome of the two TMCCL arms on one seed.
struct ArmRun {
    motion_st_rc: f64,
}

fn run_tmccl_arm(cfg: &RunConfig, seed: u64, use_tmccl: bool) -> Result<ArmRun> {
    let mut synth = cfg.synthetic_config();
    synth.seed = seed;
    let records = dataio::generate_synthetic(&synth)?;
    let (train, _val, test) = dataio::split(&records, cfg.fractions(), seed)?;
    if test.len() < 2 {
        return Err(Error::DegenerateData("ablation test split too small".into()));
    }
    let mut tc = cfg.train_config();
    tc.seed = seed;
    let outcome = tmccl::train_motion_encoder(&train, &tc, cfg.encoder_config(), use_tmccl)?;
    let preds: Vec<f64> = test
        .iter()
        .map(|r| {
            outcome
                .model
                .encoder
                .score_value(&outcome.model.params, &r.motion_seq)
        })
        .collect::<Result<_>>()?;
    let gt: Vec<f64> = test.iter().map(|r| r.st_score).collect();
    Ok(ArmRun {
        motion_st_rc: spearman_rc(&preds, &gt)?,
    })
}

/// Paired TMCCL arms over the configured seeds plus the μ sweep on the
/// synthetic summarization corpus.
pub fn run_ablation(cfg: &RunConfig, out_dir: &Path) -> Result<Report> {
    let start = Instant::now();
    let mut report = Report::new("ablation", cfg.seed, cfg.echo());
    if cfg.ablation_seeds.is_empty() || cfg.ablation_arms.is_empty() {
        return Err(Error::Config(
            "ablation needs non-empty `ablation_seeds` and `ablation_arms`".into(),
        ));
    }

    let mut section = AblationSection::default();
    for arm_name in &cfg.ablation_arms {
        let use_tmccl = arm_name == "with_tmccl";
        let mut per_seed = Vec::with_capacity(cfg.ablation_seeds.len());
        for &seed in &cfg.ablation_seeds {
            per_seed.push(run_tmccl_arm(cfg, seed, use_tmccl)?.motion_st_rc);
        }
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        section.arms.push(AblationArm {
            name: arm_name.clone(),
            seeds: cfg.ablation_seeds.clone(),
            per_seed_motion_st_rc: per_seed,
            mean_motion_st_rc: mean,
        });
    }
    let mean_of = |name: &str| {
        section
            .arms
            .iter()
            .find(|a| a.name == name)
            .map(|a| a.mean_motion_st_rc)
    };
    if let (Some(with), Some(without)) = (mean_of("with_tmccl"), mean_of("without_tmccl")) {
        section.delta_motion_st_rc = Some(with - without);
    }

    // μ sweep on the summarization corpus with one trained scorer.
    if !cfg.mu_sweep.is_empty() && cfg.corpus_videos > 0 {
        let synth = cfg.synthetic_config();
        let records = dataio::generate_synthetic(&synth)?;
        let outcome = tmccl::train_motion_encoder(
            &records,
            &cfg.train_config(),
            cfg.encoder_config(),
            cfg.use_tmccl,
        )?;
        let manifests = generate_corpus(&synth, &cfg.corpus_config())?;
        for &mu in &cfg.mu_sweep {
            let mut evals = Vec::with_capacity(manifests.len());
            for m in &manifests {
                let (_sel, _rect, eval) =
                    summarizer::summarize(m, &outcome.model, mu, cfg.budget_fraction)?;
                evals.push(eval);
            }
            section.mu_sweep.push(MuSweepRow {
                mu,
                mean_f1: mean_f1(&evals),
            });
        }
    }

    report.ablation = Some(section);
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    report.write(out_dir)?;
    Ok(report)
}
