//! End-to-end acceptance suite. Runs every criterion in order, prints one
//! PASS/FAIL line per criterion and exits non-zero if any failed.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fvp_cli::experiment::{run_ablation, run_seed, AblationConfig, ExperimentConfig, SeedOutcome};
use fvp_core::adapt::{adapt, batch_loss, batch_loss_and_grad, seg_loss, AdaptConfig};
use fvp_core::data::{generate, standardize, GeneratorConfig};
use fvp_core::grid::{fft2, ifft2, ComplexGrid, LabelGrid, RealGrid};
use fvp_core::metrics::{asd, dice, report_from_predictions};
use fvp_core::prompt::{Prompt, PromptKind, VisualPrompt};
use fvp_core::pseudo::{reliable_from_output, reliable_labels, ReliableLabel, SelectionConfig};
use fvp_core::segnet::{init_model, train_source, SegOutput, TrainConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn params() -> Outcome {
    let n32 = Prompt::<f64>::new(PromptKind::Complex, 32, 64, 64, 1).map_err(err)?.num_learnable();
    let n16 = Prompt::<f64>::new(PromptKind::Complex, 16, 64, 64, 1).map_err(err)?.num_learnable();
    check(n32 == 2048 && n16 == 512, format!("r=32 -> {n32}, r=16 -> {n16}"))?;
    Ok(format!("r=32 -> {n32}, r=16 -> {n16}"))
}

fn naive_dft(z: &ComplexGrid<f64>, sign: f64) -> ComplexGrid<f64> {
    let (h, w, c) = z.shape();
    let mut out = ComplexGrid::zeros(h, w, c);
    for ch in 0..c {
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex::new(0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let t = sign
                            * 2.0
                            * std::f64::consts::PI
                            * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                        acc += z.get(y, x, ch) * Complex::new(t.cos(), t.sin());
                    }
                }
                out.set(u, v, ch, acc);
            }
        }
    }
    out
}

fn random_complex(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ComplexGrid<f64> {
    let data = (0..h * w * c)
        .map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    ComplexGrid::from_vec(h, w, c, data).unwrap()
}

fn fft_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sides = [1usize, 2, 4, 8, 16];
    let mut worst_dft = 0.0f64;
    for &h in &sides {
        for &w in &sides {
            let z = random_complex(&mut rng, h, w, 2);
            let fwd = fft2(&z).map_err(err)?;
            worst_dft = worst_dft.max(fwd.max_abs_diff(&naive_dft(&z, -1.0)));
            let inv = ifft2(&z).map_err(err)?;
            let oracle = naive_dft(&z, 1.0);
            let scaled = ComplexGrid::from_vec(
                h,
                w,
                2,
                oracle.data().iter().map(|v| v / (h * w) as f64).collect(),
            )
            .unwrap();
            worst_dft = worst_dft.max(inv.max_abs_diff(&scaled));
        }
    }
    check(worst_dft < 1e-8, format!("DFT oracle error {worst_dft:.2e}"))?;
    let (mut worst_rt, mut worst_parseval) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let z = random_complex(&mut rng, 64, 64, 1);
        let f = fft2(&z).map_err(err)?;
        worst_rt = worst_rt.max(ifft2(&f).map_err(err)?.max_abs_diff(&z));
        let e_space: f64 = z.data().iter().map(|v| v.norm_sqr()).sum();
        let e_freq: f64 = f.data().iter().map(|v| v.norm_sqr()).sum::<f64>() / (64.0 * 64.0);
        worst_parseval = worst_parseval.max((e_space - e_freq).abs() / e_space);
    }
    check(worst_rt < 1e-10, format!("roundtrip error {worst_rt:.2e}"))?;
    check(worst_parseval < 1e-9, format!("Parseval error {worst_parseval:.2e}"))?;
    Ok(format!(
        "dft {worst_dft:.1e}, roundtrip {worst_rt:.1e}, parseval {worst_parseval:.1e}"
    ))
}

fn relative(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm
}

fn gradient_suite() -> Outcome {
    let model = init_model::<f64>(11, 3).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let raw: Vec<RealGrid<f64>> = (0..2)
        .map(|_| RealGrid::from_fn(16, 16, 1, |y, x, _| ((y + 2 * x) as f64 * 0.4).sin() + rng.gen_range(0.0..0.6)))
        .collect();
    let xs: Vec<RealGrid<f64>> = raw.iter().map(|x| standardize(x).0).collect();
    let labels: Vec<ReliableLabel> = xs
        .iter()
        .map(|x| reliable_labels(&model, &standardize(x).0, &SelectionConfig::default()))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let refs: Vec<&ReliableLabel> = labels.iter().collect();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (kind, size) in [
        (PromptKind::Complex, 4),
        (PromptKind::Amplitude, 4),
        (PromptKind::Phase, 4),
        (PromptKind::Svp, 2),
    ] {
        let mut prompt = Prompt::<f64>::new(kind, size, 16, 16, 1).map_err(err)?;
        for v in prompt.learnable_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        let (_, grad) = batch_loss_and_grad(&model, &prompt, &xs, &refs).map_err(err)?;
        let mut num = Vec::new();
        for i in 0..prompt.num_learnable() {
            let mut p = prompt.clone();
            p.learnable_mut()[i] += h;
            let lp = batch_loss(&model, &p, &xs, &refs).map_err(err)?;
            p.learnable_mut()[i] -= 2.0 * h;
            let lm = batch_loss(&model, &p, &xs, &refs).map_err(err)?;
            num.push((lp - lm) / (2.0 * h));
        }
        let e = relative(&grad.values, &num);
        check(e < 1e-4, format!("{kind:?} prompt gradient error {e:.2e}"))?;
        worst = worst.max(e);
        if let Prompt::Spectrum(sp) = &prompt {
            let (i, j) = sp.dc_cell();
            let k = sp.param_index(i, j, 0);
            check(grad.values[k] == 0.0, format!("{kind:?} DC gradient {}", grad.values[k]))?;
        }
    }

    // raw-image gradient through both standardizations and the prompt
    let mut prompt = Prompt::<f64>::new(PromptKind::Complex, 4, 16, 16, 1).map_err(err)?;
    for v in prompt.learnable_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    let label = &labels[0];
    let loss_of = |x: &RealGrid<f64>| -> Result<(f64, RealGrid<f64>), String> {
        let (s, tape1) = standardize(x);
        let prompted = prompt.apply_batch(std::slice::from_ref(&s)).map_err(err)?.images.remove(0);
        let (m, tape2) = standardize(&prompted);
        let (outs, cache) = model.forward_batch(std::slice::from_ref(&m)).map_err(err)?;
        let (loss, g) = seg_loss(&outs[0].probs, label).map_err(err)?;
        let gin = model.backward_input(&cache, &[g]).map_err(err)?;
        Ok((loss, tape1.backward(&tape2.backward(&gin[0]))))
    };
    let x0 = &raw[0];
    let (_, analytic) = loss_of(x0)?;
    let mut num = Vec::new();
    for i in 0..x0.len() {
        let mut xp = x0.clone();
        xp.data_mut()[i] += h;
        let lp = loss_of(&xp)?.0;
        xp.data_mut()[i] -= 2.0 * h;
        let lm = loss_of(&xp)?.0;
        num.push((lp - lm) / (2.0 * h));
    }
    let e = relative(analytic.data(), &num);
    check(e < 1e-4, format!("input gradient error {e:.2e}"))?;
    worst = worst.max(e);
    Ok(format!("worst relative error {worst:.1e}, DC gradients exactly 0"))
}

/// Independent reimplementation of the reliable-label chain.
fn oracle_labels(probs: &[Vec<f64>], feats: &[Vec<f64>], cfg: &SelectionConfig) -> (Vec<u8>, Vec<bool>) {
    let n = probs.len();
    let nc = probs[0].len();
    let m = ((cfg.k * n as f64).ceil() as usize).clamp(1, n);
    let delta: Vec<f64> = (0..nc)
        .map(|c| {
            if !cfg.use_intra {
                return 0.0;
            }
            let mut col: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            col.sort_by(|a, b| b.partial_cmp(a).unwrap());
            col[m - 1]
        })
        .collect();
    let lambda = if cfg.use_global { cfg.lambda } else { 0.0 };
    let revised: Vec<Vec<f64>> = probs
        .iter()
        .map(|p| {
            (0..nc)
                .map(|c| if p[c] >= delta[c] && p[c] >= lambda { p[c] } else { 0.0 })
                .collect()
        })
        .collect();
    let mut labels = vec![0u8; n];
    let mut selected = vec![false; n];
    for i in 0..n {
        let row = &revised[i];
        if row.iter().sum::<f64>() > 0.0 {
            selected[i] = true;
            let mut best = 0;
            for c in 1..nc {
                if row[c] > row[best] {
                    best = c;
                }
            }
            labels[i] = best as u8;
        }
    }
    if !cfg.use_prototype || !selected.iter().any(|&s| s) {
        return (labels, selected);
    }
    let l = feats[0].len();
    let mut protos: Vec<Option<Vec<f64>>> = Vec::new();
    for c in 0..nc {
        let mass: f64 = revised.iter().map(|r| r[c]).sum();
        if mass > 0.0 {
            let v = (0..l)
                .map(|d| (0..n).map(|i| feats[i][d] * revised[i][c]).sum::<f64>() / mass)
                .collect();
            protos.push(Some(v));
        } else {
            protos.push(None);
        }
    }
    for i in 0..n {
        if !selected[i] {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (c, p) in protos.iter().enumerate() {
            if let Some(p) = p {
                let d: f64 = p.iter().zip(&feats[i]).map(|(a, b)| (a - b).powi(2)).sum();
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((c, d));
                }
            }
        }
        selected[i] = best.unwrap().0 == labels[i] as usize;
    }
    (labels, selected)
}

fn pseudo_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..200 {
        let (h, w) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let nc = rng.gen_range(2..=4);
        let l = rng.gen_range(1..=4);
        let coarse = case % 2 == 1;
        let probs: Vec<Vec<f64>> = (0..h * w)
            .map(|_| {
                let raw: Vec<f64> = (0..nc)
                    .map(|_| {
                        let v: f64 = rng.gen_range(0.0..3.0);
                        if coarse {
                            v.round().exp()
                        } else {
                            v.exp()
                        }
                    })
                    .collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect();
        let feats: Vec<Vec<f64>> = (0..h * w)
            .map(|_| (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let cfg = SelectionConfig {
            lambda: rng.gen_range(0.0..=0.2),
            k: 1.0 - rng.gen_range(0.0..1.0),
            use_global: rng.gen_bool(0.8),
            use_intra: rng.gen_bool(0.8),
            use_prototype: rng.gen_bool(0.8),
        };
        let out = SegOutput {
            probs: RealGrid::from_vec(h, w, nc, probs.concat()).unwrap(),
            logits: RealGrid::zeros(h, w, nc),
            features: RealGrid::from_vec(h, w, l, feats.concat()).unwrap(),
        };
        let got = reliable_from_output(&out, &cfg).map_err(err)?;
        let (labels, selected) = oracle_labels(&probs, &feats, &cfg);
        // labels are only meaningful where selected
        let masked = |ls: &[u8], sel: &[bool]| -> Vec<u8> {
            ls.iter().zip(sel).map(|(&v, &s)| if s { v } else { u8::MAX }).collect()
        };
        check(
            got.selected() == selected.as_slice()
                && masked(got.labels(), got.selected()) == masked(&labels, &selected),
            format!("instance {case} differs from oracle"),
        )?;
    }
    Ok("200/200 instances identical".into())
}

const SEEDS: u64 = 5;

fn desk_scale(outcomes: &mut Vec<SeedOutcome>) -> Outcome {
    let t = Instant::now();
    let cfg = ExperimentConfig::default();
    for seed in 0..SEEDS {
        outcomes.push(run_seed(&cfg, seed).map_err(err)?);
    }
    let secs = t.elapsed().as_secs_f64();
    let mean = |f: &dyn Fn(&SeedOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / SEEDS as f64;
    let src = mean(&|o| o.source_only.mean_fg_dice);
    let sup = mean(&|o| o.target_supervised.mean_fg_dice);
    let gains: Vec<f64> = outcomes.iter().map(SeedOutcome::dice_gain).collect();
    let improved = gains.iter().filter(|&&g| g >= 0.05).count();
    let worst = gains.iter().copied().fold(f64::INFINITY, f64::min);
    let asd_ok = outcomes
        .iter()
        .filter(|o| match (o.adapted.mean_fg_asd, o.source_only.mean_fg_asd) {
            (Some(a), Some(s)) => a <= s,
            _ => false,
        })
        .count();
    let loss_down = outcomes
        .iter()
        .filter(|o| o.adapt.epoch_loss.last() < o.adapt.epoch_loss.first())
        .count();
    let gains_s: Vec<String> = gains.iter().map(|g| format!("{g:+.3}")).collect();
    let summary = format!(
        "source {src:.3}, supervised {sup:.3}, gains [{}], ASD kept {asd_ok}/{SEEDS}, loss decreased {loss_down}/{SEEDS}, {secs:.0} s",
        gains_s.join(", ")
    );
    let ok = sup - src >= 0.10
        && improved >= 4
        && worst >= -0.01
        && asd_ok >= 4
        && loss_down == SEEDS as usize
        && secs < 15.0 * 60.0;
    check(ok, summary.clone())?;
    Ok(summary)
}

fn frozen_model() -> Outcome {
    let cfg = GeneratorConfig::new(32, 3, 6, 2);
    let data = generate(&cfg, 5).map_err(err)?;
    let train = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let (model, _) = train_source(&data.source.train, 3, &train).map_err(err)?;
    let images = data.target.train_images();
    let before = model.checksum();
    for (kind, size) in [
        (PromptKind::Complex, 8),
        (PromptKind::Amplitude, 8),
        (PromptKind::Phase, 8),
        (PromptKind::Svp, 4),
    ] {
        let acfg = AdaptConfig {
            variant: kind,
            size,
            learning_rates: vec![0.1, 1.0],
            epochs: 3,
            ..AdaptConfig::default()
        };
        let (prompt, report) = adapt(&model, &images, &acfg).map_err(err)?;
        check(
            report.model_checksum_before == before && report.model_checksum_after == before,
            format!("{kind:?}: model checksum changed"),
        )?;
        check(
            report.optimizer_params == report.learnable_params
                && report.learnable_params == prompt.num_learnable(),
            format!(
                "{kind:?}: optimizer {} vs learnable {}",
                report.optimizer_params, report.learnable_params
            ),
        )?;
    }
    check(model.checksum() == before, "model changed after adaptation")?;
    Ok("checksums unchanged, optimizer sizes match for 4 variants".into())
}

fn ablation(desk: &[SeedOutcome]) -> Outcome {
    let mut cfg = AblationConfig::default();
    cfg.experiment.generator = GeneratorConfig::new(64, 4, 8, 4);
    cfg.experiment.train.epochs = 3;
    cfg.experiment.adapt.epochs = 2;
    cfg.experiment.adapt.learning_rates = vec![1.0];
    let report = run_ablation(&cfg).map_err(err)?;
    let json = serde_json::to_value(&report).map_err(err)?;
    let seed = &json["seeds"][0];
    let sizes: Vec<String> = seed["size"]
        .as_array()
        .map(|rows| rows.iter().map(|r| r["label"].as_str().unwrap_or("").to_string()).collect())
        .unwrap_or_default();
    let expect: Vec<String> = [2, 4, 8, 16, 32, 64].iter().map(|r| format!("r={r}")).collect();
    check(sizes == expect, format!("size table labels {sizes:?}"))?;
    for (table, n) in [("variant", 3), ("svp", 3), ("selection", 4)] {
        let len = seed[table].as_array().map_or(0, Vec::len);
        check(len == n, format!("{table} table has {len} rows"))?;
    }
    let rows = seed["size"].as_array().unwrap();
    let params: Vec<u64> = rows.iter().map(|r| r["learnable_params"].as_u64().unwrap()).collect();
    check(
        params == [8, 32, 128, 512, 2048, 8192],
        format!("size table parameter counts {params:?}"),
    )?;
    let improved = desk.iter().filter(|o| o.dice_gain() >= 0.05).count();
    let worst = desk.iter().map(SeedOutcome::dice_gain).fold(f64::INFINITY, f64::min);
    check(
        improved >= 4 && worst >= -0.01,
        format!("tables complete; complex+full selection improved {improved}/{} seeds", desk.len()),
    )?;
    Ok(format!("tables complete; complex+full selection improved {improved}/{} seeds", desk.len()))
}

fn brute_dice(p: &[bool], g: &[bool]) -> f64 {
    let inter = p.iter().zip(g).filter(|(a, b)| **a && **b).count();
    let (np, ng) = (p.iter().filter(|v| **v).count(), g.iter().filter(|v| **v).count());
    if np + ng == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (np + ng) as f64
    }
}

fn brute_boundary(m: &[bool], h: usize, w: usize) -> Vec<(usize, usize)> {
    let inside = |y: isize, x: isize| y >= 0 && x >= 0 && y < h as isize && x < w as isize && m[y as usize * w + x as usize];
    let mut out = Vec::new();
    for y in 0..h as isize {
        for x in 0..w as isize {
            if inside(y, x) && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dy, dx)| !inside(y + dy, x + dx)) {
                out.push((y as usize, x as usize));
            }
        }
    }
    out
}

fn brute_asd(p: &[bool], g: &[bool], h: usize, w: usize) -> Option<f64> {
    if !p.iter().any(|v| *v) || !g.iter().any(|v| *v) {
        return None;
    }
    let (bp, bg) = (brute_boundary(p, h, w), brute_boundary(g, h, w));
    let nearest = |a: (usize, usize), set: &[(usize, usize)]| {
        set.iter()
            .map(|b| {
                let dy = a.0 as f64 - b.0 as f64;
                let dx = a.1 as f64 - b.1 as f64;
                (dy * dy + dx * dx).sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let total: f64 = bp.iter().map(|&a| nearest(a, &bg)).sum::<f64>() + bg.iter().map(|&a| nearest(a, &bp)).sum::<f64>();
    Some(total / (bp.len() + bg.len()) as f64)
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let (h, w) = (rng.gen_range(1..=12), rng.gen_range(1..=12));
        let density = rng.gen_range(0.0..1.0);
        let mut draw = || -> Vec<u8> { (0..h * w).map(|_| u8::from(rng.gen_bool(density))).collect() };
        let pred = LabelGrid::new(h, w, draw()).unwrap();
        let gt = LabelGrid::new(h, w, draw()).unwrap();
        let (pm, gm) = (pred.mask(1), gt.mask(1));
        let d = dice(&pred, &gt, 1).map_err(err)?;
        check(d == brute_dice(&pm, &gm), format!("mask {case}: Dice {d} vs oracle"))?;
        let a = asd(&pred, &gt, 1).map_err(err)?;
        match (a, brute_asd(&pm, &gm, h, w)) {
            (Some(x), Some(y)) => worst = worst.max((x - y).abs()),
            (None, None) => {}
            (x, y) => return Err(format!("mask {case}: ASD {x:?} vs oracle {y:?}")),
        }
    }
    check(worst < 1e-9, format!("ASD error {worst:.2e}"))?;

    // a tiny near-empty image and a large well-segmented one
    let small_gt = LabelGrid::new(1, 4, vec![1, 0, 0, 0]).unwrap();
    let small_pred = LabelGrid::new(1, 4, vec![0, 1, 0, 0]).unwrap();
    let big_gt = LabelGrid::new(4, 4, vec![1; 16]).unwrap();
    let big_pred = LabelGrid::new(4, 4, vec![1; 16]).unwrap();
    let report = report_from_predictions(
        &[small_pred.clone(), big_pred.clone()],
        &[&small_gt, &big_gt],
        2,
    )
    .map_err(err)?;
    let per_image = (dice(&small_pred, &small_gt, 1).map_err(err)? + dice(&big_pred, &big_gt, 1).map_err(err)?) / 2.0;
    let pooled = 2.0 * 16.0 / 34.0;
    check(
        (report.dice[1] - pooled).abs() < 1e-12 && (per_image - 0.5).abs() < 1e-12,
        format!("pooled {} vs per-image mean {per_image}", report.dice[1]),
    )?;
    Ok(format!(
        "100 masks match, ASD error {worst:.1e}; pooled Dice {:.3} vs per-image mean {per_image:.3}",
        report.dice[1]
    ))
}

fn fvp(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fvp"))
        .args(args)
        .env_remove("FVP_SEED")
        .output()
        .map_err(err)?;
    check(
        out.status.success(),
        format!("fvp {args:?}: {}", String::from_utf8_lossy(&out.stderr)),
    )
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn pipeline_run(dir: &Path) -> Result<(), String> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let t1 = ["--threads", "1"];
    let run = |rest: &[&str]| fvp(&[&t1[..], rest].concat());
    run(&["gen-data", "--out", &p("data"), "--seed", "7", "--size", "32", "--n-train", "6", "--n-test", "3"])?;
    run(&[
        "pretrain", "--data", &p("data/source"), "--out", &p("model.fvpw"), "--epochs", "2", "--seed", "7",
        "--history", &p("history.json"),
    ])?;
    run(&[
        "adapt", "--model", &p("model.fvpw"), "--target", &p("data/target"), "--r", "8", "--epochs", "3",
        "--seed", "7", "--out", &p("prompt.fvpp"), "--report", &p("adapt.json"),
    ])?;
    run(&[
        "eval", "--model", &p("model.fvpw"), "--target", &p("data/target"), "--prompt", &p("prompt.fvpp"),
        "--out", &p("eval.json"),
    ])?;
    run(&[
        "ablate", "--out", &p("ablate.json"), "--seeds", "7", "--tables", "variant,selection", "--size", "32",
        "--n-train", "4", "--n-test", "2", "--r", "8", "--lr", "1", "--epochs", "2", "--pretrain-epochs", "1",
    ])?;
    run(&[
        "render", "--out", &p("figs"), "--model", &p("model.fvpw"), "--target", &p("data/target"), "--prompt",
        &p("prompt.fvpp"), "--noise-sim", "--r", "8", "--seed", "7",
    ])
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(err)?;
    let b = tempfile::tempdir().map_err(err)?;
    pipeline_run(a.path())?;
    pipeline_run(b.path())?;
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    check(ta.len() == tb.len(), "different file sets")?;
    for ((na, da), (nb, db)) in ta.iter().zip(&tb) {
        // paths recorded inside outputs differ between the two directories
        let strip = |d: &[u8], root: &Path| -> Vec<u8> {
            String::from_utf8_lossy(d)
                .replace(root.to_string_lossy().as_ref(), "<root>")
                .into_bytes()
        };
        let same = na == nb && strip(da, a.path()) == strip(db, b.path());
        check(same, format!("{na} differs between runs"))?;
    }
    Ok(format!("{} output files byte-identical", ta.len()))
}

fn main() {
    let mut desk = Vec::new();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let r = f();
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(msg) => println!("criterion {n} PASS {name}: {msg} ({secs:.1} s)"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n} FAIL {name}: {msg} ({secs:.1} s)");
            }
        }
    };
    report(1, "parameter accounting", &mut params);
    report(2, "fft suite", &mut fft_suite);
    report(3, "gradient suite", &mut gradient_suite);
    report(4, "pseudo-label oracle", &mut pseudo_oracle);
    report(5, "desk-scale adaptation", &mut || desk_scale(&mut desk));
    report(6, "frozen model", &mut frozen_model);
    report(7, "ablation harness", &mut || ablation(&desk));
    report(8, "metrics oracle", &mut metrics_oracle);
    report(9, "determinism", &mut determinism);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
