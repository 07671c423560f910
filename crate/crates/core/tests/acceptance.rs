//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use affground::backends::{background_sanity_fix, filter_boxes, DetectionBox};
use affground::data::{generate_fixture, FixtureMeta, FixtureSpec, Sample, Split};
use affground::grid::{BinaryMask, Grid, Rect};
use affground::heatmap::{mask_to_heatmap, HeatmapLabel};
use affground::labeler::{build_pair_index, encoder_patches, object_patchmask, ObjectRegion, PairInput};
use affground::metrics::{kld_metric, nss_metric, score_predictions, sim_metric, MetricReport, KL_EPS};
use affground::model::network::upsample_map;
use affground::model::params::all_trainable;
use affground::model::{build_text_encoder, ColorImage, Cx, GroundingModel, HeadMode, ModelConfig, TextConfig};
use affground::objectives::losses::align_loss_var;
use affground::objectives::train::{masked_pool, ExoItem};
use affground::objectives::{sample_loss, stitch_augment, SampleInputs, StepLog, TrainConfig};
use affground::pipeline;
use affground::refiner::select_regions;
use common::Workspace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_heatmap(rng: &mut ChaCha8Rng, h: usize, w: usize) -> HeatmapLabel<f64> {
    loop {
        let vals: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).map(|v| if v < 0.3 { 0.0 } else { v }).collect();
        if vals.iter().any(|&v| v > 0.0) {
            return HeatmapLabel::normalize(Grid::from_vec(h, w, vals).unwrap()).unwrap();
        }
    }
}

fn oracle_kld(p: &[f64], g: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        s += g[i] * ((g[i] + KL_EPS) / (p[i] + KL_EPS)).ln();
    }
    s
}

fn oracle_sim(p: &[f64], g: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        s += if p[i] < g[i] { p[i] } else { g[i] };
    }
    s
}

fn oracle_nss(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let mut mean = 0.0;
    for v in p {
        mean += v;
    }
    mean /= n;
    let mut var = 0.0;
    for v in p {
        var += (v - mean) * (v - mean);
    }
    let std = (var / n).sqrt();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in g {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let (mut total, mut count) = (0.0, 0usize);
    for i in 0..p.len() {
        if (g[i] - lo) / (hi - lo) > 0.1 {
            total += (p[i] - mean) / std;
            count += 1;
        }
    }
    total / count as f64
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let p = random_heatmap(&mut rng, 16, 16);
        let g = random_heatmap(&mut rng, 16, 16);
        let pairs = [
            (kld_metric(&p, &g).unwrap(), oracle_kld(p.data(), g.data())),
            (sim_metric(&p, &g).unwrap(), oracle_sim(p.data(), g.data())),
            (nss_metric(&p, &g).unwrap(), oracle_nss(p.data(), g.data())),
        ];
        for (got, want) in pairs {
            worst = worst.max((got - want).abs());
        }
    }
    check(worst < 1e-6, || format!("largest deviation from the reference {worst:e}"))?;
    Ok(format!("200 pairs, max deviation {worst:.1e}"))
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let p = random_heatmap(&mut rng, 16, 16);
        let g = random_heatmap(&mut rng, 16, 16);
        let (a, b) = (rng.random_range(0.1..10.0), rng.random_range(0.0..1.0));
        let moved = HeatmapLabel::normalize(p.grid().map(|v| a * v + b)).unwrap();
        let errs = [
            kld_metric(&p, &p).unwrap().abs(),
            (sim_metric(&p, &p).unwrap() - 1.0).abs(),
            (nss_metric(&moved, &g).unwrap() - nss_metric(&p, &g).unwrap()).abs(),
        ];
        worst = errs.iter().fold(worst, |m, e| m.max(*e));
    }
    check(worst < 1e-9, || format!("identity violated by {worst:e}"))?;
    Ok(format!("50 instances, max error {worst:.1e}"))
}

fn gradient_check() -> Outcome {
    let fx = generate_fixture(&FixtureSpec::new(0, 2, 2)).unwrap();
    let ego = fx.index.ego().next().unwrap();
    let exo = fx.index.exo().find(|s| s.class_pair() == ego.class_pair()).unwrap();
    let mcfg = ModelConfig::tiny();
    let r = mcfg.resolution;
    let model = GroundingModel::<f64>::new(mcfg.clone(), HeadMode::Grounding, fx.index.affordances()).unwrap();
    let text = build_text_encoder(&TextConfig::default(), mcfg.dim).unwrap();
    let cfg = TrainConfig { lambda1: 10.0, lambda2: 1.0, ..TrainConfig::default() };
    let geom = &fx.meta.images[&ego.id];
    let exo_geom = &fx.meta.images[&exo.id];
    let region = ObjectRegion { bbox: DetectionBox::new(exo_geom.object_box(), 1.0), width: 64, height: 64, fallback: false };
    let exo_item = ExoItem { image: ColorImage::from_rgb(&exo.load_image().unwrap()).resize(r, r), mask: object_patchmask(&region, mcfg.grid()) };
    let part = fx.mapping.lookup(&ego.object, &ego.affordance).unwrap().to_string();
    let inputs = SampleInputs {
        image: ColorImage::from_rgb(&ego.load_image().unwrap()).resize(r, r),
        label: mask_to_heatmap::<f64>(&geom.part_mask(), 1.0).unwrap().resize(r, r).unwrap(),
        affordance: &ego.affordance,
        exo: Some(&exo_item),
        reason: Some((&ego.object, &part)),
        weight: 1.0,
    };
    let up = upsample_map::<f64>(mcfg.logit_side(), r, r);

    let mut cx = Cx::new(&model.params, all_trainable);
    let (loss, report) = sample_loss(&model, &mut cx, text.as_ref(), &cfg, &up, &inputs).unwrap();
    check(report.l_align > 0.0 && report.l_exo_cls > 0.0 && report.l_reason > 0.0, || format!("a loss term is inactive: {report:?}"))?;
    let grads = cx.g.backward(loss);
    let analytic: BTreeMap<usize, Vec<f64>> = grads.params().map(|(id, t)| (id.0, t.data().to_vec())).collect();

    // The alignment target is a constant for the gradient, so the reference
    // loss keeps it at its unperturbed value.
    let f_e0 = {
        let mut cx = Cx::new(&model.params, all_trainable);
        let ef = model.encode(&mut cx, &exo_item.image);
        let f_e = masked_pool(&mut cx, ef.patches, &exo_item.mask).unwrap();
        cx.g.value(f_e).clone()
    };
    let no_align = TrainConfig { use_align: false, ..cfg.clone() };
    let loss_of = |m: &GroundingModel<f64>| -> f64 {
        let mut cx = Cx::new(&m.params, all_trainable);
        let (rest, _) = sample_loss(m, &mut cx, text.as_ref(), &no_align, &up, &inputs).unwrap();
        let feats = m.encode(&mut cx, &inputs.image);
        let f_t = m.text_var(&mut cx, text.as_ref(), &ego.affordance).unwrap();
        let (f_a, _) = m.affordance_feature(&mut cx, feats, f_t).unwrap();
        let target = cx.g.constant(f_e0.clone());
        let align = align_loss_var(&mut cx.g, f_a, target, cfg.margin).unwrap();
        cx.g.value(rest).item() + cfg.lambda1 * cx.g.value(align).item()
    };
    check((loss_of(&model) - report.l_total).abs() < 1e-9, || "reference loss disagrees with the training loss".into())?;
    let ids: Vec<_> = model.params.ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let h = 1e-4;
    let mut worst = 0.0f64;
    for k in 0..10 {
        let id = ids[k * ids.len() / 10];
        let i = rng.random_range(0..model.params.get(id).len());
        let mut plus = model.clone();
        plus.params.get_mut(id).data_mut()[i] += h;
        let mut minus = model.clone();
        minus.params.get_mut(id).data_mut()[i] -= h;
        let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
        let a = analytic.get(&id.0).map_or(0.0, |g| g[i]);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
        check(rel < 1e-3, || format!("{}[{i}]: analytic {a:e}, numeric {numeric:e}", model.params.entry(id).name))?;
    }

    let mut cx = Cx::new(&model.params, all_trainable);
    let feats = model.encode(&mut cx, &inputs.image);
    let f_t = model.text_var(&mut cx, text.as_ref(), &ego.affordance).unwrap();
    let (f_a, _) = model.affordance_feature(&mut cx, feats, f_t).unwrap();
    let ef = model.encode(&mut cx, &exo_item.image);
    let f_e = masked_pool(&mut cx, ef.patches, &exo_item.mask).unwrap();
    let align = align_loss_var(&mut cx.g, f_a, f_e, 0.1).unwrap();
    let g = cx.g.backward(align);
    check(g.wrt(f_e).is_none_or(|t| t.data().iter().all(|&v| v == 0.0)), || "alignment loss sends gradient into the exocentric feature".into())?;
    check(g.wrt(f_a).is_some_and(|t| t.data().iter().any(|&v| v != 0.0)), || "alignment loss sends no gradient into the affordance feature".into())?;
    Ok(format!("10 scalars, worst relative error {worst:.1e}"))
}

fn heuristics() -> Outcome {
    let b = |c: f64| DetectionBox::new(Rect::new(0, 0, 4, 4), c);
    check(filter_boxes(&[b(0.3), b(0.7), b(0.5)]) == vec![b(0.7), b(0.5)], || "threshold filter".into())?;
    let low = [DetectionBox::new(Rect::new(0, 0, 2, 2), 0.2), DetectionBox::new(Rect::new(1, 1, 3, 3), 0.4), DetectionBox::new(Rect::new(2, 2, 4, 4), 0.4)];
    check(filter_boxes(&low) == vec![low[1]], || "fallback keeps the first most confident box".into())?;
    check(filter_boxes(&[]).is_empty(), || "empty input".into())?;

    let prompt = DetectionBox::new(Rect::new(2, 2, 10, 10), 0.9);
    let background = BinaryMask::from_fn(12, 12, |y, x| !(4..8).contains(&y) || !(4..8).contains(&x));
    let fixed = background_sanity_fix(&background, &prompt).unwrap();
    let expected = BinaryMask::from_fn(12, 12, |y, x| if (2..10).contains(&y) && (2..10).contains(&x) { (4..8).contains(&y) && (4..8).contains(&x) } else { true });
    check(fixed.inverted && fixed.mask == expected, || "background mask is not inverted inside the box".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..500 {
        let p = rng.random_range(0.0..1.0);
        let m = BinaryMask::from_fn(12, 12, |_, _| false);
        let m = BinaryMask::from_vec(12, 12, m.data().iter().map(|_| rng.random_bool(p)).collect()).unwrap();
        let once = background_sanity_fix(&m, &prompt).unwrap();
        let twice = background_sanity_fix(&once.mask, &prompt).unwrap();
        check(twice.mask == once.mask && !twice.inverted, || "sanity fix is not idempotent".into())?;
    }

    check(select_regions(&[0.8, 0.05, 0.75]) == vec![0, 2], || format!("region selection gave {:?}", select_regions(&[0.8, 0.05, 0.75])))?;

    let label = random_heatmap(&mut rng, 32, 32);
    let image = ColorImage::<f64>::zeros(32, 32);
    let d = [ColorImage::<f64>::zeros(32, 32), ColorImage::zeros(32, 32), ColorImage::zeros(32, 32)];
    let distractors: Vec<&ColorImage<f64>> = d.iter().collect();
    let mut counts = [0usize; 4];
    let draws = 4000;
    for _ in 0..draws {
        let s = stitch_augment(&image, &label, &distractors, &mut rng).unwrap().unwrap();
        let (y0, x0) = ((s.quadrant / 2) * 16, (s.quadrant % 2) * 16);
        let (mut inside, mut outside) = (0.0, 0.0);
        for y in 0..32 {
            for x in 0..32 {
                if (y0..y0 + 16).contains(&y) && (x0..x0 + 16).contains(&x) {
                    inside += s.label.get(y, x);
                } else {
                    outside += s.label.get(y, x);
                }
            }
        }
        check((inside - 1.0).abs() < 1e-9 && outside == 0.0, || format!("stitched mass {inside} inside, {outside} outside"))?;
        counts[s.quadrant] += 1;
    }
    let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
    check(counts.iter().all(|&c| (c as f64 - draws as f64 / 4.0).abs() <= 3.0 * sigma), || format!("quadrant counts {counts:?}"))?;
    Ok(format!("quadrant counts {counts:?}"))
}

fn pair_input<'a>(model: &GroundingModel<f64>, meta: &FixtureMeta, s: &'a Sample) -> PairInput<'a> {
    let g = &meta.images[&s.id];
    let region = ObjectRegion { bbox: DetectionBox::new(g.object_box(), 1.0), width: 64, height: 64, fallback: false };
    PairInput { sample: s, features: encoder_patches(model, s).unwrap(), mask: object_patchmask(&region, model.config.grid()) }
}

fn pairing_ranking() -> Outcome {
    let spec = FixtureSpec { ego_per_class: 4, exo_per_class: 6, test_per_class: 1, ..FixtureSpec::new(3, 3, 1) };
    let fx = generate_fixture(&spec).unwrap();
    let train: Vec<_> = fx.index.samples.iter().filter(|s| s.split == Split::Train).collect();
    check(train.len() == 30, || format!("fixture has {} training images", train.len()))?;
    let mcfg = ModelConfig::tiny();
    let model = GroundingModel::<f64>::new(mcfg.clone(), HeadMode::Grounding, fx.index.affordances()).unwrap();
    let ego: Vec<_> = fx.index.ego().filter(|s| s.split == Split::Train).map(|s| pair_input(&model, &fx.meta, s)).collect();
    let exo: Vec<_> = fx.index.exo().map(|s| pair_input(&model, &fx.meta, s)).collect();
    let pooled = |p: &PairInput<'_>| {
        let f = &p.features;
        let mut v = vec![0.0; f.cols()];
        let mut n = 0.0;
        for r in 0..f.rows() {
            if p.mask.data()[r] {
                n += 1.0;
                for c in 0..f.cols() {
                    v[c] += f.get(r, c);
                }
            }
        }
        v.iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let cos = |a: &[f64], b: &[f64]| {
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for i in 0..a.len() {
            ab += a[i] * b[i];
            aa += a[i] * a[i];
            bb += b[i] * b[i];
        }
        ab / (aa.sqrt() * bb.sqrt())
    };
    for top_n in [3, 10] {
        let index = build_pair_index(&ego, &exo, top_n).unwrap();
        for e in &ego {
            let f = pooled(e);
            let mut brute: Vec<(String, f64)> =
                exo.iter().filter(|x| x.sample.class_pair() == e.sample.class_pair()).map(|x| (x.sample.id.clone(), cos(&f, &pooled(x)))).collect();
            brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
            brute.truncate(top_n);
            let got = index.get(&e.sample.id).unwrap();
            let ids = |v: &[(String, f64)]| v.iter().map(|p| p.0.clone()).collect::<Vec<_>>();
            check(ids(got) == ids(&brute), || format!("ranking differs for {}", e.sample.id))?;
            for (a, b) in got.iter().zip(&brute) {
                check((a.1 - b.1).abs() < 1e-12, || format!("score of {} differs: {} vs {}", a.0, a.1, b.1))?;
            }
        }
    }
    Ok(format!("{} egocentric images ranked", ego.len()))
}

fn epoch_means(log: &str) -> Vec<f64> {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for line in log.lines() {
        let s: StepLog = serde_json::from_str(line).unwrap();
        let e = sums.entry(s.epoch).or_default();
        e.0 += s.losses.l_kl;
        e.1 += 1;
    }
    sums.values().map(|(s, n)| s / *n as f64).collect()
}

fn cli_pipeline() -> Outcome {
    let ws = Workspace::new(&[]);
    for step in [&["fixture"][..], &["gen-labels"], &["pair"], &["train", "--seeds", "0"], &["eval", "--seeds", "0"]] {
        let code = ws.cli(step);
        check(code == 0, || format!("`{}` exited with {code}", step.join(" ")))?;
    }
    let cfg = ws.config();
    let wd = pipeline::work_dir(&cfg);
    let kl = epoch_means(&std::fs::read_to_string(wd.loss_log(0)).unwrap());
    let (first, last) = (kl[0], *kl.last().unwrap());
    check(last < 0.5 * first, || format!("KL went from {first:.4} to {last:.4}"))?;

    let report: MetricReport = affground::io::read_json(&wd.reports().join("seed0.json")).unwrap();
    let test = pipeline::load_split(&cfg, Split::Test).unwrap();
    let uniform = score_predictions(test.ego().map(|s| (s, HeatmapLabel::uniform(64, 64))), &test.gt_heatmaps).unwrap();
    check(report.kld() < uniform.kld(), || format!("KLD {:.4} not below uniform {:.4}", report.kld(), uniform.kld()))?;

    let meta = FixtureMeta::load(&cfg.data_root).unwrap();
    let model = pipeline::load_checkpoint::<f64>(&cfg, &wd.checkpoint(0), false).unwrap();
    let text = pipeline::load_text(&cfg).unwrap();
    let (mut hits, mut total) = (0, 0);
    for s in test.ego() {
        let img = s.load_image().unwrap();
        let h = model.predict_heatmap(&img, &s.affordance, text.as_ref(), 64, 64).unwrap();
        let (y, x) = h.grid().argmax();
        hits += meta.images[&s.id].part_mask().get(y, x) as usize;
        total += 1;
    }
    check(hits as f64 >= 0.8 * total as f64, || format!("argmax inside the part on {hits}/{total} images"))?;
    Ok(format!("KL {first:.3} -> {last:.3}, KLD {:.3} vs uniform {:.3}, argmax in part {hits}/{total}", report.kld(), uniform.kld()))
}

fn refinement() -> Outcome {
    let ws = Workspace::new(&[]);
    let cfg = ws.config();
    pipeline::run_fixture(&cfg).unwrap();
    pipeline::run_gen_labels(&cfg).unwrap();
    pipeline::run_pair(&cfg).unwrap();
    let summary = pipeline::run_refine::<f64>(&cfg).unwrap().unwrap();
    let e = &summary.outcome.epochs;
    check(e.windows(2).all(|w| w[1] <= w[0]), || format!("epoch losses {e:?}"))?;

    let meta = FixtureMeta::load(&cfg.data_root).unwrap();
    let store = pipeline::work_dir(&cfg).refined_labels();
    let (mut refined, mut whole, mut n) = (0.0, 0.0, 0);
    for (id, geom) in &meta.images {
        if !store.contains(id) {
            continue;
        }
        let gt = mask_to_heatmap::<f64>(&geom.part_mask(), meta.spec.gt_sigma).unwrap();
        let object = mask_to_heatmap::<f64>(&geom.object_mask(), cfg.blur_sigma).unwrap();
        refined += kld_metric(&store.load(id).unwrap().heatmap, &gt).unwrap();
        whole += kld_metric(&object, &gt).unwrap();
        n += 1;
    }
    check(n >= 20, || format!("only {n} refined labels"))?;
    let (refined, whole) = (refined / n as f64, whole / n as f64);
    check(refined <= 0.9 * whole, || format!("refined KLD {refined:.4} vs whole-object {whole:.4}"))?;
    Ok(format!("epoch losses {:?}, KLD {refined:.3} vs whole-object {whole:.3} over {n} images", e.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()))
}

fn determinism() -> Outcome {
    let run = || {
        let ws = Workspace::new(&["train.seeds=[0, 1]"]);
        let cfg = ws.config();
        pipeline::run_fixture(&cfg).unwrap();
        pipeline::run_gen_labels(&cfg).unwrap();
        pipeline::run_pair(&cfg).unwrap();
        pipeline::run_train::<f64>(&cfg).unwrap();
        let wd = pipeline::work_dir(&cfg);
        let summary = pipeline::run_eval::<f64>(&cfg, &[wd.checkpoint(0), wd.checkpoint(1)], false).unwrap();
        let files: Vec<Vec<u8>> = [wd.pairs(), wd.checkpoint(0), wd.checkpoint(1), wd.loss_log(0), wd.loss_log(1)]
            .iter()
            .map(|p| std::fs::read(p).unwrap())
            .collect();
        (files, summary.reports.into_iter().map(|(_, r)| r).collect::<Vec<_>>(), ws)
    };
    let (a, ra, _wa) = run();
    let (b, rb, _wb) = run();
    check(a == b, || "artifacts differ between runs".into())?;
    for (x, y) in ra.iter().zip(&rb) {
        let d = (x.kld() - y.kld()).abs().max((x.sim() - y.sim()).abs()).max((x.nss() - y.nss()).abs());
        check(d <= 1e-9, || format!("metrics differ by {d:e}"))?;
    }
    check(a[1] != a[2], || "different seeds gave identical checkpoints".into())?;
    Ok("checkpoints, loss logs and pairs identical across runs".into())
}

fn panic_message(e: Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into())
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome, u64); 8] = [
        ("metrics match the reference loops", metric_oracle, 5),
        ("metric identities", metric_identities, 5),
        ("total loss gradient", gradient_check, 60),
        ("label heuristics", heuristics, 30),
        ("pair ranking", pairing_ranking, 60),
        ("cli pipeline learns", cli_pipeline, 300),
        ("refinement improves labels", refinement, 300),
        ("determinism", determinism, 600),
    ];
    println!();
    let mut failed = Vec::new();
    for (name, f, budget) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| Err(panic_message(e)));
        let took = start.elapsed();
        let result = result.and_then(|d| if took <= Duration::from_secs(budget) { Ok(d) } else { Err(format!("took {took:.1?}, budget {budget}s")) });
        match result {
            Ok(detail) => println!("PASS {name}: {detail} [{took:.1?}]"),
            Err(e) => {
                println!("FAIL {name}: {e} [{took:.1?}]");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
