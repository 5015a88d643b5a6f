//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use image::{Rgb, RgbImage};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use docent::dataio::{
    default_split_ratios, make_splits, metadata_from_str, metadata_to_string, read_split_from, write_split_to, MetadataStore,
    SplitTable,
};
use docent::docmodel::{DocumentRecord, QASample, SuperSection};
use docent::evalkit::{aggregate, exact_match, multilabel_recall, page_bucket, partial_match, score_question, RecallMode};
use docent::featbank::{featurize_document, DocumentFeatures, Encoders, HashingTextEncoder, PixelStatsEncoder, SyntheticRaster, TEXT_DIM};
use docent::ingest::{map_super_section, SECTION_ALIGNMENT};
use docent::retriever::{
    composite_pages, prepare_samples, HostVariant, InputEncoders, PreparedSample, Retriever, RetrieverConfig, RoiContextualizer, Variant,
};
use docent::trainer::{gradient_check, train, TrainConfig};

const ORACLE_BUDGET: Duration = Duration::from_secs(1);
const OVERFIT_EM: f64 = 0.9;
const OVERFIT_EPOCHS: usize = 200;
const OVERFIT_BUDGET: Duration = Duration::from_secs(300);
const GRAD_REL_TOL: f64 = 1e-3;
const PADDING_TOL: f64 = 1e-5;
const ROUND_TRIPS: usize = 100;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn set(ids: &[u32]) -> BTreeSet<u32> {
    ids.iter().copied().collect()
}

fn subset(mask: u32) -> BTreeSet<u32> {
    (0..4).filter(|i| mask & (1 << i) != 0).collect()
}

fn sample(id: u64, gt: &[u32], s: SuperSection, range: (usize, usize)) -> QASample {
    QASample {
        question: format!("Which entity answers question {id}?"),
        document_id: "D1".into(),
        answer_objt_ids: set(gt),
        super_section: s,
        id,
        page_range: range,
        context: (!s.is_visual()).then(|| "context".to_string()),
    }
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut n = 0;
    for g in 1u32..16 {
        for p in 0u32..16 {
            let (gt, pred) = (subset(g), subset(p));
            let em = (0..4).all(|e| pred.contains(&e) == gt.contains(&e)) as u8;
            let pm = ((0..4).any(|e| pred.contains(&e)) && (0..4).all(|e| !pred.contains(&e) || gt.contains(&e))) as u8;
            let hits = (0..4).filter(|e| pred.contains(e) && gt.contains(e)).count();
            let mr = hits as f64 / (0..4).filter(|e| gt.contains(e)).count() as f64;
            let got = (exact_match(&pred, &gt).unwrap(), partial_match(&pred, &gt).unwrap(), multilabel_recall(&pred, &gt).unwrap());
            check(got == (em, pm, mr), || format!("pred {pred:?} gt {gt:?}: {got:?} != {:?}", (em, pm, mr)))?;
            n += 1;
        }
    }
    let took = start.elapsed();
    check(n == 240, || format!("{n} pairs"))?;
    check(took < ORACLE_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("{n} pairs exact in {took:?}"))
}

fn worked_example() -> Outcome {
    let (gt, pred) = (set(&[1, 2]), set(&[1]));
    let got = (exact_match(&pred, &gt).unwrap(), partial_match(&pred, &gt).unwrap(), multilabel_recall(&pred, &gt).unwrap());
    check(got == (0, 1, 0.5), || format!("{got:?}"))?;
    let r = score_question(&sample(1, &[1, 2], SuperSection::Intro, (0, 0)), &pred, true).map_err(|e| e.to_string())?;
    check((r.tp, r.fn_) == (1, 1), || format!("tp {} fn {}", r.tp, r.fn_))?;
    let rep = aggregate(&[r], "m", "test", RecallMode::Macro).map_err(|e| e.to_string())?;
    let o = rep.overall;
    check((o.em, o.pm, o.mr) == (0.0, 1.0, 0.5), || format!("aggregate {o:?}"))?;
    Ok("EM 0, PM 1, MR 0.5 with TP 1, FN 1".into())
}

fn metric_ordering() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut records = Vec::new();
    for i in 0..1000u64 {
        let universe = rng.random_range(1..12u32);
        let mut gt: Vec<u32> = (0..universe).filter(|_| rng.random_bool(0.4)).collect();
        if gt.is_empty() {
            gt.push(rng.random_range(0..universe));
        }
        let pred: BTreeSet<u32> = (0..universe).filter(|_| rng.random_bool(0.4)).collect();
        let r = score_question(&sample(i, &gt, SuperSection::RD, (0, 0)), &pred, true).map_err(|e| e.to_string())?;
        check(r.em as f64 <= r.pm as f64 && r.em as f64 <= r.mr, || format!("question {i}: {r:?}"))?;
        records.push(r);
    }
    let splits = 200;
    for k in 0..splits {
        let part: Vec<_> = records.iter().filter(|_| rng.random_bool(0.3)).cloned().collect();
        if part.is_empty() {
            continue;
        }
        let o = aggregate(&part, "m", "s", RecallMode::Macro).map_err(|e| e.to_string())?.overall;
        check(o.em <= o.pm, || format!("split {k}: EM {} > PM {}", o.em, o.pm))?;
    }
    Ok(format!("1000 questions, {splits} random splits"))
}

fn super_section_mapping() -> Outcome {
    for r in SECTION_ALIGNMENT {
        check(map_super_section(r.title) == r.super_section, || format!("row {:?}", r.title))?;
    }
    for (title, want) in [
        ("materials and methods", SuperSection::MM),
        ("patients and methods", SuperSection::MM),
        ("concluding remarks", SuperSection::Concl),
        ("supplementary material", SuperSection::Other),
    ] {
        check(map_super_section(title) == want, || format!("spot {title:?} -> {:?}", map_super_section(title)))?;
    }
    Ok(format!("{} of {} rows plus 4 spot titles", SECTION_ALIGNMENT.len(), SECTION_ALIGNMENT.len()))
}

fn split_sizes() -> Outcome {
    let ids: Vec<String> = (0..3146).map(|i| format!("PMC{i:07}")).collect();
    let a = make_splits(&ids, default_split_ratios(), 7).map_err(|e| e.to_string())?;
    check(a.sizes() == (2209, 314, 623), || format!("sizes {:?}", a.sizes()))?;
    let b = make_splits(&ids, default_split_ratios(), 7).map_err(|e| e.to_string())?;
    check(a == b, || "same seed gave different splits".into())?;
    let c = make_splits(&ids, default_split_ratios(), 8).map_err(|e| e.to_string())?;
    check(c.sizes() == a.sizes() && c != a, || "another seed should reshuffle with equal sizes".into())?;
    let all: BTreeSet<&String> = a.train.iter().chain(&a.val).chain(&a.test).collect();
    check(all.len() == 3146, || format!("{} distinct ids", all.len()))?;
    Ok("(2209, 314, 623), deterministic per seed".into())
}

struct Fixture {
    questions: Vec<QASample>,
    features: BTreeMap<String, DocumentFeatures>,
    store: MetadataStore,
}

fn fixture(cfg: &RetrieverConfig, n_docs: usize, seed: u64) -> Fixture {
    let docs = docent::synth::synth_corpus(n_docs, seed).unwrap();
    let questions = docent::synth::synth_questions(&docs, seed).unwrap();
    let text = HashingTextEncoder::new(0);
    let raster = SyntheticRaster::default();
    let enc = Encoders { text: &text, visual: &PixelStatsEncoder, images: &raster, fine_grained_cap: cfg.fine_grained_cap };
    let features = docs.iter().map(|d| (d.document_id.clone(), featurize_document(d, &enc).unwrap())).collect();
    let store = docs.into_iter().map(|d| (d.document_id.clone(), d)).collect();
    Fixture { questions, features, store }
}

fn prepare(cfg: &RetrieverConfig, f: &Fixture) -> Vec<PreparedSample> {
    let text = HashingTextEncoder::new(0);
    let raster = SyntheticRaster::default();
    let enc = InputEncoders { text: &text, patch: None, images: Some(&raster) };
    prepare_samples(cfg, &f.questions, &f.features, &f.store, &enc).unwrap()
}

fn overfit() -> Outcome {
    let cfg = RetrieverConfig::desk();
    let f = fixture(&cfg, 2, 21);
    let data: Vec<PreparedSample> = prepare(&cfg, &f).into_iter().filter(|p| p.scorable).take(20).collect();
    check(data.len() == 20, || format!("fixture has {} questions", data.len()))?;
    let tc = TrainConfig {
        learning_rate: 1e-4,
        max_epochs: OVERFIT_EPOCHS,
        batch_size: 1,
        seed: 0,
        target_metric: Some(OVERFIT_EM),
        threads: 1,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = train(Retriever::new(cfg, 0).unwrap(), &data, &data, &tc, Default::default(), None).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let best = &out.history[out.best_epoch - 1];
    check(best.val_em >= OVERFIT_EM, || format!("best EM {:.3} after {} epochs", best.val_em, out.history.len()))?;
    check(took < OVERFIT_BUDGET, || format!("took {took:?}"))?;
    Ok(format!("EM {:.3} at epoch {} in {:.1?}", best.val_em, out.best_epoch, took))
}

fn gradient_correctness() -> Outcome {
    let cfg = RetrieverConfig::desk();
    let f = fixture(&cfg, 1, 4);
    let data = prepare(&cfg, &f);
    let model = Retriever::new(cfg, 5).unwrap();
    let checks = gradient_check(&model, &data[0], 10, 6, 1e-5).map_err(|e| e.to_string())?;
    check(checks.len() == 10, || format!("{} checks", checks.len()))?;
    let worst = checks.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)).unwrap();
    check(worst.rel_error <= GRAD_REL_TOL, || format!("{worst:?}"))?;
    Ok(format!("10 parameters, worst relative error {:.2e} ({})", worst.rel_error, worst.name))
}

fn predictions(model: &Retriever, data: &[PreparedSample]) -> Vec<BTreeSet<u32>> {
    data.iter().map(|p| model.predict(&p.input).unwrap().0.predicted_ids).collect()
}

fn variant_reductions() -> Outcome {
    let small = RetrieverConfig { encoder_layers: 1, decoder_layers: 1, roi_layers: 1, jg_layers: 1, patch_grid: (3, 4), ..RetrieverConfig::desk() };
    let f = fixture(&small, 2, 8);
    let base_cfg = RetrieverConfig { variant: Variant::Base, ..small.clone() };
    let roi_cfg = RetrieverConfig { variant: Variant::Roi, roi_contextualizer: RoiContextualizer::Identity, ..small.clone() };
    let base = Retriever::new(base_cfg.clone(), 3).unwrap();
    let roi = Retriever::new(roi_cfg, 3).unwrap();
    let data = prepare(&base_cfg, &f);
    check(predictions(&base, &data) == predictions(&roi, &data), || "identity roi differs from base".into())?;
    let mut hosts = 0;
    for host in HostVariant::ALL {
        let variant = match host {
            HostVariant::Base => Variant::Base,
            HostVariant::Roi => Variant::Roi,
            HostVariant::Patch => Variant::Patch,
        };
        let host_cfg = RetrieverConfig { variant, ..small.clone() };
        let jg_cfg = RetrieverConfig { variant: Variant::JointGrained, jg_host: *host, ..small.clone() };
        let h = Retriever::new(host_cfg.clone(), 9).unwrap();
        let j = Retriever::new(jg_cfg, 9).unwrap();
        let data = prepare(&host_cfg, &f);
        let empty: Vec<PreparedSample> = data
            .iter()
            .cloned()
            .map(|mut p| {
                p.input.fine_tokens = Some(Array2::zeros((0, TEXT_DIM)));
                p
            })
            .collect();
        check(predictions(&h, &data) == predictions(&j, &empty), || format!("empty-memory jg differs from {host}"))?;
        hosts += 1;
    }
    Ok(format!("{} questions, roi identity and {hosts} hosts", data.len()))
}

fn compositing() -> Outcome {
    let (w, h) = (40, 60);
    for n in 1..=6u32 {
        let pages: Vec<RgbImage> = (0..n).map(|i| RgbImage::from_pixel(w, h, Rgb([i as u8 * 30, 0, 0]))).collect();
        let refs: Vec<&RgbImage> = pages.iter().collect();
        let c = composite_pages(&refs).map_err(|e| e.to_string())?;
        check(c.width() == n * w && c.height() == h, || format!("{n} pages -> {}x{}", c.width(), c.height()))?;
    }
    let heights = [30u32, 50, 20];
    let widths = [10u32, 14, 6];
    let colors = [Rgb([200, 10, 10]), Rgb([10, 200, 10]), Rgb([10, 10, 200])];
    let pages: Vec<RgbImage> = (0..3).map(|i| RgbImage::from_pixel(widths[i], heights[i], colors[i])).collect();
    let refs: Vec<&RgbImage> = pages.iter().collect();
    let c = composite_pages(&refs).map_err(|e| e.to_string())?;
    check((c.width(), c.height()) == (30, 50), || format!("mixed -> {}x{}", c.width(), c.height()))?;
    let mut x0 = 0;
    for i in 0..3 {
        for x in x0..x0 + widths[i] {
            for y in 0..c.height() {
                let want = if y < heights[i] { colors[i] } else { Rgb([255, 255, 255]) };
                check(*c.get_pixel(x, y) == want, || format!("pixel ({x}, {y})"))?;
            }
        }
        x0 += widths[i];
    }
    Ok("widths N x w for N = 1..6; mixed heights pixel-exact".into())
}

fn table_bytes(t: &SplitTable) -> Vec<u8> {
    let mut buf = Vec::new();
    write_split_to(t, &mut buf).unwrap();
    buf
}

const NOISE: &[&str] = &["\"quoted\"", ", comma", "line\nbreak", "semi;colon", "tab\there", "unicode µm ≥", "'apostrophe'"];

fn noisy(rng: &mut ChaCha8Rng, s: &str) -> String {
    let mut out = s.to_string();
    for _ in 0..rng.random_range(0..3) {
        out.push(' ');
        out.push_str(NOISE[rng.random_range(0..NOISE.len())]);
    }
    out
}

fn data_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for trial in 0..ROUND_TRIPS {
        let n = rng.random_range(1..4);
        let docs: Vec<DocumentRecord> = docent::synth::synth_corpus(n, rng.random()).unwrap();
        let store: MetadataStore = docs.iter().map(|d| (d.document_id.clone(), d.clone())).collect();
        let text = metadata_to_string(&store).map_err(|e| e.to_string())?;
        let back = metadata_from_str(&text).map_err(|e| e.to_string())?;
        check(back == store, || format!("trial {trial}: metadata values differ"))?;
        check(metadata_to_string(&back).unwrap() == text, || format!("trial {trial}: metadata bytes differ"))?;

        let mut rows = docent::synth::synth_questions(&docs, rng.random()).unwrap();
        for r in &mut rows {
            if let Some(c) = &r.context {
                r.context = Some(noisy(&mut rng, c));
            }
        }
        let t = SplitTable::new(rows);
        let bytes = table_bytes(&t);
        let back = read_split_from(bytes.as_slice()).map_err(|e| format!("trial {trial}: {e}"))?;
        check(back == t, || format!("trial {trial}: table values differ"))?;
        check(table_bytes(&back) == bytes, || format!("trial {trial}: table bytes differ"))?;
    }
    let published = "question,document_id,answer_objt_id,super_section,id,page_range,context\n\
        What is the survivorship rate of Total Hip Arthroplasty at 25-year follow-up?,PMC8987314,\"[7, 8]\",introduction,21045,\"(0, 1)\",Total hip arthroplasty (THA) is a highly successful operation with greater than 85% ...\n\
        Can you locate the table comparing CMV characteristics in patients treated with ICI drugs?,PMC9399572,[64],table,36776,\"(2, 6)\",N/A\n";
    let t = read_split_from(published.as_bytes()).map_err(|e| e.to_string())?;
    let (a, b) = (&t.rows[0], &t.rows[1]);
    check(a.answer_objt_ids == set(&[7, 8]) && a.page_range == (0, 1), || format!("{a:?}"))?;
    check(a.super_section == SuperSection::Intro && a.id == 21045 && a.document_id == "PMC8987314", || format!("{a:?}"))?;
    check(a.context.as_deref().is_some_and(|c| c.starts_with("Total hip arthroplasty (THA)")), || format!("{a:?}"))?;
    check(b.answer_objt_ids == set(&[64]) && b.page_range == (2, 6) && b.n_pages() == 5, || format!("{b:?}"))?;
    check(b.super_section == SuperSection::Table && b.context.is_none(), || format!("{b:?}"))?;
    Ok(format!("{ROUND_TRIPS} trials byte-identical; sample rows parsed"))
}

fn padding_insensitivity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for variant in [Variant::Base, Variant::Roi, Variant::JointGrained] {
        let cfg = RetrieverConfig { variant, encoder_layers: 1, decoder_layers: 1, roi_layers: 1, jg_layers: 1, ..RetrieverConfig::desk() };
        let f = fixture(&cfg, 1, 12);
        let model = Retriever::new(cfg.clone(), 13).unwrap();
        for p in prepare(&cfg, &f).iter().take(5) {
            let room = cfg.max_entities - p.input.rows();
            let (a, _) = model.embeddings(&p.input).map_err(|e| e.to_string())?;
            for k in [1, 7.min(room)] {
                let (b, _) = model.embeddings(&p.input.padded(k)).map_err(|e| e.to_string())?;
                let d = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                worst = worst.max(d);
                checked += 1;
            }
        }
    }
    check(worst <= PADDING_TOL, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("{checked} padded inputs, max deviation {worst:.2e}"))
}

fn page_buckets() -> Outcome {
    let s = sample(1, &[3], SuperSection::Table, (2, 6));
    let r = score_question(&s, &set(&[3]), true).map_err(|e| e.to_string())?;
    check(page_bucket(r.n_pages) == 5, || format!("(2, 6) -> bucket {}", page_bucket(r.n_pages)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 500;
    let records: Vec<_> = (0..n as u64)
        .map(|i| {
            let start = rng.random_range(0..10);
            let s = sample(i, &[1], SuperSection::RD, (start, start + rng.random_range(0..15)));
            score_question(&s, &set(&[1]), true).unwrap()
        })
        .collect();
    let rep = aggregate(&records, "m", "s", RecallMode::Macro).map_err(|e| e.to_string())?;
    let total: usize = rep.by_pages.values().map(|c| c.n).sum();
    check(total == n, || format!("buckets sum to {total}"))?;
    check(rep.by_pages.keys().all(|b| (1..=9).contains(b)), || format!("{:?}", rep.by_pages.keys()))?;
    Ok(format!("(2, 6) -> 5; {n} samples over {} buckets", rep.by_pages.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("metric oracle equivalence", metric_oracle),
        ("worked example", worked_example),
        ("metric ordering", metric_ordering),
        ("super-section mapping", super_section_mapping),
        ("split sizes", split_sizes),
        ("overfit sanity", overfit),
        ("gradient correctness", gradient_correctness),
        ("variant reductions", variant_reductions),
        ("compositing", compositing),
        ("data format round-trips", data_round_trips),
        ("padding insensitivity", padding_insensitivity),
        ("page buckets", page_buckets),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match std::panic::catch_unwind(f) {
            Ok(Ok(detail)) => println!("PASS {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {name}: panicked");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
