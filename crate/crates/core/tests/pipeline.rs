use std::collections::{BTreeMap, BTreeSet};

use docent::dataio::{make_splits, read_split_bundle, write_split_bundle, MetadataStore, SplitTable};
use docent::evalkit::{aggregate, evaluate, RecallMode};
use docent::featbank::{featurize_corpus, Encoders, FeatureCache, HashingTextEncoder, PixelStatsEncoder, SyntheticRaster};
use docent::ingest::{ingest_document, page_layouts_from_json, parse_article_xml, AlignmentConfig};
use docent::qgen::{generate_questions, PromptSet, QGenConfig, TemplateGenerator};
use docent::retriever::{load_checkpoint, prepare_samples, save_checkpoint, InputEncoders, Retriever, RetrieverConfig};
use docent::trainer::{train, TrainConfig};

#[test]
fn synthetic_corpus_through_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let source = docent::synth::synth_corpus(5, 2).unwrap();

    let mut store = MetadataStore::new();
    for doc in &source {
        let (pages, xml) = docent::synth::ingest_inputs(doc);
        let layouts = page_layouts_from_json(&serde_json::to_string(&pages).unwrap()).unwrap();
        let (rec, _) = ingest_document(&doc.document_id, &layouts, &parse_article_xml(&xml).unwrap(), &AlignmentConfig::default()).unwrap();
        assert_eq!(rec.entities.len(), doc.entities.len(), "{}", doc.document_id);
        store.insert(rec.document_id.clone(), rec);
    }

    let docs: Vec<_> = store.values().collect();
    let (questions, records) = generate_questions(&docs, &TemplateGenerator::new(1), &PromptSet::default(), &QGenConfig::default()).unwrap();
    assert!(!questions.is_empty());
    assert_eq!(records.iter().map(|r| r.kept_questions.len()).sum::<usize>(), questions.len());

    let ids: Vec<String> = store.keys().cloned().collect();
    let splits = make_splits(&ids, (0.6, 0.2, 0.2), 4).unwrap();
    for name in ["train", "val", "test"] {
        let keep: BTreeSet<&String> = splits.get(name).unwrap().iter().collect();
        let rows = questions.iter().filter(|q| keep.contains(&q.document_id)).cloned().collect();
        let sub = store.iter().filter(|(k, _)| keep.contains(k)).map(|(k, v)| (k.clone(), v.clone())).collect();
        write_split_bundle(dir.path(), name, &SplitTable::new(rows), &sub).unwrap();
    }
    let (train_t, _) = read_split_bundle(dir.path(), "train").unwrap();
    let (val_t, _) = read_split_bundle(dir.path(), "val").unwrap();
    let (test_t, _) = read_split_bundle(dir.path(), "test").unwrap();
    assert_eq!(train_t.len() + val_t.len() + test_t.len(), questions.len());

    let cfg = RetrieverConfig { hidden: 32, ffn: 64, heads: 2, encoder_layers: 1, decoder_layers: 1, ..RetrieverConfig::desk() };
    let text = HashingTextEncoder::new(0);
    let raster = SyntheticRaster::default();
    let enc = Encoders { text: &text, visual: &PixelStatsEncoder, images: &raster, fine_grained_cap: cfg.fine_grained_cap };
    let cache = FeatureCache::new(dir.path().join("features"));
    let feats = featurize_corpus(&docs, &enc, Some(&cache), 2).unwrap();
    let again = featurize_corpus(&docs, &enc, Some(&cache), 1).unwrap();
    assert_eq!(feats, again);
    let feats: BTreeMap<_, _> = feats.into_iter().map(|f| (f.document_id.clone(), f)).collect();

    let ie = InputEncoders { text: &text, patch: None, images: None };
    let prep = |t: &SplitTable| prepare_samples(&cfg, &t.rows, &feats, &store, &ie).unwrap();
    let (tr, va, te) = (prep(&train_t), prep(&val_t), prep(&test_t));
    let tc = TrainConfig { learning_rate: 1e-3, max_epochs: 2, batch_size: 8, ..TrainConfig::default() };
    let out = train(Retriever::new(cfg.clone(), 0).unwrap(), &tr, &va, &tc, Default::default(), None).unwrap();
    assert_eq!(out.history.len(), 2);

    let ck = dir.path().join("model.ckpt");
    save_checkpoint(&ck, &out.best).unwrap();
    let model = load_checkpoint(&ck, Some(&cfg)).unwrap().retriever;
    assert_eq!(model, out.best.retriever);
    let scored = evaluate(&model, &te, 2).unwrap();
    let results: Vec<_> = scored.into_iter().map(|s| s.result).collect();
    let report = aggregate(&results, "base", "test", RecallMode::Macro).unwrap();
    assert_eq!(report.overall.n, test_t.len());
    assert!(report.overall.em <= report.overall.pm);
}
