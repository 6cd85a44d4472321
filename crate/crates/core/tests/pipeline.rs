use docpretrain::corpus::CorpusConfig;
use docpretrain::doc_model::TokenizedDocument;
use docpretrain::encoder::ModelInput;
use docpretrain::finetune::{sec_example, BioLabelSet};
use docpretrain::pipeline::{ablation_configs, CorpusSource, RunConfig, Segments, Workspace};

fn small() -> RunConfig {
    RunConfig {
        corpus: CorpusSource::Inline(CorpusConfig { document_count: 20, segment_split_prob: 0.5, ..Default::default() }),
        bpe_merges: 64,
        finetune: docpretrain::pipeline::FinetuneSettings { train_docs: 5, eval_docs: 5, ..Default::default() },
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn ablation_configs_differ_only_in_objective_weights() {
    let rows = ablation_configs(&small());
    let names: Vec<_> = rows.iter().map(|(n, _)| *n).collect();
    assert_eq!(names, ["MLM", "MLM+1-LOP", "MLM+2-TSC", "MLM+1-LOP+2-TSC"]);
    let weights: Vec<_> = rows.iter().map(|(_, c)| (c.pretrain.alpha, c.pretrain.gamma)).collect();
    assert_eq!(weights, [(0.0, 0.0), (0.5, 0.0), (0.0, 0.5), (0.5, 0.5)]);
    let strip = |c: &RunConfig| {
        let mut v = serde_json::to_value(c).unwrap();
        let p = v["pretrain"].as_object_mut().unwrap();
        p.remove("alpha");
        p.remove("gamma");
        serde_json::to_string(&v).unwrap()
    };
    let base = strip(&rows[0].1);
    assert!(rows.iter().all(|(_, c)| strip(c) == base));
}

#[test]
fn seed_reaches_every_component() {
    let mut c = small();
    c.seed = 42;
    let e = c.effective();
    let CorpusSource::Inline(cc) = &e.corpus else { panic!("inline corpus") };
    assert_eq!((cc.rng_seed, e.pretrain.rng_seed, e.finetune.train.seed), (42, 42, 42));
    assert_ne!(c.hash(), RunConfig { seed: 43, ..c.clone() }.hash());
}

#[test]
fn workspace_splits_are_disjoint_and_sized() {
    let ws = Workspace::prepare(&small(), None).unwrap();
    assert_eq!(ws.pretrain_docs().len(), 15);
    assert_eq!(ws.finetune_docs().len(), 5);
    assert_eq!(ws.eval_docs().len(), 5);
    // labeled training documents are the last pre-training ones; held-out ones never overlap
    assert_eq!(ws.finetune_docs(), &ws.pretrain_docs()[10..]);
    assert_eq!(ws.config.encoder.vocab_size, ws.tokenizer.vocab_size());
    let labels = ws.labels();
    assert_eq!(labels.classes(), ["answer", "header", "question"]);
}

#[test]
fn group_segments_replace_ocr_segments() {
    let ocr = Workspace::prepare(&small(), None).unwrap();
    let grouped = Workspace::prepare(&RunConfig { segments: Segments::Groups, ..small() }, None).unwrap();
    for (a, b) in ocr.docs.iter().zip(&grouped.docs) {
        assert_eq!(a.document.words, b.document.words);
        assert_eq!(b.document.segments, b.truth.as_ref().unwrap().semantic_groups);
    }
    assert!(ocr.docs.iter().any(|d| d.document.segments.len() > d.truth.as_ref().unwrap().semantic_groups.len()));
}

#[test]
fn invalid_configs_name_the_field() {
    let err = |c: RunConfig| Workspace::prepare(&c, None).unwrap_err().to_string();
    let mut c = small();
    c.finetune.eval_docs = 20;
    assert!(err(c).contains("finetune.eval_docs"));
    let c = RunConfig { corpus: CorpusSource::Path("/no/such/corpus".into()), ..small() };
    assert!(err(c).contains("corpus"));
    let mut c = small();
    c.pretrain.theta_sim = 2.0;
    assert!(err(c).contains("theta_sim"));
    let bad: Result<RunConfig, _> = serde_json::from_str(r#"{"pretrain": {"alpah": 0.5}}"#);
    assert!(bad.is_err());
}

#[test]
fn model_inputs_never_read_annotations() {
    // the input builder only sees the tokenized OCR view
    let _: fn(&TokenizedDocument) -> ModelInput = ModelInput::from_document;
    let ws = Workspace::prepare(&small(), None).unwrap();
    let d = &ws.docs[0];
    let truth = d.truth.clone().unwrap();
    let labels = BioLabelSet::new(&["question", "answer", "header"]);
    let a = sec_example(&d.document, &truth, &ws.tokenizer, &labels, 512).unwrap();
    // regrouping words into singletons changes gold tags but not the input
    let mut regrouped = truth.clone();
    regrouped.semantic_groups = (0..d.document.len()).map(|w| vec![w]).collect();
    let b = sec_example(&d.document, &regrouped, &ws.tokenizer, &labels, 512).unwrap();
    assert_eq!(ModelInput::from_document(&a.doc), ModelInput::from_document(&b.doc));
    assert_ne!(a.tags, b.tags);
}
