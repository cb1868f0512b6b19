//! Replays the three published English/Zulu tweet pairs through the fixture
//! backend and the corpus pipeline.

mod common;

use std::path::PathBuf;
use std::sync::Arc;

use common::lang;
use stancebridge::augmentation::translate_corpus;
use stancebridge::corpus::parse_semeval;
use stancebridge::translation::{FixtureBackend, TranslateError, TranslationCache, Translator};
use stancebridge::StanceLabel;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn translator() -> Translator {
    let fx = FixtureBackend::load(&fixture("en_zu_examples.jsonl")).unwrap();
    Translator::new(Arc::new(fx)).with_cache(Arc::new(TranslationCache::in_memory()))
}

#[test]
fn english_tweets_translate_to_published_zulu() {
    let en = parse_semeval(&fixture("en_examples.txt"), &lang("en")).unwrap();
    let zu_ref = parse_semeval(&fixture("zu_examples.txt"), &lang("zu")).unwrap();
    assert_eq!(en.size(), 3);
    assert_eq!(
        en.iter().map(|e| e.stance).collect::<Vec<_>>(),
        [StanceLabel::Against, StanceLabel::Favor, StanceLabel::None]
    );
    let t = translator();
    let zu = translate_corpus(&en, &lang("en"), &lang("zu"), &t, 2).unwrap();
    for (got, want) in zu.iter().zip(zu_ref.iter()) {
        assert_eq!(got.text, want.text);
        assert_eq!(got.stance, want.stance);
        assert_eq!(got.target, want.target);
        assert_eq!(got.id, want.id);
        assert_eq!(got.language, lang("zu"));
        assert_eq!(got.provenance.len(), 1);
    }
    assert_eq!(t.stats().backend_calls, 3);
    translate_corpus(&en, &lang("en"), &lang("zu"), &t, 1).unwrap();
    assert_eq!(t.stats().backend_calls, 3);
}

#[test]
fn unrecorded_pair_is_unsupported() {
    let t = translator();
    let err = t
        .translate("Some men", &lang("zu"), &lang("en"))
        .unwrap_err();
    assert!(matches!(err, TranslateError::Unsupported { .. }), "{err}");
}
