//! Fixtures shared by the integration targets.
#![allow(dead_code)]

use std::sync::Arc;

use stancebridge::augmentation::{translate_corpus, AugmentationPlan, CorpusSet, SourceRef};
use stancebridge::evalharness::synthetic::{synthetic_corpus, SyntheticConfig};
use stancebridge::evalharness::{
    ExperimentSpec, PipelineConfig, Protocol, Role, TargetSpec, TestSpec,
};
use stancebridge::model::{LmConfig, ModelConfig, TrainConfig, UnfreezeSchedule};
use stancebridge::objectives::SeparabilityConfig;
use stancebridge::translation::{MockBackend, MockNoiseConfig, Translator};
use stancebridge::Lang;

pub fn lang(tag: &str) -> Lang {
    Lang::new(tag).unwrap()
}

pub fn mock_translator(seed: u64) -> Translator {
    Translator::new(Arc::new(MockBackend::new(seed, MockNoiseConfig::default())))
}

/// Small model and schedule used by the synthetic end-to-end runs.
pub fn desk_pipeline(hidden: usize, last_stage_epochs: usize) -> PipelineConfig {
    PipelineConfig {
        model: ModelConfig {
            embedding_dim: hidden,
            hidden_dim: hidden,
            head_hidden_dim: hidden,
            ..Default::default()
        },
        finetune: LmConfig {
            epochs: 1,
            ..Default::default()
        },
        classifier: TrainConfig {
            lr_head: 0.05,
            lr_encoder: 0.05,
            schedule: UnfreezeSchedule {
                epochs_per_stage: [1, 1, 1, last_stage_epochs],
            },
            separability: SeparabilityConfig {
                alpha: 0.1,
                normalize_rows: true,
                ..Default::default()
            },
            ..Default::default()
        },
        ..Default::default()
    }
}

/// Clean source corpus "source" and its noisy counterpart "target": a fresh
/// draw from the same generator, round-tripped en→zu→en through the mock.
pub fn noisy_transfer_corpora(n_examples: usize, translator: &Translator) -> CorpusSet {
    let syn = SyntheticConfig {
        n_examples,
        ..Default::default()
    };
    let source = synthetic_corpus(&syn, 1, "en-synth");
    let clean_target = synthetic_corpus(&syn, 2, "en-target");
    let zu = translate_corpus(&clean_target, &lang("en"), &lang("zu"), translator, 1).unwrap();
    let target = translate_corpus(&zu, &lang("zu"), &lang("en"), translator, 1).unwrap();
    let mut set = CorpusSet::new();
    set.insert("source".into(), source);
    set.insert("target".into(), target);
    set
}

pub struct TrendSpecs {
    pub dlb: ExperimentSpec,
    pub dr: ExperimentSpec,
    pub eng_only: ExperimentSpec,
    pub da: ExperimentSpec,
}

/// The four runs of the randomization / adaptation comparison over
/// [`noisy_transfer_corpora`].
pub fn trend_specs(pipeline: PipelineConfig, seeds: Vec<u64>, pivots: &[&str]) -> TrendSpecs {
    let whole = TestSpec {
        label: "Target".into(),
        corpus: "target".into(),
        translate_to: None,
        accuracy: true,
    };
    let split = TargetSpec {
        corpus: "target".into(),
        label: "Target-30".into(),
        protocol: Protocol::Holdout {
            train_fraction: 0.7,
            stratify: None,
        },
        split_seed: 11,
        train_on_split: false,
        translate_to: None,
        accuracy: true,
    };
    let dlb = ExperimentSpec {
        name: "English-Only".into(),
        role: Role::Dlb,
        train: vec!["source".into()],
        plan: None,
        target: None,
        tests: vec![whole],
        pretrain_corpus: None,
        pipeline,
        seeds,
    };
    let dr = ExperimentSpec {
        name: format!("Randomized-English-{}", pivots.len()),
        role: Role::DrSweep,
        train: vec![],
        plan: Some(AugmentationPlan::dr(
            lang("en"),
            SourceRef {
                corpus: "source".into(),
                language: lang("en"),
            },
            pivots.iter().map(|p| lang(p)).collect(),
            0,
        )),
        ..dlb.clone()
    };
    let eng_only = ExperimentSpec {
        name: "Eng-Only".into(),
        tests: vec![],
        target: Some(split.clone()),
        ..dlb.clone()
    };
    let da = ExperimentSpec {
        name: "Eng-Target".into(),
        role: Role::Da,
        tests: vec![],
        target: Some(TargetSpec {
            train_on_split: true,
            ..split
        }),
        ..dlb.clone()
    };
    TrendSpecs {
        dlb,
        dr,
        eng_only,
        da,
    }
}
