//! Deterministic synthetic caption corpora built from class-distinct
//! keyword pools. Used by the end-to-end experiments, the transfer and
//! sweep harnesses, and the benchmarks: real captions are not required to
//! exercise the training pipeline.

use rand::prelude::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CaptionSource, LabeledCaption, LabeledCorpus, TaskKind};
use crate::hash::derive_seed;

/// One synthetic class: a name plus the keyword pool its captions draw
/// from. The name itself is part of the pool.
#[derive(Debug, Clone)]
pub struct KeywordClass {
    pub name: String,
    pub keywords: Vec<String>,
}

/// Five audio-event classes with disjoint keyword pools.
pub fn default_classes() -> Vec<KeywordClass> {
    let spec: [(&str, &[&str]); 5] = [
        ("dog", &["dog", "bark", "woof", "puppy", "growl", "howl"]),
        ("rain", &["rain", "drizzle", "raindrops", "downpour", "shower", "storm"]),
        ("engine", &["engine", "motor", "revving", "diesel", "turbine", "idling"]),
        ("piano", &["piano", "keys", "melody", "chords", "keyboard", "notes"]),
        ("siren", &["siren", "alarm", "wailing", "ambulance", "emergency", "blaring"]),
    ];
    spec.iter()
        .map(|(name, kws)| KeywordClass {
            name: name.to_string(),
            keywords: kws.iter().map(|k| k.to_string()).collect(),
        })
        .collect()
}

/// Filler words shared by every class; they carry no label signal and keep
/// the zero-shot baseline imperfect.
const FILLERS: [&str; 14] = [
    "sound", "in", "the", "distance", "loud", "soft", "nearby", "faint", "background", "room",
    "street", "night", "morning", "recording",
];

fn caption_for(class: &KeywordClass, rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(5..=8);
    let name_slot = rng.gen_range(1..4);
    let mut words = Vec::with_capacity(len);
    for pos in 0..len {
        if pos == name_slot {
            // Every caption mentions its class by name, the way a captioner
            // would; the surrounding words are class keywords and fillers.
            words.push(class.name.clone());
        } else if pos == name_slot + 2 || rng.gen_bool(0.35) {
            words.push(class.keywords.choose(rng).expect("non-empty pool").clone());
        } else {
            words.push(FILLERS.choose(rng).expect("fillers").to_string());
        }
    }
    words.join(" ")
}

fn corpus_from(
    classes: &[KeywordClass],
    per_class: usize,
    seed: u64,
    tag: &str,
) -> LabeledCorpus {
    let class_names: Vec<String> = classes.iter().map(|c| c.name.clone()).collect();
    let c = classes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, tag));
    let mut captions = Vec::with_capacity(c * per_class);
    for _ in 0..per_class {
        for (idx, class) in classes.iter().enumerate() {
            let mut label = vec![false; c];
            label[idx] = true;
            captions.push(LabeledCaption {
                text: caption_for(class, &mut rng),
                label,
                source: CaptionSource::Collected,
            });
        }
    }
    LabeledCorpus {
        captions,
        class_names,
        task_kind: TaskKind::SingleLabel,
    }
}

/// Generate disjoint train and held-out corpora over the same classes.
pub fn keyword_corpora(
    classes: &[KeywordClass],
    train_per_class: usize,
    held_out_per_class: usize,
    seed: u64,
) -> (LabeledCorpus, LabeledCorpus) {
    (
        corpus_from(classes, train_per_class, seed, "synth/train"),
        corpus_from(classes, held_out_per_class, seed, "synth/held_out"),
    )
}

/// Restrict a corpus to the captions of the given class indices, keeping
/// only those classes in the label space.
pub fn restrict_classes(corpus: &LabeledCorpus, keep: &[usize]) -> LabeledCorpus {
    let class_names: Vec<String> = keep
        .iter()
        .map(|&i| corpus.class_names[i].clone())
        .collect();
    let captions = corpus
        .captions
        .iter()
        .filter_map(|cap| {
            let positives = cap.positives();
            let kept: Vec<usize> = positives
                .iter()
                .filter_map(|p| keep.iter().position(|&k| k == *p))
                .collect();
            if kept.len() != positives.len() || kept.is_empty() {
                return None;
            }
            let mut label = vec![false; keep.len()];
            for k in kept {
                label[k] = true;
            }
            Some(LabeledCaption {
                text: cap.text.clone(),
                label,
                source: cap.source,
            })
        })
        .collect();
    LabeledCorpus {
        captions,
        class_names,
        task_kind: corpus.task_kind,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let classes = default_classes();
        let (a_train, a_held) = keyword_corpora(&classes, 4, 2, 9);
        let (b_train, b_held) = keyword_corpora(&classes, 4, 2, 9);
        assert_eq!(a_train, b_train);
        assert_eq!(a_held, b_held);
        assert_ne!(a_train, a_held);
    }

    #[test]
    fn counts_and_labels() {
        let classes = default_classes();
        let (train, held) = keyword_corpora(&classes, 20, 10, 0);
        assert_eq!(train.len(), 100);
        assert_eq!(held.len(), 50);
        assert_eq!(train.class_counts(), vec![20; 5]);
        assert_eq!(held.class_counts(), vec![10; 5]);
    }

    #[test]
    fn captions_contain_class_keywords() {
        let classes = default_classes();
        let (train, _) = keyword_corpora(&classes, 5, 1, 3);
        for cap in &train.captions {
            let cls = cap.positives()[0];
            let pool = &classes[cls].keywords;
            let hit = cap
                .text
                .split_whitespace()
                .any(|w| pool.iter().any(|k| k == w));
            assert!(hit, "caption {:?} has no keyword of its class", cap.text);
        }
    }

    #[test]
    fn restriction_drops_other_classes() {
        let classes = default_classes();
        let (train, _) = keyword_corpora(&classes, 3, 1, 1);
        let small = restrict_classes(&train, &[0, 1, 2]);
        assert_eq!(small.class_names.len(), 3);
        assert_eq!(small.len(), 9);
        assert!(small.captions.iter().all(|c| c.label.len() == 3));
    }
}
