use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{categorize, DatasetError, Identity, ImposterCategory, UtteranceRecord, WordPair};

/// Holdout and split parameters for one enrolled pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub target: WordPair,
    /// Speakers kept entirely out of training.
    pub unseen_speakers: BTreeSet<String>,
    /// Per speaker, words kept out of training.
    pub heldout_words: BTreeMap<String, BTreeSet<String>>,
    pub train_fraction: f64,
    pub oversample_factor: u32,
    pub seed: u64,
    /// Split positives and negatives separately at `train_fraction`.
    #[serde(default)]
    pub stratify: bool,
}

impl SplitPlan {
    pub fn new(target: WordPair) -> Self {
        Self {
            target,
            unseen_speakers: BTreeSet::new(),
            heldout_words: BTreeMap::new(),
            train_fraction: 0.7,
            oversample_factor: 11,
            seed: 0,
            stratify: false,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.unseen_speakers.contains(&self.target.speaker) {
            return Err(DatasetError::InvalidPlan(format!(
                "target speaker {} is in the unseen-speaker set",
                self.target.speaker
            )));
        }
        if self
            .heldout_words
            .get(&self.target.speaker)
            .is_some_and(|w| w.contains(&self.target.word))
        {
            return Err(DatasetError::InvalidPlan(format!(
                "target word {} is held out for the target speaker",
                self.target.word
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(DatasetError::InvalidPlan(format!(
                "train fraction {} must lie strictly between 0 and 1",
                self.train_fraction
            )));
        }
        if self.oversample_factor == 0 {
            return Err(DatasetError::InvalidPlan("oversample factor must be at least 1".into()));
        }
        Ok(())
    }

    fn is_heldout(&self, id: &Identity) -> bool {
        self.heldout_words.get(&id.speaker).is_some_and(|w| w.contains(&id.word))
    }
}

/// Which pool a sample was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    Working,
    UnseenSpeaker,
    HeldoutWord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSample {
    pub identity: Identity,
    /// Copy index from oversampling; 0 for the original.
    pub replica: u32,
    pub label: u8,
    pub category: ImposterCategory,
    pub pool: Pool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub records: usize,
    pub unseen_speaker_pool: usize,
    pub heldout_word_pool: usize,
    pub working_pool: usize,
    pub positives: usize,
    pub oversampled_positives: usize,
    pub working_after_oversampling: usize,
    pub train: usize,
    pub test_from_working: usize,
    pub test: usize,
}

/// Per-category tally over the whole corpus, with positives counted after
/// oversampling. A reporting view only: the split itself is built from the
/// holdout protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelingSummary {
    pub genuine: usize,
    pub genuine_oversampled: usize,
    pub same_person_wrong_word: usize,
    pub different_person_same_word: usize,
    pub different_person_wrong_word: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub plan: SplitPlan,
    pub train: Vec<SplitSample>,
    pub test: Vec<SplitSample>,
    pub provenance: Provenance,
    pub labeling_summary: LabelingSummary,
}

impl DatasetSplit {
    pub fn target(&self) -> &WordPair {
        &self.plan.target
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("split serializes");
        text.push('\n');
        fs::write(path, text).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| DatasetError::Malformed {
            line: e.line(),
            message: format!("split file {}: {e}", path.display()),
        })
    }
}

/// Applies the holdout protocol: unseen speakers and held-out words go to the
/// test set as negatives; the rest is labelled against the target, positives
/// are replicated, and the result is shuffled and split.
pub fn build_splits(
    records: &[UtteranceRecord],
    plan: &SplitPlan,
) -> Result<DatasetSplit, DatasetError> {
    plan.validate()?;
    let mut ids: Vec<&Identity> = records.iter().map(|r| &r.identity).collect();
    ids.sort();

    let sample = |id: &Identity, replica: u32, pool: Pool| {
        let category = categorize(id, &plan.target);
        SplitSample { identity: id.clone(), replica, label: category.label(), category, pool }
    };

    let mut unseen = Vec::new();
    let mut heldout = Vec::new();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for id in ids {
        if plan.unseen_speakers.contains(&id.speaker) {
            unseen.push(sample(id, 0, Pool::UnseenSpeaker));
        } else if plan.is_heldout(id) {
            heldout.push(sample(id, 0, Pool::HeldoutWord));
        } else if categorize(id, &plan.target) == ImposterCategory::Genuine {
            positives.push(id);
        } else {
            negatives.push(sample(id, 0, Pool::Working));
        }
    }
    if positives.is_empty() {
        return Err(DatasetError::TargetAbsent(plan.target.clone()));
    }
    if negatives.is_empty() {
        return Err(DatasetError::NoNegatives);
    }
    let working_pool = positives.len() + negatives.len();

    let mut replicated = Vec::with_capacity(positives.len() * plan.oversample_factor as usize);
    for id in &positives {
        for replica in 0..plan.oversample_factor {
            replicated.push(sample(id, replica, Pool::Working));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let (mut train, mut test) = if plan.stratify {
        let (pos_train, pos_test) = shuffle_split(replicated, plan.train_fraction, &mut rng);
        let (neg_train, neg_test) = shuffle_split(negatives, plan.train_fraction, &mut rng);
        let mut train = [pos_train, neg_train].concat();
        let mut test = [pos_test, neg_test].concat();
        train.shuffle(&mut rng);
        test.shuffle(&mut rng);
        (train, test)
    } else {
        let mut pool = replicated;
        pool.extend(negatives);
        shuffle_split(pool, plan.train_fraction, &mut rng)
    };
    let test_from_working = test.len();
    let unseen_count = unseen.len();
    let heldout_count = heldout.len();
    test.extend(unseen);
    test.extend(heldout);
    train.shrink_to_fit();

    let provenance = Provenance {
        records: records.len(),
        unseen_speaker_pool: unseen_count,
        heldout_word_pool: heldout_count,
        working_pool,
        positives: positives.len(),
        oversampled_positives: positives.len() * plan.oversample_factor as usize,
        working_after_oversampling: train.len() + test_from_working,
        train: train.len(),
        test_from_working,
        test: test.len(),
    };
    Ok(DatasetSplit {
        plan: plan.clone(),
        train,
        test,
        provenance,
        labeling_summary: labeling_summary(records, &plan.target, plan.oversample_factor),
    })
}

/// Number of training items out of `n` at `fraction`, rounded down.
fn train_count(n: usize, fraction: f64) -> usize {
    // The epsilon keeps exact products such as 0.7 * 450 from landing on 314.999...
    ((fraction * n as f64) + 1e-9).floor() as usize
}

fn shuffle_split<T>(mut items: Vec<T>, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<T>, Vec<T>) {
    items.shuffle(rng);
    let test = items.split_off(train_count(items.len(), fraction));
    (items, test)
}

pub fn labeling_summary(
    records: &[UtteranceRecord],
    target: &WordPair,
    oversample_factor: u32,
) -> LabelingSummary {
    let mut s = LabelingSummary { total: records.len(), ..Default::default() };
    for record in records {
        match categorize(&record.identity, target) {
            ImposterCategory::Genuine => s.genuine += 1,
            ImposterCategory::SamePersonWrongWord => s.same_person_wrong_word += 1,
            ImposterCategory::DifferentPersonSameWord => s.different_person_same_word += 1,
            ImposterCategory::DifferentPersonWrongWord => s.different_person_wrong_word += 1,
        }
    }
    s.genuine_oversampled = s.genuine * oversample_factor as usize;
    s
}

/// Draws `num_unseen` unseen speakers and, for every remaining speaker,
/// `num_heldout_words` held-out words. The target (when given) is never
/// drawn into either holdout.
pub fn resolve_holdouts(
    records: &[UtteranceRecord],
    target: Option<&WordPair>,
    num_unseen: usize,
    num_heldout_words: usize,
    seed: u64,
) -> Result<(BTreeSet<String>, BTreeMap<String, BTreeSet<String>>), DatasetError> {
    let mut words_by_speaker: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        words_by_speaker
            .entry(r.identity.speaker.as_str())
            .or_default()
            .insert(r.identity.word.as_str());
    }
    let candidates: Vec<&str> = words_by_speaker
        .keys()
        .copied()
        .filter(|s| target.map_or(true, |t| t.speaker != *s))
        .collect();
    if num_unseen > candidates.len() || num_unseen >= words_by_speaker.len() {
        return Err(DatasetError::InvalidPlan(format!(
            "cannot hold out {num_unseen} of {} speakers",
            words_by_speaker.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unseen: BTreeSet<String> =
        candidates.choose_multiple(&mut rng, num_unseen).map(|s| s.to_string()).collect();

    let mut heldout = BTreeMap::new();
    for (speaker, words) in &words_by_speaker {
        if unseen.contains(*speaker) {
            continue;
        }
        let pool: Vec<&str> = words
            .iter()
            .copied()
            .filter(|w| target.map_or(true, |t| t.speaker != *speaker || t.word != *w))
            .collect();
        if num_heldout_words > pool.len() || num_heldout_words >= words.len() {
            return Err(DatasetError::InvalidPlan(format!(
                "cannot hold out {num_heldout_words} of {} words for speaker {speaker}",
                words.len()
            )));
        }
        if num_heldout_words > 0 {
            let chosen = pool.choose_multiple(&mut rng, num_heldout_words);
            heldout.insert(speaker.to_string(), chosen.map(|w| w.to_string()).collect());
        }
    }
    Ok((unseen, heldout))
}
