use std::collections::BTreeSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, Dataset, FlipLog, Instance, Split};

type Triple = (String, String, String);

fn triple(data: &Dataset, inst: &Instance) -> Triple {
    (
        inst.head_text(),
        inst.tail_text(),
        data.inventory.name(inst.relation).to_string(),
    )
}

/// Drops every train/validation instance whose (head text, tail text,
/// relation) triple also occurs in `test`. Entity text is the
/// space-joined tokens of the span; relations compare by name.
pub fn heldout_filter(train: &Dataset, val: &Dataset, test: &Dataset) -> (Dataset, Dataset) {
    let held: BTreeSet<Triple> = test.instances.iter().map(|i| triple(test, i)).collect();
    let keep = |d: &Dataset| Dataset {
        inventory: d.inventory.clone(),
        split: d.split,
        instances: d
            .instances
            .iter()
            .filter(|i| !held.contains(&triple(d, i)))
            .cloned()
            .collect(),
    };
    (keep(train), keep(val))
}

/// `floor(ratio * positives)`, tolerant of products like `0.29 * 100`
/// landing a hair below the integer in binary floating point.
pub fn flip_count(ratio: f64, positives: usize) -> usize {
    ((ratio * positives as f64 + 1e-9).floor() as usize).min(positives)
}

/// Turns `floor(ratio * P)` positives, chosen uniformly without replacement,
/// into `NA` and logs their original relations.
pub fn inject_false_negatives(
    data: &Dataset,
    ratio: f64,
    seed: u64,
) -> Result<(Dataset, FlipLog), CorpusError> {
    if !(0.0..=1.0).contains(&ratio) || ratio.is_nan() {
        return Err(CorpusError::InvalidRatio(ratio));
    }
    if data.split == Split::Test {
        return Err(CorpusError::TestSplit);
    }
    let na = data.inventory.na_index();
    let positives: Vec<usize> = data
        .instances
        .iter()
        .enumerate()
        .filter(|(_, i)| i.relation != na)
        .map(|(k, _)| k)
        .collect();
    let count = flip_count(ratio, positives.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, positives.len(), count).into_vec();
    picked.sort_unstable();

    let mut out = data.clone();
    let mut log = FlipLog::default();
    for p in picked {
        let inst = &mut out.instances[positives[p]];
        let previous = log.entries.insert(inst.id.clone(), inst.relation);
        if previous.is_some() {
            return Err(CorpusError::InvalidInstance {
                id: inst.id.clone(),
                msg: "duplicate instance id".into(),
            });
        }
        inst.relation = na;
    }
    Ok((out, log))
}
