use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Dataset, Instance, RelationInventory, Span, Split, NA};

/// Shape of a synthetic relation corpus.
///
/// Each positive relation owns a few trigger tokens. A positive sentence
/// places one of them between its two entity mentions with probability
/// `pattern_strength`; everything else is filler drawn from `vocab_size`
/// neutral words. `NA` sentences never contain a trigger.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Total classes including `NA`.
    pub n_relations: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub vocab_size: usize,
    pub pattern_strength: f64,
    /// Probability that a sentence is `NA`.
    pub na_fraction: f64,
    pub triggers_per_relation: usize,
    pub n_entities: usize,
    /// Filler tokens between the two mentions, besides the trigger.
    pub max_gap: usize,
    /// Filler tokens before the first and after the second mention.
    pub max_margin: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_relations: 9,
            n_train: 2000,
            n_val: 500,
            n_test: 1000,
            vocab_size: 200,
            pattern_strength: 1.0,
            na_fraction: 0.3,
            triggers_per_relation: 2,
            n_entities: 400,
            max_gap: 4,
            max_margin: 4,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidSpec(m.to_string()));
        if self.n_relations < 2 {
            return bad("n_relations must be at least 2 (one positive plus NA)");
        }
        if !(0.0..=1.0).contains(&self.pattern_strength) {
            return bad("pattern_strength must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.na_fraction) {
            return bad("na_fraction must lie in [0, 1]");
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive");
        }
        if self.triggers_per_relation == 0 {
            return bad("triggers_per_relation must be positive");
        }
        if self.n_entities < 2 {
            return bad("n_entities must be at least 2");
        }
        Ok(())
    }

    pub fn inventory(&self) -> RelationInventory {
        let mut names = vec![NA.to_string()];
        names.extend((1..self.n_relations).map(|r| format!("rel_{r}")));
        RelationInventory::new(names).expect("generated names are valid")
    }

    /// Trigger token `k` of positive relation `r`.
    pub fn trigger(relation: usize, k: usize) -> String {
        format!("t{relation}_{k}")
    }
}

fn sentence<R: Rng>(spec: &SynthSpec, relation: usize, id: String, rng: &mut R) -> Instance {
    let filler = |rng: &mut R| format!("w{}", rng.gen_range(0..spec.vocab_size));
    let head = rng.gen_range(0..spec.n_entities);
    let mut tail = rng.gen_range(0..spec.n_entities - 1);
    if tail >= head {
        tail += 1;
    }

    let mut gap: Vec<String> = (0..rng.gen_range(0..=spec.max_gap)).map(|_| filler(rng)).collect();
    let planted = relation != 0 && rng.gen::<f64>() < spec.pattern_strength;
    if planted {
        let k = rng.gen_range(0..spec.triggers_per_relation);
        let at = rng.gen_range(0..=gap.len());
        gap.insert(at, SynthSpec::trigger(relation, k));
    } else if gap.is_empty() {
        gap.push(filler(rng));
    }

    let mut tokens: Vec<String> = (0..rng.gen_range(0..=spec.max_margin)).map(|_| filler(rng)).collect();
    let head_first = rng.gen_bool(0.5);
    let (first, second) = if head_first { (head, tail) } else { (tail, head) };
    let first_at = tokens.len();
    tokens.push(format!("ent{first}"));
    tokens.extend(gap);
    let second_at = tokens.len();
    tokens.push(format!("ent{second}"));
    let suffix = rng.gen_range(0..=spec.max_margin);
    tokens.extend((0..suffix).map(|_| filler(rng)));

    let (h, t) = if head_first { (first_at, second_at) } else { (second_at, first_at) };
    Instance {
        id,
        tokens,
        head: Span::new(h, h),
        tail: Span::new(t, t),
        relation,
    }
}

fn split_data<R: Rng>(spec: &SynthSpec, split: Split, n: usize, rng: &mut R) -> Dataset {
    let positives: Vec<usize> = (1..spec.n_relations).collect();
    let instances = (0..n)
        .map(|i| {
            let relation = if rng.gen::<f64>() < spec.na_fraction {
                0
            } else {
                *positives.choose(rng).expect("at least one positive")
            };
            sentence(spec, relation, format!("{split}-{i:06}"), rng)
        })
        .collect();
    Dataset {
        inventory: spec.inventory(),
        instances,
        split,
    }
}

/// Generates train, validation and test splits. Same spec and seed give
/// identical datasets.
pub fn generate_synthetic(
    spec: &SynthSpec,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset), CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = split_data(spec, Split::Train, spec.n_train, &mut rng);
    let val = split_data(spec, Split::Validation, spec.n_val, &mut rng);
    let test = split_data(spec, Split::Test, spec.n_test, &mut rng);
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::hash_map::DefaultHasher;
    use std::hash::{Hash, Hasher};

    fn checksum(d: &Dataset) -> u64 {
        let mut h = DefaultHasher::new();
        for inst in &d.instances {
            inst.tokens.hash(&mut h);
            inst.relation.hash(&mut h);
        }
        h.finish()
    }

    #[test]
    fn nine_relations_is_eight_positives_plus_na() {
        let spec = SynthSpec {
            n_relations: 9,
            ..SynthSpec::default()
        };
        let inv = spec.inventory();
        assert_eq!(inv.len(), 9);
        assert_eq!(inv.positives().count(), 8);
        assert_eq!(inv.name(inv.na_index()), NA);
    }

    #[test]
    fn full_pattern_strength_plants_every_trigger() {
        let spec = SynthSpec {
            n_relations: 5,
            n_train: 300,
            n_val: 50,
            n_test: 50,
            pattern_strength: 1.0,
            ..SynthSpec::default()
        };
        let (train, val, test) = generate_synthetic(&spec, 1).unwrap();
        for d in [&train, &val, &test] {
            d.instances.iter().for_each(|i| i.validate(&d.inventory).unwrap());
            for inst in &d.instances {
                // Keyword classifier: the relation whose trigger appears.
                let found: Vec<usize> = (1..5)
                    .filter(|&r| {
                        (0..spec.triggers_per_relation)
                            .any(|k| inst.tokens.contains(&SynthSpec::trigger(r, k)))
                    })
                    .collect();
                if inst.relation == 0 {
                    assert!(found.is_empty());
                } else {
                    assert_eq!(found, vec![inst.relation]);
                    // Trigger sits between the two mentions.
                    let lo = inst.head.start.min(inst.tail.start);
                    let hi = inst.head.start.max(inst.tail.start);
                    let pos = inst.tokens.iter().position(|t| t.starts_with('t')).unwrap();
                    assert!(lo < pos && pos < hi);
                }
            }
        }
    }

    #[test]
    fn zero_pattern_strength_plants_nothing() {
        let spec = SynthSpec {
            pattern_strength: 0.0,
            n_train: 200,
            ..SynthSpec::default()
        };
        let (train, _, _) = generate_synthetic(&spec, 2).unwrap();
        assert!(train
            .instances
            .iter()
            .all(|i| i.tokens.iter().all(|t| !t.starts_with('t'))));
    }

    #[test]
    fn same_seed_same_data() {
        let spec = SynthSpec::default();
        let a = generate_synthetic(&spec, 7).unwrap();
        let b = generate_synthetic(&spec, 7).unwrap();
        assert_eq!(checksum(&a.0), checksum(&b.0));
        assert_eq!(a, b);
        let c = generate_synthetic(&spec, 8).unwrap();
        assert_ne!(checksum(&a.0), checksum(&c.0));
    }

    #[test]
    fn invalid_specs_rejected() {
        for spec in [
            SynthSpec { n_relations: 1, ..SynthSpec::default() },
            SynthSpec { pattern_strength: 1.5, ..SynthSpec::default() },
            SynthSpec { vocab_size: 0, ..SynthSpec::default() },
        ] {
            assert!(matches!(generate_synthetic(&spec, 0), Err(CorpusError::InvalidSpec(_))));
        }
    }
}
