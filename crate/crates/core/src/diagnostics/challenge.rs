use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// The phenomenon a challenge sentence stresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChallengeKind {
    Date,
    Acronym,
    RepeatedWord,
}

const MONTHS: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October",
    "November", "December",
];
const ORDINALS: [&str; 8] = ["first", "second", "third", "fourth", "ninth", "twelfth", "twentieth", "thirty first"];
const YEARS: [&str; 5] = [
    "nineteen ninety nine",
    "two thousand one",
    "twenty twelve",
    "eighteen oh four",
    "twenty twenty",
];
const ACRONYMS: [&str; 8] = ["F B I", "N A S A", "U S B", "C P U", "B B C", "D N A", "H T M L", "I O U"];
const NOUNS: [&str; 8] = ["report", "letter", "signal", "garden", "ticket", "engine", "painting", "meeting"];
const ADVERBS: [&str; 6] = ["very", "really", "far", "so", "much", "never"];
const VERBS: [&str; 6] = ["arrived", "moved", "changed", "failed", "opened", "started"];

/// `n` seeded sentences cycling through dates, spelled acronyms and
/// immediately repeated words.
pub fn challenge_set(n: usize, seed: u64) -> Vec<(ChallengeKind, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng, list: &[&'static str]| *list.choose(rng).expect("non-empty list");
    (0..n)
        .map(|i| match i % 3 {
            0 => (
                ChallengeKind::Date,
                format!(
                    "The {} {} on {} {}, {}.",
                    pick(&mut rng, &NOUNS),
                    pick(&mut rng, &VERBS),
                    pick(&mut rng, &MONTHS),
                    pick(&mut rng, &ORDINALS),
                    pick(&mut rng, &YEARS)
                ),
            ),
            1 => (
                ChallengeKind::Acronym,
                format!(
                    "The {} sent the {} to the {}.",
                    pick(&mut rng, &ACRONYMS),
                    pick(&mut rng, &NOUNS),
                    pick(&mut rng, &ACRONYMS)
                ),
            ),
            _ => {
                let word = pick(&mut rng, &ADVERBS);
                let times = rng.random_range(2..=4);
                let repeated = vec![word; times].join(" ");
                (
                    ChallengeKind::RepeatedWord,
                    format!("The {} {} {} slowly.", pick(&mut rng, &NOUNS), pick(&mut rng, &VERBS), repeated),
                )
            }
        })
        .collect()
}

/// Non-empty lines of a sentence file, skipping `#` comments.
pub fn read_sentence_slot(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}
