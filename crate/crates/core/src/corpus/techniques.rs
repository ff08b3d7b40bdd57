use std::collections::BTreeSet;
use std::path::Path;

use crate::{Error, Result};

/// Default technique list, one per line. Replaceable by any file in the same
/// format via [`TechniqueLexicon::from_file`].
pub const SEED_LEXICON: &str = "\
# most frequent techniques
bake
combine
pour
boil
# common cooking verbs
add
beat
blend
braise
broil
brown
chill
chop
coat
cool
cover
cream
cut
dice
drain
drizzle
fold
freeze
fry
garnish
grate
grease
grill
heat
knead
marinate
mash
melt
mince
mix
peel
poach
preheat
puree
reduce
refrigerate
roast
roll
saute
season
serve
shred
sift
simmer
slice
soak
spread
sprinkle
steam
stir
strain
toast
toss
whisk
";

/// Collapses whitespace runs to single spaces and trims the ends.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercased alphanumeric words; every other character is a boundary.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TechniqueLexicon {
    techniques: BTreeSet<String>,
    // word sequence per technique, for multi-word entries like "stir fry"
    patterns: Vec<(String, Vec<String>)>,
}

impl TechniqueLexicon {
    pub fn new<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut techniques = BTreeSet::new();
        for entry in entries {
            let folded = normalize_text(&entry.as_ref().to_lowercase());
            if folded.is_empty() {
                continue;
            }
            if !techniques.insert(folded.clone()) {
                return Err(Error::Invalid(format!("duplicate technique {folded:?} in lexicon")));
            }
        }
        if techniques.is_empty() {
            return Err(Error::Invalid("technique lexicon is empty".into()));
        }
        let patterns = techniques.iter().map(|t| (t.clone(), word_tokens(t))).collect();
        Ok(TechniqueLexicon { techniques, patterns })
    }

    /// Parses the one-technique-per-line format; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(text.lines().map(|line| line.split('#').next().unwrap_or("").trim()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn seed() -> Self {
        Self::parse(SEED_LEXICON).expect("seed lexicon is valid")
    }

    pub fn len(&self) -> usize {
        self.techniques.len()
    }

    pub fn is_empty(&self) -> bool {
        self.techniques.is_empty()
    }

    pub fn contains(&self, technique: &str) -> bool {
        self.techniques.contains(technique)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.techniques.iter().map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.techniques {
            out.push_str(t);
            out.push('\n');
        }
        out
    }
}

/// Techniques occurring as case-insensitive whole-word matches in any step.
pub fn extract_techniques<S: AsRef<str>>(steps: &[S], lexicon: &TechniqueLexicon) -> BTreeSet<String> {
    let mut found = BTreeSet::new();
    for step in steps {
        let words = word_tokens(step.as_ref());
        for (name, pattern) in &lexicon.patterns {
            if pattern.is_empty() || found.contains(name) {
                continue;
            }
            if words.windows(pattern.len()).any(|w| w == pattern.as_slice()) {
                found.insert(name.clone());
            }
        }
    }
    found
}
