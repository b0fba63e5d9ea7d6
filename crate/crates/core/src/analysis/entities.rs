//! Gazetteer-based entity tagging and per-tag surface distributions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use super::AnalysisError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EntityTag {
    Gpe,
    Person,
    Norp,
    Product,
    Other,
}

impl EntityTag {
    pub const ALL: [EntityTag; 5] = [Self::Gpe, Self::Person, Self::Norp, Self::Product, Self::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gpe => "GPE",
            Self::Person => "PERSON",
            Self::Norp => "NORP",
            Self::Product => "PRODUCT",
            Self::Other => "OTHER",
        }
    }
}

impl fmt::Display for EntityTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityTag {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| AnalysisError::UnknownTag(s.to_string()))
    }
}

/// Finds entity mentions; every returned surface is a substring of the
/// input.
pub trait EntityTagger: Send + Sync {
    fn name(&self) -> String;

    fn tag(&self, text: &str) -> Vec<(String, EntityTag)>;
}

/// Case-insensitive multiword lookup table, matched greedily (longest
/// entry first) over word boundaries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gazetteer {
    entries: HashMap<String, EntityTag>,
    longest: usize,
}

fn key_of<'a>(words: impl Iterator<Item = &'a str>) -> String {
    words.map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

impl Gazetteer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, surface: &str, tag: EntityTag) {
        let words: Vec<&str> = surface.unicode_words().collect();
        if words.is_empty() {
            return;
        }
        self.longest = self.longest.max(words.len());
        self.entries.insert(key_of(words.into_iter()), tag);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses `surface<TAB>TAG` lines. Lines without a tag take
    /// `default_tag`; blank lines and `#` comments are skipped.
    pub fn parse(text: &str, default_tag: Option<EntityTag>) -> Result<Self, AnalysisError> {
        let mut gazetteer = Self::new();
        for (index, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let error = |message: String| AnalysisError::Gazetteer {
                line: index + 1,
                message,
            };
            let (surface, tag) = match line.split_once('\t') {
                Some((surface, tag)) => (surface, tag.parse().map_err(|e: AnalysisError| error(e.to_string()))?),
                None => (line, default_tag.ok_or_else(|| error(format!("no tag for \"{line}\"")))?),
            };
            gazetteer.insert(surface.trim(), tag);
        }
        Ok(gazetteer)
    }

    /// Tags that occur in the table.
    pub fn tags(&self) -> BTreeSet<EntityTag> {
        self.entries.values().copied().collect()
    }

    /// Adds every entry of `other`; later entries win.
    pub fn merge(&mut self, other: Gazetteer) {
        self.longest = self.longest.max(other.longest);
        self.entries.extend(other.entries);
    }
}

impl EntityTagger for Gazetteer {
    fn name(&self) -> String {
        format!("gazetteer-{}", self.entries.len())
    }

    fn tag(&self, text: &str) -> Vec<(String, EntityTag)> {
        // possessives and elisions ("France's") match on the part before the apostrophe
        let words: Vec<(usize, &str)> = text
            .unicode_word_indices()
            .map(|(at, word)| (at, word.split(['\'', '\u{2019}']).next().unwrap_or(word)))
            .filter(|(_, word)| !word.is_empty())
            .collect();
        let mut found = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let hit = (1..=self.longest.min(words.len() - i)).rev().find_map(|len| {
                let key = key_of(words[i..i + len].iter().map(|(_, w)| *w));
                self.entries.get(&key).map(|&tag| (len, tag))
            });
            match hit {
                Some((len, tag)) => {
                    let (start, _) = words[i];
                    let (last, word) = words[i + len - 1];
                    found.push((text[start..last + word.len()].to_string(), tag));
                    i += len;
                }
                None => i += 1,
            }
        }
        found
    }
}

/// Case-folded surfaces of `tag` across `texts`, by count descending then
/// lexicographically.
pub fn entity_distribution<S: AsRef<str>>(texts: &[S], tagger: &dyn EntityTagger, tag: EntityTag) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        for (surface, found) in tagger.tag(text.as_ref()) {
            if found == tag {
                *counts.entry(surface.to_lowercase()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}
