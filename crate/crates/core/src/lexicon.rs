//! Pronouncing lexicon in CMUdict format, with an IPA view and a coarse
//! articulatory feature table per phone.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::Serialize;
use thiserror::Error;

use crate::edit;

const BUNDLED_DICT: &str = include_str!("../data/cmudict-subset.dict");
const BUNDLED_FEATURES: &str = include_str!("../data/phone-features.txt");
const BUNDLED_IPA: &str = include_str!("../data/arpabet-ipa.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LexiconError {
    #[error("unknown phone {0:?}")]
    UnknownPhone(String),
    #[error("{source_name} line {line}: {reason}")]
    MalformedLine { source_name: &'static str, line: usize, reason: String },
    #[error("word {0:?} is not in the lexicon")]
    OutOfVocabulary(String),
    #[error("phone {0} has no IPA mapping")]
    MissingIpa(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for LexiconError {
    fn from(e: std::io::Error) -> Self {
        LexiconError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Place {
    Front,
    Central,
    Back,
    Bilabial,
    Labiodental,
    Dental,
    Alveolar,
    Postalveolar,
    Palatal,
    Velar,
    Labiovelar,
    Glottal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Manner {
    Close,
    NearClose,
    CloseMid,
    OpenMid,
    NearOpen,
    Open,
    Rhotic,
    DiphFront,
    DiphBack,
    StopVoiced,
    StopVoiceless,
    AffricateVoiced,
    AffricateVoiceless,
    FricativeVoiced,
    FricativeVoiceless,
    Nasal,
    Lateral,
    Glide,
}

macro_rules! parse_enum {
    ($ty:ty, $($name:literal => $var:ident),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok(<$ty>::$var),)+
                    other => Err(format!("unknown {} {other:?}", stringify!($ty).to_lowercase())),
                }
            }
        }
    };
}

parse_enum!(Place,
    "front" => Front, "central" => Central, "back" => Back, "bilabial" => Bilabial,
    "labiodental" => Labiodental, "dental" => Dental, "alveolar" => Alveolar,
    "postalveolar" => Postalveolar, "palatal" => Palatal, "velar" => Velar,
    "labiovelar" => Labiovelar, "glottal" => Glottal,
);

parse_enum!(Manner,
    "close" => Close, "near_close" => NearClose, "close_mid" => CloseMid,
    "open_mid" => OpenMid, "near_open" => NearOpen, "open" => Open, "rhotic" => Rhotic,
    "diph_front" => DiphFront, "diph_back" => DiphBack, "stop_voiced" => StopVoiced,
    "stop_voiceless" => StopVoiceless, "affricate_voiced" => AffricateVoiced,
    "affricate_voiceless" => AffricateVoiceless, "fricative_voiced" => FricativeVoiced,
    "fricative_voiceless" => FricativeVoiceless, "nasal" => Nasal, "lateral" => Lateral,
    "glide" => Glide,
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PhoneFeatures {
    pub is_vowel: bool,
    pub is_continuant: bool,
    pub place: Place,
    pub manner: Manner,
}

#[derive(Debug, Clone)]
struct PhoneInfo {
    symbol: String,
    ipa: String,
    features: PhoneFeatures,
}

/// A phone in a phonemized word sequence, tagged with its source word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PhoneToken {
    pub phone: String,
    pub word: usize,
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<Vec<String>>>,
    phones: Vec<PhoneInfo>,
    by_symbol: HashMap<String, usize>,
    by_ipa: HashMap<String, usize>,
}

impl Lexicon {
    /// The bundled CMUdict subset with the shipped feature and IPA tables.
    pub fn bundled() -> &'static Lexicon {
        static LEXICON: OnceLock<Lexicon> = OnceLock::new();
        LEXICON.get_or_init(|| {
            Lexicon::load(BUNDLED_DICT.as_bytes(), BUNDLED_FEATURES.as_bytes(), BUNDLED_IPA.as_bytes())
                .expect("bundled lexicon is well formed")
        })
    }

    pub fn from_paths(
        dictionary: impl AsRef<Path>,
        features: impl AsRef<Path>,
        ipa: impl AsRef<Path>,
    ) -> Result<Lexicon, LexiconError> {
        let open = |p: &Path| File::open(p).map(BufReader::new);
        Lexicon::load(open(dictionary.as_ref())?, open(features.as_ref())?, open(ipa.as_ref())?)
    }

    /// Loads a CMUdict-format dictionary plus the feature table
    /// (`PHONE vowel continuant place manner`) and the two-column IPA map.
    pub fn load(
        dictionary: impl BufRead,
        features: impl BufRead,
        ipa: impl BufRead,
    ) -> Result<Lexicon, LexiconError> {
        let mut phones = Vec::new();
        let mut by_symbol = HashMap::new();
        for (n, line) in features.lines().enumerate() {
            let line = line?;
            let Some(body) = content(&line) else { continue };
            let bad = |reason: String| LexiconError::MalformedLine { source_name: "feature table", line: n + 1, reason };
            let cols: Vec<&str> = body.split_whitespace().collect();
            if cols.len() != 5 {
                return Err(bad(format!("expected 5 columns, found {}", cols.len())));
            }
            let flag = |s: &str| match s {
                "1" | "true" | "yes" => Ok(true),
                "0" | "false" | "no" => Ok(false),
                other => Err(bad(format!("bad flag {other:?}"))),
            };
            let features = PhoneFeatures {
                is_vowel: flag(cols[1])?,
                is_continuant: flag(cols[2])?,
                place: cols[3].parse().map_err(bad)?,
                manner: cols[4].parse().map_err(bad)?,
            };
            let symbol = cols[0].to_string();
            if by_symbol.insert(symbol.clone(), phones.len()).is_some() {
                return Err(bad(format!("duplicate phone {symbol}")));
            }
            phones.push(PhoneInfo { symbol, ipa: String::new(), features });
        }

        let mut by_ipa = HashMap::new();
        for (n, line) in ipa.lines().enumerate() {
            let line = line?;
            let Some(body) = content(&line) else { continue };
            let bad = |reason: String| LexiconError::MalformedLine { source_name: "ipa map", line: n + 1, reason };
            let cols: Vec<&str> = body.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(bad(format!("expected 2 columns, found {}", cols.len())));
            }
            let idx = *by_symbol
                .get(cols[0])
                .ok_or_else(|| LexiconError::UnknownPhone(cols[0].to_string()))?;
            if by_ipa.insert(cols[1].to_string(), idx).is_some() {
                return Err(bad(format!("IPA symbol {} mapped twice", cols[1])));
            }
            phones[idx].ipa = cols[1].to_string();
        }
        if let Some(p) = phones.iter().find(|p| p.ipa.is_empty()) {
            return Err(LexiconError::MissingIpa(p.symbol.clone()));
        }

        let mut entries: BTreeMap<String, Vec<Vec<String>>> = BTreeMap::new();
        for (n, line) in dictionary.lines().enumerate() {
            let line = line?;
            if line.starts_with(";;;") {
                continue;
            }
            let Some(body) = content(&line) else { continue };
            let bad = |reason: String| LexiconError::MalformedLine { source_name: "dictionary", line: n + 1, reason };
            let mut fields = body.split_whitespace();
            let head = fields.next().ok_or_else(|| bad("empty entry".into()))?;
            let word = variant_base(head).to_lowercase();
            let mut pron = Vec::new();
            for raw in fields {
                let phone = raw.trim_end_matches(['0', '1', '2']);
                if phone.is_empty() || !phone.chars().all(|c| c.is_ascii_uppercase()) {
                    return Err(bad(format!("bad phone {raw:?} for {head}")));
                }
                if !by_symbol.contains_key(phone) {
                    return Err(LexiconError::UnknownPhone(phone.to_string()));
                }
                pron.push(phone.to_string());
            }
            if pron.is_empty() {
                return Err(bad(format!("{head} has no pronunciation")));
            }
            entries.entry(word).or_default().push(pron);
        }

        Ok(Lexicon { entries, phones, by_symbol, by_ipa })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.entries.contains_key(&word.to_lowercase())
    }

    pub fn pronunciations(&self, word: &str) -> Option<&[Vec<String>]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    /// First listed pronunciation.
    pub fn pronunciation(&self, word: &str) -> Option<&[String]> {
        self.pronunciations(word).and_then(|p| p.first()).map(Vec::as_slice)
    }

    /// Phones in inventory order (the order of the feature table).
    pub fn inventory(&self) -> impl Iterator<Item = &str> {
        self.phones.iter().map(|p| p.symbol.as_str())
    }

    pub fn inventory_len(&self) -> usize {
        self.phones.len()
    }

    pub fn has_phone(&self, phone: &str) -> bool {
        self.by_symbol.contains_key(phone)
    }

    pub fn inventory_index(&self, phone: &str) -> Result<usize, LexiconError> {
        self.by_symbol.get(phone).copied().ok_or_else(|| LexiconError::UnknownPhone(phone.to_string()))
    }

    pub fn features(&self, phone: &str) -> Result<PhoneFeatures, LexiconError> {
        Ok(self.phones[self.inventory_index(phone)?].features)
    }

    pub fn to_ipa(&self, phone: &str) -> Result<&str, LexiconError> {
        Ok(&self.phones[self.inventory_index(phone)?].ipa)
    }

    pub fn from_ipa(&self, ipa: &str) -> Option<&str> {
        self.by_ipa.get(ipa).map(|&i| self.phones[i].symbol.as_str())
    }

    /// First-variant pronunciations of `words`, concatenated, each phone
    /// tagged with the index of the word it came from.
    pub fn phonemize<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<PhoneToken>, LexiconError> {
        let mut out = Vec::new();
        for (i, w) in words.iter().enumerate() {
            let w = w.as_ref();
            let pron = self.pronunciation(w).ok_or_else(|| LexiconError::OutOfVocabulary(w.to_string()))?;
            out.extend(pron.iter().map(|p| PhoneToken { phone: p.clone(), word: i }));
        }
        Ok(out)
    }

    /// Number of differing fields among vowel, continuant, place and manner.
    pub fn phone_distance(&self, p: &str, q: &str) -> Result<u32, LexiconError> {
        let a = self.features(p)?;
        let b = self.features(q)?;
        Ok(u32::from(a.is_vowel != b.is_vowel)
            + u32::from(a.is_continuant != b.is_continuant)
            + u32::from(a.place != b.place)
            + u32::from(a.manner != b.manner))
    }

    /// Vowels and continuants can be held; stops and affricates cannot.
    pub fn is_prolongable(&self, phone: &str) -> Result<bool, LexiconError> {
        let f = self.features(phone)?;
        Ok(f.is_vowel || f.is_continuant)
    }

    /// Phone-level edit distance between the first pronunciations of two words.
    pub fn word_distance(&self, a: &str, b: &str) -> Result<usize, LexiconError> {
        let pa = self.pronunciation(a).ok_or_else(|| LexiconError::OutOfVocabulary(a.to_string()))?;
        let pb = self.pronunciation(b).ok_or_else(|| LexiconError::OutOfVocabulary(b.to_string()))?;
        Ok(edit::distance(pa, pb))
    }

    /// Words whose pronunciation lies within `1..=max_distance` phone edits of
    /// `word`, ordered by distance then spelling. Homophones are excluded.
    pub fn similar_words(&self, word: &str, max_distance: usize) -> Result<Vec<(&str, usize)>, LexiconError> {
        let target = self
            .pronunciation(word)
            .ok_or_else(|| LexiconError::OutOfVocabulary(word.to_string()))?;
        let mut out: Vec<(&str, usize)> = self
            .entries
            .iter()
            .filter_map(|(w, prons)| {
                let pron = prons.first()?;
                if pron.len().abs_diff(target.len()) > max_distance {
                    return None;
                }
                let d = edit::distance(pron.as_slice(), target);
                (d >= 1 && d <= max_distance).then_some((w.as_str(), d))
            })
            .collect();
        out.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(b.0)));
        Ok(out)
    }
}

/// Strips `# ...` comments and surrounding whitespace; `None` for blank lines.
fn content(line: &str) -> Option<&str> {
    let body = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    };
    let body = body.trim();
    (!body.is_empty()).then_some(body)
}

/// `READ(2)` -> `READ`.
fn variant_base(head: &str) -> &str {
    match head.rfind('(') {
        Some(i) if head.ends_with(')') && head[i + 1..head.len() - 1].chars().all(|c| c.is_ascii_digit()) => &head[..i],
        _ => head,
    }
}
