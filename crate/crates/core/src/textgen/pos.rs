use std::fmt;

use serde::{Deserialize, Serialize};

/// Coarse word class: closed classes by list membership, everything else content.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordClass {
    Pronoun,
    Preposition,
    Auxiliary,
    Conjunction,
    Determiner,
    Filler,
    Content,
}

impl WordClass {
    pub const ALL: [WordClass; 7] = [
        WordClass::Pronoun,
        WordClass::Preposition,
        WordClass::Auxiliary,
        WordClass::Conjunction,
        WordClass::Determiner,
        WordClass::Filler,
        WordClass::Content,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            WordClass::Pronoun => "pronoun",
            WordClass::Preposition => "preposition",
            WordClass::Auxiliary => "auxiliary",
            WordClass::Conjunction => "conjunction",
            WordClass::Determiner => "determiner",
            WordClass::Filler => "filler",
            WordClass::Content => "content",
        }
    }
}

impl fmt::Display for WordClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const PRONOUNS: &[&str] = &[
    "i", "me", "my", "mine", "myself", "you", "your", "yours", "yourself", "yourselves", "he",
    "him", "his", "himself", "she", "her", "hers", "herself", "it", "its", "itself", "we", "us",
    "our", "ours", "ourselves", "they", "them", "their", "theirs", "themselves", "who", "whom",
    "whose", "someone", "somebody", "something", "anyone", "anybody", "anything", "everyone",
    "everybody", "everything", "nobody", "nothing",
];

const PREPOSITIONS: &[&str] = &[
    "about", "above", "across", "after", "against", "along", "among", "around", "at", "before",
    "behind", "below", "beneath", "beside", "between", "beyond", "by", "down", "during", "except",
    "for", "from", "in", "inside", "into", "near", "of", "off", "on", "onto", "out", "outside",
    "over", "past", "through", "throughout", "to", "toward", "towards", "under", "underneath",
    "up", "upon", "with", "within", "without",
];

const AUXILIARIES: &[&str] = &[
    "am", "is", "are", "was", "were", "be", "been", "being", "have", "has", "had", "do", "does",
    "did", "can", "could", "will", "would", "shall", "should", "may", "might", "must",
];

const CONJUNCTIONS: &[&str] = &[
    "and", "but", "or", "nor", "so", "yet", "because", "although", "though", "while", "if",
    "when", "unless", "since", "until", "whereas", "whether", "than",
];

const DETERMINERS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "some", "any", "every", "each", "no",
    "all", "both", "many", "much", "few", "several", "either", "neither", "another",
];

const FILLERS: &[&str] = &["um", "uh", "er", "erm", "ah", "hmm", "mm", "like"];

pub fn coarse_pos(word: &str) -> WordClass {
    let w = word.to_lowercase();
    let w = w.as_str();
    let lists: [(&[&str], WordClass); 6] = [
        (FILLERS, WordClass::Filler),
        (PRONOUNS, WordClass::Pronoun),
        (AUXILIARIES, WordClass::Auxiliary),
        (PREPOSITIONS, WordClass::Preposition),
        (CONJUNCTIONS, WordClass::Conjunction),
        (DETERMINERS, WordClass::Determiner),
    ];
    lists
        .iter()
        .find(|(list, _)| list.contains(&w))
        .map(|(_, class)| *class)
        .unwrap_or(WordClass::Content)
}
