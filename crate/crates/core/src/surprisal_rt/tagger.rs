//! Coarse rule-based part-of-speech tagger: a closed-class lexicon plus
//! suffix heuristics. Used only when the reading-time file has no tags.

pub const TAGGER_ID: &str = "rule-lexicon-suffix/1";

const DET: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "some", "any", "every", "each", "no",
    "my", "your", "his", "her", "its", "our", "their",
];
const PRON: &[&str] = &[
    "i", "you", "he", "she", "it", "we", "they", "me", "him", "us", "them", "himself",
    "herself", "itself", "themselves", "myself", "yourself", "ourselves", "who", "whom",
    "which", "what",
];
const ADP: &[&str] = &[
    "in", "on", "at", "by", "with", "from", "to", "of", "for", "near", "behind", "beside",
    "across", "under", "above", "over", "into", "through", "after", "before", "about",
    "around", "between", "against", "without", "within", "during", "toward", "towards",
];
const CONJ: &[&str] = &["and", "or", "but", "nor", "so", "yet", "because", "although", "if", "while", "when"];
const AUX: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had", "do",
    "does", "did", "will", "would", "can", "could", "shall", "should", "may", "might", "must",
];
const ADV: &[&str] = &[
    "not", "very", "too", "also", "here", "there", "today", "again", "often", "always",
    "never", "rarely", "early", "late", "outside", "together", "now", "then", "soon", "still",
];

/// Tag for one surface word (punctuation included).
pub fn tag(word: &str) -> &'static str {
    let core: String = word
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    if core.is_empty() {
        return "PUNCT";
    }
    if core.chars().all(|c| c.is_ascii_digit()) {
        return "NUM";
    }
    let c = core.as_str();
    for (tag, list) in [
        ("DET", DET),
        ("PRON", PRON),
        ("ADP", ADP),
        ("CONJ", CONJ),
        ("AUX", AUX),
        ("ADV", ADV),
    ] {
        if list.contains(&c) {
            return tag;
        }
    }
    if c.ends_with("ly") {
        "ADV"
    } else if c.ends_with("ing") || c.ends_with("ed") {
        "VERB"
    } else if ["tion", "ness", "ment", "ity", "ship", "er", "or", "ist"]
        .iter()
        .any(|s| c.ends_with(s))
    {
        "NOUN"
    } else if ["ous", "ful", "ive", "able", "ible", "al", "less", "ic"]
        .iter()
        .any(|s| c.ends_with(s))
    {
        "ADJ"
    } else if c.ends_with('s') && !c.ends_with("ss") {
        // Plural nouns and third-person verbs; both are open-class content.
        "NOUN_VERB_S"
    } else {
        "NOUN"
    }
}

#[cfg(test)]
mod tests {
    use super::tag;

    #[test]
    fn closed_class_and_suffix_rules() {
        assert_eq!(tag("The"), "DET");
        assert_eq!(tag("themselves."), "PRON");
        assert_eq!(tag("near"), "ADP");
        assert_eq!(tag("quickly"), "ADV");
        assert_eq!(tag("walking"), "VERB");
        assert_eq!(tag("teacher"), "NOUN");
        assert_eq!(tag("curious"), "ADJ");
        assert_eq!(tag("42"), "NUM");
        assert_eq!(tag("--"), "PUNCT");
        assert_eq!(tag("dogs"), "NOUN_VERB_S");
    }
}
