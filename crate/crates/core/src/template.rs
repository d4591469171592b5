//! The four-tag reasoning template and final-answer extraction.
//!
//! Wire format, exact:
//!
//! ```text
//! <summary>…</summary>
//! <caption>…</caption>
//! <reasoning>…</reasoning>
//! <conclusion>…</conclusion>
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Summary,
    Caption,
    Reasoning,
    Conclusion,
}

impl Field {
    pub const ALL: [Field; 4] = [Field::Summary, Field::Caption, Field::Reasoning, Field::Conclusion];

    pub fn tag(self) -> &'static str {
        match self {
            Field::Summary => "summary",
            Field::Caption => "caption",
            Field::Reasoning => "reasoning",
            Field::Conclusion => "conclusion",
        }
    }

    pub fn open(self) -> String {
        format!("<{}>", self.tag())
    }

    pub fn close(self) -> String {
        format!("</{}>", self.tag())
    }
}

impl std::fmt::Display for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MalformedReason {
    MissingTag,
    DuplicateTag,
    BadOrder,
    EmptyBody,
}

impl std::fmt::Display for MalformedReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MalformedReason::MissingTag => "missing_tag",
            MalformedReason::DuplicateTag => "duplicate_tag",
            MalformedReason::BadOrder => "bad_order",
            MalformedReason::EmptyBody => "empty_body",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("field <{0}> is blank")]
    EmptyField(Field),
    #[error("field <{0}> contains a template tag")]
    ReservedTag(Field),
    #[error("malformed template: {reason} ({field})")]
    Malformed { reason: MalformedReason, field: Field },
}

impl TemplateError {
    pub fn malformed_reason(&self) -> Option<MalformedReason> {
        match self {
            TemplateError::Malformed { reason, .. } => Some(*reason),
            _ => None,
        }
    }
}

/// Parsed reasoning output.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CotRecord {
    pub summary: String,
    pub caption: String,
    pub reasoning: String,
    pub conclusion: String,
}

impl CotRecord {
    pub fn new(
        summary: impl Into<String>,
        caption: impl Into<String>,
        reasoning: impl Into<String>,
        conclusion: impl Into<String>,
    ) -> Self {
        Self {
            summary: summary.into(),
            caption: caption.into(),
            reasoning: reasoning.into(),
            conclusion: conclusion.into(),
        }
    }

    pub fn field(&self, field: Field) -> &str {
        match field {
            Field::Summary => &self.summary,
            Field::Caption => &self.caption,
            Field::Reasoning => &self.reasoning,
            Field::Conclusion => &self.conclusion,
        }
    }
}

fn contains_tag(text: &str) -> bool {
    Field::ALL
        .iter()
        .any(|f| text.contains(&f.open()) || text.contains(&f.close()))
}

/// Serializes a record. Bodies are written trimmed, so
/// `parse_record(&format_record(r)?)` equals `r` whenever `r`'s fields carry
/// no surrounding whitespace.
pub fn format_record(record: &CotRecord) -> Result<String, TemplateError> {
    let mut out = String::new();
    for (i, field) in Field::ALL.into_iter().enumerate() {
        let body = record.field(field).trim();
        if body.is_empty() {
            return Err(TemplateError::EmptyField(field));
        }
        if contains_tag(body) {
            return Err(TemplateError::ReservedTag(field));
        }
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&field.open());
        out.push_str(body);
        out.push_str(&field.close());
    }
    Ok(out)
}

/// Strict parser: every tag exactly once, in canonical order, bodies
/// non-blank. Text outside the tag pairs is ignored; nothing is repaired.
pub fn parse_record(text: &str) -> Result<CotRecord, TemplateError> {
    let mut positions = Vec::with_capacity(8);
    for field in Field::ALL {
        for tag in [field.open(), field.close()] {
            let mut found = text.match_indices(tag.as_str());
            match (found.next(), found.next()) {
                (None, _) => {
                    return Err(TemplateError::Malformed {
                        reason: MalformedReason::MissingTag,
                        field,
                    })
                }
                (Some(_), Some(_)) => {
                    return Err(TemplateError::Malformed {
                        reason: MalformedReason::DuplicateTag,
                        field,
                    })
                }
                (Some((at, _)), None) => positions.push((field, at, tag.len())),
            }
        }
    }
    for pair in positions.windows(2) {
        let (_, prev_at, prev_len) = pair[0];
        let (field, at, _) = pair[1];
        if at < prev_at + prev_len {
            return Err(TemplateError::Malformed {
                reason: MalformedReason::BadOrder,
                field,
            });
        }
    }
    let mut bodies = Vec::with_capacity(4);
    for pair in positions.chunks(2) {
        let (field, open_at, open_len) = pair[0];
        let (_, close_at, _) = pair[1];
        let body = text[open_at + open_len..close_at].trim();
        if body.is_empty() {
            return Err(TemplateError::Malformed {
                reason: MalformedReason::EmptyBody,
                field,
            });
        }
        bodies.push(body.to_string());
    }
    let mut it = bodies.into_iter();
    Ok(CotRecord {
        summary: it.next().unwrap_or_default(),
        caption: it.next().unwrap_or_default(),
        reasoning: it.next().unwrap_or_default(),
        conclusion: it.next().unwrap_or_default(),
    })
}

/// Lowercase, punctuation to spaces, whitespace collapsed. Terminal
/// punctuation disappears as a consequence.
pub fn normalize(text: &str) -> String {
    let mapped: String = text
        .chars()
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                ' '
            }
        })
        .flat_map(|c| c.to_lowercase())
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub letter: char,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChoiceError {
    #[error("need at least 2 choices, got {0}")]
    TooFew(usize),
    #[error("at most 26 choices are supported, got {0}")]
    TooMany(usize),
    #[error("choice {0} is blank")]
    Blank(usize),
    #[error("choices {0} and {1} are identical after normalization")]
    Duplicate(usize, usize),
    #[error("gold index {0} out of range")]
    GoldOutOfRange(usize),
    #[error("letters must run consecutively from A")]
    BadLetters,
}

/// Lettered option list. Letters always run A, B, C, … in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceSet {
    choices: Vec<Choice>,
    gold_index: Option<usize>,
}

pub fn letter_for(index: usize) -> char {
    (b'A' + index as u8) as char
}

pub fn index_for_letter(letter: char) -> Option<usize> {
    let upper = letter.to_ascii_uppercase();
    upper.is_ascii_uppercase().then(|| (upper as u8 - b'A') as usize)
}

impl ChoiceSet {
    pub fn new<S: AsRef<str>>(texts: &[S], gold_index: Option<usize>) -> Result<Self, ChoiceError> {
        if texts.len() < 2 {
            return Err(ChoiceError::TooFew(texts.len()));
        }
        if texts.len() > 26 {
            return Err(ChoiceError::TooMany(texts.len()));
        }
        let normalized: Vec<String> = texts.iter().map(|t| normalize(t.as_ref())).collect();
        for (i, n) in normalized.iter().enumerate() {
            if n.is_empty() {
                return Err(ChoiceError::Blank(i));
            }
            if let Some(j) = normalized[..i].iter().position(|m| m == n) {
                return Err(ChoiceError::Duplicate(j, i));
            }
        }
        if let Some(g) = gold_index {
            if g >= texts.len() {
                return Err(ChoiceError::GoldOutOfRange(g));
            }
        }
        Ok(Self {
            choices: texts
                .iter()
                .enumerate()
                .map(|(i, t)| Choice {
                    letter: letter_for(i),
                    text: t.as_ref().trim().to_string(),
                })
                .collect(),
            gold_index,
        })
    }

    /// Checks invariants of a deserialized set.
    pub fn validate(&self) -> Result<(), ChoiceError> {
        if self.choices.iter().enumerate().any(|(i, c)| c.letter != letter_for(i)) {
            return Err(ChoiceError::BadLetters);
        }
        let texts: Vec<&str> = self.texts().collect();
        ChoiceSet::new(&texts, self.gold_index).map(|_| ())
    }

    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }

    pub fn choices(&self) -> &[Choice] {
        &self.choices
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.choices.iter().map(|c| c.text.as_str())
    }

    pub fn text(&self, index: usize) -> Option<&str> {
        self.choices.get(index).map(|c| c.text.as_str())
    }

    pub fn gold_index(&self) -> Option<usize> {
        self.gold_index
    }

    pub fn gold_letter(&self) -> Option<char> {
        self.gold_index.map(letter_for)
    }

    pub fn gold_text(&self) -> Option<&str> {
        self.gold_index.and_then(|g| self.text(g))
    }

    pub fn with_gold(mut self, gold: usize) -> Result<Self, ChoiceError> {
        if gold >= self.choices.len() {
            return Err(ChoiceError::GoldOutOfRange(gold));
        }
        self.gold_index = Some(gold);
        Ok(self)
    }

    /// Index of the choice whose normalized text equals `text`.
    pub fn position_of(&self, text: &str) -> Option<usize> {
        let key = normalize(text);
        self.choices.iter().position(|c| normalize(&c.text) == key)
    }

    /// `(A) first. (B) second.` as used in question text.
    pub fn render(&self) -> String {
        self.choices
            .iter()
            .map(|c| format!("({}) {}.", c.letter, c.text.trim_end_matches('.')))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("conclusion names no choice")]
    NoMatch,
    #[error("conclusion matches several choices: {0:?}")]
    AmbiguousMatch(Vec<usize>),
}

/// Final answer named by the record's conclusion.
pub fn extract_answer(record: &CotRecord, choices: &ChoiceSet) -> Result<usize, ExtractError> {
    extract_choice(&record.conclusion, choices)
}

/// Resolves free text to a choice index.
///
/// Priority: a leading letter (`(c)`, `C.`, `c:`, bare `C`), then lettered
/// references elsewhere (`(b)` or a standalone capital in range), then a
/// unique normalized choice-text match on word boundaries. Among text
/// matches, a choice whose text is contained in another matching choice
/// yields to the longer one ("tennis" inside "table tennis").
pub fn extract_choice(text: &str, choices: &ChoiceSet) -> Result<usize, ExtractError> {
    let n = choices.len();
    let in_range = |c: char| index_for_letter(c).filter(|&i| i < n);

    if let Some(i) = leading_letter(text).and_then(in_range) {
        return Ok(i);
    }

    let mut letters: Vec<usize> = embedded_letters(text).into_iter().filter_map(in_range).collect();
    letters.sort_unstable();
    letters.dedup();
    match letters.len() {
        1 => return Ok(letters[0]),
        0 => {}
        _ => return Err(ExtractError::AmbiguousMatch(letters)),
    }

    let haystack = format!(" {} ", normalize(text));
    let keys: Vec<String> = choices.texts().map(normalize).collect();
    let matched: Vec<usize> = (0..n)
        .filter(|&i| !keys[i].is_empty() && haystack.contains(&format!(" {} ", keys[i])))
        .collect();
    let maximal: Vec<usize> = matched
        .iter()
        .copied()
        .filter(|&i| {
            !matched
                .iter()
                .any(|&j| j != i && format!(" {} ", keys[j]).contains(&format!(" {} ", keys[i])))
        })
        .collect();
    match maximal.len() {
        0 => Err(ExtractError::NoMatch),
        1 => Ok(maximal[0]),
        _ => Err(ExtractError::AmbiguousMatch(maximal)),
    }
}

fn leading_letter(text: &str) -> Option<char> {
    let s = text.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '"' | '\'' | '`'));
    let mut chars = s.chars();
    let first = chars.next()?;
    if first == '(' || first == '[' {
        let letter = chars.next()?;
        let close = chars.next()?;
        return (letter.is_ascii_alphabetic() && matches!(close, ')' | ']')).then_some(letter);
    }
    if !first.is_ascii_alphabetic() {
        return None;
    }
    match chars.next() {
        None => Some(first),
        Some(')' | '.' | ':' | ',' | ']') => Some(first),
        _ => None,
    }
}

/// Letters referenced after the leading position: `(x)` in any case, or a
/// standalone capital letter. Lowercase bare letters are ignored so the
/// article "a" never counts.
fn embedded_letters(text: &str) -> Vec<char> {
    let chars: Vec<char> = text.chars().collect();
    let mut found = Vec::new();
    for i in 0..chars.len() {
        let c = chars[i];
        if !c.is_ascii_alphabetic() {
            continue;
        }
        let prev = if i == 0 { None } else { Some(chars[i - 1]) };
        let next = chars.get(i + 1).copied();
        let bounded = prev.is_none_or(|p| !p.is_alphanumeric()) && next.is_none_or(|n| !n.is_alphanumeric());
        if !bounded {
            continue;
        }
        let parenthesized = matches!(prev, Some('(' | '[')) && matches!(next, Some(')' | ']'));
        let first_word = chars[..i].iter().all(|c| !c.is_alphanumeric());
        if parenthesized || (c.is_ascii_uppercase() && !first_word) {
            found.push(c);
        }
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;

    fn choices(texts: &[&str]) -> ChoiceSet {
        ChoiceSet::new(texts, None).unwrap()
    }

    #[test]
    fn one_word_record_has_each_tag_once() {
        let text = format_record(&CotRecord::new("s", "c", "r", "k")).unwrap();
        for f in Field::ALL {
            assert_eq!(text.matches(&f.open()).count(), 1);
            assert_eq!(text.matches(&f.close()).count(), 1);
        }
        assert_eq!(
            text,
            "<summary>s</summary>\n<caption>c</caption>\n<reasoning>r</reasoning>\n<conclusion>k</conclusion>"
        );
    }

    #[test]
    fn blank_field_is_rejected() {
        assert_eq!(
            format_record(&CotRecord::new("s", "  ", "r", "k")),
            Err(TemplateError::EmptyField(Field::Caption))
        );
    }

    #[test]
    fn appendix_style_output_parses() {
        let text = "<summary> The question asks to identify the natural enemy of the animals in the audio. </summary>\n\
            <caption> A bird is singing. </caption>\n\
            <reasoning> The audio contains bird vocalizations. Birds are typically preyed upon by eagles. </reasoning>\n\
            <conclusion> (A) eagle </conclusion>";
        let r = parse_record(text).unwrap();
        assert_eq!(r.caption, "A bird is singing.");
        assert_eq!(r.conclusion, "(A) eagle");
        let cs = choices(&["eagle", "tiger", "octopus", "shark"]);
        assert_eq!(extract_answer(&r, &cs), Ok(0));
    }

    #[test]
    fn missing_closing_tag() {
        let text = "<summary>s</summary><caption>c</caption><reasoning>r<conclusion>k</conclusion>";
        assert_eq!(
            parse_record(text).unwrap_err().malformed_reason(),
            Some(MalformedReason::MissingTag)
        );
    }

    #[test]
    fn swapped_blocks_are_bad_order() {
        let text = "<caption>c</caption><summary>s</summary><reasoning>r</reasoning><conclusion>k</conclusion>";
        assert_eq!(
            parse_record(text).unwrap_err().malformed_reason(),
            Some(MalformedReason::BadOrder)
        );
    }

    #[test]
    fn duplicate_and_empty() {
        let dup = "<summary>s</summary><summary>s</summary><caption>c</caption><reasoning>r</reasoning><conclusion>k</conclusion>";
        assert_eq!(
            parse_record(dup).unwrap_err().malformed_reason(),
            Some(MalformedReason::DuplicateTag)
        );
        let empty = "<summary>s</summary><caption> </caption><reasoning>r</reasoning><conclusion>k</conclusion>";
        assert_eq!(
            parse_record(empty).unwrap_err().malformed_reason(),
            Some(MalformedReason::EmptyBody)
        );
    }

    #[test]
    fn nested_angle_brackets_survive() {
        let r = CotRecord::new("s", "c", "compare <x> with a<b and b>c", "k");
        let parsed = parse_record(&format_record(&r).unwrap()).unwrap();
        assert_eq!(parsed.reasoning, "compare <x> with a<b and b>c");
    }

    #[test]
    fn lowercase_letter_beats_case_mismatch() {
        let cs = choices(&["Tennis", "Badminton", "Table Tennis", "Table Soccer"]);
        assert_eq!(extract_choice("(c) table tennis", &cs), Ok(2));
        // text route alone also prefers the longer label
        assert_eq!(extract_choice("table tennis", &cs), Ok(2));
    }

    #[test]
    fn text_match_on_guitar_labels() {
        let cs = choices(&["bass guitar", "electric guitar", "acoustic guitar", "boiling"]);
        assert_eq!(extract_choice("acoustic guitar", &cs), Ok(2));
        assert_eq!(extract_choice("guitar", &cs), Err(ExtractError::NoMatch));
    }

    #[test]
    fn two_letters_are_ambiguous() {
        let cs = choices(&["yes", "no", "maybe", "never"]);
        assert_eq!(
            extract_choice("maybe A or B", &cs),
            Err(ExtractError::AmbiguousMatch(vec![0, 1]))
        );
    }

    #[test]
    fn article_is_not_a_letter() {
        let cs = choices(&["dog barking", "cat meowing"]);
        assert_eq!(extract_choice("A dog barking.", &cs), Ok(0));
        assert_eq!(extract_choice("a dog barking", &cs), Ok(0));
    }

    #[test]
    fn letter_forms() {
        let cs = choices(&["romance", "horror", "comedy", "action"]);
        for form in [
            "(B) horror",
            "(b) horror",
            "B. horror",
            "b)",
            "B",
            "  **(B)** horror",
            "[b] horror",
            "B: horror",
        ] {
            assert_eq!(extract_choice(form, &cs), Ok(1), "{form}");
        }
        assert_eq!(extract_choice("(E) none", &cs), Err(ExtractError::NoMatch));
        assert_eq!(extract_choice("nothing fits", &cs), Err(ExtractError::NoMatch));
    }

    #[test]
    fn choice_set_invariants() {
        assert_eq!(ChoiceSet::new(&["only"], None), Err(ChoiceError::TooFew(1)));
        assert_eq!(
            ChoiceSet::new(&["Yes", "yes."], None),
            Err(ChoiceError::Duplicate(0, 1))
        );
        assert_eq!(
            ChoiceSet::new(&["a", "b"], Some(2)),
            Err(ChoiceError::GoldOutOfRange(2))
        );
        let cs = ChoiceSet::new(&["yes", "no"], Some(1)).unwrap();
        assert_eq!(cs.gold_letter(), Some('B'));
        assert_eq!(cs.render(), "(A) yes. (B) no.");
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize("  Table   Tennis. "), "table tennis");
        assert_eq!(normalize("Hi-hat!"), "hi hat");
    }
}
