// Suffix rules, applied until nothing changes:
//   -ies/-ied -> -y, -ing -> "", -ed -> "", -s -> "" (with exceptions).
// A strip only happens when the remaining stem has at least three letters and
// a vowel; -ing/-ed stems ending in a doubled consonant lose one copy.

const S_EXCEPTIONS: &[&str] = &[
    "is", "was", "has", "this", "his", "hers", "its", "us", "yes", "does", "gas", "bus", "plus", "thus",
    "always", "perhaps", "news", "series", "species", "lens", "physics", "mathematics", "statistics",
    "economics", "analysis", "basis", "thesis", "access", "less", "unless",
];

fn has_vowel(s: &str) -> bool {
    s.chars().any(|c| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y'))
}

fn valid_stem(s: &str) -> bool {
    s.chars().count() >= 3 && has_vowel(s)
}

fn undouble(stem: &str) -> String {
    let chars: Vec<char> = stem.chars().collect();
    let n = chars.len();
    if n >= 2 {
        let (a, b) = (chars[n - 2], chars[n - 1]);
        if a == b && !matches!(a, 'a' | 'e' | 'i' | 'o' | 'u' | 'l' | 's' | 'z') && a.is_alphabetic() {
            return chars[..n - 1].iter().collect();
        }
    }
    stem.to_string()
}

fn apply_once(w: &str) -> String {
    let n = w.chars().count();
    if n > 4 && (w.ends_with("ies") || w.ends_with("ied")) {
        return format!("{}y", &w[..w.len() - 3]);
    }
    if let Some(stem) = w.strip_suffix("ing") {
        if valid_stem(stem) {
            return undouble(stem);
        }
    }
    if let Some(stem) = w.strip_suffix("ed") {
        if valid_stem(stem) {
            return undouble(stem);
        }
    }
    if let Some(stem) = w.strip_suffix('s') {
        if !w.ends_with("ss")
            && !w.ends_with("us")
            && !w.ends_with("is")
            && !S_EXCEPTIONS.contains(&w)
            && valid_stem(stem)
        {
            return stem.to_string();
        }
    }
    w.to_string()
}

/// Deterministic suffix-rule lemma of a lowercased token.
pub fn lemmatize_token(token: &str) -> String {
    let mut cur = token.to_string();
    // Every rule shortens the word, so this terminates well within the bound.
    for _ in 0..8 {
        let next = apply_once(&cur);
        if next == cur {
            break;
        }
        cur = next;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn study_family() {
        assert_eq!(lemmatize_token("studies"), "study");
        assert_eq!(lemmatize_token("studying"), "study");
        assert_eq!(lemmatize_token("studied"), "study");
        assert_eq!(lemmatize_token("study"), "study");
    }

    #[test]
    fn doubling_repair_and_guards() {
        assert_eq!(lemmatize_token("running"), "run");
        assert_eq!(lemmatize_token("stopped"), "stop");
        assert_eq!(lemmatize_token("falling"), "fall");
        assert_eq!(lemmatize_token("passed"), "pass");
        assert_eq!(lemmatize_token("sing"), "sing");
        assert_eq!(lemmatize_token("string"), "string");
        assert_eq!(lemmatize_token("need"), "need");
        assert_eq!(lemmatize_token("class"), "class");
        assert_eq!(lemmatize_token("was"), "was");
        assert_eq!(lemmatize_token("courses"), "course");
        assert_eq!(lemmatize_token("teachings"), "teach");
    }

    #[test]
    fn output_is_nonempty_fixed_point() {
        for w in ["a", "s", "is", "ies", "studies", "ingredients", "bed", "seeds", "x"] {
            let l = lemmatize_token(w);
            assert!(!l.is_empty());
            assert_eq!(lemmatize_token(&l), l);
        }
    }
}
