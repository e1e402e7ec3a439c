use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A token together with the whitespace that precedes it. Concatenating the
/// `raw` fields of a text's pieces gives the text back byte for byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub token: String,
    pub raw: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EditKind {
    Addition,
    Deletion,
}

/// A contiguous run of added or deleted tokens. `anchor` indexes the pieces of
/// the original text: a deletion removes the pieces starting there, an
/// addition is inserted before that piece. `text` is the raw run, whitespace
/// included. `sentence_index` counts sentences of the original for deletions
/// and of the revised text for additions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditSpan {
    pub kind: EditKind,
    pub tokens: Vec<String>,
    pub text: String,
    pub anchor: usize,
    pub sentence_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EditError {
    #[error("edits do not fit the original text: {0}")]
    InconsistentEdits(String),
    #[error("malformed markup at byte {offset}: {message}")]
    Markup { offset: usize, message: String },
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '…' | '–' | '—' | '«' | '»')
}

/// Splits on whitespace, then peels leading and trailing punctuation off each
/// word as single-character tokens.
pub fn tokenize(text: &str) -> Vec<Piece> {
    let mut pieces: Vec<Piece> = Vec::new();
    let mut rest = text;
    loop {
        let ws_len = rest.len() - rest.trim_start().len();
        let (ws, after) = rest.split_at(ws_len);
        if after.is_empty() {
            match pieces.last_mut() {
                Some(last) => last.raw.push_str(ws),
                None if !ws.is_empty() => pieces.push(Piece {
                    token: String::new(),
                    raw: ws.to_string(),
                }),
                None => {}
            }
            return pieces;
        }
        let word_len = after.find(char::is_whitespace).unwrap_or(after.len());
        let (word, tail) = after.split_at(word_len);
        rest = tail;

        let core_start = word.find(|c: char| !is_punct(c)).unwrap_or(word.len());
        let core_end = word.rfind(|c: char| !is_punct(c)).map(|i| i + word[i..].chars().next().map_or(1, char::len_utf8)).unwrap_or(core_start);
        let mut tokens: Vec<&str> = Vec::new();
        for (i, c) in word[..core_start].char_indices() {
            tokens.push(&word[i..i + c.len_utf8()]);
        }
        if core_end > core_start {
            tokens.push(&word[core_start..core_end]);
        }
        for (i, c) in word[core_end.max(core_start)..].char_indices() {
            let at = core_end.max(core_start) + i;
            tokens.push(&word[at..at + c.len_utf8()]);
        }
        for (k, t) in tokens.into_iter().enumerate() {
            let raw = if k == 0 { format!("{ws}{t}") } else { t.to_string() };
            pieces.push(Piece { token: t.to_string(), raw });
        }
    }
}

/// Sentence ranges over `pieces`: a sentence ends at `.`, `!` or `?` followed by
/// whitespace and an uppercase letter, or at the end of the text.
pub fn sentence_ranges(pieces: &[Piece]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..pieces.len() {
        let ends = matches!(pieces[i].token.as_str(), "." | "!" | "?");
        let next_starts = pieces.get(i + 1).is_some_and(|n| {
            n.raw.starts_with(char::is_whitespace) && n.token.chars().next().is_some_and(char::is_uppercase)
        });
        if ends && next_starts {
            out.push(start..i + 1);
            start = i + 1;
        }
    }
    if start < pieces.len() {
        out.push(start..pieces.len());
    }
    out
}

/// Index pairs of a longest common subsequence of `a` and `b`, in order.
fn lcs_pairs<T: PartialEq>(a: &[T], b: &[T]) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    let mut dp = vec![0u32; (n + 1) * (m + 1)];
    let at = |i: usize, j: usize| i * (m + 1) + j;
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            dp[at(i, j)] = if a[i] == b[j] {
                dp[at(i + 1, j + 1)] + 1
            } else {
                dp[at(i + 1, j)].max(dp[at(i, j + 1)])
            };
        }
    }
    let (mut i, mut j) = (0, 0);
    let mut pairs = Vec::new();
    while i < n && j < m {
        if a[i] == b[j] {
            pairs.push((i, j));
            i += 1;
            j += 1;
        } else if dp[at(i + 1, j)] >= dp[at(i, j + 1)] {
            i += 1;
        } else {
            j += 1;
        }
    }
    pairs
}

fn span(kind: EditKind, pieces: &[Piece], anchor: usize, sentence_index: usize) -> EditSpan {
    EditSpan {
        kind,
        tokens: pieces.iter().map(|p| p.token.clone()).collect(),
        text: pieces.iter().map(|p| p.raw.as_str()).collect(),
        anchor,
        sentence_index,
    }
}

struct Differ<'a> {
    op: &'a [Piece],
    rp: &'a [Piece],
    out: Vec<EditSpan>,
}

impl Differ<'_> {
    /// Emits the deletion and addition for one gap between matched runs.
    fn gap(&mut self, del: Range<usize>, add: Range<usize>, o_sent: usize, r_sent: usize) {
        if !del.is_empty() {
            self.out.push(span(EditKind::Deletion, &self.op[del.clone()], del.start, o_sent));
        }
        if !add.is_empty() {
            self.out.push(span(EditKind::Addition, &self.rp[add], del.end, r_sent));
        }
    }

    fn pieces(&mut self, o: Range<usize>, r: Range<usize>, o_sent: usize, r_sent: usize) {
        let a: Vec<&str> = self.op[o.clone()].iter().map(|p| p.raw.as_str()).collect();
        let b: Vec<&str> = self.rp[r.clone()].iter().map(|p| p.raw.as_str()).collect();
        let (mut i, mut j) = (0, 0);
        for (mi, mj) in lcs_pairs(&a, &b).into_iter().chain([(a.len(), b.len())]) {
            self.gap(o.start + i..o.start + mi, r.start + j..r.start + mj, o_sent, r_sent);
            i = mi + 1;
            j = mj + 1;
        }
    }
}

/// Token-level edits turning `original` into `revised`, computed sentence by
/// sentence. Applying them with [`apply_edits`] reproduces `revised` exactly.
pub fn sentence_edit_diff(original: &str, revised: &str) -> Vec<EditSpan> {
    let op = tokenize(original);
    let rp = tokenize(revised);
    let os = sentence_ranges(&op);
    let rs = sentence_ranges(&rp);
    let key = |p: &[Piece], r: &Range<usize>| p[r.clone()].iter().map(|x| x.raw.as_str()).collect::<String>();
    let okeys: Vec<String> = os.iter().map(|r| key(&op, r)).collect();
    let rkeys: Vec<String> = rs.iter().map(|r| key(&rp, r)).collect();

    let mut d = Differ {
        op: &op,
        rp: &rp,
        out: Vec::new(),
    };
    let (mut oi, mut ri) = (0, 0);
    for (mo, mr) in lcs_pairs(&okeys, &rkeys).into_iter().chain([(os.len(), rs.len())]) {
        let paired = (mo - oi).min(mr - ri);
        for k in 0..paired {
            d.pieces(os[oi + k].clone(), rs[ri + k].clone(), oi + k, ri + k);
        }
        let insert_at = if mo < os.len() { os[mo].start } else { op.len() };
        for (s, range) in os.iter().enumerate().take(mo).skip(oi + paired) {
            d.gap(range.clone(), insert_at..insert_at, s, 0);
        }
        for (s, range) in rs.iter().enumerate().take(mr).skip(ri + paired) {
            d.gap(insert_at..insert_at, range.clone(), mo, s);
        }
        oi = mo + 1;
        ri = mr + 1;
    }
    d.out
}

/// Walks `edits` over the pieces of `original`, calling `keep` for unchanged
/// runs and `edit` for each span.
fn walk(original: &str, edits: &[EditSpan], mut keep: impl FnMut(&str), mut edit: impl FnMut(&EditSpan)) -> Result<(), EditError> {
    let pieces = tokenize(original);
    let mut pos = 0;
    for e in edits {
        if e.anchor < pos || e.anchor > pieces.len() {
            return Err(EditError::InconsistentEdits(format!("anchor {} out of order or past the end (at {pos} of {})", e.anchor, pieces.len())));
        }
        if e.tokens.is_empty() {
            return Err(EditError::InconsistentEdits("edit has no tokens".into()));
        }
        for p in &pieces[pos..e.anchor] {
            keep(&p.raw);
        }
        pos = e.anchor;
        if e.kind == EditKind::Deletion {
            let end = pos + e.tokens.len();
            let found: String = pieces.get(pos..end).map(|s| s.iter().map(|p| p.raw.as_str()).collect()).unwrap_or_default();
            if end > pieces.len() || found != e.text {
                return Err(EditError::InconsistentEdits(format!("deletion at {pos} expects {:?}, original has {found:?}", e.text)));
            }
            pos = end;
        }
        edit(e);
    }
    for p in &pieces[pos..] {
        keep(&p.raw);
    }
    Ok(())
}

pub fn apply_edits(original: &str, edits: &[EditSpan]) -> Result<String, EditError> {
    let out = std::cell::RefCell::new(String::with_capacity(original.len()));
    walk(
        original,
        edits,
        |s| out.borrow_mut().push_str(s),
        |e| {
            if e.kind == EditKind::Addition {
                out.borrow_mut().push_str(&e.text);
            }
        },
    )?;
    Ok(out.into_inner())
}

fn escape(s: &str, out: &mut String) {
    for c in s.chars() {
        if matches!(c, '\\' | '{' | '}') {
            out.push('\\');
        }
        out.push(c);
    }
}

/// Inline markup: additions as `{+ … +}`, deletions as `{- … -}`. Literal
/// backslashes and braces are backslash-escaped.
pub fn render_edit_markup(original: &str, edits: &[EditSpan]) -> Result<String, EditError> {
    let out = std::cell::RefCell::new(String::with_capacity(original.len() + 16));
    walk(
        original,
        edits,
        |s| escape(s, &mut out.borrow_mut()),
        |e| {
            let mut o = out.borrow_mut();
            let (open, close) = match e.kind {
                EditKind::Addition => ("{+", "+}"),
                EditKind::Deletion => ("{-", "-}"),
            };
            o.push_str(open);
            escape(&e.text, &mut o);
            o.push_str(close);
        },
    )?;
    Ok(out.into_inner())
}

fn project(markup: &str, keep: EditKind) -> Result<String, EditError> {
    let mut out = String::with_capacity(markup.len());
    let mut region: Option<EditKind> = None;
    let mut chars = markup.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let next = chars.peek().map(|&(_, n)| n);
        let delimiter = match (c, next) {
            ('{', Some('+')) => Some((Some(EditKind::Addition), true)),
            ('{', Some('-')) => Some((Some(EditKind::Deletion), true)),
            ('+', Some('}')) if region == Some(EditKind::Addition) => Some((None, false)),
            ('-', Some('}')) if region == Some(EditKind::Deletion) => Some((None, false)),
            _ => None,
        };
        if let Some((to, opening)) = delimiter {
            if opening && region.is_some() {
                return Err(EditError::Markup {
                    offset: i,
                    message: "nested edit region".into(),
                });
            }
            region = to;
            chars.next();
            continue;
        }
        let literal = if c == '\\' {
            match chars.next() {
                Some((_, e)) => e,
                None => {
                    return Err(EditError::Markup {
                        offset: i,
                        message: "dangling escape".into(),
                    })
                }
            }
        } else if c == '{' || c == '}' {
            return Err(EditError::Markup {
                offset: i,
                message: format!("unescaped `{c}`"),
            });
        } else {
            c
        };
        if region.is_none_or(|r| r == keep) {
            out.push(literal);
        }
    }
    if region.is_some() {
        return Err(EditError::Markup {
            offset: markup.len(),
            message: "unterminated edit region".into(),
        });
    }
    Ok(out)
}

/// The original text recovered from markup: additions dropped, deletions kept.
pub fn project_original(markup: &str) -> Result<String, EditError> {
    project(markup, EditKind::Deletion)
}

/// The revised text recovered from markup: deletions dropped, additions kept.
pub fn project_revised(markup: &str) -> Result<String, EditError> {
    project(markup, EditKind::Addition)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(p: &[Piece]) -> Vec<&str> {
        p.iter().map(|x| x.token.as_str()).collect()
    }

    #[test]
    fn tokenize_splits_edge_punctuation() {
        let p = tokenize("We will meet Monday.");
        assert_eq!(toks(&p), ["We", "will", "meet", "Monday", "."]);
        assert_eq!(toks(&tokenize("(don't) stop...")), ["(", "don't", ")", "stop", ".", ".", "."]);
        assert_eq!(tokenize("  ").len(), 1);
        assert!(tokenize("").is_empty());
        for s in ["  a b\n", "x", " “quoted”, ok ", "\t"] {
            assert_eq!(tokenize(s).iter().map(|p| p.raw.as_str()).collect::<String>(), s);
        }
    }

    #[test]
    fn sentences_need_capital_after_stop() {
        let p = tokenize("One. Two! three. Four");
        let r = sentence_ranges(&p);
        assert_eq!(r.len(), 3);
    }

    #[test]
    fn monday_example() {
        let o = "We will meet Monday.";
        let r = "We will meet on Monday at noon.";
        let e = sentence_edit_diff(o, r);
        assert_eq!(e.len(), 2);
        assert_eq!((e[0].kind, e[0].tokens.clone(), e[0].anchor), (EditKind::Addition, vec!["on".to_string()], 3));
        assert_eq!((e[1].kind, e[1].tokens.clone(), e[1].anchor), (EditKind::Addition, vec!["at".to_string(), "noon".to_string()], 4));
        assert_eq!(tokenize(o)[3].token, "Monday");
        assert_eq!(tokenize(o)[4].token, ".");
        assert_eq!(apply_edits(o, &e).unwrap(), r);
    }

    #[test]
    fn substitution_example() {
        let o = "It is essential that we respond today.";
        let r = "It is absolutely necessary that we respond today.";
        let e = sentence_edit_diff(o, r);
        assert_eq!(e.len(), 2);
        assert_eq!((e[0].kind, e[0].tokens.clone()), (EditKind::Deletion, vec!["essential".to_string()]));
        assert_eq!((e[1].kind, e[1].tokens.clone()), (EditKind::Addition, vec!["absolutely".to_string(), "necessary".to_string()]));
        let m = render_edit_markup(o, &e).unwrap();
        assert_eq!(m, "It is{- essential-}{+ absolutely necessary+} that we respond today.");
        assert_eq!(project_original(&m).unwrap(), o);
        assert_eq!(project_revised(&m).unwrap(), r);
    }

    #[test]
    fn identical_and_empty() {
        assert!(sentence_edit_diff("Same text. Here.", "Same text. Here.").is_empty());
        assert!(sentence_edit_diff("", "").is_empty());
        assert_eq!(render_edit_markup("a {b}", &[]).unwrap(), "a \\{b\\}");
    }

    #[test]
    fn whole_sentences_added_and_removed() {
        let o = "First one. Second one. Third one.";
        let r = "First one. Third one. Fourth one.";
        let e = sentence_edit_diff(o, r);
        assert_eq!(apply_edits(o, &e).unwrap(), r);
        let m = render_edit_markup(o, &e).unwrap();
        assert_eq!(m.matches("{-").count(), 1);
        assert_eq!(m.matches("{+").count(), 1);
    }

    #[test]
    fn inconsistent_edits_rejected() {
        let e = sentence_edit_diff("a b c", "a c");
        assert!(matches!(apply_edits("a x c", &e), Err(EditError::InconsistentEdits(_))));
        let mut far = e.clone();
        far[0].anchor = 10;
        assert!(render_edit_markup("a b c", &far).is_err());
    }

    #[test]
    fn markup_errors() {
        assert!(project_revised("{+ a").is_err());
        assert!(project_revised("{+ {- a -} +}").is_err());
        assert!(project_revised("a }").is_err());
        assert!(project_revised("a \\").is_err());
    }

    fn text() -> impl Strategy<Value = String> {
        let word = prop::sample::select(vec!["the", "The", "case", "Smith", "v.", "is", "strong", "{x}", "a\\b", "—", "Yes!", "no?", ".", ",", "“q”"]);
        let sep = prop::sample::select(vec![" ", " ", " ", "  ", "\n", ""]);
        prop::collection::vec((word, sep), 0..25).prop_map(|v| v.into_iter().map(|(w, s)| format!("{w}{s}")).collect())
    }

    proptest! {
        #[test]
        fn diff_reconstructs_revised(o in text(), r in text()) {
            let e = sentence_edit_diff(&o, &r);
            prop_assert_eq!(apply_edits(&o, &e).unwrap(), r.clone());
            prop_assert!(e.windows(2).all(|w| w[0].anchor <= w[1].anchor));
            let m = render_edit_markup(&o, &e).unwrap();
            prop_assert_eq!(project_original(&m).unwrap(), o);
            prop_assert_eq!(project_revised(&m).unwrap(), r);
        }
    }
}
