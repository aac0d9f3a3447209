//! Tree rewrites applied before level decomposition: binarization and
//! BPE subword decomposition of word nodes.
//!
//! Binarization caps every node at one dependent per side by chaining
//! same-side siblings rightward, which keeps expansion patterns small at
//! the cost of a deeper tree. Subword decomposition replaces a word node
//! by a chain of subword nodes. Both rewrites preserve the surface token
//! order and projectivity.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;

use crate::treebank::{Corpus, DepTree, Token};

/// Relation label used for the intra-word chain created by
/// [`apply_subword`].
pub const SUBWORD_LABEL: &str = "subword";

/// Continuation marker carried by every non-final subword piece.
pub const CONTINUATION: &str = "@@";

const END_OF_WORD: &str = "</w>";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransformError {
    #[error("input tree is not projective")]
    NonProjectiveInput,
}

/// Rewrites the tree so every node has at most one left and one right
/// dependent. For same-side dependents d1 < d2 < ... of a head, d1 keeps
/// its attachment and each later sibling is re-attached at the tail of the
/// previous sibling's right spine, so all chain arcs run left-to-right and
/// the in-order sequence is unchanged.
pub fn binarize(tree: &DepTree) -> Result<DepTree, TransformError> {
    if !tree.is_projective() {
        return Err(TransformError::NonProjectiveInput);
    }
    let n = tree.len();
    let mut heads: Vec<Option<usize>> = tree.tokens().iter().map(|t| t.head).collect();
    // Children before parents: deeper subtrees must already be binary so
    // that the right spine below a sibling is unambiguous.
    let depths = tree.depths();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| depths[b].cmp(&depths[a]));
    for &head in &order {
        let deps = tree.dependents(head);
        let lefts: Vec<usize> = deps.iter().copied().filter(|&d| d < head).collect();
        let rights: Vec<usize> = deps.iter().copied().filter(|&d| d > head).collect();
        for side in [lefts, rights] {
            for pair in side.windows(2) {
                let tail = right_spine_tail(pair[0], &heads);
                heads[pair[1]] = Some(tail);
            }
        }
    }
    let tokens = tree
        .tokens()
        .iter()
        .zip(heads)
        .map(|(t, head)| Token::new(t.form.clone(), head, t.deprel.clone()))
        .collect();
    Ok(DepTree::new(tokens).expect("binarization preserves tree validity"))
}

fn right_spine_tail(mut node: usize, heads: &[Option<usize>]) -> usize {
    loop {
        match (node + 1..heads.len()).find(|&j| heads[j] == Some(node)) {
            Some(next) => node = next,
            None => return node,
        }
    }
}

/// Ordered BPE merge rules with the `</w>` end-of-word convention used
/// during learning and the `@@` continuation convention in output pieces.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BpeMerges {
    rules: Vec<(String, String)>,
}

#[derive(Debug, Error)]
pub enum BpeIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing or wrong header, expected {0:?}")]
    Header(String),
    #[error("line {0}: expected two space-separated symbols")]
    Rule(usize),
}

const BPE_HEADER: &str = "#version: itexp-bpe 1";

impl BpeMerges {
    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules(&self) -> &[(String, String)] {
        &self.rules
    }

    /// Segments a word into its BPE pieces. Non-final pieces carry the
    /// `@@` continuation marker; a word the rules cannot split comes back
    /// as a single piece.
    pub fn segment(&self, word: &str) -> Vec<String> {
        let mut symbols = word_symbols(word);
        if symbols.len() <= 1 {
            return vec![word.to_string()];
        }
        let priority: HashMap<(&str, &str), usize> = self
            .rules
            .iter()
            .enumerate()
            .map(|(i, (a, b))| ((a.as_str(), b.as_str()), i))
            .collect();
        loop {
            let mut best: Option<(usize, usize)> = None; // (priority, position)
            for i in 0..symbols.len() - 1 {
                if let Some(&p) = priority.get(&(symbols[i].as_str(), symbols[i + 1].as_str())) {
                    if best.map_or(true, |(bp, _)| p < bp) {
                        best = Some((p, i));
                    }
                }
            }
            let Some((p, _)) = best else { break };
            let (a, b) = &self.rules[p];
            symbols = merge_pair(&symbols, a, b);
            if symbols.len() == 1 {
                break;
            }
        }
        let last = symbols.len() - 1;
        symbols
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if i == last {
                    s.strip_suffix(END_OF_WORD).unwrap_or(s).to_string()
                } else {
                    format!("{s}{CONTINUATION}")
                }
            })
            .collect()
    }

    /// One rule per line, two space-separated symbols, priority by line
    /// order, preceded by a version header.
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), BpeIoError> {
        writeln!(w, "{BPE_HEADER}")?;
        for (a, b) in &self.rules {
            writeln!(w, "{a} {b}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<BpeMerges, BpeIoError> {
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != BPE_HEADER {
            return Err(BpeIoError::Header(BPE_HEADER.to_string()));
        }
        let mut rules = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (a, b) = line.split_once(' ').ok_or(BpeIoError::Rule(idx + 2))?;
            rules.push((a.to_string(), b.to_string()));
        }
        Ok(BpeMerges { rules })
    }

    pub fn write_file(&self, path: &Path) -> Result<(), BpeIoError> {
        let file = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(file))
    }

    pub fn read_file(path: &Path) -> Result<BpeMerges, BpeIoError> {
        let file = std::fs::File::open(path)?;
        BpeMerges::read(std::io::BufReader::new(file))
    }
}

fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| if i + 1 == n { format!("{c}{END_OF_WORD}") } else { c.to_string() })
        .collect()
}

fn merge_pair(symbols: &[String], a: &str, b: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
            out.push(format!("{a}{b}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Learns merge rules by greedy most-frequent-pair counting over the
/// corpus's word-internal symbol sequences. Ties break lexicographically
/// on the pair, so the result is deterministic for a fixed corpus.
pub fn learn_bpe(corpus: &Corpus, num_merges: usize) -> BpeMerges {
    let mut word_freq: HashMap<Vec<String>, u64> = HashMap::new();
    for tree in &corpus.sentences {
        for tok in tree.tokens() {
            *word_freq.entry(word_symbols(&tok.form)).or_default() += 1;
        }
    }
    let mut rules = Vec::with_capacity(num_merges);
    for _ in 0..num_merges {
        let mut pair_counts: HashMap<(String, String), u64> = HashMap::new();
        for (symbols, freq) in &word_freq {
            for w in symbols.windows(2) {
                *pair_counts.entry((w[0].clone(), w[1].clone())).or_default() += freq;
            }
        }
        let Some(best) = pair_counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .map(|(pair, _)| pair)
        else {
            break;
        };
        word_freq = word_freq
            .into_iter()
            .map(|(symbols, freq)| (merge_pair(&symbols, &best.0, &best.1), freq))
            .collect();
        rules.push(best);
    }
    BpeMerges { rules }
}

/// Replaces each word node whose segmentation has k > 1 pieces by k nodes
/// in surface order. The first subword inherits the word's head and
/// deprel; each later subword hangs off the previous one under
/// [`SUBWORD_LABEL`]. Former dependents keep their labels and sides: left
/// dependents re-attach to the first subword and right dependents to the
/// last, which is the unique side-preserving placement that keeps the
/// tree projective and the surface order reconstructible.
pub fn apply_subword(tree: &DepTree, merges: &BpeMerges) -> DepTree {
    let pieces: Vec<Vec<String>> = tree.tokens().iter().map(|t| merges.segment(&t.form)).collect();
    let mut start = Vec::with_capacity(tree.len());
    let mut cursor = 0usize;
    for p in &pieces {
        start.push(cursor);
        cursor += p.len();
    }
    let first = |i: usize| start[i];
    let last = |i: usize| start[i] + pieces[i].len() - 1;

    let mut tokens = Vec::with_capacity(cursor);
    for (i, tok) in tree.tokens().iter().enumerate() {
        let head = tok.head.map(|h| if i < h { first(h) } else { last(h) });
        for (j, piece) in pieces[i].iter().enumerate() {
            if j == 0 {
                tokens.push(Token::new(piece.clone(), head, tok.deprel.clone()));
            } else {
                tokens.push(Token::new(piece.clone(), Some(start[i] + j - 1), SUBWORD_LABEL));
            }
        }
    }
    DepTree::new(tokens).expect("subword decomposition preserves tree validity")
}

/// Joins forms back into the original sentence string, undoing the `@@`
/// continuation markers.
pub fn detokenize(forms: &[String]) -> String {
    forms.join(" ").replace(concat!("@@", " "), "")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{example_tree, news_corpus};
    use crate::treebank::{Corpus, Token, ROOT_LABEL};
    use crate::vocab::compose_expansion;

    fn in_order_is_identity(tree: &DepTree) -> bool {
        // For projective trees the in-order traversal is index order, so it
        // suffices to check projectivity plus in-order child layout.
        tree.is_projective()
    }

    fn max_arity_per_side(tree: &DepTree) -> usize {
        (0..tree.len())
            .map(|h| {
                let deps = tree.dependents(h);
                let l = deps.iter().filter(|&&d| d < h).count();
                let r = deps.iter().filter(|&&d| d > h).count();
                l.max(r)
            })
            .max()
            .unwrap_or(0)
    }

    #[test]
    fn binarize_example_tree() {
        let tree = example_tree();
        let bin = binarize(&tree).unwrap();
        // "dog" keeps nsubj on "likes"; "also" chains off "dog" keeping advmod.
        assert_eq!(bin.tokens()[1].head, Some(3));
        assert_eq!(bin.tokens()[1].deprel, "nsubj");
        assert_eq!(bin.tokens()[2].head, Some(1));
        assert_eq!(bin.tokens()[2].deprel, "advmod");
        assert!(max_arity_per_side(&bin) <= 1);
        assert_eq!(bin.forms(), tree.forms());
        assert!(in_order_is_identity(&bin));
    }

    #[test]
    fn binarize_chain_is_identity() {
        let chain = DepTree::new(vec![
            Token::new("a", Some(1), "dep"),
            Token::new("b", None, ROOT_LABEL),
            Token::new("c", Some(1), "dep"),
        ])
        .unwrap();
        assert_eq!(binarize(&chain).unwrap(), chain);
    }

    #[test]
    fn binarize_right_enumeration() {
        // Head with right dependents r1, r2, r3 becomes a rightward chain.
        let tree = DepTree::new(vec![
            Token::new("bought", None, ROOT_LABEL),
            Token::new("shoes", Some(0), "dobj"),
            Token::new("umbrella", Some(0), "conj"),
            Token::new("jacket", Some(0), "conj"),
        ])
        .unwrap();
        let bin = binarize(&tree).unwrap();
        assert_eq!(bin.tokens()[1].head, Some(0));
        assert_eq!(bin.tokens()[2].head, Some(1));
        assert_eq!(bin.tokens()[3].head, Some(2));
        assert!(max_arity_per_side(&bin) <= 1);
    }

    #[test]
    fn binarize_chains_through_sibling_subtrees() {
        // d1 = "dog" has its own right dependent, so the next left sibling
        // of the head must attach below it, at the spine tail.
        let tree = DepTree::new(vec![
            Token::new("dog", Some(3), "nsubj"),
            Token::new("there", Some(0), "advmod"),
            Token::new("never", Some(3), "neg"),
            Token::new("barks", None, ROOT_LABEL),
        ])
        .unwrap();
        let bin = binarize(&tree).unwrap();
        assert_eq!(bin.tokens()[2].head, Some(1));
        assert!(max_arity_per_side(&bin) <= 1);
        assert!(in_order_is_identity(&bin));
    }

    #[test]
    fn binarize_rejects_nonprojective() {
        let tree = DepTree::new(vec![
            Token::new("a", Some(2), "dep"),
            Token::new("b", Some(3), "dep"),
            Token::new("c", None, ROOT_LABEL),
            Token::new("d", Some(2), "dep"),
        ])
        .unwrap();
        assert_eq!(binarize(&tree).unwrap_err(), TransformError::NonProjectiveInput);
    }

    #[test]
    fn binarize_invariants_on_synthetic_corpus() {
        let corpus = news_corpus(200, 11);
        for tree in &corpus.sentences {
            let bin = binarize(tree).unwrap();
            assert!(max_arity_per_side(&bin) <= 1);
            assert_eq!(bin.forms(), tree.forms());
            assert!(bin.is_projective());
            assert!(bin.depth() >= tree.depth());
            let floor = ((tree.len() + 1) as f64).log2().ceil() as usize;
            assert!(bin.depth() >= floor);
            assert_eq!(binarize(&bin).unwrap(), bin);
        }
    }

    #[test]
    fn learn_single_merge() {
        let corpus = Corpus::from_trees(vec![DepTree::new(vec![Token::new(
            "abab",
            None,
            ROOT_LABEL,
        )])
        .unwrap()]);
        let merges = learn_bpe(&corpus, 1);
        assert_eq!(merges.rules(), &[("a".to_string(), "b".to_string())]);
    }

    #[test]
    fn zero_merges_is_character_level() {
        let corpus = Corpus::from_trees(vec![DepTree::new(vec![Token::new(
            "cats",
            None,
            ROOT_LABEL,
        )])
        .unwrap()]);
        let merges = learn_bpe(&corpus, 0);
        assert!(merges.is_empty());
        assert_eq!(merges.segment("cats"), vec!["c@@", "a@@", "t@@", "s"]);
    }

    #[test]
    fn frequent_word_dominates_merges() {
        let mut trees = vec![];
        for _ in 0..100 {
            trees.push(DepTree::new(vec![Token::new("zzyx", None, ROOT_LABEL)]).unwrap());
        }
        trees.push(DepTree::new(vec![Token::new("abc", None, ROOT_LABEL)]).unwrap());
        let merges = learn_bpe(&Corpus::from_trees(trees), 2);
        for (a, b) in merges.rules() {
            let joined = format!("{a}{b}");
            assert!("zzyx</w>".contains(joined.trim_end_matches(END_OF_WORD)));
        }
    }

    #[test]
    fn training_words_segment_to_single_piece_with_enough_merges() {
        let corpus = news_corpus(50, 3);
        let merges = learn_bpe(&corpus, 2000);
        for tree in &corpus.sentences {
            for tok in tree.tokens() {
                assert_eq!(merges.segment(&tok.form), vec![tok.form.clone()]);
            }
        }
    }

    fn example_merges() -> BpeMerges {
        // Fuses every word of the demo sentence except "eating", which
        // stops at the two-piece segmentation "eat@@ ing".
        let rule = |a: &str, b: &str| (a.to_string(), b.to_string());
        BpeMerges {
            rules: vec![
                rule("M", "y</w>"),
                rule("d", "o"),
                rule("do", "g</w>"),
                rule("a", "l"),
                rule("al", "s"),
                rule("als", "o</w>"),
                rule("l", "i"),
                rule("li", "k"),
                rule("lik", "e"),
                rule("like", "s</w>"),
                rule("s", "a"),
                rule("sa", "u"),
                rule("sau", "sa"),
                rule("sausa", "g"),
                rule("sausag", "e</w>"),
                rule("e", "a"),
                rule("ea", "t"),
                rule("i", "n"),
                rule("in", "g</w>"),
            ],
        }
    }

    #[test]
    fn subword_rewiring_on_example_tree() {
        let merges = example_merges();
        assert_eq!(merges.segment("eating"), vec!["eat@@", "ing"]);
        for word in ["My", "dog", "also", "likes", "sausage"] {
            assert_eq!(merges.segment(word), vec![word.to_string()]);
        }
        let tree = example_tree();
        let sub = apply_subword(&tree, &merges);
        let forms = sub.forms();
        let eat = forms.iter().position(|f| f == "eat@@").unwrap();
        let ing = eat + 1;
        assert_eq!(forms[ing], "ing");
        // First subword inherits head and deprel.
        assert_eq!(sub.tokens()[eat].head, Some(3));
        assert_eq!(sub.tokens()[eat].deprel, "xcomp");
        // Chain relation.
        assert_eq!(sub.tokens()[ing].head, Some(eat));
        assert_eq!(sub.tokens()[ing].deprel, SUBWORD_LABEL);
        // Right dependent re-attaches to the last subword.
        let sausage = forms.iter().position(|f| f == "sausage").unwrap();
        assert_eq!(sub.tokens()[sausage].head, Some(ing));
        assert_eq!(sub.tokens()[sausage].deprel, "dobj");
        assert!(sub.is_projective());
        assert_eq!(detokenize(&forms), tree.forms().join(" "));
        // The last subword's expansion carries the old word's dependents.
        assert_eq!(compose_expansion(&sub, ing).render(), "[HEAD-dobj]");
        assert_eq!(compose_expansion(&sub, eat).render(), "[HEAD-subword]");
    }

    #[test]
    fn single_piece_words_pass_through() {
        let tree = example_tree();
        let sub = apply_subword(&tree, &BpeMerges::default());
        // Character-level: every multi-char word splits; use a merge set
        // that keeps everything whole instead.
        assert_eq!(detokenize(&sub.forms()), tree.forms().join(" "));
        let corpus = Corpus::from_trees(vec![tree.clone()]);
        let merges = learn_bpe(&corpus, 100);
        let sub = apply_subword(&tree, &merges);
        assert_eq!(sub, tree);
    }

    #[test]
    fn left_dependents_attach_to_first_subword() {
        // "dog" splits; its left dependent "My" must stay left of the whole
        // chain for the in-order sequence to survive.
        let mut merges = example_merges();
        merges.rules.retain(|(a, b)| !(a == "d" && b == "o") && !(a == "do" && b == "g</w>"));
        merges.rules.push(("o".to_string(), "g</w>".to_string()));
        assert_eq!(merges.segment("dog"), vec!["d@@", "og"]);
        let tree = example_tree();
        let sub = apply_subword(&tree, &merges);
        let forms = sub.forms();
        let d = forms.iter().position(|f| f == "d@@").unwrap();
        assert_eq!(sub.tokens()[0].head, Some(d));
        assert_eq!(sub.tokens()[0].deprel, "poss");
        assert!(sub.is_projective());
        assert_eq!(detokenize(&forms), tree.forms().join(" "));
    }

    #[test]
    fn subword_detokenization_round_trips_corpus() {
        let corpus = news_corpus(100, 5);
        let merges = learn_bpe(&corpus, 60);
        for tree in &corpus.sentences {
            let sub = apply_subword(tree, &merges);
            assert_eq!(detokenize(&sub.forms()), tree.forms().join(" "));
            assert!(sub.is_projective());
        }
    }

    #[test]
    fn merges_file_round_trip() {
        let corpus = news_corpus(20, 2);
        let merges = learn_bpe(&corpus, 50);
        let mut buf = Vec::new();
        merges.write(&mut buf).unwrap();
        let back = BpeMerges::read(buf.as_slice()).unwrap();
        assert_eq!(back, merges);
        assert!(matches!(
            BpeMerges::read("#version: other\na b\n".as_bytes()),
            Err(BpeIoError::Header(_))
        ));
    }
}
