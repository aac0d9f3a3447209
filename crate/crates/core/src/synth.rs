//! Built-in demo sentences and seeded synthetic corpora.
//!
//! Everything here is deterministic: the fixed example trees double as
//! documentation of the level-expansion semantics, and [`news_corpus`]
//! produces arbitrarily many news-flavored projective trees from a seed,
//! which is what the test suite and the README walkthrough train on.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::leveler::{InputSymbol, LevelTransition};
use crate::treebank::{Corpus, DepTree, Token, ROOT_LABEL};
use crate::vocab::ExpansionPattern;

fn tok(form: &str, head: i64, deprel: &str) -> Token {
    let head = if head < 0 { None } else { Some(head as usize) };
    Token::new(form, head, if head.is_none() { ROOT_LABEL } else { deprel })
}

/// Six-token demo sentence "My dog also likes eating sausage": depth 3,
/// so three expansion iterations generate it.
pub fn example_tree() -> DepTree {
    DepTree::new(vec![
        tok("My", 1, "poss"),
        tok("dog", 3, "nsubj"),
        tok("also", 3, "advmod"),
        tok("likes", -1, ""),
        tok("eating", 3, "xcomp"),
        tok("sausage", 4, "dobj"),
    ])
    .expect("demo tree is valid")
}

/// The three level transitions of [`example_tree`], written out in full.
pub fn example_transitions() -> Vec<LevelTransition> {
    let term = |s: &str| InputSymbol::Terminal(s.to_string());
    let ph = |s: &str| InputSymbol::Placeholder(s.to_string());
    let pat = |s: &str| -> Option<ExpansionPattern> { Some(s.parse().expect("valid pattern")) };
    vec![
        LevelTransition {
            i_tok: vec![ph(ROOT_LABEL)],
            heads: vec![None],
            o_tok: vec![Some("likes".into())],
            o_exp: vec![pat("[nsubj-advmod-HEAD-xcomp]")],
        },
        LevelTransition {
            i_tok: vec![ph("nsubj"), ph("advmod"), term("likes"), ph("xcomp")],
            heads: vec![Some(2), Some(2), None, Some(2)],
            o_tok: vec![Some("dog".into()), Some("also".into()), None, Some("eating".into())],
            o_exp: vec![pat("[poss-HEAD]"), pat("[HEAD]"), None, pat("[HEAD-dobj]")],
        },
        LevelTransition {
            i_tok: vec![ph("poss"), term("dog"), term("also"), term("likes"), term("eating"), ph("dobj")],
            heads: vec![Some(1), Some(3), Some(3), None, Some(3), Some(4)],
            o_tok: vec![Some("My".into()), None, None, None, None, Some("sausage".into())],
            o_exp: vec![pat("[HEAD]"), None, None, None, None, pat("[HEAD]")],
        },
    ]
}

/// Twenty-one-token demo sentence "It was a failure , and we knew how far
/// the ball would be , so you have to wait ." — depth 10, exercising ten
/// expansion iterations with heavily skewed branches.
pub fn long_example_tree() -> DepTree {
    DepTree::new(vec![
        tok("It", 3, "nsubj"),
        tok("was", 0, "cop"),
        tok("a", 1, "det"),
        tok("failure", -1, ""),
        tok(",", 3, "punct"),
        tok("and", 4, "cc"),
        tok("we", 7, "nsubj"),
        tok("knew", 5, "conj"),
        tok("how", 9, "advmod"),
        tok("far", 13, "advmod"),
        tok("the", 11, "det"),
        tok("ball", 9, "nsubj"),
        tok("would", 11, "aux"),
        tok("be", 7, "ccomp"),
        tok(",", 13, "punct"),
        tok("so", 14, "dep"),
        tok("you", 17, "nsubj"),
        tok("have", 15, "parataxis"),
        tok("to", 19, "mark"),
        tok("wait", 17, "xcomp"),
        tok(".", 19, "punct"),
    ])
    .expect("demo tree is valid")
}

/// A 32-sentence memorization corpus: one dominant 22-token sentence plus
/// four near-duplicates that each branch off at a different tree position.
/// Small enough for a toy model to memorize, but with enough shared
/// structure that every divergence point is a real disambiguation test.
pub fn memorization_corpus() -> Corpus {
    let base = vec![
        tok("The", 1, "det"),
        tok("government", 2, "nsubj"),
        tok("said", -1, ""),
        tok("on", 4, "case"),
        tok("Friday", 2, "nmod"),
        tok("that", 8, "mark"),
        tok("it", 8, "nsubj"),
        tok("would", 8, "aux"),
        tok("review", 2, "ccomp"),
        tok("the", 10, "det"),
        tok("proposal", 8, "dobj"),
        tok("carefully", 8, "advmod"),
        tok("before", 15, "case"),
        tok("the", 15, "det"),
        tok("next", 15, "amod"),
        tok("meeting", 8, "nmod"),
        tok("of", 18, "case"),
        tok("the", 18, "det"),
        tok("council", 15, "nmod"),
        tok("in", 20, "case"),
        tok("December", 15, "nmod"),
        tok(".", 2, "punct"),
    ];
    let dominant = DepTree::new(base.clone()).expect("valid");

    // Variant A: "the controversial proposal" — extra amod under the object.
    let mut a = base.clone();
    a.insert(10, tok("controversial", 11, "amod"));
    let variant_a = DepTree::new(shift_heads(a, 10)).expect("valid");

    // Variant B: "of the regional council" — extra amod one level deeper.
    let mut b = base.clone();
    b.insert(18, tok("regional", 19, "amod"));
    let variant_b = DepTree::new(shift_heads(b, 18)).expect("valid");

    // Variant C: same shape, different day.
    let mut c = base.clone();
    c[4] = tok("Monday", 2, "nmod");
    let variant_c = DepTree::new(c).expect("valid");

    // Variant D: same shape, different adverb.
    let mut d = base;
    d[11] = tok("quickly", 8, "advmod");
    let variant_d = DepTree::new(d).expect("valid");

    let mut sentences = vec![dominant; 28];
    sentences.extend([variant_a, variant_b, variant_c, variant_d]);
    Corpus::from_trees(sentences)
}

/// After inserting a node at `at`, every head reference >= `at` moves one
/// to the right. The inserted token's own head is already post-insert.
fn shift_heads(mut tokens: Vec<Token>, at: usize) -> Vec<Token> {
    for (i, t) in tokens.iter_mut().enumerate() {
        if i == at {
            continue;
        }
        if let Some(h) = t.head {
            if h >= at {
                t.head = Some(h + 1);
            }
        }
    }
    tokens
}

// ---------------------------------------------------------------------
// Synthetic news-style corpus
// ---------------------------------------------------------------------

/// An unplaced tree node; indices are assigned by an in-order flatten, so
/// the resulting trees are projective by construction.
struct NodeSpec {
    form: String,
    label: String,
    left: Vec<NodeSpec>,
    right: Vec<NodeSpec>,
}

impl NodeSpec {
    fn leaf(form: &str, label: &str) -> NodeSpec {
        NodeSpec { form: form.to_string(), label: label.to_string(), left: vec![], right: vec![] }
    }

    fn flatten(self, head: Option<usize>, out: &mut Vec<Token>) {
        // Reserve my slot after the left subtrees by two-phase placement:
        // emit left children first into a scratch list keyed to my index.
        let mut lefts = self.left;
        let mut rights = self.right;
        let left_nodes: Vec<NodeSpec> = lefts.drain(..).collect();
        // Count positions consumed by the left subtrees.
        fn count(n: &NodeSpec) -> usize {
            1 + n.left.iter().map(count).sum::<usize>() + n.right.iter().map(count).sum::<usize>()
        }
        let my_index = out.len() + left_nodes.iter().map(count).sum::<usize>();
        for child in left_nodes {
            child.flatten(Some(my_index), out);
        }
        debug_assert_eq!(out.len(), my_index);
        out.push(Token::new(
            self.form,
            head,
            if head.is_none() { ROOT_LABEL.to_string() } else { self.label },
        ));
        for child in rights.drain(..) {
            child.flatten(Some(my_index), out);
        }
    }
}

const SUBJECTS: &[&str] = &[
    "government", "company", "president", "minister", "police", "court", "committee", "mayor",
    "senator", "spokesman", "coach", "team", "bank", "union", "agency",
];
const OBJECTS: &[&str] = &[
    "plan", "proposal", "report", "decision", "deal", "budget", "game", "election", "investigation",
    "statement", "project", "contract", "meeting", "case", "market",
];
const VERBS: &[&str] = &[
    "announced", "rejected", "approved", "criticized", "confirmed", "released", "reviewed",
    "discussed", "supported", "delayed",
];
const SAY_VERBS: &[&str] = &["said", "added", "warned", "reported"];
const ADJECTIVES: &[&str] = &[
    "new", "big", "political", "financial", "local", "controversial", "final", "public", "recent",
    "national",
];
const ADVERBS: &[&str] = &["quickly", "finally", "recently", "publicly", "strongly", "again"];
const TIMES: &[&str] = &["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "January", "March"];
const PLACES: &[&str] = &["London", "Paris", "Washington", "Berlin", "Chicago"];
const PREPS: &[&str] = &["of", "in", "on", "with", "from"];
const DETS: &[&str] = &["the", "a"];
const AUX: &[&str] = &["would", "will", "could", "has"];
const PRONOUNS: &[&str] = &["it", "he", "she", "they", "we"];

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.gen_range(0..pool.len())]
}

/// Noun phrase with optional determiner, adjectives and a nested PP.
fn noun_phrase(rng: &mut ChaCha8Rng, pool: &[&str], label: &str, budget: usize) -> NodeSpec {
    let mut node = NodeSpec::leaf(pick(rng, pool), label);
    if rng.gen_bool(0.9) {
        node.left.push(NodeSpec::leaf(pick(rng, DETS), "det"));
    }
    if rng.gen_bool(0.35) {
        node.left.push(NodeSpec::leaf(pick(rng, ADJECTIVES), "amod"));
        if rng.gen_bool(0.2) {
            node.left.push(NodeSpec::leaf(pick(rng, ADJECTIVES), "amod"));
        }
    }
    if budget > 0 && rng.gen_bool(0.45) {
        node.right.push(prep_phrase(rng, budget - 1));
    }
    node
}

/// UD-style nominal modifier: preposition as a `case` child of the noun.
fn prep_phrase(rng: &mut ChaCha8Rng, budget: usize) -> NodeSpec {
    let pool = match rng.gen_range(0..3) {
        0 => TIMES,
        1 => PLACES,
        _ => OBJECTS,
    };
    let mut np = noun_phrase(rng, pool, "nmod", budget);
    np.left.insert(0, NodeSpec::leaf(pick(rng, PREPS), "case"));
    np
}

/// Finite clause. `budget` bounds nesting of complements and conjuncts.
fn clause(rng: &mut ChaCha8Rng, label: &str, budget: usize) -> NodeSpec {
    let saying = budget > 0 && rng.gen_bool(0.35);
    let verb = if saying { pick(rng, SAY_VERBS) } else { pick(rng, VERBS) };
    let mut node = NodeSpec::leaf(verb, label);

    if rng.gen_bool(0.7) {
        node.left.push(noun_phrase(rng, SUBJECTS, "nsubj", budget.min(1)));
    } else {
        node.left.push(NodeSpec::leaf(pick(rng, PRONOUNS), "nsubj"));
    }
    if rng.gen_bool(0.3) {
        node.left.push(NodeSpec::leaf(pick(rng, AUX), "aux"));
    }
    if rng.gen_bool(0.15) {
        node.left.push(NodeSpec::leaf(pick(rng, ADVERBS), "advmod"));
    }

    if saying {
        let mut comp = clause(rng, "ccomp", budget - 1);
        comp.left.insert(0, NodeSpec::leaf("that", "mark"));
        node.right.push(comp);
    } else {
        if rng.gen_bool(0.75) {
            node.right.push(noun_phrase(rng, OBJECTS, "dobj", budget.min(1)));
        }
        if rng.gen_bool(0.25) {
            node.right.push(NodeSpec::leaf(pick(rng, ADVERBS), "advmod"));
        }
        if rng.gen_bool(0.5) {
            node.right.push(prep_phrase(rng, budget.min(1)));
        }
        if budget > 0 && rng.gen_bool(0.3) {
            let mut conj = clause(rng, "conj", budget - 1);
            conj.left.insert(0, NodeSpec::leaf("and", "cc"));
            node.right.push(conj);
        }
    }
    node
}

/// Generates `n_sentences` news-flavored projective trees from a seed.
/// The arity distributions are tuned so that the corpus looks like parsed
/// newswire in the statistics that matter here: sentences average around
/// twenty tokens and same-side sibling chains are common enough that
/// binarized depth lands near half the sentence length.
pub fn news_corpus(n_sentences: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sentences = Vec::with_capacity(n_sentences);
    while sentences.len() < n_sentences {
        let mut root = clause(&mut rng, ROOT_LABEL, 3);
        if rng.gen_bool(0.2) {
            let mut intro = prep_phrase(&mut rng, 0);
            intro.label = "nmod".to_string();
            intro.right.push(NodeSpec::leaf(",", "punct"));
            root.left.insert(0, intro);
        }
        root.right.push(NodeSpec::leaf(".", "punct"));
        let mut tokens = Vec::new();
        root.flatten(None, &mut tokens);
        let tree = DepTree::new(tokens).expect("generated tree is valid");
        debug_assert!(tree.is_projective());
        sentences.push(tree);
    }
    let mut corpus = Corpus::from_trees(sentences);
    corpus.provenance.source = format!("synth(seed={seed})");
    corpus
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_tree_shape() {
        let tree = example_tree();
        assert_eq!(tree.len(), 6);
        assert_eq!(tree.depth(), 3);
        assert!(tree.is_projective());
        assert_eq!(tree.root(), 3);
    }

    #[test]
    fn long_example_tree_shape() {
        let tree = long_example_tree();
        assert_eq!(tree.len(), 21);
        assert_eq!(tree.depth(), 10);
        assert!(tree.is_projective());
    }

    #[test]
    fn memorization_corpus_shape() {
        let corpus = memorization_corpus();
        assert_eq!(corpus.len(), 32);
        for tree in &corpus.sentences {
            assert!(tree.is_projective());
            assert_eq!(tree.depth(), 5);
        }
        // The variants really are distinct sentences.
        let mut distinct: Vec<String> =
            corpus.sentences.iter().map(|t| t.forms().join(" ")).collect();
        distinct.sort();
        distinct.dedup();
        assert_eq!(distinct.len(), 5);
    }

    #[test]
    fn news_corpus_is_projective_and_seeded() {
        let a = news_corpus(50, 7);
        let b = news_corpus(50, 7);
        assert_eq!(a.sentences, b.sentences);
        for tree in &a.sentences {
            assert!(tree.is_projective());
        }
        let c = news_corpus(50, 8);
        assert_ne!(a.sentences, c.sentences);
    }
}
