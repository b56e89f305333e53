//! Dialog corpora: tokenization, vocabulary, labeling rules, slicing and a
//! synthetic corpus generator.

mod dialog;
mod labels;
mod slice;
mod tokenize;
mod toy;
pub mod vocab;

pub use dialog::{
    parse_dialog, read_corpus, read_labels, render_dialog, write_corpus, write_labels, Dialog,
    Speaker, Turn,
};
pub use labels::{
    expected_tags, generic_labels, label_generic, next_sentiment, sentiment_tags,
    tag_corpus_sentiment, trailing_sentiment, PhraseList, Sentiment, SentimentRule,
    DEFAULT_GENERIC_PHRASES,
};
pub use slice::{slice_dialogs, Slice};
pub use tokenize::tokenize;
pub use toy::{make_toy_corpus, ToyCorpusSpec};
pub use vocab::{build_vocab, TokenId, Vocab};

