//! Synthetic multimodal corpora, distillation and the corpus file format.

mod corpus;
mod distill;
mod task;
mod vocab;

pub use corpus::{load_corpus, save_corpus, Corpus, Pair};
pub use distill::{augment, distill, Distilled};
pub use task::{conditional_target_entropy, generate_corpus, Task, TaskSpec, Transform, MODE_TRANSFORMS};
pub use vocab::{is_special, Vocabulary, BOS, EOS, FIRST_CONTENT_ID, PAD, UNK};
