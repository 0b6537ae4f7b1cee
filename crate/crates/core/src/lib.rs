//! Entity linking as multiple-choice question answering.
//!
//! A mention is embedded and matched against every entity name
//! ([`vecindex`]), the top candidates become a lettered multiple-choice prompt
//! ([`mcp`]), solved training instances similar to the mention are prepended
//! ([`knnstore`]) and a generator backend picks the answer letter
//! ([`generator`]). [`eval`] runs the pipeline over a split and produces
//! accuracy reports, ablations and sweeps.
//!
//! ```
//! use elqa::mcp::{render_text, ChoiceSet};
//!
//! let cs = ChoiceSet::new(
//!     "haemoglobin",
//!     vec![("D002".into(), "haemoglobin c".into()), ("D001".into(), "hemoglobin".into())],
//!     None,
//! )
//! .unwrap();
//! assert_eq!(
//!     render_text(&cs),
//!     "mention: haemoglobin options: A. haemoglobin c B. hemoglobin answer:"
//! );
//! ```

mod binio;
pub mod embedder;
pub mod eval;
pub mod generator;
pub mod knnstore;
pub mod mcp;
pub mod ontology;
pub mod remote;
pub mod synthetic;
pub mod vecindex;

pub use embedder::{Embedder, EmbedderBackend, EmbeddingVector, NGramConfig, NGramEncoder};
pub use ontology::{Entity, Mention, Ontology, Split};

// Book chapters compiled as doc-tests so their snippets stay runnable.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/ontology.md")]
    mod ontology {}
    #[doc = include_str!("../../../book/src/embedder.md")]
    mod embedder {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/prompts.md")]
    mod prompts {}
    #[doc = include_str!("../../../book/src/knn.md")]
    mod knn {}
    #[doc = include_str!("../../../book/src/generators.md")]
    mod generators {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
