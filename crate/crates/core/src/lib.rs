//! Sexism classification pipeline for bilingual (English/Spanish) social
//! media posts.
//!
//! The crate covers the whole workflow: dataset ingestion and splitting
//! ([`corpus`]), text normalization ([`preprocess`]), subword tokenization
//! ([`tokenizer`]), a transformer encoder with exact gradients ([`model`]),
//! masked-language-model pre-training and supervised fine-tuning
//! ([`train`]), translation-based augmentation ([`augment`]), and late
//! fusion plus accuracy/macro-F1 scoring ([`evalfuse`]).

pub mod augment;
pub mod corpus;
pub mod evalfuse;
pub mod model;
pub mod preprocess;
pub mod synth;
pub mod tokenizer;
pub mod train;
