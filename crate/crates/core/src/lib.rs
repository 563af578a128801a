//! Step-wise OCR for identity-document text fields, with synthetic
//! character generation and self-supervised bootstrapping of the character
//! classifier.

pub mod bootstrap;
pub mod charset;
pub mod classify;
pub mod error;
pub mod fonts;
pub mod imaging;
pub mod metrics;
pub mod ocr;
pub mod rng;
pub mod segment;
pub mod synthgen;

pub use charset::{Charset, ClassId};
pub use error::{Error, Result};
