pub mod bench;
pub mod cache;
pub mod codec;
pub mod filter;
pub mod firstparty;
pub mod html;
pub mod locator;
pub mod pipeline;
pub mod rewriter;
pub mod store;

pub use locator::{ContentLocator, MediaClass};
