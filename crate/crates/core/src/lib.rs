pub mod bench;
pub mod dataset;
pub mod eval;
pub mod gateway;
pub mod pipelines;
pub mod prompts;
pub mod sim;
pub mod taxonomy;
pub mod template;
pub mod util;
