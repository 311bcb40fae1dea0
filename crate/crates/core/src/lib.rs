//! Obfuscation scoring and audit triage for EVM runtime bytecode.

pub mod bytecode;
pub mod enrichment;
pub mod features;
pub mod incident;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod records;
pub mod reuse;
pub mod synthetic;
pub mod triage;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/bytecode.md")]
    mod bytecode {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/triage.md")]
    mod triage {}
    #[doc = include_str!("../../../book/src/reuse.md")]
    mod reuse {}
    #[doc = include_str!("../../../book/src/enrichment.md")]
    mod enrichment {}
    #[doc = include_str!("../../../book/src/incidents.md")]
    mod incidents {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
