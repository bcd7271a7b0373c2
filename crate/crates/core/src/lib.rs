pub mod analysis;
pub mod error;
pub mod evaluate;
pub mod fft;
pub mod fisher;
pub mod forward;
pub mod io;
pub mod mask;
pub mod optics;
pub mod pipeline;
pub mod recon;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/optics.md")]
    mod optics {}
    #[doc = include_str!("../../../book/src/mask.md")]
    mod mask {}
    #[doc = include_str!("../../../book/src/crlb.md")]
    mod crlb {}
    #[doc = include_str!("../../../book/src/forward.md")]
    mod forward {}
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    mod reconstruction {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
