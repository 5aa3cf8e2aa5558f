//! Wall-clock timing that degrades to zero where `Instant` is unavailable
//! (wasm32-unknown-unknown panics on `Instant::now`).

use std::time::Duration;

pub(crate) struct Clock(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Clock {
    pub(crate) fn start() -> Self {
        #[cfg(not(target_arch = "wasm32"))]
        {
            Clock(std::time::Instant::now())
        }
        #[cfg(target_arch = "wasm32")]
        {
            Clock()
        }
    }

    pub(crate) fn elapsed(&self) -> Duration {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.0.elapsed()
        }
        #[cfg(target_arch = "wasm32")]
        {
            Duration::ZERO
        }
    }
}
