//! Preloadable shim. Injected with `LD_PRELOAD`, it attaches the AI help
//! function to the host's Readline editor when one is present and does
//! nothing otherwise.

use std::panic::catch_unwind;

pub use aicli_core::attach::runtime::{on_load, state};

extern "C" fn constructor() {
    let _ = catch_unwind(|| {
        on_load();
        #[cfg(feature = "eager-init")]
        aicli_core::attach::runtime::force_lazy_init();
    });
}

#[used]
#[link_section = ".init_array"]
static ON_LOAD: extern "C" fn() = constructor;

/// Attach state of the current process, for diagnostics from C.
///
/// Returns 0 when Readline was not found, 1 when found but not bound and
/// 2 when the binding is installed.
#[no_mangle]
pub extern "C" fn aicli_attach_status() -> std::ffi::c_int {
    let s = state();
    match (s.detected, s.bound) {
        (_, true) => 2,
        (true, false) => 1,
        _ => 0,
    }
}
