//! Heap accounting for memory-scaling measurements.
//!
//! Install [`TrackingAllocator`] as the global allocator of a binary to make
//! [`current_bytes`] and [`peak_bytes`] meaningful:
//!
//! ```ignore
//! #[global_allocator]
//! static ALLOC: streamot::alloc_track::TrackingAllocator = streamot::alloc_track::TrackingAllocator;
//! ```

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering::Relaxed};

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static ACTIVE: AtomicBool = AtomicBool::new(false);

/// System allocator wrapper that tracks live and peak heap bytes.
pub struct TrackingAllocator;

fn grow(size: usize) {
    let now = CURRENT.fetch_add(size, Relaxed) + size;
    PEAK.fetch_max(now, Relaxed);
}

unsafe impl GlobalAlloc for TrackingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            ACTIVE.store(true, Relaxed);
            grow(layout.size());
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            ACTIVE.store(true, Relaxed);
            grow(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            if new_size >= layout.size() {
                grow(new_size - layout.size());
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Relaxed);
            }
        }
        p
    }
}

/// Whether the tracking allocator has served any allocation in this process.
pub fn is_active() -> bool {
    ACTIVE.load(Relaxed)
}

pub fn current_bytes() -> usize {
    CURRENT.load(Relaxed)
}

pub fn peak_bytes() -> usize {
    PEAK.load(Relaxed)
}

/// Resets the peak to the current level and returns that level.
pub fn reset_peak() -> usize {
    let now = CURRENT.load(Relaxed);
    PEAK.store(now, Relaxed);
    now
}

/// Runs `f` and returns its result with the peak heap growth above the level at entry.
pub fn measure_peak<R>(f: impl FnOnce() -> R) -> (R, usize) {
    let base = reset_peak();
    let out = f();
    (out, peak_bytes().saturating_sub(base))
}
