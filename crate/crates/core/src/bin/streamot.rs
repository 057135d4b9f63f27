#[global_allocator]
static ALLOC: streamot::alloc_track::TrackingAllocator = streamot::alloc_track::TrackingAllocator;

fn main() {
    std::process::exit(streamot::cli::run(std::env::args_os()));
}
