//! Worker-count control. `STEFANLAB_THREADS` caps the number of threads.

/// Threads used for parallel sections.
pub fn configured_threads() -> usize {
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    match std::env::var("STEFANLAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        Some(cap) if cap > 0 => cap,
        _ => available,
    }
}

/// Runs `f` inside a pool with [`configured_threads`] workers.
pub fn install<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(configured_threads())
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
