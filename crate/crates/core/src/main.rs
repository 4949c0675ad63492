fn main() {
    env_logger::init();
    if let Some(n) = std::env::var("GRABNAS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: GRABNAS_THREADS ignored: {e}");
        }
    }
    std::process::exit(grabnas::cli::dispatch(std::env::args_os()));
}
