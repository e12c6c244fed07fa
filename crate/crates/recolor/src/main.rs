fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(recolor::cli::run(&args));
}
