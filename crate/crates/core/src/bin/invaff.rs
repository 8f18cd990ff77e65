fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(invariant_affect::cli::LOG_ENV, "warn")).init();
    std::process::exit(invariant_affect::cli::run(std::env::args_os()));
}
