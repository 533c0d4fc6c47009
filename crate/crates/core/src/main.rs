fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CALIBRA_LOG", "warn")).init();
    std::process::exit(calibra::cli::run(std::env::args_os()));
}
