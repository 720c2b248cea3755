fn main() {
    env_logger::init();
    std::process::exit(gather_sir::cli::run(std::env::args_os()));
}
