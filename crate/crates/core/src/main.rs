fn main() {
    std::process::exit(embsim::harness::cli::run(std::env::args_os()));
}
