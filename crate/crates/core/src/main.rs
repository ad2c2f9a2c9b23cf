fn main() {
    std::process::exit(structpred::cli::run_from_args(std::env::args_os()));
}
