fn main() {
    std::process::exit(bqp::cli::run(std::env::args_os()));
}
