fn main() {
    std::process::exit(disfluency_parser::cli::run(std::env::args().collect()));
}
