fn main() {
    std::process::exit(wordspot::cli::run(std::env::args()));
}
