fn main() {
    std::process::exit(tickdist::cli::run());
}
