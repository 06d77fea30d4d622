fn main() {
    std::process::exit(mvkt::cli::run());
}
