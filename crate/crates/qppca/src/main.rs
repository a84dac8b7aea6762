fn main() {
    std::process::exit(qppca::cli::run());
}
