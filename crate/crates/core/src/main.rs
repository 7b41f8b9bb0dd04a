fn main() {
    std::process::exit(mfsim::cli::run());
}
