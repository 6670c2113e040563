fn main() {
    std::process::exit(sage::cli::run());
}
