fn main() {
    std::process::exit(implylp::cli::run());
}
