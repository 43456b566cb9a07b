fn main() {
    std::process::exit(misclass::cli::run());
}
