fn main() {
    std::process::exit(stoptrans::cli::run());
}
