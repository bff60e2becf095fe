fn main() {
    std::process::exit(dcswin::cli::run());
}
