fn main() {
    std::process::exit(stump_fungus::cli::run(std::env::args_os()));
}
