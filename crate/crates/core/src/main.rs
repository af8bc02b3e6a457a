fn main() {
    std::process::exit(promptbridge::cli::run(std::env::args_os()));
}
