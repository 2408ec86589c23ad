fn main() {
    std::process::exit(neurodyn::cli::run(std::env::args_os()));
}
