fn main() {
    std::process::exit(nestner::cli::run(std::env::args_os()));
}
