fn main() {
    std::process::exit(sempe::cli::run(std::env::args_os()));
}
