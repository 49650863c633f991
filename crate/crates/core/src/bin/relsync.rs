fn main() {
    std::process::exit(relsync::cli::run(std::env::args_os()));
}
