fn main() {
    std::process::exit(ucnet::cli::run(std::env::args_os()));
}
