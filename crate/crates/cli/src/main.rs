fn main() {
    std::process::exit(fouk_cli::run(std::env::args_os()));
}
