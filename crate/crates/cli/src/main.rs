fn main() {
    std::process::exit(splat7d_cli::run(std::env::args_os()));
}
