fn main() {
    std::process::exit(fgtt::cli::run(std::env::args_os()));
}
